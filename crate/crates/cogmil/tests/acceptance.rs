//! Acceptance gate: one test per release criterion, each printing a single
//! `[PASS] criterion N: ...` line when it holds (a failed test is the fail
//! line). Every oracle here is recomputed inside the test, independent of
//! the library internals it checks.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use cogmil::bag::normalize_salience;
use cogmil::embed::EmbeddedBag;
use cogmil::metrics::{evaluate, format_mean_std, summarize_runs};
use cogmil::model::{
    accuracy, backward, forward, learning_rate, loss, train_with, Dims, Dropout, Gradients,
    ModelParams, TrainConfig,
};
use cogmil::pipeline::{run_all, ExperimentConfig};
use cogmil::prompt::{parse_instances, DropReason};
use cogmil::schema::{split_dataset, DatasetId, LabelSchema, Split, Utterance};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

fn random_bag(d_e: usize, n_real: usize, n_max: usize, c: usize, rng: &mut ChaCha8Rng) -> EmbeddedBag {
    let mut x = Array2::zeros((n_max, d_e));
    for i in 0..n_real {
        for j in 0..d_e {
            x[(i, j)] = rng.random_range(-2.0..2.0);
        }
    }
    let z = Array1::from_shape_fn(d_e, |_| rng.random_range(-2.0..2.0));
    let raw: Vec<f64> = (0..n_real).map(|_| rng.random_range(0.05..3.0)).collect();
    let normalized = normalize_salience(&raw);
    let mut mask = Array1::zeros(n_max);
    let mut p = Array1::zeros(n_max);
    for i in 0..n_real {
        mask[i] = 1.0;
        p[i] = normalized[i];
    }
    let label = rng.random_range(0..c);
    let mut y = Array1::zeros(c);
    y[label] = 1.0;
    EmbeddedBag {
        utterance_ref: "acc".into(),
        z,
        x,
        mask,
        p,
        y,
        label_index: label,
    }
}

/// Parameter matrices in a fixed walk order shared by the analytic and
/// perturbed sides of the finite-difference check.
fn matrix_mut(p: &mut ModelParams, idx: usize) -> &mut Array2<f64> {
    let k = p.dims.k;
    if idx < 2 * k {
        if idx % 2 == 0 {
            &mut p.w_g[idx / 2]
        } else {
            &mut p.w_f[idx / 2]
        }
    } else if idx == 2 * k {
        &mut p.w_z
    } else if idx == 2 * k + 1 {
        &mut p.w_c
    } else {
        &mut p.w_o
    }
}

fn grad_matrix(g: &Gradients, idx: usize) -> &Array2<f64> {
    let k = g.dims.k;
    if idx < 2 * k {
        if idx % 2 == 0 {
            &g.w_g[idx / 2]
        } else {
            &g.w_f[idx / 2]
        }
    } else if idx == 2 * k {
        &g.w_z
    } else if idx == 2 * k + 1 {
        &g.w_c
    } else {
        &g.w_o
    }
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1. analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_check() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let h = 1e-5;
    let mut configs = 0usize;
    let mut entries = 0usize;

    while configs < 20 {
        let dims = Dims {
            d_e: rng.random_range(2..8),
            d_h: rng.random_range(2..6),
            k: rng.random_range(1..4),
            c: rng.random_range(2..5),
        };
        let n_real = rng.random_range(1..5);
        let params = ModelParams::init(dims, rng.random());
        let bag = random_bag(dims.d_e, n_real, n_real + 1, dims.c, &mut rng);

        let out = forward(&params, &bag, &mut Dropout::Off).unwrap();
        let analytic = backward(&params, &bag, &out.trace);
        let run = |p: &ModelParams| {
            let f = forward(p, &bag, &mut Dropout::Off).unwrap();
            loss(&f.probs, &bag.y)
        };

        for m in 0..(2 * dims.k + 3) {
            let (rows, cols) = grad_matrix(&analytic, m).dim();
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = params.clone();
                    matrix_mut(&mut plus, m)[(r, c)] += h;
                    let mut minus = params.clone();
                    matrix_mut(&mut minus, m)[(r, c)] -= h;
                    let fd = (run(&plus) - run(&minus)) / (2.0 * h);
                    let a = grad_matrix(&analytic, m)[(r, c)];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    assert!(
                        rel < 1e-4,
                        "config {configs} matrix {m} entry ({r},{c}): analytic {a} vs fd {fd} (rel {rel})"
                    );
                    entries += 1;
                }
            }
        }
        configs += 1;
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "gradient check took {elapsed:?}");
    println!(
        "[PASS] criterion 1: analytic gradients match finite differences \
         ({configs} configs, {entries} entries, rel < 1e-4, {elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// 2. frozen forward oracle
// ---------------------------------------------------------------------------

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

#[test]
fn criterion_02_forward_oracle() {
    let w_g = vec![vec![0.2, -0.4], vec![0.7, 0.1]];
    let w_f = vec![vec![-0.3, 0.5], vec![0.6, -0.2]];
    let w_z = vec![vec![0.4, 0.3], vec![-0.5, 0.8]];
    let w_c = vec![vec![0.1, -0.2, 0.3, 0.4], vec![-0.6, 0.5, 0.2, -0.1]];
    let w_o = vec![vec![0.9, -0.7], vec![-0.3, 0.6]];
    let x = [vec![0.5, -0.3], vec![-0.2, 0.8]];
    let p = [0.6, 0.4];
    let z = [0.1, 0.9];

    // Straight-line recomputation, no library code involved.
    let sigmoid = |t: f64| 1.0 / (1.0 + (-t).exp());
    let mut pooled = vec![0.0; 2];
    for (xi, pi) in x.iter().zip(p) {
        let g = matvec(&w_g, xi);
        let f = matvec(&w_f, xi);
        for d in 0..2 {
            pooled[d] += sigmoid(g[d]) * f[d].tanh() * pi;
        }
    }
    let z_prime: Vec<f64> = matvec(&w_z, &z).iter().map(|t| t.tanh()).collect();
    let concat: Vec<f64> = pooled.iter().chain(&z_prime).copied().collect();
    let v: Vec<f64> = matvec(&w_c, &concat).iter().map(|t| t.max(0.0)).collect();
    let logits = matvec(&w_o, &v);
    let m = logits[0].max(logits[1]);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let ce = -probs[0].ln();

    let exp_z_prime = [0.3004370971476542, 0.5849798828807289];
    let exp_v = [0.3080860317087536, 0.0508764262397319];
    let exp_probs = [0.5753135058632179, 0.4246864941367821];
    let exp_loss = 0.5528401591791379;
    for d in 0..2 {
        assert!((z_prime[d] - exp_z_prime[d]).abs() < 1e-6, "z'[{d}] = {}", z_prime[d]);
        assert!((v[d] - exp_v[d]).abs() < 1e-6, "v[{d}] = {}", v[d]);
        assert!((probs[d] - exp_probs[d]).abs() < 1e-6, "probs[{d}] = {}", probs[d]);
    }
    assert!((ce - exp_loss).abs() < 1e-6, "loss = {ce}");

    // The library reproduces the same frozen values.
    let dims = Dims { d_e: 2, d_h: 2, k: 1, c: 2 };
    let mut params = ModelParams::zeros(dims);
    params.w_g[0] = array![[0.2, -0.4], [0.7, 0.1]];
    params.w_f[0] = array![[-0.3, 0.5], [0.6, -0.2]];
    params.w_z = array![[0.4, 0.3], [-0.5, 0.8]];
    params.w_c = array![[0.1, -0.2, 0.3, 0.4], [-0.6, 0.5, 0.2, -0.1]];
    params.w_o = array![[0.9, -0.7], [-0.3, 0.6]];
    let bag = EmbeddedBag {
        utterance_ref: "oracle".into(),
        z: array![0.1, 0.9],
        x: array![[0.5, -0.3], [-0.2, 0.8]],
        mask: array![1.0, 1.0],
        p: array![0.6, 0.4],
        y: array![1.0, 0.0],
        label_index: 0,
    };
    let out = forward(&params, &bag, &mut Dropout::Off).unwrap();
    for d in 0..2 {
        assert!((out.probs[d] - exp_probs[d]).abs() < 1e-6, "lib probs[{d}] = {}", out.probs[d]);
    }
    let lib_loss = loss(&out.probs, &bag.y);
    assert!((lib_loss - exp_loss).abs() < 1e-6, "lib loss = {lib_loss}");

    println!("[PASS] criterion 2: forward pass reproduces the frozen oracle within 1e-6");
}

// ---------------------------------------------------------------------------
// 3. weighting and pooling invariances (100 randomized rounds; the proptest
//    versions live in tests/invariants.rs)
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_invariances() {
    for round in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1000 + round);
        let dims = Dims {
            d_e: rng.random_range(2..6),
            d_h: rng.random_range(2..5),
            k: rng.random_range(1..4),
            c: rng.random_range(2..5),
        };
        let n_real = rng.random_range(1..6);
        let params = ModelParams::init(dims, rng.random());
        let bag = random_bag(dims.d_e, n_real, n_real + 2, dims.c, &mut rng);

        // Normalization sums to one; all-zero raw scores fall back to uniform.
        let raw: Vec<f64> = (0..n_real).map(|_| rng.random_range(0.0..4.0)).collect();
        let norm = normalize_salience(&raw);
        let sum: f64 = norm.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "round {round}: sum {sum}");
        let fallback = normalize_salience(&vec![0.0; n_real]);
        for w in &fallback {
            assert!((w - 1.0 / n_real as f64).abs() <= 1e-12, "round {round}");
        }

        let base = forward(&params, &bag, &mut Dropout::Off).unwrap().probs;

        // Scaling every raw salience by the same factor changes nothing.
        let lambda = rng.random_range(0.1..40.0);
        let raw_weights: Vec<f64> = (0..n_real).map(|i| bag.p[i]).collect();
        let rescaled = normalize_salience(
            &raw_weights.iter().map(|w| w * lambda).collect::<Vec<_>>(),
        );
        let mut scaled = bag.clone();
        for i in 0..n_real {
            scaled.p[i] = rescaled[i];
        }
        let probs = forward(&params, &scaled, &mut Dropout::Off).unwrap().probs;
        assert!(max_abs_diff(&base, &probs) <= 1e-9, "round {round}: scale");

        // Rotating the real instances changes nothing.
        let mut rotated = bag.clone();
        for dst in 0..n_real {
            let src = (dst + 1) % n_real;
            for j in 0..dims.d_e {
                rotated.x[(dst, j)] = bag.x[(src, j)];
            }
            rotated.p[dst] = bag.p[src];
        }
        let probs = forward(&params, &rotated, &mut Dropout::Off).unwrap().probs;
        assert!(max_abs_diff(&base, &probs) <= 1e-9, "round {round}: permutation");

        // Extra padding rows change nothing.
        let mut padded = EmbeddedBag {
            utterance_ref: bag.utterance_ref.clone(),
            z: bag.z.clone(),
            x: Array2::zeros((n_real + 5, dims.d_e)),
            mask: Array1::zeros(n_real + 5),
            p: Array1::zeros(n_real + 5),
            y: bag.y.clone(),
            label_index: bag.label_index,
        };
        for i in 0..n_real {
            for j in 0..dims.d_e {
                padded.x[(i, j)] = bag.x[(i, j)];
            }
            padded.mask[i] = 1.0;
            padded.p[i] = bag.p[i];
        }
        let probs = forward(&params, &padded, &mut Dropout::Off).unwrap().probs;
        assert!(max_abs_diff(&base, &probs) <= 1e-9, "round {round}: padding");
    }

    println!(
        "[PASS] criterion 3: normalization, scale, permutation, and padding \
         invariances hold over 100 randomized rounds"
    );
}

// ---------------------------------------------------------------------------
// 4. trivial-model checks: uniform prediction and known cross-entropy values
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_uniform_and_entropy() {
    let dims = Dims { d_e: 3, d_h: 4, k: 2, c: 10 };
    let params = ModelParams::zeros(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bag = random_bag(dims.d_e, 3, 4, dims.c, &mut rng);
    let out = forward(&params, &bag, &mut Dropout::Off).unwrap();
    for (i, &p) in out.probs.iter().enumerate() {
        assert!((p - 0.1).abs() <= 1e-12, "probs[{i}] = {p}");
    }
    let ce = loss(&out.probs, &bag.y);
    assert!((ce - 2.3025850929940455).abs() <= 1e-9, "ln 10 check: {ce}");

    let ce7 = loss(&array![0.7, 0.3], &array![1.0, 0.0]);
    assert!((ce7 - 0.3566749439387324).abs() <= 1e-12, "-ln 0.7 check: {ce7}");

    println!(
        "[PASS] criterion 4: zero weights give uniform 0.1 probabilities and \
         cross-entropy matches ln 10 / -ln 0.7"
    );
}

// ---------------------------------------------------------------------------
// 5. learning-rate schedule
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_lr_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(learning_rate(&cfg, 0), 0.0005);
    assert!((learning_rate(&cfg, 49) - 0.00001).abs() <= 1e-12);
    assert!((learning_rate(&cfg, 60) - 0.00001).abs() <= 1e-12);
    let mut prev = f64::INFINITY;
    for e in 0..200 {
        let lr = learning_rate(&cfg, e);
        assert!(lr <= prev && lr >= cfg.lr_min);
        prev = lr;
    }
    println!("[PASS] criterion 5: lr(0)=0.0005, lr(49)=lr(60)=0.00001, schedule nonincreasing");
}

// ---------------------------------------------------------------------------
// 6. learning on synthetic bags; salience weighting speeds convergence
// ---------------------------------------------------------------------------

/// Bags with one planted high-salience instance whose embedding points along
/// the label's block direction, plus weaker wrong-label distractors.
fn synthetic_bags(n: usize, dims: Dims, rng: &mut ChaCha8Rng) -> Vec<EmbeddedBag> {
    let block = dims.d_e / dims.c;
    let n_max = 5;
    (0..n)
        .map(|i| {
            let cls = i % dims.c;
            let n_distract = rng.random_range(2..=4);
            let n_real = 1 + n_distract;
            let mut x = Array2::zeros((n_max, dims.d_e));
            let mut raw = vec![0.0; n_real];
            for row in 0..n_real {
                let (target, scale) = if row == 0 {
                    raw[0] = rng.random_range(0.9..1.1);
                    (cls, 1.0)
                } else {
                    raw[row] = rng.random_range(0.1..0.2);
                    let mut wrong = rng.random_range(0..dims.c);
                    if wrong == cls {
                        wrong = (wrong + 1) % dims.c;
                    }
                    (wrong, 0.7)
                };
                for j in 0..dims.d_e {
                    x[(row, j)] = rng.random_range(-0.05..0.05);
                }
                for j in target * block..(target + 1) * block {
                    x[(row, j)] += scale;
                }
            }
            let z = Array1::from_shape_fn(dims.d_e, |_| rng.random_range(-0.05..0.05));
            let norm = normalize_salience(&raw);
            let mut mask = Array1::zeros(n_max);
            let mut p = Array1::zeros(n_max);
            for row in 0..n_real {
                mask[row] = 1.0;
                p[row] = norm[row];
            }
            let mut y = Array1::zeros(dims.c);
            y[cls] = 1.0;
            EmbeddedBag {
                utterance_ref: format!("synth-{i}"),
                z,
                x,
                mask,
                p,
                y,
                label_index: cls,
            }
        })
        .collect()
}

fn with_uniform_weights(bags: &[EmbeddedBag]) -> Vec<EmbeddedBag> {
    bags.iter()
        .cloned()
        .map(|mut b| {
            let n = b.mask.sum();
            for i in 0..b.p.len() {
                b.p[i] = if b.mask[i] > 0.0 { 1.0 / n } else { 0.0 };
            }
            b
        })
        .collect()
}

fn median(mut xs: Vec<u32>) -> u32 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

#[test]
fn criterion_06_synthetic_learning() {
    let started = Instant::now();
    let dims = Dims { d_e: 24, d_h: 16, k: 2, c: 6 };
    let mut data_rng = ChaCha8Rng::seed_from_u64(2024);
    let train_on = synthetic_bags(240, dims, &mut data_rng);
    let val_on = synthetic_bags(60, dims, &mut data_rng);
    let test_on = synthetic_bags(60, dims, &mut data_rng);
    let train_off = with_uniform_weights(&train_on);
    let val_off = with_uniform_weights(&val_on);

    let mut epochs_on = Vec::new();
    let mut epochs_off = Vec::new();
    for seed in 1..=5u64 {
        // The default base rate suits corpora in the thousands of bags; this
        // 240-bag task needs a larger step to move inside 100 epochs.
        let cfg = TrainConfig { max_epochs: 100, seed, lr0: 0.002, ..TrainConfig::default() };
        let params0 = ModelParams::init(dims, seed);

        let mut first_hit: Option<u32> = None;
        let (best, _) = train_with(&params0, &train_on, &val_on, &cfg, |p, stats| {
            if first_hit.is_none() && accuracy(p, &val_on).unwrap() >= 0.95 {
                first_hit = Some(stats.epoch);
            }
        })
        .unwrap();
        let test_acc = accuracy(&best, &test_on).unwrap();
        assert!(
            test_acc >= 0.95,
            "seed {seed}: salience-weighted test accuracy {test_acc} < 0.95"
        );
        epochs_on.push(first_hit.unwrap_or(cfg.max_epochs + 1));

        let mut first_hit_off: Option<u32> = None;
        train_with(&params0, &train_off, &val_off, &cfg, |p, stats| {
            if first_hit_off.is_none() && accuracy(p, &val_off).unwrap() >= 0.95 {
                first_hit_off = Some(stats.epoch);
            }
        })
        .unwrap();
        epochs_off.push(first_hit_off.unwrap_or(cfg.max_epochs + 1));
    }

    let med_on = median(epochs_on.clone());
    let med_off = median(epochs_off.clone());
    assert!(
        med_on <= med_off,
        "median epochs to 0.95 val accuracy: salience {med_on} (runs {epochs_on:?}) vs \
         uniform {med_off} (runs {epochs_off:?})"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "synthetic learning took {elapsed:?}");

    println!(
        "[PASS] criterion 6: synthetic task learned to >=0.95 accuracy within 100 epochs; \
         median epochs to threshold {med_on} weighted vs {med_off} uniform ({elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// 7. metric oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..20 {
        let c = rng.random_range(2..10);
        let n = rng.random_range(30..200);
        let labels: Vec<String> = (0..c).map(|i| format!("L{i}")).collect();
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();

        let report = evaluate(&pred, &gold, &labels).unwrap();

        // Brute-force oracle.
        let mut confusion = vec![vec![0u64; c]; c];
        for (&g, &p) in gold.iter().zip(&pred) {
            confusion[g][p] += 1;
        }
        let mut weighted = 0.0;
        let mut correct = 0u64;
        for i in 0..c {
            let tp = confusion[i][i] as f64;
            correct += confusion[i][i];
            let support: u64 = confusion[i].iter().sum();
            let predicted: u64 = (0..c).map(|g| confusion[g][i]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            weighted += f1 * support as f64 / n as f64;

            let cls = &report.per_class[i];
            assert_eq!(cls.support, support, "case {case} class {i} support");
            assert!((cls.precision - precision).abs() <= 1e-9, "case {case} class {i} precision");
            assert!((cls.recall - recall).abs() <= 1e-9, "case {case} class {i} recall");
            assert!((cls.f1 - f1).abs() <= 1e-9, "case {case} class {i} f1");
            for j in 0..c {
                assert_eq!(report.confusion[i][j], confusion[i][j], "case {case} cell ({i},{j})");
            }
        }
        assert!((report.weighted_f1 - weighted).abs() <= 1e-9, "case {case} weighted f1");
        let acc = correct as f64 / n as f64;
        assert!((report.accuracy - acc).abs() <= 1e-9, "case {case} accuracy");
    }

    let summary = summarize_runs(&[0.4, 0.6]).unwrap();
    assert!((summary.mean - 0.5).abs() <= 1e-12);
    assert!((summary.std - 0.1414213562373095).abs() <= 1e-12);
    assert_eq!(summary.formatted, "0.500 \u{00b1} 0.141");
    assert_eq!(format_mean_std(0.5, 0.0), "0.500 \u{00b1} 0.000");

    println!(
        "[PASS] criterion 7: evaluation matches brute-force oracles to 1e-9 on 20 cases; \
         mean/std formatting exact"
    );
}

// ---------------------------------------------------------------------------
// 8. response-parser corpus
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct ParserCase {
    name: String,
    dataset: String,
    provider: String,
    response: String,
    parseable: bool,
    #[serde(default)]
    instances: Vec<ExpectedInstance>,
    #[serde(default)]
    dropped: Vec<String>,
}

#[derive(serde::Deserialize)]
struct ExpectedInstance {
    #[serde(rename = "type")]
    type_label: String,
    salience: f64,
    relevant_text: String,
}

#[test]
fn criterion_08_parser_corpus() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/llm_response_corpus.json");
    let cases: Vec<ParserCase> =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(cases.len(), 20, "corpus size");
    assert!(cases.iter().any(|c| !c.parseable), "corpus needs an unparseable case");

    for case in &cases {
        let schema = match case.dataset.as_str() {
            "koacd" => LabelSchema::koacd(),
            "therapist_qa" => LabelSchema::therapist_qa(),
            other => panic!("unknown dataset {other} in case {}", case.name),
        };
        let parsed = parse_instances(&case.response, &schema, &case.provider);
        if !case.parseable {
            assert!(parsed.is_none(), "case {} should be unparseable", case.name);
            continue;
        }
        let parsed = parsed.unwrap_or_else(|| panic!("case {} failed to parse", case.name));
        assert_eq!(parsed.instances.len(), case.instances.len(), "case {}", case.name);
        for (got, want) in parsed.instances.iter().zip(&case.instances) {
            assert_eq!(got.type_label, want.type_label, "case {}", case.name);
            assert_eq!(got.relevant_text, want.relevant_text, "case {}", case.name);
            assert!(
                (got.salience_raw - want.salience).abs() <= 1e-9,
                "case {}: salience {} vs {}",
                case.name,
                got.salience_raw,
                want.salience
            );
            assert_eq!(got.provider_id, case.provider, "case {}", case.name);
        }
        let want_reasons: Vec<DropReason> = case
            .dropped
            .iter()
            .map(|s| serde_json::from_value(serde_json::Value::String(s.clone())).unwrap())
            .collect();
        let got_reasons: Vec<DropReason> = parsed.dropped.iter().map(|d| d.reason).collect();
        assert_eq!(got_reasons, want_reasons, "case {}", case.name);
    }

    let table = cases.iter().find(|c| c.name == "three_instance_bag").unwrap();
    let parsed = parse_instances(&table.response, &LabelSchema::koacd(), &table.provider).unwrap();
    let saliences: Vec<f64> = parsed.instances.iter().map(|i| i.salience_raw).collect();
    assert_eq!(saliences, vec![0.444, 0.333, 0.222]);

    println!("[PASS] criterion 8: all 20 parser corpus cases produce the expected instances and drops");
}

// ---------------------------------------------------------------------------
// 9. offline end-to-end pipeline, byte-identical on rerun
// ---------------------------------------------------------------------------

fn tree_digests(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                if path.file_name().unwrap() == "llm_cache" {
                    continue;
                }
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_str().unwrap().to_string();
                out.insert(rel, cogmil::pipeline::file_digest(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_09_offline_end_to_end() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/utterances_koacd_40.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "dataset": {"path": fixture.to_str().unwrap(), "schema": "koacd"},
        "providers": [
            {"id": "mock-alpha", "kind": "mock"},
            {"id": "mock-beta", "kind": "mock", "mock_quirks": ["fence", "alias_types"]}
        ],
        "elb_provider": "mock-alpha",
        "embedding": {"backend": "test_hash", "dimension": 16},
        "model": {"d_h": 4, "k": 1},
        "train": {"max_epochs": 6, "batch_size": 8, "seed": 1},
        "runs": 2,
        "output_dir": out.to_str().unwrap(),
    }))
    .unwrap();

    run_all(&cfg).unwrap();
    let first = tree_digests(&out);

    for artifact in [
        "elb.jsonl",
        "instances_with_elb.jsonl",
        "instances_without_elb.jsonl",
        "bags_with_elb.jsonl",
        "embeddings.cgeb",
        "conditions/baseline/run-1/eval.json",
        "conditions/elb_salience/summary.json",
        "report/conditions.txt",
        "stats/stats.json",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    let conditions = std::fs::read_to_string(out.join("report/conditions.txt")).unwrap();
    assert_eq!(conditions.lines().count(), 5, "header plus four ablation rows");

    run_all(&cfg).unwrap();
    let second = tree_digests(&out);
    assert_eq!(first, second, "rerun must be byte-identical");

    println!(
        "[PASS] criterion 9: all eight stages ran offline on the 40-utterance fixture \
         and a rerun was byte-identical ({} files)",
        first.len()
    );
}

// ---------------------------------------------------------------------------
// 10. stratified split counts
// ---------------------------------------------------------------------------

fn synthetic_utterances(counts: &[usize], schema: &LabelSchema, dataset: DatasetId) -> Vec<Utterance> {
    let mut out = Vec::new();
    for (label_idx, &count) in counts.iter().enumerate() {
        for i in 0..count {
            out.push(Utterance {
                id: format!("u-{label_idx}-{i}"),
                text: format!("synthetic {label_idx} {i}"),
                gold_labels: vec![schema.labels()[label_idx].clone()],
                dataset_id: dataset,
                split: None,
            });
        }
    }
    out
}

fn split_counts(utterances: &[Utterance], seed: u64) -> (usize, usize, usize) {
    let assignment = split_dataset(utterances, (0.8, 0.1, 0.1), seed).unwrap();
    let count = |s: Split| assignment.iter().filter(|&&a| a == s).count();
    (count(Split::Train), count(Split::Val), count(Split::Test))
}

#[test]
fn criterion_10_split_counts() {
    let koacd = LabelSchema::koacd();
    let counts = [900, 700, 650, 500, 450, 400, 350, 250, 200, 110];
    assert_eq!(counts.iter().sum::<usize>(), 4510);
    let utterances = synthetic_utterances(&counts, &koacd, DatasetId::Koacd);
    for seed in [1u64, 7, 23] {
        assert_eq!(split_counts(&utterances, seed), (3608, 451, 451), "seed {seed}");
    }

    let tqa = LabelSchema::therapist_qa();
    let counts = [400, 300, 250, 200, 150, 100, 80, 60, 40, 17];
    assert_eq!(counts.iter().sum::<usize>(), 1597);
    let utterances = synthetic_utterances(&counts, &tqa, DatasetId::TherapistQa);
    for seed in [1u64, 7, 23] {
        assert_eq!(split_counts(&utterances, seed), (1277, 159, 161), "seed {seed}");
    }

    let tiny = synthetic_utterances(&[4, 3, 2, 1, 0, 0, 0, 0, 0, 0], &koacd, DatasetId::Koacd);
    assert_eq!(split_counts(&tiny, 3), (8, 1, 1));

    println!(
        "[PASS] criterion 10: 4510 splits 3608/451/451 and 1597 splits 1277/159/161 \
         across seeds (synthetic distributions)"
    );
}

/// Same count check against real dataset files; run with
/// `cargo test --test acceptance -- --ignored` after setting
/// COGMIL_KOACD_JSONL / COGMIL_THERAPIST_QA_JSONL.
#[test]
#[ignore]
fn criterion_10_split_counts_live() {
    let mut checked = 0;
    if let Ok(path) = std::env::var("COGMIL_KOACD_JSONL") {
        let schema = LabelSchema::koacd();
        let utterances = cogmil::schema::load_utterances(Path::new(&path), &schema).unwrap();
        assert_eq!(utterances.len(), 4510, "expected the 4510-utterance corpus");
        assert_eq!(split_counts(&utterances, 1), (3608, 451, 451));
        checked += 1;
    }
    if let Ok(path) = std::env::var("COGMIL_THERAPIST_QA_JSONL") {
        let schema = LabelSchema::therapist_qa();
        let utterances = cogmil::schema::load_utterances(Path::new(&path), &schema).unwrap();
        assert_eq!(utterances.len(), 1597, "expected the 1597-utterance corpus");
        assert_eq!(split_counts(&utterances, 1), (1277, 159, 161));
        checked += 1;
    }
    if checked == 0 {
        println!("[SKIP] criterion 10 (live): no dataset paths in the environment");
        return;
    }
    println!("[PASS] criterion 10 (live): real dataset split counts match on {checked} corpora");
}
