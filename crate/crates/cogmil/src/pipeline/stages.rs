//! The eight stage implementations.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{expect_input, file_digest, seal, write_sealed};
use super::{Condition, ExperimentConfig, PipelineError};
use crate::bag::{
    bag_stats, build_bag, read_bags_jsonl, render_bag_stats, render_missing_report,
    missing_rate, write_bags_jsonl, BagError, BagStats, MissingReport,
};
use crate::embed::{
    assemble, instance_text, max_instances, write_embedding_file, write_embedding_manifest,
    Embedder, EmbeddedBag, HttpEmbedder, PrecomputedFileEmbedder, SalienceWeighting,
    TestHashEmbedder,
};
use crate::gateway::LlmGateway;
use crate::metrics::{
    evaluate as evaluate_predictions, render_condition_table, render_per_class_table,
    summarize_per_class, summarize_runs, EvalReport, MultiRunSummary,
};
use crate::model::{
    load_checkpoint, predict, save_checkpoint, train as train_model, write_history_csv, Dims,
    ModelParams,
};
use crate::prompt::{extract_elb as prompt_extract_elb, infer_instances, InferenceRun};
use crate::schema::{
    load_utterances, split_dataset, write_split_jsonl, ElbComponents, LabelSchema, Split,
    Utterance,
};

#[derive(Debug, Serialize, Deserialize)]
struct ElbRow {
    utterance_id: String,
    #[serde(flatten)]
    elb: ElbComponents,
}

fn dataset_digest(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    let path = Path::new(&cfg.dataset.path);
    if !path.is_file() {
        return Err(PipelineError::ConfigInvalid(format!(
            "dataset file {} not found",
            path.display()
        )));
    }
    Ok(file_digest(path)?)
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<(LabelSchema, Vec<Utterance>), PipelineError> {
    let schema = cfg.label_schema()?;
    let utterances = load_utterances(Path::new(&cfg.dataset.path), &schema)?;
    Ok((schema, utterances))
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, PipelineError> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub(super) fn extract_elb(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let data_digest = dataset_digest(cfg)?;
    let (_, utterances) = load_dataset(cfg)?;
    let templates = cfg.templates()?;
    let provider = cfg.provider(&cfg.elb_provider)?;
    let gateway = LlmGateway::with_default_transport(&cfg.cache_path());

    let rows = utterances
        .par_iter()
        .map(|u| -> Result<ElbRow, PipelineError> {
            let elb = prompt_extract_elb(&gateway, provider, &templates, u, &cfg.decoding)?;
            Ok(ElbRow { utterance_id: u.id.clone(), elb })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let inputs = BTreeMap::from([("dataset".to_string(), data_digest)]);
    write_sealed(&cfg.elb_path(), &jsonl(&rows)?, &cfg.digest(), inputs, None)?;
    log::info!("extracted components for {} utterances", rows.len());
    Ok(())
}

fn read_elb_rows(path: &Path) -> Result<HashMap<String, ElbComponents>, PipelineError> {
    let mut map = HashMap::new();
    for line in fs::read_to_string(path)?.lines() {
        let row: ElbRow = serde_json::from_str(line)?;
        map.insert(row.utterance_id, row.elb);
    }
    Ok(map)
}

pub(super) fn infer(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let data_digest = dataset_digest(cfg)?;
    let elb_digest = expect_input("infer", &cfg.elb_path(), "extract-elb")?;
    let (schema, utterances) = load_dataset(cfg)?;
    let elb_map = read_elb_rows(&cfg.elb_path())?;
    let templates = cfg.templates()?;
    let gateway = LlmGateway::with_default_transport(&cfg.cache_path());

    for with_elb in [true, false] {
        let mut work = Vec::new();
        for u in &utterances {
            let elb = if with_elb {
                Some(elb_map.get(&u.id).ok_or_else(|| PipelineError::MissingUpstream {
                    stage: "infer",
                    path: cfg.elb_path(),
                    why: format!("no components recorded for utterance {}", u.id),
                    produced_by: "extract-elb",
                })?)
            } else {
                None
            };
            for provider in &cfg.providers {
                work.push((u, provider, elb));
            }
        }
        let runs = work
            .par_iter()
            .map(|(u, provider, elb)| -> Result<InferenceRun, PipelineError> {
                Ok(infer_instances(
                    &gateway,
                    provider,
                    &templates,
                    &schema,
                    u,
                    *elb,
                    &cfg.decoding,
                )?)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut inputs = BTreeMap::from([("dataset".to_string(), data_digest.clone())]);
        if with_elb {
            inputs.insert("elb.jsonl".to_string(), elb_digest.clone());
        }
        write_sealed(
            &cfg.instances_path(with_elb),
            &jsonl(&runs)?,
            &cfg.digest(),
            inputs,
            None,
        )?;
        let kept: usize = runs.iter().map(|r| r.instances.len()).sum();
        let dropped: usize = runs.iter().map(|r| r.dropped.len()).sum();
        log::info!(
            "inference (with_elb={with_elb}): {kept} instances kept, {dropped} dropped"
        );
    }
    Ok(())
}

fn read_inference_runs(path: &Path) -> Result<Vec<InferenceRun>, PipelineError> {
    let mut runs = Vec::new();
    for line in fs::read_to_string(path)?.lines() {
        runs.push(serde_json::from_str(line)?);
    }
    Ok(runs)
}

/// Bag counts per corpus; utterances whose instances were all rejected are
/// excluded from training and listed here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BagsReport {
    pub num_utterances: usize,
    pub num_bags: usize,
    pub empty_utterance_ids: Vec<String>,
}

pub(super) fn build_bags(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let data_digest = dataset_digest(cfg)?;
    let (_, utterances) = load_dataset(cfg)?;
    let mut reports = BTreeMap::new();

    for with_elb in [true, false] {
        let instances_path = cfg.instances_path(with_elb);
        let instances_digest = expect_input("build-bags", &instances_path, "infer")?;
        let mut runs_by_utt: HashMap<&str, Vec<&InferenceRun>> = HashMap::new();
        let runs = read_inference_runs(&instances_path)?;
        for run in &runs {
            runs_by_utt.entry(&run.utterance_ref).or_default().push(run);
        }

        let mut bags = Vec::new();
        let mut empty = Vec::new();
        for u in &utterances {
            let owned: Vec<InferenceRun> = runs_by_utt
                .get(u.id.as_str())
                .map(|rs| rs.iter().map(|r| (*r).clone()).collect())
                .unwrap_or_default();
            match build_bag(u, &owned) {
                Ok(bag) => bags.push(bag),
                Err(BagError::EmptyBag { utterance_id }) => empty.push(utterance_id),
                Err(e) => return Err(e.into()),
            }
        }

        let mut body = Vec::new();
        write_bags_jsonl(&mut body, &bags)?;
        let inputs = BTreeMap::from([
            ("dataset".to_string(), data_digest.clone()),
            (
                instances_path.file_name().unwrap().to_string_lossy().into_owned(),
                instances_digest,
            ),
        ]);
        write_sealed(&cfg.bags_path(with_elb), &body, &cfg.digest(), inputs, None)?;
        if !empty.is_empty() {
            log::warn!(
                "{} utterances produced no valid instances (with_elb={with_elb})",
                empty.len()
            );
        }
        reports.insert(
            ExperimentConfig::corpus_tag(with_elb).to_string(),
            BagsReport {
                num_utterances: utterances.len(),
                num_bags: bags.len(),
                empty_utterance_ids: empty,
            },
        );
    }

    let mut body = serde_json::to_vec_pretty(&reports)?;
    body.push(b'\n');
    let inputs = BTreeMap::from([
        ("dataset".to_string(), data_digest),
        (
            "bags_with_elb.jsonl".to_string(),
            file_digest(&cfg.bags_path(true))?,
        ),
        (
            "bags_without_elb.jsonl".to_string(),
            file_digest(&cfg.bags_path(false))?,
        ),
    ]);
    write_sealed(&cfg.bags_report_path(), &body, &cfg.digest(), inputs, None)?;
    Ok(())
}

fn embedding_backend(cfg: &ExperimentConfig) -> Box<dyn Embedder> {
    match cfg.embedding.backend {
        super::EmbeddingBackendKind::TestHash => {
            Box::new(TestHashEmbedder::new(cfg.embedding.dimension))
        }
        super::EmbeddingBackendKind::Http => Box::new(HttpEmbedder::new(
            cfg.embedding.base_url.as_deref().expect("validated"),
            cfg.embedding.dimension,
        )),
    }
}

pub(super) fn embed(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let data_digest = dataset_digest(cfg)?;
    let (_, utterances) = load_dataset(cfg)?;
    let mut inputs = BTreeMap::from([("dataset".to_string(), data_digest)]);

    // Gather every text the model will ever look up, in first-seen order.
    let mut seen = std::collections::HashSet::new();
    let mut texts = Vec::new();
    let mut push = |text: String| {
        if seen.insert(text.clone()) {
            texts.push(text);
        }
    };
    for u in &utterances {
        push(u.text.clone());
    }
    for with_elb in [true, false] {
        let path = cfg.bags_path(with_elb);
        let digest = expect_input("embed", &path, "build-bags")?;
        inputs.insert(path.file_name().unwrap().to_string_lossy().into_owned(), digest);
        for bag in read_bags_jsonl(&path)? {
            for instance in &bag.instances {
                push(instance_text(instance));
            }
        }
    }

    let backend = embedding_backend(cfg);
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = backend.embed_batch(&refs)?;
    let entries: Vec<(String, Vec<f32>)> = texts
        .into_iter()
        .zip(vectors)
        .map(|(t, v)| (t, v.into_iter().map(|x| x as f32).collect()))
        .collect();

    write_embedding_file(&cfg.embeddings_path(), cfg.embedding.dimension, &entries)?;
    seal(&cfg.embeddings_path(), &cfg.digest(), inputs.clone(), None)?;

    let mut body = Vec::new();
    write_embedding_manifest(&mut body, &entries)?;
    write_sealed(&cfg.embeddings_texts_path(), &body, &cfg.digest(), inputs, None)?;
    log::info!("embedded {} unique texts", entries.len());
    Ok(())
}

/// Everything shared by the train and evaluate stages for one condition.
struct ConditionData {
    bags_digest: String,
    embedded: Vec<EmbeddedBag>,
    dims: Dims,
}

fn prepare_condition(
    stage: &'static str,
    cfg: &ExperimentConfig,
    condition: Condition,
    schema: &LabelSchema,
    utterances: &[Utterance],
    embedder: &PrecomputedFileEmbedder,
) -> Result<ConditionData, PipelineError> {
    let bags_path = cfg.bags_path(condition.with_elb());
    let bags_digest = expect_input(stage, &bags_path, "build-bags")?;
    let bags = read_bags_jsonl(&bags_path)?;
    let by_id: HashMap<&str, &Utterance> =
        utterances.iter().map(|u| (u.id.as_str(), u)).collect();
    let n_max = max_instances(&bags);
    let weighting = SalienceWeighting::from_use_salience(condition.use_salience());

    let mut embedded = Vec::with_capacity(bags.len());
    for bag in &bags {
        let u = by_id.get(bag.utterance_ref.as_str()).ok_or_else(|| {
            PipelineError::MissingUpstream {
                stage,
                path: bags_path.clone(),
                why: format!("bag references unknown utterance {}", bag.utterance_ref),
                produced_by: "build-bags",
            }
        })?;
        embedded.push(assemble(&u.text, bag, embedder, n_max, weighting, schema)?);
    }
    let dims = Dims {
        d_e: embedder.dimension(),
        d_h: cfg.model.d_h,
        k: cfg.model.k,
        c: schema.num_labels(),
    };
    Ok(ConditionData { bags_digest, embedded, dims })
}

/// Partition embedded bags by each utterance's split assignment.
fn partition(
    embedded: &[EmbeddedBag],
    utterances: &[Utterance],
    splits: &[Split],
) -> (Vec<EmbeddedBag>, Vec<EmbeddedBag>, Vec<EmbeddedBag>) {
    let split_of: HashMap<&str, Split> = utterances
        .iter()
        .zip(splits)
        .map(|(u, s)| (u.id.as_str(), *s))
        .collect();
    let mut parts = (Vec::new(), Vec::new(), Vec::new());
    for bag in embedded {
        match split_of.get(bag.utterance_ref.as_str()) {
            Some(Split::Train) => parts.0.push(bag.clone()),
            Some(Split::Val) => parts.1.push(bag.clone()),
            Some(Split::Test) => parts.2.push(bag.clone()),
            None => {}
        }
    }
    parts
}

pub(super) fn train(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let data_digest = dataset_digest(cfg)?;
    let emb_digest = expect_input("train", &cfg.embeddings_path(), "embed")?;
    let (schema, utterances) = load_dataset(cfg)?;
    let embedder = PrecomputedFileEmbedder::load(&cfg.embeddings_path())?;
    let seeds = cfg.seeds();

    for condition in cfg.conditions() {
        let data = prepare_condition("train", cfg, condition, &schema, &utterances, &embedder)?;
        for (i, &seed) in seeds.iter().enumerate() {
            let run = i + 1;
            let run_dir = cfg.run_dir(condition, run);
            fs::create_dir_all(&run_dir)?;

            let splits = split_dataset(&utterances, cfg.split.as_tuple(), seed)?;
            let mut split_body = Vec::new();
            write_split_jsonl(&mut split_body, &utterances, &splits)?;
            write_sealed(
                &run_dir.join("split.jsonl"),
                &split_body,
                &cfg.digest(),
                BTreeMap::from([("dataset".to_string(), data_digest.clone())]),
                Some(seed),
            )?;

            let (train_bags, val_bags, _) = partition(&data.embedded, &utterances, &splits);
            let mut tcfg = cfg.train;
            tcfg.seed = seed;
            let params0 = ModelParams::init(data.dims, seed);
            let (best, history) = train_model(&params0, &train_bags, &val_bags, &tcfg)?;
            let best_epoch = history
                .iter()
                .min_by(|a, b| a.val_loss.partial_cmp(&b.val_loss).expect("finite"))
                .map(|s| s.epoch)
                .unwrap_or(0);

            let inputs = BTreeMap::from([
                ("dataset".to_string(), data_digest.clone()),
                ("bags".to_string(), data.bags_digest.clone()),
                ("embeddings".to_string(), emb_digest.clone()),
            ]);
            let ckpt = run_dir.join("model.ckpt");
            save_checkpoint(&ckpt, &best, seed, best_epoch)?;
            seal(&ckpt, &cfg.digest(), inputs.clone(), Some(seed))?;

            let mut csv = Vec::new();
            write_history_csv(&mut csv, &history)?;
            write_sealed(&run_dir.join("history.csv"), &csv, &cfg.digest(), inputs, Some(seed))?;
            log::info!(
                "trained {} run {run}: {} epochs, best val loss at epoch {best_epoch}",
                condition.slug(),
                history.len()
            );
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RunEval {
    run: usize,
    seed: u64,
    val: EvalReport,
    test: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerClassRow {
    pub label: String,
    pub f1: MultiRunSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub display: String,
    pub seeds: Vec<u64>,
    pub val: MultiRunSummary,
    pub test: MultiRunSummary,
    pub per_class_test: Vec<PerClassRow>,
}

fn score_split(
    params: &ModelParams,
    bags: &[EmbeddedBag],
    schema: &LabelSchema,
) -> Result<EvalReport, PipelineError> {
    let mut preds = Vec::with_capacity(bags.len());
    let mut golds = Vec::with_capacity(bags.len());
    for bag in bags {
        let (label, _) = predict(params, bag)?;
        preds.push(label);
        golds.push(bag.label_index);
    }
    Ok(evaluate_predictions(&preds, &golds, schema.labels())?)
}

pub(super) fn evaluate(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let data_digest = dataset_digest(cfg)?;
    let emb_digest = expect_input("evaluate", &cfg.embeddings_path(), "embed")?;
    let (schema, utterances) = load_dataset(cfg)?;
    let embedder = PrecomputedFileEmbedder::load(&cfg.embeddings_path())?;
    let seeds = cfg.seeds();

    for condition in cfg.conditions() {
        let data =
            prepare_condition("evaluate", cfg, condition, &schema, &utterances, &embedder)?;
        let mut evals = Vec::new();
        let mut eval_digests = BTreeMap::new();
        for (i, &seed) in seeds.iter().enumerate() {
            let run = i + 1;
            let run_dir = cfg.run_dir(condition, run);
            let ckpt_path = run_dir.join("model.ckpt");
            let ckpt_digest = expect_input("evaluate", &ckpt_path, "train")?;
            let (params, ckpt_seed, _) = load_checkpoint(&ckpt_path)?;
            if ckpt_seed != seed {
                return Err(PipelineError::MissingUpstream {
                    stage: "evaluate",
                    path: ckpt_path,
                    why: format!("checkpoint seed {ckpt_seed} does not match run seed {seed}"),
                    produced_by: "train",
                });
            }

            let splits = split_dataset(&utterances, cfg.split.as_tuple(), seed)?;
            let (_, val_bags, test_bags) = partition(&data.embedded, &utterances, &splits);
            let eval = RunEval {
                run,
                seed,
                val: score_split(&params, &val_bags, &schema)?,
                test: score_split(&params, &test_bags, &schema)?,
            };
            let mut body = serde_json::to_vec_pretty(&eval)?;
            body.push(b'\n');
            let eval_path = run_dir.join("eval.json");
            let inputs = BTreeMap::from([
                ("dataset".to_string(), data_digest.clone()),
                ("bags".to_string(), data.bags_digest.clone()),
                ("embeddings".to_string(), emb_digest.clone()),
                ("model.ckpt".to_string(), ckpt_digest),
            ]);
            write_sealed(&eval_path, &body, &cfg.digest(), inputs, Some(seed))?;
            eval_digests.insert(format!("run-{run}/eval.json"), file_digest(&eval_path)?);
            evals.push(eval);
        }

        let val_scores: Vec<f64> = evals.iter().map(|e| e.val.weighted_f1).collect();
        let test_scores: Vec<f64> = evals.iter().map(|e| e.test.weighted_f1).collect();
        let test_reports: Vec<EvalReport> = evals.iter().map(|e| e.test.clone()).collect();
        let summary = ConditionSummary {
            condition: condition.slug().to_string(),
            display: condition.display().to_string(),
            seeds: seeds.clone(),
            val: summarize_runs(&val_scores)?,
            test: summarize_runs(&test_scores)?,
            per_class_test: summarize_per_class(&test_reports)?
                .into_iter()
                .map(|(label, f1)| PerClassRow { label, f1 })
                .collect(),
        };
        let mut body = serde_json::to_vec_pretty(&summary)?;
        body.push(b'\n');
        write_sealed(
            &cfg.summary_path(condition),
            &body,
            &cfg.digest(),
            eval_digests,
            None,
        )?;
        log::info!(
            "{}: val {} / test {}",
            condition.slug(),
            summary.val.formatted,
            summary.test.formatted
        );
    }
    Ok(())
}

pub(super) fn report(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let conditions = cfg.conditions();
    let mut inputs = BTreeMap::new();
    let mut summaries = Vec::new();
    for condition in &conditions {
        let path = cfg.summary_path(*condition);
        let digest = expect_input("report", &path, "evaluate")?;
        inputs.insert(format!("{}/summary.json", condition.slug()), digest);
        let summary: ConditionSummary = serde_json::from_str(&fs::read_to_string(&path)?)?;
        summaries.push(summary);
    }

    let rows: Vec<(String, MultiRunSummary, MultiRunSummary)> = summaries
        .iter()
        .map(|s| (s.display.clone(), s.val.clone(), s.test.clone()))
        .collect();
    let conditions_table = render_condition_table(&rows);

    // Per-type scores come from the richest condition present.
    let featured = summaries.last().expect("conditions() is never empty");
    let per_type_rows: Vec<(String, MultiRunSummary)> = featured
        .per_class_test
        .iter()
        .map(|row| (row.label.clone(), row.f1.clone()))
        .collect();
    let per_type_table = render_per_class_table(&per_type_rows);

    let dir = cfg.report_dir();
    write_sealed(
        &dir.join("conditions.txt"),
        conditions_table.as_bytes(),
        &cfg.digest(),
        inputs.clone(),
        None,
    )?;
    write_sealed(
        &dir.join("per_type.txt"),
        per_type_table.as_bytes(),
        &cfg.digest(),
        inputs.clone(),
        None,
    )?;
    let combined = serde_json::json!({
        "conditions": summaries,
        "per_type_condition": featured.condition,
    });
    let mut body = serde_json::to_vec_pretty(&combined)?;
    body.push(b'\n');
    write_sealed(&dir.join("report.json"), &body, &cfg.digest(), inputs, None)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusStats {
    bags: BagStats,
    missing: MissingReport,
}

pub(super) fn stats(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let (schema, _) = load_dataset(cfg)?;
    let dir = cfg.stats_dir();
    let mut combined = BTreeMap::new();
    let mut inputs = BTreeMap::new();

    for with_elb in [true, false] {
        let tag = ExperimentConfig::corpus_tag(with_elb);
        let bags_path = cfg.bags_path(with_elb);
        let digest = expect_input("stats", &bags_path, "build-bags")?;
        inputs.insert(
            bags_path.file_name().unwrap().to_string_lossy().into_owned(),
            digest.clone(),
        );
        let bags = read_bags_jsonl(&bags_path)?;
        let stats = bag_stats(&bags, &schema);
        let missing = missing_rate(&bags, &schema);

        let per_file = BTreeMap::from([(
            bags_path.file_name().unwrap().to_string_lossy().into_owned(),
            digest,
        )]);
        write_sealed(
            &dir.join(format!("bag_stats_{tag}.txt")),
            render_bag_stats(&stats).as_bytes(),
            &cfg.digest(),
            per_file.clone(),
            None,
        )?;
        write_sealed(
            &dir.join(format!("missing_{tag}.txt")),
            render_missing_report(&missing).as_bytes(),
            &cfg.digest(),
            per_file,
            None,
        )?;
        combined.insert(tag.to_string(), CorpusStats { bags: stats, missing });
    }

    let mut body = serde_json::to_vec_pretty(&combined)?;
    body.push(b'\n');
    write_sealed(&dir.join("stats.json"), &body, &cfg.digest(), inputs, None)?;
    Ok(())
}
