//! The whole experiment offline: a generated corpus, mock providers, hash
//! embeddings, all eight stages, four ablation conditions, report tables.
//!
//! Run with `cargo run --example full_pipeline --release`.

use cogmil::pipeline::{run_all, ExperimentConfig};
use std::io::Write;
use std::path::Path;

/// Twenty utterances per distortion type. Each sentence carries a phrase the
/// mock provider's rules react to, so inference yields label-bearing
/// instances without any network access.
fn write_corpus(path: &Path) {
    let phrasings: [(&str, [&str; 2]); 10] = [
        ("All-or-Nothing Thinking", [
            "I completely ruined {}, there is no middle ground for me.",
            "Either {} goes perfectly or it is not worth doing at all.",
        ]),
        ("Overgeneralization", [
            "I always mess up {}, every single time.",
            "Nobody ever wants to join me for {}.",
        ]),
        ("Mental Filter", [
            "Nothing good happened during {}, all I can see is the one slip.",
            "When I think about {}, only the bad parts come back to me.",
        ]),
        ("Discounting the Positive", [
            "Sure, {} went fine, but that was just luck.",
            "The praise I got for {} doesn't count, anyone could have done it.",
        ]),
        ("Jumping to Conclusions", [
            "Everyone must think I am useless at {}.",
            "I am going to fail {}, I can already tell.",
        ]),
        ("Magnification and Minimization", [
            "That small mistake in {} is a complete disaster.",
            "Getting through {} felt unbearable, the worst day I have had.",
        ]),
        ("Emotional Reasoning", [
            "I feel like a fraud during {}, so I must be one.",
            "I just feel that {} is going to expose me.",
        ]),
        ("Should Statements", [
            "I should have prepared much more for {}.",
            "I ought to handle {} without any help.",
        ]),
        ("Labeling", [
            "I am such an idiot when it comes to {}.",
            "Messing up {} proves I am a failure.",
        ]),
        ("Personalization", [
            "The team struggled with {} and it is my fault.",
            "{} fell apart because of me.",
        ]),
    ];
    let contexts = [
        "the exam", "my presentation", "the job interview", "dinner with friends",
        "the driving test", "team practice", "the budget meeting", "my essay",
        "the recital", "the move",
    ];

    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    let mut n = 0;
    for (label, templates) in phrasings {
        for template in templates {
            for ctx in contexts {
                n += 1;
                let text = template.replacen("{}", ctx, 1);
                let row = serde_json::json!({
                    "id": format!("demo-{n:03}"),
                    "text": text,
                    "gold_labels": [label],
                    "dataset": "koacd",
                });
                writeln!(f, "{row}").unwrap();
            }
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let out = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/full_pipeline_out");
    std::fs::create_dir_all(&out).unwrap();
    let corpus = out.join("corpus.jsonl");
    write_corpus(&corpus);

    let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "dataset": {"path": corpus.to_str().unwrap(), "schema": "koacd"},
        "providers": [
            {"id": "mock-alpha", "kind": "mock"},
            {"id": "mock-beta", "kind": "mock", "mock_quirks": ["fence", "alias_types"]}
        ],
        "elb_provider": "mock-alpha",
        "embedding": {"backend": "test_hash", "dimension": 32},
        "model": {"d_h": 8, "k": 2},
        "train": {"max_epochs": 40, "batch_size": 8, "lr0": 0.005},
        "runs": 2,
        "output_dir": out.to_str().unwrap(),
    }))
    .unwrap();

    run_all(&cfg).unwrap();

    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("stats/stats.json")).unwrap())
            .unwrap();
    println!("\n== inference corpora ==");
    for tag in ["with_elb", "without_elb"] {
        let s = &stats[tag];
        println!(
            "{tag:12} {} bags, {} instances (avg {:.2}/bag), gold label missed in {:.1}% of bags",
            s["bags"]["num_bags"], s["bags"]["total_instances"],
            s["bags"]["avg_per_bag"].as_f64().unwrap(),
            s["missing"]["overall_rate_percent"].as_f64().unwrap(),
        );
    }

    // The offline hash embedder carries no meaning across texts, so absolute
    // scores sit near chance; the point is the artifact flow and the
    // condition wiring, not the numbers.
    println!("\n== ablation conditions ==");
    print!("{}", std::fs::read_to_string(out.join("report/conditions.txt")).unwrap());
    println!("\n== per-type F1 (featured condition) ==");
    print!("{}", std::fs::read_to_string(out.join("report/per_type.txt")).unwrap());
    println!("\nartifacts under {}", out.display());
}
