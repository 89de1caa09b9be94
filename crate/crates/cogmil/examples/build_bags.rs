//! Merge per-provider inference runs into one bag per utterance and
//! normalize salience scores into instance weights.
//!
//! Run with `cargo run --example build_bags`.

use cogmil::bag::{bag_stats, build_bag, missing_rate, BagError};
use cogmil::prompt::InferenceRun;
use cogmil::schema::{DatasetId, DistortionInstance, LabelSchema, Utterance};

fn utterance(id: &str, text: &str, label: &str) -> Utterance {
    Utterance {
        id: id.into(),
        text: text.into(),
        gold_labels: vec![label.into()],
        dataset_id: DatasetId::Koacd,
        split: None,
    }
}

fn instance(label: &str, text: &str, salience: f64, provider: &str) -> DistortionInstance {
    DistortionInstance {
        type_label: label.into(),
        relevant_text: text.into(),
        salience_raw: salience,
        provider_id: provider.into(),
    }
}

fn main() {
    let schema = LabelSchema::koacd();
    let u = utterance(
        "bag-demo-1",
        "I should be perfect at everything; one bad grade means I'm a failure.",
        "Should Statements",
    );

    // Two providers inspected the same utterance. Their instances are pooled
    // as-is: no dedup across providers, the weighting handles redundancy.
    let runs = vec![
        InferenceRun {
            utterance_ref: u.id.clone(),
            provider_id: "mock-alpha".into(),
            with_elb: true,
            instances: vec![
                instance("Should Statements", "I should be perfect at everything", 0.444, "mock-alpha"),
                instance("Labeling", "I'm a failure", 0.333, "mock-alpha"),
            ],
            dropped: vec![],
        },
        InferenceRun {
            utterance_ref: u.id.clone(),
            provider_id: "mock-beta".into(),
            with_elb: true,
            instances: vec![instance(
                "All-or-Nothing Thinking",
                "one bad grade means I'm a failure",
                0.222,
                "mock-beta",
            )],
            dropped: vec![],
        },
    ];

    let bag = build_bag(&u, &runs).unwrap();
    println!("bag {} has {} instances:", bag.utterance_ref, bag.len());
    for (inst, w) in bag.instances.iter().zip(&bag.normalized_salience) {
        println!(
            "  {:24} raw {:.3} -> weight {:.4}  [{}]",
            inst.type_label, inst.salience_raw, w, inst.provider_id
        );
    }
    let total: f64 = bag.normalized_salience.iter().sum();
    println!("  weights sum to {total:.12}");

    // An utterance no provider found anything in cannot become a bag; the
    // pipeline skips it and records the id in the bag report.
    let silent = utterance("bag-demo-2", "Nice weather today.", "Labeling");
    match build_bag(&silent, &[]) {
        Err(BagError::EmptyBag { utterance_id }) => {
            println!("\n{utterance_id}: skipped (no instances from any provider)");
        }
        other => println!("\nunexpected: {other:?}"),
    }

    let stats = bag_stats(&[bag.clone()], &schema);
    let missing = missing_rate(&[bag], &schema);
    println!(
        "\ncorpus stats: {} bags, {} instances, avg {:.1}/bag, {:.1}% of gold labels unfound",
        stats.num_bags, stats.total_instances, stats.avg_per_bag, missing.overall_rate_percent
    );
}
