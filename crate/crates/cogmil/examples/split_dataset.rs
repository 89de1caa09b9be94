//! Stratified 8:1:1 splitting with exact global counts.
//!
//! Run with `cargo run --example split_dataset`.

use cogmil::schema::{split_dataset, DatasetId, LabelSchema, Split, Utterance};

fn main() {
    let schema = LabelSchema::koacd();

    // An uneven per-label distribution totalling 4510 utterances.
    let per_label = [900, 700, 650, 500, 450, 400, 350, 250, 200, 110];
    let mut utterances = Vec::new();
    for (idx, &n) in per_label.iter().enumerate() {
        for i in 0..n {
            utterances.push(Utterance {
                id: format!("u{idx:02}-{i:04}"),
                text: format!("example utterance {idx} {i}"),
                gold_labels: vec![schema.labels()[idx].clone()],
                dataset_id: DatasetId::Koacd,
                split: None,
            });
        }
    }

    for seed in [1u64, 2, 3] {
        let assignment = split_dataset(&utterances, (0.8, 0.1, 0.1), seed).unwrap();
        let count = |s: Split| assignment.iter().filter(|&&a| a == s).count();
        println!(
            "seed {seed}: train {} / val {} / test {}",
            count(Split::Train),
            count(Split::Val),
            count(Split::Test)
        );
    }

    // Per-label view for one seed: stratification keeps every class
    // represented in every split, while repair nudges a few groups so the
    // global counts land exactly on floor(N * ratio).
    let assignment = split_dataset(&utterances, (0.8, 0.1, 0.1), 1).unwrap();
    println!("\nper-label split (seed 1):");
    for (idx, label) in schema.labels().iter().enumerate() {
        let mut counts = [0usize; 3];
        for (u, &s) in utterances.iter().zip(&assignment) {
            if u.gold_labels[0] == *label {
                counts[match s {
                    Split::Train => 0,
                    Split::Val => 1,
                    Split::Test => 2,
                }] += 1;
            }
        }
        println!(
            "  {label:32} {:4} -> {:4}/{:3}/{:3}",
            per_label[idx], counts[0], counts[1], counts[2]
        );
    }
}
