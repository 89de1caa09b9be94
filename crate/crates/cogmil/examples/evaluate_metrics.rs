//! Per-class evaluation, multi-run aggregation, and the text tables the
//! report stage emits.
//!
//! Run with `cargo run --example evaluate_metrics`.

use cogmil::metrics::{
    evaluate, render_condition_table, render_per_class_table, summarize_runs,
};

fn main() {
    let labels: Vec<String> = ["Overgeneralization", "Labeling", "Personalization"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let gold = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2];
    let pred = [0, 0, 1, 1, 1, 0, 2, 2, 2, 1];
    let report = evaluate(&pred, &gold, &labels).unwrap();

    println!("confusion (rows gold, cols predicted):");
    for (label, row) in labels.iter().zip(&report.confusion) {
        println!("  {label:20} {row:?}");
    }
    println!();
    for c in &report.per_class {
        println!(
            "  {:20} precision {:.3}  recall {:.3}  f1 {:.3}  (n={})",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
    println!(
        "\naccuracy {:.3}, weighted F1 {:.3} over {} examples",
        report.accuracy, report.weighted_f1, report.num_examples
    );

    // Ten independently seeded runs reduce to mean and sample deviation.
    let val_runs = [0.681, 0.702, 0.688, 0.694, 0.676, 0.699, 0.691, 0.685, 0.703, 0.690];
    let test_runs = [0.662, 0.671, 0.659, 0.668, 0.655, 0.676, 0.664, 0.660, 0.673, 0.667];
    let val = summarize_runs(&val_runs).unwrap();
    let test = summarize_runs(&test_runs).unwrap();
    println!("\nval  F1 {}", val.formatted);
    println!("test F1 {}", test.formatted);

    let rows = vec![
        ("Baseline".to_string(), summarize_runs(&[0.612, 0.625]).unwrap(), summarize_runs(&[0.601, 0.598]).unwrap()),
        ("ELB + Salience".to_string(), val, test),
    ];
    println!("\n{}", render_condition_table(&rows));

    let per_class = vec![
        ("Overgeneralization".to_string(), summarize_runs(&[0.71, 0.74]).unwrap()),
        ("Labeling".to_string(), summarize_runs(&[0.66, 0.61]).unwrap()),
        ("Personalization".to_string(), summarize_runs(&[0.58, 0.63]).unwrap()),
    ];
    println!("{}", render_per_class_table(&per_class));
}
