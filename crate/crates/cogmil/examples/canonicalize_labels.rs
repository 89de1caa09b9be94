//! Map raw model-emitted distortion labels onto the fixed taxonomies.
//!
//! Run with `cargo run --example canonicalize_labels`.

use cogmil::schema::{canonicalize_label, LabelSchema};

fn main() {
    let koacd = LabelSchema::koacd();
    let tqa = LabelSchema::therapist_qa();

    println!("{} labels ({}):", koacd.dataset_id().as_str(), koacd.num_labels());
    for (i, label) in koacd.labels().iter().enumerate() {
        println!("  {i}: {label}");
    }

    // Models rarely echo a taxonomy verbatim. The alias table absorbs the
    // usual drift: casing, "-ing" variants, parenthetical glosses.
    let raw = [
        "all-or-nothing thinking",
        "Mental Filtering",
        "jumping to conclusions",
        "Magnification and minimization",
        "Catastrophizing",
    ];
    println!("\nkoacd canonicalization:");
    for r in raw {
        match canonicalize_label(r, &koacd) {
            Ok(canonical) => println!("  {r:40} -> {canonical}"),
            Err(e) => println!("  {r:40} -> rejected ({e})"),
        }
    }

    println!("\ntherapist_qa canonicalization:");
    for r in ["Fortune telling", "All-or-nothing thinking (black and white thinking)", "mind reading"] {
        match canonicalize_label(r, &tqa) {
            Ok(canonical) => println!("  {r:52} -> {canonical}"),
            Err(e) => println!("  {r:52} -> rejected ({e})"),
        }
    }
}
