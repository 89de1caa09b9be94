//! Turn a text bag into padded tensors ready for the classifier, under
//! salience-weighted and uniform instance weighting.
//!
//! Run with `cargo run --example embed_bags`.

use cogmil::bag::build_bag;
use cogmil::embed::{assemble, SalienceWeighting, TestHashEmbedder};
use cogmil::prompt::InferenceRun;
use cogmil::schema::{DatasetId, DistortionInstance, LabelSchema, Utterance};

fn main() {
    let schema = LabelSchema::koacd();
    let utterance = Utterance {
        id: "embed-demo".into(),
        text: "Everyone must think I'm hopeless after that presentation.".into(),
        gold_labels: vec!["Jumping to Conclusions".into()],
        dataset_id: DatasetId::Koacd,
        split: None,
    };
    let run = InferenceRun {
        utterance_ref: utterance.id.clone(),
        provider_id: "mock-alpha".into(),
        with_elb: true,
        instances: vec![
            DistortionInstance {
                type_label: "Jumping to Conclusions".into(),
                relevant_text: "Everyone must think I'm hopeless".into(),
                salience_raw: 0.7,
                provider_id: "mock-alpha".into(),
            },
            DistortionInstance {
                type_label: "Labeling".into(),
                relevant_text: "I'm hopeless".into(),
                salience_raw: 0.3,
                provider_id: "mock-alpha".into(),
            },
        ],
        dropped: vec![],
    };
    let bag = build_bag(&utterance, &[run]).unwrap();

    // The hash embedder is the offline stand-in for a sentence-embedding
    // service: deterministic, normalized, no network.
    let embedder = TestHashEmbedder::new(16);
    let n_max = 4; // corpus-wide maximum bag size sets the padding width

    for weighting in [SalienceWeighting::Normalized, SalienceWeighting::Uniform] {
        let eb = assemble(&utterance.text, &bag, &embedder, n_max, weighting, &schema).unwrap();
        println!("{weighting:?}:");
        println!("  x: {} rows x {} dims ({} real)", eb.x.nrows(), eb.x.ncols(), eb.num_real());
        println!("  mask: {:?}", eb.mask.to_vec());
        println!("  p:    {:?}", eb.p.to_vec());
        println!("  label index {} -> y {:?}", eb.label_index, eb.y.to_vec());
    }

    let eb = assemble(
        &utterance.text,
        &bag,
        &embedder,
        n_max,
        SalienceWeighting::Normalized,
        &schema,
    )
    .unwrap();
    let head: Vec<f64> = eb.z.iter().take(4).copied().collect();
    println!("utterance embedding z starts {head:?}");
}
