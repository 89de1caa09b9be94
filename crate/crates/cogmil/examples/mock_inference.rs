//! Component extraction and distortion-instance inference against the
//! deterministic mock provider, with response caching.
//!
//! Run with `cargo run --example mock_inference`.

use cogmil::gateway::{DecodingParams, LlmGateway, ProviderConfig};
use cogmil::prompt::{extract_elb, infer_instances, PromptTemplates};
use cogmil::schema::{DatasetId, LabelSchema, Utterance};

fn main() {
    let cache = tempfile::tempdir().unwrap();
    let gateway = LlmGateway::with_default_transport(cache.path());
    let templates = PromptTemplates::builtin();
    let schema = LabelSchema::koacd();
    let params = DecodingParams::default();

    let clean = ProviderConfig::mock("mock-alpha");
    let mut quirky = ProviderConfig::mock("mock-beta");
    quirky.mock_quirks = vec!["fence".into(), "alias_types".into()];

    let utterance = Utterance {
        id: "demo-001".into(),
        text: "I failed one quiz, so I will always fail everything and I \
               should just stop going to class."
            .into(),
        gold_labels: vec!["Overgeneralization".into()],
        dataset_id: DatasetId::Koacd,
        split: None,
    };

    let elb = extract_elb(&gateway, &clean, &templates, &utterance, &params).unwrap();
    println!("emotion:  {}", elb.emotion);
    println!("logic:    {}", elb.logic);
    println!("behavior: {}", elb.behavior);

    for provider in [&clean, &quirky] {
        let run = infer_instances(
            &gateway,
            provider,
            &templates,
            &schema,
            &utterance,
            Some(&elb),
            &params,
        )
        .unwrap();
        println!("\n{} found {} instance(s):", provider.id, run.instances.len());
        for inst in &run.instances {
            println!("  {:32} salience {:.3}  \"{}\"", inst.type_label, inst.salience_raw, inst.relevant_text);
        }
        for dropped in &run.dropped {
            println!("  dropped: {:?}", dropped.reason);
        }
    }

    // Same prompt again: served from the on-disk cache, no transport call.
    let prompt_count = std::fs::read_dir(cache.path()).unwrap().count();
    let again = infer_instances(&gateway, &clean, &templates, &schema, &utterance, Some(&elb), &params);
    println!(
        "\ncache entries: {prompt_count}; repeat call reused them: {}",
        again.is_ok() && std::fs::read_dir(cache.path()).unwrap().count() == prompt_count
    );
}
