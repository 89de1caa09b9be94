//! Recovering structured instances from the JSON shapes models actually
//! return: fences, prose wrappers, label drift, broken objects.
//!
//! Run with `cargo run --example parse_llm_output`.

use cogmil::prompt::parse_instances;
use cogmil::schema::LabelSchema;

fn main() {
    let schema = LabelSchema::koacd();

    let responses = [
        (
            "clean array",
            r#"[{"type": "Should Statements", "salience": 0.62, "relevant_text": "I should have known better."}]"#,
        ),
        (
            "fenced with prose",
            "Sure! Here is the analysis you asked for:\n```json\n[{\"type\": \"Mental Filtering\", \"salience_score\": 0.4, \"relevant_text\": \"All I can see is the one mistake.\"}]\n```\nLet me know if you need more.",
        ),
        (
            "single bare object",
            r#"{"type": "Labeling", "salience": 0.9, "relevant_text": "I'm such an idiot."}"#,
        ),
        (
            "mixed quality",
            r#"[
                {"type": "Personalization", "salience": 0.55, "relevant_text": "It rained because of me."},
                {"type": "Catastrophizing", "salience": 0.8, "relevant_text": "not in this taxonomy"},
                {"type": "Overgeneralization", "salience": "high", "relevant_text": "non-numeric salience"},
                "not even an object"
            ]"#,
        ),
        ("no JSON at all", "The speaker seems quite distressed about their exam results."),
    ];

    for (name, response) in responses {
        println!("== {name}");
        match parse_instances(response, &schema, "demo-provider") {
            None => println!("   unparseable; caller re-prompts once, then records a miss"),
            Some(parsed) => {
                for inst in &parsed.instances {
                    println!(
                        "   kept    {:28} salience {:.2}  \"{}\"",
                        inst.type_label, inst.salience_raw, inst.relevant_text
                    );
                }
                for d in &parsed.dropped {
                    println!("   dropped {:?}: {}", d.reason, d.raw);
                }
            }
        }
    }
}
