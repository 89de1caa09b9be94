//! Deterministic offline stand-in for a hosted LLM.
//!
//! The mock recognizes the two prompt shapes used by the pipeline (component
//! extraction and distortion inference), pulls the quoted sentence plus any
//! Emotion/Logic/Behavior lines out of the prompt, and answers from a fixed
//! keyword-rule table. Output depends only on (provider id, prompt), so runs
//! are reproducible and cache behavior is observable. Quirks configured on
//! the provider exercise the parser's tolerance and drop paths.

use sha2::{Digest, Sha256};

use super::transport::{ChatTransport, TransportError};
use super::{DecodingParams, ProviderConfig};

/// Sentence marker that makes the mock answer with non-JSON prose, for
/// exercising parse-failure handling end to end.
pub const MALFORMED_MARKER: &str = "###malformed###";

pub struct MockTransport;

impl ChatTransport for MockTransport {
    fn send(
        &self,
        provider: &ProviderConfig,
        prompt: &str,
        _params: &DecodingParams,
    ) -> Result<String, TransportError> {
        let sentence = extract_sentence(prompt).ok_or_else(|| {
            TransportError::Fatal("mock transport: prompt has no quoted sentence".to_string())
        })?;
        if sentence.contains(MALFORMED_MARKER) {
            return Ok("I could not analyze this sentence.".to_string());
        }
        if prompt.contains("**Emotion**") {
            return Ok(wrap(provider, elb_response(&sentence)));
        }
        // The two inference templates differ in how they spell the first
        // distortion type, which doubles as a dataset marker.
        if prompt.contains("All-or-Nothing Thinking") {
            return Ok(wrap(provider, infer_response(provider, prompt, &sentence, &KOACD_RULES, KOACD_FALLBACK)));
        }
        if prompt.contains("All-or-nothing thinking") {
            return Ok(wrap(provider, infer_response(provider, prompt, &sentence, &TQA_RULES, TQA_FALLBACK)));
        }
        Err(TransportError::Fatal(
            "mock transport: unrecognized prompt shape".to_string(),
        ))
    }
}

/// The prompts embed the utterance as `The user said the following
/// sentence:\n"..."` followed by a blank line.
fn extract_sentence(prompt: &str) -> Option<String> {
    let start = prompt.find(":\n\"")? + 3;
    let rest = &prompt[start..];
    let end = rest.find("\"\n\n")?;
    Some(rest[..end].to_string())
}

fn mock_hash(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn salience(provider: &str, ty: &str, sentence: &str) -> f64 {
    let h = mock_hash(&["salience", provider, ty, sentence]);
    0.05 + (h % 900) as f64 / 1000.0
}

/// Case-insensitive keyword search returning a short span of the original
/// sentence starting at the match, or a sentence prefix when absent (the
/// keyword may have come from a component line rather than the sentence).
fn excerpt(sentence: &str, keyword: &str) -> String {
    let hay = sentence.to_ascii_lowercase();
    let start = hay.find(&keyword.to_ascii_lowercase()).unwrap_or(0);
    let span = &sentence[start..];
    let mut end = span.len().min(40);
    while !span.is_char_boundary(end) {
        end -= 1;
    }
    span[..end].trim().to_string()
}

// ---------------------------------------------------------------------------
// Component extraction
// ---------------------------------------------------------------------------

const NOT_APPLICABLE: &str = "Not applicable";

fn elb_response(sentence: &str) -> String {
    let s = sentence.to_ascii_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| s.contains(w));

    let emotion = if has(&["worthless", "loser", "failure"]) {
        "The speaker expresses a feeling of worthlessness."
    } else if has(&["sad", "cry", "miserable", "upset", "lonely"]) {
        "The speaker feels sad and discouraged."
    } else if has(&["angry", "hate", "furious"]) {
        "The speaker feels angry and resentful."
    } else if has(&["anxious", "scared", "worried", "afraid", "nervous"]) {
        "The speaker feels anxious about what is coming."
    } else {
        NOT_APPLICABLE
    };

    let logic = if has(&["always", "never", "everyone", "nobody"]) {
        "The speaker generalizes from one event to every situation."
    } else if has(&["my fault", "because of me", "blame myself"]) {
        "The speaker concludes the outcome happened because of them alone."
    } else if has(&["should", "ought", "have to", "must "]) {
        "The speaker reasons from rigid rules about what they must do."
    } else if has(&["going to fail", "will end", "won't work", "will never"]) {
        "The speaker predicts a negative outcome without evidence."
    } else {
        NOT_APPLICABLE
    };

    let behavior = if has(&["quit", "give up", "gave up", "stay home", "avoid", "stopped going"]) {
        "The speaker intends to withdraw and avoid the situation."
    } else if has(&["yelled", "shouted", "slammed", "threw"]) {
        "The speaker acted out in anger."
    } else {
        NOT_APPLICABLE
    };

    serde_json::to_string_pretty(&serde_json::json!({
        "emotion": emotion,
        "logic": logic,
        "behavior": behavior,
    }))
    .unwrap()
}

// ---------------------------------------------------------------------------
// Distortion inference
// ---------------------------------------------------------------------------

struct Rule {
    keywords: &'static [&'static str],
    label: &'static str,
}

// Keywords are matched against the sentence plus any component lines in the
// prompt, so component-bearing prompts can surface distortions the bare
// sentence does not (the phrases below past the first ten rows only ever
// appear in mock component summaries).
const KOACD_RULES: [Rule; 13] = [
    Rule { keywords: &["either", "completely", "totally"], label: "All-or-Nothing Thinking" },
    Rule { keywords: &["always", "never", "everyone", "nobody"], label: "Overgeneralization" },
    Rule { keywords: &["nothing good", "only the bad", "all i can see"], label: "Mental Filter" },
    Rule { keywords: &["doesn't count", "didn't count", "just luck", "anyone could"], label: "Discounting the Positive" },
    Rule { keywords: &["must think", "probably thinks", "going to fail", "will laugh"], label: "Jumping to Conclusions" },
    Rule { keywords: &["disaster", "ruined", "worst", "unbearable"], label: "Magnification and Minimization" },
    Rule { keywords: &["feel like", "feels like", "i just feel"], label: "Emotional Reasoning" },
    Rule { keywords: &["should", "ought", "have to"], label: "Should Statements" },
    Rule { keywords: &["loser", "failure", "idiot", "worthless", "stupid"], label: "Labeling" },
    Rule { keywords: &["my fault", "because of me", "blame myself"], label: "Personalization" },
    Rule { keywords: &["feeling of worthlessness"], label: "Emotional Reasoning" },
    Rule { keywords: &["anxious about what is coming"], label: "Jumping to Conclusions" },
    Rule { keywords: &["rigid rules"], label: "Should Statements" },
];
const KOACD_FALLBACK: &str = "Jumping to Conclusions";

const TQA_RULES: [Rule; 13] = [
    Rule { keywords: &["either", "completely", "totally"], label: "All-or-nothing thinking" },
    Rule { keywords: &["always", "never", "everyone", "nobody"], label: "Overgeneralization" },
    Rule { keywords: &["nothing good", "only the bad", "all i can see"], label: "Mental filter" },
    Rule { keywords: &["feel like", "feels like", "i just feel"], label: "Emotional reasoning" },
    Rule { keywords: &["loser", "failure", "idiot", "worthless", "stupid"], label: "Labeling" },
    Rule { keywords: &["disaster", "ruined", "worst", "unbearable"], label: "Magnification" },
    Rule { keywords: &["should", "ought", "have to"], label: "Should statements" },
    Rule { keywords: &["going to fail", "will end", "won't work", "will never"], label: "Fortune-telling" },
    Rule { keywords: &["must think", "probably thinks", "they think"], label: "Mind Reading" },
    Rule { keywords: &["my fault", "because of me", "blame myself"], label: "Personalization" },
    Rule { keywords: &["feeling of worthlessness"], label: "Emotional reasoning" },
    Rule { keywords: &["anxious about what is coming"], label: "Fortune-telling" },
    Rule { keywords: &["rigid rules"], label: "Should statements" },
];
const TQA_FALLBACK: &str = "Mind Reading";

/// Spelling variants emitted under the `alias_types` quirk, to exercise
/// canonicalization on the consumer side.
fn alias_form(label: &str) -> &str {
    match label {
        "Mental Filter" => "Mental Filtering",
        "Jumping to Conclusions" => "jumping to conclusions",
        "All-or-nothing thinking" => "All-or-nothing thinking (black and white thinking)",
        "Fortune-telling" => "Fortune telling",
        other => other,
    }
}

fn infer_response(
    provider: &ProviderConfig,
    prompt: &str,
    sentence: &str,
    rules: &[Rule],
    fallback: &str,
) -> String {
    // Sentence plus any component lines is the searchable surface.
    let mut surface = sentence.to_string();
    for line in prompt.lines() {
        if line.starts_with("Emotion: ")
            || line.starts_with("Logic: ")
            || line.starts_with("Behavior: ")
        {
            surface.push('\n');
            surface.push_str(line);
        }
    }
    let surface_lc = surface.to_ascii_lowercase();

    // Each provider is blind to one rule, so multi-provider corpora disagree.
    let skip = (mock_hash(&["skip", &provider.id]) % rules.len() as u64) as usize;
    let alias_quirk = provider.mock_quirks.iter().any(|q| q == "alias_types");

    let mut seen = Vec::new();
    let mut objects = Vec::new();
    for (i, rule) in rules.iter().enumerate() {
        if i == skip || seen.contains(&rule.label) {
            continue;
        }
        let Some(hit) = rule
            .keywords
            .iter()
            .find(|k| surface_lc.contains(&k.to_ascii_lowercase()))
        else {
            continue;
        };
        seen.push(rule.label);
        let emitted = if alias_quirk { alias_form(rule.label) } else { rule.label };
        objects.push(serde_json::json!({
            "type": emitted,
            "salience score": salience(&provider.id, rule.label, sentence),
            "relevant_text": excerpt(sentence, hit),
        }));
    }
    if objects.is_empty() {
        objects.push(serde_json::json!({
            "type": fallback,
            "salience score": 0.05 + (mock_hash(&["fallback", &provider.id, sentence]) % 100) as f64 / 1000.0,
            "relevant_text": excerpt(sentence, ""),
        }));
    }
    if provider.mock_quirks.iter().any(|q| q == "invalid_salience") {
        objects.push(serde_json::json!({
            "type": rules[6].label,
            "salience score": "high",
            "relevant_text": excerpt(sentence, ""),
        }));
    }
    serde_json::to_string_pretty(&serde_json::Value::Array(objects)).unwrap()
}

fn wrap(provider: &ProviderConfig, payload: String) -> String {
    if provider.mock_quirks.iter().any(|q| q == "fence") {
        format!("```json\n{payload}\n```")
    } else if provider.mock_quirks.iter().any(|q| q == "prose") {
        format!("Here is what I found:\n{payload}\nLet me know if you need more detail.")
    } else {
        payload
    }
}
