//! Prompt rendering and response parsing.
//!
//! Three fixed templates drive all LLM traffic: one for emotion/logic/behavior
//! extraction and one distortion-inference template per dataset. Rendering is
//! pure placeholder substitution. Parsing is deliberately tolerant (models
//! wrap JSON in fences and prose, misspell keys, emit label variants) but
//! every instance that survives has a canonical type, a finite non-negative
//! salience, and non-empty relevant text; everything else lands in a drop
//! list with a machine-readable reason.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    extract_json_payload, DecodingParams, GatewayError, LlmGateway, ProviderConfig,
};
use crate::schema::{
    canonicalize_label, DatasetId, DistortionInstance, ElbComponents, LabelSchema, Utterance,
    NOT_APPLICABLE,
};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("utterance {utterance_id}, provider {provider}: component response unparseable after retry")]
    MalformedElbJson {
        utterance_id: String,
        provider: String,
    },
    #[error("utterance {utterance_id}, provider {provider}: instance response unparseable after retry")]
    MalformedInstanceJson {
        utterance_id: String,
        provider: String,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateId {
    Elb,
    InferKoacd,
    InferTherapistQa,
}

/// The three prompt bodies. Embedded copies are the default; a directory of
/// same-named files can override them for prompt experiments.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    elb: String,
    infer_koacd: String,
    infer_therapist_qa: String,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            elb: include_str!("../assets/prompts/elb.txt").to_string(),
            infer_koacd: include_str!("../assets/prompts/infer_koacd.txt").to_string(),
            infer_therapist_qa: include_str!("../assets/prompts/infer_therapist_qa.txt")
                .to_string(),
        }
    }

    pub fn from_dir(dir: &std::path::Path) -> std::io::Result<Self> {
        Ok(Self {
            elb: std::fs::read_to_string(dir.join("elb.txt"))?,
            infer_koacd: std::fs::read_to_string(dir.join("infer_koacd.txt"))?,
            infer_therapist_qa: std::fs::read_to_string(dir.join("infer_therapist_qa.txt"))?,
        })
    }

    pub fn body(&self, id: TemplateId) -> &str {
        match id {
            TemplateId::Elb => &self.elb,
            TemplateId::InferKoacd => &self.infer_koacd,
            TemplateId::InferTherapistQa => &self.infer_therapist_qa,
        }
    }

    pub fn infer_for(&self, dataset: DatasetId) -> &str {
        match dataset {
            DatasetId::Koacd => &self.infer_koacd,
            DatasetId::TherapistQa => &self.infer_therapist_qa,
        }
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

pub fn render_elb_prompt(template: &str, sentence: &str) -> String {
    template.replace("{sentence}", sentence)
}

/// Fill the inference template. With components, the three info placeholders
/// become "Emotion: …" / "Logic: …" / "Behavior: …" lines; without, they
/// render empty so the prompt carries no component content at all.
pub fn render_infer_prompt(template: &str, sentence: &str, elb: Option<&ElbComponents>) -> String {
    let (e, l, b) = match elb {
        Some(c) => (
            format!("Emotion: {}", c.emotion),
            format!("Logic: {}", c.logic),
            format!("Behavior: {}", c.behavior),
        ),
        None => (String::new(), String::new(), String::new()),
    };
    template
        .replace("{sentence}", sentence)
        .replace("{emotion_info}", &e)
        .replace("{logic_info}", &l)
        .replace("{behavior_info}", &b)
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

/// Why a candidate object was rejected during instance validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NotAnObject,
    MissingType,
    UnknownLabel,
    MissingSalience,
    NonNumericSalience,
    MissingRelevantText,
    EmptyRelevantText,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedObject {
    pub raw: String,
    pub reason: DropReason,
}

/// All instances one provider produced for one utterance, plus the rejects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceRun {
    pub utterance_ref: String,
    pub provider_id: String,
    pub with_elb: bool,
    pub instances: Vec<DistortionInstance>,
    pub dropped: Vec<DroppedObject>,
}

pub struct ParsedInstances {
    pub instances: Vec<DistortionInstance>,
    pub dropped: Vec<DroppedObject>,
}

/// Parse a component-extraction response. Returns `None` when no JSON object
/// can be recovered; absent or empty keys fall back to the sentinel.
pub fn parse_elb(response: &str) -> Option<ElbComponents> {
    let payload = extract_json_payload(response)?;
    let value: serde_json::Value = serde_json::from_str(payload).ok()?;
    let obj = value.as_object()?;
    let field = |name: &str| -> String {
        match obj.get(name).and_then(|v| v.as_str()) {
            Some(s) if !s.trim().is_empty() => s.trim().to_string(),
            _ => NOT_APPLICABLE.to_string(),
        }
    };
    Some(ElbComponents {
        emotion: field("emotion"),
        logic: field("logic"),
        behavior: field("behavior"),
    })
}

/// Parse a distortion-inference response into validated instances.
///
/// Returns `None` when the response contains no usable JSON array at all
/// (the caller then re-prompts); otherwise every array element is either a
/// canonical [`DistortionInstance`] or a [`DroppedObject`].
pub fn parse_instances(
    response: &str,
    schema: &LabelSchema,
    provider_id: &str,
) -> Option<ParsedInstances> {
    let payload = extract_json_payload(response)?;
    let value: serde_json::Value = serde_json::from_str(payload).ok()?;
    let elements: Vec<serde_json::Value> = match value {
        serde_json::Value::Array(items) => items,
        // Some models return a single bare object; accept it when it looks
        // like an instance, otherwise treat the response as malformed.
        serde_json::Value::Object(ref obj) if lookup(obj, &["type"]).is_some() => {
            vec![value]
        }
        _ => return None,
    };

    let mut instances = Vec::new();
    let mut dropped = Vec::new();
    for element in elements {
        match validate_object(&element, schema, provider_id) {
            Ok(inst) => instances.push(inst),
            Err(reason) => dropped.push(DroppedObject {
                raw: element.to_string(),
                reason,
            }),
        }
    }
    Some(ParsedInstances { instances, dropped })
}

/// Key lookup tolerant of stray whitespace in key names (the documented
/// response format itself contains a `" salience score"` key variant).
fn lookup<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    names: &[&str],
) -> Option<&'a serde_json::Value> {
    for (k, v) in obj {
        if names.iter().any(|n| k.trim() == *n) {
            return Some(v);
        }
    }
    None
}

fn validate_object(
    value: &serde_json::Value,
    schema: &LabelSchema,
    provider_id: &str,
) -> Result<DistortionInstance, DropReason> {
    let obj = value.as_object().ok_or(DropReason::NotAnObject)?;

    let raw_type = lookup(obj, &["type"])
        .and_then(|v| v.as_str())
        .ok_or(DropReason::MissingType)?;
    let type_label =
        canonicalize_label(raw_type, schema).map_err(|_| DropReason::UnknownLabel)?;

    let salience_value =
        lookup(obj, &["salience score", "salience_score", "salience"])
            .ok_or(DropReason::MissingSalience)?;
    let salience = salience_value
        .as_f64()
        .filter(|s| s.is_finite())
        .ok_or(DropReason::NonNumericSalience)?;
    let salience_raw = if salience < 0.0 {
        log::warn!(
            "provider {provider_id}: negative salience {salience} for {type_label:?} clamped to 0"
        );
        0.0
    } else {
        salience
    };

    let relevant_text = lookup(obj, &["relevant_text", "relevant text"])
        .and_then(|v| v.as_str())
        .ok_or(DropReason::MissingRelevantText)?;
    if relevant_text.trim().is_empty() {
        return Err(DropReason::EmptyRelevantText);
    }

    Ok(DistortionInstance {
        type_label,
        relevant_text: relevant_text.to_string(),
        salience_raw,
        provider_id: provider_id.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Gateway-backed operations
// ---------------------------------------------------------------------------

/// Extract emotion/logic/behavior components for one utterance. A response
/// that yields no JSON object is re-asked once, bypassing the cache (reading
/// it back would replay the identical bad response).
pub fn extract_elb(
    gateway: &LlmGateway,
    provider: &ProviderConfig,
    templates: &PromptTemplates,
    utterance: &Utterance,
    params: &DecodingParams,
) -> Result<ElbComponents, PromptError> {
    let prompt = render_elb_prompt(templates.body(TemplateId::Elb), &utterance.text);
    let record = gateway.complete(provider, &prompt, params)?;
    if let Some(elb) = parse_elb(&record.response_text) {
        return Ok(elb);
    }
    log::warn!(
        "utterance {}, provider {}: component response unparseable, re-asking",
        utterance.id,
        provider.id
    );
    let record = gateway.complete_uncached(provider, &prompt, params)?;
    parse_elb(&record.response_text).ok_or_else(|| PromptError::MalformedElbJson {
        utterance_id: utterance.id.clone(),
        provider: provider.id.clone(),
    })
}

/// Infer distortion instances for one utterance from one provider, with the
/// same parse-retry policy as [`extract_elb`].
pub fn infer_instances(
    gateway: &LlmGateway,
    provider: &ProviderConfig,
    templates: &PromptTemplates,
    schema: &LabelSchema,
    utterance: &Utterance,
    elb: Option<&ElbComponents>,
    params: &DecodingParams,
) -> Result<InferenceRun, PromptError> {
    let prompt = render_infer_prompt(
        templates.infer_for(schema.dataset_id()),
        &utterance.text,
        elb,
    );
    let record = gateway.complete(provider, &prompt, params)?;
    let parsed = match parse_instances(&record.response_text, schema, &provider.id) {
        Some(parsed) => parsed,
        None => {
            log::warn!(
                "utterance {}, provider {}: instance response unparseable, re-asking",
                utterance.id,
                provider.id
            );
            let record = gateway.complete_uncached(provider, &prompt, params)?;
            parse_instances(&record.response_text, schema, &provider.id).ok_or_else(|| {
                PromptError::MalformedInstanceJson {
                    utterance_id: utterance.id.clone(),
                    provider: provider.id.clone(),
                }
            })?
        }
    };
    Ok(InferenceRun {
        utterance_ref: utterance.id.clone(),
        provider_id: provider.id.clone(),
        with_elb: elb.is_some(),
        instances: parsed.instances,
        dropped: parsed.dropped,
    })
}
