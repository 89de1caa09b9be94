//! Domain types: label schemas, utterances, distortion instances, and bags.
//!
//! Two ten-type label taxonomies are built in (`koacd` and `therapist_qa`).
//! Model output labels are free-form strings from an LLM, so every label that
//! enters the system passes through [`canonicalize_label`], which resolves
//! case, surrounding whitespace, spelling variants, and parenthetical
//! annotations ("All-or-nothing thinking (black and white thinking)") against
//! a data-driven alias table.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel used when an ELB aspect is absent from an utterance.
pub const NOT_APPLICABLE: &str = "Not applicable";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown dataset id {0:?}")]
    UnknownDataset(String),
    #[error("schema must have exactly {expected} labels, got {got}")]
    WrongLabelCount { expected: usize, got: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("utterance {id}: {msg}")]
    InvalidUtterance { id: String, msg: String },
    #[error("{path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which of the two supported corpora a schema or utterance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    Koacd,
    TherapistQa,
}

impl DatasetId {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetId::Koacd => "koacd",
            DatasetId::TherapistQa => "therapist_qa",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SchemaError> {
        match s {
            "koacd" => Ok(DatasetId::Koacd),
            "therapist_qa" => Ok(DatasetId::TherapistQa),
            other => Err(SchemaError::UnknownDataset(other.to_string())),
        }
    }
}

/// Train / validation / test split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

pub const NUM_LABELS: usize = 10;

#[derive(Debug, Deserialize)]
struct SchemaFile {
    schemas: Vec<SchemaEntry>,
}

#[derive(Debug, Deserialize)]
struct SchemaEntry {
    dataset_id: DatasetId,
    labels: Vec<String>,
    #[serde(default)]
    aliases: HashMap<String, String>,
}

const BUILTIN_SCHEMAS: &str = include_str!("../assets/label_schemas.json");

/// Ordered ten-label taxonomy plus an alias table for canonicalization.
///
/// Label order is fixed and doubles as the class index used for one-hot
/// encoding, so two schemas with the same labels in different orders are
/// different schemas.
#[derive(Debug, Clone)]
pub struct LabelSchema {
    dataset_id: DatasetId,
    labels: Vec<String>,
    /// lowercased variant -> canonical name; total over canonical names.
    aliases: HashMap<String, String>,
}

impl LabelSchema {
    pub fn new(
        dataset_id: DatasetId,
        labels: Vec<String>,
        extra_aliases: HashMap<String, String>,
    ) -> Result<Self, SchemaError> {
        if labels.len() != NUM_LABELS {
            return Err(SchemaError::WrongLabelCount {
                expected: NUM_LABELS,
                got: labels.len(),
            });
        }
        let mut aliases = HashMap::new();
        for label in &labels {
            aliases.insert(label.to_lowercase(), label.clone());
        }
        for (variant, canonical) in extra_aliases {
            if !labels.iter().any(|l| l == &canonical) {
                return Err(SchemaError::UnknownLabel(canonical));
            }
            aliases.insert(variant.to_lowercase(), canonical);
        }
        Ok(Self {
            dataset_id,
            labels,
            aliases,
        })
    }

    pub fn koacd() -> Self {
        Self::builtin(DatasetId::Koacd)
    }

    pub fn therapist_qa() -> Self {
        Self::builtin(DatasetId::TherapistQa)
    }

    pub fn for_dataset(id: DatasetId) -> Self {
        Self::builtin(id)
    }

    fn builtin(id: DatasetId) -> Self {
        let file: SchemaFile =
            serde_json::from_str(BUILTIN_SCHEMAS).expect("embedded schema file is valid");
        let entry = file
            .schemas
            .into_iter()
            .find(|s| s.dataset_id == id)
            .expect("embedded schema file covers both datasets");
        Self::new(entry.dataset_id, entry.labels, entry.aliases)
            .expect("embedded schema file is well formed")
    }

    /// Load a schema from a JSON file with the same shape as the embedded
    /// one, so new alias spellings can be added without a rebuild.
    pub fn from_file(path: &Path, id: DatasetId) -> Result<Self, SchemaError> {
        let text = fs::read_to_string(path)?;
        let file: SchemaFile = serde_json::from_str(&text).map_err(|e| SchemaError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        let entry = file
            .schemas
            .into_iter()
            .find(|s| s.dataset_id == id)
            .ok_or_else(|| SchemaError::UnknownDataset(id.as_str().to_string()))?;
        Self::new(entry.dataset_id, entry.labels, entry.aliases)
    }

    pub fn dataset_id(&self) -> DatasetId {
        self.dataset_id
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Class index of a canonical label.
    pub fn index_of(&self, canonical: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == canonical)
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.index_of(canonical).is_some()
    }
}

/// Resolve a raw LLM-emitted type string to a canonical label.
///
/// Lookup is case-insensitive and whitespace-trimmed; trailing parenthetical
/// annotations are stripped and the lookup retried. Unresolvable strings are
/// rejected so the caller can drop and log the offending instance.
pub fn canonicalize_label(raw: &str, schema: &LabelSchema) -> Result<String, SchemaError> {
    let trimmed = raw.trim();
    if let Some(hit) = schema.aliases.get(&trimmed.to_lowercase()) {
        return Ok(hit.clone());
    }
    // "All-or-nothing thinking (black and white thinking)" -> strip "(...)"
    let mut stripped = trimmed;
    while stripped.ends_with(')') {
        match stripped.rfind('(') {
            Some(open) => stripped = stripped[..open].trim_end(),
            None => break,
        }
        if let Some(hit) = schema.aliases.get(&stripped.to_lowercase()) {
            return Ok(hit.clone());
        }
    }
    Err(SchemaError::UnknownLabel(raw.to_string()))
}

/// One counseling text with its gold distortion label(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub gold_labels: Vec<String>,
    pub dataset_id: DatasetId,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<Split>,
}

impl Utterance {
    /// Gold label used as the training/eval target (the first listed one).
    pub fn primary_label(&self) -> &str {
        &self.gold_labels[0]
    }
}

/// Emotion / Logic / Behavior summary of an utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbComponents {
    pub emotion: String,
    pub logic: String,
    pub behavior: String,
}

impl ElbComponents {
    pub fn not_applicable() -> Self {
        Self {
            emotion: NOT_APPLICABLE.to_string(),
            logic: NOT_APPLICABLE.to_string(),
            behavior: NOT_APPLICABLE.to_string(),
        }
    }
}

/// One LLM-inferred distortion occurrence: the MIL instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionInstance {
    #[serde(rename = "type")]
    pub type_label: String,
    pub relevant_text: String,
    #[serde(rename = "salience")]
    pub salience_raw: f64,
    #[serde(rename = "provider")]
    pub provider_id: String,
}

/// An utterance's aggregated instances with normalized salience weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub utterance_ref: String,
    pub gold_labels: Vec<String>,
    pub instances: Vec<DistortionInstance>,
    pub normalized_salience: Vec<f64>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

// ---------------------------------------------------------------------------
// JSONL ingestion / emission
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct UtteranceRow {
    id: String,
    text: String,
    gold_labels: Vec<String>,
    dataset: String,
}

/// Read utterances from JSONL ({"id","text","gold_labels":[...],"dataset"}),
/// canonicalizing gold labels against `schema` and enforcing per-dataset
/// label-count rules (one label for koacd, one or two for therapist_qa).
pub fn load_utterances(path: &Path, schema: &LabelSchema) -> Result<Vec<Utterance>, SchemaError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: UtteranceRow =
            serde_json::from_str(&line).map_err(|e| SchemaError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        out.push(utterance_from_row(row, schema)?);
    }
    if out.is_empty() {
        return Err(SchemaError::EmptyDataset);
    }
    Ok(out)
}

fn utterance_from_row(row: UtteranceRow, schema: &LabelSchema) -> Result<Utterance, SchemaError> {
    let dataset_id = DatasetId::parse(&row.dataset)?;
    if dataset_id != schema.dataset_id() {
        return Err(SchemaError::InvalidUtterance {
            id: row.id,
            msg: format!(
                "dataset {} does not match schema {}",
                row.dataset,
                schema.dataset_id().as_str()
            ),
        });
    }
    if row.text.trim().is_empty() {
        return Err(SchemaError::InvalidUtterance {
            id: row.id,
            msg: "empty text".to_string(),
        });
    }
    let max_labels = match dataset_id {
        DatasetId::Koacd => 1,
        DatasetId::TherapistQa => 2,
    };
    if row.gold_labels.is_empty() || row.gold_labels.len() > max_labels {
        return Err(SchemaError::InvalidUtterance {
            id: row.id,
            msg: format!(
                "expected 1..={} gold labels, got {}",
                max_labels,
                row.gold_labels.len()
            ),
        });
    }
    let gold_labels = row
        .gold_labels
        .iter()
        .map(|l| canonicalize_label(l, schema))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Utterance {
        id: row.id,
        text: row.text,
        gold_labels,
        dataset_id,
        split: None,
    })
}

/// Write split assignments as JSONL {"id","split"} in utterance order.
pub fn write_split_jsonl<W: Write>(
    mut w: W,
    utterances: &[Utterance],
    splits: &[Split],
) -> Result<(), SchemaError> {
    for (u, s) in utterances.iter().zip(splits) {
        let row = serde_json::json!({ "id": u.id, "split": s });
        writeln!(w, "{row}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset splitting
// ---------------------------------------------------------------------------

/// Deterministic stratified split.
///
/// Global split sizes are fixed first (floor of `N * ratio` for train and
/// val, remainder to test), then apportioned across per-label groups by
/// largest remainder; a final repair pass moves single assignments between
/// groups until the global sizes are met exactly. Stratification is on the
/// first gold label. Returns one [`Split`] per utterance, aligned with the
/// input order.
pub fn split_dataset(
    utterances: &[Utterance],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<Split>, SchemaError> {
    if utterances.is_empty() {
        return Err(SchemaError::EmptyDataset);
    }
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SchemaError::BadRatios(r));
    }

    let n = utterances.len();
    // floor(n*r + eps) guards against 3.0 landing as 2.999999... in floats.
    let quota = |count: usize, ratio: f64| (count as f64 * ratio + 1e-9).floor() as usize;
    let targets = [quota(n, r[0]), quota(n, r[1]), 0];
    let targets = [targets[0], targets[1], n - targets[0] - targets[1]];

    // Group utterance indices by first gold label, in first-seen label order.
    let mut group_keys: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, u) in utterances.iter().enumerate() {
        let key = u.primary_label();
        groups.entry(key).or_insert_with(|| {
            group_keys.push(key);
            Vec::new()
        });
        groups.get_mut(key).unwrap().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<Vec<usize>> = Vec::with_capacity(group_keys.len());
    for key in &group_keys {
        let mut members = groups.remove(key).unwrap();
        members.shuffle(&mut rng);
        shuffled.push(members);
    }

    // Largest-remainder apportionment within each group.
    let mut counts: Vec<[usize; 3]> = Vec::with_capacity(shuffled.len());
    for members in &shuffled {
        let m = members.len();
        let exact: Vec<f64> = r.iter().map(|&ratio| m as f64 * ratio).collect();
        let mut alloc = [0usize; 3];
        for s in 0..3 {
            alloc[s] = (exact[s] + 1e-9).floor() as usize;
        }
        let mut leftover = m - alloc.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &s in &order {
            if leftover == 0 {
                break;
            }
            alloc[s] += 1;
            leftover -= 1;
        }
        counts.push(alloc);
    }

    // Repair pass: per-group rounding can leave the global sums off by a
    // few; move one assignment at a time until they match the targets.
    let mut sums = [0usize; 3];
    for alloc in &counts {
        for s in 0..3 {
            sums[s] += alloc[s];
        }
    }
    loop {
        let over = (0..3).find(|&s| sums[s] > targets[s]);
        let under = (0..3).find(|&s| sums[s] < targets[s]);
        let (Some(src), Some(dst)) = (over, under) else {
            break;
        };
        let donor = (0..counts.len())
            .max_by_key(|&g| counts[g][src])
            .expect("groups are non-empty");
        debug_assert!(counts[donor][src] > 0);
        counts[donor][src] -= 1;
        counts[donor][dst] += 1;
        sums[src] -= 1;
        sums[dst] += 1;
    }

    let mut assignment = vec![Split::Train; n];
    for (members, alloc) in shuffled.iter().zip(&counts) {
        for (pos, &idx) in members.iter().enumerate() {
            assignment[idx] = if pos < alloc[0] {
                Split::Train
            } else if pos < alloc[0] + alloc[1] {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(assignment)
}

/// Count members per split.
pub fn split_counts(splits: &[Split]) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for s in splits {
        match s {
            Split::Train => c.0 += 1,
            Split::Val => c.1 += 1,
            Split::Test => c.2 += 1,
        }
    }
    c
}
