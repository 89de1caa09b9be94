//! Bag construction and corpus statistics.
//!
//! A bag is the MIL unit: one utterance plus every distortion instance any
//! provider inferred for it, in a stable (provider, emission) order with no
//! cross-provider deduplication. Raw salience scores are normalized to a
//! distribution over the combined bag; a bag whose scores sum to zero falls
//! back to uniform weights so downstream attention stays well defined.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::InferenceRun;
use crate::schema::{Bag, DistortionInstance, LabelSchema, Utterance};

#[derive(Debug, Error)]
pub enum BagError {
    #[error("utterance {utterance_id}: no instances survived validation")]
    EmptyBag { utterance_id: String },
    #[error("{path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalize raw saliences into weights summing to one; uniform fallback
/// when every score is zero.
pub fn normalize_salience(raw: &[f64]) -> Vec<f64> {
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 {
        raw.iter().map(|s| s / sum).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

/// Aggregate every provider's instances for one utterance into a bag.
/// `runs` must arrive in the experiment's fixed provider order so rebuilt
/// bags are identical.
pub fn build_bag(utterance: &Utterance, runs: &[InferenceRun]) -> Result<Bag, BagError> {
    let mut instances: Vec<DistortionInstance> = Vec::new();
    for run in runs {
        debug_assert_eq!(run.utterance_ref, utterance.id);
        instances.extend(run.instances.iter().cloned());
    }
    if instances.is_empty() {
        return Err(BagError::EmptyBag {
            utterance_id: utterance.id.clone(),
        });
    }
    let raw: Vec<f64> = instances.iter().map(|i| i.salience_raw).collect();
    Ok(Bag {
        utterance_ref: utterance.id.clone(),
        gold_labels: utterance.gold_labels.clone(),
        instances,
        normalized_salience: normalize_salience(&raw),
    })
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeCount {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BagStats {
    pub num_bags: usize,
    pub total_instances: usize,
    pub min_per_bag: usize,
    pub max_per_bag: usize,
    pub avg_per_bag: f64,
    /// In schema label order.
    pub per_type_counts: Vec<TypeCount>,
}

pub fn bag_stats(bags: &[Bag], schema: &LabelSchema) -> BagStats {
    let total: usize = bags.iter().map(Bag::len).sum();
    let mut by_type: HashMap<&str, usize> = HashMap::new();
    for bag in bags {
        for inst in &bag.instances {
            *by_type.entry(inst.type_label.as_str()).or_default() += 1;
        }
    }
    let per_type_counts = schema
        .labels()
        .iter()
        .map(|label| {
            let count = by_type.get(label.as_str()).copied().unwrap_or(0);
            TypeCount {
                label: label.clone(),
                count,
                percent: if total > 0 {
                    100.0 * count as f64 / total as f64
                } else {
                    0.0
                },
            }
        })
        .collect();
    BagStats {
        num_bags: bags.len(),
        total_instances: total,
        min_per_bag: bags.iter().map(Bag::len).min().unwrap_or(0),
        max_per_bag: bags.iter().map(Bag::len).max().unwrap_or(0),
        avg_per_bag: if bags.is_empty() {
            0.0
        } else {
            total as f64 / bags.len() as f64
        },
        per_type_counts,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingByType {
    pub label: String,
    pub bags: usize,
    pub missing: usize,
    pub rate_percent: f64,
}

/// Which bags lack any instance carrying their gold label, overall and
/// grouped by first gold label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingReport {
    pub per_type: Vec<MissingByType>,
    pub overall_missing: usize,
    pub overall_bags: usize,
    pub overall_rate_percent: f64,
    pub missing_bag_ids: Vec<String>,
}

/// A bag is missing iff none of its instance types equals any gold label.
pub fn missing_rate(bags: &[Bag], schema: &LabelSchema) -> MissingReport {
    let mut per_type: Vec<MissingByType> = schema
        .labels()
        .iter()
        .map(|label| MissingByType {
            label: label.clone(),
            bags: 0,
            missing: 0,
            rate_percent: 0.0,
        })
        .collect();
    let mut missing_bag_ids = Vec::new();
    let mut overall_missing = 0;
    for bag in bags {
        let covered = bag.instances.iter().any(|inst| {
            bag.gold_labels.iter().any(|gold| gold == &inst.type_label)
        });
        let primary = &bag.gold_labels[0];
        if let Some(idx) = schema.index_of(primary) {
            per_type[idx].bags += 1;
            if !covered {
                per_type[idx].missing += 1;
            }
        }
        if !covered {
            overall_missing += 1;
            missing_bag_ids.push(bag.utterance_ref.clone());
        }
    }
    for row in &mut per_type {
        if row.bags > 0 {
            row.rate_percent = 100.0 * row.missing as f64 / row.bags as f64;
        }
    }
    MissingReport {
        per_type,
        overall_missing,
        overall_bags: bags.len(),
        overall_rate_percent: if bags.is_empty() {
            0.0
        } else {
            100.0 * overall_missing as f64 / bags.len() as f64
        },
        missing_bag_ids,
    }
}

/// Aligned-text rendering of corpus statistics (counts plus per-type shares).
pub fn render_bag_stats(stats: &BagStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("Bags                   {:>8}\n", stats.num_bags));
    out.push_str(&format!("Total instances        {:>8}\n", stats.total_instances));
    out.push_str(&format!("Min instances per bag  {:>8}\n", stats.min_per_bag));
    out.push_str(&format!("Max instances per bag  {:>8}\n", stats.max_per_bag));
    out.push_str(&format!("Avg instances per bag  {:>8.2}\n", stats.avg_per_bag));
    out.push('\n');
    out.push_str(&format!("{:<32} {:>8} {:>8}\n", "Type", "Count", "Percent"));
    for row in &stats.per_type_counts {
        out.push_str(&format!(
            "{:<32} {:>8} {:>7.1}%\n",
            row.label, row.count, row.percent
        ));
    }
    out
}

pub fn render_missing_report(report: &MissingReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Overall missing rate: {:.1}% ({} of {} bags)\n\n",
        report.overall_rate_percent, report.overall_missing, report.overall_bags
    ));
    out.push_str(&format!(
        "{:<32} {:>6} {:>8} {:>8}\n",
        "Gold label", "Bags", "Missing", "Rate"
    ));
    for row in &report.per_type {
        out.push_str(&format!(
            "{:<32} {:>6} {:>8} {:>7.1}%\n",
            row.label, row.bags, row.missing, row.rate_percent
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BagRow {
    utterance_id: String,
    gold_labels: Vec<String>,
    instances: Vec<BagRowInstance>,
}

#[derive(Serialize, Deserialize)]
struct BagRowInstance {
    #[serde(rename = "type")]
    type_label: String,
    salience: f64,
    p_hat: f64,
    relevant_text: String,
    provider: String,
}

pub fn write_bags_jsonl<W: Write>(mut w: W, bags: &[Bag]) -> Result<(), BagError> {
    for bag in bags {
        let row = BagRow {
            utterance_id: bag.utterance_ref.clone(),
            gold_labels: bag.gold_labels.clone(),
            instances: bag
                .instances
                .iter()
                .zip(&bag.normalized_salience)
                .map(|(inst, &p_hat)| BagRowInstance {
                    type_label: inst.type_label.clone(),
                    salience: inst.salience_raw,
                    p_hat,
                    relevant_text: inst.relevant_text.clone(),
                    provider: inst.provider_id.clone(),
                })
                .collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&row).unwrap())?;
    }
    Ok(())
}

pub fn read_bags_jsonl(path: &Path) -> Result<Vec<Bag>, BagError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: BagRow = serde_json::from_str(&line).map_err(|e| BagError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let mut instances = Vec::with_capacity(row.instances.len());
        let mut normalized = Vec::with_capacity(row.instances.len());
        for inst in row.instances {
            instances.push(DistortionInstance {
                type_label: inst.type_label,
                relevant_text: inst.relevant_text,
                salience_raw: inst.salience,
                provider_id: inst.provider,
            });
            normalized.push(inst.p_hat);
        }
        out.push(Bag {
            utterance_ref: row.utterance_id,
            gold_labels: row.gold_labels,
            instances,
            normalized_salience: normalized,
        });
    }
    Ok(out)
}
