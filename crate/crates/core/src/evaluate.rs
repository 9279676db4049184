//! Evaluation of predicted quality scores and the utilities built on them:
//! correlation with the truth, low-quality flagging, ground-truth-free
//! benchmarking and per-sample segmenter selection.
//!
//! Every utility reads the Dice head (`predicted`) only.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::TrainingTuple;
use crate::error::{Error, Result};
use crate::metrics::{pearson, spearman};

/// One scored segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub object_id: u32,
    pub segmenter_id: String,
    /// Predicted Dice.
    pub predicted: f64,
    /// Predicted normalized Hausdorff distance, when the model has a second head.
    pub predicted_hd: Option<f64>,
    pub true_dice: f64,
    pub true_hd: f64,
}

impl EvalRecord {
    fn order_key(&self) -> (&str, u32, &str) {
        (&self.sample_id, self.object_id, &self.segmenter_id)
    }
}

/// Pairs tuples with per-head predictions.
pub fn records_from(tuples: &[TrainingTuple], predictions: &[Vec<f64>]) -> Result<Vec<EvalRecord>> {
    if tuples.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "{} tuples but {} predictions",
            tuples.len(),
            predictions.len()
        )));
    }
    tuples
        .iter()
        .zip(predictions)
        .map(|(t, p)| {
            let predicted = *p.first().ok_or_else(|| Error::invalid("prediction without heads"))?;
            Ok(EvalRecord {
                sample_id: t.sample_id.clone(),
                object_id: t.object_id,
                segmenter_id: t.segmenter_id.clone(),
                predicted,
                predicted_hd: p.get(1).copied(),
                true_dice: t.q_dice,
                true_hd: t.q_hd,
            })
        })
        .collect()
}

/// Records whose predictions are the true scores.
pub fn oracle_records(tuples: &[TrainingTuple], heads: usize) -> Vec<EvalRecord> {
    let preds: Vec<Vec<f64>> = tuples.iter().map(|t| t.targets(heads.clamp(1, 2))).collect();
    records_from(tuples, &preds).expect("one prediction per tuple")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
    pub count: usize,
}

/// Pearson and Spearman correlation between predicted and true Dice.
pub fn correlate(records: &[EvalRecord]) -> Result<Correlation> {
    let predicted: Vec<f64> = records.iter().map(|r| r.predicted).collect();
    let truth: Vec<f64> = records.iter().map(|r| r.true_dice).collect();
    Ok(Correlation {
        pearson: pearson(&predicted, &truth)?,
        spearman: spearman(&predicted, &truth)?,
        count: records.len(),
    })
}

/// Same statistics for the Hausdorff head, when present on every record.
pub fn correlate_hd(records: &[EvalRecord]) -> Option<Result<Correlation>> {
    let predicted: Option<Vec<f64>> = records.iter().map(|r| r.predicted_hd).collect();
    let predicted = predicted?;
    let truth: Vec<f64> = records.iter().map(|r| r.true_hd).collect();
    Some((|| {
        Ok(Correlation {
            pearson: pearson(&predicted, &truth)?,
            spearman: spearman(&predicted, &truth)?,
            count: records.len(),
        })
    })())
}

/// How [`flag_low`] decides which records are poor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagPolicy {
    /// Every record with predicted Dice strictly below `t`.
    Threshold(f64),
    /// The `⌊p·N/100⌋` lowest-scored records.
    Percentile(f64),
}

impl FlagPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FlagPolicy::Threshold(t) if (0.0..=1.0).contains(&t) => Ok(()),
            FlagPolicy::Percentile(p) if p > 0.0 && p < 100.0 => Ok(()),
            FlagPolicy::Threshold(t) => Err(Error::invalid(format!("threshold {t} must lie in [0, 1]"))),
            FlagPolicy::Percentile(p) => Err(Error::invalid(format!("percentile {p} must lie in (0, 100)"))),
        }
    }
}

/// Indices of flagged records, in ascending score order (ties by id).
pub fn flag_low(records: &[EvalRecord], policy: FlagPolicy) -> Result<Vec<usize>> {
    policy.validate()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .predicted
            .total_cmp(&records[b].predicted)
            .then_with(|| records[a].order_key().cmp(&records[b].order_key()))
    });
    Ok(match policy {
        FlagPolicy::Threshold(t) => order.into_iter().filter(|&i| records[i].predicted < t).collect(),
        FlagPolicy::Percentile(p) => {
            let count = (p * records.len() as f64 / 100.0).floor() as usize;
            order.truncate(count);
            order
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub segmenter_id: String,
    pub mean_predicted: f64,
    pub mean_true_dice: f64,
    pub count: usize,
}

/// Mean predicted Dice per segmenter, best first; equal means sort by id.
pub fn benchmark(records: &[EvalRecord]) -> Vec<BenchmarkEntry> {
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = sums.entry(&r.segmenter_id).or_default();
        e.0 += r.predicted;
        e.1 += r.true_dice;
        e.2 += 1;
    }
    let mut out: Vec<BenchmarkEntry> = sums
        .into_iter()
        .map(|(id, (p, t, n))| BenchmarkEntry {
            segmenter_id: id.to_string(),
            mean_predicted: p / n as f64,
            mean_true_dice: t / n as f64,
            count: n,
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean_predicted
            .total_cmp(&a.mean_predicted)
            .then_with(|| a.segmenter_id.cmp(&b.segmenter_id))
    });
    out
}

/// The segmenter chosen for one `(sample, object)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub sample_id: String,
    pub object_id: u32,
    pub chosen: String,
    pub predicted: f64,
    pub true_dice: f64,
    /// Largest true Dice in the group.
    pub best_true_dice: f64,
}

type Groups<'a> = BTreeMap<(&'a str, u32), Vec<&'a EvalRecord>>;

fn group<'a>(records: &'a [EvalRecord], priority: &[String]) -> Result<Groups<'a>> {
    let priority: Vec<String> = if priority.is_empty() {
        records
            .iter()
            .map(|r| r.segmenter_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        priority.to_vec()
    };
    let mut groups: Groups = BTreeMap::new();
    for r in records {
        if !priority.contains(&r.segmenter_id) {
            return Err(Error::invalid(format!(
                "segmenter `{}` is not in the priority order",
                r.segmenter_id
            )));
        }
        groups.entry((&r.sample_id, r.object_id)).or_default().push(r);
    }
    for ((sample, object), members) in &mut groups {
        for id in &priority {
            let n = members.iter().filter(|r| &r.segmenter_id == id).count();
            if n == 0 {
                return Err(Error::MissingSegmenter {
                    sample_id: sample.to_string(),
                    object_id: *object,
                    segmenter_id: id.clone(),
                });
            }
            if n > 1 {
                return Err(Error::invalid(format!(
                    "group ({sample}, {object}) has {n} records for `{id}`"
                )));
            }
        }
        members.sort_by_key(|r| priority.iter().position(|p| p == &r.segmenter_id));
    }
    Ok(groups)
}

/// Per group, the record with the highest predicted Dice. Equal scores go to
/// the segmenter listed first in `priority` (sorted ids when it is empty).
pub fn select_per_sample(records: &[EvalRecord], priority: &[String]) -> Result<Vec<Selection>> {
    let groups = group(records, priority)?;
    Ok(groups
        .into_iter()
        .map(|((sample, object), members)| {
            let mut best = members[0];
            for r in &members[1..] {
                if r.predicted > best.predicted {
                    best = r;
                }
            }
            let best_true = members.iter().map(|r| r.true_dice).fold(f64::NEG_INFINITY, f64::max);
            Selection {
                sample_id: sample.to_string(),
                object_id: object,
                chosen: best.segmenter_id.clone(),
                predicted: best.predicted,
                true_dice: best.true_dice,
                best_true_dice: best_true,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub groups: usize,
    /// Percentage of groups whose chosen segmenter attains the group's best true Dice.
    pub accuracy: f64,
    pub mean_dice_selected: f64,
    /// Mean of per-group best true Dice: the selection upper bound.
    pub mean_dice_oracle: f64,
    pub per_model_mean_dice: BTreeMap<String, f64>,
    pub best_single_model: String,
    pub best_single_mean_dice: f64,
}

pub fn selection_report(records: &[EvalRecord], priority: &[String]) -> Result<SelectionReport> {
    let selections = select_per_sample(records, priority)?;
    if selections.is_empty() {
        return Err(Error::invalid("no records to select from"));
    }
    let n = selections.len() as f64;
    let correct = selections.iter().filter(|s| s.true_dice == s.best_true_dice).count();
    let mean_dice_selected = selections.iter().map(|s| s.true_dice).sum::<f64>() / n;
    let mean_dice_oracle = selections.iter().map(|s| s.best_true_dice).sum::<f64>() / n;

    let mut per_model: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = per_model.entry(r.segmenter_id.clone()).or_default();
        e.0 += r.true_dice;
        e.1 += 1;
    }
    let per_model_mean_dice: BTreeMap<String, f64> =
        per_model.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
    let (best_single_model, best_single_mean_dice) =
        per_model_mean_dice
            .iter()
            .fold((String::new(), f64::NEG_INFINITY), |acc, (k, &v)| {
                if v > acc.1 {
                    (k.clone(), v)
                } else {
                    acc
                }
            });
    Ok(SelectionReport {
        groups: selections.len(),
        accuracy: 100.0 * correct as f64 / n,
        mean_dice_selected,
        mean_dice_oracle,
        per_model_mean_dice,
        best_single_model,
        best_single_mean_dice,
    })
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    sample_id: String,
    object_id: u32,
    segmenter_id: String,
    predicted: f64,
    predicted_hd: Option<f64>,
    true_dice: f64,
    true_hd: f64,
}

const CSV_HEADER: [&str; 7] = [
    "sample_id",
    "object_id",
    "segmenter_id",
    "predicted",
    "predicted_hd",
    "true_dice",
    "true_hd",
];

/// Writes one row per record, sorted by `(sample, object, segmenter)`, after a header row.
pub fn scatter_export(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    let csv_err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in sorted {
        w.serialize(CsvRow {
            sample_id: r.sample_id.clone(),
            object_id: r.object_id,
            segmenter_id: r.segmenter_id.clone(),
            predicted: r.predicted,
            predicted_hd: r.predicted_hd,
            true_dice: r.true_dice,
            true_hd: r.true_hd,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`scatter_export`].
pub fn scatter_import(path: &Path) -> Result<Vec<EvalRecord>> {
    let csv_err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::parse(path, format!("unexpected header {:?}", header)));
    }
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(EvalRecord {
                sample_id: row.sample_id,
                object_id: row.object_id,
                segmenter_id: row.segmenter_id,
                predicted: row.predicted,
                predicted_hd: row.predicted_hd,
                true_dice: row.true_dice,
                true_hd: row.true_hd,
            })
        })
        .collect()
}
