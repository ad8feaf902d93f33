//! Evaluation metrics against ground-truth labels, and the continuous-gaze
//! baseline. "Engaged" is the positive class throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FaceFrameRecord, ParticipantId};
use crate::scoring::SegmentScorecard;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Engaged,
    NonEngaged,
}

impl Label {
    pub fn from_engaged(engaged: bool) -> Self {
        if engaged {
            Label::Engaged
        } else {
            Label::NonEngaged
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthLabel {
    pub segment: u64,
    pub student: ParticipantId,
    pub label: Label,
}

/// A system prediction; `label: None` is N/A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub segment: u64,
    pub student: ParticipantId,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Labeled pairs whose prediction was N/A.
    pub not_available: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Engaged, Label::Engaged) => self.tp += 1,
            (Label::Engaged, Label::NonEngaged) => self.fp += 1,
            (Label::NonEngaged, Label::NonEngaged) => self.tn += 1,
            (Label::NonEngaged, Label::Engaged) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

type Key = (u64, ParticipantId);

fn label_map(labels: &[GroundTruthLabel]) -> Result<BTreeMap<Key, Label>> {
    let mut map = BTreeMap::new();
    for l in labels {
        if map.insert((l.segment, l.student.clone()), l.label).is_some() {
            return Err(Error::Eval(format!(
                "duplicate label for segment {} student {}",
                l.segment, l.student
            )));
        }
    }
    Ok(map)
}

/// Tallies predictions against labels. Every key must appear on both sides.
pub fn confusion(predictions: &[Prediction], labels: &[GroundTruthLabel]) -> Result<ConfusionCounts> {
    let per = confusion_by_participant(predictions, labels)?;
    let mut c = ConfusionCounts::default();
    for p in per.values() {
        c.tp += p.tp;
        c.fp += p.fp;
        c.tn += p.tn;
        c.fn_ += p.fn_;
        c.not_available += p.not_available;
    }
    Ok(c)
}

pub fn confusion_by_participant(
    predictions: &[Prediction],
    labels: &[GroundTruthLabel],
) -> Result<BTreeMap<ParticipantId, ConfusionCounts>> {
    let truth = label_map(labels)?;
    let mut seen = BTreeSet::new();
    let mut out: BTreeMap<ParticipantId, ConfusionCounts> = BTreeMap::new();
    for p in predictions {
        let key = (p.segment, p.student.clone());
        let Some(&actual) = truth.get(&key) else {
            return Err(Error::Eval(format!(
                "no label for segment {} student {}",
                p.segment, p.student
            )));
        };
        if !seen.insert(key) {
            return Err(Error::Eval(format!(
                "duplicate prediction for segment {} student {}",
                p.segment, p.student
            )));
        }
        let c = out.entry(p.student.clone()).or_default();
        match p.label {
            Some(pred) => c.add(pred, actual),
            None => c.not_available += 1,
        }
    }
    if let Some((seg, student)) = truth.keys().find(|k| !seen.contains(*k)) {
        return Err(Error::Eval(format!(
            "no prediction for segment {seg} student {student}"
        )));
    }
    Ok(out)
}

/// TN / (TN + FP), N/A on an empty denominator.
pub fn specificity(c: &ConfusionCounts) -> Option<f64> {
    let d = c.tn + c.fp;
    (d > 0).then(|| c.tn as f64 / d as f64)
}

/// TN / (TN + FN), N/A on an empty denominator.
pub fn npv(c: &ConfusionCounts) -> Option<f64> {
    let d = c.tn + c.fn_;
    (d > 0).then(|| c.tn as f64 / d as f64)
}

/// `(1 + b^2) * npv * specificity / (b^2 * npv + specificity)`; 0 when the denominator is 0.
pub fn f_beta(specificity: f64, npv: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * npv + specificity;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * npv * specificity / den
}

/// Engaged iff the face was detected in strictly more than half of the
/// frames `start..=end`. Frames without a record count as not detected.
pub fn baseline_continuous_gaze(faces: &[FaceFrameRecord], start: u64, end: u64) -> Label {
    if end < start {
        return Label::NonEngaged;
    }
    let frames = end - start + 1;
    let detected = faces
        .iter()
        .filter(|r| r.ts >= start && r.ts <= end && r.face_detected)
        .map(|r| r.ts)
        .collect::<BTreeSet<_>>()
        .len() as u64;
    Label::from_engaged(2 * detected > frames)
}

/// Predictions from scorecards: engaged iff `C_s >= cutoff`, N/A when `C_s` is N/A.
pub fn predictions_from_scorecards(cards: &[SegmentScorecard], cutoff: f64) -> Vec<Prediction> {
    cards
        .iter()
        .flat_map(|card| {
            card.per_student.iter().map(move |s| Prediction {
                segment: card.segment,
                student: s.id.clone(),
                label: s.cs.map(|cs| Label::from_engaged(cs >= cutoff)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: ConfusionCounts,
    pub specificity: Option<f64>,
    pub npv: Option<f64>,
    pub f2: Option<f64>,
}

impl Metrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let s = specificity(&counts);
        let n = npv(&counts);
        let f2 = match (s, n) {
            (Some(s), Some(n)) => Some(f_beta(s, n, 2.0)),
            _ => None,
        };
        Metrics {
            counts,
            specificity: s,
            npv: n,
            f2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Metrics,
    pub per_participant: BTreeMap<ParticipantId, Metrics>,
}

pub fn evaluate(predictions: &[Prediction], labels: &[GroundTruthLabel]) -> Result<MetricsReport> {
    let per = confusion_by_participant(predictions, labels)?;
    let overall = confusion(predictions, labels)?;
    Ok(MetricsReport {
        overall: Metrics::from_counts(overall),
        per_participant: per
            .into_iter()
            .map(|(k, c)| (k, Metrics::from_counts(c)))
            .collect(),
    })
}

/// Reads JSON lines, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Eval(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}
