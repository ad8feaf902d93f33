//! Visual presence (face on camera during an event) and contextual presence
//! (student screen matches the instructor screen, by downscaled intensity
//! histograms and chi-square distance).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixation::FixationEvent;
use crate::ingest::{FaceFrameRecord, GrayFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChiSquareVariant {
    /// `sum (a - b)^2 / (a + b)`
    Symmetric,
    /// `sum (a - b)^2 / a`, over bins with `a > 0`
    OneSided,
}

/// True iff the face-detected fraction over the event's non-gap frames is at
/// least `min_fraction`. Records outside the event are ignored; an event with
/// no records is not present.
pub fn visual_presence(event: &FixationEvent, faces: &[FaceFrameRecord], min_fraction: f64) -> bool {
    let (mut seen, mut detected) = (0usize, 0usize);
    for r in faces.iter().filter(|r| event.start <= r.ts && r.ts <= event.end) {
        seen += 1;
        detected += r.face_detected as usize;
    }
    seen > 0 && detected as f64 >= min_fraction * seen as f64
}

/// Intensity histogram with `bins` equal-width bins over 0..=255.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramDescriptor {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl HistogramDescriptor {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(move |&c| c as f64 / t)
    }
}

pub fn build_scaled_histogram(frame: &GrayFrame, bins: usize) -> Result<HistogramDescriptor> {
    if bins == 0 || 256 % bins != 0 {
        return Err(Error::invalid("bins", format!("must divide 256, got {bins}")));
    }
    // four interleaved tables keep consecutive increments independent
    let mut full = [[0u32; 256]; 4];
    let px = frame.pixels();
    let mut chunks = px.chunks_exact(4);
    for c in &mut chunks {
        full[0][c[0] as usize] += 1;
        full[1][c[1] as usize] += 1;
        full[2][c[2] as usize] += 1;
        full[3][c[3] as usize] += 1;
    }
    for &v in chunks.remainder() {
        full[0][v as usize] += 1;
    }
    let width = 256 / bins;
    let counts: Vec<u64> = (0..bins)
        .map(|b| {
            (b * width..(b + 1) * width)
                .map(|v| full.iter().map(|t| t[v] as u64).sum::<u64>())
                .sum()
        })
        .collect();
    Ok(HistogramDescriptor {
        total: frame.pixels().len() as u64,
        counts,
    })
}

/// Chi-square distance between unit-normalized histograms.
pub fn chi_square_distance(a: &HistogramDescriptor, b: &HistogramDescriptor, variant: ChiSquareVariant) -> Result<f64> {
    if a.bins() != b.bins() {
        return Err(Error::BinMismatch(a.bins(), b.bins()));
    }
    let mut d = 0.0;
    for (pa, pb) in a.normalized().zip(b.normalized()) {
        let denom = match variant {
            ChiSquareVariant::Symmetric => pa + pb,
            ChiSquareVariant::OneSided => pa,
        };
        if denom > 0.0 {
            let diff = pa - pb;
            d += diff * diff / denom;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextualResult {
    pub present: bool,
    pub min_distance: f64,
}

/// Pairs the first `n` histograms of each side by index and takes the
/// minimum distance; present iff it is within `threshold`.
pub fn contextual_presence(
    instructor: &[HistogramDescriptor],
    student: &[HistogramDescriptor],
    n: usize,
    threshold: f64,
    variant: ChiSquareVariant,
) -> Result<ContextualResult> {
    let pairs = instructor.len().min(student.len()).min(n);
    if pairs == 0 {
        return Err(Error::InsufficientData(
            "no screen frames to compare".into(),
        ));
    }
    let mut min = f64::INFINITY;
    for i in 0..pairs {
        min = min.min(chi_square_distance(&instructor[i], &student[i], variant)?);
    }
    Ok(ContextualResult {
        present: min <= threshold,
        min_distance: min,
    })
}

/// [`contextual_presence`] over raw frames.
pub fn contextual_presence_frames(
    instructor: &[&GrayFrame],
    student: &[&GrayFrame],
    n: usize,
    bins: usize,
    threshold: f64,
    variant: ChiSquareVariant,
) -> Result<ContextualResult> {
    let hist = |frames: &[&GrayFrame]| -> Result<Vec<HistogramDescriptor>> {
        frames
            .iter()
            .take(n)
            .map(|f| build_scaled_histogram(f, bins))
            .collect()
    };
    contextual_presence(&hist(instructor)?, &hist(student)?, n, threshold, variant)
}

/// Result of fitting the contextual threshold to labelled frame pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub matched: usize,
    pub mismatched: usize,
    pub max_matched: f64,
    pub min_mismatched: f64,
    /// Fewest misclassified pairs; the midpoint of the widest such gap.
    pub threshold: f64,
    pub errors: usize,
}

impl ThresholdCalibration {
    pub fn separable(&self) -> bool {
        self.errors == 0
    }
}

/// Picks the chi-square threshold separating same-content pairs from
/// different-content pairs.
pub fn calibrate_threshold(
    matched: &[(GrayFrame, GrayFrame)],
    mismatched: &[(GrayFrame, GrayFrame)],
    bins: usize,
    variant: ChiSquareVariant,
) -> Result<ThresholdCalibration> {
    if matched.is_empty() || mismatched.is_empty() {
        return Err(Error::InsufficientData("calibration needs matched and mismatched pairs".into()));
    }
    let dist = |pairs: &[(GrayFrame, GrayFrame)]| -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|(a, b)| chi_square_distance(&build_scaled_histogram(a, bins)?, &build_scaled_histogram(b, bins)?, variant))
            .collect()
    };
    let dm = dist(matched)?;
    let dx = dist(mismatched)?;
    let mut all: Vec<(f64, bool)> = dm.iter().map(|&d| (d, true)).chain(dx.iter().map(|&d| (d, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Cut after position i: everything at or below is called matched.
    let mut best = (usize::MAX, 0.0f64, 0.0f64);
    let mut fn_ = dm.len();
    let mut fp = 0usize;
    for i in 0..all.len() {
        if all[i].1 {
            fn_ -= 1;
        } else {
            fp += 1;
        }
        let next = all.get(i + 1).map_or(all[i].0 * 2.0 + 1.0, |n| n.0);
        let gap = next - all[i].0;
        let err = fn_ + fp;
        if gap > 0.0 && (err < best.0 || (err == best.0 && gap > best.2)) {
            best = (err, (all[i].0 + next) / 2.0, gap);
        }
    }
    Ok(ThresholdCalibration {
        matched: dm.len(),
        mismatched: dx.len(),
        max_matched: dm.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_mismatched: dx.iter().copied().fold(f64::INFINITY, f64::min),
        threshold: best.1,
        errors: best.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresenceVerdict {
    pub visual: bool,
    pub contextual: bool,
    pub min_distance: Option<f64>,
}
