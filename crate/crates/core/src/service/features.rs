//! Per-tick feature extraction: foreground counts, screen histograms and
//! gaze observations. Everything downstream works on these compact records,
//! never on pixels.

use std::collections::VecDeque;

use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::fixation::ThresholdSet;
use crate::foreground::{ForegroundExtractor, ForegroundMask};
use crate::gaze::{FaceObservation, GazeProjector};
use crate::ingest::{GrayFrame, Tick};
use crate::presence::{build_scaled_histogram, HistogramDescriptor};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickFeatures {
    pub ts: u64,
    /// Foreground count of the reference (presentation) stream.
    pub reference_count: Option<u64>,
    /// Histogram of the separate presentation stream, when there is one.
    pub presentation_hist: Option<HistogramDescriptor>,
    /// Indexed by participant; the instructor is 0.
    pub screen_hists: Vec<Option<HistogramDescriptor>>,
    /// Foreground counts of student screens; index 0 is always `None`.
    pub screen_counts: Vec<Option<u64>>,
    pub faces: Vec<Option<FaceObservation>>,
}

impl TickFeatures {
    pub fn empty(ts: u64, participants: usize) -> Self {
        TickFeatures {
            ts,
            reference_count: None,
            presentation_hist: None,
            screen_hists: vec![None; participants],
            screen_counts: vec![None; participants],
            faces: vec![None; participants],
        }
    }
}

/// The frame fixation events and slide transitions are detected on: the
/// presentation stream when the session has one, else the instructor screen.
pub fn reference_frame(tick: &Tick, has_presentation: bool) -> Option<&GrayFrame> {
    if has_presentation {
        tick.presentation.as_ref()
    } else {
        tick.screens.first().and_then(|s| s.as_ref())
    }
}

/// Stateful per-stream processing for one session.
pub struct FeatureExtractor {
    has_presentation: bool,
    bins: usize,
    reference: ForegroundExtractor,
    students: Vec<ForegroundExtractor>,
    projectors: Vec<GazeProjector>,
}

impl FeatureExtractor {
    pub fn new(config: &SessionConfig, has_presentation: bool) -> Result<Self> {
        let fg = |_| ForegroundExtractor::new(config.foreground.gmm(), config.foreground.median_kernel);
        let participants = participant_order(config);
        Ok(FeatureExtractor {
            has_presentation,
            bins: config.context.bins,
            reference: fg(())?,
            students: (0..participants.len()).map(|_| fg(())).collect::<Result<_>>()?,
            projectors: participants
                .iter()
                .map(|p| GazeProjector::new(&config.gaze, p))
                .collect(),
        })
    }

    pub fn participants(&self) -> usize {
        self.projectors.len()
    }

    /// Features of one tick plus the reference stream's foreground mask.
    pub fn process(&mut self, tick: &Tick) -> Result<(TickFeatures, Option<ForegroundMask>)> {
        let n = self.participants();
        if tick.screens.len() != n || tick.faces.len() != n {
            return Err(Error::invalid(
                "tick",
                format!("expected {n} participants, got {} screens and {} faces", tick.screens.len(), tick.faces.len()),
            ));
        }
        let mut out = TickFeatures::empty(tick.ts, n);
        let mut mask = None;
        if let Some(frame) = reference_frame(tick, self.has_presentation) {
            let m = self
                .reference
                .process(frame)
                .map_err(|e| e.in_module("foreground-extraction"))?;
            out.reference_count = Some(m.count() as u64);
            mask = Some(m);
        }
        if let Some(frame) = tick.presentation.as_ref().filter(|_| self.has_presentation) {
            out.presentation_hist = Some(build_scaled_histogram(frame, self.bins)?);
        }
        for (i, screen) in tick.screens.iter().enumerate() {
            let Some(frame) = screen else { continue };
            out.screen_hists[i] = Some(build_scaled_histogram(frame, self.bins)?);
            if i > 0 {
                let m = self.students[i]
                    .process(frame)
                    .map_err(|e| e.in_module("foreground-extraction"))?;
                out.screen_counts[i] = Some(m.count() as u64);
            }
        }
        for (i, face) in tick.faces.iter().enumerate() {
            out.faces[i] = face.as_ref().map(|r| self.projectors[i].observe(r));
        }
        Ok((out, mask))
    }
}

/// Instructor first, then students in configuration order.
pub fn participant_order(config: &SessionConfig) -> Vec<crate::config::ParticipantConfig> {
    let mut v: Vec<_> = config.instructor().into_iter().cloned().collect();
    v.extend(config.students().cloned());
    v
}

/// Fixation thresholds for a stream of the given frame area.
pub fn thresholds(config: &SessionConfig, area: usize) -> Result<ThresholdSet> {
    ThresholdSet::from_fractions(
        config.fixation.spatial_min_fraction,
        config.fixation.spatial_max_fraction,
        area,
        config.min_event_frames() as u64,
    )
}

/// Contiguous window of tick features, prunable from the front.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    base: u64,
    ticks: VecDeque<TickFeatures>,
    participants: usize,
}

impl FeatureStore {
    pub fn new(participants: usize) -> Self {
        FeatureStore {
            base: 0,
            ticks: VecDeque::new(),
            participants,
        }
    }

    /// Appends a tick; skipped timestamps are filled with empty ticks.
    pub fn push(&mut self, features: TickFeatures) -> Result<()> {
        if self.ticks.is_empty() {
            self.base = features.ts;
        } else {
            let next = self.base + self.ticks.len() as u64;
            if features.ts < next {
                return Err(Error::OutOfOrder {
                    stream: "session".into(),
                    index: features.ts as usize,
                    prev: next - 1,
                    ts: features.ts,
                });
            }
            for ts in next..features.ts {
                self.ticks.push_back(TickFeatures::empty(ts, self.participants));
            }
        }
        self.ticks.push_back(features);
        Ok(())
    }

    pub fn get(&self, ts: u64) -> Option<&TickFeatures> {
        ts.checked_sub(self.base)
            .and_then(|i| self.ticks.get(i as usize))
    }

    /// Ticks with timestamps in `start..=end` that are still stored.
    pub fn range(&self, start: u64, end: u64) -> impl Iterator<Item = &TickFeatures> {
        let lo = start.saturating_sub(self.base) as usize;
        let hi = (end.saturating_add(1).saturating_sub(self.base) as usize).min(self.ticks.len());
        self.ticks.range(lo.min(hi)..hi)
    }

    pub fn first_ts(&self) -> Option<u64> {
        (!self.ticks.is_empty()).then_some(self.base)
    }

    pub fn last_ts(&self) -> Option<u64> {
        (!self.ticks.is_empty()).then(|| self.base + self.ticks.len() as u64 - 1)
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    /// Drops every tick before `ts`.
    pub fn prune_before(&mut self, ts: u64) {
        while self.base < ts && !self.ticks.is_empty() {
            self.ticks.pop_front();
            self.base += 1;
        }
    }
}
