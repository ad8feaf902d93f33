//! Batch pipeline: one pass extracting tick features, then event detection,
//! segmentation, cascade evaluation and scoring over the whole session.

use crate::config::{SegmentMode, SessionConfig};
use crate::error::Result;
use crate::fixation::{detect_fixation_events, FixationEvent, ThresholdSet};
use crate::foreground::ForegroundMask;
use crate::ingest::{ParticipantId, SessionStreams, Tick, TickStream};
use crate::scoring::{score_segment, SegmentScorecard};
use crate::segmentation::{time_slice_segments, Segment, TransitionDetector};

use super::evaluate::{EvaluatedEvent, EventContext};
use super::features::{participant_order, reference_frame, thresholds, FeatureExtractor, FeatureStore, TickFeatures};

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    /// Participant ids; index 0 is the instructor.
    pub ids: Vec<ParticipantId>,
    /// All closed segments in order; a segment's id is its index.
    pub segments: Vec<Segment>,
    pub instructor_events: Vec<FixationEvent>,
    /// Indexed like `ids`; the instructor entry is empty.
    pub student_events: Vec<Vec<FixationEvent>>,
    pub evaluated: Vec<EvaluatedEvent>,
    pub scorecards: Vec<SegmentScorecard>,
    pub frames: u64,
}

impl SessionOutcome {
    pub fn students(&self) -> &[ParticipantId] {
        &self.ids[1..]
    }
}

/// Observer of every tick's features and reference mask (debug exports).
pub trait TickSink {
    fn tick(&mut self, ids: &[ParticipantId], features: &TickFeatures, mask: Option<&ForegroundMask>) -> Result<()>;
}

pub fn participant_ids(config: &SessionConfig) -> Vec<ParticipantId> {
    participant_order(config)
        .into_iter()
        .map(|p| ParticipantId::new(p.id))
        .collect()
}

/// Runs the batch pipeline over opened session streams.
pub fn analyze_streams(config: &SessionConfig, mode: SegmentMode, streams: SessionStreams) -> Result<SessionOutcome> {
    let has_presentation = streams.presentation.is_some();
    analyze_ticks(config, mode, has_presentation, TickStream::new(streams), None)
}

/// Runs the batch pipeline over any tick source.
pub fn analyze_ticks(
    config: &SessionConfig,
    mode: SegmentMode,
    has_presentation: bool,
    ticks: impl IntoIterator<Item = Result<Tick>>,
    mut sink: Option<&mut dyn TickSink>,
) -> Result<SessionOutcome> {
    config.validate()?;
    let ids = participant_ids(config);
    let n = ids.len();
    let mut extractor = FeatureExtractor::new(config, has_presentation)?;
    let mut store = FeatureStore::new(n);
    let mut detector = TransitionDetector::new(config.segmentation.mse_threshold);
    let mut auto_segments = Vec::new();
    let mut ref_area = None;
    let mut screen_areas = vec![None; n];

    for tick in ticks {
        let tick = tick?;
        if let Some(frame) = reference_frame(&tick, has_presentation) {
            ref_area.get_or_insert(frame.width() * frame.height());
            auto_segments.extend(
                detector
                    .push(tick.ts, frame)
                    .map_err(|e| e.in_module("slide-segmentation"))?,
            );
        }
        for (i, s) in tick.screens.iter().enumerate() {
            if let Some(f) = s {
                screen_areas[i].get_or_insert(f.width() * f.height());
            }
        }
        let (features, mask) = extractor.process(&tick)?;
        if let Some(sink) = sink.as_mut() {
            sink.tick(&ids, &features, mask.as_ref())?;
        }
        store.push(features)?;
    }
    auto_segments.extend(detector.finish());

    let instructor_events = match ref_area {
        Some(area) => {
            let th = thresholds(config, area).map_err(|e| e.in_module("fixation-detection"))?;
            batch_events(&store, &th, &ids[0], |t| t.reference_count)
        }
        None => Vec::new(),
    };
    let mut student_events = vec![Vec::new(); n];
    for i in 1..n {
        if let Some(area) = screen_areas[i] {
            let th = thresholds(config, area).map_err(|e| e.in_module("fixation-detection"))?;
            student_events[i] = batch_events(&store, &th, &ids[i], |t| t.screen_counts[i]);
        }
    }

    let segments = match (mode, store.first_ts(), store.last_ts()) {
        (SegmentMode::Automatic, _, _) => auto_segments,
        (SegmentMode::Manual { slice }, Some(first), Some(last)) => {
            time_slice_segments(last - first + 1, slice, config.fps, first)
        }
        _ => Vec::new(),
    };

    let ctx = EventContext {
        config,
        store: &store,
        has_presentation,
        ids: &ids,
    };
    let evaluated: Vec<EvaluatedEvent> = instructor_events
        .iter()
        .enumerate()
        .map(|(k, e)| ctx.evaluate(k as u64, e, &student_events))
        .collect();

    let scorecards = score_segments(&segments, &ids[1..], &evaluated);
    Ok(SessionOutcome {
        frames: store.len() as u64,
        ids,
        segments,
        instructor_events,
        student_events,
        evaluated,
        scorecards,
    })
}

/// Scorecards of the significant segments, events assigned by start frame.
pub fn score_segments(segments: &[Segment], students: &[ParticipantId], evaluated: &[EvaluatedEvent]) -> Vec<SegmentScorecard> {
    segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.significant)
        .map(|(id, seg)| {
            let events: Vec<_> = evaluated
                .iter()
                .filter(|e| seg.contains(e.event.start))
                .map(|e| e.scored())
                .collect();
            score_segment(id as u64, seg, students, &events)
        })
        .collect()
}

/// Scans maximal runs of consecutive non-gap counts independently.
fn batch_events(
    store: &FeatureStore,
    th: &ThresholdSet,
    source: &ParticipantId,
    count: impl Fn(&TickFeatures) -> Option<u64>,
) -> Vec<FixationEvent> {
    let (Some(first), Some(last)) = (store.first_ts(), store.last_ts()) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut chunk: Vec<u64> = Vec::new();
    let mut chunk_start = first;
    let mut flush = |chunk: &mut Vec<u64>, start: u64| {
        for e in detect_fixation_events(chunk, th, source) {
            out.push(FixationEvent {
                source: e.source,
                start: e.start + start,
                end: e.end + start,
            });
        }
        chunk.clear();
    };
    for t in store.range(first, last) {
        match count(t) {
            Some(c) => {
                if chunk.is_empty() {
                    chunk_start = t.ts;
                }
                chunk.push(c);
            }
            None => flush(&mut chunk, chunk_start),
        }
    }
    flush(&mut chunk, chunk_start);
    out
}
