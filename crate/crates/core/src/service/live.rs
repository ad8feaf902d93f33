//! Incremental engine: consumes one tick at a time and emits a score event
//! as soon as a segment and every fixation event starting in it are settled.

use std::collections::VecDeque;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{SegmentMode, SessionConfig};
use crate::error::{Error, Result};
use crate::fixation::{match_student_event, FixationEvent, FixationTracker};
use crate::foreground::ForegroundMask;
use crate::ingest::{GrayFrame, ParticipantId, Tick};
use crate::scoring::{score_segment, OverallScore};
use crate::segmentation::{min_partial_frames, Segment, TransitionDetector};

use super::evaluate::{EvaluatedEvent, EventContext};
use super::features::{reference_frame, thresholds, FeatureExtractor, FeatureStore};
use super::offline::{participant_ids, SessionOutcome};
use super::{ScoreEvent, FEED_VERSION};

/// Segment boundaries under a switchable mode.
#[derive(Debug, Clone)]
pub struct LiveSegmenter {
    detector: TransitionDetector,
    mode: SegmentMode,
    fps: u32,
    first_ts: Option<u64>,
    last_ts: Option<u64>,
    /// End of the last closed segment.
    cursor: Option<u64>,
    /// Last full manual slice, kept until the tail-merge rule is decided.
    held: Option<Segment>,
}

impl LiveSegmenter {
    pub fn new(threshold: f64, mode: SegmentMode, fps: u32) -> Self {
        LiveSegmenter {
            detector: TransitionDetector::new(threshold),
            mode,
            fps,
            first_ts: None,
            last_ts: None,
            cursor: None,
            held: None,
        }
    }

    pub fn mode(&self) -> SegmentMode {
        self.mode
    }

    fn open_start(&self) -> Option<u64> {
        self.cursor.map(|c| c + 1).or(self.first_ts)
    }

    fn release(&mut self, seg: Segment, out: &mut Vec<(Segment, SegmentMode)>) {
        self.cursor = Some(seg.end);
        out.push((seg, self.mode));
    }

    fn release_held(&mut self, out: &mut Vec<(Segment, SegmentMode)>) {
        if let Some(h) = self.held.take() {
            out.push((h, self.mode));
        }
    }

    fn release_detected(&mut self, d: Segment, out: &mut Vec<(Segment, SegmentMode)>) {
        let start = match self.cursor {
            Some(c) if d.end <= c => return,
            Some(c) => c + 1,
            None => d.start,
        };
        self.release(
            Segment {
                start,
                end: d.end,
                significant: d.significant,
            },
            out,
        );
    }

    pub fn push(&mut self, ts: u64, reference: Option<&GrayFrame>) -> Result<Vec<(Segment, SegmentMode)>> {
        self.first_ts.get_or_insert(ts);
        self.last_ts = Some(ts);
        let detected = match reference {
            Some(f) => self.detector.push(ts, f)?,
            None => Vec::new(),
        };
        let mut out = Vec::new();
        match self.mode {
            SegmentMode::Automatic => {
                for d in detected {
                    self.release_detected(d, &mut out);
                }
            }
            SegmentMode::Manual { slice } => {
                let len = slice.frames(self.fps);
                let start = self.open_start().expect("first tick seen");
                if ts + 1 - start >= len {
                    self.release_held(&mut out);
                    let seg = Segment {
                        start,
                        end: ts,
                        significant: true,
                    };
                    self.cursor = Some(ts);
                    self.held = Some(seg);
                } else if self.held.is_some() && ts + 1 - start >= min_partial_frames(len) {
                    self.release_held(&mut out);
                }
            }
        }
        Ok(out)
    }

    /// Switches mode; the open segment closes under the new rule. Repeating
    /// the current mode is a no-op.
    pub fn set_mode(&mut self, mode: SegmentMode) -> Vec<(Segment, SegmentMode)> {
        let mut out = Vec::new();
        if mode != self.mode {
            self.release_held(&mut out);
            self.mode = mode;
        }
        out
    }

    pub fn finish(&mut self) -> Vec<(Segment, SegmentMode)> {
        let detected = self.detector.finish();
        let mut out = Vec::new();
        match self.mode {
            SegmentMode::Automatic => {
                self.release_held(&mut out);
                for d in detected {
                    self.release_detected(d, &mut out);
                }
            }
            SegmentMode::Manual { slice } => {
                let (Some(start), Some(last)) = (self.open_start(), self.last_ts) else {
                    return out;
                };
                if last < start {
                    self.release_held(&mut out);
                    return out;
                }
                let partial = last + 1 - start;
                match self.held.take() {
                    Some(mut h) if partial < min_partial_frames(slice.frames(self.fps)) => {
                        h.end = last;
                        self.release(h, &mut out);
                    }
                    held => {
                        if let Some(h) = held {
                            out.push((h, self.mode));
                        }
                        self.release(
                            Segment {
                                start,
                                end: last,
                                significant: true,
                            },
                            &mut out,
                        );
                    }
                }
            }
        }
        out
    }
}

fn wall_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// The streaming pipeline.
pub struct Engine {
    config: SessionConfig,
    ids: Vec<ParticipantId>,
    has_presentation: bool,
    extractor: FeatureExtractor,
    store: FeatureStore,
    reference_tracker: Option<FixationTracker>,
    student_trackers: Vec<Option<FixationTracker>>,
    student_events: Vec<Vec<FixationEvent>>,
    pending: VecDeque<FixationEvent>,
    evaluated: VecDeque<EvaluatedEvent>,
    segmenter: LiveSegmenter,
    closed: VecDeque<(Segment, SegmentMode)>,
    next_segment: u64,
    overall: OverallScore,
    seq: u64,
    last_ts: Option<u64>,
    dropped: u64,
    finished: bool,
    last_mask: Option<ForegroundMask>,
    outcome: SessionOutcome,
}

impl Engine {
    pub fn new(config: SessionConfig, has_presentation: bool) -> Result<Self> {
        config.validate()?;
        let mode = config.segment_mode()?;
        let ids = participant_ids(&config);
        let n = ids.len();
        Ok(Engine {
            extractor: FeatureExtractor::new(&config, has_presentation)?,
            store: FeatureStore::new(n),
            reference_tracker: None,
            student_trackers: vec![None; n],
            student_events: vec![Vec::new(); n],
            pending: VecDeque::new(),
            evaluated: VecDeque::new(),
            segmenter: LiveSegmenter::new(config.segmentation.mse_threshold, mode, config.fps),
            closed: VecDeque::new(),
            next_segment: 0,
            overall: OverallScore::default(),
            seq: 0,
            last_ts: None,
            dropped: 0,
            finished: false,
            last_mask: None,
            outcome: SessionOutcome {
                ids: ids.clone(),
                segments: Vec::new(),
                instructor_events: Vec::new(),
                student_events: vec![Vec::new(); n],
                evaluated: Vec::new(),
                scorecards: Vec::new(),
                frames: 0,
            },
            ids,
            has_presentation,
            config,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn mode(&self) -> SegmentMode {
        self.segmenter.mode()
    }

    /// Applies a mode command; segments it closes are scored on the next tick.
    pub fn set_mode(&mut self, mode: SegmentMode) {
        let released = self.segmenter.set_mode(mode);
        self.closed.extend(released);
    }

    /// Counts screen frames discarded upstream under overload.
    pub fn note_dropped(&mut self, frames: u64) {
        self.dropped += frames;
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Reference mask of the most recent tick.
    pub fn last_mask(&self) -> Option<&ForegroundMask> {
        self.last_mask.as_ref()
    }

    /// Ticks currently retained for pending evaluations.
    pub fn retained_ticks(&self) -> usize {
        self.store.len()
    }

    pub fn push(&mut self, tick: &Tick) -> Result<Vec<ScoreEvent>> {
        if self.finished {
            return Err(Error::invalid("engine", "push after finish"));
        }
        if let Some(prev) = self.last_ts {
            if tick.ts <= prev {
                return Err(Error::OutOfOrder {
                    stream: "session".into(),
                    index: self.outcome.frames as usize,
                    prev,
                    ts: tick.ts,
                });
            }
        }
        self.last_ts = Some(tick.ts);
        self.outcome.frames += 1;

        let (features, mask) = self.extractor.process(tick)?;
        let reference = reference_frame(tick, self.has_presentation);
        if let Some(frame) = reference {
            if self.reference_tracker.is_none() {
                let th = thresholds(&self.config, frame.width() * frame.height())
                    .map_err(|e| e.in_module("fixation-detection"))?;
                self.reference_tracker = Some(FixationTracker::new(th, self.ids[0].clone()));
            }
        }
        if let Some(tr) = self.reference_tracker.as_mut() {
            if let Some(e) = tr.push(tick.ts, features.reference_count) {
                self.outcome.instructor_events.push(e.clone());
                self.pending.push_back(e);
            }
        }
        for i in 1..self.ids.len() {
            if let (None, Some(frame)) = (&self.student_trackers[i], &tick.screens[i]) {
                let th = thresholds(&self.config, frame.width() * frame.height())
                    .map_err(|e| e.in_module("fixation-detection"))?;
                self.student_trackers[i] = Some(FixationTracker::new(th, self.ids[i].clone()));
            }
            if let Some(tr) = self.student_trackers[i].as_mut() {
                if let Some(e) = tr.push(tick.ts, features.screen_counts[i]) {
                    self.outcome.student_events[i].push(e.clone());
                    self.student_events[i].push(e);
                }
            }
        }
        self.store.push(features)?;
        self.last_mask = mask;
        let closed = self
            .segmenter
            .push(tick.ts, reference)
            .map_err(|e| e.in_module("slide-segmentation"))?;
        self.closed.extend(closed);

        self.evaluate_ready();
        let out = self.emit_ready();
        self.prune();
        Ok(out)
    }

    /// Ends the stream: closes open runs and segments and emits the rest.
    pub fn finish(&mut self) -> Result<Vec<ScoreEvent>> {
        if self.finished {
            return Ok(Vec::new());
        }
        self.finished = true;
        if let Some(e) = self.reference_tracker.as_mut().and_then(|t| t.finish()) {
            self.outcome.instructor_events.push(e.clone());
            self.pending.push_back(e);
        }
        for i in 1..self.ids.len() {
            if let Some(e) = self.student_trackers[i].as_mut().and_then(|t| t.finish()) {
                self.outcome.student_events[i].push(e.clone());
                self.student_events[i].push(e);
            }
        }
        let closed = self.segmenter.finish();
        self.closed.extend(closed);
        self.evaluate_ready();
        Ok(self.emit_ready())
    }

    /// Everything produced so far.
    pub fn outcome(&self) -> &SessionOutcome {
        &self.outcome
    }

    pub fn into_outcome(self) -> SessionOutcome {
        self.outcome
    }

    fn event_ready(&self, ev: &FixationEvent, now: u64) -> bool {
        if self.finished {
            return true;
        }
        let tol = self.config.match_tolerance_frames() as u64;
        let min_frames = self.config.min_event_frames() as u64;
        let n = self.config.context.frames as u64;
        if now < ev.end || now + 1 < ev.start + tol + min_frames {
            return false;
        }
        let candidate = |s: u64| s + tol >= ev.start && s <= ev.start + tol;
        for i in 1..self.ids.len() {
            if let Some((s, _)) = self.student_trackers[i].as_ref().and_then(|t| t.open_run()) {
                if candidate(s) {
                    return false;
                }
            }
            let m = match_student_event(ev, &self.student_events[i], tol, &self.ids[i]);
            if now < m.end || now + 1 < m.start + n {
                return false;
            }
        }
        true
    }

    fn evaluate_ready(&mut self) {
        let Some(now) = self.last_ts else { return };
        while let Some(ev) = self.pending.front() {
            if !self.event_ready(ev, now) {
                break;
            }
            let ev = self.pending.pop_front().expect("front exists");
            let index = self.outcome.evaluated.len() as u64;
            let ctx = EventContext {
                config: &self.config,
                store: &self.store,
                has_presentation: self.has_presentation,
                ids: &self.ids,
            };
            let done = ctx.evaluate(index, &ev, &self.student_events);
            self.outcome.evaluated.push(done.clone());
            self.evaluated.push_back(done);
        }
    }

    fn segment_ready(&self, seg: &Segment) -> bool {
        if let Some((s, _)) = self.reference_tracker.as_ref().and_then(|t| t.open_run()) {
            if s <= seg.end && !self.finished {
                return false;
            }
        }
        self.pending.front().is_none_or(|e| e.start > seg.end)
    }

    fn emit_ready(&mut self) -> Vec<ScoreEvent> {
        let mut out = Vec::new();
        while let Some((seg, mode)) = self.closed.front().copied() {
            if !self.segment_ready(&seg) {
                break;
            }
            self.closed.pop_front();
            let id = self.next_segment;
            self.next_segment += 1;
            self.outcome.segments.push(seg);
            let mut events = Vec::new();
            while let Some(e) = self.evaluated.front() {
                if e.event.start > seg.end {
                    break;
                }
                let e = self.evaluated.pop_front().expect("front exists");
                if seg.contains(e.event.start) {
                    events.push(e.scored());
                }
            }
            if !seg.significant {
                continue;
            }
            let card = score_segment(id, &seg, &self.ids[1..], &events);
            let overall = self.overall.push(&card);
            self.outcome.scorecards.push(card.clone());
            out.push(ScoreEvent {
                version: FEED_VERSION,
                seq: self.seq,
                wall_ms: wall_ms(),
                segment: id,
                mode: mode.kind(),
                slice_minutes: match mode {
                    SegmentMode::Manual { slice } => Some(slice.minutes()),
                    SegmentMode::Automatic => None,
                },
                scorecard: card,
                overall,
                dropped_frames: self.dropped,
            });
            self.seq += 1;
        }
        out
    }

    fn prune(&mut self) {
        let Some(now) = self.last_ts else { return };
        let tol = self.config.match_tolerance_frames() as u64;
        let mut floor = now + 1;
        if let Some(e) = self.pending.front() {
            floor = floor.min(e.start);
        }
        if let Some((s, _)) = self.reference_tracker.as_ref().and_then(|t| t.open_run()) {
            floor = floor.min(s);
        }
        let floor = floor.saturating_sub(tol);
        self.store.prune_before(floor);
        for evs in &mut self.student_events {
            evs.retain(|e| e.start >= floor);
        }
    }
}
