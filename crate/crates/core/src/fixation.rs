//! Fixation target events: maximal runs of frames whose foreground count lies
//! within the spatial band and that last at least the temporal threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ParticipantId;

/// Spatial band (inclusive, in pixels) and temporal threshold (frames).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub min_count: u64,
    pub max_count: u64,
    pub min_frames: u64,
}

impl ThresholdSet {
    pub fn new(min_count: u64, max_count: u64, min_frames: u64) -> Result<Self> {
        if min_count == 0 || min_count >= max_count {
            return Err(Error::invalid(
                "thresholds",
                format!("need 0 < min_count < max_count, got {min_count}, {max_count}"),
            ));
        }
        if min_frames == 0 {
            return Err(Error::invalid("thresholds", "min_frames must be >= 1"));
        }
        Ok(ThresholdSet {
            min_count,
            max_count,
            min_frames,
        })
    }

    /// Resolves area fractions against a frame of `area` pixels.
    pub fn from_fractions(min_fraction: f64, max_fraction: f64, area: usize, min_frames: u64) -> Result<Self> {
        let min_count = ((min_fraction * area as f64).round() as u64).max(1);
        let max_count = ((max_fraction * area as f64).round() as u64).min(area as u64);
        Self::new(min_count, max_count, min_frames)
    }

    #[inline]
    pub fn in_band(&self, count: u64) -> bool {
        self.min_count <= count && count <= self.max_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixationEvent {
    pub source: ParticipantId,
    /// First frame of the event.
    pub start: u64,
    /// Last frame of the event (inclusive).
    pub end: u64,
}

impl FixationEvent {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Scans a per-frame count series (frame `i` has timestamp `i`).
pub fn detect_fixation_events(counts: &[u64], th: &ThresholdSet, source: &ParticipantId) -> Vec<FixationEvent> {
    let mut events = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        match (th.in_band(c), run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if (i - s) as u64 >= th.min_frames {
                    events.push(FixationEvent {
                        source: source.clone(),
                        start: s as u64,
                        end: i as u64 - 1,
                    });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        if (counts.len() - s) as u64 >= th.min_frames {
            events.push(FixationEvent {
                source: source.clone(),
                start: s as u64,
                end: counts.len() as u64 - 1,
            });
        }
    }
    events
}

/// Incremental detector for timestamped counts. A missing timestamp (gap) or
/// a `None` count breaks the current run.
#[derive(Debug, Clone)]
pub struct FixationTracker {
    th: ThresholdSet,
    source: ParticipantId,
    run: Option<(u64, u64)>,
    last_ts: Option<u64>,
}

impl FixationTracker {
    pub fn new(th: ThresholdSet, source: ParticipantId) -> Self {
        FixationTracker {
            th,
            source,
            run: None,
            last_ts: None,
        }
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.th
    }

    fn close(&mut self) -> Option<FixationEvent> {
        let (s, e) = self.run.take()?;
        (e - s + 1 >= self.th.min_frames).then(|| FixationEvent {
            source: self.source.clone(),
            start: s,
            end: e,
        })
    }

    /// Feeds the count at `ts`; returns an event when a qualifying run closes.
    pub fn push(&mut self, ts: u64, count: Option<u64>) -> Option<FixationEvent> {
        let contiguous = self.last_ts.is_none_or(|prev| ts == prev + 1);
        self.last_ts = Some(ts);
        let mut closed = None;
        if !contiguous {
            closed = self.close();
        }
        match count.filter(|&c| self.th.in_band(c)) {
            Some(_) => match &mut self.run {
                Some((_, e)) => *e = ts,
                None => self.run = Some((ts, ts)),
            },
            None => {
                if closed.is_none() {
                    closed = self.close();
                } else {
                    self.run = None;
                }
            }
        }
        closed
    }

    /// The open run, if any: `(start, frames so far)`.
    pub fn open_run(&self) -> Option<(u64, u64)> {
        self.run.map(|(s, e)| (s, e - s + 1))
    }

    /// The open run once it is long enough to become an event.
    pub fn confirmed_start(&self) -> Option<u64> {
        self.run
            .filter(|(s, e)| e - s + 1 >= self.th.min_frames)
            .map(|(s, _)| s)
    }

    pub fn finish(&mut self) -> Option<FixationEvent> {
        self.close()
    }
}

/// Picks the student event whose start is nearest the instructor event's
/// start, within `tolerance` frames (ties go to the earlier event). Without a
/// candidate the instructor event is reused on the student's timeline.
pub fn match_student_event(
    instructor_event: &FixationEvent,
    student_events: &[FixationEvent],
    tolerance: u64,
    student: &ParticipantId,
) -> FixationEvent {
    let target = instructor_event.start;
    let best = student_events
        .iter()
        .filter(|e| e.start.abs_diff(target) <= tolerance)
        .min_by_key(|e| (e.start.abs_diff(target), e.start));
    match best {
        Some(e) => e.clone(),
        None => FixationEvent {
            source: student.clone(),
            start: instructor_event.start,
            end: instructor_event.end,
        },
    }
}
