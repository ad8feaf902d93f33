//! Session orchestration: offline and live pipelines, the score feed and the
//! mode-command endpoint.

mod evaluate;
mod features;
pub mod feed;
mod live;
mod offline;
pub mod output;
mod runner;

pub use evaluate::{EnergyRecord, EvaluatedEvent, EventContext};
pub use features::{participant_order, reference_frame, FeatureExtractor, FeatureStore, TickFeatures};
pub use live::{Engine, LiveSegmenter};
pub use offline::{analyze_streams, analyze_ticks, participant_ids, score_segments, SessionOutcome, TickSink};
pub use runner::{benchmark, run_live, BenchReport, DropPolicy, LiveOptions, LiveReport};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ModeKind, SegmentMode, SliceLength};
use crate::error::{Error, Result};
use crate::scoring::SegmentScorecard;

/// Schema version of feed events, snapshots and commands.
pub const FEED_VERSION: u32 = 1;

/// One closed, scored segment as published on the feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreEvent {
    pub version: u32,
    /// Position in the session's event sequence, from 0 without gaps.
    pub seq: u64,
    /// Wall-clock emission time, Unix milliseconds.
    pub wall_ms: u64,
    pub segment: u64,
    pub mode: ModeKind,
    pub slice_minutes: Option<u32>,
    pub scorecard: SegmentScorecard,
    /// Running mean of segment aggregates so far.
    pub overall: Option<f64>,
    /// Screen frames discarded under overload so far.
    pub dropped_frames: u64,
}

impl ScoreEvent {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("score event serializes")
    }
}

/// A mode-change request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    pub mode: ModeKind,
    #[serde(default)]
    pub slice: Option<SliceLength>,
}

impl Command {
    /// Parses and validates a command document.
    pub fn parse(body: &str) -> Result<Command> {
        let cmd: Command = serde_json::from_str(body).map_err(|e| Error::Command(e.to_string()))?;
        cmd.segment_mode()?;
        Ok(cmd)
    }

    pub fn segment_mode(&self) -> Result<SegmentMode> {
        match (self.mode, self.slice) {
            (ModeKind::Automatic, _) => Ok(SegmentMode::Automatic),
            (ModeKind::Manual, Some(slice)) => Ok(SegmentMode::Manual { slice }),
            (ModeKind::Manual, None) => Err(Error::Command("manual mode requires `slice` (3, 5 or 15)".into())),
        }
    }

    pub fn from_mode(mode: SegmentMode) -> Command {
        match mode {
            SegmentMode::Automatic => Command {
                mode: ModeKind::Automatic,
                slice: None,
            },
            SegmentMode::Manual { slice } => Command {
                mode: ModeKind::Manual,
                slice: Some(slice),
            },
        }
    }
}

fn expect_keys(obj: &serde_json::Map<String, Value>, allowed: &[&str], at: &str) -> Result<()> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::invalid(at, format!("field `{k}` is not part of the feed schema")));
        }
    }
    for k in allowed {
        if !obj.contains_key(*k) {
            return Err(Error::invalid(at, format!("missing field `{k}`")));
        }
    }
    Ok(())
}

fn object<'a>(v: &'a Value, at: &str) -> Result<&'a serde_json::Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::invalid(at, "expected an object"))
}

fn scalar(v: &Value, at: &str, kind: &str) -> Result<()> {
    let ok = match kind {
        "uint" => v.as_u64().is_some(),
        "number" => v.is_number(),
        "number?" => v.is_number() || v.is_null(),
        "uint?" => v.as_u64().is_some() || v.is_null(),
        "id" => v.as_str().is_some_and(|s| s.len() <= 128),
        "mode" => matches!(v.as_str(), Some("automatic" | "manual")),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(at, format!("expected {kind}, got {v}")))
    }
}

/// Checks a serialized feed event against the published schema: only
/// identifiers, counts and scores may appear, never image or landmark data.
pub fn validate_feed_event(v: &Value) -> Result<()> {
    let o = object(v, "event")?;
    expect_keys(
        o,
        &["version", "seq", "wall_ms", "segment", "mode", "slice_minutes", "scorecard", "overall", "dropped_frames"],
        "event",
    )?;
    for (k, kind) in [
        ("version", "uint"),
        ("seq", "uint"),
        ("wall_ms", "uint"),
        ("segment", "uint"),
        ("mode", "mode"),
        ("slice_minutes", "uint?"),
        ("overall", "number?"),
        ("dropped_frames", "uint"),
    ] {
        scalar(&o[k], &format!("event.{k}"), kind)?;
    }
    let card = object(&o["scorecard"], "scorecard")?;
    expect_keys(card, &["segment", "start", "end", "per_student", "aggregate", "events", "Fi", "Ci"], "scorecard")?;
    for (k, kind) in [
        ("segment", "uint"),
        ("start", "uint"),
        ("end", "uint"),
        ("aggregate", "number?"),
        ("events", "uint"),
        ("Fi", "uint"),
        ("Ci", "number?"),
    ] {
        scalar(&card[k], &format!("scorecard.{k}"), kind)?;
    }
    let students = card["per_student"]
        .as_array()
        .ok_or_else(|| Error::invalid("scorecard.per_student", "expected an array"))?;
    for s in students {
        let s = object(s, "per_student[]")?;
        expect_keys(s, &["id", "Fs", "f", "Cs"], "per_student[]")?;
        for (k, kind) in [("id", "id"), ("Fs", "uint"), ("f", "uint"), ("Cs", "number?")] {
            scalar(&s[k], &format!("per_student[].{k}"), kind)?;
        }
    }
    Ok(())
}
