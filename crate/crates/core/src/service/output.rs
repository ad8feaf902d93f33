//! JSONL result files and debug exports.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::predictions_from_scorecards;
use crate::foreground::ForegroundMask;
use crate::ingest::{write_pbm, ParticipantId};

use super::offline::{SessionOutcome, TickSink};
use super::features::TickFeatures;
use super::ScoreEvent;

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct SegmentRecord {
    segment: u64,
    start: u64,
    end: u64,
    significant: bool,
}

#[derive(Serialize)]
struct EventRecord<'a> {
    source: &'a ParticipantId,
    role: &'static str,
    start: u64,
    end: u64,
}

#[derive(Serialize)]
struct InstructorRecord<'a> {
    event: u64,
    start: u64,
    end: u64,
    instructor_present: bool,
    min_distance: Option<f64>,
    matched: Vec<MatchRecord<'a>>,
}

#[derive(Serialize)]
struct MatchRecord<'a> {
    student: &'a ParticipantId,
    start: u64,
    end: u64,
}

/// Writes `scorecards.jsonl`, `verdicts.jsonl`, `predictions.jsonl` and,
/// when given, `score_events.jsonl` into `dir`.
pub fn write_results(dir: &Path, outcome: &SessionOutcome, events: Option<&[ScoreEvent]>, cutoff: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join("scorecards.jsonl"), &outcome.scorecards)?;
    write_jsonl(
        &dir.join("verdicts.jsonl"),
        outcome.evaluated.iter().flat_map(|e| e.verdicts.iter()),
    )?;
    write_jsonl(
        &dir.join("predictions.jsonl"),
        predictions_from_scorecards(&outcome.scorecards, cutoff),
    )?;
    if let Some(events) = events {
        write_jsonl(&dir.join("score_events.jsonl"), events)?;
    }
    Ok(())
}

/// Writes events, segments, instructor event details and gazing energies.
pub fn write_debug(dir: &Path, outcome: &SessionOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(
        &dir.join("segments.jsonl"),
        outcome.segments.iter().enumerate().map(|(i, s)| SegmentRecord {
            segment: i as u64,
            start: s.start,
            end: s.end,
            significant: s.significant,
        }),
    )?;
    let instructor = outcome.instructor_events.iter().map(|e| EventRecord {
        source: &e.source,
        role: "instructor",
        start: e.start,
        end: e.end,
    });
    let students = outcome.student_events.iter().flatten().map(|e| EventRecord {
        source: &e.source,
        role: "student",
        start: e.start,
        end: e.end,
    });
    write_jsonl(&dir.join("events.jsonl"), instructor.chain(students))?;
    write_jsonl(
        &dir.join("instructor_events.jsonl"),
        outcome.evaluated.iter().map(|e| InstructorRecord {
            event: e.index,
            start: e.event.start,
            end: e.event.end,
            instructor_present: e.instructor_present,
            min_distance: e.instructor_distance,
            matched: e
                .matched
                .iter()
                .zip(outcome.students())
                .map(|(m, id)| MatchRecord {
                    student: id,
                    start: m.start,
                    end: m.end,
                })
                .collect(),
        }),
    )?;
    write_jsonl(
        &dir.join("energies.jsonl"),
        outcome.evaluated.iter().flat_map(|e| e.energies.iter()),
    )
}

#[derive(Serialize)]
struct ProjectionRecord<'a> {
    participant: &'a ParticipantId,
    ts: u64,
    detected: bool,
    x: Option<f64>,
}

/// Per-tick debug exporter: `projections.jsonl` and, optionally, one PBM
/// reference mask per tick under `masks/`.
pub struct DebugSink {
    projections: BufWriter<File>,
    path: PathBuf,
    masks: Option<PathBuf>,
}

impl DebugSink {
    pub fn create(dir: &Path, masks: bool) -> Result<DebugSink> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("projections.jsonl");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let masks = if masks {
            let m = dir.join("masks");
            fs::create_dir_all(&m).map_err(|e| Error::io(&m, e))?;
            Some(m)
        } else {
            None
        };
        Ok(DebugSink {
            projections: BufWriter::new(file),
            path,
            masks,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.projections.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl TickSink for DebugSink {
    fn tick(&mut self, ids: &[ParticipantId], features: &TickFeatures, mask: Option<&ForegroundMask>) -> Result<()> {
        for (id, obs) in ids.iter().zip(&features.faces) {
            let Some(o) = obs else { continue };
            let rec = ProjectionRecord {
                participant: id,
                ts: o.ts,
                detected: o.detected,
                x: o.x,
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(self.projections, "{line}").map_err(|e| Error::io(&self.path, e))?;
        }
        if let (Some(dir), Some(m)) = (&self.masks, mask) {
            write_pbm(dir.join(format!("{:08}.pbm", features.ts)), m.width(), m.height(), m.bits())?;
        }
        Ok(())
    }
}
