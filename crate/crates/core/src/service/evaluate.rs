//! Cascade evaluation of one instructor fixation event against every student,
//! reading only stored tick features.

use serde::{Deserialize, Serialize};

use crate::config::SessionConfig;
use crate::error::Result;
use crate::fixation::{match_student_event, FixationEvent};
use crate::gaze::{compare_energies, gazing_energy, EnergySeries, ProjectionSample, TTestResult};
use crate::ingest::ParticipantId;
use crate::presence::{contextual_presence, ContextualResult, HistogramDescriptor};
use crate::scoring::{classify_event, EventVerdict, PresenceProbe, ScoredEvent};

use super::features::FeatureStore;

/// Outcome of one instructor event.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedEvent {
    pub index: u64,
    pub event: FixationEvent,
    pub instructor_present: bool,
    pub instructor_distance: Option<f64>,
    /// One per student, in participant order.
    pub verdicts: Vec<EventVerdict>,
    pub matched: Vec<FixationEvent>,
    pub energies: Vec<EnergyRecord>,
}

impl EvaluatedEvent {
    pub fn scored(&self) -> ScoredEvent {
        ScoredEvent {
            instructor_present: self.instructor_present,
            verdicts: self.verdicts.clone(),
        }
    }
}

/// Gazing energies of one instructor/student pair over the event window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub event: u64,
    pub student: ParticipantId,
    pub instructor: Vec<f64>,
    pub energies: Vec<f64>,
    pub p: Option<f64>,
}

pub struct EventContext<'a> {
    pub config: &'a SessionConfig,
    pub store: &'a FeatureStore,
    pub has_presentation: bool,
    /// Participant ids; index 0 is the instructor.
    pub ids: &'a [ParticipantId],
}

impl EventContext<'_> {
    fn n(&self) -> usize {
        self.config.context.frames
    }

    /// First `n` non-gap screen histograms of participant `p` in the window.
    fn screen_hists(&self, p: usize, start: u64, end: u64) -> Vec<HistogramDescriptor> {
        self.store
            .range(start, end)
            .filter_map(|t| t.screen_hists[p].clone())
            .take(self.n())
            .collect()
    }

    fn presentation_hists(&self, start: u64, end: u64) -> Vec<HistogramDescriptor> {
        self.store
            .range(start, end)
            .filter_map(|t| t.presentation_hist.clone())
            .take(self.n())
            .collect()
    }

    fn samples(&self, p: usize, start: u64, end: u64) -> Vec<ProjectionSample> {
        self.store
            .range(start, end)
            .filter_map(|t| t.faces[p].and_then(|o| o.x.map(|x| ProjectionSample { ts: o.ts, x })))
            .collect()
    }

    fn energy(&self, p: usize, event: &FixationEvent) -> EnergySeries {
        gazing_energy(&self.samples(p, event.start, event.end), event.start, event.end, self.config.fps)
    }

    /// The instructor's own screen against the presentation (or against
    /// itself when the instructor screen is the presentation).
    pub fn instructor_contextual(&self, event: &FixationEvent) -> Result<ContextualResult> {
        let c = &self.config.context;
        let instr = self.screen_hists(0, event.start, event.end);
        let reference = if self.has_presentation {
            self.presentation_hists(event.start, event.end)
        } else {
            instr.clone()
        };
        contextual_presence(&reference, &instr, c.frames, c.threshold, c.chi_square)
    }

    /// Every student's verdict for instructor event `index`.
    pub fn evaluate(&self, index: u64, event: &FixationEvent, student_events: &[Vec<FixationEvent>]) -> EvaluatedEvent {
        let (instructor_present, instructor_distance) = match self.instructor_contextual(event) {
            Ok(r) => (r.present, Some(r.min_distance)),
            Err(_) => (false, None),
        };
        let tol = self.config.match_tolerance_frames() as u64;
        let instructor_energy = self.energy(0, event);
        let mut verdicts = Vec::new();
        let mut matched = Vec::new();
        let mut energies = Vec::new();
        for (i, id) in self.ids.iter().enumerate().skip(1) {
            let m = match_student_event(event, &student_events[i], tol, id);
            let mut probe = StoreProbe {
                ctx: self,
                student: i,
                instructor_event: event,
                matched: &m,
                instructor_energy: &instructor_energy,
                student_energy: None,
            };
            let v = classify_event(
                index,
                id,
                &mut probe,
                self.config.gaze.significance_level,
                self.config.scoring.insufficient_data,
            );
            if let Some(se) = probe.student_energy {
                energies.push(EnergyRecord {
                    event: index,
                    student: id.clone(),
                    instructor: instructor_energy.values(),
                    energies: se.values(),
                    p: v.p_value,
                });
            }
            verdicts.push(v);
            matched.push(m);
        }
        EvaluatedEvent {
            index,
            event: event.clone(),
            instructor_present,
            instructor_distance,
            verdicts,
            matched,
            energies,
        }
    }
}

struct StoreProbe<'a> {
    ctx: &'a EventContext<'a>,
    student: usize,
    instructor_event: &'a FixationEvent,
    matched: &'a FixationEvent,
    instructor_energy: &'a EnergySeries,
    student_energy: Option<EnergySeries>,
}

impl PresenceProbe for StoreProbe<'_> {
    fn visual(&mut self) -> bool {
        let (mut seen, mut detected) = (0usize, 0usize);
        for t in self.ctx.store.range(self.matched.start, self.matched.end) {
            if let Some(o) = t.faces[self.student] {
                seen += 1;
                detected += o.detected as usize;
            }
        }
        seen > 0 && detected as f64 >= self.ctx.config.context.visual_fraction * seen as f64
    }

    fn contextual(&mut self) -> Result<ContextualResult> {
        let c = &self.ctx.config.context;
        let instr = self
            .ctx
            .screen_hists(0, self.instructor_event.start, self.instructor_event.end);
        let student = self
            .ctx
            .screen_hists(self.student, self.matched.start, self.matched.end);
        contextual_presence(&instr, &student, c.frames, c.threshold, c.chi_square)
    }

    fn cognitive(&mut self) -> Result<TTestResult> {
        let s = self.ctx.energy(self.student, self.instructor_event);
        let (a, b) = (self.instructor_energy.values(), s.values());
        self.student_energy = Some(s);
        compare_energies(self.ctx.config.gaze.test, &a, &b)
    }
}
