//! The presence cascade per event and the per-segment scores.
//!
//! `C_s = 100 * F_s / f` where `F_s` counts events with cognitive presence and
//! `f` counts the segment's events in which the instructor was contextually
//! present (minus events this student had too little gaze data for).
//! `C_i = 100 * F_i / (events in segment)`. The aggregate is the mean of the
//! non-N/A current scores.

use serde::{Deserialize, Serialize};

use crate::config::InsufficientDataPolicy;
use crate::error::{Error, Result};
use crate::gaze::{cognitive_presence, TTestResult};
use crate::ingest::ParticipantId;
use crate::presence::ContextualResult;
use crate::segmentation::Segment;

/// Lazily evaluated presence tests for one student and one event.
pub trait PresenceProbe {
    fn visual(&mut self) -> bool;
    fn contextual(&mut self) -> Result<ContextualResult>;
    fn cognitive(&mut self) -> Result<TTestResult>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventVerdict {
    /// Index of the instructor fixation event within the session.
    pub event: u64,
    pub student: ParticipantId,
    pub visual: bool,
    pub contextual: Option<bool>,
    pub cognitive: Option<bool>,
    /// Whether the event enters this student's denominator.
    pub counted: bool,
    pub min_distance: Option<f64>,
    pub p_value: Option<f64>,
}

impl EventVerdict {
    pub fn engaged(&self) -> bool {
        self.cognitive == Some(true)
    }
}

/// Visual, then contextual, then cognitive; stops at the first failure.
pub fn classify_event<P: PresenceProbe + ?Sized>(
    event: u64,
    student: &ParticipantId,
    probe: &mut P,
    alpha: f64,
    policy: InsufficientDataPolicy,
) -> EventVerdict {
    let mut v = EventVerdict {
        event,
        student: student.clone(),
        visual: false,
        contextual: None,
        cognitive: None,
        counted: true,
        min_distance: None,
        p_value: None,
    };
    v.visual = probe.visual();
    if !v.visual {
        return v;
    }
    match probe.contextual() {
        Ok(c) => {
            v.contextual = Some(c.present);
            v.min_distance = Some(c.min_distance);
        }
        Err(_) => v.contextual = Some(false),
    }
    if v.contextual != Some(true) {
        return v;
    }
    match probe.cognitive() {
        Ok(t) => {
            v.cognitive = Some(cognitive_presence(&t, alpha));
            v.p_value = Some(t.p);
        }
        Err(Error::InsufficientData(_)) if policy == InsufficientDataPolicy::Exclude => {
            v.counted = false;
        }
        Err(_) => v.cognitive = Some(false),
    }
    v
}

/// Per-student denominator: events with the instructor contextually present
/// that the student's verdict counts.
pub fn count_fixation_denominator(instructor_present: &[bool], student_counted: &[bool]) -> u32 {
    instructor_present
        .iter()
        .zip(student_counted)
        .filter(|(&p, &c)| p && c)
        .count() as u32
}

/// `100 * positive / f`, N/A (`None`) when `f = 0`.
pub fn current_score(positive: u32, f: u32) -> Option<f64> {
    assert!(positive <= f, "F_s = {positive} exceeds f = {f}");
    (f > 0).then(|| 100.0 * positive as f64 / f as f64)
}

/// Mean of the non-N/A scores.
pub fn aggregate_score(scores: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = scores.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Share of events (percent) with the instructor contextually present.
pub fn presentation_score(instructor_present: &[bool]) -> Option<f64> {
    let fi = instructor_present.iter().filter(|&&p| p).count() as u32;
    current_score(fi, instructor_present.len() as u32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentScore {
    pub id: ParticipantId,
    #[serde(rename = "Fs")]
    pub fs: u32,
    pub f: u32,
    #[serde(rename = "Cs")]
    pub cs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScorecard {
    pub segment: u64,
    pub start: u64,
    pub end: u64,
    pub per_student: Vec<StudentScore>,
    pub aggregate: Option<f64>,
    pub events: u32,
    #[serde(rename = "Fi")]
    pub fi: u32,
    #[serde(rename = "Ci")]
    pub ci: Option<f64>,
}

impl SegmentScorecard {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("scorecard serializes")
    }
}

/// One instructor event inside a segment with every student's verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEvent {
    pub instructor_present: bool,
    pub verdicts: Vec<EventVerdict>,
}

pub fn score_segment(
    segment_id: u64,
    segment: &Segment,
    students: &[ParticipantId],
    events: &[ScoredEvent],
) -> SegmentScorecard {
    let flags: Vec<bool> = events.iter().map(|e| e.instructor_present).collect();
    let per_student: Vec<StudentScore> = students
        .iter()
        .map(|id| {
            let verdicts: Vec<Option<&EventVerdict>> = events
                .iter()
                .map(|e| e.verdicts.iter().find(|v| &v.student == id))
                .collect();
            let counted: Vec<bool> = verdicts
                .iter()
                .map(|v| v.is_none_or(|v| v.counted))
                .collect();
            let f = count_fixation_denominator(&flags, &counted);
            let fs = verdicts
                .iter()
                .zip(&flags)
                .filter(|(v, &p)| p && v.is_some_and(|v| v.counted && v.engaged()))
                .count() as u32;
            StudentScore {
                id: id.clone(),
                fs,
                f,
                cs: current_score(fs, f),
            }
        })
        .collect();
    let scores: Vec<Option<f64>> = per_student.iter().map(|s| s.cs).collect();
    SegmentScorecard {
        segment: segment_id,
        start: segment.start,
        end: segment.end,
        aggregate: aggregate_score(&scores),
        per_student,
        events: events.len() as u32,
        fi: flags.iter().filter(|&&p| p).count() as u32,
        ci: presentation_score(&flags),
    }
}

/// Running mean of segment aggregates, each segment weighted equally.
#[derive(Debug, Clone, Default)]
pub struct OverallScore {
    sum: f64,
    n: u32,
}

impl OverallScore {
    pub fn push(&mut self, card: &SegmentScorecard) -> Option<f64> {
        if let Some(a) = card.aggregate {
            self.sum += a;
            self.n += 1;
        }
        self.value()
    }

    pub fn value(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Scripted {
        visual: bool,
        contextual: bool,
        p: Option<f64>,
        log: Vec<&'static str>,
    }

    impl PresenceProbe for Scripted {
        fn visual(&mut self) -> bool {
            self.log.push("visual");
            self.visual
        }
        fn contextual(&mut self) -> Result<ContextualResult> {
            self.log.push("contextual");
            Ok(ContextualResult {
                present: self.contextual,
                min_distance: if self.contextual { 0.1 } else { 1.5 },
            })
        }
        fn cognitive(&mut self) -> Result<TTestResult> {
            self.log.push("cognitive");
            self.p
                .map(|p| TTestResult { t: 0.0, df: 4.0, p })
                .ok_or_else(|| Error::InsufficientData("few windows".into()))
        }
    }

    fn classify(probe: &mut Scripted) -> EventVerdict {
        classify_event(0, &ParticipantId::new("s"), probe, 0.001, InsufficientDataPolicy::Exclude)
    }

    #[test]
    fn cascade_short_circuits() {
        let mut p = Scripted::default();
        let v = classify(&mut p);
        assert_eq!((v.visual, v.contextual, v.cognitive), (false, None, None));
        assert_eq!(p.log, ["visual"]);

        let mut p = Scripted {
            visual: true,
            ..Default::default()
        };
        let v = classify(&mut p);
        assert_eq!((v.contextual, v.cognitive), (Some(false), None));
        assert_eq!(p.log, ["visual", "contextual"]);

        let mut p = Scripted {
            visual: true,
            contextual: true,
            p: Some(0.5),
            ..Default::default()
        };
        let v = classify(&mut p);
        assert!(v.engaged());
        assert_eq!(p.log, ["visual", "contextual", "cognitive"]);
    }

    #[test]
    fn insufficient_data_policy() {
        let mut p = Scripted {
            visual: true,
            contextual: true,
            p: None,
            ..Default::default()
        };
        let v = classify(&mut p);
        assert!(!v.counted);
        assert_eq!(v.cognitive, None);

        let mut p = Scripted {
            visual: true,
            contextual: true,
            p: None,
            ..Default::default()
        };
        let v = classify_event(0, &ParticipantId::new("s"), &mut p, 0.001, InsufficientDataPolicy::NonEngaged);
        assert!(v.counted);
        assert_eq!(v.cognitive, Some(false));
    }

    #[test]
    fn denominators() {
        assert_eq!(count_fixation_denominator(&[true; 4], &[true; 4]), 4);
        assert_eq!(count_fixation_denominator(&[true, true, false, true], &[true; 4]), 3);
        assert_eq!(count_fixation_denominator(&[true, true, true], &[true, false, true]), 2);
    }

    #[test]
    fn score_formulas() {
        assert_eq!(current_score(3, 4), Some(75.0));
        assert_eq!(current_score(0, 5), Some(0.0));
        assert_eq!(current_score(0, 0), None);
        assert_eq!(aggregate_score(&[Some(100.0), Some(50.0)]), Some(75.0));
        assert_eq!(aggregate_score(&[None, Some(80.0)]), Some(80.0));
        assert_eq!(aggregate_score(&[None, None]), None);
        assert_eq!(presentation_score(&[true; 4]), Some(100.0));
        assert_eq!(presentation_score(&[true, false, true, true]), Some(75.0));
        assert_eq!(presentation_score(&[]), None);
    }

    #[test]
    #[should_panic]
    fn positive_count_above_denominator_is_a_bug() {
        current_score(5, 4);
    }

    #[test]
    fn scorecard_serialization_keys() {
        let card = SegmentScorecard {
            segment: 2,
            start: 0,
            end: 99,
            per_student: vec![StudentScore {
                id: ParticipantId::new("s1"),
                fs: 1,
                f: 2,
                cs: Some(50.0),
            }],
            aggregate: Some(50.0),
            events: 2,
            fi: 2,
            ci: Some(100.0),
        };
        assert_eq!(
            card.to_json_line(),
            r#"{"segment":2,"start":0,"end":99,"per_student":[{"id":"s1","Fs":1,"f":2,"Cs":50.0}],"aggregate":50.0,"events":2,"Fi":2,"Ci":100.0}"#
        );
    }
}
