//! From MAP answers to failure verdicts.
//!
//! A prediction is the evidence concatenated with the MAP output, every
//! other event defaulting to 0, matched row by row against the signature
//! matrix.

use chrono::NaiveDateTime;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use thiserror::Error;

use crate::infer::{self, InferError};
use crate::model::{Assignment, EventFailureMatrix, EventId, FailureId, MatrixError};
use crate::modelfile::Model;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("event {0} appears in both the evidence and the output")]
    Overlap(String),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Failure(FailureId),
    Invalid,
}

impl Verdict {
    pub fn describe(&self, m: &EventFailureMatrix) -> String {
        match self {
            Verdict::Failure(f) => format!("Failure {}", m.failure_label(*f)),
            Verdict::Invalid => "invalid event".to_string(),
        }
    }

    pub fn label<'m>(&self, m: &'m EventFailureMatrix) -> &'m str {
        match self {
            Verdict::Failure(f) => m.failure_label(*f),
            Verdict::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub evidence: Assignment,
    pub query: Vec<EventId>,
    /// MAP values of the query events.
    pub output: Assignment,
    /// Evidence ∪ output, remaining events at 0.
    pub assignment: Assignment,
    pub verdict: Verdict,
    /// Posterior probability of `output` given the evidence.
    pub score: f64,
    pub zero_evidence: bool,
}

/// Evidence ∪ output, with every event in neither set to 0.
pub fn assemble(evidence: &Assignment, output: &Assignment, n_events: usize) -> Result<Assignment, PredictError> {
    if let Some(e) = output.events().find(|&e| evidence.contains(e)) {
        return Err(PredictError::Overlap(format!("#{}", e.ordinal())));
    }
    Ok((0..n_events)
        .map(EventId)
        .map(|e| (e, evidence.get(e).or(output.get(e)).unwrap_or(false)))
        .collect())
}

/// The failure whose signature equals `full`, or [`Verdict::Invalid`].
pub fn match_failure(full: &Assignment, m: &EventFailureMatrix) -> Verdict {
    m.match_row(full).map_or(Verdict::Invalid, Verdict::Failure)
}

/// MAP query, assembly and matching in one step. An empty `query` means
/// every event outside the evidence.
pub fn predict(model: &Model, evidence: &Assignment, query: &[EventId]) -> Result<Prediction, PredictError> {
    let n = model.matrix.n_events();
    let query: Vec<EventId> = if query.is_empty() {
        (0..n).map(EventId).filter(|&e| !evidence.contains(e)).collect()
    } else {
        query.to_vec()
    };

    let (output, score, zero_evidence) = if query.is_empty() {
        // Everything observed: nothing to decode, only check the evidence is possible.
        let p = infer::joint_probability(&model.net, evidence)?;
        (Assignment::new(), if p > 0.0 { 1.0 } else { 0.0 }, p == 0.0)
    } else {
        let r = infer::map_query(&model.net, &query, evidence)?;
        (r.assignment, r.score, r.zero_evidence)
    };

    let assignment = assemble(evidence, &output, n)?;
    let verdict = match_failure(&assignment, &model.matrix);
    Ok(Prediction {
        evidence: evidence.clone(),
        query,
        output,
        assignment,
        verdict,
        score,
        zero_evidence,
    })
}

/// `{'E1': '1', 'E2': '0'}`, events in column order.
pub fn format_assignment(m: &EventFailureMatrix, a: &Assignment) -> String {
    let body: Vec<String> = a
        .iter()
        .map(|(e, v)| format!("'{}': '{}'", m.event_label(e), u8::from(v)))
        .collect();
    format!("{{{}}}", body.join(", "))
}

/// Incremental evidence for one monitored node. Every observed event is
/// evidence of occurrence; absence is never asserted.
#[derive(Debug, Clone)]
pub struct Session<'m> {
    model: &'m Model,
    observed: Vec<(Option<NaiveDateTime>, EventId)>,
    latest: Option<Prediction>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self {
            model,
            observed: Vec::new(),
            latest: None,
        }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn observed(&self) -> &[(Option<NaiveDateTime>, EventId)] {
        &self.observed
    }

    pub fn latest(&self) -> Option<&Prediction> {
        self.latest.as_ref()
    }

    pub fn evidence(&self) -> Assignment {
        self.observed.iter().map(|&(_, e)| (e, true)).collect()
    }

    /// `Some(false)` when the first observed event cannot start any failure.
    pub fn started_at_valid_state(&self) -> Option<bool> {
        self.observed
            .first()
            .map(|&(_, e)| self.model.matrix.start_states().contains(&e))
    }

    /// Adds `event` as evidence and re-predicts. A repeated event changes
    /// nothing and re-emits the latest prediction.
    pub fn observe(&mut self, event: EventId, at: Option<NaiveDateTime>) -> Result<Prediction, PredictError> {
        if event.0 >= self.model.matrix.n_events() {
            return Err(MatrixError::UnknownEvent(format!("#{}", event.ordinal())).into());
        }
        if self.observed.iter().any(|&(_, e)| e == event) {
            if let Some(p) = &self.latest {
                return Ok(p.clone());
            }
        }
        self.observed.push((at, event));
        let prediction = predict(self.model, &self.evidence(), &[])?;
        self.latest = Some(prediction.clone());
        Ok(prediction)
    }

    pub fn observe_label(&mut self, label: &str, at: Option<NaiveDateTime>) -> Result<Prediction, PredictError> {
        let event = self.model.matrix.event(label)?;
        self.observe(event, at)
    }

    pub fn reset(&mut self) {
        self.observed.clear();
        self.latest = None;
    }
}

/// Labels-and-values map serialized in column order.
struct Labeled<'a, T> {
    m: &'a EventFailureMatrix,
    items: Vec<(EventId, T)>,
}

impl<T: Serialize> Serialize for Labeled<'_, T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.items.len()))?;
        for (e, v) in &self.items {
            map.serialize_entry(self.m.event_label(*e), v)?;
        }
        map.end()
    }
}

/// One machine-readable line of `predict` output.
#[derive(Serialize)]
pub struct PredictionRecord<'a> {
    pub timestamp: Option<String>,
    pub observed: Vec<&'a str>,
    assignment: Labeled<'a, u8>,
    pub verdict: &'a str,
    pub score: f64,
    pub zero_evidence: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    marginals: Option<Labeled<'a, f64>>,
}

impl<'a> PredictionRecord<'a> {
    pub fn new(
        m: &'a EventFailureMatrix,
        session: &Session<'_>,
        prediction: &Prediction,
        marginals: Option<&[f64]>,
    ) -> Self {
        let timestamp = session
            .observed()
            .last()
            .and_then(|(t, _)| t.as_ref())
            .map(|t| t.format("%Y-%m-%dT%H:%M:%S%.f").to_string());
        Self {
            timestamp,
            observed: session.observed().iter().map(|&(_, e)| m.event_label(e)).collect(),
            assignment: Labeled {
                m,
                items: prediction.assignment.iter().map(|(e, v)| (e, u8::from(v))).collect(),
            },
            verdict: prediction.verdict.label(m),
            score: round6(prediction.score),
            zero_evidence: prediction.zero_evidence,
            marginals: marginals.map(|ms| Labeled {
                m,
                items: ms.iter().enumerate().map(|(i, &p)| (EventId(i), round6(p))).collect(),
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::PowerLawSpec;
    use crate::model::parse_matrix;
    use crate::modelfile::Structure;

    const EXAMPLE: &str = include_str!("../../../fixtures/example_matrix.csv");

    fn example_model() -> Model {
        let m = parse_matrix(EXAMPLE).unwrap();
        Model::augment(m, &PowerLawSpec::new(2.0, 5, 10_000).with_scale(0.7), &Structure::Window(2)).unwrap()
    }

    fn e(i: usize) -> EventId {
        EventId(i - 1)
    }

    fn ev(ones: &[usize]) -> Assignment {
        ones.iter().map(|&i| (e(i), true)).collect()
    }

    fn bits(a: &Assignment) -> Vec<u8> {
        a.iter().map(|(_, v)| u8::from(v)).collect()
    }

    #[test]
    fn assemble_fills_zeros() {
        let out: Assignment = [(e(5), true)].into_iter().collect();
        assert_eq!(bits(&assemble(&ev(&[2, 4]), &out, 5).unwrap()), [0, 1, 0, 1, 1]);

        let out: Assignment = [(e(4), false)].into_iter().collect();
        assert_eq!(bits(&assemble(&ev(&[1, 3, 5]), &out, 5).unwrap()), [1, 0, 1, 0, 1]);

        let full: Assignment = (0..5).map(|i| (EventId(i), i % 2 == 0)).collect();
        assert_eq!(assemble(&Assignment::new(), &full, 5).unwrap(), full);

        assert!(matches!(
            assemble(&ev(&[1]), &ev(&[1]), 5),
            Err(PredictError::Overlap(_))
        ));
    }

    #[test]
    fn matching_against_rows() {
        let m = parse_matrix(EXAMPLE).unwrap();
        let a = |b: [u8; 5]| -> Assignment { b.iter().enumerate().map(|(i, &v)| (EventId(i), v == 1)).collect() };
        assert_eq!(match_failure(&a([1, 1, 0, 1, 1]), &m), Verdict::Failure(FailureId(0)));
        assert_eq!(match_failure(&a([1, 1, 1, 1, 0]), &m), Verdict::Invalid);
        assert_eq!(match_failure(&a([1, 0, 1, 0, 1]), &m), Verdict::Failure(FailureId(4)));
        for f in m.failure_ids() {
            assert_eq!(match_failure(&m.failure_signature(f).unwrap(), &m), Verdict::Failure(f));
        }
    }

    #[test]
    fn session_follows_f2_narrative() {
        let model = example_model();
        let mut s = Session::new(&model);
        assert_eq!(s.observe_label("E1", None).unwrap().verdict, Verdict::Failure(FailureId(0)));
        assert_eq!(s.observe_label("E2", None).unwrap().verdict, Verdict::Failure(FailureId(0)));
        assert_eq!(s.observe_label("E3", None).unwrap().verdict, Verdict::Failure(FailureId(1)));
        let p = s.observe_label("E4", None).unwrap();
        assert_eq!(p.verdict, Verdict::Invalid);
        assert!(p.zero_evidence);
        assert_eq!(s.started_at_valid_state(), Some(true));
    }

    #[test]
    fn duplicate_observations_are_idempotent() {
        let model = example_model();
        let mut s = Session::new(&model);
        let first = s.observe_label("E1", None).unwrap();
        let again = s.observe_label("E1", None).unwrap();
        assert_eq!(first, again);
        assert_eq!(s.observed().len(), 1);
        assert!(s.observe_label("E9", None).is_err());
        s.reset();
        assert!(s.latest().is_none());
        assert!(s.observed().is_empty());
    }

    #[test]
    fn off_start_first_event_is_reported() {
        let model = example_model();
        let mut s = Session::new(&model);
        s.observe_label("E4", None).unwrap();
        assert_eq!(s.started_at_valid_state(), Some(false));
    }

    #[test]
    fn all_events_observed() {
        let model = example_model();
        let p = predict(&model, &model.matrix.failure_signature(FailureId(0)).unwrap(), &[]).unwrap();
        assert!(p.output.is_empty());
        assert_eq!(p.verdict, Verdict::Failure(FailureId(0)));
        assert!(!p.zero_evidence);
        let p = predict(&model, &ev(&[1, 2, 3, 4, 5]), &[]).unwrap();
        assert!(p.zero_evidence);
        assert_eq!(p.verdict, Verdict::Invalid);
    }

    #[test]
    fn every_sequence_ends_at_its_most_frequent_superset() {
        // Oracle straight from the matrix rows: among failures whose signature
        // contains every observed event, the most populous one wins.
        let model = example_model();
        let m = &model.matrix;
        let counts = &model.net.provenance().unwrap().counts;
        let mut reached = Vec::new();
        for f in m.failure_ids() {
            let seq = m.event_sequence(f).unwrap();
            let expected = m
                .failure_ids()
                .filter(|&g| seq.iter().all(|&e| m.entry(g, e)))
                .max_by_key(|g| counts[g.0])
                .unwrap();
            let mut s = Session::new(&model);
            let mut last = None;
            for &ev in &seq {
                last = Some(s.observe(ev, None).unwrap());
            }
            let verdict = last.unwrap().verdict;
            assert_eq!(verdict, Verdict::Failure(expected), "sequence of {}", m.failure_label(f));
            reached.push(verdict.label(m).to_string());
        }
        // F3 and F5 are subsets of the more frequent F1 and F2.
        assert_eq!(reached, ["F1", "F2", "F1", "F4", "F2"]);
    }

    #[test]
    fn record_keeps_column_order() {
        let model = example_model();
        let mut s = Session::new(&model);
        let t = NaiveDateTime::parse_from_str("2024-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap();
        let p = s.observe_label("E1", Some(t)).unwrap();
        let json = PredictionRecord::new(&model.matrix, &s, &p, None).to_json();
        assert!(json.contains(r#""assignment":{"E1":1,"E2":1,"E3":0,"E4":1,"E5":1}"#), "{json}");
        assert!(json.contains(r#""verdict":"F1""#));
        assert!(json.contains(r#""timestamp":"2024-01-01T00:00:00""#));
        assert!(!json.contains("marginals"));
    }

    #[test]
    fn dict_style_dict() {
        let model = example_model();
        assert_eq!(
            format_assignment(&model.matrix, &ev(&[1, 2])),
            "{'E1': '1', 'E2': '1'}"
        );
    }
}
