//! Events, failures and the event-failure signature matrix.
//!
//! Each matrix row is the binary signature of one failure: a `1` in column
//! `i` means event `i` must occur for that failure. Column order is temporal
//! precedence, so the 1-entries of a row read left to right give the event
//! sequence leading to the failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position of an event column, stored zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId(pub usize);

impl EventId {
    /// 1-based column ordinal.
    pub fn ordinal(self) -> usize {
        self.0 + 1
    }
}

/// Position of a failure row, stored zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FailureId(pub usize);

impl FailureId {
    /// 1-based row ordinal.
    pub fn ordinal(self) -> usize {
        self.0 + 1
    }
}

/// Values for a subset of events. Keys iterate in column order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment(BTreeMap<EventId, bool>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, event: EventId, value: bool) -> Option<bool> {
        self.0.insert(event, value)
    }

    pub fn get(&self, event: EventId) -> Option<bool> {
        self.0.get(&event).copied()
    }

    pub fn contains(&self, event: EventId) -> bool {
        self.0.contains_key(&event)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = EventId> + '_ {
        self.0.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EventId, bool)> + '_ {
        self.0.iter().map(|(&e, &v)| (e, v))
    }

    /// True when every event in `0..n_events` has a value and nothing else does.
    pub fn is_full(&self, n_events: usize) -> bool {
        self.0.len() == n_events && self.0.keys().all(|e| e.0 < n_events)
    }

    /// Events set to 1, in column order.
    pub fn occurred(&self) -> Vec<EventId> {
        self.iter().filter(|&(_, v)| v).map(|(e, _)| e).collect()
    }
}

impl FromIterator<(EventId, bool)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (EventId, bool)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("matrix text is empty")]
    Empty,
    #[error("line 1: header must start with `failure` followed by at least one event label")]
    BadHeader,
    #[error("line {line}: duplicate event label `{label}`")]
    DuplicateEvent { line: usize, label: String },
    #[error("line {line}: duplicate failure label `{label}`")]
    DuplicateFailure { line: usize, label: String },
    #[error("line {line}: expected {expected} event columns, found {found}")]
    RowLength {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: entry `{value}` for event {event} is not 0 or 1")]
    NonBinary {
        line: usize,
        event: String,
        value: String,
    },
    #[error("line {line}: failure {label} has identical signature to failure {previous}")]
    DuplicateRow {
        line: usize,
        label: String,
        previous: String,
    },
    #[error("line {line}: failure {label} has no event set to 1")]
    EmptyRow { line: usize, label: String },
    #[error("matrix has no failure rows")]
    NoRows,
    #[error("{failures} failure labels but {rows} signature rows")]
    RowCount { failures: usize, rows: usize },
    #[error("unknown failure `{0}`")]
    UnknownFailure(String),
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
}

/// Binary failure-signature matrix, `failures × events`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct EventFailureMatrix {
    events: Vec<String>,
    failures: Vec<String>,
    rows: Vec<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    events: Vec<String>,
    failures: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl TryFrom<RawMatrix> for EventFailureMatrix {
    type Error = MatrixError;

    fn try_from(raw: RawMatrix) -> Result<Self, Self::Error> {
        let rows = raw
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .map(|(c, &v)| match v {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(MatrixError::NonBinary {
                            line: r + 2,
                            event: raw.events.get(c).cloned().unwrap_or_default(),
                            value: other.to_string(),
                        }),
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        EventFailureMatrix::new(raw.events, raw.failures, rows)
    }
}

impl From<EventFailureMatrix> for RawMatrix {
    fn from(m: EventFailureMatrix) -> Self {
        RawMatrix {
            rows: m
                .rows
                .iter()
                .map(|row| row.iter().map(|&b| u8::from(b)).collect())
                .collect(),
            events: m.events,
            failures: m.failures,
        }
    }
}

impl EventFailureMatrix {
    /// Builds a matrix, checking every invariant. Line numbers in errors assume
    /// the CSV layout (header on line 1, failure `r` on line `r + 2`).
    pub fn new(
        events: Vec<String>,
        failures: Vec<String>,
        rows: Vec<Vec<bool>>,
    ) -> Result<Self, MatrixError> {
        let lines: Vec<usize> = (0..rows.len()).map(|r| r + 2).collect();
        Self::with_lines(events, failures, rows, &lines)
    }

    fn with_lines(
        events: Vec<String>,
        failures: Vec<String>,
        rows: Vec<Vec<bool>>,
        lines: &[usize],
    ) -> Result<Self, MatrixError> {
        if events.is_empty() {
            return Err(MatrixError::BadHeader);
        }
        let mut seen = BTreeSet::new();
        for label in &events {
            if !seen.insert(label.as_str()) {
                return Err(MatrixError::DuplicateEvent {
                    line: 1,
                    label: label.clone(),
                });
            }
        }
        if failures.is_empty() {
            return Err(MatrixError::NoRows);
        }
        if failures.len() != rows.len() {
            return Err(MatrixError::RowCount {
                failures: failures.len(),
                rows: rows.len(),
            });
        }

        let mut failure_seen = BTreeSet::new();
        let mut signatures: HashMap<&[bool], usize> = HashMap::new();
        for (r, (label, row)) in failures.iter().zip(&rows).enumerate() {
            let line = lines[r];
            if !failure_seen.insert(label.as_str()) {
                return Err(MatrixError::DuplicateFailure {
                    line,
                    label: label.clone(),
                });
            }
            if row.len() != events.len() {
                return Err(MatrixError::RowLength {
                    line,
                    expected: events.len(),
                    found: row.len(),
                });
            }
            if !row.iter().any(|&b| b) {
                return Err(MatrixError::EmptyRow {
                    line,
                    label: label.clone(),
                });
            }
            if let Some(&prev) = signatures.get(row.as_slice()) {
                return Err(MatrixError::DuplicateRow {
                    line,
                    label: label.clone(),
                    previous: failures[prev].clone(),
                });
            }
            signatures.insert(row.as_slice(), r);
        }

        Ok(Self {
            events,
            failures,
            rows,
        })
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    pub fn n_failures(&self) -> usize {
        self.failures.len()
    }

    pub fn event_labels(&self) -> &[String] {
        &self.events
    }

    pub fn failure_labels(&self) -> &[String] {
        &self.failures
    }

    pub fn event_ids(&self) -> impl Iterator<Item = EventId> {
        (0..self.events.len()).map(EventId)
    }

    pub fn failure_ids(&self) -> impl Iterator<Item = FailureId> {
        (0..self.failures.len()).map(FailureId)
    }

    pub fn event_label(&self, e: EventId) -> &str {
        &self.events[e.0]
    }

    pub fn failure_label(&self, f: FailureId) -> &str {
        &self.failures[f.0]
    }

    pub fn event(&self, label: &str) -> Result<EventId, MatrixError> {
        self.events
            .iter()
            .position(|l| l == label)
            .map(EventId)
            .ok_or_else(|| MatrixError::UnknownEvent(label.to_string()))
    }

    pub fn failure(&self, label: &str) -> Result<FailureId, MatrixError> {
        self.failures
            .iter()
            .position(|l| l == label)
            .map(FailureId)
            .ok_or_else(|| MatrixError::UnknownFailure(label.to_string()))
    }

    pub fn entry(&self, f: FailureId, e: EventId) -> bool {
        self.rows[f.0][e.0]
    }

    pub fn row(&self, f: FailureId) -> &[bool] {
        &self.rows[f.0]
    }

    fn check_failure(&self, f: FailureId) -> Result<(), MatrixError> {
        if f.0 < self.failures.len() {
            Ok(())
        } else {
            Err(MatrixError::UnknownFailure(format!("#{}", f.ordinal())))
        }
    }

    /// The full assignment equal to row `f`.
    pub fn failure_signature(&self, f: FailureId) -> Result<Assignment, MatrixError> {
        self.check_failure(f)?;
        Ok(self
            .rows[f.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| (EventId(i), v))
            .collect())
    }

    /// Events that must occur for `f`, in temporal (column) order.
    pub fn event_sequence(&self, f: FailureId) -> Result<Vec<EventId>, MatrixError> {
        self.check_failure(f)?;
        Ok(self.rows[f.0]
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v)
            .map(|(i, _)| EventId(i))
            .collect())
    }

    /// First event of every failure's sequence.
    pub fn start_states(&self) -> BTreeSet<EventId> {
        self.rows
            .iter()
            .filter_map(|row| row.iter().position(|&v| v).map(EventId))
            .collect()
    }

    /// The failure whose signature equals `full`, if any.
    pub fn match_row(&self, full: &Assignment) -> Option<FailureId> {
        if !full.is_full(self.n_events()) {
            return None;
        }
        self.rows
            .iter()
            .position(|row| row.iter().enumerate().all(|(i, &v)| full.get(EventId(i)) == Some(v)))
            .map(FailureId)
    }

    /// Renders the matrix in its CSV file layout.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("failure");
        for e in &self.events {
            out.push(',');
            out.push_str(e);
        }
        out.push('\n');
        for (label, row) in self.failures.iter().zip(&self.rows) {
            out.push_str(label);
            for &v in row {
                out.push_str(if v { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the CSV matrix file: header `failure,<event>,...` then one
/// `<failure>,0|1,...` line per failure. Blank lines are skipped.
pub fn parse_matrix(text: &str) -> Result<EventFailureMatrix, MatrixError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (_, header) = lines.next().ok_or(MatrixError::Empty)?;
    let mut cols = header.split(',').map(str::trim);
    if cols.next() != Some("failure") {
        return Err(MatrixError::BadHeader);
    }
    let events: Vec<String> = cols.map(String::from).collect();
    if events.is_empty() || events.iter().any(String::is_empty) {
        return Err(MatrixError::BadHeader);
    }

    let mut failures = Vec::new();
    let mut rows = Vec::new();
    let mut row_lines = Vec::new();
    for (line, text) in lines {
        let mut cols = text.split(',').map(str::trim);
        let label = cols.next().unwrap_or_default().to_string();
        let cells: Vec<&str> = cols.collect();
        if cells.len() != events.len() {
            return Err(MatrixError::RowLength {
                line,
                expected: events.len(),
                found: cells.len(),
            });
        }
        let row = cells
            .iter()
            .zip(&events)
            .map(|(&cell, event)| match cell {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(MatrixError::NonBinary {
                    line,
                    event: event.clone(),
                    value: other.to_string(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        failures.push(label);
        rows.push(row);
        row_lines.push(line);
    }

    EventFailureMatrix::with_lines(events, failures, rows, &row_lines)
}

impl fmt::Display for EventFailureMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = include_str!("../../../fixtures/example_matrix.csv");

    fn bits(a: &Assignment) -> Vec<u8> {
        a.iter().map(|(_, v)| u8::from(v)).collect()
    }

    fn labels(m: &EventFailureMatrix, seq: &[EventId]) -> Vec<String> {
        seq.iter().map(|&e| m.event_label(e).to_string()).collect()
    }

    #[test]
    fn parses_example_matrix() {
        let m = parse_matrix(EXAMPLE).unwrap();
        assert_eq!(m.n_events(), 5);
        assert_eq!(m.n_failures(), 5);
        assert_eq!(m.row(FailureId(0)), &[true, true, false, true, true]);
        assert_eq!(m.failure_label(FailureId(4)), "F5");
        assert_eq!(m.to_csv(), EXAMPLE);
    }

    #[test]
    fn parses_minimal_matrix() {
        let m = parse_matrix("failure,E1\nF1,1\n").unwrap();
        assert_eq!(m.n_events(), 1);
        assert_eq!(m.n_failures(), 1);
        assert!(m.entry(FailureId(0), EventId(0)));
    }

    #[test]
    fn parse_errors_are_distinct() {
        assert_eq!(
            parse_matrix("failure,E1,E2\nF1,1,0\nF2,1,0\n"),
            Err(MatrixError::DuplicateRow {
                line: 3,
                label: "F2".into(),
                previous: "F1".into()
            })
        );
        assert_eq!(
            parse_matrix("failure,E1,E2\nF1,1\n"),
            Err(MatrixError::RowLength {
                line: 2,
                expected: 2,
                found: 1
            })
        );
        assert!(matches!(
            parse_matrix("failure,E1,E2\nF1,1,2\n"),
            Err(MatrixError::NonBinary { line: 2, .. })
        ));
        assert!(matches!(
            parse_matrix("failure,E1,E2\nF1,0,0\n"),
            Err(MatrixError::EmptyRow { line: 2, .. })
        ));
        assert_eq!(parse_matrix(""), Err(MatrixError::Empty));
        assert_eq!(parse_matrix("id,E1\nF1,1\n"), Err(MatrixError::BadHeader));
        assert_eq!(parse_matrix("failure,E1\n"), Err(MatrixError::NoRows));
        assert!(matches!(
            parse_matrix("failure,E1,E1\nF1,1,0\n"),
            Err(MatrixError::DuplicateEvent { .. })
        ));
    }

    #[test]
    fn signatures_match_rows() {
        let m = parse_matrix(EXAMPLE).unwrap();
        assert_eq!(bits(&m.failure_signature(FailureId(2)).unwrap()), [0, 1, 0, 1, 1]);
        assert_eq!(bits(&m.failure_signature(FailureId(0)).unwrap()), [1, 1, 0, 1, 1]);
        assert!(m.failure_signature(FailureId(9)).is_err());

        let one = parse_matrix("failure,E1\nF1,1\n").unwrap();
        assert_eq!(bits(&one.failure_signature(FailureId(0)).unwrap()), [1]);
    }

    #[test]
    fn event_sequences() {
        let m = parse_matrix(EXAMPLE).unwrap();
        let seq = |f| labels(&m, &m.event_sequence(FailureId(f)).unwrap());
        assert_eq!(seq(1), ["E1", "E2", "E3", "E5"]);
        assert_eq!(seq(3), ["E1", "E3", "E4"]);
        assert_eq!(seq(2), ["E2", "E4", "E5"]);
        assert!(m.event_sequence(FailureId(5)).is_err());
    }

    #[test]
    fn start_states_of_example_matrix() {
        let m = parse_matrix(EXAMPLE).unwrap();
        let starts: Vec<_> = m.start_states().into_iter().collect();
        assert_eq!(starts, [EventId(0), EventId(1)]);

        let m = parse_matrix("failure,E1,E2\nF1,1,0\n").unwrap();
        assert_eq!(m.start_states().into_iter().collect::<Vec<_>>(), [EventId(0)]);

        let m = parse_matrix("failure,E1,E2,E3\nF1,0,1,0\nF2,0,1,1\n").unwrap();
        assert_eq!(m.start_states().into_iter().collect::<Vec<_>>(), [EventId(1)]);
    }

    #[test]
    fn sequence_round_trips_to_signature() {
        let m = parse_matrix(EXAMPLE).unwrap();
        for f in m.failure_ids() {
            let seq = m.event_sequence(f).unwrap();
            let rebuilt: Assignment = m.event_ids().map(|e| (e, seq.contains(&e))).collect();
            assert_eq!(rebuilt, m.failure_signature(f).unwrap());
            assert_eq!(m.match_row(&rebuilt), Some(f));
        }
    }

    #[test]
    fn serde_rejects_invalid_matrix() {
        let m = parse_matrix(EXAMPLE).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: EventFailureMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"events":["E1"],"failures":["F1","F2"],"rows":[[1],[1]]}"#;
        assert!(serde_json::from_str::<EventFailureMatrix>(bad).is_err());
    }
}
