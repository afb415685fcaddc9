//! The event DAG underlying the Bayesian network.
//!
//! Nodes are events in column order and every edge points forward in that
//! order, so the node list is itself a topological order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EventFailureMatrix, EventId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("edge {parent} -> {child} points backwards in event order")]
    BackwardEdge { parent: String, child: String },
    #[error("edge {0} -> {0} is a self loop, which makes the graph cyclic")]
    Cycle(String),
    #[error("duplicate edge {parent} -> {child}")]
    DuplicateEdge { parent: String, child: String },
    #[error("duplicate event label `{0}`")]
    DuplicateEvent(String),
    #[error("line {line}: expected `<parent> -> <child>`, found `{text}`")]
    EdgeSyntax { line: usize, text: String },
    #[error("window must be at least 1")]
    ZeroWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDag {
    labels: Vec<String>,
    parents: Vec<Vec<EventId>>,
}

impl EventDag {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, e: EventId) -> &str {
        &self.labels[e.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = EventId> {
        (0..self.labels.len()).map(EventId)
    }

    pub fn event(&self, label: &str) -> Option<EventId> {
        self.labels.iter().position(|l| l == label).map(EventId)
    }

    /// Parents of `e`, in ascending event order.
    pub fn parents(&self, e: EventId) -> &[EventId] {
        &self.parents[e.0]
    }

    pub fn roots(&self) -> impl Iterator<Item = EventId> + '_ {
        self.nodes().filter(|&e| self.parents[e.0].is_empty())
    }

    /// All edges as `(parent, child)`, ordered by child then parent.
    pub fn edges(&self) -> Vec<(EventId, EventId)> {
        self.nodes()
            .flat_map(|c| self.parents[c.0].iter().map(move |&p| (p, c)))
            .collect()
    }

    /// Re-checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<(), GraphError> {
        for (c, ps) in self.parents.iter().enumerate() {
            for (i, &p) in ps.iter().enumerate() {
                if p.0 >= self.labels.len() {
                    return Err(GraphError::UnknownEvent(format!("#{}", p.ordinal())));
                }
                if p.0 == c {
                    return Err(GraphError::Cycle(self.labels[c].clone()));
                }
                if p.0 > c {
                    return Err(GraphError::BackwardEdge {
                        parent: self.labels[p.0].clone(),
                        child: self.labels[c].clone(),
                    });
                }
                if ps[..i].contains(&p) {
                    return Err(GraphError::DuplicateEdge {
                        parent: self.labels[p.0].clone(),
                        child: self.labels[c].clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Sliding-window structure: each event's parents are its `window` immediate
/// predecessors in column order. `window = 1` gives a chain.
pub fn build_dag(m: &EventFailureMatrix, window: usize) -> Result<EventDag, GraphError> {
    build_window_dag(m.event_labels().to_vec(), window)
}

/// [`build_dag`] over bare labels, without a matrix.
pub fn build_window_dag(labels: Vec<String>, window: usize) -> Result<EventDag, GraphError> {
    if window == 0 {
        return Err(GraphError::ZeroWindow);
    }
    let parents = (0..labels.len())
        .map(|i| (i.saturating_sub(window)..i).map(EventId).collect())
        .collect();
    Ok(EventDag { labels, parents })
}

/// Builds a DAG from explicit `(parent, child)` label pairs.
///
/// Edges must point forward in `events` order. That rules out every cycle,
/// so a self loop is the only cycle reported as such.
pub fn build_dag_explicit<S: AsRef<str>>(
    events: &[S],
    edges: &[(S, S)],
) -> Result<EventDag, GraphError> {
    let labels: Vec<String> = events.iter().map(|s| s.as_ref().to_string()).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(GraphError::DuplicateEvent(l.clone()));
        }
    }
    let lookup = |s: &str| {
        labels
            .iter()
            .position(|l| l == s)
            .map(EventId)
            .ok_or_else(|| GraphError::UnknownEvent(s.to_string()))
    };

    let mut parents = vec![Vec::new(); labels.len()];
    for (p, c) in edges {
        let (p_label, c_label) = (p.as_ref(), c.as_ref());
        let (p, c) = (lookup(p_label)?, lookup(c_label)?);
        if p == c {
            return Err(GraphError::Cycle(p_label.to_string()));
        }
        if p > c {
            return Err(GraphError::BackwardEdge {
                parent: p_label.to_string(),
                child: c_label.to_string(),
            });
        }
        let list: &mut Vec<EventId> = &mut parents[c.0];
        if list.contains(&p) {
            return Err(GraphError::DuplicateEdge {
                parent: p_label.to_string(),
                child: c_label.to_string(),
            });
        }
        list.push(p);
    }
    for list in &mut parents {
        list.sort();
    }
    Ok(EventDag { labels, parents })
}

/// Parses an edges file: one `parent -> child` pair per line, `#` starts a
/// comment.
pub fn parse_edges(text: &str) -> Result<Vec<(String, String)>, GraphError> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (p, c) = line
            .split_once("->")
            .map(|(p, c)| (p.trim(), c.trim()))
            .filter(|(p, c)| !p.is_empty() && !c.is_empty() && !c.contains("->"))
            .ok_or_else(|| GraphError::EdgeSyntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
        edges.push((p.to_string(), c.to_string()));
    }
    Ok(edges)
}
