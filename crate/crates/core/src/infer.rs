//! Exact inference on the event network.
//!
//! Factors are dense tables over binary events. A factor's values are laid
//! out lexicographically over its scope: the first scope event is the most
//! significant bit and 0 comes before 1.
//!
//! Posteriors come from variable elimination: every CPT factor is restricted
//! by the evidence, the hidden events are summed out one at a time, and the
//! leftover product is normalized by `Pr(evidence)` at the very end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentError, CptTable};
use crate::graph::{EventDag, GraphError};
use crate::model::{Assignment, EventId};

/// Widest factor scope [`Factor::product`] will build.
pub const MAX_SCOPE: usize = 25;

/// Largest network [`enumerate_oracle`] will walk.
pub const MAX_ENUMERATION_NODES: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum InferError {
    #[error("factor scope of {size} events exceeds the limit of {limit}")]
    ScopeTooLarge { size: usize, limit: usize },
    #[error("event #{0} is not in the factor scope")]
    NotInScope(usize),
    #[error("event {0} is both queried and given as evidence")]
    Overlap(String),
    #[error("unknown event #{0}")]
    UnknownEvent(usize),
    #[error("query is empty")]
    EmptyQuery,
    #[error("assignment does not cover every event")]
    Incomplete,
    #[error("enumeration over {nodes} nodes exceeds the limit of {limit}")]
    TooManyNodes { nodes: usize, limit: usize },
    #[error("elimination order must list each hidden event exactly once")]
    BadOrder,
    #[error("network has {cpts} CPTs for {nodes} nodes")]
    CptCount { cpts: usize, nodes: usize },
    #[error("CPT for node #{node} does not match the DAG")]
    CptMismatch { node: usize },
    #[error(transparent)]
    Cpt(#[from] AugmentError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    scope: Vec<EventId>,
    values: Vec<f64>,
}

impl Factor {
    /// Table over `scope`; panics if the length is not `2^|scope|`, the scope
    /// repeats an event, or a value is negative.
    pub fn new(scope: Vec<EventId>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), 1 << scope.len(), "factor table size");
        for (i, e) in scope.iter().enumerate() {
            assert!(!scope[..i].contains(e), "duplicate event in factor scope");
        }
        assert!(values.iter().all(|&v| v >= 0.0), "negative factor value");
        Self { scope, values }
    }

    /// Scalar factor with empty scope.
    pub fn scalar(value: f64) -> Self {
        Self::new(Vec::new(), vec![value])
    }

    pub fn scope(&self) -> &[EventId] {
        &self.scope
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_scalar(&self) -> bool {
        self.scope.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn position(&self, v: EventId) -> Option<usize> {
        self.scope.iter().position(|&e| e == v)
    }

    fn bit(&self, index: usize, pos: usize) -> bool {
        (index >> (self.scope.len() - 1 - pos)) & 1 == 1
    }

    /// Scope values encoded by table index `index`.
    pub fn assignment_at(&self, index: usize) -> Assignment {
        self.scope
            .iter()
            .enumerate()
            .map(|(pos, &e)| (e, self.bit(index, pos)))
            .collect()
    }

    /// Value at a (super-)assignment of the scope; `None` if some scope event
    /// is missing from `a`.
    pub fn value_at(&self, a: &Assignment) -> Option<f64> {
        let mut index = 0;
        for &e in &self.scope {
            index = (index << 1) | usize::from(a.get(e)?);
        }
        Some(self.values[index])
    }

    /// Fixes the evidence events that are in scope and drops them.
    pub fn restrict(&self, evidence: &Assignment) -> Factor {
        let kept: Vec<usize> = (0..self.scope.len())
            .filter(|&p| !evidence.contains(self.scope[p]))
            .collect();
        if kept.len() == self.scope.len() {
            return self.clone();
        }
        let n = self.scope.len();
        let mut base = 0;
        for (p, &e) in self.scope.iter().enumerate() {
            if let Some(true) = evidence.get(e) {
                base |= 1 << (n - 1 - p);
            }
        }
        let scope: Vec<EventId> = kept.iter().map(|&p| self.scope[p]).collect();
        let values = (0..1usize << kept.len())
            .map(|j| {
                let mut index = base;
                for (k, &p) in kept.iter().enumerate() {
                    if (j >> (kept.len() - 1 - k)) & 1 == 1 {
                        index |= 1 << (n - 1 - p);
                    }
                }
                self.values[index]
            })
            .collect();
        Factor { scope, values }
    }

    /// Pointwise product over the union scope (`self` order first, then the
    /// events only `other` has).
    pub fn product(&self, other: &Factor) -> Result<Factor, InferError> {
        self.product_capped(other, MAX_SCOPE)
    }

    pub fn product_capped(&self, other: &Factor, limit: usize) -> Result<Factor, InferError> {
        let mut scope = self.scope.clone();
        scope.extend(other.scope.iter().filter(|e| !self.scope.contains(e)));
        if scope.len() > limit {
            return Err(InferError::ScopeTooLarge {
                size: scope.len(),
                limit,
            });
        }
        let n = scope.len();
        // For each union position, its bit weight inside each operand (0 if absent).
        let weights = |f: &Factor| -> Vec<usize> {
            scope
                .iter()
                .map(|&e| f.position(e).map_or(0, |p| 1 << (f.scope.len() - 1 - p)))
                .collect()
        };
        let (wf, wg) = (weights(self), weights(other));
        let values = (0..1usize << n)
            .map(|index| {
                let (mut i, mut j) = (0, 0);
                for pos in 0..n {
                    if (index >> (n - 1 - pos)) & 1 == 1 {
                        i |= wf[pos];
                        j |= wg[pos];
                    }
                }
                self.values[i] * other.values[j]
            })
            .collect();
        Ok(Factor { scope, values })
    }

    fn split(&self, v: EventId) -> Result<(Vec<EventId>, usize, usize), InferError> {
        let p = self.position(v).ok_or(InferError::NotInScope(v.ordinal()))?;
        let mut scope = self.scope.clone();
        scope.remove(p);
        // Index layout: [high bits | v | low bits]
        let low_bits = self.scope.len() - 1 - p;
        Ok((scope, low_bits, 1 << low_bits))
    }

    fn pairs(&self, low_bits: usize, j: usize) -> (usize, usize) {
        let high = j >> low_bits;
        let low = j & ((1 << low_bits) - 1);
        let zero = (high << (low_bits + 1)) | low;
        (zero, zero | (1 << low_bits))
    }

    /// Sums `v` out of the factor.
    pub fn sum_out(&self, v: EventId) -> Result<Factor, InferError> {
        let (scope, low_bits, _) = self.split(v)?;
        let values = (0..1usize << scope.len())
            .map(|j| {
                let (zero, one) = self.pairs(low_bits, j);
                self.values[zero] + self.values[one]
            })
            .collect();
        Ok(Factor { scope, values })
    }

    /// Maximizes `v` out of the factor. The trace holds, per remaining
    /// assignment (in table order), the value of `v` that attains the max;
    /// ties go to `false`.
    pub fn max_out(&self, v: EventId) -> Result<(Factor, Vec<bool>), InferError> {
        let (scope, low_bits, _) = self.split(v)?;
        let (values, trace) = (0..1usize << scope.len())
            .map(|j| {
                let (zero, one) = self.pairs(low_bits, j);
                let (a, b) = (self.values[zero], self.values[one]);
                if b > a {
                    (b, true)
                } else {
                    (a, false)
                }
            })
            .unzip();
        Ok((Factor { scope, values }, trace))
    }

    /// Same table with the scope permuted into `order`.
    pub fn reorder(&self, order: &[EventId]) -> Factor {
        assert_eq!(order.len(), self.scope.len(), "reorder must be a permutation");
        let n = order.len();
        let weights: Vec<usize> = order
            .iter()
            .map(|&e| {
                let p = self.position(e).expect("reorder must be a permutation");
                1 << (n - 1 - p)
            })
            .collect();
        let values = (0..1usize << n)
            .map(|index| {
                let mut src = 0;
                for (pos, w) in weights.iter().enumerate() {
                    if (index >> (n - 1 - pos)) & 1 == 1 {
                        src |= w;
                    }
                }
                self.values[src]
            })
            .collect();
        Factor {
            scope: order.to_vec(),
            values,
        }
    }

    fn scaled(mut self, by: f64) -> Factor {
        for v in &mut self.values {
            *v *= by;
        }
        self
    }

    fn zeroed(mut self) -> Factor {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self
    }
}

/// Re-indexes a CPT as a factor over `parents ++ [node]`.
pub fn factor_from_cpt(cpt: &CptTable) -> Factor {
    let mut scope = cpt.parents.clone();
    scope.push(cpt.node);
    let values = cpt
        .rows
        .iter()
        .flat_map(|row| [row.p_false, row.p_true])
        .collect();
    Factor { scope, values }
}

/// Where the CPTs of a network came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: crate::augment::PowerLawSpec,
    /// The `a` actually used.
    pub scale: f64,
    pub pmf: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Sliding-window width, or `None` for an explicit edge list.
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    dag: EventDag,
    cpts: Vec<CptTable>,
    provenance: Option<Provenance>,
}

impl BayesNet {
    /// Checks one CPT per node, each agreeing with the DAG's parent list.
    pub fn new(dag: EventDag, cpts: Vec<CptTable>, provenance: Option<Provenance>) -> Result<Self, InferError> {
        dag.validate()?;
        if cpts.len() != dag.len() {
            return Err(InferError::CptCount {
                cpts: cpts.len(),
                nodes: dag.len(),
            });
        }
        for (node, cpt) in dag.nodes().zip(&cpts) {
            if cpt.node != node || cpt.parents != dag.parents(node) {
                return Err(InferError::CptMismatch { node: node.ordinal() });
            }
            cpt.validate()?;
        }
        Ok(Self { dag, cpts, provenance })
    }

    pub fn dag(&self) -> &EventDag {
        &self.dag
    }

    pub fn cpts(&self) -> &[CptTable] {
        &self.cpts
    }

    pub fn cpt(&self, e: EventId) -> &CptTable {
        &self.cpts[e.0]
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.dag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dag.is_empty()
    }

    pub fn label(&self, e: EventId) -> &str {
        self.dag.label(e)
    }

    fn check_event(&self, e: EventId) -> Result<(), InferError> {
        if e.0 < self.len() {
            Ok(())
        } else {
            Err(InferError::UnknownEvent(e.ordinal()))
        }
    }

    /// Validates a query against evidence and returns it sorted.
    fn check_query(&self, query: &[EventId], evidence: &Assignment) -> Result<Vec<EventId>, InferError> {
        if query.is_empty() {
            return Err(InferError::EmptyQuery);
        }
        for e in query.iter().copied().chain(evidence.events()) {
            self.check_event(e)?;
        }
        if let Some(&e) = query.iter().find(|&&e| evidence.contains(e)) {
            return Err(InferError::Overlap(self.label(e).to_string()));
        }
        let mut sorted = query.to_vec();
        sorted.sort();
        sorted.dedup();
        Ok(sorted)
    }

    /// Events neither queried nor observed, ascending.
    fn hidden(&self, query: &[EventId], evidence: &Assignment) -> Vec<EventId> {
        self.dag
            .nodes()
            .filter(|&e| !query.contains(&e) && !evidence.contains(e))
            .collect()
    }
}

/// Normalized posterior over the query events (scope sorted ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub factor: Factor,
    /// `Pr(evidence)` under the network.
    pub evidence_probability: f64,
    /// Evidence is impossible under the network; `factor` is all zeros.
    pub zero_evidence: bool,
}

impl Posterior {
    fn from_unnormalized(factor: Factor) -> Self {
        let z = factor.total();
        if z > 0.0 {
            Self {
                factor: factor.scaled(1.0 / z),
                evidence_probability: z,
                zero_evidence: false,
            }
        } else {
            Self {
                factor: factor.zeroed(),
                evidence_probability: 0.0,
                zero_evidence: true,
            }
        }
    }
}

/// `Pr(query | evidence)` by variable elimination in ascending event order.
pub fn posterior(net: &BayesNet, query: &[EventId], evidence: &Assignment) -> Result<Posterior, InferError> {
    let query = net.check_query(query, evidence)?;
    let order = net.hidden(&query, evidence);
    eliminate(net, &query, evidence, &order)
}

/// [`posterior`] with a caller-chosen elimination order over the hidden events.
pub fn posterior_with_order(
    net: &BayesNet,
    query: &[EventId],
    evidence: &Assignment,
    order: &[EventId],
) -> Result<Posterior, InferError> {
    let query = net.check_query(query, evidence)?;
    let mut expected = net.hidden(&query, evidence);
    let mut given = order.to_vec();
    expected.sort();
    given.sort();
    if expected != given {
        return Err(InferError::BadOrder);
    }
    eliminate(net, &query, evidence, order)
}

fn eliminate(
    net: &BayesNet,
    query: &[EventId],
    evidence: &Assignment,
    order: &[EventId],
) -> Result<Posterior, InferError> {
    let mut factors: Vec<Factor> = net
        .cpts
        .iter()
        .map(|cpt| factor_from_cpt(cpt).restrict(evidence))
        .collect();

    for &v in order {
        let (bucket, rest): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.scope.contains(&v));
        factors = rest;
        let mut joined = Factor::scalar(1.0);
        for f in &bucket {
            joined = joined.product(f)?;
        }
        factors.push(joined.sum_out(v)?);
    }

    let mut joint = Factor::scalar(1.0);
    for f in &factors {
        joint = joint.product(f)?;
    }
    Ok(Posterior::from_unnormalized(joint.reorder(query)))
}

/// Answer of a MAP query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub assignment: Assignment,
    /// Posterior probability of `assignment`; 0 under zero evidence.
    pub score: f64,
    pub zero_evidence: bool,
    pub evidence_probability: f64,
}

/// Marginal MAP: sums out the hidden events, then takes the joint argmax of
/// the posterior over the query events. Among equal maxima the
/// lexicographically smallest assignment wins (events ascending, 0 before 1),
/// which under zero evidence is all zeros.
pub fn map_query(net: &BayesNet, query: &[EventId], evidence: &Assignment) -> Result<QueryResult, InferError> {
    let post = posterior(net, query, evidence)?;
    let (assignment, score) = argmax(&post.factor)?;
    Ok(QueryResult {
        assignment,
        score,
        zero_evidence: post.zero_evidence,
        evidence_probability: post.evidence_probability,
    })
}

/// Max-product decoding of a factor: maximizes events out back to front,
/// then walks the traces forward.
pub fn argmax(f: &Factor) -> Result<(Assignment, f64), InferError> {
    let mut traces = Vec::with_capacity(f.scope.len());
    let mut current = f.clone();
    for &v in f.scope.iter().rev() {
        let (next, trace) = current.max_out(v)?;
        traces.push(trace);
        current = next;
    }
    let best = current.values[0];

    // traces[k] belongs to scope[n-1-k] and is indexed by the prefix scope[..n-1-k].
    let n = f.scope.len();
    let mut prefix = 0usize;
    let mut assignment = Assignment::new();
    for pos in 0..n {
        let value = traces[n - 1 - pos][prefix];
        assignment.insert(f.scope[pos], value);
        prefix = (prefix << 1) | usize::from(value);
    }
    Ok((assignment, best))
}

/// Posterior `Pr(E = 1 | evidence)` for every event; evidence events report
/// their observed value. All zeros under zero evidence.
pub fn marginals(net: &BayesNet, evidence: &Assignment) -> Result<Vec<f64>, InferError> {
    net.dag
        .nodes()
        .map(|e| match evidence.get(e) {
            Some(v) => Ok(if v { 1.0 } else { 0.0 }),
            None => Ok(posterior(net, &[e], evidence)?.factor.values[1]),
        })
        .collect()
}

/// Product of CPT entries along a full assignment.
pub fn joint_probability(net: &BayesNet, full: &Assignment) -> Result<f64, InferError> {
    if !full.is_full(net.len()) {
        return Err(InferError::Incomplete);
    }
    let value = |e: EventId| full.get(e).expect("checked full");
    Ok(net
        .cpts
        .iter()
        .map(|cpt| {
            let config: Vec<bool> = cpt.parents.iter().map(|&p| value(p)).collect();
            cpt.prob(&config, value(cpt.node))
        })
        .product())
}

/// Brute-force posterior: sums [`joint_probability`] over every full
/// assignment consistent with the evidence. Test oracle for [`posterior`].
pub fn enumerate_oracle(net: &BayesNet, query: &[EventId], evidence: &Assignment) -> Result<Posterior, InferError> {
    if net.len() > MAX_ENUMERATION_NODES {
        return Err(InferError::TooManyNodes {
            nodes: net.len(),
            limit: MAX_ENUMERATION_NODES,
        });
    }
    let query = net.check_query(query, evidence)?;
    let n = net.len();
    let mut values = vec![0.0; 1 << query.len()];
    for bits in 0..1usize << n {
        let full: Assignment = (0..n).map(|i| (EventId(i), (bits >> i) & 1 == 1)).collect();
        if evidence.iter().any(|(e, v)| full.get(e) != Some(v)) {
            continue;
        }
        let index = query
            .iter()
            .fold(0, |acc, &q| (acc << 1) | usize::from(full.get(q).unwrap()));
        values[index] += joint_probability(net, &full)?;
    }
    Ok(Posterior::from_unnormalized(Factor { scope: query, values }))
}
