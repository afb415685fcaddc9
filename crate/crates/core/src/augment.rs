//! Power-law data augmentation.
//!
//! With no field statistics available, failure frequencies are assumed to
//! follow `p(x) = a·x^(-k)` over the developer-supplied frequency ranking.
//! A synthetic population is drawn from that law and every conditional
//! probability table is counted off the population through the failure
//! signatures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::EventDag;
use crate::model::{EventFailureMatrix, EventId};

/// Accepted range for `Σ p(x)` when `a` is supplied explicitly.
pub const MASS_TOLERANCE: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("exponent k = {0} must be at least 2")]
    Exponent(f64),
    #[error("number of failures must be at least 1")]
    NoFailures,
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error("scale a = {0} must be positive and finite")]
    Scale(f64),
    #[error("power-law mass sums to {sum:.6}, outside [0.9, 1.1]")]
    Normalization { sum: f64 },
    #[error("failure #{failure} gets {count} occurrences in the population; it could never be learned (raise the population size)")]
    Degenerate { failure: usize, count: u64 },
    #[error("population has {population} failures but the matrix has {matrix}")]
    PopulationMismatch { population: usize, matrix: usize },
    #[error("DAG events {dag:?} do not match matrix events {matrix:?}")]
    DagMismatch {
        dag: Vec<String>,
        matrix: Vec<String>,
    },
    #[error("sampled mode needs a seed")]
    MissingSeed,
    #[error("CPT for node #{node} needs {expected} rows, got {found}")]
    CptShape {
        node: usize,
        expected: usize,
        found: usize,
    },
    #[error("CPT for node #{node} has probability {value} outside [0, 1]")]
    CptValue { node: usize, value: f64 },
}

/// How `a` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// `a = 1 / Σ x^(-k)`, so the mass is exactly 1.
    Normalized,
    /// Caller-supplied `a`, accepted when the mass lands in [`MASS_TOLERANCE`].
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// `C_x = floor(S·p(x))`.
    Deterministic,
    /// Multinomial draw of `S` trials.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawSpec {
    pub scale: Scale,
    pub exponent: f64,
    pub failures: usize,
    pub population: u64,
    pub mode: CountMode,
    pub seed: Option<u64>,
}

impl PowerLawSpec {
    /// Deterministic spec with normalized scale.
    pub fn new(exponent: f64, failures: usize, population: u64) -> Self {
        Self {
            scale: Scale::Normalized,
            exponent,
            failures,
            population,
            mode: CountMode::Deterministic,
            seed: None,
        }
    }

    pub fn with_scale(mut self, a: f64) -> Self {
        self.scale = Scale::Explicit(a);
        self
    }

    pub fn sampled(mut self, seed: u64) -> Self {
        self.mode = CountMode::Sampled;
        self.seed = Some(seed);
        self
    }

    /// The `a` this spec resolves to.
    pub fn resolved_scale(&self) -> Result<f64, AugmentError> {
        if !(self.exponent >= 2.0) || !self.exponent.is_finite() {
            return Err(AugmentError::Exponent(self.exponent));
        }
        if self.failures == 0 {
            return Err(AugmentError::NoFailures);
        }
        if self.population == 0 {
            return Err(AugmentError::EmptyPopulation);
        }
        match self.scale {
            Scale::Normalized => Ok(normalize_scale(self.exponent, self.failures)),
            Scale::Explicit(a) if a > 0.0 && a.is_finite() => Ok(a),
            Scale::Explicit(a) => Err(AugmentError::Scale(a)),
        }
    }
}

/// Occurrence count of each failure in the synthetic population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailurePopulation {
    counts: Vec<u64>,
    total: u64,
}

impl FailurePopulation {
    /// Rejects empty populations and zero counts.
    pub fn new(counts: Vec<u64>) -> Result<Self, AugmentError> {
        if counts.is_empty() {
            return Err(AugmentError::NoFailures);
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(AugmentError::Degenerate {
                failure: i + 1,
                count: 0,
            });
        }
        let total = counts.iter().sum();
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Share of the population taken by each failure.
    pub fn shares(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }
}

/// `1 / Σ_{x=1..n} x^(-k)`.
pub fn normalize_scale(exponent: f64, failures: usize) -> f64 {
    let mass: f64 = (1..=failures).map(|x| (x as f64).powf(-exponent)).sum();
    1.0 / mass
}

/// `p(x) = a·x^(-k)` for `x = 1..=N`.
pub fn failure_pmf(spec: &PowerLawSpec) -> Result<Vec<f64>, AugmentError> {
    let a = spec.resolved_scale()?;
    let pmf: Vec<f64> = (1..=spec.failures)
        .map(|x| a / (x as f64).powf(spec.exponent))
        .collect();
    let sum: f64 = pmf.iter().sum();
    if !(MASS_TOLERANCE.0..=MASS_TOLERANCE.1).contains(&sum) {
        return Err(AugmentError::Normalization { sum });
    }
    Ok(pmf)
}

// Floor that forgives the last few bits of rounding in `S·p`, so that
// 10000·(0.7/25) = 279.99999999999994 counts as 280.
fn floor_count(v: f64) -> u64 {
    let nearest = v.round();
    if (v - nearest).abs() <= 1e-9 * v.abs().max(1.0) {
        nearest as u64
    } else {
        v.floor() as u64
    }
}

/// `C_x = floor(S·p(x))`. The total may differ from `S` when `Σp ≠ 1`.
pub fn deterministic_counts(pmf: &[f64], population: u64) -> Result<FailurePopulation, AugmentError> {
    if population == 0 {
        return Err(AugmentError::EmptyPopulation);
    }
    let counts: Vec<u64> = pmf
        .iter()
        .map(|&p| floor_count(population as f64 * p))
        .collect();
    FailurePopulation::new(counts)
}

/// Multinomial draw of `population` trials over `pmf` rescaled to sum to 1.
pub fn sample_counts(pmf: &[f64], population: u64, seed: u64) -> Result<FailurePopulation, AugmentError> {
    if population == 0 {
        return Err(AugmentError::EmptyPopulation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining_trials = population;
    let mut remaining_mass: f64 = pmf.iter().sum();
    let mut counts = Vec::with_capacity(pmf.len());
    for (i, &p) in pmf.iter().enumerate() {
        let count = if i + 1 == pmf.len() {
            remaining_trials
        } else if remaining_trials == 0 {
            0
        } else {
            let q = (p / remaining_mass).clamp(0.0, 1.0);
            Binomial::new(remaining_trials, q)
                .expect("probability clamped to [0, 1]")
                .sample(&mut rng)
        };
        counts.push(count);
        remaining_trials -= count;
        remaining_mass -= p;
    }
    FailurePopulation::new(counts)
}

/// Resolves the spec into its pmf and population.
pub fn generate_population(spec: &PowerLawSpec) -> Result<(Vec<f64>, FailurePopulation), AugmentError> {
    let pmf = failure_pmf(spec)?;
    let population = match spec.mode {
        CountMode::Deterministic => deterministic_counts(&pmf, spec.population)?,
        CountMode::Sampled => {
            let seed = spec.seed.ok_or(AugmentError::MissingSeed)?;
            sample_counts(&pmf, spec.population, seed)?
        }
    };
    Ok((pmf, population))
}

fn check_population(m: &EventFailureMatrix, pop: &FailurePopulation) -> Result<(), AugmentError> {
    if pop.counts.len() != m.n_failures() {
        return Err(AugmentError::PopulationMismatch {
            population: pop.counts.len(),
            matrix: m.n_failures(),
        });
    }
    Ok(())
}

/// `Pr(E_i = 1)`: population share of the failures whose signature has `E_i`.
pub fn event_probabilities(m: &EventFailureMatrix, pop: &FailurePopulation) -> Result<Vec<f64>, AugmentError> {
    check_population(m, pop)?;
    Ok(m.event_ids()
        .map(|e| {
            let hits: u64 = m
                .failure_ids()
                .filter(|&f| m.entry(f, e))
                .map(|f| pop.counts[f.0])
                .sum();
            hits as f64 / pop.total as f64
        })
        .collect())
}

/// One parent configuration of a CPT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptRow {
    pub p_true: f64,
    pub p_false: f64,
    /// Configuration never seen in the population; fixed to non-occurrence.
    pub filler: bool,
}

impl CptRow {
    pub fn new(p_true: f64) -> Self {
        Self {
            p_true,
            p_false: 1.0 - p_true,
            filler: false,
        }
    }

    pub fn filler() -> Self {
        Self {
            p_true: 0.0,
            p_false: 1.0,
            filler: true,
        }
    }

    pub fn prob(&self, value: bool) -> f64 {
        if value {
            self.p_true
        } else {
            self.p_false
        }
    }
}

/// Conditional table of one binary node given its parents.
///
/// Row `r` holds the configuration whose bits, read with the first parent as
/// the most significant, spell `r`. So rows run lexicographically with 0
/// before 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptTable {
    pub node: EventId,
    pub parents: Vec<EventId>,
    pub rows: Vec<CptRow>,
}

impl CptTable {
    /// Table from `Pr(node = 1 | config)` per configuration row.
    pub fn new(node: EventId, parents: Vec<EventId>, p_true: &[f64]) -> Result<Self, AugmentError> {
        let expected = 1usize << parents.len();
        if p_true.len() != expected {
            return Err(AugmentError::CptShape {
                node: node.ordinal(),
                expected,
                found: p_true.len(),
            });
        }
        if let Some(&bad) = p_true.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(AugmentError::CptValue {
                node: node.ordinal(),
                value: bad,
            });
        }
        Ok(Self {
            node,
            parents,
            rows: p_true.iter().map(|&p| CptRow::new(p)).collect(),
        })
    }

    /// Parent values of row `r`, in parent order.
    pub fn config(&self, r: usize) -> Vec<bool> {
        let n = self.parents.len();
        (0..n).map(|i| (r >> (n - 1 - i)) & 1 == 1).collect()
    }

    pub fn row_index(config: &[bool]) -> usize {
        config.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
    }

    pub fn row(&self, config: &[bool]) -> &CptRow {
        &self.rows[Self::row_index(config)]
    }

    /// `Pr(node = value | parents = config)`.
    pub fn prob(&self, config: &[bool], value: bool) -> f64 {
        self.row(config).prob(value)
    }

    /// Checks row count and row sums; used after deserialization.
    pub fn validate(&self) -> Result<(), AugmentError> {
        let expected = 1usize << self.parents.len();
        if self.rows.len() != expected {
            return Err(AugmentError::CptShape {
                node: self.node.ordinal(),
                expected,
                found: self.rows.len(),
            });
        }
        for row in &self.rows {
            for v in [row.p_true, row.p_false] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(AugmentError::CptValue {
                        node: self.node.ordinal(),
                        value: v,
                    });
                }
            }
            if row.p_true + row.p_false != 1.0 {
                return Err(AugmentError::CptValue {
                    node: self.node.ordinal(),
                    value: row.p_true + row.p_false,
                });
            }
        }
        Ok(())
    }
}

/// Counts every CPT off the population.
///
/// For a node with parent configuration `c`, the denominator is the
/// population of failures whose signature agrees with `c` on the parents and
/// the numerator is the part of it with the node set. Configurations no
/// failure exhibits become filler rows.
pub fn estimate_cpts(
    m: &EventFailureMatrix,
    pop: &FailurePopulation,
    dag: &EventDag,
) -> Result<Vec<CptTable>, AugmentError> {
    check_population(m, pop)?;
    if dag.labels() != m.event_labels() {
        return Err(AugmentError::DagMismatch {
            dag: dag.labels().to_vec(),
            matrix: m.event_labels().to_vec(),
        });
    }

    Ok(dag
        .nodes()
        .map(|node| {
            let parents = dag.parents(node).to_vec();
            let mut num = vec![0u64; 1 << parents.len()];
            let mut den = vec![0u64; 1 << parents.len()];
            for f in m.failure_ids() {
                let config: Vec<bool> = parents.iter().map(|&p| m.entry(f, p)).collect();
                let r = CptTable::row_index(&config);
                den[r] += pop.counts[f.0];
                if m.entry(f, node) {
                    num[r] += pop.counts[f.0];
                }
            }
            let rows = num
                .iter()
                .zip(&den)
                .map(|(&n, &d)| {
                    if d == 0 {
                        CptRow::filler()
                    } else {
                        CptRow::new(n as f64 / d as f64)
                    }
                })
                .collect();
            CptTable { node, parents, rows }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_dag;
    use crate::model::parse_matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const EXAMPLE: &str = include_str!("../../../fixtures/example_matrix.csv");
    const EXAMPLE_COUNTS: [u64; 5] = [7000, 1750, 777, 437, 280];

    fn example_pop() -> FailurePopulation {
        FailurePopulation::new(EXAMPLE_COUNTS.to_vec()).unwrap()
    }

    #[test]
    fn scale_normalization() {
        assert_eq!(normalize_scale(2.0, 1), 1.0);
        assert_abs_diff_eq!(normalize_scale(2.0, 5), 0.683242, epsilon = 1e-6);
        assert_abs_diff_eq!(normalize_scale(3.0, 2), 8.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn pmf_values() {
        let pmf = failure_pmf(&PowerLawSpec::new(2.0, 5, 10_000).with_scale(0.7)).unwrap();
        let expected = [0.7, 0.175, 0.077778, 0.04375, 0.028];
        for (p, e) in pmf.iter().zip(expected) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-6);
        }
        assert_eq!(failure_pmf(&PowerLawSpec::new(2.0, 1, 1).with_scale(1.0)).unwrap(), [1.0]);

        let pmf = failure_pmf(&PowerLawSpec::new(2.0, 5, 1)).unwrap();
        assert_abs_diff_eq!(pmf.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pmf_rejects_bad_specs() {
        let spec = PowerLawSpec::new(2.0, 5, 100);
        assert!(matches!(
            failure_pmf(&spec.clone().with_scale(0.5)),
            Err(AugmentError::Normalization { .. })
        ));
        assert_eq!(
            failure_pmf(&PowerLawSpec::new(1.5, 5, 100)),
            Err(AugmentError::Exponent(1.5))
        );
        assert_eq!(failure_pmf(&PowerLawSpec::new(2.0, 0, 100)), Err(AugmentError::NoFailures));
        assert_eq!(failure_pmf(&PowerLawSpec::new(2.0, 5, 0)), Err(AugmentError::EmptyPopulation));
        assert_eq!(failure_pmf(&spec.with_scale(-1.0)), Err(AugmentError::Scale(-1.0)));
    }

    #[test]
    fn deterministic_example_counts() {
        let pmf = failure_pmf(&PowerLawSpec::new(2.0, 5, 10_000).with_scale(0.7)).unwrap();
        let pop = deterministic_counts(&pmf, 10_000).unwrap();
        assert_eq!(pop.counts(), EXAMPLE_COUNTS);
        assert_eq!(pop.total(), 10_244);

        let pop = deterministic_counts(&[1.0], 10).unwrap();
        assert_eq!((pop.counts(), pop.total()), (&[10][..], 10));

        assert_eq!(
            deterministic_counts(&pmf, 10),
            Err(AugmentError::Degenerate { failure: 3, count: 0 })
        );
    }

    #[test]
    fn sampled_counts() {
        let pmf = failure_pmf(&PowerLawSpec::new(2.0, 5, 10_000).with_scale(0.7)).unwrap();
        let a = sample_counts(&pmf, 10_000, 42).unwrap();
        let b = sample_counts(&pmf, 10_000, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total(), 10_000);
        let mass: f64 = pmf.iter().sum();
        for (&c, &p) in a.counts().iter().zip(&pmf) {
            let q = p / mass;
            let sigma = (10_000.0 * q * (1.0 - q)).sqrt();
            assert!((c as f64 - 10_000.0 * q).abs() <= 4.0 * sigma);
        }
        assert_eq!(sample_counts(&[1.0], 5, 7).unwrap().counts(), [5]);
        assert!(matches!(
            sample_counts(&pmf, 3, 1),
            Err(AugmentError::Degenerate { .. })
        ));
    }

    #[test]
    fn sampled_spec_needs_seed() {
        let mut spec = PowerLawSpec::new(2.0, 5, 10_000);
        spec.mode = CountMode::Sampled;
        assert_eq!(generate_population(&spec), Err(AugmentError::MissingSeed));
    }

    #[test]
    fn example_event_probabilities() {
        let m = parse_matrix(EXAMPLE).unwrap();
        let probs = event_probabilities(&m, &example_pop()).unwrap();
        assert_eq!(probs[0], 9467.0 / 10244.0);
        assert_abs_diff_eq!(probs[0], 0.924151, epsilon = 1e-6);
        assert_abs_diff_eq!(probs[1], 0.930008, epsilon = 1e-6);

        let m = parse_matrix("failure,E1,E2\nF1,1,0\nF2,1,1\n").unwrap();
        let pop = FailurePopulation::new(vec![3, 9]).unwrap();
        assert_eq!(event_probabilities(&m, &pop).unwrap()[0], 1.0);
    }

    #[test]
    fn example_cpts() {
        let m = parse_matrix(EXAMPLE).unwrap();
        let dag = build_dag(&m, 2).unwrap();
        let cpts = estimate_cpts(&m, &example_pop(), &dag).unwrap();

        assert_eq!(cpts[2].prob(&[true, true], true), 0.2);
        assert_eq!(cpts[2].prob(&[true, true], false), 0.8);
        assert_abs_diff_eq!(cpts[3].prob(&[false, true], true), 437.0 / 717.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cpts[3].prob(&[false, true], true), 0.609484, epsilon = 1e-6);
        let filler = cpts[4].row(&[false, false]);
        assert!(filler.filler);
        assert_eq!((filler.p_true, filler.p_false), (0.0, 1.0));
        assert_eq!(cpts[1].prob(&[false], true), 1.0);
        assert!(!cpts[1].row(&[false]).filler);

        let fillers: usize = cpts.iter().map(|t| t.rows.iter().filter(|r| r.filler).count()).sum();
        assert_eq!(fillers, 3);
    }

    #[test]
    fn cpt_shape_errors() {
        assert!(matches!(
            CptTable::new(EventId(1), vec![EventId(0)], &[0.5]),
            Err(AugmentError::CptShape { .. })
        ));
        assert!(matches!(
            CptTable::new(EventId(0), vec![], &[1.5]),
            Err(AugmentError::CptValue { .. })
        ));
        let m = parse_matrix(EXAMPLE).unwrap();
        let other = parse_matrix("failure,A,B\nF1,1,0\n").unwrap();
        let dag = build_dag(&other, 1).unwrap();
        assert!(matches!(
            estimate_cpts(&m, &example_pop(), &dag),
            Err(AugmentError::DagMismatch { .. })
        ));
        let short = FailurePopulation::new(vec![1, 2]).unwrap();
        assert!(matches!(
            event_probabilities(&m, &short),
            Err(AugmentError::PopulationMismatch { .. })
        ));
    }

    #[test]
    fn config_and_row_index_agree() {
        let t = CptTable::new(EventId(3), vec![EventId(0), EventId(1), EventId(2)], &[0.5; 8]).unwrap();
        assert_eq!(t.config(0), [false, false, false]);
        assert_eq!(t.config(6), [true, true, false]);
        for r in 0..8 {
            assert_eq!(CptTable::row_index(&t.config(r)), r);
        }
    }

    proptest! {
        #[test]
        fn pmf_strictly_decreasing(k in 2.0f64..6.0, n in 1usize..40) {
            let pmf = failure_pmf(&PowerLawSpec::new(k, n, 1)).unwrap();
            prop_assert!(pmf.windows(2).all(|w| w[0] > w[1]));
        }

        #[test]
        fn floor_counts_within_one(k in 2.0f64..4.0, n in 1usize..8, s in 1000u64..1_000_000) {
            let pmf = failure_pmf(&PowerLawSpec::new(k, n, s)).unwrap();
            if let Ok(pop) = deterministic_counts(&pmf, s) {
                for (&c, &p) in pop.counts().iter().zip(&pmf) {
                    let gap = s as f64 * p - c as f64;
                    prop_assert!(gap > -1e-9 * (s as f64) && gap < 1.0);
                }
                prop_assert!(pop.counts().windows(2).all(|w| w[0] >= w[1]));
            }
        }

        #[test]
        fn cpt_rows_sum_to_one(
            rows in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 6), 1..12),
            counts in proptest::collection::vec(1u64..5000, 12),
            window in 1usize..4,
        ) {
            let mut rows = rows;
            rows.sort();
            rows.dedup();
            rows.retain(|r| r.iter().any(|&b| b));
            prop_assume!(!rows.is_empty());
            let labels: Vec<String> = (1..=6).map(|i| format!("E{i}")).collect();
            let failures: Vec<String> = (1..=rows.len()).map(|i| format!("F{i}")).collect();
            let m = EventFailureMatrix::new(labels, failures, rows.clone()).unwrap();
            let pop = FailurePopulation::new(counts[..rows.len()].to_vec()).unwrap();
            let dag = build_dag(&m, window).unwrap();
            for t in estimate_cpts(&m, &pop, &dag).unwrap() {
                prop_assert_eq!(t.rows.len(), 1 << t.parents.len());
                t.validate().unwrap();
                for r in &t.rows {
                    prop_assert_eq!(r.p_true + r.p_false, 1.0);
                }
            }
        }
    }
}
