//! The augmented model as a whole, and its on-disk JSON form.
//!
//! A model file carries the signature matrix, the DAG, every CPT row with
//! its filler flag, and the augmentation parameters that produced them.
//! Floats are written in shortest round-trip form, so reading a file back
//! gives bit-identical tables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{self, AugmentError, PowerLawSpec};
use crate::graph::{self, EventDag, GraphError};
use crate::infer::{BayesNet, InferError, Provenance};
use crate::model::{EventFailureMatrix, MatrixError};

pub const FORMAT: &str = "nodefail-model/1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file format `{0}` is not supported (expected `{FORMAT}`)")]
    Format(String),
    #[error("model DAG events do not match the matrix events")]
    EventMismatch,
}

/// How the DAG is obtained.
#[derive(Debug, Clone)]
pub enum Structure {
    Window(usize),
    Edges(Vec<(String, String)>),
}

/// Signature matrix together with the network augmented from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub matrix: EventFailureMatrix,
    pub net: BayesNet,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    matrix: EventFailureMatrix,
    net: BayesNet,
}

impl Model {
    /// Runs the whole augmentation: population, DAG, CPTs.
    pub fn augment(matrix: EventFailureMatrix, spec: &PowerLawSpec, structure: &Structure) -> Result<Self, ModelError> {
        let mut spec = spec.clone();
        spec.failures = matrix.n_failures();
        let scale = spec.resolved_scale()?;
        let (pmf, population) = augment::generate_population(&spec)?;
        let (dag, window) = match structure {
            Structure::Window(w) => (graph::build_dag(&matrix, *w)?, Some(*w)),
            Structure::Edges(edges) => (graph::build_dag_explicit(matrix.event_labels(), edges)?, None),
        };
        let cpts = augment::estimate_cpts(&matrix, &population, &dag)?;
        let provenance = Provenance {
            spec,
            scale,
            pmf,
            counts: population.counts().to_vec(),
            total: population.total(),
            window,
        };
        let net = BayesNet::new(dag, cpts, Some(provenance))?;
        Ok(Self { matrix, net })
    }

    pub fn dag(&self) -> &EventDag {
        self.net.dag()
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: FORMAT.to_string(),
            matrix: self.matrix.clone(),
            net: self.net.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT {
            return Err(ModelError::Format(file.format));
        }
        // Deserialization bypasses the constructors; re-run their checks.
        let net = BayesNet::new(
            file.net.dag().clone(),
            file.net.cpts().to_vec(),
            file.net.provenance().cloned(),
        )?;
        if net.dag().labels() != file.matrix.event_labels() {
            return Err(ModelError::EventMismatch);
        }
        Ok(Self {
            matrix: file.matrix,
            net,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_matrix;

    const EXAMPLE: &str = include_str!("../../../fixtures/example_matrix.csv");

    fn example_model() -> Model {
        let m = parse_matrix(EXAMPLE).unwrap();
        Model::augment(m, &PowerLawSpec::new(2.0, 5, 10_000).with_scale(0.7), &Structure::Window(2)).unwrap()
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let model = example_model();
        let back = Model::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        for (a, b) in back.net.cpts().iter().zip(model.net.cpts()) {
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                assert_eq!(ra.p_true.to_bits(), rb.p_true.to_bits());
            }
        }
    }

    #[test]
    fn provenance_is_recorded() {
        let model = example_model();
        let p = model.net.provenance().unwrap();
        assert_eq!(p.counts, [7000, 1750, 777, 437, 280]);
        assert_eq!(p.total, 10_244);
        assert_eq!(p.scale, 0.7);
        assert_eq!(p.window, Some(2));
    }

    #[test]
    fn explicit_edges_build_same_net() {
        let m = parse_matrix(EXAMPLE).unwrap();
        let edges = graph::parse_edges("E1->E2\nE1->E3\nE2->E3\nE2->E4\nE3->E4\nE3->E5\nE4->E5\n").unwrap();
        let explicit = Model::augment(
            m,
            &PowerLawSpec::new(2.0, 5, 10_000).with_scale(0.7),
            &Structure::Edges(edges),
        )
        .unwrap();
        assert_eq!(explicit.net.cpts(), example_model().net.cpts());
    }

    #[test]
    fn rejects_foreign_format_and_tampering() {
        let text = example_model().to_json().replace(FORMAT, "other/9");
        assert!(matches!(Model::from_json(&text), Err(ModelError::Format(_))));

        let text = example_model().to_json().replacen("\"p_false\": 1.0", "\"p_false\": 0.5", 1);
        assert!(Model::from_json(&text).is_err());
    }
}
