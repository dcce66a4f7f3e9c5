pub mod corpus;
pub mod embedding;
pub mod emg;
pub mod evaluation;
pub mod graph;
pub mod iarc;
pub mod kmeans;
pub mod pipeline;
pub mod scalar;
pub mod synth;
mod union_find;

use num_rational::Rational64;

pub type ScoreMatrix = emg::ScoreMatrix<f64>;
pub type ExactScoreMatrix = emg::ScoreMatrix<Rational64>;
pub type EmbeddingVector = embedding::EmbeddingVector<f64>;
pub type RelationCluster = iarc::RelationCluster<f64>;
pub type ClusterSet = iarc::ClusterSet<f64>;
pub type MappingResult = evaluation::MappingResult<f64>;
