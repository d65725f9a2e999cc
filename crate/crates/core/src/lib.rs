//! Knowledge-graph embeddings (CP, DistMult, ComplEx, RESCAL) trained with
//! F2, N3 or sparse interaction regularization.

pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod graph_data;
pub mod models;
pub mod regularizers;
pub mod sparsifier;
pub mod training;

pub use error::{Error, Result};
pub use evaluation::{evaluate, evaluate_detailed, rank, EvalOptions, EvaluationReport, MetricsRecord, RankMode};
pub use graph_data::{Dataset, DatasetSplits, FilterIndex, Split, Triple, Vocabulary};
pub use models::{score, score_all, score_grad, Direction, ModelKind, ModelParams};
pub use regularizers::{penalty_batch, RegularizerKind, RegularizerSpec};
pub use sparsifier::{select_small, sparse_penalty, sparsify, SparseMask, ThresholdMode};
pub use training::{fit, train_epoch, CurvePoint, FitOutcome, TrainConfig, TrainState};
