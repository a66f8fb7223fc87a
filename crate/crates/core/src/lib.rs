//! Discovery of post-training pruning metrics for small decoder-only
//! transformers.
//!
//! A metric is a point `(α, β, F1, F2)` of a 2401-element space that combines
//! normalized, transformed weight magnitudes with calibration activation
//! norms. Each candidate is judged by pruning the model with it and measuring
//! the divergence of final hidden states from the dense model; NSGA-II,
//! random search and full enumeration all search that space.

pub mod analysis;
pub mod error;
pub mod io;
pub mod metric;
pub mod model;
pub mod objective;
pub mod prune;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use metric::{preset, CoeffId, MetricConfig, MetricKind, TransformId};
pub use model::{forward, init_model, ModelConfig, ModelWeights, SubModule, SubModuleId};
pub use objective::{evaluate_config, ActivationStats, CalibrationSet, EvalContext};
pub use prune::{build_mask, prune_model, Mask, MaskSet, SparsitySpec};
pub use search::{exhaustive_search, nsga2_search, random_search, SearchParams, SearchResult};
pub use tensor::{Matrix, Vector};
