//! Budgeted embedding-size search for latent-factor recommenders.
//!
//! The crate samples table-level embedding-size actions that always fit a
//! parameter budget, scores them with a set-based fitness surrogate plus
//! backbone finetuning, and exports the winning sparsified embedding table.
//!
//! The pieces, bottom-up:
//!
//! - [`dataset`]: interaction ingestion, per-user splits, BPR triple sampling.
//! - [`embedding`]: the full-size table with prefix masks and the `BETS` sparse format.
//! - [`backbone`]: MF and LightGCN-style scorers trained with BPR.
//! - [`metrics`]: Recall/NDCG, the metric ensemble and fitness ratios.
//! - [`sampler`]: budget-aware action generation plus the SU/SR baselines.
//! - [`predictor`]: the DeepSets fitness surrogate.
//! - [`search`]: the iterative search loop and selective retraining.
//! - [`cli`]: configuration, pipeline commands and report emission.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory, e.g.
//!
//! ```bash
//! cargo run --release --example sample_actions
//! cargo run --release --example search_end_to_end
//! ```

pub mod backbone;
pub mod cli;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod predictor;
pub mod sampler;
pub mod search;
pub mod seed;

pub use backbone::{Backbone, ScorerKind, TrainConfig, TrainReport};
pub use dataset::{BprTriple, InteractionDataset, RawInteractions, SplitRatios};
pub use embedding::MaskedEmbeddingTable;
pub use error::{BetError, Result};
pub use metrics::{EvalResult, FitnessReference};
pub use predictor::{FitnessPredictor, Population};
pub use sampler::{budget_for, DistributionKind, DistributionSpec, SizeAction};
pub use search::{SearchConfig, Strategy};
