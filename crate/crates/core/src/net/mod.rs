//! Amortized PCMC network, its training loop and hyperparameter search.

pub mod config;
pub mod gradcheck;
pub mod model;
pub mod represent;
pub mod search;
pub mod train;

pub use config::{Activation, ArchitectureConfig, CategoricalEncoding};
pub use model::{PcmcNet, PROB_FLOOR};
pub use represent::{FieldStats, NormalizationStats};
pub use train::{mean_nll, train, validation_split, write_log_csv, EpochLog, TrainOutcome};
pub use search::{random_search, SearchResult, SearchSpace, Trial};
