//! Pairwise choice Markov chains (PCMC) with direct maximum-likelihood
//! estimation and amortized neural inference.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod choice;
pub mod cli;
pub mod data;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mle;
pub mod model;
pub mod net;
pub mod optim;
pub mod seeding;

pub use error::{PcmcError, Result};
