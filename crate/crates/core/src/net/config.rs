use serde::{Deserialize, Serialize};

use crate::error::{PcmcError, Result};

/// Hidden-layer nonlinearity of the transition-rate network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    /// Leaky ReLU with slope 0.01.
    LeakyRelu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::LeakyRelu,
    ];

    pub const LEAKY_SLOPE: f64 = 0.01;

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "leaky_relu" | "leakyrelu" | "leaky-relu" => Ok(Activation::LeakyRelu),
            other => Err(PcmcError::InvalidParameter(format!(
                "unknown activation '{other}'"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::LeakyRelu => "leaky_relu",
        }
    }
}

/// How categorical fields are turned into vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalEncoding {
    /// Trainable table of width `min(⌈c/2⌉, cap)`.
    Embedding,
    /// Fixed indicator vector of width `c`; unknown levels map to zeros.
    OneHot,
}

/// Architecture and optimizer settings for the choice network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub embedding_cap: usize,
    pub categorical_encoding: CategoricalEncoding,
    /// Include standardized numeric fields in the representation.
    pub numeric_passthrough: bool,
    /// Hidden layers of the rate network. Zero means the rate network is a
    /// single linear neuron.
    pub hidden_layers: usize,
    pub nodes_per_layer: usize,
    pub activation: Activation,
    /// Rate floor added after the `max(0, ·)` clamp.
    pub epsilon: f64,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Mini-batch size in sessions.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub validation_fraction: f64,
    /// Retrain on train + validation for the selected epoch count.
    pub refit: bool,
    pub seed: u64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig::airline()
    }
}

impl ArchitectureConfig {
    /// Best values of the airline hyperparameter search.
    pub fn airline() -> Self {
        ArchitectureConfig {
            embedding_cap: 50,
            categorical_encoding: CategoricalEncoding::Embedding,
            numeric_passthrough: true,
            hidden_layers: 2,
            nodes_per_layer: 512,
            activation: Activation::LeakyRelu,
            epsilon: 0.5,
            dropout: 0.5,
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 100,
            patience: 5,
            min_delta: 0.01,
            validation_fraction: 0.1,
            refit: false,
            seed: 0,
        }
    }

    /// Settings of the two-attribute context-effect experiment: one session
    /// per step, no dropout, 100 epochs.
    pub fn synthetic() -> Self {
        ArchitectureConfig {
            hidden_layers: 3,
            nodes_per_layer: 16,
            dropout: 0.0,
            batch_size: 1,
            max_epochs: 100,
            patience: 100,
            ..ArchitectureConfig::airline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PcmcError::InvalidParameter(m));
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".into());
        }
        if self.hidden_layers > 0 && self.nodes_per_layer == 0 {
            return fail("nodes per layer must be >= 1".into());
        }
        if self.embedding_cap == 0 {
            return fail("embedding cap must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }

    /// Width of the embedding for a categorical field of cardinality `c`.
    pub fn embedding_dim(&self, cardinality: usize) -> usize {
        embedding_dim(cardinality, self.embedding_cap)
    }
}

/// `min(⌈c/2⌉, cap)`.
pub fn embedding_dim(cardinality: usize, cap: usize) -> usize {
    cardinality.div_ceil(2).min(cap)
}
