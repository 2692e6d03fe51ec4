use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Activation, ArchitectureConfig};
use super::train::train;
use crate::data::{FeatureSchema, Session};
use crate::error::{PcmcError, Result};
use crate::seeding::derive_seed;

/// Discrete candidate values for each searched hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub hidden_layers: Vec<usize>,
    pub nodes_per_layer: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rates: (1..=6).map(|i| 10f64.powi(-i)).collect(),
            batch_sizes: vec![1, 2, 4, 8, 16],
            hidden_layers: vec![1, 2, 3],
            nodes_per_layer: vec![32, 64, 128, 256, 512],
            activations: Activation::ALL.to_vec(),
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty()
            || self.batch_sizes.is_empty()
            || self.hidden_layers.is_empty()
            || self.nodes_per_layer.is_empty()
            || self.activations.is_empty()
        {
            return Err(PcmcError::InvalidParameter(
                "every search dimension needs at least one value".into(),
            ));
        }
        Ok(())
    }

    /// Uniform draw of one value per dimension on top of `base`.
    pub fn sample(&self, base: &ArchitectureConfig, rng: &mut ChaCha8Rng) -> ArchitectureConfig {
        ArchitectureConfig {
            learning_rate: *self.learning_rates.choose(rng).expect("validated"),
            batch_size: *self.batch_sizes.choose(rng).expect("validated"),
            hidden_layers: *self.hidden_layers.choose(rng).expect("validated"),
            nodes_per_layer: *self.nodes_per_layer.choose(rng).expect("validated"),
            activation: *self.activations.choose(rng).expect("validated"),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub config: ArchitectureConfig,
    /// Best validation NLL, or `None` when training failed.
    pub validation_nll: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ArchitectureConfig,
    /// Trials ranked by validation NLL, failures last.
    pub leaderboard: Vec<Trial>,
}

/// Seeded random search: `budget` configurations drawn from `space`, each
/// trained with early stopping and ranked by validation NLL.
pub fn random_search(
    schema: &FeatureSchema,
    sessions: &[Session],
    base: &ArchitectureConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<SearchResult> {
    if budget == 0 {
        return Err(PcmcError::InvalidParameter("search budget must be >= 1".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    for t in 0..budget {
        let mut config = space.sample(base, &mut rng);
        config.seed = derive_seed(seed, t as u64);
        log::info!(
            "trial {t}: lr {} batch {} h {} nodes {} {}",
            config.learning_rate,
            config.batch_size,
            config.hidden_layers,
            config.nodes_per_layer,
            config.activation.name()
        );
        let trial = match train(schema, sessions, &config) {
            Ok(out) => Trial {
                trial: t,
                epochs: out.log.len(),
                validation_nll: out.best_validation_nll,
                config,
                error: None,
            },
            // Unstable draws (for instance a learning rate of 0.1) are
            // recorded and ranked last rather than ending the search.
            Err(e @ (PcmcError::Numeric(_) | PcmcError::Singular(_))) => Trial {
                trial: t,
                epochs: 0,
                validation_nll: None,
                config,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        trials.push(trial);
    }
    trials.sort_by(|a, b| {
        let key = |t: &Trial| t.validation_nll.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.trial.cmp(&b.trial))
    });
    Ok(SearchResult {
        best: trials[0].config.clone(),
        leaderboard: trials,
    })
}
