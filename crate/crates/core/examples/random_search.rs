//! Seeded random search over the network's hyperparameters on a small
//! context-effect dataset.

use pcmc::datagen::{context_schema, context_sessions, ContextOracle};
use pcmc::net::{random_search, ArchitectureConfig, SearchSpace};
use pcmc::Result;

fn main() -> Result<()> {
    let sessions = context_sessions(&ContextOracle::default(), 2_000, 4)?;
    let base = ArchitectureConfig {
        max_epochs: 10,
        patience: 3,
        dropout: 0.0,
        ..ArchitectureConfig::synthetic()
    };
    // Narrower widths than the full space keep the example quick.
    let space = SearchSpace {
        nodes_per_layer: vec![8, 16, 32],
        ..SearchSpace::default()
    };
    let result = random_search(&context_schema(), &sessions, &base, &space, 6, 11)?;
    for (rank, t) in result.leaderboard.iter().enumerate() {
        println!(
            "{:>2}. trial {} lr {:.0e} batch {:>2} h {} nodes {:>2} {:<10} nll {}",
            rank + 1,
            t.trial,
            t.config.learning_rate,
            t.config.batch_size,
            t.config.hidden_layers,
            t.config.nodes_per_layer,
            t.config.activation.name(),
            t.validation_nll.map_or_else(|| format!("failed: {}", t.error.as_deref().unwrap_or("")), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}
