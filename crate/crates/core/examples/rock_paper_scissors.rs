//! Fit PCMC-Net to stochastic rock-paper-scissors choices, a model that
//! violates stochastic transitivity and so has no MNL representation.
//!
//! A single linear neuron scores a pair as `c + u_i + v_j`, so the antisymmetric
//! part `(u_i − v_i) − (u_j − v_j)` is a potential difference and cannot
//! cycle. One hidden layer is enough to recover the cycle.

use pcmc::datagen::{all_subsets, indexed_schema, indexed_to_sessions, rps_model, sample_sessions, GroundTruthModel, SetGenerator};
use pcmc::net::{train, ArchitectureConfig, CategoricalEncoding, PcmcNet};
use pcmc::data::{FeatureValue, Session};
use pcmc::{choice::pcmc_distribution, Result};

const ALPHA: f64 = 0.75;

fn session(items: &[usize]) -> Session {
    Session {
        individual: vec![],
        alternatives: items.iter().map(|i| vec![FeatureValue::Cat(i.to_string())]).collect(),
        choice: 0,
    }
}

fn report(name: &str, net: &PcmcNet) -> Result<()> {
    let truth = rps_model(ALPHA)?;
    println!("{name}");
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        let p = net.forward(&session(&[i, j]))?.probs()[0];
        let t = pcmc_distribution(&truth, &[i, j])?.probs()[0];
        println!("  P({i} over {j}) = {p:.4}  (truth {t:.2})");
    }
    println!("  triple {:.4?}  (truth uniform)", net.forward(&session(&[0, 1, 2]))?.probs());
    Ok(())
}

fn main() -> Result<()> {
    let truth = GroundTruthModel::Rps { alpha: ALPHA };
    let sets = SetGenerator::Cycle {
        sets: all_subsets(3, 2),
    };
    let sessions = indexed_to_sessions(&sample_sessions(&truth, &sets, 50_000, 1)?);
    let schema = indexed_schema(3);

    for (name, hidden, nodes) in [("single neuron", 0, 1), ("one hidden layer, 4 nodes", 1, 4)] {
        let config = ArchitectureConfig {
            categorical_encoding: CategoricalEncoding::OneHot,
            hidden_layers: hidden,
            nodes_per_layer: nodes,
            max_epochs: 20,
            ..ArchitectureConfig::synthetic()
        };
        let started = std::time::Instant::now();
        let outcome = train(&schema, &sessions, &config)?;
        report(&format!("{name} ({:.1?})", started.elapsed()), &outcome.model)?;
    }
    Ok(())
}
