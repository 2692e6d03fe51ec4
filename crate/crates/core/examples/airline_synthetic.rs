//! Airline-style end-to-end run: sessions from a planted non-IIA network,
//! 27160 / 6791 split, PCMC-Net against MNL and the simple rankers.
//!
//! Usage: `airline_synthetic [nodes] [max_epochs]`.

use std::env;

use pcmc::baselines::{fit_mnl, FieldRanker, MnlOptions};
use pcmc::datagen::{airline_schema, airline_synthetic, AirlineOptions};
use pcmc::eval::{evaluate_model, evaluate_ranker, EvalReport};
use pcmc::model::{ModelKind, UniformModel};
use pcmc::net::{train, ArchitectureConfig};
use pcmc::Result;

const SESSIONS: usize = 33_951;
const TRAIN: usize = 27_160;

fn show(r: &EvalReport) {
    let nll = r.nll.map_or("     -".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:<9} nll {nll}  top1 {:.4} ({:.4})  top5 {:.4} ({:.4})",
        r.model_kind.tag(),
        r.top1,
        r.top1_mean,
        r.top5,
        r.top5_mean
    );
}

fn main() -> Result<()> {
    let args: Vec<String> = env::args().collect();
    let nodes: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);

    let schema = airline_schema();
    let started = std::time::Instant::now();
    let (sessions, _planted) = airline_synthetic(&schema, SESSIONS, &AirlineOptions::default(), 5)?;
    let (train_set, test_set) = sessions.split_at(TRAIN);
    println!("generated {} sessions in {:.1?}", sessions.len(), started.elapsed());

    show(&evaluate_model(&UniformModel, test_set, 0)?);
    show(&evaluate_ranker(ModelKind::Cheapest, &FieldRanker::cheapest(&schema)?, test_set, 0)?);
    show(&evaluate_ranker(ModelKind::Shortest, &FieldRanker::shortest(&schema)?, test_set, 0)?);

    let mnl = fit_mnl(&schema, train_set, &MnlOptions::default())?;
    show(&evaluate_model(&mnl.model, test_set, 0)?);

    let config = ArchitectureConfig {
        nodes_per_layer: nodes,
        max_epochs: epochs,
        ..ArchitectureConfig::airline()
    };
    let started = std::time::Instant::now();
    let outcome = train(&schema, train_set, &config)?;
    for e in &outcome.log {
        println!(
            "epoch {:>3}  train {:.4}  valid {:.4}  {:.1}s",
            e.epoch,
            e.train_nll,
            e.validation_nll.unwrap_or(f64::NAN),
            e.seconds
        );
    }
    println!("trained in {:.1?}, best epoch {}", started.elapsed(), outcome.best_epoch);
    show(&evaluate_model(&outcome.model, test_set, 0)?);
    Ok(())
}
