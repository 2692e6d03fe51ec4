//! Recover a 4-item PCMC from 10^5 sampled choices by maximum likelihood.

use pcmc::datagen::{all_subsets, sample_sessions, GroundTruthModel, SetGenerator};
use pcmc::mle::{aggregate_counts, fit_mle, MleOptions};
use pcmc::{choice::pcmc_distribution, Result};

fn main() -> Result<()> {
    let truth = GroundTruthModel::RandomPcmc { n: 4, seed: 7 };
    let q = truth.rate_matrix()?;
    let sets = all_subsets(4, 2);
    let sessions = sample_sessions(&truth, &SetGenerator::Cycle { sets: sets.clone() }, 100_000, 11)?;
    let counts = aggregate_counts(4, &sessions)?;

    let started = std::time::Instant::now();
    let fit = fit_mle(&counts, &MleOptions::default())?;
    println!(
        "fit in {:.2?}: objective {:.6}, restart {}, {} steps",
        started.elapsed(),
        fit.objective,
        fit.best_restart,
        fit.trace.len()
    );

    let mut worst = 0.0f64;
    for set in &sets {
        let p = pcmc_distribution(&q, set)?;
        let p_hat = pcmc_distribution(&fit.rates, set)?;
        let tv = p.total_variation(&p_hat);
        worst = worst.max(tv);
        println!("{set:?}  true {:.3?}  fitted {:.3?}  tv {tv:.4}", p.probs(), p_hat.probs());
    }
    println!("max total variation {worst:.4}");
    Ok(())
}
