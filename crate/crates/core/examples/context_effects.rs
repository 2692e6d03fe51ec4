//! Context effects on two-attribute alternatives: PCMC-Net at three depths,
//! MNL and the 66-item discretized PCMC against the dominance oracle, with
//! Monte-Carlo expected KL and preference heatmaps.
//!
//! Usage: `context_effects [epochs] [train_size] [out_dir]`.

use std::env;

use pcmc::baselines::{fit_mnl, mnl_prob, MnlOptions};
use pcmc::datagen::{context_indexed, context_item, context_schema, context_session, context_sessions, ContextOracle};
use pcmc::eval::{expected_kl, heatmap, DEFAULT_GRID};
use pcmc::mle::{aggregate_counts, fit_mle, MleOptions};
use pcmc::net::{train, ArchitectureConfig};
use pcmc::{choice::pcmc_distribution, Result};

fn main() -> Result<()> {
    let args: Vec<String> = env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let n_train: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let out_dir = args.get(3).cloned();
    let n_mc = 10_000;

    let oracle = ContextOracle::default();
    let schema = context_schema();
    let sessions = context_sessions(&oracle, n_train, 1)?;

    let mnl = fit_mnl(&schema, &sessions, &MnlOptions::default())?.model;
    let mnl_ctx = |c: [f64; 2]| mnl_prob(&mnl, &context_session(c, 0));
    println!("MNL            KL {:.4}", expected_kl(&oracle, &mnl_ctx, n_mc, 2)?);

    let counts = aggregate_counts(pcmc::datagen::CONTEXT_UNIVERSE, &context_indexed(&sessions)?)?;
    let rates = fit_mle(&counts, &MleOptions::default())?.rates;
    let mle_ctx = |c: [f64; 2]| pcmc_distribution(&rates, &[0, 1, context_item(c)?]);
    println!("PCMC (66 items) KL {:.4}", expected_kl(&oracle, &mle_ctx, n_mc, 2)?);

    for h in 1..=3 {
        let config = ArchitectureConfig {
            hidden_layers: h,
            max_epochs: epochs,
            seed: env::var("PCMC_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0),
            ..ArchitectureConfig::synthetic()
        };
        let started = std::time::Instant::now();
        let net = train(&schema, &sessions, &config)?.model;
        let net_ctx = |c: [f64; 2]| net.forward(&context_session(c, 0));
        let kl = expected_kl(&oracle, &net_ctx, n_mc, 2)?;
        println!("PCMC-Net h={h}   KL {kl:.4}  ({:.1?})", started.elapsed());
        if let (Some(dir), 3) = (&out_dir, h) {
            let map = heatmap(&net_ctx, DEFAULT_GRID)?;
            map.write(format!("{dir}/pcmc_net.csv"), format!("{dir}/pcmc_net.pgm"))?;
            heatmap(&mnl_ctx, DEFAULT_GRID)?.write(format!("{dir}/mnl.csv"), format!("{dir}/mnl.pgm"))?;
            heatmap(&oracle, DEFAULT_GRID)?.write(format!("{dir}/oracle.csv"), format!("{dir}/oracle.pgm"))?;
        }
    }
    Ok(())
}
