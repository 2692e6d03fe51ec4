//! Finite-difference check of the full network loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Activation, ArchitectureConfig};
use super::model::PcmcNet;
use super::represent::NormalizationStats;
use crate::autodiff::gradcheck::{max_gradient_error, GradCheckRow, END_TO_END_TOL};
use crate::autodiff::{ParamId, Tape};
use crate::data::{FeatureSchema, FeatureValue, FieldSpec, Session};
use crate::error::Result;
use crate::seeding::derive_seed;

fn schema() -> FeatureSchema {
    FeatureSchema {
        individual_fields: vec![FieldSpec::categorical("segment", 3), FieldSpec::numeric("age", None)],
        alternative_fields: vec![
            FieldSpec::categorical("carrier", 5),
            FieldSpec::numeric("price", None),
            FieldSpec::numeric("duration", None),
        ],
    }
}

fn session(rng: &mut ChaCha8Rng, n: usize) -> Session {
    Session {
        individual: vec![
            FeatureValue::Cat(rng.gen_range(0..3).to_string()),
            FeatureValue::Num(rng.gen_range(20.0..70.0)),
        ],
        alternatives: (0..n)
            .map(|_| {
                vec![
                    FeatureValue::Cat(rng.gen_range(0..5).to_string()),
                    FeatureValue::Num(rng.gen_range(100.0..900.0)),
                    FeatureValue::Num(rng.gen_range(1.0..20.0)),
                ]
            })
            .collect(),
        choice: rng.gen_range(0..n),
    }
}

/// Loss gradient of a small random network (dropout off) against central
/// differences. Trial `t` uses depth `t mod 4`, every activation in turn,
/// and a session of 2 to 5 alternatives. Biases are jittered so that no
/// pre-activation sits exactly on a kink.
pub fn end_to_end_suite(trials: usize, seed: u64) -> Result<GradCheckRow> {
    let schema = schema();
    let mut worst = 0.0f64;
    for t in 0..trials {
        let trial_seed = derive_seed(seed, t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let data: Vec<Session> = (0..20).map(|_| session(&mut rng, 4)).collect();
        let config = ArchitectureConfig {
            hidden_layers: t % 4,
            nodes_per_layer: 5,
            activation: Activation::ALL[(t / 4) % 4],
            dropout: 0.0,
            seed: trial_seed,
            ..ArchitectureConfig::synthetic()
        };
        let mut net = PcmcNet::new(schema.clone(), config, NormalizationStats::fit(&schema, &data))?;
        // Biases start at zero, so a row whose previous ReLU layer is fully
        // inactive sits exactly on the kink. Move them off it.
        let store = net.params_mut();
        for k in 0..store.len() {
            let id = ParamId(k);
            if store.name(id).ends_with(".b") {
                store.get_mut(id).data_mut().iter_mut().for_each(|b| *b += rng.gen_range(-0.1..0.1));
            }
        }
        let n = rng.gen_range(2..=5);
        let s = session(&mut rng, n);
        let err = max_gradient_error(net.params(), |store| {
            let probe = PcmcNet::from_parts(
                net.schema().clone(),
                net.config().clone(),
                net.stats().clone(),
                store.clone(),
            )?;
            let mut tape = Tape::new();
            let loss = probe.loss_on_tape(&mut tape, &s)?;
            Ok((tape, loss))
        })?;
        worst = worst.max(err);
    }
    Ok(GradCheckRow {
        name: "pcmc-net loss".into(),
        trials,
        max_rel_err: worst,
        tolerance: END_TO_END_TOL,
    })
}
