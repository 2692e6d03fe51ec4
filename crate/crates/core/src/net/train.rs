use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ArchitectureConfig;
use super::model::PcmcNet;
use super::represent::NormalizationStats;
use crate::autodiff::{AdamState, ParamStore, Tape, Tensor};
use crate::data::{FeatureSchema, Session};
use crate::error::{PcmcError, Result};
use crate::seeding::derive_seed;

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub validation_nll: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PcmcNet,
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub best_validation_nll: Option<f64>,
    /// Log of the optional retraining on train + validation.
    pub refit_log: Vec<EpochLog>,
    /// Probabilities that hit the log floor during training.
    pub floored_logs: usize,
    /// Sessions skipped because their system was singular.
    pub singular_sessions: usize,
}

/// Seeded split: the last `fraction` of a shuffled index list is held out.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, SPLIT_STREAM)));
    let held = ((n as f64) * fraction).round() as usize;
    let held = held.min(n.saturating_sub(1));
    let valid = idx.split_off(n - held);
    (idx, valid)
}

/// Mean negative log-likelihood of `sessions` under `model` (dropout off).
pub fn mean_nll(model: &PcmcNet, sessions: &[Session]) -> Result<f64> {
    if sessions.is_empty() {
        return Err(PcmcError::InvalidParameter("no sessions to score".into()));
    }
    let mut total = 0.0;
    for s in sessions {
        total += model.loss(s)?;
    }
    Ok(total / sessions.len() as f64)
}

/// Fit a PCMC network with Adam and early stopping on a held-out split.
pub fn train(
    schema: &FeatureSchema,
    sessions: &[Session],
    config: &ArchitectureConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if sessions.is_empty() {
        return Err(PcmcError::InvalidParameter("training set is empty".into()));
    }
    for s in sessions {
        schema.check_session(s)?;
    }
    let (train_idx, valid_idx) =
        validation_split(sessions.len(), config.validation_fraction, config.seed);
    let train_set: Vec<Session> = train_idx.iter().map(|&i| sessions[i].clone()).collect();
    let valid_set: Vec<Session> = valid_idx.iter().map(|&i| sessions[i].clone()).collect();

    let run = fit(schema, &train_set, &valid_set, config, config.max_epochs, true)?;
    let mut outcome = TrainOutcome {
        model: run.model,
        log: run.log,
        best_epoch: run.best_epoch,
        best_validation_nll: run.best_validation_nll,
        refit_log: Vec::new(),
        floored_logs: run.floored_logs,
        singular_sessions: run.singular_sessions,
    };
    if config.refit && !valid_set.is_empty() {
        log::info!("refitting on all {} sessions for {} epochs", sessions.len(), outcome.best_epoch);
        let refit = fit(schema, sessions, &[], config, outcome.best_epoch, false)?;
        outcome.model = refit.model;
        outcome.refit_log = refit.log;
        outcome.floored_logs += refit.floored_logs;
        outcome.singular_sessions += refit.singular_sessions;
    }
    Ok(outcome)
}

struct Run {
    model: PcmcNet,
    log: Vec<EpochLog>,
    best_epoch: usize,
    best_validation_nll: Option<f64>,
    floored_logs: usize,
    singular_sessions: usize,
}

fn fit(
    schema: &FeatureSchema,
    train_set: &[Session],
    valid_set: &[Session],
    config: &ArchitectureConfig,
    epochs: usize,
    early_stop: bool,
) -> Result<Run> {
    let stats = NormalizationStats::fit(schema, train_set);
    let mut model = PcmcNet::new(schema.clone(), config.clone(), stats)?;
    let mut adam = AdamState::new(model.params(), config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffler = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SHUFFLE_STREAM));
    let dropout_base = derive_seed(config.seed, DROPOUT_STREAM);

    let mut log = Vec::new();
    let mut best: Option<(f64, ParamStore, usize)> = None;
    let mut reference = f64::INFINITY;
    let mut waited = 0;
    let mut floored = 0;
    let mut singular = 0;
    let mut step: u64 = 0;
    let start = Instant::now();

    for epoch in 1..=epochs {
        order.shuffle(&mut shuffler);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            let mut used = 0usize;
            for &i in batch {
                step += 1;
                let s = &train_set[i];
                let mut tape = if config.dropout > 0.0 {
                    Tape::training(derive_seed(dropout_base, step))
                } else {
                    Tape::new()
                };
                let loss = match model.loss_on_tape(&mut tape, s) {
                    Ok(l) => l,
                    Err(PcmcError::Singular(msg)) => {
                        log::warn!("epoch {epoch}: skipping singular session: {msg}");
                        singular += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(PcmcError::Numeric(format!(
                        "non-finite loss {value} at epoch {epoch}, step {step} ({} alternatives)",
                        s.alternatives.len()
                    )));
                }
                floored += tape.floored_logs();
                let g = tape.backward(loss, model.params())?.grads;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| a.add_assign(g)),
                }
                used += 1;
                epoch_loss += value;
                epoch_count += 1;
            }
            let Some(mut grads) = acc else {
                return Err(PcmcError::Singular(format!(
                    "every session of a batch at epoch {epoch} produced a singular system"
                )));
            };
            let inv = 1.0 / used as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= inv);
                if g.data().iter().any(|x| !x.is_finite()) {
                    return Err(PcmcError::Numeric(format!(
                        "non-finite gradient at epoch {epoch}, step {step}"
                    )));
                }
            }
            adam.step(model.params_mut(), &grads)?;
        }
        let train_nll = epoch_loss / epoch_count.max(1) as f64;
        let validation_nll = if valid_set.is_empty() {
            None
        } else {
            Some(mean_nll(&model, valid_set)?)
        };
        let seconds = start.elapsed().as_secs_f64();
        match validation_nll {
            Some(v) => log::info!("epoch {epoch}: train {train_nll:.5} validation {v:.5}"),
            None => log::info!("epoch {epoch}: train {train_nll:.5}"),
        }
        log.push(EpochLog {
            epoch,
            train_nll,
            validation_nll,
            seconds,
        });
        let Some(v) = validation_nll else { continue };
        if !v.is_finite() {
            return Err(PcmcError::Numeric(format!("validation NLL {v} at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, model.params().clone(), epoch));
        }
        if v < reference - config.min_delta {
            reference = v;
            waited = 0;
        } else {
            waited += 1;
            if early_stop && waited >= config.patience {
                log::info!("early stop at epoch {epoch}");
                break;
            }
        }
    }

    let (best_epoch, best_validation_nll) = match best {
        Some((v, params, epoch)) => {
            *model.params_mut() = params;
            (epoch, Some(v))
        }
        None => (log.len(), None),
    };
    Ok(Run {
        model,
        log,
        best_epoch,
        best_validation_nll,
        floored_logs: floored,
        singular_sessions: singular,
    })
}

/// Training log as CSV: `epoch,train_nll,validation_nll,seconds`.
pub fn write_log_csv(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| PcmcError::io(path, e))?;
    let mut text = String::from("epoch,train_nll,validation_nll,seconds\n");
    for e in log {
        let v = e.validation_nll.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{},{:.3}\n", e.epoch, e.train_nll, v, e.seconds));
    }
    f.write_all(text.as_bytes()).map_err(|e| PcmcError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureValue, FieldSpec};
    use rand::Rng;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![], vec![FieldSpec::categorical("item", 4)]).unwrap()
    }

    fn random_sessions(n: usize, seed: u64) -> Vec<Session> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut items: Vec<usize> = (0..4).collect();
                items.shuffle(&mut rng);
                let k = rng.gen_range(2..=4);
                Session {
                    individual: vec![],
                    alternatives: items[..k]
                        .iter()
                        .map(|i| vec![FeatureValue::Cat(i.to_string())])
                        .collect(),
                    choice: rng.gen_range(0..k),
                }
            })
            .collect()
    }

    fn small() -> ArchitectureConfig {
        ArchitectureConfig {
            hidden_layers: 1,
            nodes_per_layer: 8,
            batch_size: 8,
            max_epochs: 30,
            patience: 5,
            learning_rate: 0.01,
            ..ArchitectureConfig::synthetic()
        }
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a, b) = validation_split(100, 0.1, 3);
        assert_eq!((a.len(), b.len()), (90, 10));
        let (a2, b2) = validation_split(100, 0.1, 3);
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(validation_split(1, 0.5, 0).1.len(), 0);
    }

    #[test]
    fn uniform_choices_stay_near_entropy() {
        // Uniform choices: the best achievable NLL is the mean of ln|S|.
        let sessions = random_sessions(1500, 11);
        let out = train(&schema(), &sessions, &small()).unwrap();
        let (_, valid) = validation_split(sessions.len(), 0.1, 0);
        let held: Vec<Session> = valid.iter().map(|&i| sessions[i].clone()).collect();
        let entropy: f64 =
            held.iter().map(|s| (s.alternatives.len() as f64).ln()).sum::<f64>() / held.len() as f64;
        let nll = out.best_validation_nll.unwrap();
        assert!(nll > entropy - 0.05 && nll < entropy + 0.05, "{nll} vs {entropy}");
    }

    #[test]
    fn training_is_deterministic() {
        let sessions = random_sessions(200, 4);
        let mut c = small();
        c.max_epochs = 3;
        c.dropout = 0.3;
        let a = train(&schema(), &sessions, &c).unwrap();
        let b = train(&schema(), &sessions, &c).unwrap();
        assert_eq!(a.model.params().values(), b.model.params().values());
        let strip = |l: &[EpochLog]| l.iter().map(|e| (e.train_nll, e.validation_nll)).collect::<Vec<_>>();
        assert_eq!(strip(&a.log), strip(&b.log));
    }

    #[test]
    fn learns_a_fixed_preference() {
        // Item 0 is always chosen when present.
        let sessions: Vec<Session> = random_sessions(600, 5)
            .into_iter()
            .map(|mut s| {
                if let Some(p) = s.alternatives.iter().position(|a| a[0] == FeatureValue::Cat("0".into())) {
                    s.choice = p;
                }
                s
            })
            .collect();
        let out = train(&schema(), &sessions, &small()).unwrap();
        let first = out.log[0].validation_nll.unwrap();
        assert!(out.best_validation_nll.unwrap() < first);
        assert!(out.best_validation_nll.unwrap() < 0.6);
    }

    #[test]
    fn refit_uses_best_epoch() {
        let sessions = random_sessions(100, 6);
        let mut c = small();
        c.max_epochs = 4;
        c.patience = 10;
        c.refit = true;
        let out = train(&schema(), &sessions, &c).unwrap();
        assert_eq!(out.refit_log.len(), out.best_epoch);
        assert!(out.refit_log.iter().all(|e| e.validation_nll.is_none()));
    }

    #[test]
    fn log_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let log = vec![EpochLog {
            epoch: 1,
            train_nll: 0.5,
            validation_nll: None,
            seconds: 0.25,
        }];
        write_log_csv(&p, &log).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "epoch,train_nll,validation_nll,seconds\n1,0.5,,0.250\n");
    }

    #[test]
    fn rejects_empty_dataset() {
        assert!(train(&schema(), &[], &small()).is_err());
    }
}
