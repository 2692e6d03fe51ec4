//! Direct maximum-likelihood estimation of a full rate matrix over a finite
//! universe of indexed items.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor};
use crate::choice::{pcmc_distribution, ChoiceDistribution, RateMatrix};
use crate::data::{FeatureSchema, IndexedSession, Session};
use crate::error::{PcmcError, Result};
use crate::model::{ChoiceModel, ModelKind};
use crate::seeding::derive_seed;

/// Choice counts per observed set. Keys are sorted universe indices; values
/// count how often each member (in key order) was chosen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceCounts {
    pub universe: usize,
    pub sets: BTreeMap<Vec<usize>, Vec<u64>>,
}

impl ChoiceCounts {
    pub fn new(universe: usize) -> Self {
        ChoiceCounts {
            universe,
            sets: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> u64 {
        self.sets.values().flatten().sum()
    }

    /// Record that `set[choice]` was chosen from `set`.
    pub fn add(&mut self, set: &[usize], choice: usize) -> Result<()> {
        if set.is_empty() {
            return Err(PcmcError::EmptySubset);
        }
        if choice >= set.len() {
            return Err(PcmcError::IndexOutOfRange {
                index: choice,
                size: set.len(),
            });
        }
        if let Some(&bad) = set.iter().find(|&&i| i >= self.universe) {
            return Err(PcmcError::IndexOutOfRange {
                index: bad,
                size: self.universe,
            });
        }
        let mut key = set.to_vec();
        key.sort_unstable();
        if key.windows(2).any(|w| w[0] == w[1]) {
            return Err(PcmcError::InvalidParameter(format!("set {set:?} repeats an item")));
        }
        let pos = key.binary_search(&set[choice]).expect("chosen item is in the set");
        let n = key.len();
        self.sets.entry(key).or_insert_with(|| vec![0; n])[pos] += 1;
        Ok(())
    }
}

/// Exact multiset aggregation of indexed sessions.
pub fn aggregate_counts(universe: usize, sessions: &[IndexedSession]) -> Result<ChoiceCounts> {
    let mut c = ChoiceCounts::new(universe);
    for s in sessions {
        c.add(&s.set, s.choice)?;
    }
    Ok(c)
}

/// `Σ_S Σ_i C_iS · ln P_S(i)` under `q`.
pub fn log_likelihood(q: &RateMatrix, counts: &ChoiceCounts) -> Result<f64> {
    if q.n() != counts.universe {
        return Err(PcmcError::ShapeMismatch(format!(
            "{}-item matrix for a {}-item universe",
            q.n(),
            counts.universe
        )));
    }
    let mut ll = 0.0;
    for (set, c) in &counts.sets {
        let p = pcmc_distribution(q, set)?;
        for (ci, pi) in c.iter().zip(p.probs()) {
            if *ci > 0 {
                ll += *ci as f64 * pi.ln();
            }
        }
    }
    Ok(ll)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Plain projected gradient.
    Identity,
    /// Step along `q ⊙ ∇`, i.e. the gradient in log-rate coordinates to
    /// first order; the natural scale of a rate parameter.
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Pseudo-count added to every member of every observed set.
    pub smoothing: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Rates are projected onto `[floor, ∞)` after every step.
    pub floor: f64,
    pub tolerance: f64,
    /// Consecutive accepted steps below `tolerance` that end a restart.
    pub stall_steps: usize,
    pub preconditioner: Preconditioner,
    pub seed: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            smoothing: 0.1,
            restarts: 20,
            max_iterations: 50,
            floor: 1e-3,
            tolerance: 1e-8,
            stall_steps: 10,
            preconditioner: Preconditioner::Rate,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub rates: RateMatrix,
    /// Smoothed mean log-likelihood of the selected restart.
    pub objective: f64,
    pub best_restart: usize,
    /// Objective after each accepted step of the selected restart.
    pub trace: Vec<f64>,
    /// Restarts abandoned on a non-finite objective.
    pub failed_restarts: usize,
}

struct Objective<'a> {
    n: usize,
    sets: Vec<(&'a Vec<usize>, Vec<f64>)>,
    total: f64,
}

impl<'a> Objective<'a> {
    fn new(counts: &'a ChoiceCounts, smoothing: f64) -> Self {
        let sets: Vec<_> = counts
            .sets
            .iter()
            .filter(|(s, _)| s.len() > 1)
            .map(|(s, c)| (s, c.iter().map(|&x| x as f64 + smoothing).collect::<Vec<f64>>()))
            .collect();
        let total = sets.iter().flat_map(|(_, c)| c).sum::<f64>().max(f64::MIN_POSITIVE);
        Objective {
            n: counts.universe,
            sets,
            total,
        }
    }

    /// Mean smoothed log-likelihood and, optionally, its gradient with
    /// respect to the off-diagonal rates (row-major pair order).
    fn eval(&self, x: &[f64], with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let mut store = ParamStore::new();
        let id: ParamId = store.add("rates", Tensor::new(x.len(), 1, x.to_vec())?);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let full = tape.pairs_to_off_diagonal(p, self.n)?;
        let mut terms = Vec::with_capacity(self.sets.len());
        for (set, w) in &self.sets {
            let sub = tape.submatrix(full, set)?;
            let q = tape.row_neg_sum_diagonal(sub)?;
            let sys = tape.stationary_system(q)?;
            let mut rhs = vec![0.0; set.len()];
            rhs[set.len() - 1] = 1.0;
            let b = tape.constant(Tensor::row(rhs));
            let pi = tape.linear_solve(sys, b)?;
            let lp = tape.ln_floor(pi, 1e-300);
            let scaled: Vec<f64> = w.iter().map(|c| c / self.total).collect();
            terms.push(tape.weighted_sum(lp, &scaled)?);
        }
        if terms.is_empty() {
            return Ok((0.0, with_grad.then(|| vec![0.0; x.len()])));
        }
        let row = tape.concat(&terms)?;
        let obj = tape.sum(row);
        let value = tape.value(obj).item();
        let grad = if with_grad {
            let g = tape.backward(obj, &store)?;
            Some(g.grads[0].data().to_vec())
        } else {
            None
        };
        Ok((value, grad))
    }
}

fn off_diagonal_to_matrix(n: usize, x: &[f64]) -> Result<RateMatrix> {
    let mut dense = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                dense[i * n + j] = x[k];
                k += 1;
            }
        }
    }
    RateMatrix::from_off_diagonal(n, dense)
}

/// Projected gradient ascent with backtracking on the smoothed
/// log-likelihood, best of several seeded restarts.
pub fn fit_mle(counts: &ChoiceCounts, options: &MleOptions) -> Result<MleFit> {
    let n = counts.universe;
    if n < 2 {
        return Err(PcmcError::InvalidParameter("universe needs at least 2 items".into()));
    }
    if options.restarts == 0 || !(options.floor > 0.0) || options.smoothing < 0.0 {
        return Err(PcmcError::InvalidParameter(
            "restarts >= 1, floor > 0 and smoothing >= 0 are required".into(),
        ));
    }
    let objective = Objective::new(counts, options.smoothing);
    let mut best: Option<(f64, Vec<f64>, usize, Vec<f64>)> = None;
    let mut failed = 0;
    for r in 0..options.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, r as u64));
        let x0: Vec<f64> = (0..n * (n - 1)).map(|_| rng.gen_range(0.5..1.5)).collect();
        match ascend(&objective, x0, options) {
            Ok((value, x, trace)) => {
                log::debug!("restart {r}: objective {value:.8} after {} steps", trace.len() - 1);
                if best.as_ref().is_none_or(|b| value > b.0) {
                    best = Some((value, x, r, trace));
                }
            }
            Err(e @ (PcmcError::Numeric(_) | PcmcError::Singular(_))) => {
                log::warn!("restart {r} abandoned: {e}");
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let (objective, x, best_restart, trace) = best
        .ok_or_else(|| PcmcError::Numeric("every restart produced a non-finite objective".into()))?;
    Ok(MleFit {
        rates: off_diagonal_to_matrix(n, &x)?,
        objective,
        best_restart,
        trace,
        failed_restarts: failed,
    })
}

fn ascend(obj: &Objective<'_>, mut x: Vec<f64>, o: &MleOptions) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let project = |v: f64| v.max(o.floor);
    let (mut value, g) = obj.eval(&x, true)?;
    let mut grad = g.expect("gradient requested");
    if !value.is_finite() {
        return Err(PcmcError::Numeric(format!("initial objective {value}")));
    }
    let mut trace = vec![value];
    let mut step = 1.0;
    let mut stalled = 0;
    for _ in 0..o.max_iterations {
        let dir: Vec<f64> = match o.preconditioner {
            Preconditioner::Identity => grad.clone(),
            Preconditioner::Rate => grad.iter().zip(&x).map(|(g, q)| g * q * q).collect(),
        };
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| project(xi + step * di)).collect();
            let gain: f64 = grad.iter().zip(cand.iter().zip(&x)).map(|(g, (c, xi))| g * (c - xi)).sum();
            let (v, _) = obj.eval(&cand, false)?;
            if v.is_finite() && v >= value + 1e-4 * gain && v >= value {
                accepted = Some((cand, v));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, nv)) = accepted else { break };
        let improvement = nv - value;
        x = nx;
        value = nv;
        trace.push(value);
        if improvement < o.tolerance {
            stalled += 1;
            if stalled >= o.stall_steps {
                break;
            }
        } else {
            stalled = 0;
        }
        let (_, g) = obj.eval(&x, true)?;
        grad = g.expect("gradient requested");
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(PcmcError::Numeric("non-finite gradient".into()));
        }
        step *= 2.0;
    }
    Ok((value, x, trace))
}

/// A fitted rate matrix applied to feature sessions whose alternatives carry
/// a categorical item field naming the universe index.
#[derive(Debug, Clone, PartialEq)]
pub struct MleModel {
    pub schema: FeatureSchema,
    pub item_field: String,
    pub rates: RateMatrix,
    field_index: usize,
}

impl MleModel {
    pub fn new(schema: FeatureSchema, item_field: &str, rates: RateMatrix) -> Result<Self> {
        let field_index = schema
            .alternative_field(item_field)
            .ok_or_else(|| PcmcError::Schema(format!("no alternative field '{item_field}'")))?;
        let card = schema.alternative_fields[field_index]
            .cardinality()
            .ok_or_else(|| PcmcError::Schema(format!("'{item_field}' is not categorical")))?;
        if card != rates.n() {
            return Err(PcmcError::Schema(format!(
                "'{item_field}' has {card} levels but the matrix has {} items",
                rates.n()
            )));
        }
        Ok(MleModel {
            schema,
            item_field: item_field.to_string(),
            rates,
            field_index,
        })
    }

    pub fn predict_indexed(&self, set: &[usize]) -> Result<ChoiceDistribution> {
        pcmc_distribution(&self.rates, set)
    }
}

impl ChoiceModel for MleModel {
    fn kind(&self) -> ModelKind {
        ModelKind::PcmcMle
    }

    fn predict(&self, session: &Session) -> Result<ChoiceDistribution> {
        let field = &self.schema.alternative_fields[self.field_index];
        let set = session
            .alternatives
            .iter()
            .map(|a| {
                let level = a
                    .get(self.field_index)
                    .and_then(|v| v.as_cat())
                    .ok_or_else(|| PcmcError::Schema(format!("missing '{}'", self.item_field)))?;
                // An unseen item has no parameters in the non-amortized model.
                field
                    .level_index(level)
                    .ok_or_else(|| PcmcError::Schema(format!("unknown item '{level}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.predict_indexed(&set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::RateMatrix;

    fn rps(alpha: f64) -> RateMatrix {
        RateMatrix::from_fn(3, |i, j| if (i + 1) % 3 == j { 1.0 - alpha } else { alpha }).unwrap()
    }

    #[test]
    fn aggregation() {
        let s = |set: Vec<usize>, choice| IndexedSession { set, choice };
        let c = aggregate_counts(3, &[s(vec![0, 1], 0)]).unwrap();
        assert_eq!(c.sets[&vec![0, 1]], vec![1, 0]);
        let c = aggregate_counts(3, &[s(vec![1, 0], 1), s(vec![0, 1], 0), s(vec![2, 1], 0)]).unwrap();
        assert_eq!(c.sets[&vec![0, 1]], vec![2, 0]);
        assert_eq!(c.sets[&vec![1, 2]], vec![0, 1]);
        assert_eq!(c.total(), 3);
        assert!(aggregate_counts(2, &[s(vec![0, 2], 0)]).is_err());
        assert!(aggregate_counts(3, &[s(vec![0, 0], 0)]).is_err());
    }

    #[test]
    fn likelihood_values() {
        let uniform = RateMatrix::from_fn(4, |_, _| 1.0).unwrap();
        let mut c = ChoiceCounts::new(4);
        assert_eq!(log_likelihood(&uniform, &c).unwrap(), 0.0);
        c.add(&[0, 1, 2, 3], 2).unwrap();
        assert!((log_likelihood(&uniform, &c).unwrap() + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut c = ChoiceCounts::new(4);
        for (set, k) in [(vec![0, 1], 0), (vec![1, 2, 3], 2), (vec![0, 1, 2, 3], 1), (vec![0, 3], 1)] {
            c.add(&set, k).unwrap();
        }
        let obj = Objective::new(&c, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(0.5..1.5)).collect();
        let (_, g) = obj.eval(&x, true).unwrap();
        let g = g.unwrap();
        for k in 0..12 {
            let h = 1e-5;
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (obj.eval(&xp, false).unwrap().0 - obj.eval(&xm, false).unwrap().0) / (2.0 * h);
            assert!(crate::autodiff::gradcheck::relative_error(g[k], fd) < 1e-6);
        }
    }

    #[test]
    fn heavy_smoothing_is_near_uniform() {
        let mut c = ChoiceCounts::new(2);
        c.add(&[0, 1], 0).unwrap();
        let fit = fit_mle(
            &c,
            &MleOptions {
                smoothing: 100.0,
                restarts: 3,
                ..MleOptions::default()
            },
        )
        .unwrap();
        let p = pcmc_distribution(&fit.rates, &[0, 1]).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 0.01, "{:?}", p.probs());
    }

    #[test]
    fn trace_is_monotone_and_floor_holds() {
        let q = rps(0.75);
        let mut c = ChoiceCounts::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for set in [vec![0, 1], vec![1, 2], vec![0, 2], vec![0, 1, 2]] {
            let p = pcmc_distribution(&q, &set).unwrap();
            for _ in 0..500 {
                let u: f64 = rng.gen();
                let k = if u < p.probs()[0] {
                    0
                } else if set.len() == 2 || u < p.probs()[0] + p.probs()[1] {
                    1
                } else {
                    2
                };
                c.add(&set, k).unwrap();
            }
        }
        let fit = fit_mle(&c, &MleOptions { restarts: 4, ..MleOptions::default() }).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(fit.rates.get(i, j) >= 1e-3);
                }
            }
        }
        let truth_ll = log_likelihood(&q, &c).unwrap();
        let worse = log_likelihood(&rps(0.6), &c).unwrap();
        assert!(truth_ll >= worse);
        let pair = pcmc_distribution(&fit.rates, &[0, 1]).unwrap();
        assert!((pair.probs()[0] - 0.75).abs() < 0.05);
    }
}
