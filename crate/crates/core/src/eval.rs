//! Metrics and figure data: NLL, TOP-N accuracy, Monte-Carlo expected KL and
//! preference heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Session;
use crate::datagen::{preference_for_a, sample_context_point, ContextModel, CONTEXT_HIGH, CONTEXT_LOW};
use crate::error::{PcmcError, Result};
use crate::model::{ChoiceModel, ModelKind, Ranker};
use crate::seeding::derive_seed;

/// Probabilities are floored here before taking logs.
pub const LOG_FLOOR: f64 = 1e-30;
/// Tie-break draws averaged into the reported mean TOP-N.
pub const TIE_BREAK_DRAWS: usize = 100;
pub const DEFAULT_GRID: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllSummary {
    pub nll: f64,
    /// Per-session losses.
    pub losses: Vec<f64>,
    /// Sessions whose realized choice had probability below the floor.
    pub floored: usize,
}

/// Mean negative log predicted probability of the realized choices.
pub fn nll(model: &dyn ChoiceModel, sessions: &[Session]) -> Result<NllSummary> {
    if sessions.is_empty() {
        return Err(PcmcError::InvalidParameter("empty test set".into()));
    }
    let mut losses = Vec::with_capacity(sessions.len());
    let mut floored = 0;
    for s in sessions {
        let p = model.predict(s)?;
        let py = *p.probs().get(s.choice).ok_or(PcmcError::IndexOutOfRange {
            index: s.choice,
            size: p.len(),
        })?;
        if !(py > LOG_FLOOR) {
            floored += 1;
        }
        losses.push(-py.max(LOG_FLOOR).ln());
    }
    Ok(NllSummary {
        nll: losses.iter().sum::<f64>() / losses.len() as f64,
        losses,
        floored,
    })
}

/// Whether the realized choice falls within the top `n` after a random
/// tie-break: the positions are shuffled, then stably sorted by score.
fn hit(scores: &[f64], choice: usize, n: usize, rng: &mut ChaCha8Rng) -> bool {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.iter().take(n).any(|&i| i == choice)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopN {
    pub n: usize,
    /// Accuracy under the first tie-break draw.
    pub single: f64,
    /// Mean accuracy over [`TIE_BREAK_DRAWS`] draws.
    pub mean: f64,
}

/// TOP-N accuracy from precomputed scores (higher ranks first).
pub fn top_n_from_scores(scores: &[(Vec<f64>, usize)], n: usize, seed: u64, draws: usize) -> Result<TopN> {
    if n == 0 || draws == 0 {
        return Err(PcmcError::InvalidParameter("n and draws must be >= 1".into()));
    }
    if scores.is_empty() {
        return Err(PcmcError::InvalidParameter("empty test set".into()));
    }
    let mut per_draw = Vec::with_capacity(draws);
    for d in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, d as u64));
        let hits = scores.iter().filter(|(s, y)| hit(s, *y, n, &mut rng)).count();
        per_draw.push(hits as f64 / scores.len() as f64);
    }
    Ok(TopN {
        n,
        single: per_draw[0],
        mean: per_draw.iter().sum::<f64>() / draws as f64,
    })
}

pub fn collect_scores(ranker: &dyn Ranker, sessions: &[Session]) -> Result<Vec<(Vec<f64>, usize)>> {
    sessions
        .iter()
        .map(|s| Ok((ranker.scores(s)?, s.choice)))
        .collect()
}

/// Fraction of sessions whose choice is ranked within the top `n`, ties
/// broken by a seeded shuffle.
pub fn top_n(ranker: &dyn Ranker, sessions: &[Session], n: usize, seed: u64) -> Result<TopN> {
    top_n_from_scores(&collect_scores(ranker, sessions)?, n, seed, TIE_BREAK_DRAWS)
}

/// `D(P‖P̂)` with `P̂` floored at [`LOG_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(PcmcError::ShapeMismatch(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(LOG_FLOOR)).ln())
        .sum())
}

/// Monte-Carlo estimate of `E_c[D(P_c‖P̂_c)]` for `c` uniform in [1, 9]².
pub fn expected_kl(oracle: &dyn ContextModel, model: &dyn ContextModel, n_mc: usize, seed: u64) -> Result<f64> {
    if n_mc == 0 {
        return Err(PcmcError::InvalidParameter("n_mc must be >= 1".into()));
    }
    let mut total = 0.0;
    for k in 0..n_mc {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let c = sample_context_point(&mut rng);
        let p = oracle.context_distribution(c)?;
        let q = model.context_distribution(c)?;
        total += kl_divergence(p.probs(), q.probs())?;
    }
    Ok(total / n_mc as f64)
}

/// Preference for `a` over `b` on a regular grid of the third alternative.
/// Row `r` holds `x2 = coords[resolution − 1 − r]` (top row is the largest
/// second attribute), column `k` holds `x1 = coords[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub resolution: usize,
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn heatmap(model: &dyn ContextModel, resolution: usize) -> Result<Heatmap> {
    if resolution < 2 {
        return Err(PcmcError::InvalidParameter("grid resolution must be >= 2".into()));
    }
    let step = (CONTEXT_HIGH - CONTEXT_LOW) / (resolution - 1) as f64;
    let coords: Vec<f64> = (0..resolution)
        .map(|i| if i + 1 == resolution { CONTEXT_HIGH } else { CONTEXT_LOW + step * i as f64 })
        .collect();
    let mut values = Vec::with_capacity(resolution * resolution);
    for r in 0..resolution {
        let x2 = coords[resolution - 1 - r];
        for &x1 in &coords {
            values.push(preference_for_a(&model.context_distribution([x1, x2])?));
        }
    }
    Ok(Heatmap {
        resolution,
        coords,
        values,
    })
}

impl Heatmap {
    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    /// Header `x2\x1` followed by the column coordinates; each row starts
    /// with its `x2`.
    pub fn to_csv(&self) -> String {
        let n = self.resolution;
        let mut s = String::from("x2\\x1");
        for c in &self.coords {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for r in 0..n {
            let _ = write!(s, "{}", self.coords[n - 1 - r]);
            for c in 0..n {
                let _ = write!(s, ",{}", self.get(r, c));
            }
            s.push('\n');
        }
        s
    }

    /// Binary 8-bit grayscale PGM; pixel value `round(255 · preference)`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let n = self.resolution;
        let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
        out.extend(self.values.iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
        out
    }

    pub fn write(&self, csv: impl AsRef<Path>, pgm: impl AsRef<Path>) -> Result<()> {
        std::fs::write(&csv, self.to_csv()).map_err(|e| PcmcError::io(&csv, e))?;
        std::fs::write(&pgm, self.to_pgm()).map_err(|e| PcmcError::io(&pgm, e))
    }
}

/// Summary of a model or ranker on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: ModelKind,
    /// `None` for rankers that assign no probabilities.
    pub nll: Option<f64>,
    pub top1: f64,
    pub top5: f64,
    pub top1_mean: f64,
    pub top5_mean: f64,
    pub sessions: usize,
    /// Min, 25%, median, 75% and max of the per-session losses.
    pub loss_quantiles: Option<[f64; 5]>,
    pub floored: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

fn quantiles(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    [at(0.0), at(0.25), at(0.5), at(0.75), at(1.0)]
}

fn report(kind: ModelKind, scores: &[(Vec<f64>, usize)], summary: Option<NllSummary>, seed: u64) -> Result<EvalReport> {
    let t1 = top_n_from_scores(scores, 1, seed, TIE_BREAK_DRAWS)?;
    let t5 = top_n_from_scores(scores, 5, seed, TIE_BREAK_DRAWS)?;
    Ok(EvalReport {
        model_kind: kind,
        nll: summary.as_ref().map(|s| s.nll),
        top1: t1.single,
        top5: t5.single,
        top1_mean: t1.mean,
        top5_mean: t5.mean,
        sessions: scores.len(),
        loss_quantiles: summary.as_ref().map(|s| quantiles(&s.losses)),
        floored: summary.map_or(0, |s| s.floored),
        seed,
        config_hash: None,
    })
}

/// Full report for a probabilistic model (probabilities double as scores).
pub fn evaluate_model(model: &dyn ChoiceModel, sessions: &[Session], seed: u64) -> Result<EvalReport> {
    if sessions.is_empty() {
        return Err(PcmcError::InvalidParameter("empty test set".into()));
    }
    let mut scores = Vec::with_capacity(sessions.len());
    let mut losses = Vec::with_capacity(sessions.len());
    let mut floored = 0;
    for s in sessions {
        let p = model.predict(s)?.into_vec();
        let py = *p.get(s.choice).ok_or(PcmcError::IndexOutOfRange {
            index: s.choice,
            size: p.len(),
        })?;
        if !(py > LOG_FLOOR) {
            floored += 1;
        }
        losses.push(-py.max(LOG_FLOOR).ln());
        scores.push((p, s.choice));
    }
    let summary = NllSummary {
        nll: losses.iter().sum::<f64>() / losses.len() as f64,
        losses,
        floored,
    };
    report(model.kind(), &scores, Some(summary), seed)
}

/// Report for a non-probabilistic ranker (no NLL).
pub fn evaluate_ranker(kind: ModelKind, ranker: &dyn Ranker, sessions: &[Session], seed: u64) -> Result<EvalReport> {
    if sessions.is_empty() {
        return Err(PcmcError::InvalidParameter("empty test set".into()));
    }
    report(kind, &collect_scores(ranker, sessions)?, None, seed)
}
