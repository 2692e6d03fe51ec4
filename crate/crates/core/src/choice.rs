//! Rate matrices, choice distributions, and the stationary solve that turns
//! one into the other.
//!
//! A PCMC model assigns choice probabilities on a set `S` by restricting a
//! universe-wide rate matrix to `S`, recomputing the diagonal so rows sum to
//! zero, and taking the stationary distribution of the resulting
//! continuous-time chain. The stationary vector is obtained from the
//! row-vector system `π Q' = [0 … 0 1]`, where `Q'` is `Q_S` with its last
//! column replaced by ones.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PcmcError, Result};
use crate::linalg::LuFactors;

/// Default upper bound on choice-set size. Configurable, not enforced by the
/// solver.
pub const DEFAULT_MAX_SET_SIZE: usize = 50;

/// Row sums of a rate matrix must vanish to this absolute tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Stationary residual bound `‖πQ‖_∞` for rate magnitudes up to one; larger
/// matrices scale the bound by their largest entry.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Entries of a solved distribution between this and zero are treated as
/// rounding noise.
pub const NEGATIVE_NOISE_TOL: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-10;

/// Dense `n × n` continuous-time transition-rate matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    n: usize,
    rates: Vec<f64>,
}

/// First invariant a candidate rate matrix fails, with 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub enum RateViolation {
    Empty,
    NotSquare { len: usize, n: usize },
    NonFinite { i: usize, j: usize },
    NegativeRate { i: usize, j: usize, value: f64 },
    /// `q_ij + q_ji = 0`: the pair cannot communicate.
    DisconnectedPair { i: usize, j: usize },
    RowSum { i: usize, sum: f64 },
}

impl fmt::Display for RateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateViolation::Empty => write!(f, "matrix has no states"),
            RateViolation::NotSquare { len, n } => {
                write!(f, "{len} entries cannot form a {n}x{n} matrix")
            }
            RateViolation::NonFinite { i, j } => write!(f, "entry ({i},{j}) is not finite"),
            RateViolation::NegativeRate { i, j, value } => {
                write!(f, "off-diagonal rate ({i},{j}) = {value} is negative")
            }
            RateViolation::DisconnectedPair { i, j } => {
                write!(f, "q_ij + q_ji = 0 for pair ({i},{j})")
            }
            RateViolation::RowSum { i, sum } => write!(f, "row {i} sums to {sum:e}, not 0"),
        }
    }
}

/// Outcome of [`validate_rate_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub enum Validation {
    Valid,
    Invalid(RateViolation),
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid)
    }
}

impl RateMatrix {
    /// Wrap a dense row-major matrix without checking any invariant. Use
    /// [`validate_rate_matrix`] before solving.
    pub fn from_dense_unchecked(n: usize, rates: Vec<f64>) -> Self {
        RateMatrix { n, rates }
    }

    /// Build from a dense matrix whose diagonal is ignored and recomputed as
    /// the negated off-diagonal row sum. The result is validated.
    pub fn from_off_diagonal(n: usize, mut rates: Vec<f64>) -> Result<Self> {
        if n == 0 || rates.len() != n * n {
            return Err(PcmcError::InvalidRateMatrix(format!(
                "expected {n}x{n} entries, got {}",
                rates.len()
            )));
        }
        fill_diagonal(n, &mut rates);
        let q = RateMatrix { n, rates };
        match validate_rate_matrix(&q) {
            Validation::Valid => Ok(q),
            Validation::Invalid(v) => Err(PcmcError::InvalidRateMatrix(v.to_string())),
        }
    }

    /// Build from a rate function on ordered pairs `(i, j)`, `i ≠ j`.
    pub fn from_fn(n: usize, mut rate: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut rates = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rates[i * n + j] = rate(i, j);
                }
            }
        }
        Self::from_off_diagonal(n, rates)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rates
    }

    /// Multiply every rate by `c`. The stationary distribution is unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        RateMatrix {
            n: self.n,
            rates: self.rates.iter().map(|v| v * c).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rates.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn validate(&self) -> Validation {
        validate_rate_matrix(self)
    }
}

fn fill_diagonal(n: usize, rates: &mut [f64]) {
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| rates[i * n + j]).sum();
        rates[i * n + i] = -off;
    }
}

/// Check every rate-matrix invariant, reporting the first violation found.
pub fn validate_rate_matrix(q: &RateMatrix) -> Validation {
    let n = q.n;
    if n == 0 {
        return Validation::Invalid(RateViolation::Empty);
    }
    if q.rates.len() != n * n {
        return Validation::Invalid(RateViolation::NotSquare {
            len: q.rates.len(),
            n,
        });
    }
    for i in 0..n {
        for j in 0..n {
            if !q.get(i, j).is_finite() {
                return Validation::Invalid(RateViolation::NonFinite { i, j });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let v = q.get(i, j);
            if i != j && v < 0.0 {
                return Validation::Invalid(RateViolation::NegativeRate { i, j, value: v });
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if q.get(i, j) + q.get(j, i) <= 0.0 {
                return Validation::Invalid(RateViolation::DisconnectedPair { i, j });
            }
        }
    }
    for i in 0..n {
        let sum: f64 = (0..n).map(|j| q.get(i, j)).sum();
        if sum.abs() > ROW_SUM_TOL {
            return Validation::Invalid(RateViolation::RowSum { i, sum });
        }
    }
    Validation::Valid
}

/// Restrict `q` to the states listed in `subset` (in that order) and
/// recompute the diagonal.
pub fn restrict(q: &RateMatrix, subset: &[usize]) -> Result<RateMatrix> {
    if subset.is_empty() {
        return Err(PcmcError::EmptySubset);
    }
    let n = q.n;
    for (k, &s) in subset.iter().enumerate() {
        if s >= n {
            return Err(PcmcError::IndexOutOfRange { index: s, size: n });
        }
        if subset[..k].contains(&s) {
            return Err(PcmcError::InvalidParameter(format!(
                "index {s} repeated in subset"
            )));
        }
    }
    let m = subset.len();
    let mut rates = vec![0.0; m * m];
    for (a, &i) in subset.iter().enumerate() {
        for (b, &j) in subset.iter().enumerate() {
            if a != b {
                rates[a * m + b] = q.get(i, j);
            }
        }
    }
    fill_diagonal(m, &mut rates);
    Ok(RateMatrix { n: m, rates })
}

/// Probability vector over a choice set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDistribution {
    probs: Vec<f64>,
}

impl ChoiceDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(PcmcError::InvalidParameter("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PcmcError::Numeric(format!(
                "distribution has negative or non-finite entries: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(PcmcError::Numeric(format!(
                "distribution sums to {sum}, not 1"
            )));
        }
        Ok(ChoiceDistribution { probs })
    }

    /// Apply the rounding-noise policy to a raw solver output: entries in
    /// `[-1e-12, 0)` are clamped to zero and the vector renormalized; anything
    /// more negative is an error.
    pub fn from_solver(mut raw: Vec<f64>) -> Result<Self> {
        if let Some(bad) = raw
            .iter()
            .find(|p| !p.is_finite() || **p < -NEGATIVE_NOISE_TOL)
        {
            return Err(PcmcError::Numeric(format!(
                "stationary entry {bad:e} is negative beyond noise tolerance"
            )));
        }
        for p in raw.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(PcmcError::Numeric("stationary vector sums to zero".into()));
        }
        if (sum - 1.0).abs() > 0.0 {
            for p in raw.iter_mut() {
                *p /= sum;
            }
        }
        Self::new(raw)
    }

    pub fn uniform(n: usize) -> Self {
        ChoiceDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Total-variation distance to another distribution on the same set.
    pub fn total_variation(&self, other: &ChoiceDistribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// `Q'`: the rate matrix with its last column overwritten by ones.
pub fn stationary_system(q: &RateMatrix) -> Vec<f64> {
    let n = q.n;
    let mut a = q.rates.clone();
    for i in 0..n {
        a[i * n + n - 1] = 1.0;
    }
    a
}

/// `‖π Q‖_∞`.
pub fn stationary_residual(q: &RateMatrix, pi: &[f64]) -> f64 {
    let n = q.n;
    (0..n)
        .map(|j| (0..n).map(|i| pi[i] * q.get(i, j)).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// Stationary distribution of a valid rate matrix.
pub fn solve_stationary(q: &RateMatrix) -> Result<ChoiceDistribution> {
    let n = q.n;
    if n == 0 {
        return Err(PcmcError::EmptySubset);
    }
    if n == 1 {
        return Ok(ChoiceDistribution { probs: vec![1.0] });
    }
    let a = stationary_system(q);
    let lu = LuFactors::factor(&a, n)?;
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let pi = lu.solve_transpose(&rhs);
    let residual = stationary_residual(q, &pi);
    let bound = RESIDUAL_TOL * q.max_abs().max(1.0);
    if !(residual < bound) {
        return Err(PcmcError::Singular(format!(
            "stationary residual {residual:e} exceeds {bound:e}"
        )));
    }
    ChoiceDistribution::from_solver(pi)
}

/// Choice distribution that the PCMC model `q` induces on `subset`.
pub fn pcmc_distribution(q: &RateMatrix, subset: &[usize]) -> Result<ChoiceDistribution> {
    solve_stationary(&restrict(q, subset)?)
}

/// `P_S(i)` under the PCMC model `q`.
pub fn pcmc_choice_prob(q: &RateMatrix, subset: &[usize], item: usize) -> Result<f64> {
    let pos = subset
        .iter()
        .position(|&s| s == item)
        .ok_or_else(|| PcmcError::InvalidParameter(format!("item {item} not in choice set")))?;
    Ok(pcmc_distribution(q, subset)?.probs[pos])
}
