//! Seeded synthetic ground truths and samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::choice::{pcmc_distribution, solve_stationary, ChoiceDistribution, RateMatrix};
use crate::data::{FeatureSchema, FeatureValue, FieldKind, FieldSpec, IndexedSession, Session};
use crate::error::{PcmcError, Result};
use crate::net::{ArchitectureConfig, FieldStats, NormalizationStats, PcmcNet};
use crate::seeding::derive_seed;

/// Name of the categorical item field in schemas built from indexed data.
pub const ITEM_FIELD: &str = "item";

/// The stochastic rock-paper-scissors matrix: item `i` beats `i + 1 (mod 3)`
/// with probability `alpha` in the pair.
pub fn rps_model(alpha: f64) -> Result<RateMatrix> {
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(PcmcError::InvalidParameter(format!("alpha must be in (1/2, 1], got {alpha}")));
    }
    RateMatrix::from_fn(3, |i, j| if (i + 1) % 3 == j { 1.0 - alpha } else { alpha })
}

/// Off-diagonal rates i.i.d. Uniform(0.1, 2.0).
pub fn random_pcmc(n: usize, seed: u64) -> Result<RateMatrix> {
    if n < 2 {
        return Err(PcmcError::InvalidParameter("random PCMC needs n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RateMatrix::from_fn(n, |_, _| rng.gen_range(0.1..2.0))
}

/// Ground truth over an indexed universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroundTruthModel {
    Rps { alpha: f64 },
    RandomPcmc { n: usize, seed: u64 },
    /// Luce model with item weights `w`, embedded as `q_ij = w_j`.
    Mnl { weights: Vec<f64> },
}

impl GroundTruthModel {
    pub fn rate_matrix(&self) -> Result<RateMatrix> {
        match self {
            GroundTruthModel::Rps { alpha } => rps_model(*alpha),
            GroundTruthModel::RandomPcmc { n, seed } => random_pcmc(*n, *seed),
            GroundTruthModel::Mnl { weights } => {
                if weights.len() < 2 || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(PcmcError::InvalidParameter(
                        "MNL ground truth needs >= 2 positive weights".into(),
                    ));
                }
                RateMatrix::from_fn(weights.len(), |_, j| weights[j])
            }
        }
    }

    pub fn universe(&self) -> usize {
        match self {
            GroundTruthModel::Rps { .. } => 3,
            GroundTruthModel::RandomPcmc { n, .. } => *n,
            GroundTruthModel::Mnl { weights } => weights.len(),
        }
    }

    pub fn choice_distribution(&self, set: &[usize]) -> Result<ChoiceDistribution> {
        pcmc_distribution(&self.rate_matrix()?, set)
    }
}

/// Inverse-CDF draw of a position from `probs`.
pub fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just below 1: take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// How choice sets are produced for each session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SetGenerator {
    /// Session `k` uses `sets[k % len]`, giving balanced counts.
    Cycle { sets: Vec<Vec<usize>> },
    /// Each session picks one of `sets` uniformly.
    Uniform { sets: Vec<Vec<usize>> },
    /// Uniform size in `min..=max`, then a uniform subset of that size.
    RandomSubset { universe: usize, min: usize, max: usize },
}

impl SetGenerator {
    fn generate(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        match self {
            SetGenerator::Cycle { sets } | SetGenerator::Uniform { sets } if sets.is_empty() => {
                Err(PcmcError::InvalidParameter("no choice sets to sample from".into()))
            }
            SetGenerator::Cycle { sets } => Ok(sets[k % sets.len()].clone()),
            SetGenerator::Uniform { sets } => Ok(sets[rng.gen_range(0..sets.len())].clone()),
            SetGenerator::RandomSubset { universe, min, max } => {
                if *min < 1 || min > max || max > universe {
                    return Err(PcmcError::InvalidParameter(format!(
                        "subset sizes {min}..={max} invalid for {universe} items"
                    )));
                }
                let size = rng.gen_range(*min..=*max);
                Ok(rand::seq::index::sample(rng, *universe, size).into_vec())
            }
        }
    }
}

/// Every subset of `0..n` with at least `min_size` members, by size then
/// lexicographically.
pub fn all_subsets(n: usize, min_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1u64..(1 << n))
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect::<Vec<_>>())
        .filter(|s| s.len() >= min_size)
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

/// Draw `n` sessions: session `k` uses its own stream `derive_seed(seed, k)`
/// for both the set and the choice.
pub fn sample_sessions(
    model: &GroundTruthModel,
    sets: &SetGenerator,
    n: usize,
    seed: u64,
) -> Result<Vec<IndexedSession>> {
    if n == 0 {
        return Err(PcmcError::InvalidParameter("n must be >= 1".into()));
    }
    let q = model.rate_matrix()?;
    let mut cache: std::collections::HashMap<Vec<usize>, ChoiceDistribution> = Default::default();
    (0..n)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let set = sets.generate(k, &mut rng)?;
            if !cache.contains_key(&set) {
                cache.insert(set.clone(), pcmc_distribution(&q, &set)?);
            }
            let choice = draw(cache[&set].probs(), &mut rng);
            Ok(IndexedSession { set, choice })
        })
        .collect()
}

/// Schema with a single categorical item field over `universe` items.
pub fn indexed_schema(universe: usize) -> FeatureSchema {
    FeatureSchema {
        individual_fields: vec![],
        alternative_fields: vec![FieldSpec::categorical(ITEM_FIELD, universe)],
    }
}

/// Feature sessions whose only alternative feature is the item index.
pub fn indexed_to_sessions(sessions: &[IndexedSession]) -> Vec<Session> {
    sessions
        .iter()
        .map(|s| Session {
            individual: vec![],
            alternatives: s
                .set
                .iter()
                .map(|i| vec![FeatureValue::Cat(i.to_string())])
                .collect(),
            choice: s.choice,
        })
        .collect()
}

/// The two fixed alternatives of the context-effect experiment.
pub const CONTEXT_A: [f64; 2] = [4.0, 6.0];
pub const CONTEXT_B: [f64; 2] = [6.0, 4.0];
pub const CONTEXT_LOW: f64 = 1.0;
pub const CONTEXT_HIGH: f64 = 9.0;
/// Bins per attribute when the third alternative is discretized.
pub const CONTEXT_BINS: usize = 8;

/// Distribution over `{a, b, c}` as a function of the third alternative `c`.
/// Implement this to plug in another ground truth (for instance a faithful
/// accumulator model) in place of [`ContextOracle`].
pub trait ContextModel {
    fn context_distribution(&self, c: [f64; 2]) -> Result<ChoiceDistribution>;
}

impl<F> ContextModel for F
where
    F: Fn([f64; 2]) -> Result<ChoiceDistribution>,
{
    fn context_distribution(&self, c: [f64; 2]) -> Result<ChoiceDistribution> {
        self(c)
    }
}

/// Dominance-boosted PCMC over `{a, b, c}`:
/// `q_xy = exp(β (v(y) − v(x))) + γ·[y dominates x]` with `v(x) = x₁ + x₂`,
/// where `y` dominates `x` when it is at least as good on both attributes
/// and better on one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextOracle {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ContextOracle {
    fn default() -> Self {
        ContextOracle {
            beta: 0.1,
            gamma: 20.0,
        }
    }
}

fn dominates(y: [f64; 2], x: [f64; 2]) -> bool {
    y[0] >= x[0] && y[1] >= x[1] && (y[0] > x[0] || y[1] > x[1])
}

pub fn check_context_point(c: [f64; 2]) -> Result<()> {
    if c.iter().all(|v| (CONTEXT_LOW..=CONTEXT_HIGH).contains(v)) {
        Ok(())
    } else {
        Err(PcmcError::InvalidParameter(format!("c = {c:?} outside [1, 9]²")))
    }
}

impl ContextOracle {
    pub fn rate_matrix(&self, c: [f64; 2]) -> Result<RateMatrix> {
        check_context_point(c)?;
        let pts = [CONTEXT_A, CONTEXT_B, c];
        let v = |p: [f64; 2]| p[0] + p[1];
        RateMatrix::from_fn(3, |i, j| {
            let (x, y) = (pts[i], pts[j]);
            (self.beta * (v(y) - v(x))).exp() + if dominates(y, x) { self.gamma } else { 0.0 }
        })
    }
}

impl ContextModel for ContextOracle {
    fn context_distribution(&self, c: [f64; 2]) -> Result<ChoiceDistribution> {
        solve_stationary(&self.rate_matrix(c)?)
    }
}

/// `P(a) / (P(a) + P(b))`.
pub fn preference_for_a(p: &ChoiceDistribution) -> f64 {
    let q = p.probs();
    q[0] / (q[0] + q[1])
}

/// Two numeric alternative attributes in [1, 9], no individual features.
pub fn context_schema() -> FeatureSchema {
    let range = Some([CONTEXT_LOW, CONTEXT_HIGH]);
    FeatureSchema {
        individual_fields: vec![],
        alternative_fields: vec![FieldSpec::numeric("x1", range), FieldSpec::numeric("x2", range)],
    }
}

/// The session `{a, b, c}` for a given third alternative.
pub fn context_session(c: [f64; 2], choice: usize) -> Session {
    let alt = |p: [f64; 2]| vec![FeatureValue::Num(p[0]), FeatureValue::Num(p[1])];
    Session {
        individual: vec![],
        alternatives: vec![alt(CONTEXT_A), alt(CONTEXT_B), alt(c)],
        choice,
    }
}

/// Uniform draw of `c` in [1, 9]².
pub fn sample_context_point(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [
        rng.gen_range(CONTEXT_LOW..CONTEXT_HIGH),
        rng.gen_range(CONTEXT_LOW..CONTEXT_HIGH),
    ]
}

/// `n` sessions `{a, b, c}` with `c` uniform in [1, 9]² and the choice drawn
/// from `oracle`.
pub fn context_sessions(oracle: &dyn ContextModel, n: usize, seed: u64) -> Result<Vec<Session>> {
    (0..n)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let c = sample_context_point(&mut rng);
            let p = oracle.context_distribution(c)?;
            Ok(context_session(c, draw(p.probs(), &mut rng)))
        })
        .collect()
}

/// Universe index of a discretized third alternative: `a` is 0, `b` is 1 and
/// the 8 × 8 equal-width cells of [1, 9]² follow in row-major order.
pub fn context_item(c: [f64; 2]) -> Result<usize> {
    check_context_point(c)?;
    let width = (CONTEXT_HIGH - CONTEXT_LOW) / CONTEXT_BINS as f64;
    let bin = |v: f64| (((v - CONTEXT_LOW) / width) as usize).min(CONTEXT_BINS - 1);
    Ok(2 + bin(c[0]) * CONTEXT_BINS + bin(c[1]))
}

pub const CONTEXT_UNIVERSE: usize = 2 + CONTEXT_BINS * CONTEXT_BINS;

/// Discretize context sessions for the index-based estimator.
pub fn context_indexed(sessions: &[Session]) -> Result<Vec<IndexedSession>> {
    sessions
        .iter()
        .map(|s| {
            let c = s.alternatives.get(2).ok_or_else(|| {
                PcmcError::Schema("context sessions have three alternatives".into())
            })?;
            let point = [
                c[0].as_num().unwrap_or(f64::NAN),
                c[1].as_num().unwrap_or(f64::NAN),
            ];
            Ok(IndexedSession {
                set: vec![0, 1, context_item(point)?],
                choice: s.choice,
            })
        })
        .collect()
}

/// Settings of the airline-style generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AirlineOptions {
    pub max_set_size: usize,
    /// Probability of a one-alternative session; `None` draws every size
    /// uniformly from `1..=max_set_size`.
    pub singleton_probability: Option<f64>,
    /// Architecture of the planted choice network.
    pub planted: ArchitectureConfig,
    /// Multiplier on the planted output weights. Choice sharpness is driven
    /// mostly by the planted `epsilon`: a small rate floor lets clipped pairs
    /// become near-absorbing.
    pub planted_scale: f64,
}

impl Default for AirlineOptions {
    fn default() -> Self {
        AirlineOptions {
            max_set_size: crate::choice::DEFAULT_MAX_SET_SIZE,
            singleton_probability: None,
            planted: ArchitectureConfig {
                hidden_layers: 2,
                nodes_per_layer: 32,
                dropout: 0.0,
                epsilon: 0.01,
                ..ArchitectureConfig::airline()
            },
            planted_scale: 1.0,
        }
    }
}

/// Airline itinerary schema: field names, kinds, cardinalities and ranges.
pub fn airline_schema() -> FeatureSchema {
    let num = |n: &str, lo: f64, hi: f64| FieldSpec::numeric(n, Some([lo, hi]));
    FeatureSchema {
        individual_fields: vec![
            FieldSpec::categorical("origin_destination", 97),
            FieldSpec::categorical("search_office", 11),
            num("departure_weekday", 0.0, 6.0),
            num("stay_saturday", 0.0, 1.0),
            num("continental_trip", 0.0, 1.0),
            num("domestic_trip", 0.0, 1.0),
            num("days_to_departure", 0.0, 343.0),
        ],
        alternative_fields: vec![
            FieldSpec::categorical("airline", 63),
            num("price", 77.15, 16781.5),
            num("stay_duration", 121.0, 434000.0),
            num("trip_duration", 105.0, 4314.0),
            num("connections", 2.0, 6.0),
            num("airlines", 1.0, 4.0),
            num("outbound_departure_time", 0.0, 84000.0),
            num("outbound_arrival_time", 0.0, 84000.0),
        ],
    }
}

/// Fields sampled on a log scale (long-tailed magnitudes).
const LOG_SCALE: [&str; 2] = ["price", "stay_duration"];
/// Fields sampled as integers.
const INTEGER: [&str; 7] = [
    "departure_weekday",
    "stay_saturday",
    "continental_trip",
    "domestic_trip",
    "days_to_departure",
    "connections",
    "airlines",
];

fn sample_value(f: &FieldSpec, rng: &mut ChaCha8Rng) -> Result<FeatureValue> {
    match &f.kind {
        FieldKind::Categorical { cardinality, .. } => {
            Ok(FeatureValue::Cat(f.level_name(rng.gen_range(0..*cardinality))))
        }
        FieldKind::Numeric { range } => {
            let [lo, hi] = range.ok_or_else(|| {
                PcmcError::Schema(format!("numeric field '{}' needs a range", f.name))
            })?;
            let x = if INTEGER.contains(&f.name.as_str()) {
                rng.gen_range(lo.ceil() as i64..=hi.floor() as i64) as f64
            } else if LOG_SCALE.contains(&f.name.as_str()) && lo > 0.0 {
                (rng.gen_range(lo.ln()..=hi.ln())).exp().clamp(lo, hi)
            } else {
                rng.gen_range(lo..=hi)
            };
            Ok(FeatureValue::Num(x))
        }
    }
}

/// Mean and standard deviation of the uniform distribution over each
/// declared range, used to standardize inputs of the planted network.
fn range_stats(fields: &[FieldSpec]) -> Result<Vec<Option<FieldStats>>> {
    fields
        .iter()
        .map(|f| match &f.kind {
            FieldKind::Categorical { .. } => Ok(None),
            FieldKind::Numeric { range } => {
                let [lo, hi] = range.ok_or_else(|| {
                    PcmcError::Schema(format!("numeric field '{}' needs a range", f.name))
                })?;
                let std = (hi - lo) / 12f64.sqrt();
                Ok(Some(FieldStats {
                    mean: 0.5 * (lo + hi),
                    std: if std > 0.0 { std } else { 1.0 },
                }))
            }
        })
        .collect()
}

/// The random-weight network that generates airline-style choices.
pub fn planted_network(schema: &FeatureSchema, options: &AirlineOptions, seed: u64) -> Result<PcmcNet> {
    let stats = NormalizationStats {
        individual: range_stats(&schema.individual_fields)?,
        alternative: range_stats(&schema.alternative_fields)?,
    };
    let config = ArchitectureConfig {
        seed: derive_seed(seed, u64::MAX),
        ..options.planted.clone()
    };
    let mut net = PcmcNet::new(schema.clone(), config, stats)?;
    let params = net.params_mut();
    let scaled: &[&str] = if params.find("out.w").is_some() {
        &["out.w"]
    } else {
        &["pair.w_ind", "pair.w_left", "pair.w_right"]
    };
    for name in scaled {
        if let Some(id) = params.find(name) {
            let s = options.planted_scale;
            params.get_mut(id).data_mut().iter_mut().for_each(|w| *w *= s);
        }
    }
    Ok(net)
}

/// Airline-style sessions: features drawn within the schema's ranges and
/// choices drawn from a planted network. Returns the sessions and the
/// planted model.
pub fn airline_synthetic(
    schema: &FeatureSchema,
    n_sessions: usize,
    options: &AirlineOptions,
    seed: u64,
) -> Result<(Vec<Session>, PcmcNet)> {
    schema.validate()?;
    let max = options.max_set_size;
    if max == 0 {
        return Err(PcmcError::InvalidParameter("max set size must be >= 1".into()));
    }
    if let Some(p) = options.singleton_probability {
        if !(0.0..=1.0).contains(&p) {
            return Err(PcmcError::InvalidParameter(format!("singleton probability {p}")));
        }
    }
    let planted = planted_network(schema, options, seed)?;
    let mut out = Vec::with_capacity(n_sessions);
    for k in 0..n_sessions {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let size = match options.singleton_probability {
            Some(p) if rng.gen::<f64>() < p => 1,
            Some(_) if max >= 2 => rng.gen_range(2..=max),
            _ => rng.gen_range(1..=max),
        };
        let individual = schema
            .individual_fields
            .iter()
            .map(|f| sample_value(f, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let alternatives = (0..size)
            .map(|_| {
                schema
                    .alternative_fields
                    .iter()
                    .map(|f| sample_value(f, &mut rng))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s = Session {
            individual,
            alternatives,
            choice: 0,
        };
        let p = planted.forward(&s)?;
        s.choice = draw(p.probs(), &mut rng);
        out.push(s);
    }
    Ok((out, planted))
}
