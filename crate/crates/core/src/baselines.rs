//! Reference models: linear-in-features multinomial logit and the
//! non-learned rankers.

use serde::{Deserialize, Serialize};

use crate::choice::ChoiceDistribution;
use crate::data::{FeatureSchema, FieldKind, Session};
use crate::error::{PcmcError, Result};
use crate::model::{ChoiceModel, ModelKind, Ranker};
use crate::net::{FieldStats, NormalizationStats};
use crate::optim::{self, LbfgsOptions};

/// Coefficient norm above which a fit is reported as (quasi-)separated.
pub const SEPARATION_NORM: f64 = 1e3;

/// Sparse encoding of alternative features: one indicator column per
/// categorical level (unknown levels encode as all zeros) and one
/// standardized column per numeric field.
#[derive(Debug, Clone, PartialEq)]
pub struct MnlEncoder {
    schema: FeatureSchema,
    stats: Vec<Option<FieldStats>>,
    offsets: Vec<usize>,
    width: usize,
}

impl MnlEncoder {
    pub fn new(schema: &FeatureSchema, stats: &NormalizationStats) -> Result<Self> {
        if stats.alternative.len() != schema.alternative_fields.len() {
            return Err(PcmcError::Schema("normalization stats do not match schema".into()));
        }
        let mut offsets = Vec::new();
        let mut width = 0;
        for (f, st) in schema.alternative_fields.iter().zip(&stats.alternative) {
            offsets.push(width);
            width += match f.kind {
                FieldKind::Numeric { .. } => {
                    if st.is_none() {
                        return Err(PcmcError::Schema(format!("no stats for '{}'", f.name)));
                    }
                    1
                }
                FieldKind::Categorical { cardinality, .. } => cardinality,
            };
        }
        Ok(MnlEncoder {
            schema: schema.clone(),
            stats: stats.alternative.clone(),
            offsets,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn encode(&self, tuple: &[crate::data::FeatureValue]) -> Result<Vec<(usize, f64)>> {
        let fields = &self.schema.alternative_fields;
        if tuple.len() != fields.len() {
            return Err(PcmcError::Schema(format!(
                "tuple has {} values, schema declares {}",
                tuple.len(),
                fields.len()
            )));
        }
        let mut out = Vec::with_capacity(fields.len());
        for (k, (f, v)) in fields.iter().zip(tuple).enumerate() {
            match &f.kind {
                FieldKind::Numeric { .. } => {
                    let st = self.stats[k].expect("checked in new");
                    let x = v.as_num().ok_or_else(|| {
                        PcmcError::Schema(format!("field '{}' expects a number", f.name))
                    })?;
                    out.push((self.offsets[k], (x - st.mean) / st.std));
                }
                FieldKind::Categorical { .. } => {
                    let s = v.as_cat().ok_or_else(|| {
                        PcmcError::Schema(format!("field '{}' expects a level", f.name))
                    })?;
                    if let Some(level) = f.level_index(s) {
                        out.push((self.offsets[k] + level, 1.0));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Linear-in-features MNL: `P_S(i) ∝ exp(β·x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MnlModel {
    encoder: MnlEncoder,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlParts {
    pub normalization: NormalizationStats,
    pub weights: Vec<f64>,
}

impl MnlModel {
    pub fn new(schema: &FeatureSchema, stats: &NormalizationStats, weights: Vec<f64>) -> Result<Self> {
        let encoder = MnlEncoder::new(schema, stats)?;
        if weights.len() != encoder.width() {
            return Err(PcmcError::ShapeMismatch(format!(
                "{} MNL weights for {} encoded columns",
                weights.len(),
                encoder.width()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(PcmcError::Numeric("non-finite MNL weight".into()));
        }
        Ok(MnlModel { encoder, weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.encoder.schema
    }

    pub fn parts(&self) -> MnlParts {
        MnlParts {
            normalization: NormalizationStats {
                individual: vec![None; self.encoder.schema.individual_fields.len()],
                alternative: self.encoder.stats.clone(),
            },
            weights: self.weights.clone(),
        }
    }

    pub fn utilities(&self, session: &Session) -> Result<Vec<f64>> {
        session
            .alternatives
            .iter()
            .map(|a| Ok(sparse_dot(&self.encoder.encode(a)?, &self.weights)))
            .collect()
    }
}

fn sparse_dot(x: &[(usize, f64)], w: &[f64]) -> f64 {
    x.iter().map(|&(c, v)| w[c] * v).sum()
}

/// Numerically stable softmax.
pub fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// MNL choice distribution of a session.
pub fn mnl_prob(model: &MnlModel, session: &Session) -> Result<ChoiceDistribution> {
    if session.alternatives.is_empty() {
        return Err(PcmcError::EmptySubset);
    }
    ChoiceDistribution::new(softmax(&model.utilities(session)?))
}

impl ChoiceModel for MnlModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Mnl
    }

    fn predict(&self, session: &Session) -> Result<ChoiceDistribution> {
        mnl_prob(self, session)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlOptions {
    /// Ridge penalty on the mean log-likelihood; 0 for the plain model.
    pub l2: f64,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MnlOptions {
    fn default() -> Self {
        MnlOptions {
            l2: 0.0,
            gradient_tolerance: 1e-6,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MnlFit {
    pub model: MnlModel,
    /// Mean log-likelihood at the optimum.
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Coefficient norm exceeded [`SEPARATION_NORM`].
    pub separated: bool,
}

/// Maximum-likelihood MNL. The mean log-likelihood is concave, so the
/// quasi-Newton ascent reaches the global optimum from zero.
pub fn fit_mnl(schema: &FeatureSchema, sessions: &[Session], options: &MnlOptions) -> Result<MnlFit> {
    if sessions.is_empty() {
        return Err(PcmcError::InvalidParameter("MNL needs at least one session".into()));
    }
    let stats = NormalizationStats::fit(schema, sessions);
    let encoder = MnlEncoder::new(schema, &stats)?;
    let mut encoded = Vec::with_capacity(sessions.len());
    for s in sessions {
        schema.check_session(s)?;
        let alts = s
            .alternatives
            .iter()
            .map(|a| encoder.encode(a))
            .collect::<Result<Vec<_>>>()?;
        encoded.push((alts, s.choice));
    }
    let n = sessions.len() as f64;
    let l2 = options.l2;
    let objective = |w: &[f64]| {
        let mut value = 0.0;
        let mut grad = vec![0.0; w.len()];
        for (alts, choice) in &encoded {
            let u: Vec<f64> = alts.iter().map(|x| sparse_dot(x, w)).collect();
            let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = u.iter().map(|x| (x - m).exp()).sum();
            value += u[*choice] - m - z.ln();
            for (x, ui) in alts.iter().zip(&u) {
                let p = (ui - m).exp() / z;
                for &(c, v) in x {
                    grad[c] -= p * v;
                }
            }
            for &(c, v) in &alts[*choice] {
                grad[c] += v;
            }
        }
        value /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        if l2 > 0.0 {
            value -= 0.5 * l2 * w.iter().map(|x| x * x).sum::<f64>();
            grad.iter_mut().zip(w).for_each(|(g, x)| *g -= l2 * x);
        }
        (value, grad)
    };
    let opts = LbfgsOptions {
        gradient_tolerance: options.gradient_tolerance,
        max_iterations: options.max_iterations,
        ..LbfgsOptions::default()
    };
    let r = optim::maximize(objective, vec![0.0; encoder.width()], &opts);
    let norm = r.x.iter().map(|x| x * x).sum::<f64>().sqrt();
    let separated = norm > SEPARATION_NORM;
    if separated {
        log::warn!("MNL coefficients diverge (norm {norm:.3e}); the data may be separable");
    }
    if !r.converged {
        log::warn!(
            "MNL stopped after {} iterations with gradient norm {:.3e}",
            r.iterations,
            r.gradient_norm
        );
    }
    Ok(MnlFit {
        model: MnlModel { encoder, weights: r.x },
        log_likelihood: r.value,
        gradient_norm: r.gradient_norm,
        iterations: r.iterations,
        converged: r.converged,
        separated,
    })
}

/// Ranks alternatives by increasing value of a numeric field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRanker {
    kind: ModelKind,
    field: String,
    index: usize,
}

pub const PRICE_FIELD: &str = "price";
pub const TRIP_DURATION_FIELD: &str = "trip_duration";

impl FieldRanker {
    pub fn new(kind: ModelKind, schema: &FeatureSchema, field: &str) -> Result<Self> {
        let index = schema
            .alternative_field(field)
            .ok_or_else(|| PcmcError::Schema(format!("no alternative field '{field}'")))?;
        if !schema.alternative_fields[index].is_numeric() {
            return Err(PcmcError::Schema(format!("field '{field}' is not numeric")));
        }
        Ok(FieldRanker {
            kind,
            field: field.to_string(),
            index,
        })
    }

    pub fn cheapest(schema: &FeatureSchema) -> Result<Self> {
        Self::new(ModelKind::Cheapest, schema, PRICE_FIELD)
    }

    pub fn shortest(schema: &FeatureSchema) -> Result<Self> {
        Self::new(ModelKind::Shortest, schema, TRIP_DURATION_FIELD)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn field(&self) -> &str {
        &self.field
    }

    /// Positions sorted by increasing field value; equal values keep their
    /// input order (ties are randomized at evaluation time).
    pub fn ranking(&self, session: &Session) -> Result<Vec<usize>> {
        let s = self.scores(session)?;
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        Ok(idx)
    }
}

impl Ranker for FieldRanker {
    fn scores(&self, session: &Session) -> Result<Vec<f64>> {
        session
            .alternatives
            .iter()
            .map(|a| {
                a.get(self.index).and_then(|v| v.as_num()).map(|x| -x).ok_or_else(|| {
                    PcmcError::Schema(format!("alternative lacks numeric '{}'", self.field))
                })
            })
            .collect()
    }
}
