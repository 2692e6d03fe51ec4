use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Activation, ArchitectureConfig};
use super::represent::{NormalizationStats, TupleEncoder};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::choice::{stationary_residual, ChoiceDistribution, RateMatrix, RESIDUAL_TOL};
use crate::data::{FeatureSchema, FeatureValue, Session};
use crate::error::{PcmcError, Result};

/// Probabilities below this are floored before taking the log.
pub const PROB_FLOOR: f64 = 1e-30;

/// First layer of the rate network, split by input block so that the
/// per-alternative projections are computed once and gathered per pair:
/// `W·(ρ(I) ⊕ ρ(S_i) ⊕ ρ(S_j)) = W_ind·ρ(I) + W_left·ρ(S_i) + W_right·ρ(S_j)`.
#[derive(Debug, Clone)]
struct PairLayer {
    w_ind: Option<ParamId>,
    w_left: ParamId,
    w_right: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

/// Amortized PCMC: a feature representation, a network mapping each ordered
/// pair of alternatives to a transition rate, and a stationary layer.
#[derive(Debug, Clone)]
pub struct PcmcNet {
    schema: FeatureSchema,
    config: ArchitectureConfig,
    stats: NormalizationStats,
    params: ParamStore,
    individual: TupleEncoder,
    alternative: TupleEncoder,
    pair: PairLayer,
    hidden: Vec<Dense>,
    out: Option<Dense>,
}

/// Weight source while assembling a model: fresh initialization or an
/// existing parameter store (checkpoint loading).
enum Source<'a> {
    Init(&'a mut ChaCha8Rng),
    Existing,
}

enum Init {
    HeUniform(usize),
    Constant(f64),
}

fn tensor_param(
    store: &mut ParamStore,
    source: &mut Source<'_>,
    name: &str,
    shape: [usize; 2],
    init: Init,
) -> Result<ParamId> {
    match source {
        Source::Init(rng) => {
            let n = shape[0] * shape[1];
            let data = match init {
                Init::HeUniform(fan_in) => {
                    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
                }
                Init::Constant(c) => vec![c; n],
            };
            Ok(store.add(name, Tensor::new(shape[0], shape[1], data)?))
        }
        Source::Existing => {
            let id = store
                .find(name)
                .ok_or_else(|| PcmcError::Schema(format!("missing parameter '{name}'")))?;
            if store.get(id).shape() != shape {
                return Err(PcmcError::Schema(format!(
                    "parameter '{name}' has shape {:?}, expected {shape:?}",
                    store.get(id).shape()
                )));
            }
            Ok(id)
        }
    }
}

impl PcmcNet {
    /// Fresh model with weights drawn from `config.seed`.
    pub fn new(
        schema: FeatureSchema,
        config: ArchitectureConfig,
        stats: NormalizationStats,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::assemble(schema, config, stats, ParamStore::new(), Source::Init(&mut rng))
    }

    /// Model around an existing parameter store; every expected tensor must
    /// be present with the right shape.
    pub fn from_parts(
        schema: FeatureSchema,
        config: ArchitectureConfig,
        stats: NormalizationStats,
        params: ParamStore,
    ) -> Result<Self> {
        let expected = params.len();
        let net = Self::assemble(schema, config, stats, params, Source::Existing)?;
        let used = net.parameter_ids().len();
        if used != expected {
            return Err(PcmcError::Schema(format!(
                "parameter store holds {expected} tensors, architecture uses {used}"
            )));
        }
        Ok(net)
    }

    fn assemble(
        schema: FeatureSchema,
        config: ArchitectureConfig,
        stats: NormalizationStats,
        mut params: ParamStore,
        mut source: Source<'_>,
    ) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let (individual, alternative) = {
            let mut rng = match &mut source {
                Source::Init(r) => Some(&mut **r),
                Source::Existing => None,
            };
            let i = TupleEncoder::build(
                "emb.ind",
                &schema.individual_fields,
                &stats.individual,
                &config,
                &mut params,
                rng.as_deref_mut(),
            )?;
            let a = TupleEncoder::build(
                "emb.alt",
                &schema.alternative_fields,
                &stats.alternative,
                &config,
                &mut params,
                rng,
            )?;
            (i, a)
        };
        let (d0, da) = (individual.width(), alternative.width());
        if da == 0 {
            return Err(PcmcError::Schema(
                "alternative representation is empty; enable numeric passthrough or add categorical fields"
                    .into(),
            ));
        }
        let fan_in = d0 + 2 * da;
        let width = if config.hidden_layers == 0 {
            1
        } else {
            config.nodes_per_layer
        };
        let first_bias = if config.hidden_layers == 0 { 1.0 } else { 0.0 };
        let w_ind = if d0 > 0 {
            Some(tensor_param(&mut params, &mut source, "pair.w_ind", [d0, width], Init::HeUniform(fan_in))?)
        } else {
            None
        };
        let w_left = tensor_param(&mut params, &mut source, "pair.w_left", [da, width], Init::HeUniform(fan_in))?;
        let w_right = tensor_param(&mut params, &mut source, "pair.w_right", [da, width], Init::HeUniform(fan_in))?;
        let b = tensor_param(&mut params, &mut source, "pair.b", [1, width], Init::Constant(first_bias))?;
        let pair = PairLayer {
            w_ind,
            w_left,
            w_right,
            b,
        };
        let mut hidden = Vec::new();
        for l in 1..config.hidden_layers {
            let nu = config.nodes_per_layer;
            hidden.push(Dense {
                w: tensor_param(&mut params, &mut source, &format!("hidden.{l}.w"), [nu, nu], Init::HeUniform(nu))?,
                b: tensor_param(&mut params, &mut source, &format!("hidden.{l}.b"), [1, nu], Init::Constant(0.0))?,
            });
        }
        let out = if config.hidden_layers > 0 {
            let nu = config.nodes_per_layer;
            Some(Dense {
                w: tensor_param(&mut params, &mut source, "out.w", [nu, 1], Init::HeUniform(nu))?,
                // A positive start keeps most rates off the max(0, ·) kink.
                b: tensor_param(&mut params, &mut source, "out.b", [1, 1], Init::Constant(1.0))?,
            })
        } else {
            None
        };
        Ok(PcmcNet {
            schema,
            config,
            stats,
            params,
            individual,
            alternative,
            pair,
            hidden,
            out,
        })
    }

    fn parameter_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = (0..self.params.len())
            .map(ParamId)
            .filter(|id| self.params.name(*id).starts_with("emb."))
            .collect();
        ids.extend(self.pair.w_ind);
        ids.extend([self.pair.w_left, self.pair.w_right, self.pair.b]);
        for d in self.hidden.iter().chain(&self.out) {
            ids.extend([d.w, d.b]);
        }
        ids
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Width of the individual representation (`d_0`).
    pub fn individual_dim(&self) -> usize {
        self.individual.width()
    }

    /// Width of the alternative representation (`d_a`).
    pub fn alternative_dim(&self) -> usize {
        self.alternative.width()
    }

    pub fn represent_individual(&self, features: &[FeatureValue]) -> Result<Vec<f64>> {
        self.individual.encode(&self.params, features)
    }

    pub fn represent_alternative(&self, features: &[FeatureValue]) -> Result<Vec<f64>> {
        self.alternative.encode(&self.params, features)
    }

    /// Off-diagonal rates `q̂_ij` for every ordered pair, as an `n(n-1) × 1`
    /// column in row-major pair order.
    fn pair_rates(&self, tape: &mut Tape, session: &Session) -> Result<Var> {
        let n = session.alternatives.len();
        let store = &self.params;
        let alts: Vec<&[FeatureValue]> = session.alternatives.iter().map(Vec::as_slice).collect();
        let a = self
            .alternative
            .encode_on_tape(tape, store, &alts)?
            .expect("alternative width checked at construction");
        let wl = tape.param(store, self.pair.w_left);
        let wr = tape.param(store, self.pair.w_right);
        let left = tape.matmul(a, wl)?;
        let right = tape.matmul(a, wr)?;
        let mut shared = tape.param(store, self.pair.b);
        if let Some(w_ind) = self.pair.w_ind {
            let i = self
                .individual
                .encode_on_tape(tape, store, &[session.individual.as_slice()])?
                .expect("individual width is positive");
            let wi = tape.param(store, w_ind);
            let proj = tape.matmul(i, wi)?;
            shared = tape.add(proj, shared)?;
        }
        let m = n * (n - 1);
        let mut li = Vec::with_capacity(m);
        let mut ri = Vec::with_capacity(m);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    li.push(i);
                    ri.push(j);
                }
            }
        }
        let gl = tape.embedding_lookup(left, &li)?;
        let gr = tape.embedding_lookup(right, &ri)?;
        let gs = tape.embedding_lookup(shared, &vec![0; m])?;
        let mut h = tape.add(gl, gr)?;
        h = tape.add(h, gs)?;
        if self.out.is_some() {
            h = self.activate(tape, h);
            h = tape.dropout(h, self.config.dropout)?;
        }
        for d in &self.hidden {
            h = self.dense(tape, h, d, m)?;
            h = self.activate(tape, h);
            h = tape.dropout(h, self.config.dropout)?;
        }
        if let Some(d) = &self.out {
            h = self.dense(tape, h, d, m)?;
        }
        tape.clamp_min_zero_plus_const(h, self.config.epsilon)
    }

    fn dense(&self, tape: &mut Tape, h: Var, d: &Dense, rows: usize) -> Result<Var> {
        let w = tape.param(&self.params, d.w);
        let b = tape.param(&self.params, d.b);
        let z = tape.matmul(h, w)?;
        let bb = tape.embedding_lookup(b, &vec![0; rows])?;
        tape.add(z, bb)
    }

    fn activate(&self, tape: &mut Tape, h: Var) -> Var {
        match self.config.activation {
            Activation::Relu => tape.relu(h),
            Activation::Sigmoid => tape.sigmoid(h),
            Activation::Tanh => tape.tanh(h),
            Activation::LeakyRelu => tape.leaky_relu(h, Activation::LEAKY_SLOPE),
        }
    }

    fn check_session(&self, session: &Session) -> Result<()> {
        if session.alternatives.is_empty() {
            return Err(PcmcError::EmptySubset);
        }
        self.schema.check_session(session)
    }

    /// Rate matrix node (`n × n`, diagonal completed) for `session`.
    pub fn rate_matrix_on_tape(&self, tape: &mut Tape, session: &Session) -> Result<Var> {
        self.check_session(session)?;
        let n = session.alternatives.len();
        if n == 1 {
            return Ok(tape.constant(Tensor::zeros(1, 1)));
        }
        let rates = self.pair_rates(tape, session)?;
        let off = tape.pairs_to_off_diagonal(rates, n)?;
        tape.row_neg_sum_diagonal(off)
    }

    /// Returns the rate matrix node and the `1 × n` stationary distribution
    /// node for `session`.
    pub fn forward_on_tape(&self, tape: &mut Tape, session: &Session) -> Result<(Var, Var)> {
        let q = self.rate_matrix_on_tape(tape, session)?;
        let n = session.alternatives.len();
        if n == 1 {
            return Ok((q, tape.constant(Tensor::scalar(1.0))));
        }
        let sys = tape.stationary_system(q)?;
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = 1.0;
        let b = tape.constant(Tensor::row(rhs));
        let pi = tape.linear_solve(sys, b)?;
        Ok((q, pi))
    }

    /// `−ln max(π̂_y, 1e-30)` as a tape node.
    pub fn loss_on_tape(&self, tape: &mut Tape, session: &Session) -> Result<Var> {
        if session.choice >= session.alternatives.len() {
            return Err(PcmcError::IndexOutOfRange {
                index: session.choice,
                size: session.alternatives.len(),
            });
        }
        let (_, pi) = self.forward_on_tape(tape, session)?;
        let p = tape.pick(pi, session.choice)?;
        let l = tape.ln_floor(p, PROB_FLOOR);
        Ok(tape.scale(l, -1.0))
    }

    pub fn rate_matrix(&self, session: &Session) -> Result<RateMatrix> {
        let mut tape = Tape::new();
        let q = self.rate_matrix_on_tape(&mut tape, session)?;
        let n = session.alternatives.len();
        Ok(RateMatrix::from_dense_unchecked(n, tape.value(q).data().to_vec()))
    }

    /// Predicted choice distribution over the session's alternatives.
    pub fn forward(&self, session: &Session) -> Result<ChoiceDistribution> {
        let mut tape = Tape::new();
        let (q, pi) = self.forward_on_tape(&mut tape, session)?;
        let n = session.alternatives.len();
        let probs = tape.value(pi).data().to_vec();
        let qm = RateMatrix::from_dense_unchecked(n, tape.value(q).data().to_vec());
        let residual = stationary_residual(&qm, &probs);
        let bound = RESIDUAL_TOL * qm.max_abs().max(1.0);
        if !(residual < bound) {
            return Err(PcmcError::Singular(format!(
                "stationary residual {residual:e} exceeds {bound:e}"
            )));
        }
        ChoiceDistribution::from_solver(probs)
    }

    /// Negative log-likelihood of the realized choice (dropout off).
    pub fn loss(&self, session: &Session) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.loss_on_tape(&mut tape, session)?;
        Ok(tape.value(l).item())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{max_gradient_error, END_TO_END_TOL};
    use crate::data::FieldSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![FieldSpec::categorical("segment", 3), FieldSpec::numeric("age", None)],
            vec![
                FieldSpec::categorical("carrier", 5),
                FieldSpec::numeric("price", None),
                FieldSpec::numeric("duration", None),
            ],
        )
        .unwrap()
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

    fn net(h: usize, seed: u64) -> PcmcNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Session> = (0..20).map(|_| session(&mut rng, 4)).collect();
        let schema = schema();
        let stats = NormalizationStats::fit(&schema, &data);
        let config = ArchitectureConfig {
            hidden_layers: h,
            nodes_per_layer: 6,
            dropout: 0.0,
            seed,
            ..ArchitectureConfig::synthetic()
        };
        PcmcNet::new(schema, config, stats).unwrap()
    }

    #[test]
    fn representation_widths() {
        let m = net(2, 1);
        // segment: ⌈3/2⌉ = 2, age: 1; carrier: ⌈5/2⌉ = 3, price, duration.
        assert_eq!(m.individual_dim(), 3);
        assert_eq!(m.alternative_dim(), 5);
        let v = m
            .represent_alternative(&["9".into(), 300.0.into(), 5.0.into()])
            .unwrap();
        // Unknown level "9" reads the reserved row 5 of the carrier table.
        let table = m.params.get(m.params.find("emb.alt.carrier").unwrap());
        assert_eq!(table.rows(), 6);
        assert_eq!(&v[..3], &table.data()[15..18]);
        assert!(m.represent_alternative(&["1".into(), 300.0.into()]).is_err());
    }

    #[test]
    fn empty_individual_gives_empty_vector() {
        let schema = FeatureSchema::new(vec![], vec![FieldSpec::numeric("x", None)]).unwrap();
        let stats = NormalizationStats::fit(&schema, &[]);
        let m = PcmcNet::new(schema, ArchitectureConfig::synthetic(), stats).unwrap();
        assert_eq!(m.represent_individual(&[]).unwrap(), Vec::<f64>::new());
        assert_eq!(m.individual_dim(), 0);
    }

    #[test]
    fn rate_matrix_is_valid_and_floored() {
        let m = net(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..8 {
            let s = session(&mut rng, n);
            let q = m.rate_matrix(&s).unwrap();
            assert!(q.validate().is_valid());
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        assert!(q.get(i, j) >= m.config.epsilon);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_alternatives_have_symmetric_rates() {
        let m = net(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = session(&mut rng, 3);
        s.alternatives[2] = s.alternatives[0].clone();
        let q = m.rate_matrix(&s).unwrap();
        assert!((q.get(0, 2) - q.get(2, 0)).abs() < 1e-15);
    }

    #[test]
    fn singleton_session() {
        let m = net(1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = session(&mut rng, 1);
        assert_eq!(m.rate_matrix(&s).unwrap().as_slice(), &[0.0]);
        assert_eq!(m.forward(&s).unwrap().probs(), &[1.0]);
        assert_eq!(m.loss(&s).unwrap(), 0.0);
    }

    #[test]
    fn constant_rates_give_uniform_loss() {
        // With every weight zero the rates are all equal, so π̂ is uniform.
        for n in [4usize, 50] {
            let mut m = net(2, 6);
            for t in m.params.values_mut() {
                t.data_mut().fill(0.0);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let s = session(&mut rng, n);
            let l = m.loss(&s).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-12, "{l}");
        }
    }

    #[test]
    fn end_to_end_gradient() {
        for h in 0..=3 {
            let m = net(h, 10 + h as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(h as u64);
            let s = session(&mut rng, 4);
            let err = max_gradient_error(m.params(), |store| {
                let probe = PcmcNet::from_parts(
                    m.schema.clone(),
                    m.config.clone(),
                    m.stats.clone(),
                    store.clone(),
                )?;
                let mut tape = Tape::new();
                let l = probe.loss_on_tape(&mut tape, &s)?;
                Ok((tape, l))
            })
            .unwrap();
            assert!(err < END_TO_END_TOL, "h={h}: {err}");
        }
    }

    #[test]
    fn rebuild_from_parts_checks_shapes() {
        let m = net(2, 7);
        let again = PcmcNet::from_parts(
            m.schema.clone(),
            m.config.clone(),
            m.stats.clone(),
            m.params.clone(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = session(&mut rng, 5);
        assert_eq!(m.forward(&s).unwrap(), again.forward(&s).unwrap());
        let mut wider = m.config.clone();
        wider.nodes_per_layer = 7;
        assert!(PcmcNet::from_parts(m.schema.clone(), wider, m.stats.clone(), m.params.clone()).is_err());
    }
}
