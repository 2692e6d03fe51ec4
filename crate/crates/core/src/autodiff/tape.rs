//! Append-only computation tape and reverse sweep.
//!
//! Every operation pushes a node holding its forward value plus whatever the
//! backward rule needs (dropout masks, LU factors). Node inputs always refer
//! to earlier nodes, so a single reverse pass over the node list is a valid
//! topological order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{PcmcError, Result};
use crate::linalg::LuFactors;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Named parameter tensors shared across tapes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gather(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
    ClampFloor(Var),
    PairsToOffDiag(Var, usize),
    RowNegSumDiagonal(Var),
    Submatrix(Var, Vec<usize>),
    StationarySystem(Var),
    Solve(Var, Var, Box<LuFactors>),
    Pick(Var, usize),
    LnFloor(Var, f64),
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Per-parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Tensor>,
}

/// Reverse-mode tape. One tape per training step.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    train: bool,
    dropout_seed: u64,
    dropout_calls: u64,
    floored_logs: usize,
}

impl Tape {
    /// A tape in evaluation mode (dropout is the identity).
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(64),
            train: false,
            dropout_seed: 0,
            dropout_calls: 0,
            floored_logs: 0,
        }
    }

    /// A tape in training mode. Dropout masks are drawn from a counter-based
    /// stream keyed by `seed` and the index of the dropout call, so replaying
    /// the same sequence of operations reproduces the same masks.
    pub fn training(seed: u64) -> Self {
        Tape {
            train: true,
            dropout_seed: seed,
            ..Tape::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Number of `ln_floor` entries that hit the floor.
    pub fn floored_logs(&self) -> usize {
        self.floored_logs
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id.0), store.get(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(PcmcError::ShapeMismatch(format!(
                "add {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut v = ta.clone();
        v.add_assign(tb);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let v = Tensor::from_parts(t.rows(), t.cols(), t.data().iter().map(|x| x * c).collect());
        self.push(Op::Scale(a, c), v)
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| PcmcError::ShapeMismatch("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(PcmcError::ShapeMismatch("concat row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                data.extend_from_slice(&t.data()[r * t.cols()..(r + 1) * t.cols()]);
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(rows, cols, data)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a);
        let v = map(t, |x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    /// Row gather: output row `r` is row `indices[r]` of `table`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if indices.is_empty() {
            return Err(PcmcError::ShapeMismatch("lookup of zero rows".into()));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(PcmcError::IndexOutOfRange {
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
        }
        let v = Tensor::from_parts(indices.len(), cols, data);
        Ok(self.push(Op::Gather(table, indices.to_vec()), v))
    }

    /// Inverted dropout. Identity on an evaluation tape or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(PcmcError::InvalidParameter(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !self.train || p == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        rng.set_stream(self.dropout_calls);
        self.dropout_calls += 1;
        let keep = 1.0 / (1.0 - p);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let v = Tensor::from_parts(
            t.rows(),
            t.cols(),
            t.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        );
        Ok(self.push(Op::Dropout(a, mask), v))
    }

    /// `max(0, x) + eps`, elementwise.
    pub fn clamp_min_zero_plus_const(&mut self, a: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(PcmcError::InvalidParameter(format!(
                "rate floor must be positive, got {eps}"
            )));
        }
        let v = map(self.value(a), |x| x.max(0.0) + eps);
        Ok(self.push(Op::ClampFloor(a), v))
    }

    /// Scatter an `n(n-1) × 1` column of pair values, ordered `(0,1), (0,2),
    /// …, (1,0), (1,2), …`, into an `n × n` matrix with zero diagonal.
    pub fn pairs_to_off_diagonal(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 || t.rows() != n * n.saturating_sub(1) {
            return Err(PcmcError::ShapeMismatch(format!(
                "{:?} is not a column of {} pair values",
                t.shape(),
                n * n.saturating_sub(1)
            )));
        }
        let mut data = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    data[i * n + j] = t.data()[k];
                    k += 1;
                }
            }
        }
        Ok(self.push(Op::PairsToOffDiag(a, n), Tensor::from_parts(n, n, data)))
    }

    /// Overwrite the diagonal with the negated off-diagonal row sum.
    pub fn row_neg_sum_diagonal(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = square(t)?;
        let mut v = t.clone();
        let d = v.data_mut();
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| d[i * n + j]).sum();
            d[i * n + i] = -off;
        }
        Ok(self.push(Op::RowNegSumDiagonal(a), v))
    }

    /// Rows and columns `idx` of a square matrix, in that order.
    pub fn submatrix(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let n = square(t)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(PcmcError::IndexOutOfRange {
                index: bad,
                size: n,
            });
        }
        let m = idx.len();
        let mut data = Vec::with_capacity(m * m);
        for &i in idx {
            for &j in idx {
                data.push(t.data()[i * n + j]);
            }
        }
        Ok(self.push(Op::Submatrix(a, idx.to_vec()), Tensor::from_parts(m, m, data)))
    }

    /// Replace the last column of a square matrix with ones.
    pub fn stationary_system(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = square(t)?;
        let mut v = t.clone();
        for i in 0..n {
            v.data_mut()[i * n + n - 1] = 1.0;
        }
        Ok(self.push(Op::StationarySystem(a), v))
    }

    /// Row-vector solve: returns `x` (`1 × n`) with `x A = b`.
    pub fn linear_solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a);
        let n = square(ta)?;
        let tb = self.value(b);
        if tb.shape() != [1, n] {
            return Err(PcmcError::ShapeMismatch(format!(
                "solve right-hand side {:?}, expected [1, {n}]",
                tb.shape()
            )));
        }
        let lu = LuFactors::factor(ta.data(), n)?;
        let x = lu.solve_transpose(tb.data());
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PcmcError::Singular("non-finite solution".into()));
        }
        Ok(self.push(Op::Solve(a, b, Box::new(lu)), Tensor::row(x)))
    }

    /// Scalar at flat index `k`.
    pub fn pick(&mut self, a: Var, k: usize) -> Result<Var> {
        let t = self.value(a);
        if k >= t.len() {
            return Err(PcmcError::IndexOutOfRange {
                index: k,
                size: t.len(),
            });
        }
        let v = Tensor::scalar(t.data()[k]);
        Ok(self.push(Op::Pick(a, k), v))
    }

    /// `ln(max(x, floor))` elementwise; floored entries carry no gradient and
    /// are counted in [`Tape::floored_logs`].
    pub fn ln_floor(&mut self, a: Var, floor: f64) -> Var {
        let t = self.value(a);
        let hits = t.data().iter().filter(|&&x| !(x > floor)).count();
        let v = map(t, |x| x.max(floor).ln());
        self.floored_logs += hits;
        self.push(Op::LnFloor(a, floor), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// `Σ w ⊙ x` for a constant weight vector of matching length.
    pub fn weighted_sum(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        let t = self.value(a);
        if t.len() != weights.len() {
            return Err(PcmcError::ShapeMismatch(format!(
                "{} weights for {} entries",
                weights.len(),
                t.len()
            )));
        }
        let s = t.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        Ok(self.push(Op::WeightedSum(a, weights.to_vec()), Tensor::scalar(s)))
    }

    /// Reverse sweep from a scalar `loss`, returning one gradient per
    /// parameter in `store` (zero for parameters the loss does not reach).
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(PcmcError::ShapeMismatch(format!(
                "loss must be scalar, got {:?}",
                lt.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut grads: Vec<Tensor> = store
            .values()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    if let Some(slot) = grads.get_mut(*p) {
                        slot.add_assign(&g);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, map(&g, |x| x * c)),
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            let start = r * g.cols() + offset;
                            data.extend_from_slice(&g.data()[start..start + c]);
                        }
                        offset += c;
                        accumulate(&mut adj, *p, Tensor::from_parts(rows, c, data));
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    accumulate(
                        &mut adj,
                        *a,
                        zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { gi * slope }),
                    );
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut adj, *a, zip_map(&g, &node.value, |gi, y| gi * y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    accumulate(&mut adj, *a, zip_map(&g, &node.value, |gi, y| gi * (1.0 - y * y)));
                }
                Op::Gather(table, indices) => {
                    let t = self.value(*table);
                    let cols = t.cols();
                    let mut gt = Tensor::zeros(t.rows(), cols);
                    for (r, &i) in indices.iter().enumerate() {
                        let dst = &mut gt.data_mut()[i * cols..(i + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                            *d += s;
                        }
                    }
                    accumulate(&mut adj, *table, gt);
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                    accumulate(&mut adj, *a, Tensor::from_parts(g.rows(), g.cols(), data));
                }
                Op::ClampFloor(a) => {
                    let x = self.value(*a);
                    accumulate(&mut adj, *a, zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
                }
                Op::PairsToOffDiag(a, n) => {
                    let n = *n;
                    let mut data = Vec::with_capacity(n * (n - 1));
                    for i in 0..n {
                        for j in 0..n {
                            if i != j {
                                data.push(g.data()[i * n + j]);
                            }
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::column(data));
                }
                Op::RowNegSumDiagonal(a) => {
                    let n = g.rows();
                    let mut ga = g.clone();
                    let d = ga.data_mut();
                    for i in 0..n {
                        let gd = g.data()[i * n + i];
                        for j in 0..n {
                            d[i * n + j] = if i == j { 0.0 } else { d[i * n + j] - gd };
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Submatrix(a, idx) => {
                    let t = self.value(*a);
                    let n = t.rows();
                    let m = idx.len();
                    let mut ga = Tensor::zeros(n, n);
                    for (p, &i) in idx.iter().enumerate() {
                        for (q, &j) in idx.iter().enumerate() {
                            ga.data_mut()[i * n + j] += g.data()[p * m + q];
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::StationarySystem(a) => {
                    let n = g.rows();
                    let mut ga = g.clone();
                    for i in 0..n {
                        ga.data_mut()[i * n + n - 1] = 0.0;
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Solve(a, b, lu) => {
                    // x A = b  ⇒  A λ = gᵀ, ∂b = λᵀ, ∂A = −xᵀ λᵀ.
                    let lambda = lu.solve(g.data());
                    if lambda.iter().any(|v| !v.is_finite()) {
                        return Err(PcmcError::Singular("non-finite adjoint".into()));
                    }
                    let x = node.value.data();
                    let n = x.len();
                    let mut ga = Vec::with_capacity(n * n);
                    for xi in x {
                        for lj in &lambda {
                            ga.push(-xi * lj);
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::from_parts(n, n, ga));
                    accumulate(&mut adj, *b, Tensor::row(lambda));
                }
                Op::Pick(a, k) => {
                    let t = self.value(*a);
                    let mut ga = Tensor::zeros(t.rows(), t.cols());
                    ga.data_mut()[*k] = g.item();
                    accumulate(&mut adj, *a, ga);
                }
                Op::LnFloor(a, floor) => {
                    let x = self.value(*a);
                    let f = *floor;
                    accumulate(&mut adj, *a, zip_map(&g, x, |gi, xi| if xi > f { gi / xi } else { 0.0 }));
                }
                Op::Sum(a) => {
                    let t = self.value(*a);
                    let v = g.item();
                    accumulate(&mut adj, *a, Tensor::from_parts(t.rows(), t.cols(), vec![v; t.len()]));
                }
                Op::WeightedSum(a, w) => {
                    let t = self.value(*a);
                    let v = g.item();
                    let data = w.iter().map(|wi| wi * v).collect();
                    accumulate(&mut adj, *a, Tensor::from_parts(t.rows(), t.cols(), data));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        g.rows(),
        g.cols(),
        g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

fn square(t: &Tensor) -> Result<usize> {
    if t.rows() != t.cols() || t.rows() == 0 {
        return Err(PcmcError::ShapeMismatch(format!(
            "expected a square matrix, got {:?}",
            t.shape()
        )));
    }
    Ok(t.rows())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(v));
        (store, id)
    }

    #[test]
    fn identity_and_square() {
        let (store, id) = single_param(3.0);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let g = tape.backward(p, &store).unwrap();
        assert_eq!(g.grads[0].item(), 1.0);

        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let sq = tape.matmul(p, p).unwrap();
        let g = tape.backward(sq, &store).unwrap();
        assert_eq!(g.grads[0].item(), 6.0);
    }

    #[test]
    fn unreached_parameters_get_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0));
        store.add("b", Tensor::row(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let pa = tape.param(&store, a);
        let g = tape.backward(pa, &store).unwrap();
        assert_eq!(g.grads[1], Tensor::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let pa = tape.param(&store, a);
        assert!(matches!(
            tape.backward(pa, &store),
            Err(PcmcError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn clamp_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![-2.3, 1.2]));
        let y = tape.clamp_min_zero_plus_const(x, 0.5).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 0.5).abs() < 1e-15);
        assert!((out[1] - 1.7).abs() < 1e-15);
        assert!(tape.clamp_min_zero_plus_const(x, 0.0).is_err());
    }

    #[test]
    fn leaky_relu_example() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        let y = tape.leaky_relu(x, 0.01);
        assert!((tape.value(y).item() + 0.01).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.constant(Tensor::zeros(3, 2));
        assert!(tape.add(a, c).is_err());
        assert!(matches!(
            tape.embedding_lookup(a, &[2]),
            Err(PcmcError::IndexOutOfRange { index: 2, size: 2 })
        ));
        assert!(tape.dropout(a, 1.0).is_err());
    }

    #[test]
    fn solve_examples() {
        let mut tape = Tape::new();
        let eye = Tensor::new(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = tape.constant(eye);
        let b = tape.constant(Tensor::row(vec![0., 0., 1.]));
        let x = tape.linear_solve(a, b).unwrap();
        assert_eq!(tape.value(x).data(), &[0., 0., 1.]);

        // Stationary system of the two-state chain q_12 = 1, q_21 = 3.
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::new(2, 2, vec![0., 1., 3., 0.]).unwrap());
        let q = tape.row_neg_sum_diagonal(q).unwrap();
        let sys = tape.stationary_system(q).unwrap();
        let rhs = tape.constant(Tensor::row(vec![0., 1.]));
        let x = tape.linear_solve(sys, rhs).unwrap();
        let pi = tape.value(x).data();
        assert!((pi[0] - 0.75).abs() < 1e-12);
        assert!((pi[1] - 0.25).abs() < 1e-12);

        let mut tape = Tape::new();
        let s = tape.constant(Tensor::new(2, 2, vec![1., 2., 2., 4.]).unwrap());
        let r = tape.constant(Tensor::row(vec![0., 1.]));
        assert!(matches!(
            tape.linear_solve(s, r),
            Err(PcmcError::Singular(_))
        ));
    }

    #[test]
    fn dropout_eval_is_identity_and_train_replays() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0; 8]));
        let y = tape.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);

        let masks: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut tape = Tape::training(7);
                let x = tape.constant(Tensor::row(vec![1.0; 64]));
                let y = tape.dropout(x, 0.5).unwrap();
                tape.value(y).data().to_vec()
            })
            .collect();
        assert_eq!(masks[0], masks[1]);
        assert!(masks[0].iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
