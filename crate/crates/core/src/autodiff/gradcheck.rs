//! Central finite-difference checks of reverse-mode gradients.
//!
//! The checker only ever runs forward passes to build its numeric estimate,
//! so it is independent of the backward rules it validates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{ParamId, ParamStore, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`]; gradients smaller than this are
/// compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Pass threshold for primitive operators.
pub const PRIMITIVE_TOL: f64 = 1e-5;

/// Pass threshold for whole-model losses.
pub const END_TO_END_TOL: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Maximum relative error between the tape gradient of `f` and central
/// differences over every scalar of every parameter in `store`.
///
/// `f` builds a fresh tape (in whatever mode it chooses) and returns it with a
/// scalar loss node. It must be deterministic in `store`.
pub fn max_gradient_error<F>(store: &ParamStore, f: F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
{
    let (tape, loss) = f(store)?;
    let analytic = tape.backward(loss, store)?;
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for k in 0..store.len() {
        let id = ParamId(k);
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let (t_plus, l_plus) = f(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let (t_minus, l_minus) = f(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric =
                (t_plus.value(l_plus).item() - t_minus.value(l_minus).item()) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.grads[k].data()[i], numeric));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_parts(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Values bounded away from zero so kinked operators are differentiable at
/// every probe point.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_parts(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let m = rng.gen_range(0.1..1.5);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

fn positive_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_parts(rows, cols, (0..rows * cols).map(|_| rng.gen_range(0.2..2.0)).collect())
}

/// Random well-conditioned square matrix (diagonally dominant).
fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut t = random_tensor(rng, n, n);
    for i in 0..n {
        t.data_mut()[i * n + i] += n as f64;
    }
    t
}

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

/// Reduce an output to a scalar with fixed random weights so every output
/// entry contributes a distinct sensitivity.
fn project(tape: &mut Tape, out: Var, weights: &[f64]) -> Result<Var> {
    tape.weighted_sum(out, weights)
}

fn weights_for(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Check a unary operator whose output has `out_len` entries.
fn unary<Op>(rng: &mut ChaCha8Rng, input: Tensor, out_len: usize, op: Op) -> Result<f64>
where
    Op: Fn(&mut Tape, Var) -> Result<Var> + 'static,
{
    let mut store = ParamStore::new();
    let x = store.add("x", input);
    let w = weights_for(rng, out_len);
    max_gradient_error(&store, |s| {
        let mut tape = Tape::new();
        let xv = tape.param(s, x);
        let y = op(&mut tape, xv)?;
        let l = project(&mut tape, y, &w)?;
        Ok((tape, l))
    })
}

fn binary<Op>(rng: &mut ChaCha8Rng, a: Tensor, b: Tensor, out_len: usize, op: Op) -> Result<f64>
where
    Op: Fn(&mut Tape, Var, Var) -> Result<Var> + 'static,
{
    let mut store = ParamStore::new();
    let ia = store.add("a", a);
    let ib = store.add("b", b);
    let w = weights_for(rng, out_len);
    max_gradient_error(&store, |s| {
        let mut tape = Tape::new();
        let av = tape.param(s, ia);
        let bv = tape.param(s, ib);
        let y = op(&mut tape, av, bv)?;
        let l = project(&mut tape, y, &w)?;
        Ok((tape, l))
    })
}

fn primitive_cases() -> Vec<(&'static str, Case)> {
    let mut cases: Vec<(&'static str, Case)> = Vec::new();
    cases.push((
        "matmul",
        Box::new(|rng| {
            let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
            let a = random_tensor(rng, m, k);
            let b = random_tensor(rng, k, n);
            binary(rng, a, b, m * n, |t, a, b| t.matmul(a, b))
        }),
    ));
    cases.push((
        "add",
        Box::new(|rng| {
            let (m, n) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let a = random_tensor(rng, m, n);
            let b = random_tensor(rng, m, n);
            binary(rng, a, b, m * n, |t, a, b| t.add(a, b))
        }),
    ));
    cases.push((
        "scale",
        Box::new(|rng| {
            let c = rng.gen_range(-3.0..3.0);
            let x = random_tensor(rng, 2, 3);
            unary(rng, x, 6, move |t, x| Ok(t.scale(x, c)))
        }),
    ));
    cases.push((
        "concat",
        Box::new(|rng| {
            let m = rng.gen_range(1..4);
            let (c1, c2) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let a = random_tensor(rng, m, c1);
            let b = random_tensor(rng, m, c2);
            // Repeating `a` exercises gradient accumulation.
            binary(rng, a, b, m * (2 * c1 + c2), |t, a, b| t.concat(&[a, b, a]))
        }),
    ));
    cases.push((
        "leaky_relu",
        Box::new(|rng| {
            let x = away_from_zero(rng, 3, 4);
            unary(rng, x, 12, |t, x| Ok(t.leaky_relu(x, 0.01)))
        }),
    ));
    cases.push((
        "relu",
        Box::new(|rng| {
            let x = away_from_zero(rng, 3, 4);
            unary(rng, x, 12, |t, x| Ok(t.relu(x)))
        }),
    ));
    cases.push((
        "sigmoid",
        Box::new(|rng| {
            let x = random_tensor(rng, 3, 4);
            unary(rng, x, 12, |t, x| Ok(t.sigmoid(x)))
        }),
    ));
    cases.push((
        "tanh",
        Box::new(|rng| {
            let x = random_tensor(rng, 3, 4);
            unary(rng, x, 12, |t, x| Ok(t.tanh(x)))
        }),
    ));
    cases.push((
        "embedding_lookup",
        Box::new(|rng| {
            let rows = rng.gen_range(2..6);
            let idx: Vec<usize> = (0..5).map(|_| rng.gen_range(0..rows)).collect();
            let table = random_tensor(rng, rows, 3);
            unary(rng, table, 15, move |t, x| t.embedding_lookup(x, &idx))
        }),
    ));
    cases.push((
        "dropout",
        Box::new(|rng| {
            let seed = rng.gen::<u64>();
            let x = random_tensor(rng, 4, 4);
            let mut store = ParamStore::new();
            let id = store.add("x", x);
            let w = weights_for(rng, 16);
            max_gradient_error(&store, |s| {
                let mut tape = Tape::training(seed);
                let xv = tape.param(s, id);
                let y = tape.dropout(xv, 0.5)?;
                let l = tape.weighted_sum(y, &w)?;
                Ok((tape, l))
            })
        }),
    ));
    cases.push((
        "clamp_min_zero_plus_const",
        Box::new(|rng| {
            let x = away_from_zero(rng, 3, 3);
            unary(rng, x, 9, |t, x| t.clamp_min_zero_plus_const(x, 0.5))
        }),
    ));
    cases.push((
        "pairs_to_off_diagonal",
        Box::new(|rng| {
            let n = rng.gen_range(2..5);
            let x = random_tensor(rng, n * (n - 1), 1);
            unary(rng, x, n * n, move |t, x| t.pairs_to_off_diagonal(x, n))
        }),
    ));
    cases.push((
        "row_neg_sum_diagonal",
        Box::new(|rng| {
            let n = rng.gen_range(1..5);
            let x = random_tensor(rng, n, n);
            unary(rng, x, n * n, |t, x| t.row_neg_sum_diagonal(x))
        }),
    ));
    cases.push((
        "submatrix",
        Box::new(|rng| {
            let n = rng.gen_range(2..6);
            let mut idx: Vec<usize> = (0..n).collect();
            let keep = rng.gen_range(1..=n);
            for i in (1..n).rev() {
                idx.swap(i, rng.gen_range(0..=i));
            }
            idx.truncate(keep);
            let x = random_tensor(rng, n, n);
            unary(rng, x, keep * keep, move |t, x| t.submatrix(x, &idx))
        }),
    ));
    cases.push((
        "stationary_system",
        Box::new(|rng| {
            let n = rng.gen_range(1..5);
            let x = random_tensor(rng, n, n);
            unary(rng, x, n * n, |t, x| t.stationary_system(x))
        }),
    ));
    cases.push((
        "linear_solve",
        Box::new(|rng| {
            let n = rng.gen_range(1..6);
            let a = well_conditioned(rng, n);
            let b = random_tensor(rng, 1, n);
            binary(rng, a, b, n, |t, a, b| t.linear_solve(a, b))
        }),
    ));
    cases.push((
        "pick",
        Box::new(|rng| {
            let k = rng.gen_range(0..6);
            let x = random_tensor(rng, 2, 3);
            unary(rng, x, 1, move |t, x| t.pick(x, k))
        }),
    ));
    cases.push((
        "ln_floor",
        Box::new(|rng| {
            let x = positive_tensor(rng, 2, 3);
            unary(rng, x, 6, |t, x| Ok(t.ln_floor(x, 1e-30)))
        }),
    ));
    cases.push((
        "sum",
        Box::new(|rng| {
            let x = random_tensor(rng, 3, 2);
            unary(rng, x, 1, |t, x| Ok(t.sum(x)))
        }),
    ));
    cases
}

/// Run every primitive check over `trials` seeded draws.
pub fn primitive_suite(trials: usize, seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rows = Vec::new();
    for (k, (name, case)) in primitive_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            worst = worst.max(case(&mut rng)?);
        }
        rows.push(GradCheckRow {
            name: name.to_string(),
            trials,
            max_rel_err: worst,
            tolerance: PRIMITIVE_TOL,
        });
    }
    Ok(rows)
}

/// Gradient of `Σx` for `x A = b` with respect to `A`, numerically and by
/// the adjoint rule; returns the maximum relative error.
pub fn solve_sum_check(seed: u64, n: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = well_conditioned(&mut rng, n);
    let b = random_tensor(&mut rng, 1, n);
    let mut store = ParamStore::new();
    let ia = store.add("A", a);
    max_gradient_error(&store, |s| {
        let mut tape = Tape::new();
        let av = tape.param(s, ia);
        let bv = tape.constant(b.clone());
        let x = tape.linear_solve(av, bv)?;
        let l = tape.sum(x);
        Ok((tape, l))
    })
}
