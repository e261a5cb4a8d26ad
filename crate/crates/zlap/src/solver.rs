//! Linear solvers for the propagation system `(I - alpha * S_hat) x = b`.
//!
//! The normalized adjacency has spectral radius at most 1, so for
//! `0 < alpha < 1` the system matrix is symmetric positive definite with
//! eigenvalues in `[1 - alpha, 1 + alpha]`. That makes unpreconditioned
//! conjugate gradient the right tool: the matrix never needs to be formed,
//! one sparse matrix-vector product per iteration, and convergence in a few
//! dozen iterations even at tight tolerances.
//!
//! All solver arithmetic runs in `f64` no matter what precision the graph
//! stores; graph weights are widened on the fly inside the product.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::SparseAdjacency;
use crate::scalar::Scalar;

/// Stopping rule for [`cg_solve`]: terminate once the residual 2-norm drops
/// under `rel_tolerance * ||b||`, or give up after `max_iterations`.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub rel_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { rel_tolerance: 1e-6, max_iterations: 1000 }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "rel_tolerance must be a positive finite value, got {}",
                self.rel_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Matrix-free view of `L = I - alpha * S_hat`.
pub struct LaplacianOperator<'a, T = f32> {
    shat: &'a SparseAdjacency<T>,
    alpha: f64,
}

impl<'a, T: Scalar> LaplacianOperator<'a, T> {
    pub fn new(shat: &'a SparseAdjacency<T>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie strictly between 0 and 1, got {alpha}"
            )));
        }
        Ok(Self { shat, alpha })
    }

    pub fn graph(&self) -> &SparseAdjacency<T> {
        self.shat
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn node_count(&self) -> usize {
        self.shat.node_count()
    }

    /// `L x`, i.e. `x - alpha * S_hat x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let (cols, vals) = self.shat.row(i);
            let mut acc = 0.0f64;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v.acc() * x[c];
            }
            *o = x[i] - self.alpha * acc;
        });
    }

    /// `S_hat x` alone, the propagation step of the fixed-point iteration.
    fn spread_into(&self, x: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let (cols, vals) = self.shat.row(i);
            let mut acc = 0.0f64;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v.acc() * x[c];
            }
            *o = acc;
        });
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.shat.node_count() {
            return Err(Error::Shape(format!(
                "vector length {} does not match {} nodes",
                x.len(),
                self.shat.node_count()
            )));
        }
        Ok(())
    }
}

/// Outcome of a conjugate-gradient solve. `residual` is relative to `||b||`.
/// A run that exhausts its iteration budget still returns its best iterate,
/// with `converged` cleared, so batch callers can flag instead of abort.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Unpreconditioned conjugate gradient on `L x = b` starting from zero.
pub fn cg_solve<T: Scalar>(
    op: &LaplacianOperator<'_, T>,
    b: &[f64],
    cfg: &SolveConfig,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    op.check_len(b)?;

    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(SolveOutcome { x: vec![0.0; n], converged: true, iterations: 0, residual: 0.0 });
    }
    if !b_norm.is_finite() {
        return Err(Error::Numerical { iteration: 0, message: "right-hand side is not finite".into() });
    }

    let mut x = vec![0.0f64; n];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut ap = vec![0.0f64; n];
    let mut rr = dot(&r, &r);

    for iteration in 1..=cfg.max_iterations {
        op.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Numerical {
                iteration,
                message: format!("curvature p^T L p = {pap}, system is not positive definite"),
            });
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::Numerical { iteration, message: "residual lost finiteness".into() });
        }
        let residual = rr_next.sqrt() / b_norm;
        if residual <= cfg.rel_tolerance {
            return Ok(SolveOutcome { x, converged: true, iterations: iteration, residual });
        }
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }

    let residual = rr.sqrt() / b_norm;
    Ok(SolveOutcome { x, converged: false, iterations: cfg.max_iterations, residual })
}

/// Reference solve by dense LU factorization with partial pivoting.
///
/// Exists to cross-check the iterative path in tests and diagnostics, so it
/// deliberately refuses systems with more than 2000 nodes rather than
/// allocate quadratic memory.
pub fn dense_solve_oracle<T: Scalar>(
    shat: &SparseAdjacency<T>,
    alpha: f64,
    b: &[f64],
) -> Result<Vec<f64>> {
    const MAX_DENSE_NODES: usize = 2000;
    let n = shat.node_count();
    if n > MAX_DENSE_NODES {
        return Err(Error::Capacity(format!(
            "dense oracle handles at most {MAX_DENSE_NODES} nodes, got {n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie strictly between 0 and 1, got {alpha}")));
    }
    if b.len() != n {
        return Err(Error::Shape(format!("rhs length {} does not match {n} nodes", b.len())));
    }

    // L = I - alpha * S_hat, dense.
    let mut a = shat.to_dense();
    for v in a.iter_mut() {
        *v *= -alpha;
    }
    for i in 0..n {
        a[i * n + i] += 1.0;
    }

    // LU with partial pivoting, factorization in place.
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pivot_abs == 0.0 {
            return Err(Error::Numerical {
                iteration: col,
                message: "dense factorization hit a zero pivot".into(),
            });
        }
        if pivot_row != col {
            perm.swap(pivot_row, col);
            for j in 0..n {
                a.swap(pivot_row * n + j, col * n + j);
            }
        }
        let pivot = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / pivot;
            a[r * n + col] = f;
            for j in col + 1..n {
                a[r * n + j] -= f * a[col * n + j];
            }
        }
    }

    let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            x[i] -= a[i * n + j] * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= a[i * n + j] * x[j];
        }
        x[i] /= a[i * n + i];
    }
    Ok(x)
}

/// The classic fixed-point form of label propagation:
/// `y^(t+1) = alpha * S_hat y^(t) + (1 - alpha) * y`, starting at `y`.
///
/// Its fixed point is `(1 - alpha) * L^(-1) y`, the solver solution scaled
/// by a constant that never changes an argmax. Used to validate the linear
/// systems against the textbook iteration, not as a production path.
pub fn iterative_propagation<T: Scalar>(
    op: &LaplacianOperator<'_, T>,
    y: &[f64],
    iterations: usize,
) -> Result<Vec<f64>> {
    op.check_len(y)?;
    let alpha = op.alpha();
    let mut current = y.to_vec();
    let mut spread = vec![0.0f64; y.len()];
    for _ in 0..iterations {
        op.spread_into(&current, &mut spread);
        for (c, (&s, &orig)) in current.iter_mut().zip(spread.iter().zip(y)) {
            *c = alpha * s + (1.0 - alpha) * orig;
        }
    }
    Ok(current)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
