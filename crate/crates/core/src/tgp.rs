//! Twin Gaussian Process regression.
//!
//! Inputs and outputs each get an RBF Gram matrix. A prediction for a test
//! input `r` minimizes the KL divergence between the output-side and
//! input-side predictive distributions:
//!
//! ```text
//! L(x) = K_X(x,x) - 2 k_xᵀ K_R⁻¹ k_r - η · ln[K_X(x,x) - k_xᵀ K_X⁻¹ k_x]
//! η    = K_R(r,r) - k_rᵀ K_R⁻¹ k_r
//! ```
//!
//! where `k_r[i] = exp(-γ_r‖r - r_i‖²)` and `k_x[i] = exp(-γ_x‖x - x_i‖²)`.
//! The last term is the negative log posterior output variance weighted by
//! the input-side variance. The noise term λ is applied to the test point
//! against itself, so `K_R(r,r) = 1 + λ_r` and `K_X(x,x) = 1 + λ_x`; this
//! keeps both η and the log argument positive.
//!
//! All `K⁻¹v` products go through cached Cholesky factors.
//!
//! With [`Hyperparams::neighborhood`] set, each query is answered by a
//! model fitted on the `m` training pairs whose inputs are closest to `r`,
//! which keeps prediction cost independent of the training-set size.

use std::borrow::Cow;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::FeatureLayout;
use crate::optim::{minimize, LbfgsOptions};

pub const FORMAT_VERSION: u32 = 1;
pub const MIN_LAMBDA: f64 = 1e-10;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_K_INIT: usize = 5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

/// Gram side that failed to factorize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Input,
    Output,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Input => "input",
            Side::Output => "output",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TgpError {
    #[error("need at least 2 training pairs, got {0}")]
    TooFewSamples(usize),
    #[error("{inputs} inputs but {outputs} outputs")]
    CountMismatch { inputs: usize, outputs: usize },
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameter {name} = {value}: {reason}")]
    InvalidHyperparam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{side} Gram matrix is not positive definite at lambda = {lambda:e}; use a larger lambda")]
    NotPositiveDefinite { side: Side, lambda: f64 },
    #[error("log argument {0:e} is not positive; lambda_x is too small for this output")]
    LogArgument(f64),
    #[error("k = {k} outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
}

pub type Result<T> = std::result::Result<T, TgpError>;

/// Kernel widths, noise variances and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub gamma_r: f64,
    pub lambda_r: f64,
    /// Output kernel width in 1/mm².
    pub gamma_x: f64,
    pub lambda_x: f64,
    pub k_init: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Answer each query with a model over this many nearest training pairs.
    #[serde(default)]
    pub neighborhood: Option<usize>,
    /// Z-score input features with statistics of the training inputs.
    #[serde(default)]
    pub standardize: bool,
}

impl Hyperparams {
    pub fn new(gamma_r: f64, gamma_x: f64) -> Self {
        Hyperparams {
            gamma_r,
            lambda_r: DEFAULT_LAMBDA,
            gamma_x,
            lambda_x: DEFAULT_LAMBDA,
            k_init: DEFAULT_K_INIT,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            neighborhood: None,
            standardize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, value, reason| Err(TgpError::InvalidHyperparam { name, value, reason });
        for (name, g) in [("gamma_r", self.gamma_r), ("gamma_x", self.gamma_x)] {
            if !(g.is_finite() && g > 0.0) {
                return bad(name, g, "must be finite and > 0");
            }
        }
        for (name, l) in [("lambda_r", self.lambda_r), ("lambda_x", self.lambda_x)] {
            if !(l.is_finite() && l >= MIN_LAMBDA) {
                return bad(name, l, "must be finite and >= 1e-10");
            }
        }
        if self.k_init == 0 {
            return bad("k_init", 0.0, "must be >= 1");
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad("tolerance", self.tolerance, "must be finite and > 0");
        }
        if let Some(m) = self.neighborhood {
            if m < 2 {
                return bad("neighborhood", m as f64, "must be >= 2");
            }
        }
        Ok(())
    }
}

/// Partially specified hyperparameters. Missing kernel widths come from the
/// median heuristic on the training data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperparamSpec {
    pub gamma_r: Option<f64>,
    pub lambda_r: Option<f64>,
    pub gamma_x: Option<f64>,
    pub lambda_x: Option<f64>,
    pub k_init: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub neighborhood: Option<usize>,
    pub standardize: Option<bool>,
}

impl HyperparamSpec {
    pub fn resolve<R: AsRef<[f64]>, X: AsRef<[f64]>>(&self, inputs: &[R], outputs: &[X]) -> Result<Hyperparams> {
        let standardize = self.standardize.unwrap_or(false);
        let gamma_r = match self.gamma_r {
            Some(g) => g,
            None if standardize => {
                let rows = Rows::from_slices(inputs, "inputs")?;
                let scaler = Standardizer::fit(&rows);
                median_heuristic_rows(&scaler.apply_rows(&rows))
            }
            None => median_heuristic(inputs)?,
        };
        let gamma_x = match self.gamma_x {
            Some(g) => g,
            None => median_heuristic(outputs)?,
        };
        let h = Hyperparams {
            gamma_r,
            lambda_r: self.lambda_r.unwrap_or(DEFAULT_LAMBDA),
            gamma_x,
            lambda_x: self.lambda_x.unwrap_or(DEFAULT_LAMBDA),
            k_init: self.k_init.unwrap_or(DEFAULT_K_INIT),
            tolerance: self.tolerance.unwrap_or(DEFAULT_TOLERANCE),
            max_iterations: self.max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS),
            neighborhood: self.neighborhood,
            standardize,
        };
        h.validate()?;
        Ok(h)
    }
}

/// Most pairs used by the median heuristic; larger sets are subsampled with
/// a fixed stride.
const MEDIAN_PAIR_BUDGET: usize = 2_000_000;

/// `1 / (2·median²)` of pairwise Euclidean distances. Falls back to the mean
/// of nonzero distances when the median is zero, and to 1 when every vector
/// coincides.
pub fn median_heuristic<V: AsRef<[f64]>>(vectors: &[V]) -> Result<f64> {
    let rows = Rows::from_slices(vectors, "vectors")?;
    Ok(median_heuristic_rows(&rows))
}

fn median_heuristic_rows(rows: &Rows) -> f64 {
    let n = rows.len();
    let pairs = n * n.saturating_sub(1) / 2;
    let stride = pairs.div_ceil(MEDIAN_PAIR_BUDGET).max(1);
    let mut d = Vec::with_capacity(pairs / stride + 1);
    let mut p = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if p.is_multiple_of(stride) {
                d.push(sq_dist(rows.row(i), rows.row(j)).sqrt());
            }
            p += 1;
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, &mut median, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let scale = if median > 0.0 {
        median
    } else {
        let nz: Vec<f64> = d.iter().copied().filter(|v| *v > 0.0).collect();
        if nz.is_empty() {
            return 1.0;
        }
        nz.iter().sum::<f64>() / nz.len() as f64
    };
    1.0 / (2.0 * scale * scale)
}

/// Dense row-major storage for a set of equal-length vectors.
#[derive(Clone, Debug, PartialEq)]
struct Rows {
    dim: usize,
    data: Vec<f64>,
}

impl Rows {
    fn from_slices<V: AsRef<[f64]>>(vectors: &[V], what: &'static str) -> Result<Rows> {
        let first = vectors.first().ok_or(TgpError::Empty(what))?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(TgpError::Empty(what));
        }
        let mut data = Vec::with_capacity(dim * vectors.len());
        for v in vectors {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(TgpError::Dimension {
                    what,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(TgpError::NonFinite(what));
            }
            data.extend_from_slice(v);
        }
        Ok(Rows { dim, data })
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn select(&self, idx: &[usize]) -> Rows {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Rows { dim: self.dim, data }
    }

    fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-γ‖a - b‖²)`.
pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TgpError::Dimension {
            what: "kernel arguments",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok((-gamma * sq_dist(a, b)).exp())
}

/// Kernel matrix with `λ` added on the diagonal.
pub fn gram<V: AsRef<[f64]>>(vectors: &[V], gamma: f64, lambda: f64) -> Result<DMatrix<f64>> {
    Ok(gram_rows(&Rows::from_slices(vectors, "vectors")?, gamma, lambda))
}

fn gram_rows(rows: &Rows, gamma: f64, lambda: f64) -> DMatrix<f64> {
    let n = rows.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        g[(i, i)] = 1.0 + lambda;
        for j in 0..i {
            let k = (-gamma * sq_dist(rows.row(i), rows.row(j))).exp();
            g[(i, j)] = k;
            g[(j, i)] = k;
        }
    }
    g
}

fn kernel_vector(rows: &Rows, q: &[f64], gamma: f64) -> DVector<f64> {
    DVector::from_iterator(
        rows.len(),
        (0..rows.len()).map(|i| (-gamma * sq_dist(rows.row(i), q)).exp()),
    )
}

/// Per-dimension z-scoring; constant dimensions keep unit scale.
#[derive(Clone, Debug, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &Rows) -> Standardizer {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; rows.dim];
        for i in 0..rows.len() {
            for (m, v) in mean.iter_mut().zip(rows.row(i)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; rows.dim];
        for i in 0..rows.len() {
            for ((s, v), m) in var.iter_mut().zip(rows.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    fn apply_rows(&self, rows: &Rows) -> Rows {
        let mut data = Vec::with_capacity(rows.data.len());
        for i in 0..rows.len() {
            data.extend(self.apply(rows.row(i)));
        }
        Rows { dim: rows.dim, data }
    }
}

/// Factorized input/output Gram pair over one set of training pairs.
#[derive(Clone, Debug)]
struct Twin {
    r: Rows,
    x: Rows,
    chol_r: Cholesky<f64, Dyn>,
    chol_x: Cholesky<f64, Dyn>,
}

impl Twin {
    fn fit(r: Rows, x: Rows, h: &Hyperparams) -> Result<Twin> {
        let chol_r = Cholesky::new(gram_rows(&r, h.gamma_r, h.lambda_r)).ok_or(TgpError::NotPositiveDefinite {
            side: Side::Input,
            lambda: h.lambda_r,
        })?;
        let chol_x = Cholesky::new(gram_rows(&x, h.gamma_x, h.lambda_x)).ok_or(TgpError::NotPositiveDefinite {
            side: Side::Output,
            lambda: h.lambda_x,
        })?;
        Ok(Twin { r, x, chol_r, chol_x })
    }

    /// Input-side quantities that do not depend on `x`.
    fn query(&self, r: &[f64], h: &Hyperparams) -> Result<Query<'_>> {
        let k_r = kernel_vector(&self.r, r, h.gamma_r);
        let alpha = self.chol_r.solve(&k_r);
        let eta = 1.0 + h.lambda_r - k_r.dot(&alpha);
        if !eta.is_finite() {
            return Err(TgpError::NonFinite("input variance"));
        }
        Ok(Query {
            twin: self,
            alpha,
            eta,
            gamma_x: h.gamma_x,
            diag_x: 1.0 + h.lambda_x,
        })
    }
}

struct Query<'a> {
    twin: &'a Twin,
    alpha: DVector<f64>,
    eta: f64,
    gamma_x: f64,
    diag_x: f64,
}

impl Query<'_> {
    /// Objective at `x`, writing the gradient into `grad` when given.
    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        let xs = &self.twin.x;
        let k_x = kernel_vector(xs, x, self.gamma_x);
        let beta = self.twin.chol_x.solve(&k_x);
        let s = self.diag_x - k_x.dot(&beta);
        if !(s > 0.0 && s.is_finite()) {
            return Err(TgpError::LogArgument(s));
        }
        let value = self.diag_x - 2.0 * k_x.dot(&self.alpha) - self.eta * s.ln();
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..xs.len() {
                let dl_dk = -2.0 * self.alpha[i] + 2.0 * self.eta * beta[i] / s;
                let c = dl_dk * k_x[i] * (-2.0 * self.gamma_x);
                for ((gj, xj), xij) in g.iter_mut().zip(x).zip(xs.row(i)) {
                    *gj += c * (xj - xij);
                }
            }
        }
        Ok(value)
    }
}

/// Result of minimizing the objective for one test input.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Whether the winning start met the gradient tolerance.
    pub converged: bool,
    /// Lowest objective among the starting candidates.
    pub initial_objective: f64,
    pub iterations: usize,
}

/// Fitted model. Immutable; safe to share across threads.
#[derive(Clone, Debug)]
pub struct TgpModel {
    hyper: Hyperparams,
    raw_r: Rows,
    r: Rows,
    x: Rows,
    scaler: Option<Standardizer>,
    global: Option<Twin>,
}

/// Fits a model. See [`TgpModel::fit`].
pub fn fit<R: AsRef<[f64]>, X: AsRef<[f64]>>(inputs: &[R], outputs: &[X], h: &Hyperparams) -> Result<TgpModel> {
    TgpModel::fit(inputs, outputs, h)
}

impl TgpModel {
    /// Builds and factorizes the Gram matrices. In neighborhood mode with
    /// fewer training pairs than the neighborhood size, or without
    /// neighborhood mode, a single global factorization is cached.
    pub fn fit<R: AsRef<[f64]>, X: AsRef<[f64]>>(inputs: &[R], outputs: &[X], h: &Hyperparams) -> Result<TgpModel> {
        h.validate()?;
        if inputs.len() != outputs.len() {
            return Err(TgpError::CountMismatch {
                inputs: inputs.len(),
                outputs: outputs.len(),
            });
        }
        if inputs.len() < 2 {
            return Err(TgpError::TooFewSamples(inputs.len()));
        }
        let raw_r = Rows::from_slices(inputs, "inputs")?;
        let x = Rows::from_slices(outputs, "outputs")?;
        let scaler = h.standardize.then(|| Standardizer::fit(&raw_r));
        let r = match &scaler {
            Some(s) => s.apply_rows(&raw_r),
            None => raw_r.clone(),
        };
        let n = r.len();
        let global = match h.neighborhood {
            Some(m) if m < n => {
                // factorization happens per query; still check the local
                // problem around the first training input is well posed
                let idx = nearest_indices(&r, r.row(0), m);
                Twin::fit(r.select(&idx), x.select(&idx), h)?;
                None
            }
            _ => Some(Twin::fit(r.clone(), x.clone(), h)?),
        };
        Ok(TgpModel {
            hyper: h.clone(),
            raw_r,
            r,
            x,
            scaler,
            global,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.r.dim
    }

    pub fn output_dim(&self) -> usize {
        self.x.dim
    }

    /// Training inputs as given to `fit`.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.raw_r.to_vecs()
    }

    pub fn outputs(&self) -> Vec<Vec<f64>> {
        self.x.to_vecs()
    }

    pub fn output(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    /// Lower Cholesky factors `(L_R, L_X)` of the cached global Gram
    /// matrices, if the model keeps a global factorization.
    pub fn cholesky_factors(&self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        self.global.as_ref().map(|t| (t.chol_r.l(), t.chol_x.l()))
    }

    /// Input Gram matrix over all training inputs (in model feature space).
    pub fn input_gram(&self) -> DMatrix<f64> {
        gram_rows(&self.r, self.hyper.gamma_r, self.hyper.lambda_r)
    }

    pub fn output_gram(&self) -> DMatrix<f64> {
        gram_rows(&self.x, self.hyper.gamma_x, self.hyper.lambda_x)
    }

    fn prepare_input(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.r.dim {
            return Err(TgpError::Dimension {
                what: "test input",
                expected: self.r.dim,
                found: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(TgpError::NonFinite("test input"));
        }
        Ok(match &self.scaler {
            Some(s) => s.apply(r),
            None => r.to_vec(),
        })
    }

    fn check_output(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.x.dim {
            return Err(TgpError::Dimension {
                what: "output",
                expected: self.x.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TgpError::NonFinite("output"));
        }
        Ok(())
    }

    /// Twin used to answer a query at the (prepared) input `r`, with the
    /// training indices it covers in nearest-first order.
    fn twin_for(&self, r: &[f64]) -> Result<(Cow<'_, Twin>, Vec<usize>)> {
        match &self.global {
            Some(t) => Ok((Cow::Borrowed(t), nearest_indices(&self.r, r, self.len()))),
            None => {
                let m = self.hyper.neighborhood.unwrap_or(self.len()).min(self.len());
                let idx = nearest_indices(&self.r, r, m);
                let twin = Twin::fit(self.r.select(&idx), self.x.select(&idx), &self.hyper)?;
                Ok((Cow::Owned(twin), idx))
            }
        }
    }

    /// Objective value at output `x` for test input `r`.
    pub fn kl_objective(&self, r: &[f64], x: &[f64]) -> Result<f64> {
        let r = self.prepare_input(r)?;
        self.check_output(x)?;
        let (twin, _) = self.twin_for(&r)?;
        twin.query(&r, &self.hyper)?.eval(x, None)
    }

    /// Analytic gradient of [`kl_objective`](Self::kl_objective) with
    /// respect to `x`.
    pub fn kl_gradient(&self, r: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let r = self.prepare_input(r)?;
        self.check_output(x)?;
        let (twin, _) = self.twin_for(&r)?;
        let mut g = vec![0.0; x.len()];
        twin.query(&r, &self.hyper)?.eval(x, Some(&mut g))?;
        Ok(g)
    }

    /// Input-side variance η at `r`.
    pub fn input_variance(&self, r: &[f64]) -> Result<f64> {
        let r = self.prepare_input(r)?;
        let (twin, _) = self.twin_for(&r)?;
        Ok(twin.query(&r, &self.hyper)?.eta)
    }

    /// Indices of the `k` training inputs nearest to `r`, nearest first,
    /// ties broken by index.
    pub fn nearest(&self, r: &[f64], k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.len() {
            return Err(TgpError::InvalidK { k, n: self.len() });
        }
        let r = self.prepare_input(r)?;
        Ok(nearest_indices(&self.r, &r, k))
    }

    /// Training outputs of the `k` nearest training inputs.
    pub fn knn_init(&self, r: &[f64], k: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .nearest(r, k)?
            .into_iter()
            .map(|i| self.x.row(i).to_vec())
            .collect())
    }

    /// Minimizes the objective from each of the `k_init` nearest-neighbor
    /// outputs and keeps the lowest final value.
    pub fn predict(&self, r: &[f64]) -> Result<Prediction> {
        let r = self.prepare_input(r)?;
        let (twin, order) = self.twin_for(&r)?;
        let query = twin.query(&r, &self.hyper)?;
        let k = self.hyper.k_init.min(order.len());
        // optimize in kernel units relative to the start: x = x0 + z / √γ_x
        let unit = self.hyper.gamma_x.sqrt();
        let opts = LbfgsOptions {
            grad_tol: self.hyper.tolerance,
            max_iterations: self.hyper.max_iterations,
            ..LbfgsOptions::default()
        };
        let mut best: Option<Prediction> = None;
        let mut initial_objective = f64::INFINITY;
        let mut starts: Vec<&[f64]> = Vec::with_capacity(k);
        let mut x_buf = vec![0.0; self.x.dim];
        let mut g_buf = vec![0.0; self.x.dim];
        for &i in &order[..k] {
            let x0 = self.x.row(i);
            if starts.contains(&x0) {
                continue;
            }
            starts.push(x0);
            let objective = |z: &[f64], gz: &mut [f64]| {
                for ((xb, a), b) in x_buf.iter_mut().zip(x0).zip(z) {
                    *xb = a + b / unit;
                }
                match query.eval(&x_buf, Some(&mut g_buf)) {
                    Ok(v) => {
                        for (gzj, gj) in gz.iter_mut().zip(&g_buf) {
                            *gzj = gj / unit;
                        }
                        v
                    }
                    Err(_) => f64::INFINITY,
                }
            };
            let m = minimize(objective, &vec![0.0; self.x.dim], &opts);
            if !m.value.is_finite() {
                // the start itself is infeasible
                continue;
            }
            let start_value = query.eval(x0, None)?;
            initial_objective = initial_objective.min(start_value);
            let x: Vec<f64> = x0.iter().zip(&m.x).map(|(a, b)| a + b / unit).collect();
            let better = best.as_ref().is_none_or(|b| m.value < b.objective);
            if better {
                best = Some(Prediction {
                    x,
                    objective: m.value,
                    converged: m.converged,
                    initial_objective: f64::NAN,
                    iterations: m.iterations,
                });
            }
        }
        match best {
            Some(mut p) => {
                p.initial_objective = initial_objective;
                Ok(p)
            }
            None => Err(TgpError::LogArgument(0.0)),
        }
    }

    /// Predicts a batch of inputs in parallel; output order follows input.
    pub fn predict_many<R: AsRef<[f64]> + Sync>(&self, inputs: &[R]) -> Result<Vec<Prediction>> {
        inputs.par_iter().map(|r| self.predict(r.as_ref())).collect()
    }

    /// Serializable form; Cholesky factors are rebuilt on load.
    pub fn to_document(&self, joint_set: Option<String>, feature_layout: Option<FeatureLayout>) -> ModelDocument {
        ModelDocument {
            format_version: FORMAT_VERSION,
            hyperparams: self.hyper.clone(),
            joint_set,
            feature_layout,
            inputs: self.raw_r.to_vecs(),
            outputs: self.x.to_vecs(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<TgpModel> {
        if doc.format_version != FORMAT_VERSION {
            return Err(TgpError::FormatVersion(doc.format_version));
        }
        TgpModel::fit(&doc.inputs, &doc.outputs, &doc.hyperparams)
    }
}

fn nearest_indices(rows: &Rows, q: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..rows.len()).map(|i| (sq_dist(rows.row(i), q), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_unstable_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Persisted model: training data plus hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub hyperparams: Hyperparams,
    pub joint_set: Option<String>,
    pub feature_layout: Option<FeatureLayout>,
    #[serde(rename = "R")]
    pub inputs: Vec<Vec<f64>>,
    #[serde(rename = "X")]
    pub outputs: Vec<Vec<f64>>,
}

/// Kernel-width multipliers tried by [`grid_search`].
pub const GAMMA_MULTIPLIERS: [f64; 5] = [0.1, 0.3, 1.0, 3.0, 10.0];
/// Noise variances tried by [`grid_search`] (shared by both sides).
pub const GRID_LAMBDAS: [f64; 2] = [1e-4, 1e-2];

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub hyperparams: Hyperparams,
    /// Mean Euclidean output error on the validation pairs.
    pub error: f64,
}

/// Tries every combination of scaled kernel widths and noise levels around
/// `base` and returns all points, best first. Settings that fail to fit
/// are skipped.
pub fn grid_search<V: AsRef<[f64]> + Sync>(
    train_r: &[V],
    train_x: &[V],
    val_r: &[V],
    val_x: &[V],
    base: &Hyperparams,
) -> Result<Vec<GridPoint>> {
    if val_r.len() != val_x.len() {
        return Err(TgpError::CountMismatch {
            inputs: val_r.len(),
            outputs: val_x.len(),
        });
    }
    if val_r.is_empty() {
        return Err(TgpError::Empty("validation set"));
    }
    let mut points = Vec::new();
    for &mr in &GAMMA_MULTIPLIERS {
        for &mx in &GAMMA_MULTIPLIERS {
            for &lambda in &GRID_LAMBDAS {
                let h = Hyperparams {
                    gamma_r: base.gamma_r * mr,
                    gamma_x: base.gamma_x * mx,
                    lambda_r: lambda,
                    lambda_x: lambda,
                    ..base.clone()
                };
                let Ok(model) = TgpModel::fit(train_r, train_x, &h) else {
                    continue;
                };
                let Ok(preds) = model.predict_many(val_r) else {
                    continue;
                };
                let error = preds
                    .iter()
                    .zip(val_x)
                    .map(|(p, x)| sq_dist(&p.x, x.as_ref()).sqrt())
                    .sum::<f64>()
                    / val_r.len() as f64;
                points.push(GridPoint { hyperparams: h, error });
            }
        }
    }
    if points.is_empty() {
        return Err(TgpError::Empty("grid (no setting could be fitted)"));
    }
    points.sort_by(|a, b| a.error.total_cmp(&b.error));
    Ok(points)
}
