//! Losses, per-example gradients, gradient inversion and statistical error
//! for linear and logistic regression.
//!
//! Both models have gradients colinear with the features:
//! `∇ℓ(α | x, y) = r(α, x, y) · x` with residual `r = α^T x − y` (linear) or
//! `r = σ(α^T x) − y` (logistic).

use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledExample, Provenance, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::vector::{dot, Vector};

/// Trained or target parameters α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(Vector);

impl ModelParams {
    pub fn new(alpha: Vector) -> Self {
        ModelParams(alpha)
    }

    pub fn zeros(dim: usize) -> Self {
        ModelParams(Vector::zeros(dim))
    }

    pub fn vector(&self) -> &Vector {
        &self.0
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }
}

impl Deref for ModelParams {
    type Target = Vector;

    fn deref(&self) -> &Vector {
        &self.0
    }
}

impl From<Vector> for ModelParams {
    fn from(v: Vector) -> Self {
        ModelParams(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorMethod {
    ClosedForm,
    MonteCarlo,
}

/// Value of `Err(α | Y)` with its Monte-Carlo standard error (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: ErrorMethod,
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `ln σ(t)`
pub fn log_sigmoid(t: f64) -> f64 {
    -softplus(-t)
}

fn check_dim(alpha: &[f64], x: &[f64]) -> Result<()> {
    if alpha.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Loss from the inner product `a = α^T x` and the label.
pub fn loss_from_score(kind: TaskKind, score: f64, label: f64) -> f64 {
    match kind {
        TaskKind::Linear => 0.5 * (score - label).powi(2),
        // -y ln σ(a) - (1-y) ln(1-σ(a)) = softplus(a) - y a
        TaskKind::Logistic => softplus(score) - label * score,
    }
}

/// The scalar `r` with `∇ℓ = r · x`.
pub fn residual_from_score(kind: TaskKind, score: f64, label: f64) -> f64 {
    match kind {
        TaskKind::Linear => score - label,
        TaskKind::Logistic => sigmoid(score) - label,
    }
}

pub fn loss(kind: TaskKind, alpha: &[f64], ex: &LabeledExample) -> Result<f64> {
    check_dim(alpha, ex.features())?;
    Ok(loss_from_score(kind, dot(alpha, ex.features()), ex.label()))
}

pub fn gradient(kind: TaskKind, alpha: &[f64], ex: &LabeledExample) -> Result<Vector> {
    check_dim(alpha, ex.features())?;
    let r = residual_from_score(kind, dot(alpha, ex.features()), ex.label());
    Ok(ex.features().scaled(r))
}

/// Per-example gradients of every example in `data`, in dataset order.
pub fn dataset_gradients(kind: TaskKind, alpha: &[f64], data: &Dataset) -> Result<Vec<Vector>> {
    if alpha.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            actual: data.dim(),
        });
    }
    Ok(data
        .examples()
        .par_iter()
        .map(|ex| {
            let mut out = vec![0.0; alpha.len()];
            gradient_into(kind, alpha, ex.features(), ex.label(), &mut out);
            Vector::from_raw(out)
        })
        .collect())
}

/// Writes `∇ℓ(α | x, y)` into `out` (no dimension checks; hot path for training).
pub(crate) fn gradient_into(kind: TaskKind, alpha: &[f64], x: &[f64], y: f64, out: &mut [f64]) {
    let r = residual_from_score(kind, dot(alpha, x), y);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = r * xi;
    }
}

/// Builds an example whose gradient at `alpha` equals `g`.
///
/// Linear: `(x, y) = (g, α^T g − 1)`, exact.
///
/// Logistic: `(x, y) = (g / s, 0)` where `s ∈ (0, 1)` solves `σ(t/s) = s` with
/// `t = α^T g`. The equation is `h(s) = s·ln(s / (1 − s)) = t`; `h` is convex
/// on `(0, 1)` with minimum `h(s*) ≈ −0.2785`, so a root exists iff `t ≥ h(s*)`,
/// and the root on `[s*, 1)` is unique.
pub fn invert_gradient(kind: TaskKind, alpha: &[f64], g: &[f64]) -> Result<LabeledExample> {
    check_dim(alpha, g)?;
    if let Some(index) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let t = dot(alpha, g);
    match kind {
        TaskKind::Linear => {
            LabeledExample::new(Vector::new(g.to_vec())?, t - 1.0, Provenance::Poisoned)
        }
        TaskKind::Logistic => {
            let s = solve_logistic_scale(t)?;
            let x = g.iter().map(|v| v / s).collect();
            LabeledExample::new(Vector::new(x)?, 0.0, Provenance::Poisoned)
        }
    }
}

fn logit_scaled(s: f64) -> f64 {
    s * (s / (1.0 - s)).ln()
}

/// Minimizer of `s·ln(s/(1−s))` on (0, 1), where `ln(s/(1−s)) + 1/(1−s) = 0`.
pub(crate) fn logistic_scale_argmin() -> f64 {
    let deriv = |s: f64| (s / (1.0 - s)).ln() + 1.0 / (1.0 - s);
    let (mut lo, mut hi) = (1e-6, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest `t = α^T g` for which logistic inversion is feasible.
pub fn logistic_inversion_threshold() -> f64 {
    logit_scaled(logistic_scale_argmin())
}

fn solve_logistic_scale(t: f64) -> Result<f64> {
    let s_min = logistic_scale_argmin();
    if t < logit_scaled(s_min) {
        return Err(Error::InfeasibleInversion { target_dot: t });
    }
    // h is increasing on [s*, 1) and tends to +inf at 1.
    let (mut lo, mut hi) = (s_min, 1.0);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if logit_scaled(mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick whichever endpoint better satisfies σ(t/s) = s.
    let miss = |s: f64| (sigmoid(t / s) / s - 1.0).abs();
    Ok(if miss(lo) <= miss(hi) { lo } else { hi })
}

/// Closed-form `Err(α)` for dimension-reduced linear regression:
/// `‖α − π_d(β)‖² + Σ_{i>d} β_i² + σ²`.
pub fn statistical_error_linear(task: &TaskSpec, alpha: &[f64], d: usize) -> Result<ErrorEstimate> {
    if task.kind() != TaskKind::Linear {
        return Err(Error::InvalidParameter(
            "closed-form statistical error applies to linear regression".into(),
        ));
    }
    let beta = task.beta();
    if d == 0 || d > beta.dim() {
        return Err(Error::InvalidDimension {
            requested: d,
            available: beta.dim(),
        });
    }
    if alpha.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: alpha.len(),
        });
    }
    let fit: f64 = alpha
        .iter()
        .zip(&beta[..d])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let tail: f64 = beta[d..].iter().map(|b| b * b).sum();
    Ok(ErrorEstimate {
        value: fit + tail + task.noise_sigma().powi(2),
        std_error: 0.0,
        method: ErrorMethod::ClosedForm,
    })
}

/// Monte-Carlo cross-entropy of `alpha` (acting on `π_d(x)`) over fresh
/// `x ~ N(0, I_D)`, `y ~ Bernoulli(σ(β^T x))`.
pub fn statistical_error_logistic_mc(
    task: &TaskSpec,
    alpha: &[f64],
    d: usize,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<ErrorEstimate> {
    if task.kind() != TaskKind::Logistic {
        return Err(Error::InvalidParameter(
            "Monte-Carlo cross-entropy applies to logistic regression".into(),
        ));
    }
    if samples < 1000 {
        return Err(Error::InvalidParameter(format!(
            "at least 1000 samples required, got {samples}"
        )));
    }
    let dim = task.dim();
    if d == 0 || d > dim {
        return Err(Error::InvalidDimension {
            requested: d,
            available: dim,
        });
    }
    if alpha.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: alpha.len(),
        });
    }
    let mut x = vec![0.0; dim];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        rng.fill_standard_normal(&mut x);
        let y = task.draw_label(&x, rng);
        let l = loss_from_score(TaskKind::Logistic, dot(alpha, &x[..d]), y);
        sum += l;
        sum_sq += l * l;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(ErrorEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        method: ErrorMethod::MonteCarlo,
    })
}
