//! Gradient aggregation rules: mean, Δ-clipped mean, geometric median
//! (Weiszfeld), coordinate-wise median and coordinate-wise trimmed mean.
//!
//! Every rule is invariant to the order of its inputs. Mean, clipped mean,
//! median and trimmed mean are bit-exact under permutation: coordinate sums are
//! correctly rounded (see [`exact_sum`]) and order statistics are selected, not
//! accumulated.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{clip_to, dot, exact_sum_slice, norm, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregatorKind {
    Mean,
    ClippedMean,
    GeoMed,
    CwMed,
    CwTm,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::ClippedMean => "clipmean",
            AggregatorKind::GeoMed => "geomed",
            AggregatorKind::CwMed => "cwmed",
            AggregatorKind::CwTm => "cwtm",
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean" => AggregatorKind::Mean,
            "clipmean" | "clipped-mean" => AggregatorKind::ClippedMean,
            "geomed" => AggregatorKind::GeoMed,
            "cwmed" => AggregatorKind::CwMed,
            "cwtm" => AggregatorKind::CwTm,
            other => return Err(Error::InvalidParameter(format!("unknown aggregator {other:?}"))),
        })
    }
}

/// Which aggregation rule to apply, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    /// Clipping radius Δ (clipped mean only).
    pub delta: f64,
    /// Values dropped from EACH tail per coordinate (trimmed mean only).
    pub trim_count: usize,
    /// Relative step size below which Weiszfeld stops.
    pub weiszfeld_tol: f64,
    pub weiszfeld_max_iters: usize,
    /// Distance under which an iterate is treated as sitting on an input point.
    pub weiszfeld_singularity_eps: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            kind: AggregatorKind::Mean,
            delta: 1.0,
            trim_count: 0,
            weiszfeld_tol: 1e-10,
            weiszfeld_max_iters: 10_000,
            weiszfeld_singularity_eps: 1e-12,
        }
    }
}

impl AggregatorConfig {
    pub fn mean() -> Self {
        Self::default()
    }

    pub fn clipped_mean(delta: f64) -> Self {
        AggregatorConfig {
            kind: AggregatorKind::ClippedMean,
            delta,
            ..Self::default()
        }
    }

    pub fn geomed() -> Self {
        AggregatorConfig {
            kind: AggregatorKind::GeoMed,
            ..Self::default()
        }
    }

    pub fn cwmed() -> Self {
        AggregatorConfig {
            kind: AggregatorKind::CwMed,
            ..Self::default()
        }
    }

    pub fn cwtm(trim_count: usize) -> Self {
        AggregatorConfig {
            kind: AggregatorKind::CwTm,
            trim_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AggregatorKind::ClippedMean && !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "clipped mean needs delta > 0, got {}",
                self.delta
            )));
        }
        if self.kind == AggregatorKind::GeoMed
            && !(self.weiszfeld_tol > 0.0 && self.weiszfeld_singularity_eps > 0.0)
        {
            return Err(Error::InvalidParameter("Weiszfeld tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn aggregate<V: AsRef<[f64]>>(&self, vs: &[V]) -> Result<Vector> {
        match self.kind {
            AggregatorKind::Mean => agg_mean(vs),
            AggregatorKind::ClippedMean => agg_clipped_mean(vs, self.delta),
            AggregatorKind::GeoMed => agg_geomed(vs, self),
            AggregatorKind::CwMed => agg_cwmed(vs),
            AggregatorKind::CwTm => agg_cwtm(vs, self.trim_count),
        }
    }
}

fn check_inputs<V: AsRef<[f64]>>(vs: &[V]) -> Result<usize> {
    let dim = vs.first().ok_or(Error::Empty("aggregator input"))?.as_ref().len();
    if dim == 0 {
        return Err(Error::Empty("input vector"));
    }
    if let Some(bad) = vs.iter().find(|v| v.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.as_ref().len(),
        });
    }
    Ok(dim)
}

/// Applies `f` to each coordinate's column of values.
fn per_coordinate<V: AsRef<[f64]>>(
    vs: &[V],
    dim: usize,
    mut f: impl FnMut(&mut [f64]) -> f64,
) -> Vector {
    let mut column = vec![0.0; vs.len()];
    let out = (0..dim)
        .map(|j| {
            for (c, v) in column.iter_mut().zip(vs) {
                *c = v.as_ref()[j];
            }
            f(&mut column)
        })
        .collect();
    Vector::from_raw(out)
}

pub fn agg_mean<V: AsRef<[f64]>>(vs: &[V]) -> Result<Vector> {
    let dim = check_inputs(vs)?;
    let n = vs.len() as f64;
    Ok(per_coordinate(vs, dim, |col| exact_sum_slice(col) / n))
}

pub fn agg_clipped_mean<V: AsRef<[f64]>>(vs: &[V], delta: f64) -> Result<Vector> {
    check_inputs(vs)?;
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be nonnegative, got {delta}")));
    }
    let clipped: Vec<Vector> = vs.iter().map(|v| clip_to(v.as_ref(), delta)).collect();
    agg_mean(&clipped)
}

fn cmp(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

fn median_in_place(col: &mut [f64]) -> f64 {
    let n = col.len();
    let (lower, upper_mid, _) = col.select_nth_unstable_by(n / 2, cmp);
    let upper_mid = *upper_mid;
    if n % 2 == 1 {
        upper_mid
    } else {
        let lower_mid = lower.iter().copied().max_by(cmp).expect("n >= 2");
        0.5 * (lower_mid + upper_mid)
    }
}

pub fn agg_cwmed<V: AsRef<[f64]>>(vs: &[V]) -> Result<Vector> {
    let dim = check_inputs(vs)?;
    Ok(per_coordinate(vs, dim, median_in_place))
}

/// Per coordinate, drops the `trim_count` smallest and `trim_count` largest
/// values and averages the rest.
pub fn agg_cwtm<V: AsRef<[f64]>>(vs: &[V], trim_count: usize) -> Result<Vector> {
    let dim = check_inputs(vs)?;
    let n = vs.len();
    if n <= 2 * trim_count {
        return Err(Error::TrimBudget {
            needed: 2 * trim_count,
            available: n,
        });
    }
    let kept = n - 2 * trim_count;
    let mut keys = vec![0i64; n];
    let mut values = vec![0.0; kept];
    let out = (0..dim)
        .map(|j| {
            for (k, v) in keys.iter_mut().zip(vs) {
                *k = order_key(v.as_ref()[j]);
            }
            let rest = if trim_count > 0 {
                keys.select_nth_unstable(trim_count);
                &mut keys[trim_count..]
            } else {
                &mut keys[..]
            };
            if kept < rest.len() {
                rest.select_nth_unstable(kept);
            }
            for (v, &k) in values.iter_mut().zip(&rest[..kept]) {
                *v = f64::from_bits(order_key_inverse(k));
            }
            exact_sum_slice(&values) / kept as f64
        })
        .collect();
    Ok(Vector::from_raw(out))
}

/// Integer whose order matches `f64::total_cmp`.
fn order_key(x: f64) -> i64 {
    let b = x.to_bits() as i64;
    b ^ (((b >> 63) as u64) >> 1) as i64
}

fn order_key_inverse(k: i64) -> u64 {
    (k ^ (((k >> 63) as u64) >> 1) as i64) as u64
}

/// Geometric median together with the certificate of its first-order condition.
#[derive(Debug, Clone, PartialEq)]
pub struct GeomedSolution {
    pub point: Vector,
    /// `max(0, ‖Σ_{z_n ≠ G} u(G − z_n)‖ − m)` where `m` counts inputs sitting at `G`.
    pub residual: f64,
    pub iterations: usize,
}

pub fn agg_geomed<V: AsRef<[f64]>>(vs: &[V], cfg: &AggregatorConfig) -> Result<Vector> {
    geomed_solve(vs, cfg).map(|s| s.point)
}

/// First-order residual of the sum-of-distances objective at `point`,
/// using the best ball elements for inputs that coincide with `point`.
pub fn geomed_residual<V: AsRef<[f64]>>(vs: &[V], point: &[f64], eps: f64) -> f64 {
    let radius = eps * norm(point).max(1.0);
    let mut pull = vec![0.0; point.len()];
    let mut coincident = 0usize;
    for v in vs {
        let v = v.as_ref();
        let dist = distance(point, v);
        if dist <= radius {
            coincident += 1;
            continue;
        }
        for ((p, a), b) in pull.iter_mut().zip(point).zip(v) {
            *p += (a - b) / dist;
        }
    }
    (norm(&pull) - coincident as f64).max(0.0)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Weiszfeld iteration started at the coordinate-wise median, with Newton steps.
///
/// Plain Weiszfeld is undefined on input points, and converges slowly when the
/// median is an input point (crafted coincident poisons make this the common
/// case) or lies close to one. Each iteration therefore tests the subgradient
/// condition at the input nearest to the iterate and stops there if it holds.
/// Away from the inputs a Newton step (conjugate gradients on the Hessian of
/// the sum of distances, with a backtracking line search) is tried first. When
/// the iterate sits on an input that is not optimal, or the Hessian is
/// degenerate (collinear inputs), the Vardi–Zhang modified Weiszfeld step is
/// taken instead.
pub fn geomed_solve<V: AsRef<[f64]>>(vs: &[V], cfg: &AggregatorConfig) -> Result<GeomedSolution> {
    check_inputs(vs)?;
    let eps = cfg.weiszfeld_singularity_eps;
    let mut y = agg_cwmed(vs)?.into_inner();
    let mut dists = vec![0.0; vs.len()];

    for iteration in 1..=cfg.weiszfeld_max_iters {
        for (d, v) in dists.iter_mut().zip(vs) {
            *d = distance(&y, v.as_ref());
        }
        // ties go to the lexicographically smallest input, independent of input order
        let nearest = (0..vs.len())
            .min_by(|&a, &b| {
                dists[a]
                    .total_cmp(&dists[b])
                    .then_with(|| lexicographic(vs[a].as_ref(), vs[b].as_ref()))
            })
            .expect("nonempty");
        let anchor = vs[nearest].as_ref();
        let anchor_residual = geomed_residual(vs, anchor, eps);
        if anchor_residual == 0.0 {
            return Ok(GeomedSolution {
                point: Vector::from_raw(anchor.to_vec()),
                residual: 0.0,
                iterations: iteration,
            });
        }

        // escape from a nearby input that is not optimal
        let anchor_radius = eps * norm(anchor).max(1.0);
        if let WeiszfeldStep::Next(escape) = weiszfeld_step(vs, anchor, anchor_radius) {
            if sum_of_distances(vs, &escape) < sum_of_distances(vs, &y) {
                y = escape;
                continue;
            }
        }

        let radius = eps * norm(&y).max(1.0);
        let coincident = dists.iter().filter(|&&d| d <= radius).count();
        if coincident == 0 {
            if let Some(newton) = newton_direction(vs, &y, &dists) {
                let scale = norm(&y).max(1.0);
                if norm(&newton.step) <= cfg.weiszfeld_tol * scale {
                    let next: Vec<f64> = y.iter().zip(&newton.step).map(|(a, b)| a + b).collect();
                    let residual = geomed_residual(vs, &next, eps);
                    return Ok(GeomedSolution {
                        point: Vector::from_raw(next),
                        residual,
                        iterations: iteration,
                    });
                }
                if let Some(next) = line_search(vs, &y, &newton) {
                    y = next;
                    continue;
                }
            }
        }

        let next = match weiszfeld_step(vs, &y, radius) {
            WeiszfeldStep::Stay => {
                return Ok(GeomedSolution {
                    point: Vector::from_raw(y),
                    residual: 0.0,
                    iterations: iteration,
                })
            }
            WeiszfeldStep::Next(next) => next,
        };
        let step = distance(&next, &y);
        y = next;
        if step <= cfg.weiszfeld_tol * norm(&y).max(1.0) {
            let residual = geomed_residual(vs, &y, eps);
            return Ok(GeomedSolution {
                point: Vector::from_raw(y),
                residual,
                iterations: iteration,
            });
        }
    }
    let residual = geomed_residual(vs, &y, eps);
    Err(Error::NoConvergence {
        iterations: cfg.weiszfeld_max_iters,
        residual,
        last_iterate: y,
    })
}

enum WeiszfeldStep {
    /// `y` satisfies the first-order condition (or every input sits on it).
    Stay,
    Next(Vec<f64>),
}

/// One Vardi–Zhang modified Weiszfeld step from `y`. Inputs within `radius`
/// of `y` count as sitting on it.
fn weiszfeld_step<V: AsRef<[f64]>>(vs: &[V], y: &[f64], radius: f64) -> WeiszfeldStep {
    let mut weighted = vec![0.0; y.len()];
    let mut inv_sum = 0.0;
    let mut coincident = 0usize;
    for v in vs {
        let v = v.as_ref();
        let d = distance(y, v);
        if d <= radius {
            coincident += 1;
            continue;
        }
        let w = 1.0 / d;
        inv_sum += w;
        for (acc, x) in weighted.iter_mut().zip(v) {
            *acc += w * x;
        }
    }
    if inv_sum == 0.0 {
        return WeiszfeldStep::Stay;
    }
    let target: Vec<f64> = weighted.iter().map(|w| w / inv_sum).collect();
    if coincident == 0 {
        return WeiszfeldStep::Next(target);
    }
    // R = Σ (z_n − y)/d_n = inv_sum · (T − y)
    let pull = inv_sum * distance(&target, y);
    if pull <= coincident as f64 {
        return WeiszfeldStep::Stay;
    }
    let keep = coincident as f64 / pull;
    WeiszfeldStep::Next(
        target
            .iter()
            .zip(y)
            .map(|(t, yi)| (1.0 - keep) * t + keep * yi)
            .collect(),
    )
}

struct NewtonDirection {
    step: Vec<f64>,
    gradient_norm: f64,
    /// `∇f · step`
    slope: f64,
}

/// Solves `H s = −∇f` for `f(y) = Σ ‖y − z_n‖` by conjugate gradients, where
/// `H = Σ (I − u_n u_n^T) / d_n`. Requires `y` off every input.
fn newton_direction<V: AsRef<[f64]>>(vs: &[V], y: &[f64], dists: &[f64]) -> Option<NewtonDirection> {
    let dim = y.len();
    let units: Vec<Vec<f64>> = vs
        .iter()
        .zip(dists)
        .map(|(v, &d)| y.iter().zip(v.as_ref()).map(|(a, b)| (a - b) / d).collect())
        .collect();
    let weights: Vec<f64> = dists.iter().map(|d| 1.0 / d).collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut grad = vec![0.0; dim];
    for u in &units {
        for (g, ui) in grad.iter_mut().zip(u) {
            *g += ui;
        }
    }
    let gradient_norm = norm(&grad);
    if gradient_norm == 0.0 {
        return Some(NewtonDirection {
            step: vec![0.0; dim],
            gradient_norm,
            slope: 0.0,
        });
    }
    let hess = |v: &[f64], out: &mut [f64]| {
        for (o, vi) in out.iter_mut().zip(v) {
            *o = weight_sum * vi;
        }
        for (u, w) in units.iter().zip(&weights) {
            let c = w * dot(u, v);
            for (o, ui) in out.iter_mut().zip(u) {
                *o -= c * ui;
            }
        }
    };
    let mut step = vec![0.0; dim];
    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut p = r.clone();
    let mut hp = vec![0.0; dim];
    let mut rr = dot(&r, &r);
    let max_iters = dim.min(vs.len() + 1) + 5;
    for k in 0..max_iters {
        hess(&p, &mut hp);
        let curvature = dot(&p, &hp);
        if curvature <= 1e-12 * weight_sum * dot(&p, &p) {
            if k == 0 {
                return None;
            }
            break;
        }
        let a = rr / curvature;
        for ((s, pi), (ri, hpi)) in step.iter_mut().zip(&p).zip(r.iter_mut().zip(&hp)) {
            *s += a * pi;
            *ri -= a * hpi;
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= 1e-14 * gradient_norm {
            break;
        }
        let b = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + b * *pi;
        }
        rr = rr_next;
    }
    let slope = dot(&grad, &step);
    if !(slope < 0.0) {
        return None;
    }
    Some(NewtonDirection {
        step,
        gradient_norm,
        slope,
    })
}

/// Backtracking along a Newton direction. A trial point is accepted on
/// sufficient decrease of the objective, or, once objective differences drown
/// in rounding, on a smaller gradient norm.
fn line_search<V: AsRef<[f64]>>(vs: &[V], y: &[f64], dir: &NewtonDirection) -> Option<Vec<f64>> {
    let f0 = sum_of_distances(vs, y);
    let mut t = 1.0;
    for _ in 0..60 {
        let trial: Vec<f64> = y.iter().zip(&dir.step).map(|(a, b)| a + t * b).collect();
        if sum_of_distances(vs, &trial) <= f0 + 1e-4 * t * dir.slope {
            return Some(trial);
        }
        if t == 1.0 && gradient_norm_at(vs, &trial) < 0.5 * dir.gradient_norm {
            return Some(trial);
        }
        t *= 0.5;
    }
    None
}

fn gradient_norm_at<V: AsRef<[f64]>>(vs: &[V], y: &[f64]) -> f64 {
    let mut grad = vec![0.0; y.len()];
    for v in vs {
        let d = distance(y, v.as_ref());
        if d == 0.0 {
            return f64::INFINITY;
        }
        for ((g, a), b) in grad.iter_mut().zip(y).zip(v.as_ref()) {
            *g += (a - b) / d;
        }
    }
    norm(&grad)
}

/// Sum of Euclidean distances from `point` to the inputs.
pub fn sum_of_distances<V: AsRef<[f64]>>(vs: &[V], point: &[f64]) -> f64 {
    vs.iter().map(|v| distance(point, v.as_ref())).sum()
}
