//! Manipulability predicates, the regime conditions for arbitrary model
//! manipulation, and numeric checks of the supporting bounds.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_dataset, Dataset, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::models::dataset_gradients;
use crate::rng::SeededRng;
use crate::vector::{clip_to, dot, exact_vector_sum, norm, unit_or_zero, Vector};

/// `D ≥ 169 H² / P²`
pub const DIM_RATIO_CONST: f64 = 169.0;
/// `13 H / √D ≤ P`
pub const OPERATIONAL_CONST: f64 = 13.0;
/// `‖E u(g)‖ ≤ 12 / √D`
pub const EXPECTATION_CONST: f64 = 12.0;
/// `‖E v‖ ≤ 1150 √(d ln(1+d) / D)`
pub const SUBSPACE_CONST: f64 = 1150.0;
/// `H ≥ 6272 D ln D`
pub const SAMPLE_CONST: f64 = 6272.0;
/// `D ≥ 1024`
pub const MIN_DIM: usize = 1024;
/// `P ≥ 728 √(H ln D)`
pub const OVERPARAM_CONST: f64 = 728.0;
/// Exponent denominator in `1 − 2D e^{−κ²/1568}`.
pub const CONCENTRATION_DENOM: f64 = 1568.0;
/// `κ = 56 √(ln D)`
pub const KAPPA_CONST: f64 = 56.0;

/// Outcome of a manipulability predicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manipulability {
    pub manipulable: bool,
    /// Norm of the summed (clipped) unit gradients.
    pub witness: f64,
    pub threshold: f64,
}

/// `‖Σ_h u(g_h)‖` over the nonzero gradients, and the count of zero ones.
pub fn unit_sum_norm<V: AsRef<[f64]>>(grads: &[V]) -> (f64, usize) {
    let dim = grads.first().map_or(0, |g| g.as_ref().len());
    let zeros = grads.iter().filter(|g| norm(g.as_ref()) == 0.0).count();
    if dim == 0 {
        return (0.0, zeros);
    }
    let units: Vec<Vector> = grads.iter().map(|g| unit_or_zero(g.as_ref())).collect();
    (exact_vector_sum(&units, dim).norm(), zeros)
}

/// Geometric-median predicate on raw gradients. Each zero gradient can play
/// any unit-ball element, which relaxes the threshold by one.
pub fn geomed_manipulable_gradients<V: AsRef<[f64]>>(grads: &[V], poisons: usize) -> Manipulability {
    let (witness, zeros) = unit_sum_norm(grads);
    let threshold = (poisons + zeros) as f64;
    Manipulability {
        manipulable: witness <= threshold,
        witness,
        threshold,
    }
}

/// `‖Σ_h u_Δ(g_h)‖ ≤ PΔ` on raw gradients, with `u_Δ(g) = min{1, Δ/‖g‖} g`.
pub fn clipped_manipulable_gradients<V: AsRef<[f64]>>(
    grads: &[V],
    poisons: usize,
    delta: f64,
) -> Manipulability {
    let dim = grads.first().map_or(0, |g| g.as_ref().len());
    let witness = if dim == 0 {
        0.0
    } else {
        let clipped: Vec<Vector> = grads.iter().map(|g| clip_to(g.as_ref(), delta)).collect();
        exact_vector_sum(&clipped, dim).norm()
    };
    let threshold = poisons as f64 * delta;
    Manipulability {
        manipulable: witness <= threshold,
        witness,
        threshold,
    }
}

fn honest_gradients(kind: TaskKind, alpha: &[f64], honest: &Dataset) -> Result<Vec<Vector>> {
    if honest.honest_count() == 0 {
        return Err(Error::Empty("honest examples"));
    }
    dataset_gradients(kind, alpha, honest)
}

/// Whether `P` zero-gradient poisons make `alpha_target` a geometric-median
/// stationary point of `honest`.
pub fn is_geomed_manipulable(
    kind: TaskKind,
    alpha_target: &[f64],
    honest: &Dataset,
    poisons: usize,
) -> Result<Manipulability> {
    let grads = honest_gradients(kind, alpha_target, honest)?;
    Ok(geomed_manipulable_gradients(&grads, poisons))
}

/// Clipped-mean counterpart of [`is_geomed_manipulable`].
pub fn is_clipped_manipulable(
    kind: TaskKind,
    alpha_target: &[f64],
    honest: &Dataset,
    poisons: usize,
    delta: f64,
) -> Result<Manipulability> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be nonnegative, got {delta}")));
    }
    let grads = honest_gradients(kind, alpha_target, honest)?;
    Ok(clipped_manipulable_gradients(&grads, poisons, delta))
}

/// `56 √(ln D)`
pub fn kappa_for(dim: usize) -> f64 {
    KAPPA_CONST * (dim as f64).ln().max(0.0).sqrt()
}

/// `13 H / √D`, the number of poisons that suffices with high probability.
pub fn operational_threshold(honest: usize, dim: usize) -> f64 {
    OPERATIONAL_CONST * honest as f64 / (dim as f64).sqrt()
}

/// Smallest D satisfying `D ≥ 169 (H/P)²` for a given honest-to-poison ratio.
pub fn attack_dim_threshold(honest_per_poison: f64) -> f64 {
    DIM_RATIO_CONST * honest_per_poison * honest_per_poison
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub dim: usize,
    pub honest: usize,
    pub poisons: usize,
    pub kappa: f64,
    pub delta_clip: Option<f64>,
}

impl RegimeParams {
    pub fn new(dim: usize, honest: usize, poisons: usize) -> Result<Self> {
        if dim == 0 || honest == 0 || poisons == 0 {
            return Err(Error::InvalidParameter(format!(
                "D, H, P must be at least 1, got ({dim}, {honest}, {poisons})"
            )));
        }
        Ok(RegimeParams {
            dim,
            honest,
            poisons,
            kappa: kappa_for(dim),
            delta_clip: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeCheck {
    /// `D ≥ 1024`
    pub dim_large: bool,
    /// `H ≥ 6272 D ln D`
    pub honest_large: bool,
    /// `D ≥ 169 H² / P²`
    pub dim_vs_ratio: bool,
    /// `P ≥ 728 √(H ln D)`
    pub overparameterized: bool,
    /// `13 H / √D ≤ P`
    pub operational: bool,
}

impl RegimeCheck {
    /// All three conditions of the main theorem.
    pub fn theorem_holds(&self) -> bool {
        self.dim_large && self.honest_large && self.dim_vs_ratio
    }
}

pub fn theorem1_regime(params: &RegimeParams) -> RegimeCheck {
    let d = params.dim as f64;
    let h = params.honest as f64;
    let p = params.poisons as f64;
    let ln_d = d.ln();
    // D P² ≥ 169 H² in integers, so equality cases are decided exactly.
    let lhs = params.dim as u128 * (params.poisons as u128).pow(2);
    let rhs = 169u128 * (params.honest as u128).pow(2);
    RegimeCheck {
        dim_large: params.dim >= MIN_DIM,
        honest_large: h >= SAMPLE_CONST * d * ln_d,
        dim_vs_ratio: lhs >= rhs,
        overparameterized: p >= OVERPARAM_CONST * (h * ln_d).sqrt(),
        operational: operational_threshold(params.honest, params.dim) <= p,
    }
}

/// One row of a bound verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub bound_name: String,
    pub theoretical: f64,
    pub empirical: f64,
    pub trials: usize,
    pub stderr: f64,
    pub pass: bool,
}

impl BoundCheckReport {
    fn upper(name: impl Into<String>, theoretical: f64, empirical: f64, trials: usize, stderr: f64) -> Self {
        BoundCheckReport {
            bound_name: name.into(),
            theoretical,
            empirical,
            trials,
            stderr,
            pass: empirical <= theoretical,
        }
    }
}

fn sum_series(first: u32, term: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    let mut k = first;
    loop {
        let t = term(k as f64);
        total += t;
        if t < 1e-18 && k > first + 2 {
            return total;
        }
        k += 1;
    }
}

/// `Σ_{k≥1} (k+1) e^{−k²/8}`
pub fn series1() -> f64 {
    sum_series(1, |k| (k + 1.0) * (-k * k / 8.0).exp())
}

/// `Σ_{k≥1} (k+1)/k · e^{−k²/2}`
pub fn series2() -> f64 {
    sum_series(1, |k| (k + 1.0) / k * (-k * k / 2.0).exp())
}

/// `Σ_{k≥0} (1+k) e^{−4k²}`
pub fn series3() -> f64 {
    sum_series(0, |k| (1.0 + k) * (-4.0 * k * k).exp())
}

pub fn eval_series_bounds() -> Vec<BoundCheckReport> {
    vec![
        BoundCheckReport::upper("series1", 6.0, series1(), 0, 0.0),
        BoundCheckReport::upper("series2", 1.44, series2(), 0, 0.0),
        BoundCheckReport::upper("series3", 1.04, series3(), 0, 0.0),
    ]
}

const CHUNK: usize = 256;

/// Sums `trial` outputs over `trials` draws. Trials are split in fixed chunks,
/// each with its own derived stream, so the result ignores the thread count.
fn par_trials<F>(trials: usize, base: &SeededRng, width: usize, trial: F) -> Vec<Vec<f64>>
where
    F: Fn(&mut SeededRng, &mut [f64]) + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = base.derive(c as u64);
            let count = CHUNK.min(trials - c * CHUNK);
            (0..count)
                .map(|_| {
                    let mut out = vec![0.0; width];
                    trial(&mut rng, &mut out);
                    out
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn fresh_base(rng: &mut SeededRng) -> SeededRng {
    SeededRng::new(rng.next_u64())
}

/// Draws one honest example and writes `u(g)` (or `u_Δ(g)`) at `alpha` into `out`.
fn draw_unit_gradient(task: &TaskSpec, alpha: &[f64], clip: Option<f64>, x: &mut [f64], rng: &mut SeededRng, out: &mut [f64]) {
    rng.fill_standard_normal(x);
    let y = task.draw_label(x, rng);
    let r = crate::models::residual_from_score(task.kind(), dot(alpha, x), y);
    let g_norm = r.abs() * norm(x);
    let scale = match clip {
        None if g_norm > 0.0 => r / g_norm,
        None => 0.0,
        Some(delta) if g_norm > delta => r * delta / g_norm,
        Some(_) => r,
    };
    for (o, xi) in out.iter_mut().zip(x.iter()) {
        *o = scale * xi;
    }
}

fn mean_of_rows(rows: &[Vec<f64>], dim: usize) -> (Vector, f64) {
    let n = rows.len() as f64;
    let mean = exact_vector_sum(rows, dim).scaled(1.0 / n);
    // ‖noise‖ of the mean is about √(Σ_j Var_j / n)
    let total_var: f64 = rows
        .iter()
        .map(|r| r.iter().zip(mean.iter()).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    (mean, (total_var / n).sqrt())
}

/// Monte-Carlo estimate of `E[u(g)]` (or `E[u_Δ(g)]`) over honest draws, and
/// the standard error of its norm.
pub fn estimate_mean_unit_gradient(
    task: &TaskSpec,
    alpha: &[f64],
    clip: Option<f64>,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<(Vector, f64)> {
    let dim = task.dim();
    if alpha.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: alpha.len(),
        });
    }
    if trials < 2 {
        return Err(Error::InvalidParameter("at least two trials required".into()));
    }
    let base = fresh_base(rng);
    let rows = par_trials(trials, &base, dim, |r, out| {
        let mut x = vec![0.0; dim];
        draw_unit_gradient(task, alpha, clip, &mut x, r, out);
    });
    Ok(mean_of_rows(&rows, dim))
}

/// `‖mean u(g)‖` against `12/√D`, or `‖mean u_Δ(g)‖` against `12Δ/√D`.
pub fn estimate_expected_unit_gradient_norm(
    task: &TaskSpec,
    alpha: &[f64],
    clip: Option<f64>,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<BoundCheckReport> {
    if trials < 1000 {
        return Err(Error::InvalidParameter(format!(
            "at least 1000 trials required, got {trials}"
        )));
    }
    let (mean, stderr) = estimate_mean_unit_gradient(task, alpha, clip, trials, rng)?;
    let scale = clip.unwrap_or(1.0);
    let bound = EXPECTATION_CONST * scale / (task.dim() as f64).sqrt();
    let name = match clip {
        None => format!("expected_unit_gradient_{}", task.kind().name()),
        Some(_) => format!("expected_clipped_gradient_{}", task.kind().name()),
    };
    Ok(BoundCheckReport::upper(name, bound, mean.norm(), trials, stderr))
}

/// Result of [`concentration_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationOutcome {
    pub report: BoundCheckReport,
    /// `κ √(2H)`, times Δ for the clipped variant.
    pub threshold: f64,
    pub max_deviation: f64,
    pub exceedances: usize,
}

/// Frequency with which `‖Σ_h u(g_h) − H E[u(g)]‖` exceeds `κ√(2H)` (times Δ
/// when clipped), against the failure probability `2D e^{−κ²/1568}`.
///
/// `E[u(g)]` comes from a pilot sample of `pilot` draws; three pilot standard
/// errors (scaled by H) are added to the threshold.
#[allow(clippy::too_many_arguments)]
pub fn concentration_check(
    task: &TaskSpec,
    alpha: &[f64],
    honest: usize,
    kappa: f64,
    clip: Option<f64>,
    trials: usize,
    pilot: usize,
    rng: &mut SeededRng,
) -> Result<ConcentrationOutcome> {
    if trials < 20 {
        return Err(Error::InvalidParameter(format!("at least 20 trials required, got {trials}")));
    }
    if pilot < 100_000 {
        return Err(Error::InvalidParameter(format!(
            "pilot sample needs at least 100000 draws, got {pilot}"
        )));
    }
    if honest == 0 {
        return Err(Error::InvalidParameter("H must be at least 1".into()));
    }
    let dim = task.dim();
    let (mu, pilot_se) = estimate_mean_unit_gradient(task, alpha, clip, pilot, rng)?;
    let h = honest as f64;
    let scale = clip.unwrap_or(1.0);
    let threshold = kappa * (2.0 * h).sqrt() * scale;
    let slack = 3.0 * h * pilot_se;
    let base = fresh_base(rng);
    let deviations: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = base.derive(t as u64);
            let mut x = vec![0.0; dim];
            let mut u = vec![0.0; dim];
            let mut sum = vec![0.0; dim];
            for _ in 0..honest {
                draw_unit_gradient(task, alpha, clip, &mut x, &mut r, &mut u);
                for (s, v) in sum.iter_mut().zip(&u) {
                    *s += v;
                }
            }
            let centered: Vec<f64> = sum.iter().zip(mu.iter()).map(|(s, m)| s - h * m).collect();
            norm(&centered)
        })
        .collect();
    let exceedances = deviations.iter().filter(|&&d| d > threshold + slack).count();
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    let failure_bound = 2.0 * dim as f64 * (-kappa * kappa / CONCENTRATION_DENOM).exp();
    let frequency = exceedances as f64 / trials as f64;
    let stderr = (frequency * (1.0 - frequency) / trials as f64).sqrt();
    let name = match clip {
        None => "concentration",
        Some(_) => "concentration_clipped",
    };
    let report = BoundCheckReport {
        bound_name: name.into(),
        theoretical: failure_bound.min(1.0),
        empirical: frequency,
        trials,
        stderr,
        // the lemma claims nothing once its failure probability reaches 1
        pass: failure_bound >= 1.0 || frequency <= failure_bound,
    };
    Ok(ConcentrationOutcome {
        report,
        threshold,
        max_deviation,
        exceedances,
    })
}

/// `1150 √(d ln(1+d) / D)`
pub fn subspace_bound(dim: usize, d: usize) -> f64 {
    let d = d as f64;
    SUBSPACE_CONST * (d * d.ln_1p() / dim as f64).sqrt()
}

/// Unit vector in the span of `d` Gaussian vectors closest to `e_1`.
fn adversarial_subspace_vector(dim: usize, d: usize, rng: &mut SeededRng, out: &mut [f64]) {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut w = rng.normal_vec(dim);
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let n = norm(&w);
        w.iter_mut().for_each(|v| *v /= n);
        basis.push(w);
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for q in &basis {
        let c = q[0];
        for (o, qi) in out.iter_mut().zip(q) {
            *o += c * qi;
        }
    }
    let n = norm(out);
    out.iter_mut().for_each(|v| *v /= n);
}

/// `‖mean v‖` over random d-dimensional subspaces V of R^D, where v is the
/// normalized projection of a fixed unit vector onto V.
pub fn subspace_bound_check(dim: usize, d: usize, trials: usize, rng: &mut SeededRng) -> Result<BoundCheckReport> {
    if d == 0 || d > dim {
        return Err(Error::InvalidDimension {
            requested: d,
            available: dim,
        });
    }
    if trials < 2 {
        return Err(Error::InvalidParameter("at least two trials required".into()));
    }
    let base = fresh_base(rng);
    let rows = par_trials(trials, &base, dim, |r, out| {
        adversarial_subspace_vector(dim, d, r, out)
    });
    let (mean, stderr) = mean_of_rows(&rows, dim);
    Ok(BoundCheckReport::upper(
        format!("subspace_d{d}"),
        subspace_bound(dim, d),
        mean.norm(),
        trials,
        stderr,
    ))
}

/// `e^{−κ²/2} / (κ √(2π))`
pub fn normal_tail_bound(kappa: f64) -> f64 {
    (-kappa * kappa / 2.0).exp() / (kappa * std::f64::consts::TAU.sqrt())
}

/// Bound on `P(‖x‖² − D ≥ κ√D)` for `x ~ N(0, I_D)`.
pub fn chi2_tail_bound(kappa: f64, dim: usize) -> f64 {
    let root = (dim as f64).sqrt();
    if kappa <= root {
        (-kappa * kappa / 8.0).exp()
    } else {
        (-kappa * root / 8.0).exp()
    }
}

fn tail_report(name: String, bound: f64, hits: usize, trials: usize) -> BoundCheckReport {
    let freq = hits as f64 / trials as f64;
    let b = bound.min(1.0);
    let stderr = (b * (1.0 - b) / trials as f64).sqrt();
    BoundCheckReport {
        bound_name: name,
        theoretical: bound,
        empirical: freq,
        trials,
        stderr,
        pass: freq <= bound + 3.0 * stderr,
    }
}

/// Empirical exceedances of the normal tail at κ ∈ {1, 2, 3} and of the
/// chi-square tail at κ ∈ {1, 2} with D = 256.
pub fn tail_bound_spotchecks(trials: usize, rng: &mut SeededRng) -> Result<Vec<BoundCheckReport>> {
    if trials < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "at least 10000 trials required, got {trials}"
        )));
    }
    const CHI_DIM: usize = 256;
    let base = fresh_base(rng);
    let normals = par_trials(trials, &base.derive(0), 1, |r, out| out[0] = r.standard_normal());
    let chis = par_trials(trials, &base.derive(1), 1, |r, out| {
        let x = r.normal_vec(CHI_DIM);
        out[0] = dot(&x, &x) - CHI_DIM as f64;
    });
    let mut reports = Vec::new();
    for kappa in [1.0, 2.0, 3.0] {
        let hits = normals.iter().filter(|z| z[0] >= kappa).count();
        reports.push(tail_report(format!("normal_tail_k{kappa}"), normal_tail_bound(kappa), hits, trials));
    }
    let root = (CHI_DIM as f64).sqrt();
    for kappa in [1.0, 2.0] {
        let hits = chis.iter().filter(|c| c[0] >= kappa * root).count();
        reports.push(tail_report(format!("chi2_tail_k{kappa}"), chi2_tail_bound(kappa, CHI_DIM), hits, trials));
    }
    Ok(reports)
}

/// Entries i.i.d. `N(0, 1/D)`, so the norm is close to 1.
pub fn random_model(dim: usize, rng: &mut SeededRng) -> Vector {
    let scale = 1.0 / (dim as f64).sqrt();
    Vector::from_raw(rng.normal_vec(dim).into_iter().map(|v| v * scale).collect())
}

/// Fraction of `seeds` draws (random `β`, random `α_target`, `H` honest points
/// at dimension D) on which the predicate fails; passes when at most 10%.
///
/// `clip` selects the clipped-mean predicate with that Δ.
pub fn manipulability_failure_rate(
    kind: TaskKind,
    dim: usize,
    honest: usize,
    poisons: usize,
    clip: Option<f64>,
    seeds: usize,
    rng: &mut SeededRng,
) -> Result<BoundCheckReport> {
    if seeds == 0 {
        return Err(Error::InvalidParameter("at least one seed required".into()));
    }
    let base = fresh_base(rng);
    let outcomes = (0..seeds)
        .map(|s| {
            let mut r = base.derive(s as u64);
            let task = TaskSpec::new(kind, random_model(dim, &mut r), 0.0)?;
            let target = random_model(dim, &mut r);
            let data = sample_dataset(&task, honest, &mut r)?;
            match clip {
                None => is_geomed_manipulable(kind, &target, &data, poisons),
                Some(delta) => is_clipped_manipulable(kind, &target, &data, poisons, delta),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let failures = outcomes.iter().filter(|m| !m.manipulable).count();
    let rate = failures as f64 / seeds as f64;
    let name = match clip {
        None => format!("geomed_manipulability_failure_{}", kind.name()),
        Some(_) => format!("clipped_manipulability_failure_{}", kind.name()),
    };
    let stderr = (rate * (1.0 - rate) / seeds as f64).sqrt();
    Ok(BoundCheckReport::upper(name, 0.1, rate, seeds, stderr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledExample;

    fn one(x: &[f64], y: f64) -> Dataset {
        Dataset::new(vec![LabeledExample::honest(Vector::new(x.to_vec()).unwrap(), y).unwrap()]).unwrap()
    }

    #[test]
    fn single_gradient_is_manipulable_with_one_poison() {
        let m = is_geomed_manipulable(TaskKind::Linear, &[0.0, 0.0], &one(&[3.0, 4.0], 2.0), 1).unwrap();
        assert!(m.manipulable);
        assert!((m.witness - 1.0).abs() < 1e-15);
    }

    #[test]
    fn opposite_gradients_cancel() {
        let m = geomed_manipulable_gradients(&[vec![2.0, 0.0], vec![-5.0, 0.0]], 0);
        assert_eq!(m.witness, 0.0);
        assert!(m.manipulable);
    }

    #[test]
    fn zero_gradients_relax_threshold() {
        let m = geomed_manipulable_gradients(&[vec![0.0, 0.0], vec![1.0, 0.0]], 0);
        assert_eq!(m.threshold, 1.0);
        assert!(m.manipulable);
    }

    #[test]
    fn clipped_examples() {
        let data = one(&[3.0, 4.0], 10.0);
        let m = is_clipped_manipulable(TaskKind::Linear, &[0.0, 0.0], &data, 3, 0.0).unwrap();
        assert!(m.manipulable && m.witness == 0.0);
        let m = is_clipped_manipulable(TaskKind::Linear, &[0.0, 0.0], &data, 1, 2.0).unwrap();
        assert!(m.manipulable);
        assert!((m.witness - 2.0).abs() < 1e-12);
    }

    #[test]
    fn regime_equality_point() {
        let r = theorem1_regime(&RegimeParams::new(16900, 130, 13).unwrap());
        assert!(r.dim_vs_ratio && r.operational);
        assert!(!r.dim_large || !r.honest_large);
        let r = theorem1_regime(&RegimeParams::new(16899, 130, 13).unwrap());
        assert!(!r.dim_vs_ratio && !r.operational);
    }

    #[test]
    fn regime_full_theorem_point() {
        let d = 1024usize;
        let h = (SAMPLE_CONST * d as f64 * (d as f64).ln()).ceil() as usize;
        let p = (13.0 * h as f64 / 32.0).ceil() as usize;
        let r = theorem1_regime(&RegimeParams::new(d, h, p).unwrap());
        assert!(r.theorem_holds(), "{r:?}");
    }

    #[test]
    fn ratio_hundred_threshold() {
        let d = attack_dim_threshold(100.0);
        assert_eq!(d, 1.69e6);
        assert!(d <= 1.7e6);
    }

    #[test]
    fn kappa_choice_makes_failure_probability_two_over_d() {
        let d = 2048usize;
        let k = kappa_for(d);
        let p = 2.0 * d as f64 * (-k * k / CONCENTRATION_DENOM).exp();
        assert!((p - 2.0 / d as f64).abs() < 1e-12);
    }

    #[test]
    fn series_sums() {
        let reports = eval_series_bounds();
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");
        // direct partial sums with far more terms than needed
        let direct1: f64 = (1..200).map(|k| (k as f64 + 1.0) * (-(k * k) as f64 / 8.0).exp()).sum();
        assert!((series1() - direct1).abs() < 1e-12);
        let direct3: f64 = (0..50).map(|k| (k as f64 + 1.0) * (-4.0 * (k * k) as f64).exp()).sum();
        assert!((series3() - direct3).abs() < 1e-12);
        assert_eq!(series2().to_bits(), series2().to_bits());
    }

    #[test]
    fn normal_tail_values() {
        assert!((normal_tail_bound(2.0) - 0.0270).abs() < 1e-4);
        assert!((normal_tail_bound(1.0) - 0.2420).abs() < 1e-3);
    }

    #[test]
    fn interpolating_model_has_zero_unit_mean() {
        let beta = Vector::new(vec![0.3; 16]).unwrap();
        let task = TaskSpec::linear(beta.clone());
        let r = estimate_expected_unit_gradient_norm(&task, &beta, None, 1000, &mut SeededRng::new(1)).unwrap();
        assert_eq!(r.empirical, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn subspace_full_dimension_returns_the_fixed_vector() {
        let r = subspace_bound_check(12, 12, 10, &mut SeededRng::new(4)).unwrap();
        assert!((r.empirical - 1.0).abs() < 1e-9);
        assert!(r.pass);
    }

    #[test]
    fn tails_pass() {
        let reports = tail_bound_spotchecks(20_000, &mut SeededRng::new(8)).unwrap();
        assert_eq!(reports.len(), 5);
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");
    }

    #[test]
    fn monotone_in_poisons() {
        let mut rng = SeededRng::new(3);
        let task = TaskSpec::linear(Vector::new(rng.normal_vec(30)).unwrap());
        let data = sample_dataset(&task, 40, &mut rng).unwrap();
        let alpha = rng.normal_vec(30);
        let mut seen = false;
        for p in 0..60 {
            let m = is_geomed_manipulable(TaskKind::Linear, &alpha, &data, p).unwrap();
            assert!(!seen || m.manipulable);
            seen |= m.manipulable;
        }
        assert!(seen);
    }
}
