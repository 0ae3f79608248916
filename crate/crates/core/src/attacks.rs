//! Poisoning attacks: crafted data points that make a target model stationary,
//! and per-iteration injected gradients.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledExample, TaskKind};
use crate::error::{Error, Result};
use crate::models::{dataset_gradients, invert_gradient, ModelParams};
use crate::rng::SeededRng;
use crate::theory::{clipped_manipulable_gradients, geomed_manipulable_gradients};
use crate::vector::{clip_to, dot, exact_vector_sum, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    None,
    SinglePoison,
    GeomedStationary,
    ClippedMeanStationary,
    Antimodel,
    BatchAscent,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::SinglePoison => "single-poison",
            AttackKind::GeomedStationary => "geomed-stationary",
            AttackKind::ClippedMeanStationary => "clipmean-stationary",
            AttackKind::Antimodel => "antimodel",
            AttackKind::BatchAscent => "batch-ascent",
        }
    }

    /// Attacks that add vectors to every aggregation call instead of data.
    pub fn is_gradient_level(self) -> bool {
        matches!(self, AttackKind::Antimodel | AttackKind::BatchAscent)
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AttackKind::None,
            "single-poison" => AttackKind::SinglePoison,
            "geomed-stationary" => AttackKind::GeomedStationary,
            "clipmean-stationary" | "clipped-mean-stationary" => AttackKind::ClippedMeanStationary,
            "antimodel" => AttackKind::Antimodel,
            "batch-ascent" => AttackKind::BatchAscent,
            other => return Err(Error::InvalidParameter(format!("unknown attack {other:?}"))),
        })
    }
}

/// How zero-gradient poisons for the geometric median are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoisonStyle {
    /// `x = 0`
    ZeroFeature,
    /// `x ~ N(0, I)`, `y = α^T x` (linear only)
    Indistinguishable,
}

pub const DEFAULT_LAMBDA: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target_alpha: Option<ModelParams>,
    pub lambda: f64,
    pub budget: usize,
    pub style: PoisonStyle,
    /// Clipping radius for the clipped-mean attack.
    pub delta: f64,
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            target_alpha: None,
            lambda: DEFAULT_LAMBDA,
            budget: 0,
            style: PoisonStyle::ZeroFeature,
            delta: 1.0,
        }
    }

    pub fn antimodel(budget: usize, lambda: f64) -> Self {
        AttackSpec {
            kind: AttackKind::Antimodel,
            lambda,
            budget,
            ..Self::none()
        }
    }

    pub fn batch_ascent(budget: usize, lambda: f64) -> Self {
        AttackSpec {
            kind: AttackKind::BatchAscent,
            lambda,
            budget,
            ..Self::none()
        }
    }

    pub fn geomed_stationary(target: ModelParams, budget: usize, style: PoisonStyle) -> Self {
        AttackSpec {
            kind: AttackKind::GeomedStationary,
            target_alpha: Some(target),
            budget,
            style,
            ..Self::none()
        }
    }

    pub fn clipped_mean_stationary(target: ModelParams, budget: usize, delta: f64) -> Self {
        AttackSpec {
            kind: AttackKind::ClippedMeanStationary,
            target_alpha: Some(target),
            budget,
            delta,
            ..Self::none()
        }
    }

    pub fn single_poison(target: ModelParams) -> Self {
        AttackSpec {
            kind: AttackKind::SinglePoison,
            target_alpha: Some(target),
            budget: 1,
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != AttackKind::None && self.budget == 0 {
            return Err(Error::InvalidParameter(format!(
                "attack {} needs a budget of at least one poison",
                self.kind.name()
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        let needs_target = matches!(
            self.kind,
            AttackKind::SinglePoison | AttackKind::GeomedStationary | AttackKind::ClippedMeanStationary
        );
        if needs_target && self.target_alpha.is_none() {
            return Err(Error::InvalidParameter(format!(
                "attack {} needs a target model",
                self.kind.name()
            )));
        }
        if self.kind == AttackKind::ClippedMeanStationary && !(self.delta >= 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be nonnegative, got {}", self.delta)));
        }
        Ok(())
    }
}

fn target_gradients(kind: TaskKind, alpha: &[f64], honest: &Dataset) -> Result<Vec<Vector>> {
    if alpha.len() != honest.dim() {
        return Err(Error::DimensionMismatch {
            expected: honest.dim(),
            actual: alpha.len(),
        });
    }
    dataset_gradients(kind, alpha, honest)
}

/// One example whose gradient at `alpha_target` cancels the honest gradient sum,
/// so plain mean aggregation is stationary there.
pub fn craft_single_poison(kind: TaskKind, alpha_target: &[f64], honest: &Dataset) -> Result<LabeledExample> {
    let grads = target_gradients(kind, alpha_target, honest)?;
    let total = exact_vector_sum(&grads, honest.dim());
    invert_gradient(kind, alpha_target, &total.scaled(-1.0))
}

/// `P` examples with zero gradient at `alpha_target`, which make 0 a geometric
/// median of all gradients whenever `‖Σ_h u(g_h)‖ ≤ P`.
pub fn craft_geomed_stationary_poisons(
    kind: TaskKind,
    alpha_target: &[f64],
    honest: &Dataset,
    poisons: usize,
    style: PoisonStyle,
    rng: &mut SeededRng,
) -> Result<Vec<LabeledExample>> {
    if style == PoisonStyle::Indistinguishable && kind != TaskKind::Linear {
        return Err(Error::InvalidParameter(
            "indistinguishable poisons exist only for linear regression".into(),
        ));
    }
    let grads = target_gradients(kind, alpha_target, honest)?;
    let check = geomed_manipulable_gradients(&grads, poisons);
    if !check.manipulable {
        return Err(Error::NotManipulable {
            witness: check.witness,
            threshold: check.threshold,
        });
    }
    let dim = honest.dim();
    (0..poisons)
        .map(|_| match style {
            PoisonStyle::ZeroFeature => LabeledExample::poisoned(Vector::zeros(dim), 0.0),
            PoisonStyle::Indistinguishable => {
                let x = rng.normal_vec(dim);
                let y = dot(alpha_target, &x);
                LabeledExample::poisoned(Vector::new(x)?, y)
            }
        })
        .collect()
}

/// `P` identical examples whose gradient is `−(1/P) Σ_h u_Δ(g_h)`, which zeroes
/// the Δ-clipped mean at `alpha_target`.
pub fn craft_clipped_mean_poisons(
    kind: TaskKind,
    alpha_target: &[f64],
    honest: &Dataset,
    poisons: usize,
    delta: f64,
) -> Result<Vec<LabeledExample>> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be nonnegative, got {delta}")));
    }
    let grads = target_gradients(kind, alpha_target, honest)?;
    let check = clipped_manipulable_gradients(&grads, poisons, delta);
    if !check.manipulable {
        return Err(Error::NotManipulable {
            witness: check.witness,
            threshold: check.threshold,
        });
    }
    if poisons == 0 {
        return Ok(Vec::new());
    }
    let clipped: Vec<Vector> = grads.iter().map(|g| clip_to(g, delta)).collect();
    let needed = exact_vector_sum(&clipped, honest.dim()).scaled(-1.0 / poisons as f64);
    let poison = invert_gradient(kind, alpha_target, &needed)?;
    Ok(vec![poison; poisons])
}

/// `Λ (π_d(β) − α)`
pub fn antimodel_gradient(alpha: &[f64], beta: &[f64], d: usize, lambda: f64) -> Result<Vector> {
    if d == 0 || d > beta.len() {
        return Err(Error::InvalidDimension {
            requested: d,
            available: beta.len(),
        });
    }
    if alpha.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: alpha.len(),
        });
    }
    Vector::new(beta[..d].iter().zip(alpha).map(|(b, a)| lambda * (b - a)).collect())
}

/// `−Λ ḡ` for the honest batch-mean gradient `ḡ`.
pub fn batch_ascent_gradient(honest_mean: &[f64], lambda: f64) -> Vector {
    Vector::from_raw(honest_mean.iter().map(|g| -lambda * g).collect())
}

/// Poison vectors injected into a batch of size `batch` drawn from `honest`
/// examples under a total budget `poisons`: `round(P b / H)`.
pub fn poisons_per_batch(poisons: usize, batch: usize, honest: usize) -> usize {
    if honest == 0 {
        return 0;
    }
    ((poisons as f64 * batch as f64) / honest as f64).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::{agg_clipped_mean, agg_mean, geomed_residual};
    use crate::data::{sample_dataset, TaskSpec};
    use crate::models::gradient;

    fn data(rows: &[(&[f64], f64)]) -> Dataset {
        Dataset::new(
            rows.iter()
                .map(|(x, y)| LabeledExample::honest(Vector::new(x.to_vec()).unwrap(), *y).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_poison_with_nothing_to_cancel() {
        let honest = data(&[(&[1.0, 2.0], 3.0)]);
        let p = craft_single_poison(TaskKind::Linear, &[1.0, 1.0], &honest).unwrap();
        assert!(gradient(TaskKind::Linear, &[1.0, 1.0], &p).unwrap().is_zero());
        assert_eq!(p.features().as_slice(), &[0.0, 0.0]);
        assert_eq!(p.label(), -1.0);
    }

    #[test]
    fn single_poison_one_honest_point() {
        let honest = data(&[(&[1.0], 1.0)]);
        let p = craft_single_poison(TaskKind::Linear, &[0.0], &honest).unwrap();
        assert_eq!(gradient(TaskKind::Linear, &[0.0], &p).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn single_poison_logistic_orthogonal_target() {
        let honest = data(&[(&[1.0, 0.0], 1.0), (&[2.0, 0.0], 0.0)]);
        let alpha = [0.0, 0.7];
        let p = craft_single_poison(TaskKind::Logistic, &alpha, &honest).unwrap();
        let all = honest.extended([p]).unwrap();
        let grads = dataset_gradients(TaskKind::Logistic, &alpha, &all).unwrap();
        assert!(agg_mean(&grads).unwrap().norm() <= 1e-8);
    }

    #[test]
    fn geomed_single_gradient_case() {
        let honest = data(&[(&[1.0, -1.0], 4.0)]);
        let alpha = [0.5, 0.5];
        let poisons = craft_geomed_stationary_poisons(
            TaskKind::Linear,
            &alpha,
            &honest,
            1,
            PoisonStyle::ZeroFeature,
            &mut SeededRng::new(0),
        )
        .unwrap();
        let all = honest.extended(poisons).unwrap();
        let grads = dataset_gradients(TaskKind::Linear, &alpha, &all).unwrap();
        assert!(geomed_residual(&grads, &[0.0, 0.0], 1e-12) <= 1e-6);
    }

    #[test]
    fn indistinguishable_poisons_have_zero_gradient() {
        let mut rng = SeededRng::new(5);
        let task = TaskSpec::linear(Vector::new(rng.normal_vec(20)).unwrap());
        let honest = sample_dataset(&task, 10, &mut rng).unwrap();
        let alpha = rng.normal_vec(20);
        let poisons = craft_geomed_stationary_poisons(
            TaskKind::Linear,
            &alpha,
            &honest,
            10,
            PoisonStyle::Indistinguishable,
            &mut rng,
        )
        .unwrap();
        for p in &poisons {
            assert!(gradient(TaskKind::Linear, &alpha, p).unwrap().norm() <= 1e-9 * p.features().norm());
        }
    }

    #[test]
    fn geomed_refuses_small_budget() {
        let honest = data(&[(&[1.0, 0.0], 5.0), (&[1.0, 0.0], 5.0)]);
        let err = craft_geomed_stationary_poisons(
            TaskKind::Linear,
            &[0.0, 0.0],
            &honest,
            1,
            PoisonStyle::ZeroFeature,
            &mut SeededRng::new(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotManipulable { .. }));
    }

    #[test]
    fn clipped_cancellation_examples() {
        // both honest gradients already zero
        let honest = data(&[(&[1.0, 0.0], 1.0), (&[0.0, 2.0], 2.0)]);
        let alpha = [1.0, 1.0];
        let ps = craft_clipped_mean_poisons(TaskKind::Linear, &alpha, &honest, 2, 1.0).unwrap();
        assert!(ps.iter().all(|p| gradient(TaskKind::Linear, &alpha, p).unwrap().is_zero()));
        // opposite clipped gradients
        let honest = data(&[(&[1.0], 3.0), (&[1.0], -3.0)]);
        let ps = craft_clipped_mean_poisons(TaskKind::Linear, &[0.0], &honest, 1, 1.0).unwrap();
        assert!(gradient(TaskKind::Linear, &[0.0], &ps[0]).unwrap().is_zero());
    }

    #[test]
    fn clipped_end_to_end() {
        let mut rng = SeededRng::new(17);
        let task = TaskSpec::linear(Vector::new(rng.normal_vec(400)).unwrap());
        let honest = sample_dataset(&task, 50, &mut rng).unwrap();
        let alpha = rng.normal_vec(400);
        let ps = craft_clipped_mean_poisons(TaskKind::Linear, &alpha, &honest, 10, 1.0).unwrap();
        let all = honest.extended(ps).unwrap();
        let grads = dataset_gradients(TaskKind::Linear, &alpha, &all).unwrap();
        assert!(agg_clipped_mean(&grads, 1.0).unwrap().norm() <= 1e-9);
    }

    #[test]
    fn antimodel_examples() {
        let beta = [1.0, 1.0, 1.0];
        assert!(antimodel_gradient(&[1.0, 1.0], &beta, 2, 1e3).unwrap().is_zero());
        let g = antimodel_gradient(&[0.999, 1.0], &beta, 2, 1e3).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9 && g[1] == 0.0);
        assert_eq!(antimodel_gradient(&[0.0, 0.0], &beta, 2, 1.0).unwrap().as_slice(), &[1.0, 1.0]);
        assert!(antimodel_gradient(&[0.0], &beta, 2, 1.0).is_err());
    }

    #[test]
    fn batch_ascent_examples() {
        assert!(batch_ascent_gradient(&[0.0, 0.0], 1e3).is_zero());
        let g = [0.5, -2.0];
        let a = batch_ascent_gradient(&g, 1e3);
        assert_eq!(a.as_slice(), &[-500.0, 2000.0]);
        assert!(a.dot(&g) <= 0.0);
    }

    #[test]
    fn batch_budget() {
        assert_eq!(poisons_per_batch(60, 1000, 60_000), 1);
        assert_eq!(poisons_per_batch(0, 1000, 60_000), 0);
        assert_eq!(poisons_per_batch(600, 1000, 60_000), 10);
    }

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::none().validate().is_ok());
        assert!(AttackSpec::antimodel(0, 1e3).validate().is_err());
        assert!(AttackSpec::antimodel(5, 0.0).validate().is_err());
        let mut s = AttackSpec::geomed_stationary(ModelParams::zeros(2), 1, PoisonStyle::ZeroFeature);
        assert!(s.validate().is_ok());
        s.target_alpha = None;
        assert!(s.validate().is_err());
        for k in ["none", "antimodel", "geomed-stationary", "clipmean-stationary", "batch-ascent", "single-poison"] {
            assert_eq!(k.parse::<AttackKind>().unwrap().name(), k);
        }
    }
}
