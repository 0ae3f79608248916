//! Robustified gradient descent: per-example gradients, aggregation, step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorConfig;
use crate::attacks::{
    antimodel_gradient, batch_ascent_gradient, craft_clipped_mean_poisons, craft_geomed_stationary_poisons,
    craft_single_poison, poisons_per_batch, AttackKind, AttackSpec,
};
use crate::data::{Dataset, LabeledExample, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::models::{gradient_into, residual_from_score};
use crate::rng::SeededRng;
use crate::vector::{dot, exact_vector_sum, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_check_window: usize,
    pub max_iters: usize,
    pub stationarity_tol: f64,
    /// Starting point; zero when absent.
    pub init_alpha: Option<Vector>,
    /// Mini-batch size; full batch when absent.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.05,
            lr_decay_factor: 0.9,
            lr_check_window: 10,
            max_iters: 2000,
            stationarity_tol: 1e-8,
            init_alpha: None,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "initial learning rate must be positive, got {}",
                self.initial_lr
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "decay factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_check_window == 0 {
            return Err(Error::InvalidParameter("check window must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.stationarity_tol > 0.0) {
            return Err(Error::InvalidParameter("stationarity tolerance must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// `decay^k · lr₀ / √t`
    pub fn lr_at(&self, t: usize, k: u32) -> f64 {
        self.lr_decay_factor.powi(k as i32) * self.initial_lr / (t as f64).sqrt()
    }
}

/// `0.9^k · 0.05 / √t`
pub fn lr_at(t: usize, k: u32) -> f64 {
    assert!(t >= 1, "iterations start at 1");
    TrainConfig::default().lr_at(t, k)
}

/// Learning-rate state: the decay count k grows by one whenever the
/// robust-gradient norm fails to drop over a check window.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    cfg: TrainConfig,
    decays: u32,
    reference: Option<f64>,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        LrSchedule {
            cfg: cfg.clone(),
            decays: 0,
            reference: None,
        }
    }

    pub fn lr(&self, t: usize) -> f64 {
        self.cfg.lr_at(t, self.decays)
    }

    pub fn decays(&self) -> u32 {
        self.decays
    }

    /// Records the robust-gradient norm seen at iteration `t`.
    pub fn observe(&mut self, t: usize, grad_norm: f64) {
        if self.reference.is_none() {
            self.reference = Some(grad_norm);
        }
        if t % self.cfg.lr_check_window == 0 {
            if let Some(previous) = self.reference {
                if grad_norm >= previous {
                    self.decays += 1;
                }
            }
            self.reference = Some(grad_norm);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Stationary,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
    pub alpha: Vector,
    pub termination: Termination,
}

impl TrainTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.grad_norm)
    }
}

/// Per-source datasets, aggregated one mean gradient per source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceGroupedDataset {
    groups: Vec<Dataset>,
    dim: usize,
}

impl SourceGroupedDataset {
    pub fn new(groups: Vec<Dataset>) -> Result<Self> {
        let dim = groups.first().ok_or(Error::Empty("source groups"))?.dim();
        if let Some(bad) = groups.iter().find(|g| g.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        Ok(SourceGroupedDataset { groups, dim })
    }

    pub fn groups(&self) -> &[Dataset] {
        &self.groups
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> Vec<usize> {
        self.groups.iter().map(Dataset::len).collect()
    }
}

fn check_alpha(alpha: &[f64], dim: usize) -> Result<()> {
    if alpha.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: alpha.len(),
        });
    }
    Ok(())
}

/// One mean gradient per source.
pub fn source_grouped_gradients(kind: TaskKind, alpha: &[f64], grouped: &SourceGroupedDataset) -> Result<Vec<Vector>> {
    check_alpha(alpha, grouped.dim())?;
    Ok(grouped
        .groups()
        .iter()
        .map(|g| {
            let grads = flat_gradients(kind, alpha, g.examples());
            let rows: Vec<&[f64]> = grads.chunks_exact(alpha.len()).collect();
            exact_vector_sum(&rows, alpha.len()).scaled(1.0 / g.len() as f64)
        })
        .collect())
}

/// Row-major per-example gradients.
fn flat_gradients(kind: TaskKind, alpha: &[f64], examples: &[LabeledExample]) -> Vec<f64> {
    let d = alpha.len();
    let mut out = vec![0.0; examples.len() * d];
    out.par_chunks_mut(d).zip(examples.par_iter()).for_each(|(row, ex)| {
        gradient_into(kind, alpha, ex.features(), ex.label(), row);
    });
    out
}

/// `Agg(∇ℓ_1, …, ∇ℓ_N, injected…)` and the step `α − lr·ĝ`.
pub fn robust_step(
    kind: TaskKind,
    alpha: &[f64],
    examples: &[LabeledExample],
    agg: &AggregatorConfig,
    injected: &[Vector],
    lr: f64,
) -> Result<(Vector, Vector)> {
    let d = alpha.len();
    if let Some(bad) = examples.iter().find(|e| e.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.dim(),
        });
    }
    let grads = flat_gradients(kind, alpha, examples);
    let mut rows: Vec<&[f64]> = grads.chunks_exact(d).collect();
    rows.extend(injected.iter().map(|v| v.as_slice()));
    let ghat = agg.aggregate(&rows)?;
    let next = Vector::new(alpha.iter().zip(ghat.iter()).map(|(a, g)| a - lr * g).collect())?;
    Ok((next, ghat))
}

fn run_loop(
    alpha: Vector,
    cfg: &TrainConfig,
    mut robust_gradient: impl FnMut(&[f64], usize) -> Result<Vector>,
) -> Result<TrainTrace> {
    let mut alpha = alpha.into_inner();
    let mut schedule = LrSchedule::new(cfg);
    let mut records = Vec::new();
    for t in 1..=cfg.max_iters {
        let lr = schedule.lr(t);
        let ghat = robust_gradient(&alpha, t).map_err(|e| Error::AtIteration {
            iteration: t,
            source: Box::new(e),
        })?;
        let grad_norm = ghat.norm();
        records.push(IterationRecord {
            iteration: t,
            lr,
            grad_norm,
        });
        if grad_norm <= cfg.stationarity_tol {
            return Ok(TrainTrace {
                records,
                alpha: Vector::from_raw(alpha),
                termination: Termination::Stationary,
            });
        }
        for (a, g) in alpha.iter_mut().zip(ghat.iter()) {
            *a -= lr * g;
        }
        if let Some(index) = alpha.iter().position(|v| !v.is_finite()) {
            return Err(Error::AtIteration {
                iteration: t,
                source: Box::new(Error::NonFinite { index }),
            });
        }
        schedule.observe(t, grad_norm);
    }
    Ok(TrainTrace {
        records,
        alpha: Vector::from_raw(alpha),
        termination: Termination::MaxIters,
    })
}

fn starting_point(cfg: &TrainConfig, dim: usize) -> Result<Vector> {
    match &cfg.init_alpha {
        Some(a) => {
            check_alpha(a, dim)?;
            Ok(a.clone())
        }
        None => Ok(Vector::zeros(dim)),
    }
}

/// Data-level poisons for the stationary attacks; empty for the others.
pub fn craft_attack_data(
    kind: TaskKind,
    honest: &Dataset,
    attack: &AttackSpec,
    rng: &mut SeededRng,
) -> Result<Vec<LabeledExample>> {
    attack.validate()?;
    let target = || {
        attack
            .target_alpha
            .as_ref()
            .map(|t| t.as_slice())
            .ok_or_else(|| Error::InvalidParameter("attack needs a target model".into()))
    };
    match attack.kind {
        AttackKind::SinglePoison => Ok(vec![craft_single_poison(kind, target()?, honest)?]),
        AttackKind::GeomedStationary => {
            craft_geomed_stationary_poisons(kind, target()?, honest, attack.budget, attack.style, rng)
        }
        AttackKind::ClippedMeanStationary => {
            craft_clipped_mean_poisons(kind, target()?, honest, attack.budget, attack.delta)
        }
        AttackKind::None | AttackKind::Antimodel | AttackKind::BatchAscent => Ok(Vec::new()),
    }
}

/// Mean gradient over `examples` (exact coordinate sums).
fn mean_gradient(kind: TaskKind, alpha: &[f64], examples: &[LabeledExample]) -> Vector {
    let grads = flat_gradients(kind, alpha, examples);
    let rows: Vec<&[f64]> = grads.chunks_exact(alpha.len()).collect();
    exact_vector_sum(&rows, alpha.len()).scaled(1.0 / examples.len() as f64)
}

/// Gradient descent with aggregator `agg` on `data` (features already reduced
/// to dimension `d = data.dim()`), under `attack`.
///
/// Data-level attacks are crafted once against the honest examples of `data`.
/// Gradient-level attacks add `budget` vectors to every full-batch aggregation,
/// or `round(P·b/H)` to each mini-batch.
pub fn train(
    task: &TaskSpec,
    data: &Dataset,
    agg: &AggregatorConfig,
    attack: &AttackSpec,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainTrace> {
    cfg.validate()?;
    agg.validate()?;
    attack.validate()?;
    let kind = task.kind();
    let d = data.dim();
    if d > task.dim() {
        return Err(Error::InvalidDimension {
            requested: d,
            available: task.dim(),
        });
    }
    data.check_labels(kind)?;
    let alpha0 = starting_point(cfg, d)?;
    let poisons = craft_attack_data(kind, data, attack, rng)?;
    let full = data.extended(poisons)?;
    let examples = full.examples();
    let honest: Vec<LabeledExample> = data.examples().to_vec();
    let beta = task.beta().as_slice();

    let injected_count = |batch: Option<usize>| match batch {
        None => attack.budget,
        Some(b) => poisons_per_batch(attack.budget, b, data.honest_count()),
    };
    let inject = |alpha: &[f64], batch_examples: &[LabeledExample], count: usize| -> Result<Vec<Vector>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let v = match attack.kind {
            AttackKind::Antimodel => antimodel_gradient(alpha, beta, d, attack.lambda)?,
            AttackKind::BatchAscent => {
                let honest_part: Vec<LabeledExample> = batch_examples
                    .iter()
                    .filter(|e| e.provenance() == crate::data::Provenance::Honest)
                    .cloned()
                    .collect();
                let source = if honest_part.is_empty() { &honest[..] } else { &honest_part[..] };
                batch_ascent_gradient(&mean_gradient(kind, alpha, source), attack.lambda)
            }
            _ => return Ok(Vec::new()),
        };
        Ok(vec![v; count])
    };

    match cfg.batch_size {
        None => {
            let count = injected_count(None);
            run_loop(alpha0, cfg, |alpha, _| {
                let injected = inject(alpha, examples, count)?;
                robust_step(kind, alpha, examples, agg, &injected, 0.0).map(|(_, g)| g)
            })
        }
        Some(b) => {
            let b = b.min(examples.len());
            let count = injected_count(Some(b));
            let mut order: Vec<usize> = (0..examples.len()).collect();
            let mut cursor = order.len();
            let mut batch: Vec<LabeledExample> = Vec::with_capacity(b);
            run_loop(alpha0, cfg, |alpha, _| {
                if cursor + b > order.len() {
                    shuffle(&mut order, rng);
                    cursor = 0;
                }
                batch.clear();
                batch.extend(order[cursor..cursor + b].iter().map(|&i| examples[i].clone()));
                cursor += b;
                let injected = inject(alpha, &batch, count)?;
                robust_step(kind, alpha, &batch, agg, &injected, 0.0).map(|(_, g)| g)
            })
        }
    }
}

/// Fisher–Yates shuffle driven by `rng`.
pub fn shuffle<T>(items: &mut [T], rng: &mut SeededRng) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i + 1);
        items.swap(i, j);
    }
}

/// Gradient descent aggregating one mean gradient per source.
pub fn train_grouped(
    kind: TaskKind,
    grouped: &SourceGroupedDataset,
    agg: &AggregatorConfig,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    agg.validate()?;
    let alpha0 = starting_point(cfg, grouped.dim())?;
    run_loop(alpha0, cfg, |alpha, _| {
        let per_source = source_grouped_gradients(kind, alpha, grouped)?;
        agg.aggregate(&per_source)
    })
}

/// Empirical risk `(1/N) Σ ℓ(α | x_n, y_n)`.
pub fn empirical_loss(kind: TaskKind, alpha: &[f64], data: &Dataset) -> Result<f64> {
    check_alpha(alpha, data.dim())?;
    let losses: Vec<f64> = data
        .examples()
        .iter()
        .map(|e| crate::models::loss_from_score(kind, dot(alpha, e.features()), e.label()))
        .collect();
    Ok(crate::vector::exact_sum(losses) / data.len() as f64)
}

/// `(1/N) Σ r_n x_n` computed directly, for tests against [`robust_step`].
pub fn plain_gradient(kind: TaskKind, alpha: &[f64], data: &Dataset) -> Result<Vector> {
    check_alpha(alpha, data.dim())?;
    let mut g = vec![0.0; alpha.len()];
    for e in data.examples() {
        let r = residual_from_score(kind, dot(alpha, e.features()), e.label());
        for (gi, xi) in g.iter_mut().zip(e.features().iter()) {
            *gi += r * xi;
        }
    }
    let n = data.len() as f64;
    Ok(Vector::from_raw(g.into_iter().map(|v| v / n).collect()))
}
