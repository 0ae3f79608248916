//! Dimension-reduction sweeps on synthetic data, and the random-feature
//! softmax classifier trained on image data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregators::{AggregatorConfig, AggregatorKind};
use crate::attacks::{batch_ascent_gradient, poisons_per_batch, AttackKind, AttackSpec, PoisonStyle, DEFAULT_LAMBDA};
use crate::data::{sample_dataset, TaskKind, TaskSpec};
use crate::dataio::ImageSet;
use crate::error::{Error, Result};
use crate::models::{ModelParams, sigmoid, statistical_error_linear, statistical_error_logistic_mc};
use crate::rng::SeededRng;
use crate::theory::{is_clipped_manipulable, is_geomed_manipulable, random_model};
use crate::training::{shuffle, train, LrSchedule, Termination, TrainConfig};
use crate::vector::{dot, exact_sum, exact_vector_sum, Vector};

/// `β_i = i^{−ω}` for `i = 1..D`.
pub fn make_true_model(dim: usize, omega: f64) -> Result<Vector> {
    if dim == 0 {
        return Err(Error::InvalidParameter("D must be at least 1".into()));
    }
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(Error::InvalidParameter(format!("omega must be nonnegative, got {omega}")));
    }
    Vector::new((1..=dim).map(|i| (i as f64).powf(-omega)).collect())
}

/// One row of a synthetic sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub task: TaskKind,
    pub aggregator: String,
    #[serde(rename = "D")]
    pub dim: usize,
    pub d: usize,
    #[serde(rename = "H")]
    pub honest: usize,
    #[serde(rename = "P")]
    pub poisons: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub metric: f64,
    pub metric_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPlan {
    pub task: TaskKind,
    /// Generation dimension D.
    pub dim: usize,
    pub omega: f64,
    pub honest: usize,
    pub noise_sigma: f64,
    pub dims: Vec<usize>,
    pub poisons: Vec<usize>,
    pub aggregator: AggregatorConfig,
    /// Trimmed-mean trim count; `None` trims P per tail in each cell.
    pub trim: Option<usize>,
    pub attack: AttackKind,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Fresh samples for the logistic cross-entropy estimate.
    pub mc_samples: usize,
}

impl SyntheticPlan {
    /// Desk-scale defaults: D = 500 (linear) or 200 (logistic), H = 500, ω = 0.5,
    /// trimmed mean, antimodel attack with Λ = 10³, ten seeds from `base_seed`.
    pub fn desk(task: TaskKind, base_seed: u64) -> Self {
        let dim = match task {
            TaskKind::Linear => 500,
            TaskKind::Logistic => 200,
        };
        SyntheticPlan {
            task,
            dim,
            omega: 0.5,
            honest: 500,
            noise_sigma: 0.0,
            dims: vec![10, 50, 100, 250, dim],
            poisons: vec![0, 5, 25],
            aggregator: AggregatorConfig::cwtm(0),
            trim: None,
            attack: AttackKind::Antimodel,
            lambda: DEFAULT_LAMBDA,
            seeds: (0..10).map(|i| base_seed + i).collect(),
            train: TrainConfig::default(),
            mc_samples: 20_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.honest == 0 {
            return Err(Error::InvalidParameter("D and H must be at least 1".into()));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d == 0 || d > self.dim) {
            return Err(Error::InvalidDimension {
                requested: d,
                available: self.dim,
            });
        }
        if self.dims.is_empty() || self.poisons.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidParameter("dims, poisons and seeds must be nonempty".into()));
        }
        if !matches!(self.attack, AttackKind::None | AttackKind::Antimodel | AttackKind::BatchAscent) {
            return Err(Error::InvalidParameter(format!(
                "sweeps run gradient-level attacks only, got {}",
                self.attack.name()
            )));
        }
        if self.task == TaskKind::Logistic && self.mc_samples < 1000 {
            return Err(Error::InvalidParameter("logistic sweeps need at least 1000 Monte-Carlo samples".into()));
        }
        self.aggregator.validate()?;
        self.train.validate()
    }

    fn cell_aggregator(&self, poisons: usize) -> AggregatorConfig {
        let mut agg = self.aggregator.clone();
        if agg.kind == AggregatorKind::CwTm {
            agg.trim_count = self.trim.unwrap_or(poisons);
        }
        agg
    }

    fn cell_attack(&self, poisons: usize) -> AttackSpec {
        match self.attack {
            _ if poisons == 0 => AttackSpec::none(),
            AttackKind::Antimodel => AttackSpec::antimodel(poisons, self.lambda),
            AttackKind::BatchAscent => AttackSpec::batch_ascent(poisons, self.lambda),
            _ => AttackSpec::none(),
        }
    }
}

/// Trains every `(seed, d, P)` cell and returns the rows sorted by that key.
///
/// Each seed draws one honest dataset at dimension D; all its cells reuse it
/// and differ only in the projection and the attack.
pub fn run_synthetic_sweep(plan: &SyntheticPlan) -> Result<Vec<RunRecord>> {
    plan.validate()?;
    let beta = make_true_model(plan.dim, plan.omega)?;
    let task = TaskSpec::new(plan.task, beta, plan.noise_sigma)?;
    let honest: Vec<_> = plan
        .seeds
        .iter()
        .map(|&seed| sample_dataset(&task, plan.honest, &mut SeededRng::new(seed).derive(0)))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (s, &seed) in plan.seeds.iter().enumerate() {
        for &d in &plan.dims {
            for &p in &plan.poisons {
                cells.push((s, seed, d, p));
            }
        }
    }
    let mut records = cells
        .par_iter()
        .map(|&(s, seed, d, p)| {
            run_cell(plan, &task, &honest[s], seed, d, p).map_err(|e| Error::InCell {
                seed,
                d,
                poisons: p,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| (r.seed, r.d, r.poisons));
    Ok(records)
}

fn run_cell(
    plan: &SyntheticPlan,
    task: &TaskSpec,
    honest: &crate::data::Dataset,
    seed: u64,
    d: usize,
    poisons: usize,
) -> Result<RunRecord> {
    let data = honest.project(d)?;
    let agg = plan.cell_aggregator(poisons);
    let attack = plan.cell_attack(poisons);
    let cell_stream = 1 + ((d as u64) << 20) + poisons as u64;
    let mut rng = SeededRng::new(seed).derive(cell_stream);
    let trace = train(task, &data, &agg, &attack, &plan.train, &mut rng)?;
    let estimate = match plan.task {
        TaskKind::Linear => statistical_error_linear(task, &trace.alpha, d)?,
        TaskKind::Logistic => statistical_error_logistic_mc(task, &trace.alpha, d, plan.mc_samples, &mut rng)?,
    };
    Ok(RunRecord {
        seed,
        task: plan.task,
        aggregator: agg.kind.name().to_string(),
        dim: plan.dim,
        d,
        honest: plan.honest,
        poisons,
        lambda: plan.lambda,
        iterations: trace.iterations(),
        final_grad_norm: trace.final_grad_norm(),
        metric: estimate.value,
        metric_stderr: estimate.std_error,
    })
}

/// Mean metric over seeds for each `(d, P)`, sorted by that key.
pub fn mean_by_cell(records: &[RunRecord]) -> Vec<(usize, usize, f64)> {
    let mut keys: Vec<(usize, usize)> = records.iter().map(|r| (r.d, r.poisons)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(d, p)| {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.d == d && r.poisons == p)
                .map(|r| r.metric)
                .collect();
            let n = vals.len() as f64;
            (d, p, exact_sum(vals) / n)
        })
        .collect()
}

/// Parameters of the end-to-end stationary-point attack check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCheckPlan {
    pub task: TaskKind,
    pub dim: usize,
    pub honest: usize,
    pub poisons: usize,
    /// Clipped-mean Δ; geometric median when absent.
    pub delta: Option<f64>,
    pub seeds: Vec<u64>,
    pub style: PoisonStyle,
    /// Robust-gradient norm regarded as stationary.
    pub tolerance: f64,
}

impl AttackCheckPlan {
    /// H = 130, P = 13, D = 169H²/P² = 16900, twenty seeds.
    pub fn operational(task: TaskKind, delta: Option<f64>, base_seed: u64) -> Self {
        AttackCheckPlan {
            task,
            dim: 16_900,
            honest: 130,
            poisons: 13,
            delta,
            seeds: (0..20).map(|i| base_seed + i).collect(),
            style: PoisonStyle::ZeroFeature,
            tolerance: 1e-6,
        }
    }
}

/// Outcome for one seed; training fields are absent when the predicate failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCheckRow {
    pub seed: u64,
    pub manipulable: bool,
    pub witness: f64,
    pub threshold: f64,
    pub iterations: Option<usize>,
    pub final_grad_norm: Option<f64>,
    pub stationary: Option<bool>,
}

/// For each seed: random `β` and `α_target`, H honest points; if the
/// manipulability predicate holds, craft the stationary poisons and train
/// from `α_target`.
pub fn run_attack_check(plan: &AttackCheckPlan) -> Result<Vec<AttackCheckRow>> {
    if plan.dim == 0 || plan.honest == 0 || plan.poisons == 0 {
        return Err(Error::InvalidParameter("D, H and P must be at least 1".into()));
    }
    plan.seeds
        .iter()
        .map(|&seed| {
            attack_check_seed(plan, seed).map_err(|e| Error::InCell {
                seed,
                d: plan.dim,
                poisons: plan.poisons,
                source: Box::new(e),
            })
        })
        .collect()
}

fn attack_check_seed(plan: &AttackCheckPlan, seed: u64) -> Result<AttackCheckRow> {
    let root = SeededRng::new(seed);
    let mut r = root.derive(0);
    let task = TaskSpec::new(plan.task, random_model(plan.dim, &mut r), 0.0)?;
    let target = random_model(plan.dim, &mut r);
    let honest = sample_dataset(&task, plan.honest, &mut r)?;
    let (check, agg, attack) = match plan.delta {
        None => (
            is_geomed_manipulable(plan.task, &target, &honest, plan.poisons)?,
            AggregatorConfig::geomed(),
            AttackSpec::geomed_stationary(ModelParams::new(target.clone()), plan.poisons, plan.style),
        ),
        Some(delta) => (
            is_clipped_manipulable(plan.task, &target, &honest, plan.poisons, delta)?,
            AggregatorConfig::clipped_mean(delta),
            AttackSpec::clipped_mean_stationary(ModelParams::new(target.clone()), plan.poisons, delta),
        ),
    };
    let mut row = AttackCheckRow {
        seed,
        manipulable: check.manipulable,
        witness: check.witness,
        threshold: check.threshold,
        iterations: None,
        final_grad_norm: None,
        stationary: None,
    };
    if check.manipulable {
        let cfg = TrainConfig {
            init_alpha: Some(target),
            stationarity_tol: plan.tolerance,
            ..TrainConfig::default()
        };
        let trace = train(&task, &honest, &agg, &attack, &cfg, &mut root.derive(1))?;
        row.iterations = Some(trace.iterations());
        row.final_grad_norm = Some(trace.final_grad_norm());
        row.stationary = Some(trace.termination == Termination::Stationary && trace.iterations() == 1);
    }
    Ok(row)
}

/// Frozen first layer `x ↦ (σ(s·w_1^T x), …, σ(s·w_d^T x))` with `w_i ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    weights: Vec<f64>,
    features: usize,
    input_dim: usize,
    scale: f64,
}

impl RandomFeatureMap {
    pub fn new(features: usize, input_dim: usize, scale: f64, rng: &mut SeededRng) -> Result<Self> {
        if features == 0 || input_dim == 0 {
            return Err(Error::InvalidParameter("feature map dimensions must be positive".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        Ok(RandomFeatureMap {
            weights: rng.normal_vec(features * input_dim),
            features,
            input_dim,
            scale,
        })
    }

    /// Image default: 784 inputs, pre-activation scale `1/√784`.
    pub fn for_images(features: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::new(features, 784, 1.0 / 28.0, rng)
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let mut out = vec![0.0; self.features];
        self.apply_into(x, &mut out);
        Vector::new(out)
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(self.weights.chunks_exact(self.input_dim)) {
            *o = sigmoid(self.scale * dot(w, x));
        }
    }

    /// Features of every row of `inputs` (row-major, `input_dim` per row).
    pub fn apply_all(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if inputs.len() % self.input_dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: inputs.len() % self.input_dim,
            });
        }
        let rows = inputs.len() / self.input_dim;
        let mut out = vec![0.0; rows * self.features];
        out.par_chunks_mut(self.features)
            .zip(inputs.par_chunks(self.input_dim))
            .for_each(|(o, x)| self.apply_into(x, o));
        Ok(out)
    }
}

pub const CLASSES: usize = 10;

/// Bias-free linear softmax over `d` features: `10·d` parameters, row `c` for class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLinearModel {
    features: usize,
    weights: Vec<f64>,
}

impl SoftmaxLinearModel {
    pub fn zeros(features: usize) -> Self {
        SoftmaxLinearModel {
            features,
            weights: vec![0.0; CLASSES * features],
        }
    }

    pub fn from_weights(features: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != CLASSES * features {
            return Err(Error::DimensionMismatch {
                expected: CLASSES * features,
                actual: weights.len(),
            });
        }
        Ok(SoftmaxLinearModel { features, weights })
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn probabilities(&self, x: &[f64]) -> [f64; CLASSES] {
        let mut logits = [0.0; CLASSES];
        for (l, w) in logits.iter_mut().zip(self.weights.chunks_exact(self.features)) {
            *l = dot(w, x);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        logits.iter_mut().for_each(|l| *l /= total);
        logits
    }

    /// `−ln softmax(Wx)_label`
    pub fn cross_entropy(&self, x: &[f64], label: usize) -> f64 {
        let mut logits = [0.0; CLASSES];
        for (l, w) in logits.iter_mut().zip(self.weights.chunks_exact(self.features)) {
            *l = dot(w, x);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        lse - logits[label]
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.probabilities(x);
        (0..CLASSES).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).expect("ten classes")
    }

    /// Flattened `(softmax(Wx) − e_label) ⊗ x` into `out` (length `10·d`).
    pub fn gradient_into(&self, x: &[f64], label: usize, out: &mut [f64]) {
        let mut p = self.probabilities(x);
        p[label] -= 1.0;
        for (row, pc) in out.chunks_exact_mut(self.features).zip(p) {
            for (o, xi) in row.iter_mut().zip(x) {
                *o = pc * xi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageDataset {
    Mnist,
    Fashion,
}

impl ImageDataset {
    pub fn name(self) -> &'static str {
        match self {
            ImageDataset::Mnist => "mnist",
            ImageDataset::Fashion => "fashion",
        }
    }
}

impl std::str::FromStr for ImageDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(ImageDataset::Mnist),
            "fashion" => Ok(ImageDataset::Fashion),
            other => Err(Error::InvalidParameter(format!("unknown dataset {other:?}"))),
        }
    }
}

/// One row of the image experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistRecord {
    pub seed: u64,
    pub dataset: ImageDataset,
    pub d: usize,
    #[serde(rename = "P")]
    pub poisons: usize,
    pub batch: usize,
    pub epochs: usize,
    pub aggregator: String,
    pub val_cross_entropy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistPlan {
    pub dataset: ImageDataset,
    pub features: usize,
    pub poisons: usize,
    pub aggregator: AggregatorConfig,
    /// Trimmed-mean trim count; `None` trims the per-batch poison count.
    pub trim: Option<usize>,
    pub attack: AttackKind,
    pub lambda: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

/// Initial step size and decay factor for the image classifier.
pub const IMAGE_LR: f64 = 5.0;
pub const IMAGE_LR_DECAY: f64 = 0.8;

impl MnistPlan {
    pub fn new(dataset: ImageDataset, features: usize, poisons: usize, seed: u64) -> Self {
        MnistPlan {
            dataset,
            features,
            poisons,
            aggregator: AggregatorConfig::cwtm(0),
            trim: None,
            attack: AttackKind::BatchAscent,
            lambda: DEFAULT_LAMBDA,
            epochs: 3,
            batch: 1000,
            seed,
            train: TrainConfig {
                initial_lr: IMAGE_LR,
                lr_decay_factor: IMAGE_LR_DECAY,
                ..TrainConfig::default()
            },
        }
    }
}

/// Batched robust gradient descent of the random-feature softmax classifier
/// under a gradient-level attack; reports validation cross-entropy and accuracy.
pub fn run_mnist_experiment(train_set: &ImageSet, val_set: &ImageSet, plan: &MnistPlan) -> Result<MnistRecord> {
    plan.aggregator.validate()?;
    plan.train.validate()?;
    if plan.batch == 0 || plan.batch > train_set.len() {
        return Err(Error::InvalidParameter(format!(
            "batch size {} must lie in 1..={}",
            plan.batch,
            train_set.len()
        )));
    }
    if plan.epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be at least 1".into()));
    }
    if !matches!(plan.attack, AttackKind::None | AttackKind::BatchAscent) {
        return Err(Error::InvalidParameter(format!(
            "image runs support none or batch-ascent, got {}",
            plan.attack.name()
        )));
    }
    let root = SeededRng::new(plan.seed);
    let map = RandomFeatureMap::for_images(plan.features, &mut root.derive(0))?;
    let train_x = map.apply_all(train_set.pixels())?;
    let val_x = map.apply_all(val_set.pixels())?;
    let d = plan.features;
    let params = CLASSES * d;
    let per_batch = if plan.attack == AttackKind::None {
        0
    } else {
        poisons_per_batch(plan.poisons, plan.batch, train_set.len())
    };
    let mut agg = plan.aggregator.clone();
    if agg.kind == AggregatorKind::CwTm {
        agg.trim_count = plan.trim.unwrap_or(per_batch);
    }

    let mut model = SoftmaxLinearModel::zeros(d);
    let mut schedule = LrSchedule::new(&plan.train);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffler = root.derive(1);
    let batches_per_epoch = train_set.len() / plan.batch;
    let mut grads = vec![0.0; plan.batch * params];
    let mut t = 0usize;
    for _ in 0..plan.epochs {
        shuffle(&mut order, &mut shuffler);
        for b in 0..batches_per_epoch {
            t += 1;
            let idx = &order[b * plan.batch..(b + 1) * plan.batch];
            grads.par_chunks_mut(params).zip(idx.par_iter()).for_each(|(out, &i)| {
                let x = &train_x[i * d..(i + 1) * d];
                model.gradient_into(x, train_set.label(i) as usize, out);
            });
            let mut rows: Vec<&[f64]> = grads.chunks_exact(params).collect();
            let poison;
            if per_batch > 0 {
                let honest_mean = exact_vector_sum(&rows, params).scaled(1.0 / plan.batch as f64);
                poison = batch_ascent_gradient(&honest_mean, plan.lambda);
                rows.extend(std::iter::repeat_n(poison.as_slice(), per_batch));
            }
            let ghat = agg.aggregate(&rows).map_err(|e| Error::AtIteration {
                iteration: t,
                source: Box::new(e),
            })?;
            let lr = schedule.lr(t);
            for (w, g) in model.weights_mut().iter_mut().zip(ghat.iter()) {
                *w -= lr * g;
            }
            schedule.observe(t, ghat.norm());
        }
    }

    let (ce, correct): (Vec<f64>, Vec<bool>) = (0..val_set.len())
        .into_par_iter()
        .map(|i| {
            let x = &val_x[i * d..(i + 1) * d];
            let y = val_set.label(i) as usize;
            (model.cross_entropy(x, y), model.predict(x) == y)
        })
        .unzip();
    let n = val_set.len() as f64;
    Ok(MnistRecord {
        seed: plan.seed,
        dataset: plan.dataset,
        d,
        poisons: plan.poisons,
        batch: plan.batch,
        epochs: plan.epochs,
        aggregator: agg.kind.name().to_string(),
        val_cross_entropy: exact_sum(ce) / n,
        val_accuracy: correct.iter().filter(|&&c| c).count() as f64 / n,
    })
}
