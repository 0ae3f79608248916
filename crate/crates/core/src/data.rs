//! Labeled examples, datasets and the honest data generator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::vector::{project_first, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Linear,
    Logistic,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Linear => "linear",
            TaskKind::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TaskKind::Linear),
            "logistic" => Ok(TaskKind::Logistic),
            other => Err(Error::InvalidParameter(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Honest,
    Poisoned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    features: Vector,
    label: f64,
    provenance: Provenance,
}

impl LabeledExample {
    pub fn new(features: Vector, label: f64, provenance: Provenance) -> Result<Self> {
        if !label.is_finite() {
            return Err(Error::InvalidParameter(format!("label {label} is not finite")));
        }
        Ok(LabeledExample {
            features,
            label,
            provenance,
        })
    }

    pub fn honest(features: Vector, label: f64) -> Result<Self> {
        Self::new(features, label, Provenance::Honest)
    }

    pub fn poisoned(features: Vector, label: f64) -> Result<Self> {
        Self::new(features, label, Provenance::Poisoned)
    }

    pub fn features(&self) -> &Vector {
        &self.features
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn check_label(&self, kind: TaskKind) -> Result<()> {
        if kind == TaskKind::Logistic && self.label != 0.0 && self.label != 1.0 {
            return Err(Error::InvalidParameter(format!(
                "logistic label must be 0 or 1, got {}",
                self.label
            )));
        }
        Ok(())
    }

    /// Same example with features reduced to the first `d` coordinates.
    pub fn project(&self, d: usize) -> Result<LabeledExample> {
        Ok(LabeledExample {
            features: project_first(&self.features, d)?,
            label: self.label,
            provenance: self.provenance,
        })
    }
}

/// A nonempty list of examples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>) -> Result<Self> {
        let dim = examples.first().ok_or(Error::Empty("dataset"))?.dim();
        if let Some(bad) = examples.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        Ok(Dataset { examples, dim })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn honest_count(&self) -> usize {
        self.examples
            .iter()
            .filter(|e| e.provenance == Provenance::Honest)
            .count()
    }

    pub fn poisoned_count(&self) -> usize {
        self.len() - self.honest_count()
    }

    pub fn check_labels(&self, kind: TaskKind) -> Result<()> {
        self.examples.iter().try_for_each(|e| e.check_label(kind))
    }

    /// Dataset trained on `(π_d(x), y)` instead of `(x, y)`.
    pub fn project(&self, d: usize) -> Result<Dataset> {
        let examples = self
            .examples
            .iter()
            .map(|e| e.project(d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { examples, dim: d })
    }

    /// Appends `extra` (e.g. crafted poisons) to a copy of this dataset.
    pub fn extended(&self, extra: impl IntoIterator<Item = LabeledExample>) -> Result<Dataset> {
        let mut examples = self.examples.clone();
        examples.extend(extra);
        Dataset::new(examples)
    }

    /// Reorders examples by `order`, which must be a permutation of `0..len`.
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        assert_eq!(order.len(), self.len());
        Dataset {
            examples: order.iter().map(|&i| self.examples[i].clone()).collect(),
            dim: self.dim,
        }
    }
}

/// Regression kind plus the ground truth generating honest labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    kind: TaskKind,
    beta: Vector,
    noise_sigma: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, beta: Vector, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be nonnegative, got {noise_sigma}"
            )));
        }
        if kind == TaskKind::Logistic && noise_sigma != 0.0 {
            return Err(Error::InvalidParameter(
                "logistic labels carry no additive noise".into(),
            ));
        }
        Ok(TaskSpec {
            kind,
            beta,
            noise_sigma,
        })
    }

    pub fn linear(beta: Vector) -> Self {
        TaskSpec {
            kind: TaskKind::Linear,
            beta,
            noise_sigma: 0.0,
        }
    }

    pub fn logistic(beta: Vector) -> Self {
        TaskSpec {
            kind: TaskKind::Logistic,
            beta,
            noise_sigma: 0.0,
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn beta(&self) -> &Vector {
        &self.beta
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Data-generation dimension D.
    pub fn dim(&self) -> usize {
        self.beta.dim()
    }

    /// Draws one label for features `x` (full dimension).
    pub fn draw_label(&self, x: &[f64], rng: &mut SeededRng) -> f64 {
        let signal = self.beta.dot(x);
        match self.kind {
            TaskKind::Linear => {
                if self.noise_sigma > 0.0 {
                    signal + self.noise_sigma * rng.standard_normal()
                } else {
                    signal
                }
            }
            TaskKind::Logistic => {
                if rng.bernoulli(crate::models::sigmoid(signal)) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Draws `h` honest examples with features `x ~ N(0, I_D)` and labels from the task.
pub fn sample_dataset(task: &TaskSpec, h: usize, rng: &mut SeededRng) -> Result<Dataset> {
    if h == 0 {
        return Err(Error::InvalidParameter("H must be at least 1".into()));
    }
    let dim = task.dim();
    let examples = (0..h)
        .map(|_| {
            let x = rng.normal_vec(dim);
            let y = task.draw_label(&x, rng);
            LabeledExample::honest(Vector::from_raw(x), y)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples)
}
