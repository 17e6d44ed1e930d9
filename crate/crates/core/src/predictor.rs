//! Predictors map feature vectors to points of the prediction box.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupFunction, Space};
use crate::error::{domain, Result};

pub trait Predictor: Send + Sync {
    fn space(&self) -> Space;

    /// Writes the prediction for `x` into `out` (length `space().dim()`).
    fn predict_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.space().dim()];
        self.predict_into(x, &mut out)?;
        Ok(out)
    }
}

/// Row-major matrix of predictions aligned with a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    space: Space,
    values: Vec<f64>,
}

impl Predictions {
    pub fn new(space: Space, values: Vec<f64>) -> Result<Self> {
        if !values.len().is_multiple_of(space.dim()) {
            return domain("prediction buffer is not a whole number of rows");
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return domain("predictions must lie in [0, 1]");
        }
        Ok(Self { space, values })
    }

    pub fn from_rows(space: Space, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != space.dim()) {
            return domain("prediction row has the wrong dimension");
        }
        Self::new(space, rows.concat())
    }

    pub fn from_predictor(f: &dyn Predictor, dataset: &Dataset) -> Result<Self> {
        let space = f.space();
        if space.classes() != dataset.classes() {
            return domain(format!(
                "predictor has {} classes, dataset has {}",
                space.classes(),
                dataset.classes()
            ));
        }
        let dim = space.dim();
        let mut values = vec![0.0; dataset.len() * dim];
        for (r, out) in dataset.records().iter().zip(values.chunks_mut(dim)) {
            f.predict_into(&r.x, out)?;
        }
        Ok(Self { space, values })
    }

    /// The ground-truth column as predictions.
    pub fn from_fstar(dataset: &Dataset, space: Space) -> Result<Self> {
        let fs = dataset.require_fstar()?;
        let dim = space.dim();
        let mut values = vec![0.0; dataset.len() * dim];
        for (p, out) in fs.iter().zip(values.chunks_mut(dim)) {
            space.project_into(p, out);
        }
        Self::new(space, values)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.space.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.space.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.space.dim();
        &mut self.values[i * d..(i + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.space.dim())
    }

    /// `E ||f - g||_1` under the dataset weights.
    pub fn mean_l1_distance(&self, other: &Predictions, dataset: &Dataset) -> Result<f64> {
        if self.space != other.space || self.len() != other.len() || self.len() != dataset.len() {
            return domain("prediction sets are not aligned");
        }
        Ok(dataset.mean(|i| {
            self.row(i)
                .iter()
                .zip(other.row(i))
                .map(|(a, b)| (a - b).abs())
                .sum()
        }))
    }

    pub fn check_aligned(&self, dataset: &Dataset) -> Result<()> {
        if self.len() != dataset.len() {
            return domain(format!(
                "{} predictions for {} records",
                self.len(),
                dataset.len()
            ));
        }
        if self.space.classes() != dataset.classes() {
            return domain("prediction space does not match dataset classes");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logistic,
}

/// Scalar predictor `link(sum_j theta_j c_j(x))`, clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub groups: Vec<GroupFunction>,
    pub coefficients: Vec<f64>,
    pub link: Link,
}

impl LinearPredictor {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.groups
            .iter()
            .zip(&self.coefficients)
            .map(|(c, t)| t * c.eval(x))
            .sum()
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl Predictor for LinearPredictor {
    fn space(&self) -> Space {
        Space::Scalar
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for c in &self.groups {
            c.check_features(x.len())?;
        }
        let s = self.score(x);
        out[0] = match self.link {
            Link::Identity => s.clamp(0.0, 1.0),
            Link::Logistic => sigmoid(s),
        };
        Ok(())
    }
}

/// Starting point for boosting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasePredictor {
    Constant {
        space: Space,
        value: Vec<f64>,
    },
    /// Reads the prediction from feature columns `start..start + dim`, clamped to `[0, 1]`.
    Columns {
        space: Space,
        start: usize,
    },
    Linear(LinearPredictor),
}

impl BasePredictor {
    /// The constant `(1/2, ..., 1/2)`.
    pub fn half(space: Space) -> Self {
        BasePredictor::Constant {
            space,
            value: vec![0.5; space.dim()],
        }
    }

    pub fn constant(space: Space, value: Vec<f64>) -> Result<Self> {
        if value.len() != space.dim() || value.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return domain("constant base must be a point of the prediction box");
        }
        Ok(BasePredictor::Constant { space, value })
    }
}

impl Predictor for BasePredictor {
    fn space(&self) -> Space {
        match self {
            BasePredictor::Constant { space, .. } | BasePredictor::Columns { space, .. } => *space,
            BasePredictor::Linear(l) => l.space(),
        }
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            BasePredictor::Constant { value, .. } => out.copy_from_slice(value),
            BasePredictor::Columns { space, start } => {
                let end = start + space.dim();
                if end > x.len() {
                    return domain(format!(
                        "base reads columns {start}..{end} but x has {} features",
                        x.len()
                    ));
                }
                for (o, v) in out.iter_mut().zip(&x[*start..end]) {
                    *o = v.clamp(0.0, 1.0);
                }
            }
            BasePredictor::Linear(l) => l.predict_into(x, out)?,
        }
        Ok(())
    }
}

/// Rescales a box point onto the simplex for reporting; zero vectors become uniform.
pub fn renormalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|v| *v /= s);
    } else {
        let u = 1.0 / p.len() as f64;
        p.iter_mut().for_each(|v| *v = u);
    }
}
