//! Boosting a predictor until no (group, weight) violation above `alpha` remains.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{atom_residuals, targets};
use crate::data::{Dataset, GroupFunction, Space};
use crate::error::{domain, McError, Result};
use crate::learner::{EvaluatedClass, HypothesisClass, LearnerOutcome, LearnerRegistry, Sample};
use crate::predictor::{renormalize, BasePredictor, Predictions, Predictor};
use crate::weights::{eval_atom, WeightFamily, WeightFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataMode {
    Reuse,
    /// A seeded partition into `chunks` disjoint parts, one consumed per update.
    Chunked {
        chunks: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub alpha: f64,
    /// Step size; `alpha / 2` when absent.
    pub eta: Option<f64>,
    /// Update budget; `ceil(4 l / alpha^2)` when absent.
    pub max_iterations: Option<usize>,
    pub data_mode: DataMode,
    pub seed: u64,
    pub simplex_project: bool,
    pub learner: String,
}

impl BoostConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            eta: None,
            max_iterations: None,
            data_mode: DataMode::Reuse,
            seed: 0,
            simplex_project: false,
            learner: "exhaustive".into(),
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(self.alpha / 2.0)
    }

    pub fn max_iterations(&self, classes: usize) -> usize {
        self.max_iterations
            .unwrap_or_else(|| (4.0 * classes as f64 / (self.alpha * self.alpha)).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return domain(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        let eta = self.eta();
        if !(eta > 0.0 && eta <= 1.0) {
            return domain(format!("eta must lie in (0, 1], got {eta}"));
        }
        if self.max_iterations == Some(0) {
            return domain("max_iterations must be at least 1");
        }
        if let DataMode::Chunked { chunks: 0 } = self.data_mode {
            return domain("chunked mode needs at least one chunk");
        }
        Ok(())
    }
}

/// `f <- clip(f + sign * step * w(f) * c)` on the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Update {
    pub weight: WeightFunction,
    /// Restricts a per-label weight to one coordinate.
    pub coord: Option<usize>,
    pub weight_id: String,
    pub group: GroupFunction,
    pub sign: i8,
    pub step: f64,
}

/// Applies one update in place. `buf` is scratch space of the prediction dimension.
#[inline]
pub fn apply_update(p: &mut [f64], update: &Update, c: f64, buf: &mut [f64]) {
    if c == 0.0 {
        return;
    }
    eval_atom(&update.weight, update.coord, p, buf);
    let scale = update.sign as f64 * update.step;
    for (v, w) in p.iter_mut().zip(buf.iter()) {
        *v = (*v + scale * w * c).clamp(0.0, 1.0);
    }
}

/// Base predictor followed by a sequence of clipped updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedPredictor {
    pub space: Space,
    pub feature_dim: Option<usize>,
    pub base: BasePredictor,
    pub updates: Vec<Update>,
    #[serde(default)]
    pub simplex_project: bool,
}

impl ComposedPredictor {
    pub fn from_base(base: BasePredictor, feature_dim: Option<usize>) -> Self {
        Self {
            space: base.space(),
            feature_dim,
            base,
            updates: Vec::new(),
            simplex_project: false,
        }
    }

    /// Prediction as reported: renormalized onto the simplex when requested.
    pub fn predict_for_report(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.predict(x)?;
        if self.simplex_project && !self.space.is_scalar() {
            renormalize(&mut p);
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Predictor for ComposedPredictor {
    fn space(&self) -> Space {
        self.space
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(d) = self.feature_dim {
            if x.len() != d {
                return domain(format!("expected {d} features, got {}", x.len()));
            }
        }
        self.base.predict_into(x, out)?;
        let mut buf = vec![0.0; out.len()];
        for u in &self.updates {
            u.group.check_features(x.len())?;
            apply_update(out, u, u.group.eval(x), &mut buf);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub weight: String,
    pub label: Option<usize>,
    pub group: String,
    pub sign: i8,
    pub correlation: f64,
    /// `E ||y - f||^2` after the update.
    pub potential_proxy: f64,
    /// `E ||f* - f||^2` after the update.
    pub true_potential: Option<f64>,
    pub chunk: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub alpha: f64,
    pub eta: f64,
    pub initial_potential_proxy: f64,
    pub initial_true_potential: Option<f64>,
    pub records: Vec<TraceRecord>,
    /// Largest absolute correlation in the final, violation-free scan.
    pub final_max_correlation: Option<f64>,
}

impl TrainTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "iteration",
            "weight",
            "label",
            "group",
            "sign",
            "correlation",
            "potential_proxy",
            "true_potential",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.weight.clone(),
                r.label.map(|l| l.to_string()).unwrap_or_default(),
                r.group.clone(),
                r.sign.to_string(),
                r.correlation.to_string(),
                r.potential_proxy.to_string(),
                opt(r.true_potential),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn squared_distance(preds: &Predictions, other: &[f64], dataset: &Dataset) -> f64 {
    let d = preds.space().dim();
    dataset.mean(|i| {
        preds
            .row(i)
            .iter()
            .zip(&other[i * d..(i + 1) * d])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

struct Scan {
    indices: Vec<usize>,
    class: EvaluatedClass,
    weights: Vec<f64>,
    total: f64,
}

/// Boosts from the constant `(1/2, ..., 1/2)` predictor.
pub fn multicalibrate(
    dataset: &Dataset,
    class: &HypothesisClass,
    family: &WeightFamily,
    config: &BoostConfig,
) -> Result<(ComposedPredictor, TrainTrace)> {
    multicalibrate_from(
        dataset,
        class,
        family,
        BasePredictor::half(family.space),
        config,
    )
}

pub fn multicalibrate_from(
    dataset: &Dataset,
    class: &HypothesisClass,
    family: &WeightFamily,
    base: BasePredictor,
    config: &BoostConfig,
) -> Result<(ComposedPredictor, TrainTrace)> {
    config.validate()?;
    let space = family.space;
    if base.space() != space {
        return domain("base predictor and weight family use different prediction spaces");
    }
    if space.classes() != dataset.classes() {
        return domain(format!(
            "family has {} classes, dataset has {}",
            space.classes(),
            dataset.classes()
        ));
    }
    let members = family.listed()?;
    let atoms = family.atoms()?;
    if atoms.is_empty() {
        return domain("weight family is empty");
    }
    let learner = LearnerRegistry::default();
    let learner = learner.get(&config.learner)?;
    let alpha = config.alpha;
    let eta = config.eta();
    let max_iterations = config.max_iterations(space.classes());
    let dim = space.dim();
    let n = dataset.len();

    let mut preds = Predictions::from_predictor(&base, dataset)?;
    let evaluated = class.evaluate(dataset)?;
    let target = targets(dataset, space);
    let fstar: Option<Vec<f64>> = dataset.fstar().map(|fs| {
        let mut v = vec![0.0; n * dim];
        for (p, out) in fs.iter().zip(v.chunks_mut(dim)) {
            space.project_into(p, out);
        }
        v
    });
    let weights = dataset.weights();

    let scans: Vec<Scan> = match config.data_mode {
        DataMode::Reuse => vec![Scan {
            indices: (0..n).collect(),
            class: evaluated.clone(),
            weights: weights.clone(),
            total: dataset.total_weight(),
        }],
        DataMode::Chunked { chunks } => {
            if n < chunks {
                return domain(format!("{n} records cannot fill {chunks} chunks"));
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
            (0..chunks)
                .map(|j| {
                    let mut idx = perm[j * n / chunks..(j + 1) * n / chunks].to_vec();
                    idx.sort_unstable();
                    let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
                    let total = crate::numeric::compensated_sum(w.iter().copied());
                    Scan {
                        class: evaluated.restrict(&idx),
                        indices: idx,
                        weights: w,
                        total,
                    }
                })
                .collect()
        }
    };
    for (j, s) in scans.iter().enumerate() {
        if !(s.total > 0.0) {
            return domain(format!("chunk {j} has zero weight"));
        }
    }

    let mut composed = ComposedPredictor {
        space,
        feature_dim: Some(dataset.feature_dim()),
        base,
        updates: Vec::new(),
        simplex_project: config.simplex_project,
    };
    let mut trace = TrainTrace {
        alpha,
        eta,
        initial_potential_proxy: squared_distance(&preds, &target, dataset),
        initial_true_potential: fstar.as_ref().map(|f| squared_distance(&preds, f, dataset)),
        records: Vec::new(),
        final_max_correlation: None,
    };
    let chunked = matches!(config.data_mode, DataMode::Chunked { .. });
    let mut buf = vec![0.0; dim];

    loop {
        let t = composed.updates.len();
        let scan_idx = if chunked { t } else { 0 };
        let Some(scan) = scans.get(scan_idx) else {
            return Err(McError::NonTermination {
                iterations: t,
                trace: Box::new(trace),
            });
        };
        let mut found = None;
        let mut max_seen: f64 = 0.0;
        for atom in &atoms {
            let w = &members[atom.member];
            let z = atom_residuals(&preds, &target, w, atom.coord, Some(&scan.indices));
            let sample = Sample {
                weights: &scan.weights,
                z: &z,
                total: scan.total,
            };
            match learner.learn(&scan.class, &sample, alpha) {
                LearnerOutcome::None {
                    max_abs_correlation,
                } => max_seen = max_seen.max(max_abs_correlation),
                LearnerOutcome::Found {
                    index,
                    sign,
                    correlation,
                    ..
                } => {
                    found = Some((*atom, index, sign, correlation));
                    break;
                }
            }
        }
        let Some((atom, index, sign, correlation)) = found else {
            trace.final_max_correlation = Some(max_seen);
            break;
        };
        if t >= max_iterations {
            return Err(McError::NonTermination {
                iterations: t,
                trace: Box::new(trace),
            });
        }
        let update = Update {
            weight: members[atom.member].clone(),
            coord: atom.coord,
            weight_id: family.atom_id(atom)?,
            group: class.members[index].clone(),
            sign,
            step: eta,
        };
        let cvals = &evaluated.values[index];
        for (i, &c) in cvals.iter().enumerate() {
            apply_update(preds.row_mut(i), &update, c, &mut buf);
        }
        trace.records.push(TraceRecord {
            iteration: t + 1,
            weight: update.weight_id.clone(),
            label: atom.coord.map(|c| space.label_of_coord(c)),
            group: update.group.name.clone(),
            sign,
            correlation,
            potential_proxy: squared_distance(&preds, &target, dataset),
            true_potential: fstar.as_ref().map(|f| squared_distance(&preds, f, dataset)),
            chunk: chunked.then_some(scan_idx),
        });
        composed.updates.push(update);
    }
    Ok((composed, trace))
}
