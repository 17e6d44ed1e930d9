//! Synthetic data with a planted conditional distribution, the four-point
//! regression counterexample, and regression baselines over group indicators.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupFunction, Record, Space};
use crate::error::{domain, McError, Result};
use crate::learner::HypothesisClass;
use crate::numeric::{solve_min_norm, SquareMatrix};
use crate::predictor::{sigmoid, LinearPredictor, Link, Predictions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Sampled,
    /// One record per label with weight `fstar[label]`.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditiveTerm {
    pub group: GroupFunction,
    /// Logit shift per class.
    pub effect: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableCell {
    /// One character per binary feature: `0`, `1`, or `*`.
    pub pattern: String,
    pub probs: Vec<f64>,
}

/// Maps a binary feature vector to a point of the simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FstarRule {
    /// `softmax(bias + sum_g c_g(x) effect_g)`.
    Additive {
        bias: Vec<f64>,
        terms: Vec<AdditiveTerm>,
    },
    /// First matching pattern wins.
    Table { cells: Vec<TableCell> },
}

/// Appends `classes` columns holding a distorted copy of `fstar`, for use as a base predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSpec {
    /// Exponent on `fstar` before renormalizing; values above 1 are overconfident.
    pub sharpness: f64,
    /// Half-width of the uniform per-class logit noise.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub n: usize,
    /// Number of binary feature columns.
    pub features: usize,
    /// `P(x_j = 1)` per column; defaults to 1/2.
    #[serde(default)]
    pub feature_probs: Option<Vec<f64>>,
    /// The calibration class the data is meant to be audited against.
    pub groups: Vec<GroupFunction>,
    pub fstar_rule: FstarRule,
    pub seed: u64,
    pub label_mode: LabelMode,
    #[serde(default)]
    pub score: Option<ScoreSpec>,
}

/// `x_j = 1` and `x_j = 0` for every column `j < features`.
pub fn indicator_groups(features: usize) -> Vec<GroupFunction> {
    let mut g = Vec::with_capacity(2 * features);
    for j in 0..features {
        g.push(GroupFunction::column(j));
        g.push(GroupFunction::complement(j));
    }
    g
}

impl SynthSpec {
    /// Four binary features, eight indicator groups, and an additive logit rule.
    pub fn planted(classes: usize, n: usize, seed: u64, label_mode: LabelMode) -> Self {
        let features = 4;
        let bias: Vec<f64> = (0..classes).map(|l| 0.3 * l as f64 - 0.2).collect();
        let terms = (0..features)
            .map(|j| AdditiveTerm {
                group: GroupFunction::column(j),
                effect: (0..classes)
                    .map(|l| {
                        let s = if (j + l) % 2 == 0 { 1.0 } else { -1.0 };
                        s * (0.6 + 0.35 * j as f64) * if l == 0 { 0.5 } else { 1.0 }
                    })
                    .collect(),
            })
            .collect();
        SynthSpec {
            classes,
            n,
            features,
            feature_probs: Some(vec![0.5, 0.4, 0.6, 0.3]),
            groups: indicator_groups(features),
            fstar_rule: FstarRule::Additive { bias, terms },
            seed,
            label_mode,
            score: None,
        }
    }

    /// Binary data whose score columns are a sharpened, noisy copy of `fstar`,
    /// so a base reading them is overconfident inside every group.
    pub fn adversarial(n: usize, seed: u64) -> Self {
        let features = 6;
        let effects = [1.1, -0.9, 0.8, -0.7, 0.6, 0.5];
        let terms = effects
            .iter()
            .enumerate()
            .map(|(j, &e)| AdditiveTerm {
                group: GroupFunction::column(j),
                effect: vec![0.0, e],
            })
            .collect();
        SynthSpec {
            classes: 2,
            n,
            features,
            feature_probs: None,
            groups: indicator_groups(features),
            fstar_rule: FstarRule::Additive {
                bias: vec![0.0, -0.3],
                terms,
            },
            seed,
            label_mode: LabelMode::Sampled,
            score: Some(ScoreSpec {
                sharpness: 3.0,
                noise: 0.5,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return domain("synthetic spec needs at least 2 classes");
        }
        if self.n == 0 {
            return domain("synthetic spec needs n >= 1");
        }
        if let Some(p) = &self.feature_probs {
            if p.len() != self.features || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return domain("feature_probs must give one probability per feature");
            }
        }
        for g in &self.groups {
            g.check_features(self.features)?;
        }
        match &self.fstar_rule {
            FstarRule::Additive { bias, terms } => {
                if bias.len() != self.classes || bias.iter().any(|v| !v.is_finite()) {
                    return domain("additive rule bias needs one finite entry per class");
                }
                for t in terms {
                    t.group.check_features(self.features)?;
                    if t.effect.len() != self.classes || t.effect.iter().any(|v| !v.is_finite()) {
                        return domain(format!(
                            "term {} needs one finite effect per class",
                            t.group.name
                        ));
                    }
                }
            }
            FstarRule::Table { cells } => {
                if cells.is_empty() {
                    return domain("table rule has no cells");
                }
                for c in cells {
                    if c.pattern.chars().count() != self.features
                        || c.pattern.chars().any(|ch| !"01*".contains(ch))
                    {
                        return domain(format!(
                            "pattern {:?} must have one of 0/1/* per feature",
                            c.pattern
                        ));
                    }
                    check_simplex(&c.probs, self.classes)?;
                }
                // Coverage: enumerate when small, otherwise require a catch-all.
                if self.features <= 16 {
                    for bits in 0..(1u32 << self.features) {
                        let x: Vec<f64> = (0..self.features)
                            .map(|j| ((bits >> j) & 1) as f64)
                            .collect();
                        self.fstar_at(&x)?;
                    }
                } else if !cells.iter().any(|c| c.pattern.chars().all(|ch| ch == '*')) {
                    return domain("table rule over many features needs an all-'*' cell");
                }
            }
        }
        if let Some(s) = &self.score {
            if !(s.sharpness > 0.0)
                || !(s.noise >= 0.0)
                || !s.sharpness.is_finite()
                || !s.noise.is_finite()
            {
                return domain("score needs sharpness > 0 and noise >= 0");
            }
        }
        Ok(())
    }

    /// The planted conditional distribution at a binary feature vector.
    pub fn fstar_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.fstar_rule {
            FstarRule::Additive { bias, terms } => {
                let mut logits = bias.clone();
                for t in terms {
                    let c = t.group.eval(x);
                    for (l, e) in logits.iter_mut().zip(&t.effect) {
                        *l += c * e;
                    }
                }
                Ok(softmax(&logits))
            }
            FstarRule::Table { cells } => cells
                .iter()
                .find(|c| {
                    c.pattern
                        .chars()
                        .zip(x)
                        .all(|(ch, &v)| ch == '*' || (ch == '1') == (v > 0.5))
                })
                .map(|c| c.probs.clone())
                .ok_or_else(|| McError::Domain(format!("no table cell matches x = {x:?}"))),
        }
    }

    /// Column where score columns start (equal to `features` when present).
    pub fn score_start(&self) -> Option<usize> {
        self.score.map(|_| self.features)
    }
}

fn check_simplex(p: &[f64], classes: usize) -> Result<()> {
    if p.len() != classes
        || p.iter().any(|v| !(*v >= 0.0))
        || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return domain(format!("{p:?} is not a distribution over {classes} labels"));
    }
    Ok(())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sample_label(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (l, q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return l;
        }
    }
    p.iter().rposition(|&q| q > 0.0).unwrap_or(0)
}

/// Draws `n` feature vectors and labels them from the planted rule.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let probs = spec
        .feature_probs
        .clone()
        .unwrap_or_else(|| vec![0.5; spec.features]);
    let mut records = Vec::with_capacity(spec.n);
    let mut fstar = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut x: Vec<f64> = probs
            .iter()
            .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        let p = spec.fstar_at(&x)?;
        if let Some(s) = &spec.score {
            let logits: Vec<f64> = p
                .iter()
                .map(|&q| {
                    s.sharpness * q.max(1e-12).ln() + s.noise * (2.0 * rng.gen::<f64>() - 1.0)
                })
                .collect();
            x.extend(softmax(&logits));
        }
        let y = sample_label(&mut rng, &p);
        records.push(Record::new(x, y, 1.0));
        fstar.push(p);
    }
    let ds = Dataset::new(records, spec.classes, Some(fstar))?;
    match spec.label_mode {
        LabelMode::Sampled => Ok(ds),
        LabelMode::Exact => ds.exact_view(),
    }
}

/// The four weighted points of `{0,1}^2` with `y = 1` exactly when `x1 = x2`,
/// and the four edge groups `x1=0, x1=1, x2=0, x2=1`.
pub fn counterexample_dataset() -> (Dataset, HypothesisClass) {
    negative_covariance_family(1.0 / 6.0).expect("1/6 is in range")
}

/// Mass `1/2 - eps` on each `x1 = 0` point and `eps` on each `x1 = 1` point.
pub fn negative_covariance_family(eps: f64) -> Result<(Dataset, HypothesisClass)> {
    if !(eps > 0.0 && eps < 0.25) {
        return domain(format!("eps must lie in (0, 1/4), got {eps}"));
    }
    let a = 0.5 - eps;
    let pts = [
        ([0.0, 0.0], 1, a),
        ([1.0, 0.0], 0, eps),
        ([0.0, 1.0], 0, a),
        ([1.0, 1.0], 1, eps),
    ];
    let mut records = Vec::new();
    let mut fstar = Vec::new();
    for (x, y, w) in pts {
        records.push(Record::new(x.to_vec(), y, w));
        fstar.push(if y == 1 {
            vec![0.0, 1.0]
        } else {
            vec![1.0, 0.0]
        });
    }
    let ds = Dataset::new(records, 2, Some(fstar))?;
    let class = HypothesisClass::new(
        "edges",
        vec![
            GroupFunction::complement(0).named("c10"),
            GroupFunction::column(0).named("c11"),
            GroupFunction::complement(1).named("c20"),
            GroupFunction::column(1).named("c21"),
        ],
    )?;
    Ok((ds, class))
}

fn positive(ds: &Dataset, i: usize) -> f64 {
    if ds.record(i).y == 1 {
        1.0
    } else {
        0.0
    }
}

fn require_binary(ds: &Dataset) -> Result<()> {
    if ds.classes() != 2 {
        return domain("regression baselines need a binary dataset");
    }
    Ok(())
}

/// Weighted least squares of the label on the class indicators.
pub fn l2_regression(class: &HypothesisClass, dataset: &Dataset) -> Result<LinearPredictor> {
    l2_regression_pinned(class, dataset, &[])
}

/// As [`l2_regression`] with some coefficients fixed; the rest take the
/// minimum-norm solution of the reduced normal equations.
pub fn l2_regression_pinned(
    class: &HypothesisClass,
    dataset: &Dataset,
    pins: &[(usize, f64)],
) -> Result<LinearPredictor> {
    require_binary(dataset)?;
    let m = class.len();
    if pins.iter().any(|&(j, _)| j >= m) {
        return domain("pinned coefficient index out of range");
    }
    let cv: Vec<Vec<f64>> = class
        .members
        .iter()
        .map(|c| {
            c.check_features(dataset.feature_dim())?;
            Ok(dataset.records().iter().map(|r| c.eval(&r.x)).collect())
        })
        .collect::<Result<_>>()?;
    let free: Vec<usize> = (0..m).filter(|j| !pins.iter().any(|p| p.0 == *j)).collect();
    let pinned_part = |i: usize| pins.iter().map(|&(j, v)| v * cv[j][i]).sum::<f64>();
    let mut a = SquareMatrix::zeros(free.len());
    let mut b = vec![0.0; free.len()];
    for (r, &j) in free.iter().enumerate() {
        for (s, &k) in free.iter().enumerate() {
            a[(r, s)] = dataset.mean(|i| cv[j][i] * cv[k][i]);
        }
        b[r] = dataset.mean(|i| cv[j][i] * (positive(dataset, i) - pinned_part(i)));
    }
    let sol = solve_min_norm(&a, &b, 1e-10)?;
    let mut coefficients = vec![0.0; m];
    for (r, &j) in free.iter().enumerate() {
        coefficients[j] = sol[r];
    }
    for &(j, v) in pins {
        coefficients[j] = v;
    }
    Ok(LinearPredictor {
        groups: class.members.clone(),
        coefficients,
        link: Link::Identity,
    })
}

pub const LOGISTIC_COEFFICIENT_CAP: f64 = 30.0;

/// Full-batch gradient ascent on the weighted log-likelihood, from zero,
/// stopping once the gradient norm falls below `1e-8`.
pub fn logistic_regression(
    class: &HypothesisClass,
    dataset: &Dataset,
    iters: usize,
    lr: f64,
) -> Result<LinearPredictor> {
    require_binary(dataset)?;
    if !(lr > 0.0) {
        return domain("learning rate must be positive");
    }
    let cv: Vec<Vec<f64>> = class
        .members
        .iter()
        .map(|c| {
            c.check_features(dataset.feature_dim())?;
            Ok(dataset.records().iter().map(|r| c.eval(&r.x)).collect())
        })
        .collect::<Result<_>>()?;
    let m = class.len();
    let mut theta = vec![0.0; m];
    let mut grad_norm = f64::INFINITY;
    for _ in 0..iters {
        let resid: Vec<f64> = (0..dataset.len())
            .map(|i| {
                let s: f64 = (0..m).map(|j| theta[j] * cv[j][i]).sum();
                positive(dataset, i) - sigmoid(s)
            })
            .collect();
        let grad: Vec<f64> = (0..m)
            .map(|j| dataset.mean(|i| cv[j][i] * resid[i]))
            .collect();
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < 1e-8 {
            return Ok(LinearPredictor {
                groups: class.members.clone(),
                coefficients: theta,
                link: Link::Logistic,
            });
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t = (*t + lr * g).clamp(-LOGISTIC_COEFFICIENT_CAP, LOGISTIC_COEFFICIENT_CAP);
        }
    }
    Err(McError::NoConvergence {
        iterations: iters,
        grad_norm,
    })
}

/// A binary dataset on which the constant 1/2 is perfectly calibrated while
/// moving each half by `eps` toward its label puts a whole half, with error
/// close to 1/2, into its own interval cell. Returns `(dataset, f, g)`.
pub fn non_robust_witness(n: usize, eps: f64) -> Result<(Dataset, Predictions, Predictions)> {
    if n < 2 || !(eps > 0.0 && eps < 0.5) {
        return domain("witness needs n >= 2 and eps in (0, 1/2)");
    }
    let half = n / 2;
    let mut records = Vec::with_capacity(2 * half);
    let mut fstar = Vec::with_capacity(2 * half);
    let mut g = Vec::with_capacity(2 * half);
    for i in 0..2 * half {
        let y = usize::from(i >= half);
        records.push(Record::new(vec![y as f64], y, 1.0));
        fstar.push(vec![0.5, 0.5]);
        g.push(vec![if y == 1 { 0.5 + eps } else { 0.5 - eps }]);
    }
    let ds = Dataset::new(records, 2, Some(fstar))?;
    let f = Predictions::from_rows(Space::Scalar, &vec![vec![0.5]; 2 * half])?;
    let g = Predictions::from_rows(Space::Scalar, &g)?;
    Ok((ds, f, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::group_mass;
    use crate::predictor::Predictor;

    #[test]
    fn counterexample_shape() {
        let (ds, class) = counterexample_dataset();
        assert!((ds.total_weight() - 1.0).abs() < 1e-15);
        assert!((group_mass(&ds, &class.members[1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ds.record(1).y, 0);
        assert_eq!(ds.record(3).y, 1);
    }

    #[test]
    fn l2_fit_on_counterexample() {
        let (ds, class) = counterexample_dataset();
        let f = l2_regression(&class, &ds).unwrap();
        let want = [2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (r, w) in ds.records().iter().zip(want) {
            assert!((f.predict(&r.x).unwrap()[0] - w).abs() < 1e-12);
        }
        let p = l2_regression_pinned(&class, &ds, &[(0, 0.5)]).unwrap();
        for (c, w) in p.coefficients.iter().zip([0.5, 0.5, 1.0 / 6.0, -1.0 / 6.0]) {
            assert!((c - w).abs() < 1e-12, "{:?}", p.coefficients);
        }
    }

    #[test]
    fn intercept_only_regression_is_the_mean() {
        let (ds, _) = counterexample_dataset();
        let class = HypothesisClass::new("one", vec![GroupFunction::ones()]).unwrap();
        let f = l2_regression(&class, &ds).unwrap();
        assert!((f.coefficients[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn logistic_matches_log_two() {
        let (ds, class) = counterexample_dataset();
        let h = logistic_regression(&class, &ds, 200_000, 2.0).unwrap();
        assert!((h.coefficients[2] - 2f64.ln()).abs() < 1e-3);
        assert!((h.coefficients[3] + 2f64.ln()).abs() < 1e-3);
        assert!(logistic_regression(&class, &ds, 1, 0.1).is_err());
    }

    #[test]
    fn exact_mode_single_group() {
        let spec = SynthSpec {
            classes: 2,
            n: 3,
            features: 1,
            feature_probs: None,
            groups: vec![GroupFunction::ones()],
            fstar_rule: FstarRule::Table {
                cells: vec![TableCell {
                    pattern: "*".into(),
                    probs: vec![0.3, 0.7],
                }],
            },
            seed: 1,
            label_mode: LabelMode::Exact,
            score: None,
        };
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.record(0).weight, 0.3);
        assert_eq!(ds.record(1).weight, 0.7);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::planted(3, 200, 9, LabelMode::Sampled);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let adv = SynthSpec::adversarial(50, 2);
        let ds = generate(&adv).unwrap();
        assert_eq!(ds.feature_dim(), 8);
    }

    #[test]
    fn table_must_cover() {
        let mut spec = SynthSpec::planted(2, 10, 0, LabelMode::Sampled);
        spec.fstar_rule = FstarRule::Table {
            cells: vec![TableCell {
                pattern: "1***".into(),
                probs: vec![0.5, 0.5],
            }],
        };
        assert!(spec.validate().is_err());
        assert!(negative_covariance_family(0.25).is_err());
    }
}
