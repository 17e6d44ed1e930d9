//! Weak agnostic learning over finite hypothesis classes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupFunction};
use crate::error::{domain, Result};
use crate::numeric::CompensatedSum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClass {
    pub name: String,
    pub members: Vec<GroupFunction>,
}

impl HypothesisClass {
    pub fn new(name: impl Into<String>, members: Vec<GroupFunction>) -> Result<Self> {
        if members.is_empty() {
            return domain("hypothesis class is empty");
        }
        Ok(Self {
            name: name.into(),
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Evaluates every member on every record.
    pub fn evaluate(&self, dataset: &Dataset) -> Result<EvaluatedClass> {
        for c in &self.members {
            c.check_features(dataset.feature_dim())?;
        }
        let values = self
            .members
            .par_iter()
            .map(|c| dataset.records().iter().map(|r| c.eval(&r.x)).collect())
            .collect();
        Ok(EvaluatedClass {
            class: self.clone(),
            values,
        })
    }
}

/// A class together with its member values on a fixed dataset.
#[derive(Clone, Debug)]
pub struct EvaluatedClass {
    pub class: HypothesisClass,
    /// `values[j][i] = c_j(x_i)`.
    pub values: Vec<Vec<f64>>,
}

impl EvaluatedClass {
    pub fn restrict(&self, indices: &[usize]) -> Self {
        Self {
            class: self.class.clone(),
            values: self
                .values
                .iter()
                .map(|v| indices.iter().map(|&i| v[i]).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `sum_i w_i c_i z_i / total`, accumulated in index order.
#[inline]
pub fn weighted_correlation(weights: &[f64], c: &[f64], z: &[f64], total: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for ((w, cv), zv) in weights.iter().zip(c).zip(z) {
        if *cv != 0.0 && *w != 0.0 {
            acc.add(w * cv * zv);
        }
    }
    acc.value() / total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum LearnerOutcome {
    Found {
        index: usize,
        group: String,
        sign: i8,
        correlation: f64,
    },
    None {
        max_abs_correlation: f64,
    },
}

/// Weighted residual sample: `weights[i]`, residual `z[i]`, normalizer `total`.
pub struct Sample<'a> {
    pub weights: &'a [f64],
    pub z: &'a [f64],
    pub total: f64,
}

/// A search strategy over a class for a member correlating with the residual.
pub trait WeakLearner: Send + Sync {
    fn name(&self) -> &'static str;

    fn learn(&self, class: &EvaluatedClass, sample: &Sample<'_>, alpha: f64) -> LearnerOutcome;
}

fn correlations(class: &EvaluatedClass, sample: &Sample<'_>) -> Vec<f64> {
    class
        .values
        .par_iter()
        .map(|c| weighted_correlation(sample.weights, c, sample.z, sample.total))
        .collect()
}

fn max_abs(corr: &[f64]) -> f64 {
    corr.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Maximizes `s E[c z]` over members and both signs; ties go to the earlier
/// member, then to the positive sign.
pub struct Exhaustive;

impl WeakLearner for Exhaustive {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn learn(&self, class: &EvaluatedClass, sample: &Sample<'_>, alpha: f64) -> LearnerOutcome {
        let corr = correlations(class, sample);
        let mut best: Option<(usize, i8, f64)> = None;
        for (j, &v) in corr.iter().enumerate() {
            for sign in [1i8, -1] {
                let s = sign as f64 * v;
                if best.is_none_or(|(_, _, b)| s > b) {
                    best = Some((j, sign, s));
                }
            }
        }
        match best {
            Some((index, sign, correlation)) if correlation > alpha => LearnerOutcome::Found {
                index,
                group: class.class.members[index].name.clone(),
                sign,
                correlation,
            },
            _ => LearnerOutcome::None {
                max_abs_correlation: max_abs(&corr),
            },
        }
    }
}

/// Returns the first member in class order whose correlation exceeds `alpha` in absolute value.
pub struct FirstViolation;

impl WeakLearner for FirstViolation {
    fn name(&self) -> &'static str {
        "first-violation"
    }

    fn learn(&self, class: &EvaluatedClass, sample: &Sample<'_>, alpha: f64) -> LearnerOutcome {
        let corr = correlations(class, sample);
        match corr.iter().position(|v| v.abs() > alpha) {
            Some(index) => {
                let sign = if corr[index] >= 0.0 { 1 } else { -1 };
                LearnerOutcome::Found {
                    index,
                    group: class.class.members[index].name.clone(),
                    sign,
                    correlation: corr[index].abs(),
                }
            }
            None => LearnerOutcome::None {
                max_abs_correlation: max_abs(&corr),
            },
        }
    }
}

pub struct LearnerRegistry {
    learners: Vec<Box<dyn WeakLearner>>,
}

impl Default for LearnerRegistry {
    fn default() -> Self {
        Self {
            learners: vec![Box::new(Exhaustive), Box::new(FirstViolation)],
        }
    }
}

impl LearnerRegistry {
    pub fn register(&mut self, learner: Box<dyn WeakLearner>) {
        self.learners.insert(0, learner);
    }

    pub fn get(&self, name: &str) -> Result<&dyn WeakLearner> {
        match self.learners.iter().find(|l| l.name() == name) {
            Some(l) => Ok(l.as_ref()),
            None => domain(format!(
                "unknown learner {name:?}; known: {}",
                self.names().join(", ")
            )),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.learners.iter().map(|l| l.name()).collect()
    }
}

/// Exhaustive weak agnostic learning on uniformly weighted `(x, z)` samples.
pub fn weak_agnostic_learn(
    class: &HypothesisClass,
    samples: &[(Vec<f64>, f64)],
    alpha: f64,
) -> Result<LearnerOutcome> {
    if !(alpha > 0.0) {
        return domain("alpha must be positive");
    }
    if samples.is_empty() {
        return domain("no samples");
    }
    if let Some((i, _)) = samples
        .iter()
        .enumerate()
        .find(|(_, (_, z))| !(z.abs() <= 1.0 + 1e-9))
    {
        return domain(format!("sample {i} has |z| > 1"));
    }
    let dim = samples[0].0.len();
    for c in &class.members {
        c.check_features(dim)?;
    }
    let values = class
        .members
        .iter()
        .map(|c| samples.iter().map(|(x, _)| c.eval(x)).collect())
        .collect();
    let evaluated = EvaluatedClass {
        class: class.clone(),
        values,
    };
    let weights = vec![1.0; samples.len()];
    let z: Vec<f64> = samples.iter().map(|(_, z)| *z).collect();
    let sample = Sample {
        weights: &weights,
        z: &z,
        total: samples.len() as f64,
    };
    Ok(Exhaustive.learn(&evaluated, &sample, alpha))
}

/// One indicator per binary feature column, preceded by the all-ones group.
pub fn indicator_class_from_columns(
    dataset: &Dataset,
    columns: &[usize],
) -> Result<HypothesisClass> {
    let mut members = vec![GroupFunction::ones()];
    for &col in columns {
        check_binary(dataset, col)?;
        members.push(GroupFunction::column(col));
    }
    HypothesisClass::new("columns", members)
}

fn check_binary(dataset: &Dataset, col: usize) -> Result<()> {
    if col >= dataset.feature_dim() {
        return domain(format!("column {col} out of range"));
    }
    if let Some(r) = dataset
        .records()
        .iter()
        .find(|r| r.x[col] != 0.0 && r.x[col] != 1.0)
    {
        return domain(format!("column {col} is not binary (value {})", r.x[col]));
    }
    Ok(())
}

/// `1{x[column] >= t}` for each threshold.
pub fn threshold_stump_class(
    dataset: &Dataset,
    column: usize,
    thresholds: &[f64],
) -> Result<HypothesisClass> {
    if column >= dataset.feature_dim() {
        return domain(format!("column {column} out of range"));
    }
    if thresholds.iter().any(|t| !t.is_finite()) {
        return domain("thresholds must be finite");
    }
    HypothesisClass::new(
        "stumps",
        thresholds
            .iter()
            .map(|&t| GroupFunction::stump(column, t))
            .collect(),
    )
}

/// JSON description of a class: `{"kind":"columns","columns":[...]}` and friends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassDescriptor {
    /// Ones, then `x_j = 1` for each column, then `x_j = 0` for each complement column.
    Columns {
        columns: Vec<usize>,
        #[serde(default)]
        complements: Vec<usize>,
    },
    Stumps {
        column: usize,
        thresholds: Vec<f64>,
    },
    Groups {
        groups: Vec<GroupFunction>,
    },
}

impl ClassDescriptor {
    pub fn build(&self, dataset: &Dataset) -> Result<HypothesisClass> {
        match self {
            ClassDescriptor::Columns {
                columns,
                complements,
            } => {
                let mut class = indicator_class_from_columns(dataset, columns)?;
                for &col in complements {
                    check_binary(dataset, col)?;
                    class.members.push(GroupFunction::complement(col));
                }
                Ok(class)
            }
            ClassDescriptor::Stumps { column, thresholds } => {
                threshold_stump_class(dataset, *column, thresholds)
            }
            ClassDescriptor::Groups { groups } => {
                for g in groups {
                    g.check_features(dataset.feature_dim())?;
                }
                HypothesisClass::new("groups", groups.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;

    fn half_split() -> Vec<(Vec<f64>, f64)> {
        (0..8)
            .map(|i| {
                let b = (i % 2) as f64;
                (vec![b], b - 0.5)
            })
            .collect()
    }

    #[test]
    fn zero_residual_gives_none() {
        let class =
            HypothesisClass::new("c", vec![GroupFunction::ones(), GroupFunction::column(0)])
                .unwrap();
        let s: Vec<_> = half_split().into_iter().map(|(x, _)| (x, 0.0)).collect();
        assert_eq!(
            weak_agnostic_learn(&class, &s, 0.1).unwrap(),
            LearnerOutcome::None {
                max_abs_correlation: 0.0
            }
        );
    }

    #[test]
    fn finds_correlated_indicator() {
        let class =
            HypothesisClass::new("c", vec![GroupFunction::ones(), GroupFunction::column(0)])
                .unwrap();
        match weak_agnostic_learn(&class, &half_split(), 0.1).unwrap() {
            LearnerOutcome::Found {
                index,
                sign,
                correlation,
                ..
            } => {
                assert_eq!((index, sign), (1, 1));
                assert_eq!(correlation, 0.25);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ties_prefer_first_member_and_positive_sign() {
        let class = HypothesisClass::new(
            "c",
            vec![
                GroupFunction::column(0),
                GroupFunction::column(0).named("dup"),
            ],
        )
        .unwrap();
        match weak_agnostic_learn(&class, &half_split(), 0.1).unwrap() {
            LearnerOutcome::Found { index, group, .. } => {
                assert_eq!((index, group.as_str()), (0, "x0=1"))
            }
            other => panic!("unexpected {other:?}"),
        }
        let neg: Vec<_> = half_split().into_iter().map(|(x, z)| (x, -z)).collect();
        match weak_agnostic_learn(&class, &neg, 0.1).unwrap() {
            LearnerOutcome::Found { index, sign, .. } => assert_eq!((index, sign), (0, -1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_samples() {
        let class = HypothesisClass::new("c", vec![GroupFunction::ones()]).unwrap();
        assert!(weak_agnostic_learn(&class, &[], 0.1).is_err());
        assert!(weak_agnostic_learn(&class, &[(vec![0.0], 1.5)], 0.1).is_err());
        assert!(weak_agnostic_learn(&class, &[(vec![0.0], 0.5)], 0.0).is_err());
    }

    #[test]
    fn first_violation_returns_earliest() {
        let class =
            HypothesisClass::new("c", vec![GroupFunction::ones(), GroupFunction::column(0)])
                .unwrap();
        let ev = EvaluatedClass {
            class: class.clone(),
            values: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
        };
        let w = [1.0, 1.0];
        let z = [0.3, 0.5];
        let s = Sample {
            weights: &w,
            z: &z,
            total: 2.0,
        };
        match FirstViolation.learn(&ev, &s, 0.2) {
            LearnerOutcome::Found {
                index, correlation, ..
            } => {
                assert_eq!(index, 0);
                assert!((correlation - 0.4).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(LearnerRegistry::default().get("first-violation").is_ok());
        assert!(LearnerRegistry::default().get("nope").is_err());
    }

    #[test]
    fn class_builders() {
        let recs = (0..4)
            .map(|i| Record::new(vec![(i % 2) as f64, i as f64, 0.0], 0, 1.0))
            .collect();
        let ds = Dataset::new(recs, 2, None).unwrap();
        assert_eq!(indicator_class_from_columns(&ds, &[]).unwrap().len(), 1);
        assert!(indicator_class_from_columns(&ds, &[1]).is_err());
        assert_eq!(indicator_class_from_columns(&ds, &[0, 2]).unwrap().len(), 3);
        let st = threshold_stump_class(&ds, 1, &[-1.0, 10.0, 1.5]).unwrap();
        let masses: Vec<f64> = st
            .members
            .iter()
            .map(|c| crate::data::group_mass(&ds, c).unwrap())
            .collect();
        assert_eq!(masses, vec![1.0, 0.0, 0.5]);
        assert!(threshold_stump_class(&ds, 5, &[0.0]).is_err());
        let desc: ClassDescriptor =
            serde_json::from_str(r#"{"kind":"columns","columns":[0],"complements":[0]}"#).unwrap();
        assert_eq!(desc.build(&ds).unwrap().len(), 3);
    }
}
