//! Weighted empirical datasets, prediction spaces, and group functions.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, McError, Result};
use crate::numeric::CompensatedSum;

/// Groups lighter than this are treated as empty by conditional diagnostics.
pub const DEFAULT_MASS_FLOOR: f64 = 10.0 * f64::EPSILON;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub x: Vec<f64>,
    pub y: usize,
    pub weight: f64,
}

impl Record {
    pub fn new(x: Vec<f64>, y: usize, weight: f64) -> Self {
        Self { x, y, weight }
    }
}

/// A weighted sample of `(x, y)` pairs with an optional ground-truth
/// conditional distribution per record. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    classes: usize,
    fstar: Option<Vec<Vec<f64>>>,
    total_weight: f64,
}

impl Dataset {
    pub fn new(records: Vec<Record>, classes: usize, fstar: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if classes < 2 {
            return domain(format!("need at least 2 classes, got {classes}"));
        }
        if records.is_empty() {
            return domain("dataset is empty");
        }
        let dim = records[0].x.len();
        let mut total = CompensatedSum::new();
        for (i, r) in records.iter().enumerate() {
            if r.x.len() != dim {
                return domain(format!(
                    "record {i} has {} features, expected {dim}",
                    r.x.len()
                ));
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return domain(format!("record {i} has a non-finite feature"));
            }
            if !(r.weight >= 0.0) || !r.weight.is_finite() {
                return domain(format!("record {i} has invalid weight {}", r.weight));
            }
            if r.y >= classes {
                return domain(format!(
                    "record {i} has label {} outside [0, {classes})",
                    r.y
                ));
            }
            total.add(r.weight);
        }
        let total_weight = total.value();
        if !(total_weight > 0.0) {
            return domain("total weight must be positive");
        }
        if let Some(fs) = &fstar {
            if fs.len() != records.len() {
                return domain("fstar length does not match record count");
            }
            for (i, p) in fs.iter().enumerate() {
                if p.len() != classes {
                    return domain(format!(
                        "fstar row {i} has {} entries, expected {classes}",
                        p.len()
                    ));
                }
                if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return domain(format!("fstar row {i} has a negative or non-finite entry"));
                }
                let s: f64 = p.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return domain(format!("fstar row {i} sums to {s}, not 1"));
                }
            }
        }
        Ok(Self {
            records,
            classes,
            fstar,
            total_weight,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.records[0].x.len()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &Record {
        &self.records[i]
    }

    pub fn fstar(&self) -> Option<&[Vec<f64>]> {
        self.fstar.as_deref()
    }

    pub fn has_fstar(&self) -> bool {
        self.fstar.is_some()
    }

    pub fn require_fstar(&self) -> Result<&[Vec<f64>]> {
        self.fstar()
            .ok_or_else(|| McError::Domain("this operation needs an fstar column".into()))
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    /// Weight-normalized mean of `g(i)` over records, summed in dataset order.
    pub fn mean<F: Fn(usize) -> f64>(&self, g: F) -> f64 {
        let mut acc = CompensatedSum::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.weight != 0.0 {
                acc.add(r.weight * g(i));
            }
        }
        acc.value() / self.total_weight
    }

    /// Keeps the records at `indices` (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        let fstar = self
            .fstar
            .as_ref()
            .map(|fs| indices.iter().map(|&i| fs[i].clone()).collect());
        Self::new(records, self.classes, fstar)
    }

    /// Replaces every record by one copy per label, weighted by `weight * fstar[label]`,
    /// so the empirical label distribution at each record equals its `fstar` row.
    /// Zero-weight copies are dropped.
    pub fn exact_view(&self) -> Result<Self> {
        let fs = self.require_fstar()?;
        let mut records = Vec::with_capacity(self.records.len() * self.classes);
        let mut fstar = Vec::with_capacity(records.capacity());
        for (r, p) in self.records.iter().zip(fs) {
            for (label, &q) in p.iter().enumerate() {
                let w = r.weight * q;
                if w > 0.0 {
                    records.push(Record::new(r.x.clone(), label, w));
                    fstar.push(p.clone());
                }
            }
        }
        Self::new(records, self.classes, Some(fstar))
    }

    /// Reads the CSV format: `x0..x{d-1}`, `y`, optional `w`, optional `fstar0..fstar{l-1}`.
    /// When `classes` is `None` it is inferred from the fstar columns or the largest label.
    pub fn read_csv<R: Read>(reader: R, classes: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut xcols = Vec::new();
        let mut fcols = Vec::new();
        let mut ycol = None;
        let mut wcol = None;
        for (j, h) in headers.iter().enumerate() {
            if h == "y" {
                ycol = Some(j);
            } else if h == "w" {
                wcol = Some(j);
            } else if let Some(k) = h
                .strip_prefix("fstar")
                .and_then(|s| s.parse::<usize>().ok())
            {
                fcols.push((k, j));
            } else if let Some(k) = h.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                xcols.push((k, j));
            } else {
                return domain(format!("unknown column {h:?}"));
            }
        }
        let ycol = ycol.ok_or_else(|| McError::Domain("missing y column".into()))?;
        xcols.sort_unstable();
        fcols.sort_unstable();
        if xcols.iter().enumerate().any(|(i, (k, _))| i != *k) {
            return domain("feature columns must be x0..x{d-1} without gaps");
        }
        if fcols.iter().enumerate().any(|(i, (k, _))| i != *k) {
            return domain("fstar columns must be fstar0..fstar{l-1} without gaps");
        }
        let parse = |s: &str, row: usize, col: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| McError::Domain(format!("row {row}: cannot parse {col} value {s:?}")))
        };
        let mut records = Vec::new();
        let mut fstar = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let x = xcols
                .iter()
                .map(|(k, j)| parse(&rec[*j], row, &format!("x{k}")))
                .collect::<Result<Vec<_>>>()?;
            let y: usize = rec[ycol].parse().map_err(|_| {
                McError::Domain(format!(
                    "row {row}: label {:?} is not a class index",
                    &rec[ycol]
                ))
            })?;
            let weight = match wcol {
                Some(j) => parse(&rec[j], row, "w")?,
                None => 1.0,
            };
            if !fcols.is_empty() {
                fstar.push(
                    fcols
                        .iter()
                        .map(|(k, j)| parse(&rec[*j], row, &format!("fstar{k}")))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            records.push(Record::new(x, y, weight));
        }
        let classes = match (classes, fcols.len()) {
            (Some(l), 0) => l,
            (Some(l), f) if f == l => l,
            (Some(l), f) => return domain(format!("{f} fstar columns but {l} classes requested")),
            (None, 0) => records.iter().map(|r| r.y + 1).max().unwrap_or(0).max(2),
            (None, f) => f,
        };
        Self::new(records, classes, (!fcols.is_empty()).then_some(fstar))
    }

    pub fn read_csv_path(path: &Path, classes: Option<usize>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, classes)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.feature_dim()).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        header.push("w".into());
        if self.fstar.is_some() {
            header.extend((0..self.classes).map(|k| format!("fstar{k}")));
        }
        w.write_record(&header)?;
        for (i, r) in self.records.iter().enumerate() {
            let mut row: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
            row.push(r.y.to_string());
            row.push(r.weight.to_string());
            if let Some(fs) = &self.fstar {
                row.extend(fs[i].iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Coordinates used for predictions. Binary problems may use a single
/// coordinate `p = P(y = 1)`; otherwise predictions are full `l`-vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Space {
    Scalar,
    Vector { classes: usize },
}

impl Space {
    pub fn new(classes: usize, scalar: bool) -> Result<Self> {
        match (classes, scalar) {
            (l, _) if l < 2 => domain(format!("need at least 2 classes, got {l}")),
            (2, true) => Ok(Space::Scalar),
            (l, true) => domain(format!("scalar mode needs 2 classes, got {l}")),
            (l, false) => Ok(Space::Vector { classes: l }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Space::Scalar => 1,
            Space::Vector { classes } => *classes,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Space::Scalar => 2,
            Space::Vector { classes } => *classes,
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Space::Scalar)
    }

    /// Writes the label encoding of `label` into `out` (length `dim`).
    pub fn target_into(&self, label: usize, out: &mut [f64]) {
        match self {
            Space::Scalar => out[0] = if label == 1 { 1.0 } else { 0.0 },
            Space::Vector { .. } => {
                out.fill(0.0);
                out[label] = 1.0;
            }
        }
    }

    /// Writes the coordinates of a probability vector over all classes into `out`.
    pub fn project_into(&self, probs: &[f64], out: &mut [f64]) {
        match self {
            Space::Scalar => out[0] = probs[1],
            Space::Vector { .. } => out.copy_from_slice(probs),
        }
    }

    /// Probability assigned to `label` by a prediction in this space.
    pub fn component(&self, p: &[f64], label: usize) -> f64 {
        match self {
            Space::Scalar if label == 1 => p[0],
            Space::Scalar => 1.0 - p[0],
            Space::Vector { .. } => p[label],
        }
    }

    /// Label associated with a coordinate index.
    pub fn label_of_coord(&self, coord: usize) -> usize {
        match self {
            Space::Scalar => 1,
            Space::Vector { .. } => coord,
        }
    }
}

/// A group `c: X -> [0, 1]` defined by a rule over feature columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFunction {
    pub name: String,
    pub rule: GroupRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupRule {
    Ones,
    /// The column value itself, clamped to `[0, 1]`.
    Column {
        column: usize,
    },
    /// One minus the column value, clamped to `[0, 1]`.
    Complement {
        column: usize,
    },
    /// `1{x[column] >= threshold}`.
    Stump {
        column: usize,
        threshold: f64,
    },
}

impl GroupFunction {
    pub fn ones() -> Self {
        Self {
            name: "all".into(),
            rule: GroupRule::Ones,
        }
    }

    pub fn column(column: usize) -> Self {
        Self {
            name: format!("x{column}=1"),
            rule: GroupRule::Column { column },
        }
    }

    pub fn complement(column: usize) -> Self {
        Self {
            name: format!("x{column}=0"),
            rule: GroupRule::Complement { column },
        }
    }

    pub fn stump(column: usize, threshold: f64) -> Self {
        Self {
            name: format!("x{column}>={threshold}"),
            rule: GroupRule::Stump { column, threshold },
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn max_column(&self) -> Option<usize> {
        match self.rule {
            GroupRule::Ones => None,
            GroupRule::Column { column }
            | GroupRule::Complement { column }
            | GroupRule::Stump { column, .. } => Some(column),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.rule {
            GroupRule::Ones => 1.0,
            GroupRule::Column { column } => x[column].clamp(0.0, 1.0),
            GroupRule::Complement { column } => (1.0 - x[column]).clamp(0.0, 1.0),
            GroupRule::Stump { column, threshold } => {
                if x[column] >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn check_features(&self, feature_dim: usize) -> Result<()> {
        match self.max_column() {
            Some(c) if c >= feature_dim => domain(format!(
                "group {} reads column {c} but data has {feature_dim} features",
                self.name
            )),
            _ => Ok(()),
        }
    }
}

/// Group mass and the conditional slack `alpha / mass`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalStats {
    pub group: String,
    pub mass: f64,
    pub alpha_c: Option<f64>,
}

impl ConditionalStats {
    pub fn new(dataset: &Dataset, c: &GroupFunction, alpha: Option<f64>) -> Result<Self> {
        let mass = group_mass(dataset, c)?;
        let alpha_c = match alpha {
            Some(a) if mass > 0.0 => Some(a / mass),
            _ => None,
        };
        Ok(Self {
            group: c.name.clone(),
            mass,
            alpha_c,
        })
    }
}

/// Weight-normalized `E[c(x)]`.
pub fn group_mass(dataset: &Dataset, c: &GroupFunction) -> Result<f64> {
    c.check_features(dataset.feature_dim())?;
    Ok(dataset.mean(|i| c.eval(&dataset.record(i).x)))
}

/// `E[c(x) g] / E[c(x)]`; `g` receives the record and its fstar row when present.
pub fn conditional_expectation<G>(dataset: &Dataset, c: &GroupFunction, g: G) -> Result<f64>
where
    G: Fn(&Record, Option<&[f64]>) -> f64,
{
    conditional_expectation_with_floor(dataset, c, g, DEFAULT_MASS_FLOOR)
}

pub fn conditional_expectation_with_floor<G>(
    dataset: &Dataset,
    c: &GroupFunction,
    g: G,
    floor: f64,
) -> Result<f64>
where
    G: Fn(&Record, Option<&[f64]>) -> f64,
{
    let mass = group_mass(dataset, c)?;
    if mass <= floor {
        return Err(McError::InsufficientMass {
            what: format!("group {}", c.name),
            mass,
        });
    }
    let fs = dataset.fstar();
    let num = dataset.mean(|i| {
        let r = dataset.record(i);
        let cv = c.eval(&r.x);
        if cv == 0.0 {
            0.0
        } else {
            cv * g(r, fs.map(|f| f[i].as_slice()))
        }
    });
    Ok(num / mass)
}

pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return domain(format!("label {label} outside [0, {classes})"));
    }
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_point() -> Dataset {
        let recs = (0..4)
            .map(|i| Record::new(vec![i as f64, (i % 2) as f64], i % 2, 1.0))
            .collect();
        Dataset::new(recs, 2, None).unwrap()
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(1, 2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(one_hot(0, 3).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(one_hot(2, 3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(one_hot(3, 3).is_err());
    }

    #[test]
    fn mass_of_three_of_four_points() {
        let ds = four_point();
        let c = GroupFunction::stump(0, 1.0);
        assert_eq!(group_mass(&ds, &c).unwrap(), 0.75);
        assert_eq!(group_mass(&ds, &GroupFunction::ones()).unwrap(), 1.0);
    }

    #[test]
    fn validation_rejects_bad_input() {
        assert!(Dataset::new(vec![], 2, None).is_err());
        assert!(Dataset::new(vec![Record::new(vec![0.0], 2, 1.0)], 2, None).is_err());
        assert!(Dataset::new(vec![Record::new(vec![0.0], 0, -1.0)], 2, None).is_err());
        assert!(Dataset::new(vec![Record::new(vec![0.0], 0, 0.0)], 2, None).is_err());
        assert!(Dataset::new(
            vec![Record::new(vec![0.0], 0, 1.0)],
            2,
            Some(vec![vec![0.5, 0.6]])
        )
        .is_err());
    }

    #[test]
    fn zero_mass_group_is_insufficient() {
        let ds = four_point();
        let c = GroupFunction::stump(0, 10.0);
        let err = conditional_expectation(&ds, &c, |_, _| 1.0).unwrap_err();
        assert!(matches!(err, McError::InsufficientMass { mass, .. } if mass == 0.0));
    }

    #[test]
    fn exact_view_matches_fstar() {
        let recs = vec![
            Record::new(vec![0.0], 0, 2.0),
            Record::new(vec![1.0], 1, 1.0),
        ];
        let ds = Dataset::new(recs, 2, Some(vec![vec![0.3, 0.7], vec![1.0, 0.0]])).unwrap();
        let ex = ds.exact_view().unwrap();
        assert_eq!(ex.len(), 3);
        assert!((ex.total_weight() - 3.0).abs() < 1e-15);
        let at0 = GroupFunction::complement(0);
        let mean_y = conditional_expectation(&ex, &at0, |r, _| r.y as f64).unwrap();
        assert!((mean_y - 0.7).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            Record::new(vec![0.25, 1.0], 1, 0.5),
            Record::new(vec![0.1, 0.0], 0, 2.0),
        ];
        let ds = Dataset::new(recs, 2, Some(vec![vec![0.2, 0.8], vec![0.9, 0.1]])).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_defaults_weight_and_infers_classes() {
        let text = "x0,y\n0.5,0\n0.25,2\n";
        let ds = Dataset::read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(ds.classes(), 3);
        assert_eq!(ds.record(0).weight, 1.0);
        assert!(Dataset::read_csv("x0,q\n1,2\n".as_bytes(), None).is_err());
    }
}
