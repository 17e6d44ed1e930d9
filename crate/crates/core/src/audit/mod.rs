//! Multicalibration audits and the moment diagnostics built on them.

mod diagnostics;

pub use diagnostics::*;

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupFunction, Space, DEFAULT_MASS_FLOOR};
use crate::error::{domain, Result};
use crate::learner::{weighted_correlation, EvaluatedClass, HypothesisClass};
use crate::predictor::{Predictions, Predictor};
use crate::weights::{eval_atom, Atom, WeightFamily, WeightFunction};

/// Label encodings of every record, row-major.
pub fn targets(dataset: &Dataset, space: Space) -> Vec<f64> {
    let d = space.dim();
    let mut out = vec![0.0; dataset.len() * d];
    for (r, t) in dataset.records().iter().zip(out.chunks_mut(d)) {
        space.target_into(r.y, t);
    }
    out
}

/// `<w(f(x_i)), y_i - f(x_i)>` for the given records (all when `indices` is `None`).
pub(crate) fn atom_residuals(
    preds: &Predictions,
    targets: &[f64],
    w: &WeightFunction,
    coord: Option<usize>,
    indices: Option<&[usize]>,
) -> Vec<f64> {
    let d = preds.space().dim();
    let mut buf = vec![0.0; d];
    let mut one = |i: usize| {
        let p = preds.row(i);
        eval_atom(w, coord, p, &mut buf);
        let t = &targets[i * d..(i + 1) * d];
        let mut s = 0.0;
        for j in 0..d {
            s += buf[j] * (t[j] - p[j]);
        }
        s
    };
    match indices {
        Some(idx) => idx.iter().map(|&i| one(i)).collect(),
        None => (0..preds.len()).map(one).collect(),
    }
}

/// `E[c(x) <w(f(x)), y - f(x)>]`.
pub fn violation(
    preds: &Predictions,
    c: &GroupFunction,
    w: &WeightFunction,
    dataset: &Dataset,
) -> Result<f64> {
    violation_atom(preds, c, w, None, dataset)
}

/// As [`violation`], with the weight restricted to one coordinate when `coord` is set.
pub fn violation_atom(
    preds: &Predictions,
    c: &GroupFunction,
    w: &WeightFunction,
    coord: Option<usize>,
    dataset: &Dataset,
) -> Result<f64> {
    preds.check_aligned(dataset)?;
    c.check_features(dataset.feature_dim())?;
    let t = targets(dataset, preds.space());
    let z = atom_residuals(preds, &t, w, coord, None);
    let cv: Vec<f64> = dataset.records().iter().map(|r| c.eval(&r.x)).collect();
    Ok(weighted_correlation(
        &dataset.weights(),
        &cv,
        &z,
        dataset.total_weight(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub group: String,
    pub weight: String,
    pub label: Option<usize>,
    pub violation: f64,
    /// `E[c(x)]`.
    pub mass: f64,
    /// `E[c(x) sum_j w_j(f(x))]`, the mass the constraint averages over.
    pub weight_mass: f64,
    /// `violation / weight_mass`; for a cube weight this is the calibration error inside the cell.
    pub normalized_violation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
    pub max_abs: f64,
    /// Index into `entries` of the first entry attaining `max_abs`.
    pub witness: usize,
}

impl AuditReport {
    pub fn witness_entry(&self) -> &AuditEntry {
        &self.entries[self.witness]
    }

    /// Largest `|normalized_violation|` among entries with `weight_mass >= min_mass`.
    pub fn max_normalized(&self, min_mass: f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.weight_mass >= min_mass)
            .filter_map(|e| e.normalized_violation)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Entries ordered by decreasing `|violation|`, ties kept in audit order.
    pub fn sorted(&self) -> Vec<&AuditEntry> {
        let mut v: Vec<&AuditEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| b.violation.abs().total_cmp(&a.violation.abs()));
        v
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["group", "weight", "label", "violation", "mass"])?;
        for e in &self.entries {
            w.write_record([
                e.group.clone(),
                e.weight.clone(),
                e.label.map(|l| l.to_string()).unwrap_or_default(),
                e.violation.to_string(),
                e.mass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let gw = self
            .entries
            .iter()
            .map(|e| e.group.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let ww = self
            .entries
            .iter()
            .map(|e| e.weight.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<gw$}  {:<ww$}  {:>5}  {:>14}  {:>10}",
            "group", "weight", "label", "violation", "mass"
        );
        for e in &self.entries {
            let label = e.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<gw$}  {:<ww$}  {:>5}  {:>14.6e}  {:>10.6}",
                e.group, e.weight, label, e.violation, e.mass
            );
        }
        let wit = self.witness_entry();
        let _ = writeln!(
            s,
            "max |violation| = {:.6e} at ({}, {})",
            self.max_abs, wit.group, wit.weight
        );
        s
    }
}

/// Audits precomputed predictions over every (group, constraint) pair.
pub fn audit_predictions(
    preds: &Predictions,
    class: &EvaluatedClass,
    family: &WeightFamily,
    dataset: &Dataset,
) -> Result<AuditReport> {
    preds.check_aligned(dataset)?;
    if preds.space() != family.space {
        return domain("predictions and weight family use different prediction spaces");
    }
    let members = family.listed()?;
    let atoms: Vec<Atom> = family.atoms()?;
    if atoms.is_empty() || class.is_empty() {
        return domain("audit needs a non-empty class and family");
    }
    let space = preds.space();
    let t = targets(dataset, space);
    let weights = dataset.weights();
    let total = dataset.total_weight();
    let d = space.dim();

    struct AtomData {
        id: String,
        label: Option<usize>,
        z: Vec<f64>,
        wsum: Vec<f64>,
    }
    let per_atom: Vec<AtomData> = atoms
        .par_iter()
        .map(|a| {
            let w = &members[a.member];
            let z = atom_residuals(preds, &t, w, a.coord, None);
            let mut buf = vec![0.0; d];
            let wsum = (0..preds.len())
                .map(|i| {
                    eval_atom(w, a.coord, preds.row(i), &mut buf);
                    buf.iter().sum()
                })
                .collect();
            AtomData {
                id: family.atom_id(*a).unwrap_or_default(),
                label: a.coord.map(|c| space.label_of_coord(c)),
                z,
                wsum,
            }
        })
        .collect();

    let entries: Vec<AuditEntry> = class
        .values
        .par_iter()
        .zip(&class.class.members)
        .flat_map_iter(|(cv, g)| {
            let mass = weighted_correlation(&weights, cv, &vec![1.0; cv.len()], total);
            per_atom
                .iter()
                .map(|a| {
                    let violation = weighted_correlation(&weights, cv, &a.z, total);
                    let weight_mass = weighted_correlation(&weights, cv, &a.wsum, total);
                    AuditEntry {
                        group: g.name.clone(),
                        weight: a.id.clone(),
                        label: a.label,
                        violation,
                        mass,
                        weight_mass,
                        normalized_violation: (weight_mass > DEFAULT_MASS_FLOOR)
                            .then(|| violation / weight_mass),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut witness = 0;
    let mut max_abs = -1.0;
    for (i, e) in entries.iter().enumerate() {
        if e.violation.abs() > max_abs {
            max_abs = e.violation.abs();
            witness = i;
        }
    }
    Ok(AuditReport {
        entries,
        max_abs,
        witness,
    })
}

pub fn audit(
    f: &dyn Predictor,
    class: &HypothesisClass,
    family: &WeightFamily,
    dataset: &Dataset,
) -> Result<AuditReport> {
    let preds = Predictions::from_predictor(f, dataset)?;
    audit_predictions(&preds, &class.evaluate(dataset)?, family, dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use crate::weights::{constant_family, monomial_family};

    fn tiny() -> (Dataset, Predictions) {
        let recs = vec![
            Record::new(vec![0.0], 1, 1.0),
            Record::new(vec![1.0], 0, 1.0),
            Record::new(vec![1.0], 1, 2.0),
        ];
        let ds = Dataset::new(recs, 2, None).unwrap();
        let preds =
            Predictions::from_rows(Space::Scalar, &[vec![0.5], vec![0.25], vec![0.75]]).unwrap();
        (ds, preds)
    }

    #[test]
    fn violation_by_hand() {
        let (ds, preds) = tiny();
        let c = GroupFunction::column(0);
        let w = WeightFunction::Monomial {
            coord: 0,
            factors: vec![0],
        };
        let want = (1.0 * 0.25 * (0.0 - 0.25) + 2.0 * 0.75 * (1.0 - 0.75)) / 4.0;
        assert!((violation(&preds, &c, &w, &ds).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_have_zero_violation() {
        let recs = vec![
            Record::new(vec![0.0], 1, 1.0),
            Record::new(vec![1.0], 0, 1.0),
        ];
        let ds = Dataset::new(recs, 2, None).unwrap();
        let preds = Predictions::from_rows(Space::Scalar, &[vec![1.0], vec![0.0]]).unwrap();
        let class =
            HypothesisClass::new("c", vec![GroupFunction::ones(), GroupFunction::column(0)])
                .unwrap();
        let rep = audit_predictions(
            &preds,
            &class.evaluate(&ds).unwrap(),
            &monomial_family(Space::Scalar, 3).unwrap(),
            &ds,
        )
        .unwrap();
        assert_eq!(rep.max_abs, 0.0);
        assert_eq!(rep.entries.len(), 6);
    }

    #[test]
    fn report_outputs() {
        let (ds, preds) = tiny();
        let class =
            HypothesisClass::new("c", vec![GroupFunction::ones(), GroupFunction::column(0)])
                .unwrap();
        let rep = audit_predictions(
            &preds,
            &class.evaluate(&ds).unwrap(),
            &constant_family(Space::Scalar),
            &ds,
        )
        .unwrap();
        let wit = rep.witness_entry();
        assert_eq!(rep.max_abs, wit.violation.abs());
        assert!(rep.entries.iter().all(|e| e.violation.abs() <= rep.max_abs));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("group,weight,label,violation,mass"));
        assert!(rep.to_text().contains("max |violation|"));
        assert_eq!(rep.sorted()[0].violation.abs(), rep.max_abs);
    }
}
