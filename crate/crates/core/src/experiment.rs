//! Seeded train/test comparison of multiaccuracy, degree-2, and interval boosting.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::experiment_metrics;
use crate::boost::{multicalibrate_from, BoostConfig};
use crate::data::{Dataset, Space};
use crate::error::{domain, Result};
use crate::learner::HypothesisClass;
use crate::predictor::{BasePredictor, Predictions};
use crate::synth::{generate, SynthSpec};
use crate::weights::{FamilyDescriptor, FamilyRegistry, WeightFamily};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MA")]
    Ma,
    #[serde(rename = "MC2")]
    Mc2,
    #[serde(rename = "MC-full")]
    McFull,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ma, Method::Mc2, Method::McFull];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ma => "MA",
            Method::Mc2 => "MC2",
            Method::McFull => "MC-full",
        }
    }

    pub fn family(self, space: Space, delta: f64) -> Result<WeightFamily> {
        let desc = match self {
            Method::Ma => FamilyDescriptor::named("ma"),
            Method::Mc2 => FamilyDescriptor {
                k: Some(2),
                ..FamilyDescriptor::named("degree")
            },
            Method::McFull => FamilyDescriptor {
                delta: Some(delta),
                ..FamilyDescriptor::named("interval")
            },
        };
        FamilyRegistry::default().build(&desc.with_space_defaults(space))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub spec: SynthSpec,
    /// Number of generated records per cell before the train/test split.
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Cell width of the interval family used by `MC-full`.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_delta() -> f64 {
    0.1
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.spec.classes != 2 {
            return domain("the comparison runs on binary specs");
        }
        if self.sizes.is_empty() || self.seeds.is_empty() || self.alphas.is_empty() {
            return domain("sizes, seeds, and alphas must be non-empty");
        }
        if self.sizes.iter().any(|&n| n < 10) {
            return domain("every size must be at least 10");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return domain("test_fraction must lie in (0, 1)");
        }
        for &a in &self.alphas {
            BoostConfig::new(a).validate()?;
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return domain("delta must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub size: usize,
    pub seed: u64,
    pub alpha: f64,
    pub split: String,
    pub metric: String,
    pub value: f64,
    /// `ok`, or the error that stopped this cell.
    pub status: String,
}

/// Seeded shuffle into `(train, test)`, test taking `round(n * test_fraction)` records.
pub fn train_test_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return domain(format!(
            "cannot split {n} records with test fraction {test_fraction}"
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}

fn base_for(spec: &SynthSpec) -> BasePredictor {
    match spec.score_start() {
        Some(start) => BasePredictor::Columns {
            space: Space::Scalar,
            start: start + 1,
        },
        None => BasePredictor::half(Space::Scalar),
    }
}

fn cell_rows(
    cfg: &CompareConfig,
    method: Method,
    size: usize,
    seed: u64,
    alpha: f64,
) -> Vec<CompareRow> {
    let row = |split: &str, metric: &str, value: f64, status: &str| CompareRow {
        method: method.name().into(),
        size,
        seed,
        alpha,
        split: split.into(),
        metric: metric.into(),
        value,
        status: status.into(),
    };
    let run = || -> Result<Vec<(String, String, f64)>> {
        let spec = SynthSpec {
            n: size,
            seed,
            ..cfg.spec.clone()
        };
        let data = generate(&spec)?;
        let (train, test) = train_test_split(&data, cfg.test_fraction, seed ^ 0x5eed)?;
        let class = HypothesisClass::new("spec", spec.groups.clone())?;
        let family = method.family(Space::Scalar, cfg.delta)?;
        let config = BoostConfig {
            seed,
            ..BoostConfig::new(alpha)
        };
        let (f, _) = multicalibrate_from(&train, &class, &family, base_for(&spec), &config)?;
        let mut out = Vec::new();
        for (split, ds) in [("train", &train), ("test", &test)] {
            let preds = Predictions::from_predictor(&f, ds)?;
            let m = experiment_metrics(&preds, &class, ds)?;
            out.push((split.into(), "excess_variance".into(), m.excess_variance));
            out.push((
                split.into(),
                "multiaccuracy_error".into(),
                m.multiaccuracy_error,
            ));
        }
        Ok(out)
    };
    match run() {
        Ok(vals) => vals
            .into_iter()
            .map(|(s, m, v)| row(&s, &m, v, "ok"))
            .collect(),
        Err(e) => {
            let msg = e.to_string();
            let mut rows = Vec::new();
            for split in ["train", "test"] {
                for metric in ["excess_variance", "multiaccuracy_error"] {
                    rows.push(row(split, metric, f64::NAN, &msg));
                }
            }
            rows
        }
    }
}

/// Trains every method for every (alpha, size, seed) cell in parallel and
/// returns long-format rows sorted by alpha, method, size, seed, split, metric.
pub fn run_compare(cfg: &CompareConfig) -> Result<Vec<CompareRow>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &alpha in &cfg.alphas {
        for &size in &cfg.sizes {
            for &seed in &cfg.seeds {
                for m in Method::ALL {
                    cells.push((m, size, seed, alpha));
                }
            }
        }
    }
    let mut rows: Vec<CompareRow> = cells
        .par_iter()
        .flat_map_iter(|&(m, size, seed, alpha)| cell_rows(cfg, m, size, seed, alpha))
        .collect();
    rows.sort_by(|a, b| {
        a.alpha
            .total_cmp(&b.alpha)
            .then_with(|| a.method.cmp(&b.method))
            .then(a.size.cmp(&b.size))
            .then(a.seed.cmp(&b.seed))
            .then_with(|| a.split.cmp(&b.split))
            .then_with(|| a.metric.cmp(&b.metric))
    });
    Ok(rows)
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method", "size", "seed", "split", "metric", "value", "alpha", "status",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.size.to_string(),
            r.seed.to_string(),
            r.split.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.alpha.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median over seeds of successful rows, keyed by `(method, size, split, metric)`.
pub fn medians(rows: &[CompareRow], alpha: f64) -> BTreeMap<(String, usize, String, String), f64> {
    let mut groups: BTreeMap<(String, usize, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.alpha == alpha && r.status == "ok") {
        groups
            .entry((r.method.clone(), r.size, r.split.clone(), r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let m = v.len();
            let med = if m % 2 == 1 {
                v[m / 2]
            } else {
                0.5 * (v[m / 2 - 1] + v[m / 2])
            };
            (k, med)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::LabelMode;

    #[test]
    fn split_is_seeded_and_disjoint() {
        let ds = generate(&SynthSpec::planted(2, 100, 3, LabelMode::Sampled)).unwrap();
        let (a, b) = train_test_split(&ds, 0.2, 7).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        assert_eq!(train_test_split(&ds, 0.2, 7).unwrap().0, a);
    }

    #[test]
    fn row_count() {
        let cfg = CompareConfig {
            spec: SynthSpec::adversarial(200, 0),
            sizes: vec![200],
            seeds: vec![1, 2],
            alphas: vec![0.1],
            test_fraction: 0.2,
            delta: 0.25,
        };
        let rows = run_compare(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 2 * 2);
        assert!(rows.iter().all(|r| r.status == "ok"), "{rows:?}");
        let meds = medians(&rows, 0.1);
        assert_eq!(meds.len(), 3 * 2 * 2);
    }
}
