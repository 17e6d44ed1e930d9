use std::fs;
use std::path::Path;

use ldmc::boost::ComposedPredictor;
use ldmc::data::{Dataset, Space};
use ldmc::learner::{ClassDescriptor, HypothesisClass};
use ldmc::predictor::{BasePredictor, Predictions};
use ldmc::synth::l2_regression;
use ldmc::weights::{FamilyDescriptor, FamilyRegistry, WeightFamily};
use ldmc::{McError, Result};

use crate::{ClassArgs, DataArgs, FamilyArgs};

fn bad(msg: impl Into<String>) -> McError {
    McError::Domain(msg.into())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))
}

/// Inline JSON, `@path` to a JSON file, or `None` for anything else.
fn json_arg(s: &str) -> Result<Option<String>> {
    if let Some(p) = s.strip_prefix('@') {
        return read_text(Path::new(p)).map(Some);
    }
    if s.trim_start().starts_with('{') {
        return Ok(Some(s.to_string()));
    }
    Ok(None)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| bad(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

pub fn load_dataset(args: &DataArgs) -> Result<(Dataset, Space)> {
    if !args.data.is_file() {
        return Err(bad(format!(
            "dataset {} does not exist",
            args.data.display()
        )));
    }
    let ds = Dataset::read_csv_path(&args.data, args.classes)?;
    let space = Space::new(ds.classes(), ds.classes() == 2 && !args.vector)?;
    Ok((ds, space))
}

pub fn class_descriptor(spec: &str) -> Result<ClassDescriptor> {
    if let Some(json) = json_arg(spec)? {
        return Ok(serde_json::from_str(&json)?);
    }
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "cols" => Ok(ClassDescriptor::Columns {
            columns: parse_list(rest, "column")?,
            complements: Vec::new(),
        }),
        "edges" => {
            let cols: Vec<usize> = parse_list(rest, "column")?;
            Ok(ClassDescriptor::Columns {
                columns: cols.clone(),
                complements: cols,
            })
        }
        "stumps" => {
            let (col, ts) = rest
                .split_once(':')
                .ok_or_else(|| bad("stumps needs stumps:COLUMN:t1,t2,..."))?;
            Ok(ClassDescriptor::Stumps {
                column: col
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("bad column {col:?}")))?,
                thresholds: parse_list(ts, "threshold")?,
            })
        }
        other => Err(bad(format!(
            "unknown class form {other:?}; use cols:, edges:, stumps:, JSON, or @file"
        ))),
    }
}

pub fn load_class(args: &ClassArgs, ds: &Dataset) -> Result<HypothesisClass> {
    class_descriptor(&args.class)?.build(ds)
}

pub fn family_descriptor(args: &FamilyArgs) -> Result<FamilyDescriptor> {
    let mut desc: FamilyDescriptor = match json_arg(&args.family)? {
        Some(json) => serde_json::from_str(&json)?,
        None => FamilyDescriptor::named(&args.family),
    };
    desc.k = args.degree.or(desc.k);
    if desc.family == "degree" && desc.k.is_none() {
        desc.k = Some(2);
    }
    desc.delta = args.delta.or(desc.delta);
    desc.eta = args.basis_eta.or(desc.eta);
    desc.cap = args.basis_cap.or(desc.cap);
    Ok(desc)
}

pub fn load_family(args: &FamilyArgs, space: Space) -> Result<WeightFamily> {
    let desc = family_descriptor(args)?.with_space_defaults(space);
    let family = FamilyRegistry::default().build(&desc)?;
    if family.space != space {
        return Err(bad(format!(
            "family space {:?} does not match the data space {space:?}",
            family.space
        )));
    }
    Ok(family)
}

pub fn load_predictor(path: &Path) -> Result<ComposedPredictor> {
    ComposedPredictor::from_json(&read_text(path)?)
}

/// `fstar` or a predictor JSON path, evaluated on every record.
pub fn predictions(spec: &str, ds: &Dataset, space: Space) -> Result<Predictions> {
    if spec == "fstar" {
        return Predictions::from_fstar(ds, space);
    }
    let f = load_predictor(Path::new(spec))?;
    if ldmc::predictor::Predictor::space(&f) != space {
        return Err(bad(
            "predictor space does not match the data space (see --vector)",
        ));
    }
    Predictions::from_predictor(&f, ds)
}

pub fn base_predictor(
    spec: &str,
    ds: &Dataset,
    class: &HypothesisClass,
    space: Space,
) -> Result<BasePredictor> {
    if spec == "half" {
        return Ok(BasePredictor::half(space));
    }
    if spec == "l2" {
        if space != Space::Scalar {
            return Err(bad("the l2 base is defined for scalar binary data"));
        }
        return Ok(BasePredictor::Linear(l2_regression(class, ds)?));
    }
    if let Some(s) = spec.strip_prefix("columns:") {
        let start = s
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad start column {s:?}")))?;
        return Ok(BasePredictor::Columns { space, start });
    }
    Err(bad(format!(
        "unknown base {spec:?}; use half, columns:START, or l2"
    )))
}
