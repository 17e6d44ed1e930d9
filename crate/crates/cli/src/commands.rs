use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use ldmc::audit::{
    audit_predictions, confusion, covariance_report, sandwich_report, AuditReport, ConfusionReport,
    CovarianceReport, EvalMode, SandwichReport,
};
use ldmc::boost::{multicalibrate_from, BoostConfig, ComposedPredictor, DataMode};
use ldmc::data::{group_mass, Space};
use ldmc::experiment::{medians, run_compare, write_compare_csv, CompareConfig};
use ldmc::predictor::{BasePredictor, Predictions, Predictor};
use ldmc::synth::{
    counterexample_dataset, generate, l2_regression, l2_regression_pinned, logistic_regression,
    negative_covariance_family, LabelMode, SynthSpec,
};
use ldmc::weights::{constant_family, monomial_family};
use ldmc::{McError, Result};
use serde::Serialize;

use crate::inputs::{
    base_predictor, family_descriptor, load_class, load_dataset, load_family, predictions,
    read_text,
};
use crate::{
    AuditArgs, Cli, Command, CompareArgs, CounterexampleArgs, DiagnoseArgs, Format, GenArgs,
    LabelModeArg, ModeArg, Preset, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Audit(a) => audit(cli, a),
        Command::Diagnose(a) => diagnose(cli, a),
        Command::Compare(a) => compare(cli, a),
        Command::Counterexample(a) => counterexample(cli, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| McError::Domain(format!("cannot write {}: {e}", path.display())))
}

fn check_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(McError::Domain(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct GroupMassRow {
    group: String,
    mass: f64,
}

#[derive(Serialize)]
struct GenSummary {
    out: String,
    records: usize,
    classes: usize,
    total_weight: f64,
    groups: Vec<GroupMassRow>,
}

fn gen(cli: &Cli, a: &GenArgs) -> Result<u8> {
    let mut spec: SynthSpec = match (&a.spec, a.preset) {
        (Some(path), _) => serde_json::from_str(&read_text(path)?)?,
        (None, Some(Preset::Adversarial)) => SynthSpec::adversarial(a.n, 0),
        (None, _) => {
            let mode = match a.label_mode {
                LabelModeArg::Sampled => LabelMode::Sampled,
                LabelModeArg::Exact => LabelMode::Exact,
            };
            SynthSpec::planted(a.classes, a.n, 0, mode)
        }
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    spec.validate()?;
    if a.print_spec {
        print_json(&spec)?;
        return Ok(0);
    }
    let out = a.out.as_ref().expect("clap requires --out");
    check_parent(out)?;
    let ds = generate(&spec)?;
    ds.write_csv(create(out)?)?;
    let groups = spec
        .groups
        .iter()
        .map(|g| {
            Ok(GroupMassRow {
                group: g.name.clone(),
                mass: group_mass(&ds, g)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = GenSummary {
        out: out.display().to_string(),
        records: ds.len(),
        classes: ds.classes(),
        total_weight: ds.total_weight(),
        groups,
    };
    match cli.format {
        Format::Json => print_json(&summary)?,
        Format::Csv => {
            println!("group,mass");
            for g in &summary.groups {
                println!("{},{}", g.group, g.mass);
            }
        }
        Format::Text => {
            println!(
                "wrote {} records ({} classes, total weight {}) to {}",
                summary.records, summary.classes, summary.total_weight, summary.out
            );
            for g in &summary.groups {
                println!("  {:<12} mass {:.6}", g.group, g.mass);
            }
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct TrainSummary {
    predictor: String,
    iterations: usize,
    alpha: f64,
    eta: f64,
    final_audit: f64,
    witness_group: String,
    witness_weight: String,
    initial_potential_proxy: f64,
    final_potential_proxy: f64,
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<u8> {
    check_parent(&a.out)?;
    if let Some(t) = &a.trace {
        check_parent(t)?;
    }
    let (ds, space) = load_dataset(&a.data)?;
    let class = load_class(&a.class, &ds)?;
    let family = load_family(&a.family, space)?;
    let base = base_predictor(&a.base, &ds, &class, space)?;
    let config = BoostConfig {
        eta: a.eta,
        max_iterations: a.max_iterations,
        data_mode: a
            .chunks
            .map_or(DataMode::Reuse, |chunks| DataMode::Chunked { chunks }),
        seed: cli.seed.unwrap_or(0),
        simplex_project: a.simplex,
        learner: a.learner.clone(),
        ..BoostConfig::new(a.alpha)
    };
    let (f, trace) = match multicalibrate_from(&ds, &class, &family, base, &config) {
        Ok(r) => r,
        Err(McError::NonTermination { iterations, trace }) => {
            if let Some(t) = &a.trace {
                trace.write_csv(create(t)?)?;
            }
            return Err(McError::NonTermination { iterations, trace });
        }
        Err(e) => return Err(e),
    };
    let mut w = create(&a.out)?;
    w.write_all(f.to_json()?.as_bytes())?;
    w.flush()?;
    if let Some(t) = &a.trace {
        trace.write_csv(create(t)?)?;
    }
    let preds = Predictions::from_predictor(&f, &ds)?;
    let report = audit_predictions(&preds, &class.evaluate(&ds)?, &family, &ds)?;
    let wit = report.witness_entry();
    let summary = TrainSummary {
        predictor: a.out.display().to_string(),
        iterations: trace.iterations(),
        alpha: trace.alpha,
        eta: trace.eta,
        final_audit: report.max_abs,
        witness_group: wit.group.clone(),
        witness_weight: wit.weight.clone(),
        initial_potential_proxy: trace.initial_potential_proxy,
        final_potential_proxy: trace
            .records
            .last()
            .map_or(trace.initial_potential_proxy, |r| r.potential_proxy),
    };
    match cli.format {
        Format::Json => print_json(&summary)?,
        Format::Csv => trace.write_csv(io::stdout().lock())?,
        Format::Text => println!(
            "trained in {} updates (alpha {}, eta {}); in-sample audit max {:.6e} at ({}, {}); wrote {}",
            summary.iterations,
            summary.alpha,
            summary.eta,
            summary.final_audit,
            summary.witness_group,
            summary.witness_weight,
            summary.predictor
        ),
    }
    Ok(0)
}

#[derive(Serialize)]
struct AuditOutput<'a> {
    family: String,
    alpha: Option<f64>,
    pass: Option<bool>,
    #[serde(flatten)]
    report: &'a AuditReport,
}

fn audit(cli: &Cli, a: &AuditArgs) -> Result<u8> {
    let (ds, space) = load_dataset(&a.data)?;
    let class = load_class(&a.class, &ds)?;
    let family = load_family(&a.family, space)?;
    if let Some(alpha) = a.alpha {
        if !(alpha >= 0.0) {
            return Err(McError::Domain("--alpha must be non-negative".into()));
        }
    }
    let preds = predictions(&a.predictor, &ds, space)?;
    let report = audit_predictions(&preds, &class.evaluate(&ds)?, &family, &ds)?;
    let pass = a.alpha.map(|alpha| report.max_abs <= alpha);
    match cli.format {
        Format::Json => print_json(&AuditOutput {
            family: family_descriptor(&a.family)?.family,
            alpha: a.alpha,
            pass,
            report: &report,
        })?,
        Format::Csv => report.write_csv(io::stdout().lock())?,
        Format::Text => {
            print!("{}", report.to_text());
            if let (Some(alpha), Some(p)) = (a.alpha, pass) {
                println!("gate alpha = {alpha}: {}", if p { "PASS" } else { "FAIL" });
            }
        }
    }
    Ok(if pass == Some(false) { 1 } else { 0 })
}

#[derive(Serialize)]
struct DiagnoseOutput {
    alpha: f64,
    k: usize,
    mode: EvalMode,
    min_mass: f64,
    sandwich: SandwichReport,
    confusion: Vec<ConfusionReport>,
    covariance: Vec<CovarianceReport>,
    pass: bool,
}

fn diagnose(cli: &Cli, a: &DiagnoseArgs) -> Result<u8> {
    let (ds, space) = load_dataset(&a.data)?;
    ds.require_fstar()?;
    let class = load_class(&a.class, &ds)?;
    let preds = predictions(&a.predictor, &ds, space)?;
    let mode = match a.mode {
        ModeArg::Exact => EvalMode::Exact,
        ModeArg::Sampled => EvalMode::Sampled,
    };
    let min_mass = a.min_mass.unwrap_or(2.0 * a.alpha);
    let sandwich = sandwich_report(&preds, &ds, &class, a.degree, a.alpha, mode, min_mass)?;
    let labels: Vec<usize> = match space {
        Space::Scalar => vec![1],
        Space::Vector { classes } => (0..classes).collect(),
    };
    let mut conf = Vec::new();
    let mut cov = Vec::new();
    for c in &class.members {
        if sandwich.skipped.iter().any(|s| s.group == c.name) {
            continue;
        }
        conf.push(confusion(&preds, &ds, c, a.alpha, mode)?);
        for &l in &labels {
            cov.push(covariance_report(&preds, &ds, l, c, a.alpha, mode)?);
        }
    }
    let pass = sandwich.all_pass
        && conf.iter().all(|r| r.max_norm_ok && r.psd_ok)
        && cov.iter().all(CovarianceReport::passes);
    let out = DiagnoseOutput {
        alpha: a.alpha,
        k: a.degree,
        mode,
        min_mass,
        sandwich,
        confusion: conf,
        covariance: cov,
        pass,
    };
    match cli.format {
        Format::Json => print_json(&out)?,
        Format::Csv => {
            println!("check,group,label,d,value,pass");
            for r in &out.sandwich.rows {
                println!(
                    "sandwich,{},{},{},{},{}",
                    r.group,
                    r.label,
                    r.d,
                    r.moment_f,
                    r.passes()
                );
            }
            for r in &out.confusion {
                println!(
                    "max_norm_gap,{},,,{},{}",
                    r.group, r.max_norm_gap, r.max_norm_ok
                );
                println!(
                    "min_eig_gap,{},,,{},{}",
                    r.group, r.min_eig_gap_conditional, r.psd_ok
                );
            }
            for r in &out.covariance {
                println!(
                    "covariance,{},{},,{},{}",
                    r.group,
                    r.label,
                    r.cov_f_fstar,
                    r.passes()
                );
            }
        }
        Format::Text => print!("{}", diagnose_text(&out)),
    }
    Ok(if out.pass { 0 } else { 1 })
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn diagnose_text(out: &DiagnoseOutput) -> String {
    let mut s = String::new();
    let sw = &out.sandwich;
    let failing = sw.rows.iter().filter(|r| !r.passes()).count();
    s += &format!(
        "moment sandwich (k = {}, alpha = {}): {} rows, {} failing, {} groups skipped\n",
        out.k,
        out.alpha,
        sw.rows.len(),
        failing,
        sw.skipped.len()
    );
    for r in sw.rows.iter().filter(|r| !r.passes()) {
        s += &format!("  FAIL {} label {} d {}\n", r.group, r.label, r.d);
    }
    for r in &out.confusion {
        s += &format!(
            "confusion {:<10} max-norm gap {:.6} (bound {:.6}) {}  min eig {:.3e} {}\n",
            r.group,
            r.max_norm_gap,
            r.alpha_c + r.allowance,
            flag(r.max_norm_ok),
            r.min_eig_gap_conditional,
            flag(r.psd_ok)
        );
    }
    for r in &out.covariance {
        s += &format!(
            "covariance {:<10} label {} Cov[f,y] = {:.6} Var[f] = {:.6} Var[f*] = {:.6} {}\n",
            r.group,
            r.label,
            if out.mode == EvalMode::Exact {
                r.cov_f_fstar
            } else {
                r.cov_f_y
            },
            r.var_f,
            r.var_fstar,
            flag(r.passes())
        );
    }
    s += &format!("overall: {}\n", flag(out.pass));
    s
}

fn compare(cli: &Cli, a: &CompareArgs) -> Result<u8> {
    let mut cfg: CompareConfig = match &a.config {
        Some(path) => serde_json::from_str(&read_text(path)?)?,
        None => CompareConfig {
            spec: match a.preset {
                Some(Preset::Planted) => SynthSpec::planted(2, 1000, 0, LabelMode::Sampled),
                _ => SynthSpec::adversarial(1000, 0),
            },
            sizes: vec![500, 2000, 8000],
            seeds: Vec::new(),
            alphas: vec![0.02],
            test_fraction: 0.2,
            delta: 0.1,
        },
    };
    if let Some(v) = &a.sizes {
        cfg.sizes = v.clone();
    }
    if let Some(v) = &a.alphas {
        cfg.alphas = v.clone();
    }
    if let Some(d) = a.delta {
        cfg.delta = d;
    }
    if let Some(v) = &a.seeds {
        cfg.seeds = v.clone();
    } else if cfg.seeds.is_empty() {
        let s = cli.seed.unwrap_or(0);
        cfg.seeds = (s..s + 5).collect();
    }
    if let Some(out) = &a.out {
        check_parent(out)?;
    }
    let rows = run_compare(&cfg)?;
    if let Some(out) = &a.out {
        write_compare_csv(&rows, create(out)?)?;
    }
    match cli.format {
        Format::Json => print_json(&rows)?,
        Format::Csv => write_compare_csv(&rows, io::stdout().lock())?,
        Format::Text => {
            for &alpha in &cfg.alphas {
                println!("alpha = {alpha}: medians over {} seeds", cfg.seeds.len());
                println!(
                    "{:<8} {:>6} {:<6} {:<20} {:>12}",
                    "method", "size", "split", "metric", "median"
                );
                for ((m, size, split, metric), v) in medians(&rows, alpha) {
                    println!("{m:<8} {size:>6} {split:<6} {metric:<20} {v:>12.6}");
                }
            }
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            if failed > 0 {
                println!("{failed} rows failed; see the status column");
            }
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct Witness {
    group: String,
    weight: String,
    violation: f64,
}

#[derive(Serialize)]
struct CounterexampleReport {
    eps: f64,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    labels: Vec<usize>,
    groups: Vec<String>,
    fitted: Vec<f64>,
    /// Least-squares coefficients with the first group's coefficient fixed at 1/2.
    coefficients: Vec<f64>,
    min_norm_coefficients: Vec<f64>,
    logistic_coefficients: Vec<f64>,
    logistic_fitted: Vec<f64>,
    multiaccuracy_audit: f64,
    degree2_audit: f64,
    degree2_witness: Witness,
    covariance_c11: f64,
    covariance: CovarianceReport,
}

fn counterexample(cli: &Cli, a: &CounterexampleArgs) -> Result<u8> {
    let (ds, class) = match a.eps {
        Some(e) => negative_covariance_family(e)?,
        None => counterexample_dataset(),
    };
    if let Some(p) = &a.write_data {
        check_parent(p)?;
        ds.write_csv(create(p)?)?;
    }
    let l2 = l2_regression(&class, &ds)?;
    if let Some(p) = &a.write_predictor {
        check_parent(p)?;
        let f =
            ComposedPredictor::from_base(BasePredictor::Linear(l2.clone()), Some(ds.feature_dim()));
        let mut w = create(p)?;
        w.write_all(f.to_json()?.as_bytes())?;
        w.flush()?;
    }
    let pinned = l2_regression_pinned(&class, &ds, &[(0, 0.5)])?;
    let logit = logistic_regression(&class, &ds, 200_000, 2.0)?;
    let fitted = ds
        .records()
        .iter()
        .map(|r| Ok(l2.predict(&r.x)?[0]))
        .collect::<Result<Vec<_>>>()?;
    let logistic_fitted = ds
        .records()
        .iter()
        .map(|r| Ok(logit.predict(&r.x)?[0]))
        .collect::<Result<Vec<_>>>()?;
    let preds = Predictions::from_predictor(&l2, &ds)?;
    let ev = class.evaluate(&ds)?;
    let ma = audit_predictions(&preds, &ev, &constant_family(Space::Scalar), &ds)?;
    let mc2 = audit_predictions(&preds, &ev, &monomial_family(Space::Scalar, 2)?, &ds)?;
    let wit = mc2.witness_entry();
    let covariance = covariance_report(&preds, &ds, 1, &class.members[1], 0.0, EvalMode::Exact)?;
    let report = CounterexampleReport {
        eps: a.eps.unwrap_or(1.0 / 6.0),
        points: ds.records().iter().map(|r| r.x.clone()).collect(),
        weights: ds.weights(),
        labels: ds.records().iter().map(|r| r.y).collect(),
        groups: class.members.iter().map(|g| g.name.clone()).collect(),
        fitted,
        coefficients: pinned.coefficients.clone(),
        min_norm_coefficients: l2.coefficients.clone(),
        logistic_coefficients: logit.coefficients.clone(),
        logistic_fitted,
        multiaccuracy_audit: ma.max_abs,
        degree2_audit: mc2.max_abs,
        degree2_witness: Witness {
            group: wit.group.clone(),
            weight: wit.weight.clone(),
            violation: wit.violation,
        },
        covariance_c11: covariance.cov_f_y,
        covariance,
    };
    match cli.format {
        Format::Json => print_json(&report)?,
        Format::Csv => {
            println!("quantity,value");
            for (i, v) in report.fitted.iter().enumerate() {
                println!("fitted_{i},{v}");
            }
            for (g, v) in report.groups.iter().zip(&report.coefficients) {
                println!("coefficient_{g},{v}");
            }
            for (g, v) in report.groups.iter().zip(&report.logistic_coefficients) {
                println!("logistic_{g},{v}");
            }
            println!("multiaccuracy_audit,{}", report.multiaccuracy_audit);
            println!("degree2_audit,{}", report.degree2_audit);
            println!("covariance_c11,{}", report.covariance_c11);
        }
        Format::Text => {
            let pt = |x: &[f64]| format!("({},{})", x[0], x[1]);
            println!("points (x1,x2) with weight and label:");
            for ((x, w), y) in report
                .points
                .iter()
                .zip(&report.weights)
                .zip(&report.labels)
            {
                println!("  {} weight {:.6} y {}", pt(x), w, y);
            }
            println!("least-squares fit over {}:", report.groups.join(", "));
            for (x, f) in report.points.iter().zip(&report.fitted) {
                println!("  f{} = {:.12}", pt(x), f);
            }
            let coef: Vec<String> = report
                .groups
                .iter()
                .zip(&report.coefficients)
                .map(|(g, v)| format!("{g} = {v:.12}"))
                .collect();
            println!(
                "coefficients ({} pinned to 1/2): {}",
                report.groups[0],
                coef.join(", ")
            );
            let theta: Vec<String> = report
                .groups
                .iter()
                .zip(&report.logistic_coefficients)
                .map(|(g, v)| format!("{g} = {v:.6}"))
                .collect();
            println!("logistic coefficients: {}", theta.join(", "));
            let lf: Vec<String> = report
                .logistic_fitted
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect();
            println!("logistic fitted values: {}", lf.join(", "));
            println!(
                "multiaccuracy audit max: {:.3e}",
                report.multiaccuracy_audit
            );
            println!(
                "degree-2 audit max: {:.12} at ({}, {})",
                report.degree2_audit, report.degree2_witness.group, report.degree2_witness.weight
            );
            println!(
                "Cov[f, y | {}] = {:.12}",
                report.groups[1], report.covariance_c11
            );
        }
    }
    Ok(0)
}
