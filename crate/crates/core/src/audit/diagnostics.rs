use serde::{Deserialize, Serialize};

use super::audit_predictions;
use crate::data::{Dataset, GroupFunction, Space, DEFAULT_MASS_FLOOR};
use crate::error::{domain, McError, Result};
use crate::learner::{EvaluatedClass, HypothesisClass};
use crate::numeric::{symmetric_eigenvalues, CompensatedSum, SquareMatrix};
use crate::predictor::Predictions;
use crate::weights::WeightFamily;

/// How inequality flags treat the stored ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// `fstar` is the exact conditional; flags use a fixed tolerance.
    Exact,
    /// Labels are draws from `fstar`; flags add `3 sigma / sqrt(n_eff)`.
    Sampled,
}

pub const EXACT_TOLERANCE: f64 = 1e-9;

/// A dataset restricted (softly) to one group.
struct GroupView<'a> {
    dataset: &'a Dataset,
    cv: Vec<f64>,
    mass: f64,
}

impl<'a> GroupView<'a> {
    fn new(dataset: &'a Dataset, c: &GroupFunction) -> Result<Self> {
        c.check_features(dataset.feature_dim())?;
        let cv: Vec<f64> = dataset.records().iter().map(|r| c.eval(&r.x)).collect();
        let mass = dataset.mean(|i| cv[i]);
        Ok(Self { dataset, cv, mass })
    }

    fn require_mass(&self, name: &str, floor: f64) -> Result<()> {
        if self.mass <= floor {
            return Err(McError::InsufficientMass {
                what: format!("group {name}"),
                mass: self.mass,
            });
        }
        Ok(())
    }

    /// `E_{D_c}[g]`.
    fn mean<G: Fn(usize) -> f64>(&self, g: G) -> f64 {
        let cv = &self.cv;
        self.dataset
            .mean(|i| if cv[i] == 0.0 { 0.0 } else { cv[i] * g(i) })
            / self.mass
    }

    fn n_eff(&self) -> f64 {
        let mut s = CompensatedSum::new();
        let mut s2 = CompensatedSum::new();
        for (r, c) in self.dataset.records().iter().zip(&self.cv) {
            let v = r.weight * c;
            s.add(v);
            s2.add(v * v);
        }
        let s2 = s2.value();
        if s2 > 0.0 {
            s.value() * s.value() / s2
        } else {
            0.0
        }
    }

    /// `3 sd_{D_c}(q) / sqrt(n_eff)`.
    fn allowance<Q: Fn(usize) -> f64>(&self, q: Q) -> f64 {
        let m = self.mean(&q);
        let var = self.mean(|i| (q(i) - m).powi(2));
        let n = self.n_eff();
        if n > 0.0 {
            3.0 * var.sqrt() / n.sqrt()
        } else {
            f64::INFINITY
        }
    }
}

fn fstar_component(fs: &[Vec<f64>], i: usize, label: usize) -> f64 {
    fs[i][label]
}

fn label_indicator(dataset: &Dataset, i: usize, label: usize) -> f64 {
    if dataset.record(i).y == label {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub group: String,
    pub label: usize,
    pub d: usize,
    pub mass: f64,
    pub alpha_c: f64,
    /// Statistical allowance added to `alpha_c` in sampled mode.
    pub allowance: f64,
    /// `E_c[f^d]`.
    pub moment_f: f64,
    /// `E_c[f*^d]`.
    pub moment_fstar: f64,
    /// `E_c[f^(d-1) f*]`.
    pub cross: f64,
    /// `E_c[f*] E_c[f^(d-1)]`.
    pub product: f64,
    pub sw1_upper: bool,
    pub sw1_lower: bool,
    pub sw2_upper: bool,
    pub sw2_lower: bool,
    pub level_j: bool,
}

impl SandwichRow {
    pub fn passes(&self) -> bool {
        self.sw1_upper && self.sw1_lower && self.sw2_upper && self.sw2_lower && self.level_j
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub group: String,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub alpha: f64,
    pub k: usize,
    pub mode: EvalMode,
    pub rows: Vec<SandwichRow>,
    pub skipped: Vec<SkippedGroup>,
    pub all_pass: bool,
}

/// Evaluates both moment sandwiches and the level identity for every group,
/// predicted coordinate, and degree `1..=k`. Groups with mass below
/// `max(min_mass, floor)` are skipped.
pub fn sandwich_report(
    preds: &Predictions,
    dataset: &Dataset,
    class: &HypothesisClass,
    k: usize,
    alpha: f64,
    mode: EvalMode,
    min_mass: f64,
) -> Result<SandwichReport> {
    let fs = dataset.require_fstar()?;
    preds.check_aligned(dataset)?;
    if k < 1 || !(alpha >= 0.0) {
        return domain("sandwich needs k >= 1 and alpha >= 0");
    }
    let space = preds.space();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for c in &class.members {
        let g = GroupView::new(dataset, c)?;
        if g.mass <= DEFAULT_MASS_FLOOR || g.mass < min_mass {
            skipped.push(SkippedGroup {
                group: c.name.clone(),
                mass: g.mass,
            });
            continue;
        }
        let alpha_c = alpha / g.mass;
        for coord in 0..space.dim() {
            let label = space.label_of_coord(coord);
            let f = |i: usize| preds.row(i)[coord];
            let fst = |i: usize| fstar_component(fs, i, label);
            let mean_fstar = g.mean(fst);
            for d in 1..=k {
                let e = (d - 1) as i32;
                let allowance = match mode {
                    EvalMode::Exact => 0.0,
                    EvalMode::Sampled => (0..d as i32)
                        .map(|j| {
                            g.allowance(|i| {
                                f(i).powi(j) * (label_indicator(dataset, i, label) - fst(i))
                            })
                        })
                        .fold(0.0, f64::max),
                };
                let tol = EXACT_TOLERANCE;
                let a = alpha_c + allowance;
                let moment_f = g.mean(|i| f(i).powi(d as i32));
                let moment_fstar = g.mean(|i| fst(i).powi(d as i32));
                let cross = g.mean(|i| f(i).powi(e) * fst(i));
                let product = mean_fstar * g.mean(|i| f(i).powi(e));
                let df = d as f64;
                rows.push(SandwichRow {
                    group: c.name.clone(),
                    label,
                    d,
                    mass: g.mass,
                    alpha_c,
                    allowance,
                    moment_f,
                    moment_fstar,
                    cross,
                    product,
                    sw1_upper: moment_f <= df * a + moment_fstar + tol,
                    sw1_lower: moment_f >= product - a - tol,
                    sw2_upper: cross <= (df + 1.0) * a + moment_fstar + tol,
                    sw2_lower: cross >= product - 2.0 * a - tol,
                    level_j: (cross - moment_f).abs() <= a + tol,
                });
            }
        }
    }
    let all_pass = rows.iter().all(SandwichRow::passes);
    Ok(SandwichReport {
        alpha,
        k,
        mode,
        rows,
        skipped,
        all_pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TprReport {
    pub group: String,
    pub label: usize,
    /// Power of the prediction inside the conditional mean (1 for the plain rate).
    pub d: usize,
    /// `E_c[f_l^d | y = l]`.
    pub tau: f64,
    /// `E_c[f_l^d f*_l] / E_c[f*_l]`.
    pub identity: Option<f64>,
    /// `E_c[f*_l^d | y = l]` computed as `E_c[f*_l^(d+1)] / E_c[f*_l]`.
    pub fstar_tau: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub lower_ok: Option<bool>,
    pub upper_ok: Option<bool>,
}

fn conditional_label_mean<G: Fn(usize) -> f64>(
    g: &GroupView<'_>,
    dataset: &Dataset,
    event: impl Fn(usize) -> bool,
    value: G,
    what: &str,
) -> Result<f64> {
    let denom = g.mean(|i| if event(i) { 1.0 } else { 0.0 });
    if denom <= DEFAULT_MASS_FLOOR {
        return Err(McError::InsufficientMass {
            what: what.into(),
            mass: denom * g.mass,
        });
    }
    let _ = dataset;
    Ok(g.mean(|i| if event(i) { value(i) } else { 0.0 }) / denom)
}

fn tpr_power(
    preds: &Predictions,
    dataset: &Dataset,
    label: usize,
    c: &GroupFunction,
    d: usize,
    alpha: Option<f64>,
) -> Result<TprReport> {
    preds.check_aligned(dataset)?;
    let space = preds.space();
    if label >= space.classes() {
        return domain(format!("label {label} out of range"));
    }
    let g = GroupView::new(dataset, c)?;
    g.require_mass(&c.name, DEFAULT_MASS_FLOOR)?;
    let fl = |i: usize| space.component(preds.row(i), label).powi(d as i32);
    let tau = conditional_label_mean(
        &g,
        dataset,
        |i| dataset.record(i).y == label,
        fl,
        &format!("label {label} within group {}", c.name),
    )?;
    let mut rep = TprReport {
        group: c.name.clone(),
        label,
        d,
        tau,
        identity: None,
        fstar_tau: None,
        lower: None,
        upper: None,
        lower_ok: None,
        upper_ok: None,
    };
    if let Some(fs) = dataset.fstar() {
        let fst = |i: usize| fs[i][label];
        let mean_fstar = g.mean(fst);
        if mean_fstar > DEFAULT_MASS_FLOOR {
            rep.identity = Some(g.mean(|i| fl(i) * fst(i)) / mean_fstar);
            let fstar_tau = g.mean(|i| fst(i).powi(d as i32 + 1)) / mean_fstar;
            rep.fstar_tau = Some(fstar_tau);
            if let Some(alpha) = alpha {
                let a = alpha / g.mass / mean_fstar;
                let lower = g.mean(fl) - 2.0 * a;
                let upper_slack = if d == 1 { 3.0 } else { d as f64 + 1.0 };
                let upper = fstar_tau + upper_slack * a;
                rep.lower = Some(lower);
                rep.upper = Some(upper);
                rep.lower_ok = Some(tau >= lower - EXACT_TOLERANCE);
                rep.upper_ok = Some(tau <= upper + EXACT_TOLERANCE);
            }
        }
    }
    Ok(rep)
}

/// Generalized true positive rate `E_c[f_l | y = l]`, with the ground-truth
/// bracket when `fstar` and `alpha` are available.
pub fn tpr(
    preds: &Predictions,
    dataset: &Dataset,
    label: usize,
    c: &GroupFunction,
    alpha: Option<f64>,
) -> Result<TprReport> {
    tpr_power(preds, dataset, label, c, 1, alpha)
}

/// `E_c[f_l^d | y = l]` with the `(d + 1)`-slack bracket.
pub fn higher_moment_tpr(
    preds: &Predictions,
    dataset: &Dataset,
    label: usize,
    c: &GroupFunction,
    d: usize,
    alpha: Option<f64>,
) -> Result<TprReport> {
    if d < 1 {
        return domain("moment order must be at least 1");
    }
    tpr_power(preds, dataset, label, c, d, alpha)
}

/// Generalized false positive rate `E_c[f_l | y != l]`; reported without a bracket.
pub fn generalized_fpr(
    preds: &Predictions,
    dataset: &Dataset,
    label: usize,
    c: &GroupFunction,
) -> Result<f64> {
    preds.check_aligned(dataset)?;
    let space = preds.space();
    let g = GroupView::new(dataset, c)?;
    g.require_mass(&c.name, DEFAULT_MASS_FLOOR)?;
    conditional_label_mean(
        &g,
        dataset,
        |i| dataset.record(i).y != label,
        |i| space.component(preds.row(i), label),
        &format!("labels other than {label} within group {}", c.name),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetTprReport {
    pub group: String,
    pub labels: Vec<usize>,
    /// `E_c[f_L | y in L]`.
    pub tau: f64,
    pub identity: Option<f64>,
    pub fstar_tau: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub lower_ok: Option<bool>,
    pub upper_ok: Option<bool>,
}

/// True positive rate for a set of labels. The upper slack `2 l |L|^2 alpha_c`
/// and lower slack `(|L|^2 + |L|) alpha_c` are both divided by `E_c[f*_L]`.
pub fn set_tpr(
    preds: &Predictions,
    dataset: &Dataset,
    labels: &[usize],
    c: &GroupFunction,
    alpha: Option<f64>,
) -> Result<SetTprReport> {
    preds.check_aligned(dataset)?;
    let space = preds.space();
    let l = space.classes();
    if labels.is_empty() {
        return domain("label set is empty");
    }
    let mut set = labels.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.len() != labels.len() || set.iter().any(|&x| x >= l) {
        return domain("label set must hold distinct labels in range");
    }
    let g = GroupView::new(dataset, c)?;
    g.require_mass(&c.name, DEFAULT_MASS_FLOOR)?;
    let in_set = |y: usize| set.binary_search(&y).is_ok();
    let f_l = |i: usize| {
        set.iter()
            .map(|&ell| space.component(preds.row(i), ell))
            .sum::<f64>()
    };
    let event_mass = g.mean(|i| {
        if in_set(dataset.record(i).y) {
            1.0
        } else {
            0.0
        }
    });
    if event_mass <= DEFAULT_MASS_FLOOR {
        return domain(format!("no mass on labels {set:?} within group {}", c.name));
    }
    let tau = g.mean(|i| {
        if in_set(dataset.record(i).y) {
            f_l(i)
        } else {
            0.0
        }
    }) / event_mass;
    let mut rep = SetTprReport {
        group: c.name.clone(),
        labels: set.clone(),
        tau,
        identity: None,
        fstar_tau: None,
        lower: None,
        upper: None,
        lower_ok: None,
        upper_ok: None,
    };
    if let Some(fs) = dataset.fstar() {
        let fstar_l = |i: usize| set.iter().map(|&ell| fs[i][ell]).sum::<f64>();
        let mean_star = g.mean(fstar_l);
        if mean_star > DEFAULT_MASS_FLOOR {
            rep.identity = Some(g.mean(|i| f_l(i) * fstar_l(i)) / mean_star);
            let fstar_tau = g.mean(|i| fstar_l(i).powi(2)) / mean_star;
            rep.fstar_tau = Some(fstar_tau);
            if let Some(alpha) = alpha {
                let a = alpha / g.mass / mean_star;
                let m = set.len() as f64;
                let lower = g.mean(f_l) - (m * m + m) * a;
                let upper = fstar_tau + 2.0 * l as f64 * m * m * a;
                rep.lower = Some(lower);
                rep.upper = Some(upper);
                rep.lower_ok = Some(tau >= lower - EXACT_TOLERANCE);
                rep.upper_ok = Some(tau <= upper + EXACT_TOLERANCE);
            }
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub group: String,
    pub mass: f64,
    pub alpha_c: f64,
    pub allowance: f64,
    /// `E_c[f* f^T]` over predicted coordinates.
    pub b_star_f: Vec<Vec<f64>>,
    pub b_ff: Vec<Vec<f64>>,
    pub b_star_star: Vec<Vec<f64>>,
    pub max_norm_gap: f64,
    /// Smallest eigenvalue of `B(f*,f*) + 2 d alpha I - B(f,f)`.
    pub min_eig_gap: f64,
    /// Smallest eigenvalue of `B(f*,f*) + 2 d alpha_c I - B(f,f)`.
    pub min_eig_gap_conditional: f64,
    pub max_norm_ok: bool,
    pub psd_ok: bool,
}

fn min_eig_of_shifted(b_ss: &[Vec<f64>], b_ff: &[Vec<f64>], shift: f64) -> Result<f64> {
    let n = b_ss.len();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = b_ss[i][j] - b_ff[i][j] + if i == j { shift } else { 0.0 };
        }
    }
    Ok(symmetric_eigenvalues(&m)?[0])
}

pub fn confusion(
    preds: &Predictions,
    dataset: &Dataset,
    c: &GroupFunction,
    alpha: f64,
    mode: EvalMode,
) -> Result<ConfusionReport> {
    let fs = dataset.require_fstar()?;
    preds.check_aligned(dataset)?;
    let space = preds.space();
    let d = space.dim();
    let g = GroupView::new(dataset, c)?;
    g.require_mass(&c.name, DEFAULT_MASS_FLOOR)?;
    let alpha_c = alpha / g.mass;
    let star = |i: usize, a: usize| fs[i][space.label_of_coord(a)];
    let f = |i: usize, a: usize| preds.row(i)[a];
    let mut b_star_f = vec![vec![0.0; d]; d];
    let mut b_ff = vec![vec![0.0; d]; d];
    let mut b_star_star = vec![vec![0.0; d]; d];
    let mut max_norm_gap: f64 = 0.0;
    let mut allowance: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            b_star_f[a][b] = g.mean(|i| star(i, a) * f(i, b));
            b_ff[a][b] = g.mean(|i| f(i, a) * f(i, b));
            b_star_star[a][b] = g.mean(|i| star(i, a) * star(i, b));
            max_norm_gap = max_norm_gap.max((b_star_f[a][b] - b_ff[a][b]).abs());
            if mode == EvalMode::Sampled {
                let la = space.label_of_coord(a);
                let q = |i: usize| {
                    let y = match space {
                        Space::Scalar => label_indicator(dataset, i, 1),
                        Space::Vector { .. } => label_indicator(dataset, i, la),
                    };
                    f(i, b) * (y - star(i, a))
                };
                allowance = allowance.max(g.allowance(q));
            }
        }
    }
    let min_eig_gap = min_eig_of_shifted(&b_star_star, &b_ff, 2.0 * d as f64 * alpha)?;
    let min_eig_gap_conditional =
        min_eig_of_shifted(&b_star_star, &b_ff, 2.0 * d as f64 * (alpha_c + allowance))?;
    Ok(ConfusionReport {
        group: c.name.clone(),
        mass: g.mass,
        alpha_c,
        allowance,
        max_norm_ok: max_norm_gap <= alpha_c + allowance + EXACT_TOLERANCE,
        psd_ok: min_eig_gap_conditional >= -EXACT_TOLERANCE,
        b_star_f,
        b_ff,
        b_star_star,
        max_norm_gap,
        min_eig_gap,
        min_eig_gap_conditional,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub group: String,
    pub label: usize,
    pub mass: f64,
    pub alpha_c: f64,
    pub allowance: f64,
    pub var_f: f64,
    pub var_fstar: f64,
    /// `Cov_c[f_l, y_l]` from the drawn labels.
    pub cov_f_y: f64,
    /// `Cov_c[f*_l, y_l]` from the drawn labels.
    pub cov_fstar_y: f64,
    /// `Cov_c[f_l, f*_l]`, the label covariance when `fstar` is the exact conditional.
    pub cov_f_fstar: f64,
    /// `Var[f] - 2 alpha_c <= Cov[f, y]`.
    pub lower_ok: bool,
    /// `Cov[f, y] <= Cov[f*, y] + 6 alpha_c`.
    pub upper_ok: bool,
    /// `Var[f] <= Var[f*] + 4 alpha_c`.
    pub variance_ok: bool,
    /// `|Cov[f, y] - Var[f]| <= 2 alpha_c`.
    pub cov_var_ok: bool,
    /// `Cov[f*, y] = Var[f*]`.
    pub identity_ok: bool,
}

impl CovarianceReport {
    pub fn passes(&self) -> bool {
        self.lower_ok && self.upper_ok && self.variance_ok && self.cov_var_ok && self.identity_ok
    }
}

pub fn covariance_report(
    preds: &Predictions,
    dataset: &Dataset,
    label: usize,
    c: &GroupFunction,
    alpha: f64,
    mode: EvalMode,
) -> Result<CovarianceReport> {
    let fs = dataset.require_fstar()?;
    preds.check_aligned(dataset)?;
    let space = preds.space();
    if label >= space.classes() {
        return domain(format!("label {label} out of range"));
    }
    let g = GroupView::new(dataset, c)?;
    g.require_mass(&c.name, DEFAULT_MASS_FLOOR)?;
    let alpha_c = alpha / g.mass;
    let f = |i: usize| space.component(preds.row(i), label);
    let st = |i: usize| fs[i][label];
    let y = |i: usize| label_indicator(dataset, i, label);
    let cov = |a: &dyn Fn(usize) -> f64, b: &dyn Fn(usize) -> f64| {
        let ma = g.mean(a);
        let mb = g.mean(b);
        g.mean(|i| (a(i) - ma) * (b(i) - mb))
    };
    let var_f = cov(&f, &f);
    let var_fstar = cov(&st, &st);
    let cov_f_y = cov(&f, &y);
    let cov_fstar_y = cov(&st, &y);
    let cov_f_fstar = cov(&f, &st);
    let (cov_used, cov_star_used, allowance) = match mode {
        EvalMode::Exact => (cov_f_fstar, var_fstar, 0.0),
        EvalMode::Sampled => {
            let a = [
                g.allowance(|i| y(i) - st(i)),
                g.allowance(|i| f(i) * (y(i) - st(i))),
                g.allowance(|i| st(i) * (y(i) - st(i))),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            (cov_f_y, cov_fstar_y, 2.0 * a)
        }
    };
    let a = alpha_c + allowance;
    let tol = EXACT_TOLERANCE;
    Ok(CovarianceReport {
        group: c.name.clone(),
        label,
        mass: g.mass,
        alpha_c,
        allowance,
        var_f,
        var_fstar,
        cov_f_y,
        cov_fstar_y,
        cov_f_fstar,
        lower_ok: cov_used >= var_f - 2.0 * a - tol,
        upper_ok: cov_used <= cov_star_used + 6.0 * a + tol,
        variance_ok: var_f <= var_fstar + 4.0 * alpha_c + tol,
        cov_var_ok: (cov_used - var_f).abs() <= 2.0 * a + tol,
        identity_ok: (cov_star_used - var_fstar).abs() <= allowance + tol,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub mass: f64,
    /// `E[c (f - f*)] - E[(1 - c)(f - f*)]`.
    pub bias_split: f64,
    /// `(Var_c[f] - Var_c[f*]) mu_c`.
    pub excess_variance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub multiaccuracy_error: f64,
    pub excess_variance: f64,
    pub groups: Vec<GroupMetrics>,
}

/// Maximum bias split and maximum mass-weighted excess variance over the class.
pub fn experiment_metrics(
    preds: &Predictions,
    class: &HypothesisClass,
    dataset: &Dataset,
) -> Result<ExperimentMetrics> {
    let fs = dataset.require_fstar()?;
    preds.check_aligned(dataset)?;
    if !preds.space().is_scalar() {
        return domain("experiment metrics are defined for scalar binary predictions");
    }
    let f = |i: usize| preds.row(i)[0];
    let st = |i: usize| fs[i][1];
    let mut groups = Vec::new();
    for c in &class.members {
        let g = GroupView::new(dataset, c)?;
        let inside = dataset.mean(|i| g.cv[i] * (f(i) - st(i)));
        let outside = dataset.mean(|i| (1.0 - g.cv[i]) * (f(i) - st(i)));
        let excess_variance = (g.mass > DEFAULT_MASS_FLOOR).then(|| {
            let mf = g.mean(f);
            let ms = g.mean(st);
            let vf = g.mean(|i| (f(i) - mf).powi(2));
            let vs = g.mean(|i| (st(i) - ms).powi(2));
            (vf - vs) * g.mass
        });
        groups.push(GroupMetrics {
            group: c.name.clone(),
            mass: g.mass,
            bias_split: inside - outside,
            excess_variance,
        });
    }
    let multiaccuracy_error = groups
        .iter()
        .map(|g| g.bias_split.abs())
        .fold(0.0, f64::max);
    let excess_variance = groups
        .iter()
        .filter_map(|g| g.excess_variance)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ExperimentMetrics {
        multiaccuracy_error,
        excess_variance,
        groups,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// `E ||f - g||_1`.
    pub delta: f64,
    pub r: Option<f64>,
    pub audit_f: f64,
    pub audit_g: f64,
    /// `audit_f + (2r + 1) delta`.
    pub bound: Option<f64>,
    pub holds: Option<bool>,
}

/// Compares audits of two predictors against the Lipschitz perturbation bound.
pub fn robustness_gap(
    f: &Predictions,
    g: &Predictions,
    class: &EvaluatedClass,
    family: &WeightFamily,
    dataset: &Dataset,
    r: Option<f64>,
) -> Result<RobustnessReport> {
    let delta = f.mean_l1_distance(g, dataset)?;
    let audit_f = audit_predictions(f, class, family, dataset)?.max_abs;
    let audit_g = audit_predictions(g, class, family, dataset)?.max_abs;
    let r = r.or(family.meta.lipschitz);
    let bound = r.map(|r| audit_f + (2.0 * r + 1.0) * delta);
    Ok(RobustnessReport {
        delta,
        r,
        audit_f,
        audit_g,
        bound,
        holds: bound.map(|b| audit_g <= b + EXACT_TOLERANCE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;

    fn planted() -> Dataset {
        let recs = vec![
            Record::new(vec![0.0], 1, 1.0),
            Record::new(vec![0.0], 0, 1.0),
            Record::new(vec![1.0], 1, 3.0),
            Record::new(vec![1.0], 0, 1.0),
        ];
        let fs = vec![
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![0.25, 0.75],
            vec![0.25, 0.75],
        ];
        Dataset::new(recs, 2, Some(fs)).unwrap()
    }

    #[test]
    fn fstar_satisfies_every_sandwich() {
        let ds = planted();
        let p = Predictions::from_fstar(&ds, Space::Scalar).unwrap();
        let class =
            HypothesisClass::new("c", vec![GroupFunction::ones(), GroupFunction::column(0)])
                .unwrap();
        let rep = sandwich_report(&p, &ds, &class, 3, 0.0, EvalMode::Exact, 0.0).unwrap();
        assert!(rep.all_pass);
        assert_eq!(rep.rows.len(), 6);
    }

    #[test]
    fn constant_predictor_tpr() {
        let ds = planted();
        let p = Predictions::from_rows(Space::Scalar, &vec![vec![0.3]; 4]).unwrap();
        let r = tpr(&p, &ds, 1, &GroupFunction::column(0), None).unwrap();
        assert!((r.tau - 0.3).abs() < 1e-15);
        let h = higher_moment_tpr(&p, &ds, 1, &GroupFunction::ones(), 3, None).unwrap();
        assert!((h.tau - 0.027).abs() < 1e-15);
        assert!((generalized_fpr(&p, &ds, 1, &GroupFunction::ones()).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fstar_confusion_and_covariance() {
        let ds = planted();
        let p = Predictions::from_fstar(&ds, Space::Scalar).unwrap();
        let c = confusion(&p, &ds, &GroupFunction::ones(), 0.0, EvalMode::Exact).unwrap();
        assert!(c.max_norm_gap < 1e-15 && c.min_eig_gap >= -1e-15);
        let cov =
            covariance_report(&p, &ds, 1, &GroupFunction::ones(), 0.0, EvalMode::Exact).unwrap();
        assert!((cov.cov_f_fstar - cov.var_fstar).abs() < 1e-15);
        assert!(cov.passes());
    }

    #[test]
    fn set_tpr_over_all_labels_is_one() {
        let ds = planted();
        let p = Predictions::from_fstar(&ds, Space::Scalar).unwrap();
        let r = set_tpr(&p, &ds, &[0, 1], &GroupFunction::ones(), Some(0.01)).unwrap();
        assert!((r.tau - 1.0).abs() < 1e-15);
        assert!(set_tpr(&p, &ds, &[], &GroupFunction::ones(), None).is_err());
        assert!(set_tpr(&p, &ds, &[1, 1], &GroupFunction::ones(), None).is_err());
    }

    #[test]
    fn missing_fstar_is_rejected() {
        let ds = Dataset::new(vec![Record::new(vec![0.0], 1, 1.0)], 2, None).unwrap();
        let p = Predictions::from_rows(Space::Scalar, &[vec![0.5]]).unwrap();
        let class = HypothesisClass::new("c", vec![GroupFunction::ones()]).unwrap();
        assert!(sandwich_report(&p, &ds, &class, 2, 0.1, EvalMode::Exact, 0.0).is_err());
        assert!(confusion(&p, &ds, &GroupFunction::ones(), 0.1, EvalMode::Exact).is_err());
        assert!(experiment_metrics(&p, &class, &ds).is_err());
    }
}
