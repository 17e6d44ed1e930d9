//! Worked values checked against independent brute-force enumeration.

use ldmc::audit::*;
use ldmc::data::*;
use ldmc::learner::*;
use ldmc::predictor::*;
use ldmc::synth::*;
use ldmc::weights::*;

const TOL: f64 = 1e-12;

type Point = (f64, f64, f64, f64);

/// The four counterexample points as `(x1, x2, mass, y)`, written out by hand.
fn points(eps: f64) -> [Point; 4] {
    let a = 0.5 - eps;
    [
        (0.0, 0.0, a, 1.0),
        (1.0, 0.0, eps, 0.0),
        (0.0, 1.0, a, 0.0),
        (1.0, 1.0, eps, 1.0),
    ]
}

/// Closed-form least-squares fit on the edge groups: the mean label on each `x2` side.
fn l2_oracle(eps: f64) -> impl Fn(f64, f64) -> f64 {
    let pts = points(eps);
    let side = move |s: f64| {
        let (num, den) = pts
            .iter()
            .filter(|p| p.1 == s)
            .fold((0.0, 0.0), |(n, d), p| (n + p.2 * p.3, d + p.2));
        num / den
    };
    let (f0, f1) = (side(0.0), side(1.0));
    move |_x1, x2| if x2 == 0.0 { f0 } else { f1 }
}

fn cond<F: Fn(&Point) -> f64>(pts: &[Point], in_c: impl Fn(&Point) -> bool, g: F) -> f64 {
    let m: f64 = pts.iter().filter(|p| in_c(p)).map(|p| p.2).sum();
    pts.iter()
        .filter(|p| in_c(p))
        .map(|p| p.2 * g(p))
        .sum::<f64>()
        / m
}

fn l2_predictions(ds: &Dataset, class: &HypothesisClass) -> Predictions {
    let f = l2_regression(class, ds).unwrap();
    Predictions::from_predictor(&f, ds).unwrap()
}

#[test]
fn counterexample_masses_and_conditionals() {
    let (ds, class) = counterexample_dataset();
    let c11 = &class.members[1];
    assert!((group_mass(&ds, c11).unwrap() - 1.0 / 3.0).abs() < TOL);
    let pts = points(1.0 / 6.0);
    let want = cond(&pts, |p| p.0 == 1.0, |p| p.3);
    let got = conditional_expectation(&ds, c11, |_, fs| fs.unwrap()[1]).unwrap();
    assert!((got - want).abs() < TOL);
    assert!((want - 0.5).abs() < TOL);
}

#[test]
fn counterexample_l2_violations() {
    let (ds, class) = counterexample_dataset();
    let p = l2_predictions(&ds, &class);
    let f = l2_oracle(1.0 / 6.0);
    let pts = points(1.0 / 6.0);
    let c11 = &class.members[1];
    let ones = WeightFunction::Constant { coord: 0 };
    let t = WeightFunction::Monomial {
        coord: 0,
        factors: vec![0],
    };
    let v1: f64 = pts
        .iter()
        .filter(|q| q.0 == 1.0)
        .map(|q| q.2 * (q.3 - f(q.0, q.1)))
        .sum();
    let vt: f64 = pts
        .iter()
        .filter(|q| q.0 == 1.0)
        .map(|q| q.2 * f(q.0, q.1) * (q.3 - f(q.0, q.1)))
        .sum();
    assert!((violation(&p, c11, &ones, &ds).unwrap() - v1).abs() < TOL);
    assert!((violation(&p, c11, &t, &ds).unwrap() - vt).abs() < TOL);
    assert!(v1.abs() < TOL);
    assert!((vt + 1.0 / 27.0).abs() < TOL);
}

#[test]
fn counterexample_audits() {
    let (ds, class) = counterexample_dataset();
    let p = l2_predictions(&ds, &class);
    let ev = class.evaluate(&ds).unwrap();
    let ma = audit_predictions(&p, &ev, &constant_family(Space::Scalar), &ds).unwrap();
    assert!(ma.max_abs <= 1e-12);
    let mc2 = audit_predictions(&p, &ev, &monomial_family(Space::Scalar, 2).unwrap(), &ds).unwrap();
    assert_eq!(mc2.entries.len(), 8);
    let f = l2_oracle(1.0 / 6.0);
    let pts = points(1.0 / 6.0);
    let groups: [fn(&Point) -> bool; 4] = [
        |q| q.0 == 0.0,
        |q| q.0 == 1.0,
        |q| q.1 == 0.0,
        |q| q.1 == 1.0,
    ];
    let mut best: f64 = 0.0;
    for g in &groups {
        for power in [0, 1] {
            let v: f64 = pts
                .iter()
                .filter(|q| g(q))
                .map(|q| q.2 * f(q.0, q.1).powi(power) * (q.3 - f(q.0, q.1)))
                .sum();
            best = best.max(v.abs());
        }
    }
    assert!((mc2.max_abs - best).abs() < TOL);
    let at = mc2
        .entries
        .iter()
        .find(|e| e.group == "c11" && e.weight == "t")
        .unwrap();
    assert!((at.violation.abs() - mc2.max_abs).abs() < TOL);
    assert!((at.violation + 1.0 / 27.0).abs() < TOL);
}

#[test]
fn counterexample_tpr_and_covariance() {
    let (ds, class) = counterexample_dataset();
    let p = l2_predictions(&ds, &class);
    let c11 = &class.members[1];
    let f = l2_oracle(1.0 / 6.0);
    let pts = points(1.0 / 6.0);
    let in_c = |q: &Point| q.0 == 1.0 && q.3 == 1.0;
    let tau = cond(&pts, in_c, |q| f(q.0, q.1));
    let r = tpr(&p, &ds, 1, c11, None).unwrap();
    assert!((r.tau - tau).abs() < TOL);
    let r2 = higher_moment_tpr(&p, &ds, 1, c11, 2, None).unwrap();
    assert!((r2.tau - tau * tau).abs() < TOL);
    let star = Predictions::from_fstar(&ds, Space::Scalar).unwrap();
    assert!((tpr(&star, &ds, 1, c11, None).unwrap().tau - 1.0).abs() < TOL);

    let in_c = |q: &Point| q.0 == 1.0;
    let mf = cond(&pts, in_c, |q| f(q.0, q.1));
    let my = cond(&pts, in_c, |q| q.3);
    let cov = cond(&pts, in_c, |q| (f(q.0, q.1) - mf) * (q.3 - my));
    let rep = covariance_report(&p, &ds, 1, c11, 0.0, EvalMode::Exact).unwrap();
    assert!((rep.cov_f_y - cov).abs() < TOL);
    assert!((rep.cov_f_fstar - cov).abs() < TOL);
    assert!((cov + 1.0 / 12.0).abs() < TOL);
    assert!(!rep.lower_ok);
}

#[test]
fn negative_covariance_family_closed_form() {
    for eps in [0.01, 0.05, 1.0 / 6.0, 0.2, 0.249] {
        let (ds, class) = negative_covariance_family(eps).unwrap();
        let p = l2_predictions(&ds, &class);
        let f = l2_oracle(eps);
        let pts = points(eps);
        let in_c = |q: &Point| q.0 == 1.0;
        let mf = cond(&pts, in_c, |q| f(q.0, q.1));
        let my = cond(&pts, in_c, |q| q.3);
        let cov = cond(&pts, in_c, |q| (f(q.0, q.1) - mf) * (q.3 - my));
        let rep = covariance_report(&p, &ds, 1, &class.members[1], 0.0, EvalMode::Exact).unwrap();
        assert!((rep.cov_f_y - cov).abs() < 1e-10, "eps {eps}");
        assert!((cov - (eps - 0.25)).abs() < 1e-10, "eps {eps}");
    }
    let (ds, _) = negative_covariance_family(0.05).unwrap();
    let (base, _) = counterexample_dataset();
    assert!(ds.record(0).weight > base.record(0).weight);
}

fn multisets(dim: usize, size: usize) -> usize {
    fn rec(start: usize, dim: usize, left: usize) -> usize {
        if left == 0 {
            return 1;
        }
        (start..dim).map(|i| rec(i, dim, left - 1)).sum()
    }
    rec(0, dim, size)
}

#[test]
fn monomial_family_sizes_by_enumeration() {
    for dim in 1..=4 {
        for k in 1..=4 {
            let want: usize = dim * (0..k).map(|j| multisets(dim, j)).sum::<usize>();
            let space = if dim == 1 {
                Space::Scalar
            } else {
                Space::Vector { classes: dim }
            };
            assert_eq!(
                monomial_family(space, k).unwrap().len().unwrap(),
                want,
                "dim {dim} k {k}"
            );
            assert_eq!(monomial_family_size(dim, k), want);
        }
    }
}

#[test]
fn interval_cell_counts() {
    for (delta, per_axis) in [(0.5, 2), (0.1, 10), (0.3, 4), (1.0, 1), (0.25, 4)] {
        assert_eq!(cells_per_axis(delta), per_axis, "delta {delta}");
        let fam = interval_family(Space::Vector { classes: 2 }, delta).unwrap();
        assert_eq!(fam.len().unwrap(), per_axis * per_axis);
    }
}

#[test]
fn confusion_entries_by_enumeration() {
    let (ds, class) = counterexample_dataset();
    let p = l2_predictions(&ds, &class);
    let f = l2_oracle(1.0 / 6.0);
    let pts = points(1.0 / 6.0);
    let rep = confusion(&p, &ds, &GroupFunction::ones(), 0.01, EvalMode::Exact).unwrap();
    let all = |_: &Point| true;
    let bsf = cond(&pts, all, |q| q.3 * f(q.0, q.1));
    let bff = cond(&pts, all, |q| f(q.0, q.1).powi(2));
    assert!((rep.b_star_f[0][0] - bsf).abs() < TOL);
    assert!((rep.b_ff[0][0] - bff).abs() < TOL);
    assert!((rep.max_norm_gap - (bsf - bff).abs()).abs() < TOL);
}

#[test]
fn set_tpr_matches_brute_force() {
    let ds = generate(&SynthSpec::planted(3, 400, 4, LabelMode::Sampled)).unwrap();
    let class = HypothesisClass::new("g", indicator_groups(4)).unwrap();
    let rows: Vec<Vec<f64>> = ds
        .records()
        .iter()
        .map(|r| vec![0.2 + 0.5 * r.x[0], 0.3 + 0.2 * r.x[1], 0.1 + 0.6 * r.x[2]])
        .collect();
    let p = Predictions::from_rows(Space::Vector { classes: 3 }, &rows).unwrap();
    for c in &class.members {
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, row) in ds.records().iter().zip(&rows) {
            if c.eval(&r.x) == 1.0 && r.y <= 1 {
                num += r.weight * (row[0] + row[1]);
                den += r.weight;
            }
        }
        let rep = set_tpr(&p, &ds, &[0, 1], c, Some(0.05)).unwrap();
        assert!((rep.tau - num / den).abs() < 1e-12);
    }
}

#[test]
fn experiment_metrics_for_constant_mean() {
    let ds = generate(&SynthSpec::planted(2, 2000, 8, LabelMode::Sampled)).unwrap();
    let class = HypothesisClass::new("g", indicator_groups(4)).unwrap();
    let fs = ds.fstar().unwrap();
    let n = ds.len() as f64;
    let mean: f64 = fs.iter().map(|p| p[1]).sum::<f64>() / n;
    let p = Predictions::from_rows(Space::Scalar, &vec![vec![mean]; ds.len()]).unwrap();
    let m = experiment_metrics(&p, &class, &ds).unwrap();

    let mut best_split: f64 = 0.0;
    let mut best_ev = f64::NEG_INFINITY;
    for c in &class.members {
        let inside: Vec<f64> = ds
            .records()
            .iter()
            .zip(fs)
            .filter(|(r, _)| c.eval(&r.x) == 1.0)
            .map(|(_, p)| p[1])
            .collect();
        let mass = inside.len() as f64 / n;
        let bias_in: f64 = inside.iter().map(|s| mean - s).sum::<f64>() / n;
        let bias_out: f64 = ds
            .records()
            .iter()
            .zip(fs)
            .filter(|(r, _)| c.eval(&r.x) == 0.0)
            .map(|(_, p)| mean - p[1])
            .sum::<f64>()
            / n;
        best_split = best_split.max((bias_in - bias_out).abs());
        let mu = inside.iter().sum::<f64>() / inside.len() as f64;
        let var = inside.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / inside.len() as f64;
        best_ev = best_ev.max(-var * mass);
    }
    assert!((m.multiaccuracy_error - best_split).abs() < 1e-12);
    assert!((m.excess_variance - best_ev).abs() < 1e-12);
    assert!(m.excess_variance <= 0.0);

    let rounded: Vec<Vec<f64>> = fs.iter().map(|p| vec![p[1].round()]).collect();
    let r = Predictions::from_rows(Space::Scalar, &rounded).unwrap();
    assert!(experiment_metrics(&r, &class, &ds).unwrap().excess_variance > 0.0);
    let star = Predictions::from_fstar(&ds, Space::Scalar).unwrap();
    let s = experiment_metrics(&star, &class, &ds).unwrap();
    assert!(s.multiaccuracy_error.abs() < 1e-12 && s.excess_variance <= 1e-15);
}

#[test]
fn weak_learner_on_residual_sign() {
    let class =
        HypothesisClass::new("g", vec![GroupFunction::ones(), GroupFunction::column(0)]).unwrap();
    let samples = vec![
        (vec![1.0], 0.5),
        (vec![1.0], 0.5),
        (vec![0.0], -0.5),
        (vec![0.0], 0.5),
    ];
    match weak_agnostic_learn(&class, &samples, 0.2).unwrap() {
        LearnerOutcome::Found {
            index,
            sign,
            correlation,
            ..
        } => {
            let c1 = samples.iter().map(|(x, z)| x[0] * z).sum::<f64>() / 4.0;
            let c0 = samples.iter().map(|(_, z)| z).sum::<f64>() / 4.0;
            assert_eq!(index, if c1.abs() > c0.abs() { 1 } else { 0 });
            assert_eq!(sign, 1);
            assert!((correlation - c0.abs().max(c1.abs())).abs() < TOL);
        }
        other => panic!("expected a hit, got {other:?}"),
    }
}

#[test]
fn exact_generation_conditionals() {
    let ds = generate(&SynthSpec::planted(3, 300, 2, LabelMode::Exact)).unwrap();
    let fs = ds.fstar().unwrap();
    for i in (0..ds.len()).step_by(7) {
        let x = &ds.record(i).x;
        let mut per = [0.0; 3];
        let mut tot = 0.0;
        for (r, p) in ds.records().iter().zip(fs) {
            if &r.x == x && p == &fs[i] {
                per[r.y] += r.weight;
                tot += r.weight;
            }
        }
        for l in 0..3 {
            assert!((per[l] / tot - fs[i][l]).abs() < 1e-12);
        }
    }
}
