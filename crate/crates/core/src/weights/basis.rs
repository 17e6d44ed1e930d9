use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cell_index, cells_per_axis, WeightFamily, WeightFunction};
use crate::error::{domain, Result};

/// Recipe for the quantized grid basis: every function that is constant on each
/// cube of side `eta / (3 dim)` over the first `dim - 1` coordinates, takes a value
/// in `{0, eta/3, 2 eta/3, ..., 1}`, and is supported on one output coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecipe {
    pub dim: usize,
    pub eta: f64,
}

impl GridRecipe {
    pub fn new(dim: usize, eta: f64) -> Self {
        Self { dim, eta }
    }

    pub fn cells_per_axis(&self) -> usize {
        cells_per_axis(self.eta / (3.0 * self.dim as f64))
    }

    pub fn cell_count(&self) -> f64 {
        (self.cells_per_axis() as f64).powi(self.dim as i32 - 1)
    }

    pub fn level_count(&self) -> usize {
        cells_per_axis(self.eta / 3.0) + 1
    }

    /// `log10` of the member count `dim * levels^cells`.
    pub fn log10_len(&self) -> f64 {
        (self.dim as f64).log10() + self.cell_count() * (self.level_count() as f64).log10()
    }

    /// One member per output coordinate approximates any 1-Lipschitz function.
    pub fn coefficient_bound(&self) -> f64 {
        self.dim as f64
    }

    /// The member on `coord` taking level `levels[cell]` on each cube.
    pub fn member(&self, coord: usize, levels: Vec<u32>) -> Result<WeightFunction> {
        if coord >= self.dim {
            return domain(format!("coordinate {coord} out of range"));
        }
        if levels.len() as f64 != self.cell_count() {
            return domain("level table length must equal the cube count");
        }
        if levels.iter().any(|&v| v as usize >= self.level_count()) {
            return domain("level index out of range");
        }
        Ok(WeightFunction::PiecewiseConstant {
            eta: self.eta,
            coord,
            levels,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub r: f64,
    pub trials: usize,
    pub max_ratio: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Sampling falsifier for `||w(z) - w(z')||_inf <= r ||z - z'||_1` over all members.
pub fn lipschitz_check(
    family: &WeightFamily,
    r: f64,
    trials: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    if trials < 1 {
        return domain("trials must be at least 1");
    }
    let members = family.listed()?;
    let dim = family.space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; dim];
    let mut zp = vec![0.0; dim];
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..trials {
        z.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        zp.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        let dist: f64 = z.iter().zip(&zp).map(|(p, q)| (p - q).abs()).sum();
        for w in members {
            w.eval_into(&z, &mut a);
            w.eval_into(&zp, &mut b);
            let diff = a
                .iter()
                .zip(&b)
                .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
            if dist > 0.0 {
                max_ratio = max_ratio.max(diff / dist);
            }
            if diff > r * dist * (1.0 + 1e-12) + 1e-15 {
                violations += 1;
            }
        }
    }
    Ok(LipschitzReport {
        r,
        trials,
        max_ratio,
        violations,
        pass: violations == 0,
    })
}

/// Approximation of a weight function by cube indicators, taking the value at each cell center.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisExpansion {
    delta: f64,
    dim: usize,
    cells: usize,
    coefficients: Vec<Vec<f64>>,
}

impl BasisExpansion {
    pub fn fit<U: Fn(&[f64]) -> Vec<f64>>(family: &WeightFamily, u: U) -> Result<Self> {
        let members = family.listed()?;
        let dim = family.space.dim();
        let mut delta = None;
        let mut coefficients = Vec::with_capacity(members.len());
        let mut center = vec![0.0; dim];
        for w in members {
            let WeightFunction::Cube { delta: d, cell } = w else {
                return domain("basis expansion needs an interval family");
            };
            delta = Some(*d);
            let cells = cells_per_axis(*d);
            for (c, &k) in center.iter_mut().zip(cell) {
                let lo = k as f64 * d;
                let hi = if k + 1 == cells {
                    1.0
                } else {
                    (k + 1) as f64 * d
                };
                *c = 0.5 * (lo + hi);
            }
            coefficients.push(u(&center));
        }
        let delta = delta.ok_or_else(|| crate::error::McError::Domain("empty family".into()))?;
        Ok(Self {
            delta,
            dim,
            cells: cells_per_axis(delta),
            coefficients,
        })
    }

    pub fn eval(&self, p: &[f64]) -> &[f64] {
        let idx = p.iter().fold(0usize, |acc, &v| {
            acc * self.cells + cell_index(v, self.delta, self.cells)
        });
        &self.coefficients[idx]
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    /// `sum over cells of ||u(center)||_inf`.
    pub fn mass(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|c| c.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .sum()
    }

    /// Sum of absolute coefficients over per-coordinate atoms.
    pub fn atom_mass(&self) -> f64 {
        self.coefficients.iter().flatten().map(|v| v.abs()).sum()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Space;
    use crate::weights::{constant_family, interval_family, monomial_family};

    #[test]
    fn monomials_pass_their_bound() {
        let f = monomial_family(Space::Vector { classes: 2 }, 3).unwrap();
        assert!(lipschitz_check(&f, 2.0, 500, 1).unwrap().pass);
        assert!(
            lipschitz_check(&constant_family(Space::Scalar), 0.0, 100, 1)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn indicators_fail_unit_bound() {
        let f = interval_family(Space::Scalar, 0.5).unwrap();
        let rep = lipschitz_check(&f, 1.0, 500, 2).unwrap();
        assert!(!rep.pass);
        assert!(rep.max_ratio > 1.0);
    }

    #[test]
    fn grid_recipe_size() {
        let g = GridRecipe::new(3, 0.5);
        assert_eq!(g.cells_per_axis(), 18);
        assert_eq!(g.level_count(), 7);
        assert!((g.log10_len() - (3f64.log10() + 324.0 * 7f64.log10())).abs() < 1e-9);
        let m = g.member(2, vec![6; 324]).unwrap();
        assert_eq!(m.eval(&[0.2, 0.3, 0.5]), vec![0.0, 0.0, 1.0]);
        assert!(g.member(0, vec![7; 324]).is_err());
    }

    #[test]
    fn expansion_of_identity_in_one_dim() {
        let f = interval_family(Space::Scalar, 0.25).unwrap();
        let e = BasisExpansion::fit(&f, |p| vec![p[0]]).unwrap();
        assert_eq!(e.eval(&[0.1]), &[0.125]);
        assert_eq!(e.eval(&[1.0]), &[0.875]);
        assert!((e.mass() - 2.0).abs() < 1e-15);
    }
}
