//! Weight functions `w: [0,1]^d -> [0,1]^d` and the finite families used to
//! audit multiaccuracy, degree-k, full, and smooth multicalibration.

mod basis;
mod registry;

pub use basis::{lipschitz_check, BasisExpansion, GridRecipe, LipschitzReport};
pub use registry::{FamilyBuilder, FamilyDescriptor, FamilyRegistry};

use serde::{Deserialize, Serialize};

use crate::data::Space;
use crate::error::{domain, McError, Result};

const EVAL_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFunction {
    /// The standard basis vector `e_coord`.
    Constant { coord: usize },
    /// `prod_{j in factors} z_j` on `coord`, zero elsewhere.
    Monomial { coord: usize, factors: Vec<usize> },
    /// Indicator of one cell of the `delta` grid, replicated on every coordinate.
    Cube { delta: f64, cell: Vec<usize> },
    /// Grid-quantized Lipschitz basis element: on `coord`, the value `levels[cell] * eta / 3`
    /// where `cell` indexes the `eta / (3 d)` grid over the first `d - 1` coordinates.
    PiecewiseConstant {
        eta: f64,
        coord: usize,
        levels: Vec<u32>,
    },
}

/// Number of cells per axis for side length `delta`; the top cell is closed at 1.
pub fn cells_per_axis(delta: f64) -> usize {
    ((1.0 / delta) - 1e-9).ceil().max(1.0) as usize
}

/// Cell index along one axis; values at or above the last boundary land in the top cell.
#[inline]
pub fn cell_index(v: f64, delta: f64, cells: usize) -> usize {
    let k = (v / delta).floor();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(cells - 1)
    }
}

impl WeightFunction {
    /// Whether audits should treat each output coordinate as a separate constraint.
    pub fn per_label(&self) -> bool {
        matches!(self, WeightFunction::Cube { .. })
    }

    pub fn eval(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.len()];
        self.eval_into(p, &mut out);
        out
    }

    pub fn eval_into(&self, p: &[f64], out: &mut [f64]) {
        match self {
            WeightFunction::Constant { coord } => {
                out.fill(0.0);
                out[*coord] = 1.0;
            }
            WeightFunction::Monomial { coord, factors } => {
                out.fill(0.0);
                let v: f64 = factors.iter().map(|&j| p[j]).product();
                out[*coord] = clamp_unit(v);
            }
            WeightFunction::Cube { delta, cell } => {
                let cells = cells_per_axis(*delta);
                let inside = p
                    .iter()
                    .zip(cell)
                    .all(|(&v, &k)| cell_index(v, *delta, cells) == k);
                out.fill(if inside { 1.0 } else { 0.0 });
            }
            WeightFunction::PiecewiseConstant { eta, coord, levels } => {
                out.fill(0.0);
                let d = p.len();
                let side = eta / (3.0 * d as f64);
                let cells = cells_per_axis(side);
                let idx = p[..d.saturating_sub(1)]
                    .iter()
                    .fold(0usize, |acc, &v| acc * cells + cell_index(v, side, cells));
                out[*coord] = (levels[idx] as f64 * eta / 3.0).min(1.0);
            }
        }
    }

    /// Stable identifier used in reports and traces.
    pub fn id(&self, space: Space) -> String {
        let var = |j: usize| match space {
            Space::Scalar => "t".to_string(),
            Space::Vector { .. } => format!("z{j}"),
        };
        match self {
            WeightFunction::Constant { coord } => match space {
                Space::Scalar => "1".into(),
                Space::Vector { .. } => format!("e{coord}"),
            },
            WeightFunction::Monomial { coord, factors } => {
                let mut parts: Vec<String> = Vec::new();
                let mut i = 0;
                while i < factors.len() {
                    let j = factors[i];
                    let run = factors[i..].iter().take_while(|&&f| f == j).count();
                    parts.push(if run == 1 {
                        var(j)
                    } else {
                        format!("{}^{run}", var(j))
                    });
                    i += run;
                }
                let body = parts.join("*");
                match space {
                    Space::Scalar => body,
                    Space::Vector { .. } => format!("{body}@{coord}"),
                }
            }
            WeightFunction::Cube { cell, .. } => {
                let s: Vec<String> = cell.iter().map(|k| k.to_string()).collect();
                format!("cell[{}]", s.join(","))
            }
            WeightFunction::PiecewiseConstant { coord, levels, .. } => {
                format!(
                    "pc@{coord}[{}]",
                    levels
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join("")
                )
            }
        }
    }

    /// An `l1 -> l_inf` Lipschitz constant, when one exists.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            WeightFunction::Constant { .. } => Some(0.0),
            WeightFunction::Monomial { factors, .. } => Some(factors.len() as f64),
            WeightFunction::Cube { .. } | WeightFunction::PiecewiseConstant { .. } => None,
        }
    }
}

#[inline]
fn clamp_unit(v: f64) -> f64 {
    if (-EVAL_SLACK..0.0).contains(&v) {
        0.0
    } else if v > 1.0 && v <= 1.0 + EVAL_SLACK {
        1.0
    } else {
        v
    }
}

/// One audited constraint: a family member, optionally restricted to one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub member: usize,
    pub coord: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyMeta {
    /// Lipschitz constant `r` shared by all members, if any.
    pub lipschitz: Option<f64>,
    /// `(eta, L)` when the family is certified as a basis for 1-Lipschitz weights.
    pub basis: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Members {
    Listed { functions: Vec<WeightFunction> },
    Grid { recipe: GridRecipe },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFamily {
    pub name: String,
    pub space: Space,
    pub members: Members,
    pub meta: FamilyMeta,
}

impl WeightFamily {
    pub fn listed(&self) -> Result<&[WeightFunction]> {
        match &self.members {
            Members::Listed { functions } => Ok(functions),
            Members::Grid { recipe } => Err(McError::BasisTooLarge {
                log10_estimate: recipe.log10_len(),
                cap: f64::INFINITY,
            }),
        }
    }

    pub fn len(&self) -> Result<usize> {
        Ok(self.listed()?.len())
    }

    pub fn is_empty(&self) -> bool {
        self.listed().map(|m| m.is_empty()).unwrap_or(false)
    }

    /// Constraints audited by this family, in scan order.
    pub fn atoms(&self) -> Result<Vec<Atom>> {
        let dim = self.space.dim();
        let mut atoms = Vec::new();
        for (i, w) in self.listed()?.iter().enumerate() {
            if w.per_label() {
                atoms.extend((0..dim).map(|c| Atom {
                    member: i,
                    coord: Some(c),
                }));
            } else {
                atoms.push(Atom {
                    member: i,
                    coord: None,
                });
            }
        }
        Ok(atoms)
    }

    pub fn atom_id(&self, atom: Atom) -> Result<String> {
        let w = &self.listed()?[atom.member];
        Ok(match atom.coord {
            Some(c) if !self.space.is_scalar() => format!("{}@{c}", w.id(self.space)),
            _ => w.id(self.space),
        })
    }
}

/// Writes the atom's weight vector at `p` into `out`.
#[inline]
pub fn eval_atom(w: &WeightFunction, coord: Option<usize>, p: &[f64], out: &mut [f64]) {
    w.eval_into(p, out);
    if let Some(c) = coord {
        for (j, v) in out.iter_mut().enumerate() {
            if j != c {
                *v = 0.0;
            }
        }
    }
}

/// One constant member per coordinate: auditing with it is multiaccuracy.
pub fn constant_family(space: Space) -> WeightFamily {
    let functions = (0..space.dim())
        .map(|coord| WeightFunction::Constant { coord })
        .collect();
    WeightFamily {
        name: "ma".into(),
        space,
        members: Members::Listed { functions },
        meta: FamilyMeta {
            lipschitz: Some(0.0),
            basis: None,
        },
    }
}

/// Multisets of size `size` over `0..dim`, as sorted index vectors in lexicographic order.
fn multisets(dim: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(dim: usize, size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for j in start..dim {
            cur.push(j);
            rec(dim, size, j, cur, out);
            cur.pop();
        }
    }
    rec(dim, size, 0, &mut cur, &mut out);
    out
}

/// 1-sparse monomials of degree at most `k - 1` on every coordinate.
/// Ordered by degree, then monomial, then coordinate.
pub fn monomial_family(space: Space, k: usize) -> Result<WeightFamily> {
    if k < 1 {
        return domain("degree k must be at least 1");
    }
    let dim = space.dim();
    let mut functions = Vec::new();
    for degree in 0..k {
        for s in multisets(dim, degree) {
            for coord in 0..dim {
                functions.push(if degree == 0 {
                    WeightFunction::Constant { coord }
                } else {
                    WeightFunction::Monomial {
                        coord,
                        factors: s.clone(),
                    }
                });
            }
        }
    }
    Ok(WeightFamily {
        name: format!("degree{k}"),
        space,
        members: Members::Listed { functions },
        meta: FamilyMeta {
            lipschitz: Some((k - 1) as f64),
            basis: None,
        },
    })
}

/// Closed-form member count of [`monomial_family`]: `dim * C(dim + k - 1, k - 1)`.
pub fn monomial_family_size(dim: usize, k: usize) -> usize {
    let (n, r) = (dim + k - 1, k - 1);
    let mut c: u128 = 1;
    for i in 0..r {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    dim * c as usize
}

/// Indicators of the cells of the `delta` grid over the prediction box.
pub fn interval_family(space: Space, delta: f64) -> Result<WeightFamily> {
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("delta must lie in (0, 1], got {delta}"));
    }
    let dim = space.dim();
    let m = cells_per_axis(delta);
    let count = (m as f64).powi(dim as i32);
    if count > 1e7 {
        return Err(McError::BasisTooLarge {
            log10_estimate: count.log10(),
            cap: 1e7,
        });
    }
    let mut functions = Vec::with_capacity(count as usize);
    let mut cell = vec![0usize; dim];
    loop {
        functions.push(WeightFunction::Cube {
            delta,
            cell: cell.clone(),
        });
        let mut axis = dim;
        loop {
            if axis == 0 {
                return Ok(WeightFamily {
                    name: format!("interval{delta}"),
                    space,
                    members: Members::Listed { functions },
                    meta: FamilyMeta {
                        lipschitz: None,
                        basis: Some((dim as f64 * delta / 2.0, count)),
                    },
                });
            }
            axis -= 1;
            cell[axis] += 1;
            if cell[axis] < m {
                break;
            }
            cell[axis] = 0;
        }
    }
}

pub const DEFAULT_BASIS_CAP: f64 = 1e6;

/// An `(eta, L)` basis for 1-Lipschitz weight functions.
///
/// Up to two coordinates this is the interval family with `delta = 2 eta / dim`.
/// Beyond that it is the quantized grid construction, which is refused when its
/// estimated size exceeds `cap`.
pub fn lipschitz_basis(space: Space, eta: f64, cap: f64) -> Result<WeightFamily> {
    if !(eta > 0.0 && eta < 1.0) {
        return domain(format!("eta must lie in (0, 1), got {eta}"));
    }
    let dim = space.dim();
    if dim <= 2 {
        let delta = (2.0 * eta / dim as f64).min(1.0);
        let mut fam = interval_family(space, delta)?;
        let l = (cells_per_axis(delta) as f64).powi(dim as i32);
        if l > cap {
            return Err(McError::BasisTooLarge {
                log10_estimate: l.log10(),
                cap,
            });
        }
        fam.name = format!("lipschitz{eta}");
        fam.meta.basis = Some((eta, l));
        return Ok(fam);
    }
    let recipe = GridRecipe::new(dim, eta);
    let log10 = recipe.log10_len();
    if log10 > cap.log10() {
        return Err(McError::BasisTooLarge {
            log10_estimate: log10,
            cap,
        });
    }
    Ok(WeightFamily {
        name: format!("lipschitz{eta}"),
        space,
        members: Members::Grid { recipe },
        meta: FamilyMeta {
            lipschitz: None,
            basis: Some((eta, recipe.coefficient_bound())),
        },
    })
}
