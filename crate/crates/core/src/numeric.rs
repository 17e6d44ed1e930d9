//! Small numerical kernels: compensated summation, a pivoted elimination
//! solver with minimum-norm completion, and cyclic Jacobi for symmetric
//! eigenvalues.

use crate::error::{domain, Result};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Row-major dense square matrix, just enough for the tiny systems here.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return domain("matrix rows must all have length n");
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.n.max(1))
            .map(|r| r.to_vec())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Reduced row-echelon form of `[a | b]` with partial pivoting.
/// Returns the reduced augmented rows and the pivot column of each pivot row.
fn rref(a: &SquareMatrix, b: &[f64], tol: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = a.n();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| a[(i, j)]).collect();
            row.push(b[i]);
            row
        })
        .collect();
    let scale = a.max_abs().max(1.0);
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == n {
            break;
        }
        let (best, best_abs) = (row..n)
            .map(|r| (r, m[r][col].abs()))
            .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_abs <= tol * scale {
            continue;
        }
        m.swap(row, best);
        let p = m[row][col];
        for v in m[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = m[row][col..=n].to_vec();
        for (r, target) in m.iter_mut().enumerate() {
            let factor = target[col];
            if r != row && factor != 0.0 {
                for (t, p) in target[col..=n].iter_mut().zip(&pivot_row) {
                    *t -= factor * p;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    (m, pivots)
}

/// Solves `a x = b` for a consistent (possibly singular) square system and
/// returns the minimum Euclidean-norm solution. Pivots below `tol` relative
/// to the largest entry are treated as zero.
pub fn solve_min_norm(a: &SquareMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.n();
    if b.len() != n {
        return domain("right-hand side length does not match matrix");
    }
    let (m, pivots) = rref(a, b, tol);
    let rank = pivots.len();
    let scale = a
        .max_abs()
        .max(b.iter().fold(0.0_f64, |s, v| s.max(v.abs())))
        .max(1.0);
    if m[rank..].iter().any(|row| row[n].abs() > 1e-8 * scale) {
        return domain("linear system is inconsistent");
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();

    let mut particular = vec![0.0; n];
    for (r, &pc) in pivots.iter().enumerate() {
        particular[pc] = m[r][n];
    }
    if free.is_empty() {
        return Ok(particular);
    }

    // Null-space basis: one vector per free column.
    let null: Vec<Vec<f64>> = free
        .iter()
        .map(|&fc| {
            let mut v = vec![0.0; n];
            v[fc] = 1.0;
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -m[r][fc];
            }
            v
        })
        .collect();

    // Project the particular solution onto the orthogonal complement of the
    // null space: x = p - N (N^T N)^{-1} N^T p.
    let k = null.len();
    let mut gram = SquareMatrix::zeros(k);
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = dot(&null[i], &null[j]);
        }
        rhs[i] = dot(&null[i], &particular);
    }
    let (g, gp) = rref(&gram, &rhs, 1e-14);
    if gp.len() != k {
        return domain("null-space basis is degenerate");
    }
    let mut x = particular;
    for (r, &pc) in gp.iter().enumerate() {
        let coef = g[r][k];
        for (xi, ni) in x.iter_mut().zip(&null[pc]) {
            *xi -= coef * ni;
        }
    }
    Ok(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, sorted ascending.
///
/// Sweeps stop once the off-diagonal Frobenius mass drops below `1e-12`
/// (relative to the matrix scale) or after 100 sweeps.
pub fn symmetric_eigenvalues(a: &SquareMatrix) -> Result<Vec<f64>> {
    const OFF_TOL: f64 = 1e-12;
    const MAX_SWEEPS: usize = 100;
    let n = a.n();
    if n == 0 {
        return Ok(Vec::new());
    }
    if !a.is_symmetric(1e-10 * a.max_abs().max(1.0)) {
        return domain("matrix is not symmetric");
    }
    let mut m = a.clone();
    // Symmetrize exactly so rotations keep the matrix symmetric.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= OFF_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    Ok(eig)
}
