//! Dense tableau simplex for `min c.x` subject to `A x = b`, `x >= 0`,
//! started from a caller-supplied feasible basis. Generic over the scalar so
//! the same code runs in `f64` (with tolerances) and in exact rationals.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub trait Scalar:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Values within `tol` of zero are treated as zero.
    fn tol() -> Self;
    fn is_positive_scalar(&self) -> bool {
        *self > Self::zero()
    }
    fn to_f64(&self) -> f64;
}

impl Scalar for f64 {
    fn tol() -> Self {
        1e-9
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    fn tol() -> Self {
        BigRational::zero()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PivotRule {
    /// Smallest-index entering variable; never cycles.
    Bland,
    /// Most negative reduced cost, falling back to Bland after a run of
    /// degenerate pivots.
    Dantzig,
}

#[derive(Clone, Debug)]
pub struct SimplexSolution<S> {
    pub x: Vec<S>,
    pub basis: Vec<usize>,
    pub objective: S,
    /// Reduced costs `c_j - c_B B^-1 A_j` at the optimum.
    pub reduced_costs: Vec<S>,
    pub iterations: usize,
}

/// Column-major sparse-ish input: `columns[j]` lists `(row, value)`.
pub struct Problem<S> {
    pub rows: usize,
    pub columns: Vec<Vec<(usize, S)>>,
    pub costs: Vec<S>,
    pub rhs: Vec<S>,
}

struct Tableau<S> {
    m: usize,
    n: usize,
    /// Row-major `m x (n + 1)`; the last entry of each row is the rhs.
    t: Vec<S>,
    /// Reduced costs followed by minus the objective value.
    obj: Vec<S>,
    basis: Vec<usize>,
}

impl<S: Scalar> Tableau<S> {
    fn at(&self, i: usize, j: usize) -> &S {
        &self.t[i * (self.n + 1) + j]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.n + 1;
        let p = self.at(r, c).clone();
        for j in 0..w {
            let v = self.t[r * w + j].clone();
            if !v.is_zero() {
                self.t[r * w + j] = v / p.clone();
            }
        }
        let pivot_row: Vec<(usize, S)> =
            (0..w).filter(|&j| !self.t[r * w + j].is_zero()).map(|j| (j, self.t[r * w + j].clone())).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c].clone();
            if f.is_zero() {
                continue;
            }
            for (j, v) in &pivot_row {
                let cell = &mut self.t[i * w + j];
                *cell = cell.clone() - f.clone() * v.clone();
            }
            self.t[i * w + c] = S::zero();
        }
        let f = self.obj[c].clone();
        if !f.is_zero() {
            for (j, v) in &pivot_row {
                self.obj[*j] = self.obj[*j].clone() - f.clone() * v.clone();
            }
            self.obj[c] = S::zero();
        }
        self.basis[r] = c;
    }
}

/// Leaving row for entering column `c`. Exact scalars use the minimum ratio
/// with ties broken by smallest basis index; floating point uses a two-pass
/// (Harris) test that prefers the largest pivot among near-minimal ratios.
fn ratio_test<S: Scalar>(tab: &Tableau<S>, c: usize) -> Option<(usize, S)> {
    let n = tab.n;
    let tol = S::tol();
    let mut leave: Option<(usize, S)> = None;
    if tol.is_zero() {
        for i in 0..tab.m {
            let a = tab.at(i, c);
            if a.is_positive_scalar() {
                let ratio = tab.at(i, n).clone() / a.clone();
                let better = match &leave {
                    None => true,
                    Some((r, best)) => ratio < *best || (ratio == *best && tab.basis[i] < tab.basis[*r]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        return leave;
    }
    let col_max = (0..tab.m).map(|i| tab.at(i, c).to_f64().abs()).fold(0.0, f64::max);
    let piv_tol = 1e-9 * col_max.max(1.0);
    let mut bound = f64::INFINITY;
    for i in 0..tab.m {
        let a = tab.at(i, c).to_f64();
        if a > piv_tol {
            bound = bound.min((tab.at(i, n).to_f64() + tol.to_f64()) / a);
        }
    }
    if !bound.is_finite() {
        return None;
    }
    let mut best_a = 0.0;
    for i in 0..tab.m {
        let a = tab.at(i, c).to_f64();
        if a > piv_tol && tab.at(i, n).to_f64() / a <= bound && a > best_a {
            best_a = a;
            leave = Some((i, tab.at(i, n).clone() / tab.at(i, c).clone()));
        }
    }
    leave
}

/// Solves the problem starting from `basis` (one column per row, assumed
/// feasible: after pivoting it in, every rhs must be nonnegative).
pub fn solve<S: Scalar>(
    prob: &Problem<S>,
    basis: &[(usize, usize)],
    rule: PivotRule,
    max_iter: usize,
) -> Result<SimplexSolution<S>> {
    let m = prob.rows;
    let n = prob.columns.len();
    let w = n + 1;
    let mut t = vec![S::zero(); m * w];
    for (j, col) in prob.columns.iter().enumerate() {
        for (i, v) in col {
            t[i * w + j] = v.clone();
        }
    }
    for (i, b) in prob.rhs.iter().enumerate() {
        t[i * w + n] = b.clone();
    }
    let mut obj = prob.costs.clone();
    obj.push(S::zero());
    let mut tab = Tableau { m, n, t, obj, basis: vec![usize::MAX; m] };
    if basis.len() != m {
        return Err(Error::InvalidParameter("initial basis has wrong size".into()));
    }
    for &(row, col) in basis {
        if tab.at(row, col).is_zero() {
            return Err(Error::InvalidParameter(format!("initial basis column {col} is singular at row {row}")));
        }
        tab.pivot(row, col);
    }
    let neg_tol = -S::tol();
    if (0..m).any(|i| *tab.at(i, n) < neg_tol) {
        return Err(Error::InvalidParameter("initial basis is not feasible".into()));
    }

    let mut iterations = 0;
    let mut degenerate_run = 0usize;
    // Columns whose pivot entries are all below tolerance; only used in
    // floating point, where such a column signals noise rather than a ray.
    let mut blocked = vec![false; n];
    loop {
        let use_bland = rule == PivotRule::Bland || degenerate_run > 50;
        let entering = if use_bland {
            (0..n).find(|&j| !blocked[j] && tab.obj[j] < neg_tol)
        } else {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if !blocked[j] && tab.obj[j] < neg_tol && best.is_none_or(|b| tab.obj[j] < tab.obj[b]) {
                    best = Some(j);
                }
            }
            best
        };
        let Some(c) = entering else { break };
        if iterations >= max_iter {
            return Err(Error::IterationLimit(max_iter));
        }
        iterations += 1;
        let leave = ratio_test(&tab, c);
        let Some((r, ratio)) = leave else {
            if S::tol().is_zero() {
                return Err(Error::Inconclusive("simplex objective is unbounded below".into()));
            }
            blocked[c] = true;
            continue;
        };
        if ratio <= S::tol() {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
            blocked.iter_mut().for_each(|b| *b = false);
        }
        tab.pivot(r, c);
        // Clamp rhs noise so feasibility is preserved in floating point.
        for i in 0..m {
            let idx = i * w + n;
            if tab.t[idx] < S::zero() {
                tab.t[idx] = S::zero();
            }
        }
    }

    let mut x = vec![S::zero(); n];
    for (i, &b) in tab.basis.iter().enumerate() {
        x[b] = tab.at(i, n).clone();
    }
    let objective = -tab.obj[n].clone();
    let reduced_costs = tab.obj[..n].to_vec();
    Ok(SimplexSolution { x, basis: tab.basis, objective, reduced_costs, iterations })
}

/// Exact reduced row echelon form; returns the pivot column of each nonzero row.
pub fn rref(rows: &mut Vec<Vec<BigRational>>) -> Vec<usize> {
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else { continue };
        rows.swap(r, p);
        let inv = rows[r][c].recip();
        for v in rows[r].iter_mut() {
            if !v.is_zero() {
                *v = &*v * &inv;
            }
        }
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *v = &*v - &f * pv;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    rows.truncate(r);
    pivots
}

/// Exact rational `p/q` closest to `x` with `q <= max_den`, by continued
/// fractions.
pub fn best_rational(x: f64, max_den: i64) -> BigRational {
    use num_bigint::BigInt;
    let (mut h0, mut h1, mut k0, mut k1) = (0i128, 1i128, 1i128, 0i128);
    let mut v = x.abs();
    for _ in 0..64 {
        let a = v.floor();
        if a > 1e15 {
            break;
        }
        let a = a as i128;
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > max_den as i128 {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let f = v - a as f64;
        if f < 1e-15 {
            break;
        }
        v = 1.0 / f;
    }
    if k1 == 0 {
        return BigRational::zero();
    }
    let q = BigRational::new(BigInt::from(h1), BigInt::from(k1));
    if x < 0.0 {
        -q
    } else {
        q
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    /// min -x1 - x2 s.t. x1 + s1 = 2, x2 + s2 = 3.
    fn tiny<S: Scalar>(conv: impl Fn(i64) -> S) -> Problem<S> {
        Problem {
            rows: 2,
            columns: vec![
                vec![(0, conv(1))],
                vec![(1, conv(1))],
                vec![(0, conv(1))],
                vec![(1, conv(1))],
            ],
            costs: vec![conv(-1), conv(-1), conv(0), conv(0)],
            rhs: vec![conv(2), conv(3)],
        }
    }

    #[test]
    fn float_and_exact_agree() {
        let f = solve(&tiny(|i| i as f64), &[(0, 2), (1, 3)], PivotRule::Dantzig, 100).unwrap();
        assert_eq!(f.objective, -5.0);
        let q = solve(&tiny(int), &[(0, 2), (1, 3)], PivotRule::Bland, 100).unwrap();
        assert_eq!(q.objective, int(-5));
        assert_eq!(q.x[0], int(2));
    }

    #[test]
    fn degenerate_problem_terminates_with_bland() {
        // Beale's cycling example in equality form with slacks.
        let c = [ratio(-3, 4), int(150), ratio(-1, 50), int(6)];
        let a = [
            [ratio(1, 4), int(-60), ratio(-1, 25), int(9)],
            [ratio(1, 2), int(-90), ratio(-1, 50), int(3)],
            [int(0), int(0), int(1), int(0)],
        ];
        let b = [int(0), int(0), int(1)];
        let mut columns: Vec<Vec<(usize, BigRational)>> =
            (0..4).map(|j| (0..3).map(|i| (i, a[i][j].clone())).collect()).collect();
        for i in 0..3 {
            columns.push(vec![(i, int(1))]);
        }
        let mut costs = c.to_vec();
        costs.extend([int(0), int(0), int(0)]);
        let prob = Problem { rows: 3, columns, costs, rhs: b.to_vec() };
        let sol = solve(&prob, &[(0, 4), (1, 5), (2, 6)], PivotRule::Bland, 1000).unwrap();
        assert_eq!(sol.objective, ratio(-1, 20));
    }

    #[test]
    fn rref_and_rounding() {
        let mut rows = vec![vec![int(2), int(4), int(2)], vec![int(1), int(2), int(3)]];
        let piv = rref(&mut rows);
        assert_eq!(piv, vec![0, 2]);
        assert_eq!(rows[0], vec![int(1), int(2), int(0)]);
        assert_eq!(best_rational(0.333333333333, 1000), ratio(1, 3));
        assert_eq!(best_rational(-2.5, 10), ratio(-5, 2));
        assert_eq!(best_rational(0.0, 10), int(0));
    }
}
