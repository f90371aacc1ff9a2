//! Smooth maps between tori and Euclidean charts, built from a closed set of
//! constructors that each carry an exact Jacobian rule.

use crate::error::{check_dim, Error, Result};
use crate::trig::TrigPoly;

/// Dense row-major matrix, `rows x cols`.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Debug)]
pub enum ChartMap {
    /// `y -> A y + b`.
    Affine { matrix: Matrix, offset: Vec<f64> },
    /// `y -> A y + b + t(y)` with `t` a vector of trig polynomials.
    Trig { matrix: Matrix, offset: Vec<f64>, parts: Vec<TrigPoly> },
    /// `y -> (y[i] for i in indices)`.
    Projection { source_dim: usize, indices: Vec<usize> },
    /// `(y1, y2) -> (f(y1), g(y2))` on split coordinates.
    Product(Box<ChartMap>, Box<ChartMap>),
    /// `outer(inner(y))`.
    Compose { outer: Box<ChartMap>, inner: Box<ChartMap> },
}

impl ChartMap {
    pub fn identity(n: usize) -> Self {
        let matrix = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        ChartMap::Affine { matrix, offset: vec![0.0; n] }
    }

    pub fn affine(matrix: Matrix, offset: Vec<f64>) -> Result<Self> {
        let rows = matrix.len();
        check_dim(rows, offset.len())?;
        if let Some(cols) = matrix.first().map(Vec::len) {
            if matrix.iter().any(|r| r.len() != cols) {
                return Err(Error::InvalidParameter("ragged affine matrix".into()));
            }
        }
        Ok(ChartMap::Affine { matrix, offset })
    }

    /// Translation `y -> y + b`.
    pub fn translation(offset: Vec<f64>) -> Self {
        let n = offset.len();
        match Self::identity(n) {
            ChartMap::Affine { matrix, .. } => ChartMap::Affine { matrix, offset },
            _ => unreachable!(),
        }
    }

    pub fn trig(parts: Vec<TrigPoly>) -> Result<Self> {
        let n = parts.first().map(TrigPoly::dim).unwrap_or(0);
        if parts.iter().any(|p| p.dim() != n) {
            return Err(Error::InvalidParameter("trig map components differ in dimension".into()));
        }
        let m = parts.len();
        Ok(ChartMap::Trig { matrix: vec![vec![0.0; n]; m], offset: vec![0.0; m], parts })
    }

    pub fn projection(source_dim: usize, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= source_dim) {
            return Err(Error::InvalidParameter(format!("projection index {bad} out of range")));
        }
        Ok(ChartMap::Projection { source_dim, indices })
    }

    pub fn product(a: ChartMap, b: ChartMap) -> Self {
        ChartMap::Product(Box::new(a), Box::new(b))
    }

    pub fn compose(outer: ChartMap, inner: ChartMap) -> Result<Self> {
        check_dim(outer.source_dim(), inner.target_dim())?;
        Ok(ChartMap::Compose { outer: Box::new(outer), inner: Box::new(inner) })
    }

    pub fn source_dim(&self) -> usize {
        match self {
            ChartMap::Affine { matrix, .. } => matrix.first().map(Vec::len).unwrap_or(0),
            ChartMap::Trig { parts, matrix, .. } => {
                parts.first().map(TrigPoly::dim).or(matrix.first().map(Vec::len)).unwrap_or(0)
            }
            ChartMap::Projection { source_dim, .. } => *source_dim,
            ChartMap::Product(a, b) => a.source_dim() + b.source_dim(),
            ChartMap::Compose { inner, .. } => inner.source_dim(),
        }
    }

    pub fn target_dim(&self) -> usize {
        match self {
            ChartMap::Affine { offset, .. } | ChartMap::Trig { offset, .. } => offset.len(),
            ChartMap::Projection { indices, .. } => indices.len(),
            ChartMap::Product(a, b) => a.target_dim() + b.target_dim(),
            ChartMap::Compose { outer, .. } => outer.target_dim(),
        }
    }

    pub fn eval(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.source_dim(), y.len())?;
        Ok(self.eval_unchecked(y))
    }

    fn eval_unchecked(&self, y: &[f64]) -> Vec<f64> {
        match self {
            ChartMap::Affine { matrix, offset } => affine_apply(matrix, offset, y),
            ChartMap::Trig { matrix, offset, parts } => {
                let mut out = affine_apply(matrix, offset, y);
                for (o, p) in out.iter_mut().zip(parts) {
                    *o += p.eval(y);
                }
                out
            }
            ChartMap::Projection { indices, .. } => indices.iter().map(|&i| y[i]).collect(),
            ChartMap::Product(a, b) => {
                let (ya, yb) = y.split_at(a.source_dim());
                let mut out = a.eval_unchecked(ya);
                out.extend(b.eval_unchecked(yb));
                out
            }
            ChartMap::Compose { outer, inner } => outer.eval_unchecked(&inner.eval_unchecked(y)),
        }
    }

    /// Jacobian `d phi(y)` as a `target x source` matrix.
    pub fn jacobian(&self, y: &[f64]) -> Result<Matrix> {
        check_dim(self.source_dim(), y.len())?;
        Ok(self.jacobian_unchecked(y))
    }

    fn jacobian_unchecked(&self, y: &[f64]) -> Matrix {
        match self {
            ChartMap::Affine { matrix, .. } => matrix.clone(),
            ChartMap::Trig { matrix, parts, .. } => {
                let mut jac = matrix.clone();
                for (row, p) in jac.iter_mut().zip(parts) {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += p.partial(j).eval(y);
                    }
                }
                jac
            }
            ChartMap::Projection { source_dim, indices } => indices
                .iter()
                .map(|&i| (0..*source_dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            ChartMap::Product(a, b) => {
                let (ya, yb) = y.split_at(a.source_dim());
                let (na, nb) = (a.source_dim(), b.source_dim());
                let mut out: Matrix = a
                    .jacobian_unchecked(ya)
                    .into_iter()
                    .map(|mut r| {
                        r.extend(std::iter::repeat_n(0.0, nb));
                        r
                    })
                    .collect();
                out.extend(b.jacobian_unchecked(yb).into_iter().map(|r| {
                    let mut row = vec![0.0; na];
                    row.extend(r);
                    row
                }));
                out
            }
            ChartMap::Compose { outer, inner } => {
                let inner_y = inner.eval_unchecked(y);
                mat_mul(&outer.jacobian_unchecked(&inner_y), &inner.jacobian_unchecked(y))
            }
        }
    }

    /// Collapses affine-only constructor trees into a single `(A, b)`.
    pub fn as_affine(&self) -> Option<(Matrix, Vec<f64>)> {
        match self {
            ChartMap::Affine { matrix, offset } => Some((matrix.clone(), offset.clone())),
            ChartMap::Trig { matrix, offset, parts } if parts.iter().all(TrigPoly::is_zero) => {
                Some((matrix.clone(), offset.clone()))
            }
            ChartMap::Trig { .. } => None,
            ChartMap::Projection { .. } => {
                let jac = self.jacobian_unchecked(&vec![0.0; self.source_dim()]);
                Some((jac, vec![0.0; self.target_dim()]))
            }
            ChartMap::Product(a, b) => {
                let (ma, oa) = a.as_affine()?;
                let (mb, ob) = b.as_affine()?;
                let (na, nb) = (a.source_dim(), b.source_dim());
                let mut matrix: Matrix = ma
                    .into_iter()
                    .map(|mut r| {
                        r.extend(std::iter::repeat_n(0.0, nb));
                        r
                    })
                    .collect();
                matrix.extend(mb.into_iter().map(|r| {
                    let mut row = vec![0.0; na];
                    row.extend(r);
                    row
                }));
                let mut offset = oa;
                offset.extend(ob);
                Some((matrix, offset))
            }
            ChartMap::Compose { outer, inner } => {
                let (mo, oo) = outer.as_affine()?;
                let (mi, oi) = inner.as_affine()?;
                let matrix = mat_mul(&mo, &mi);
                let offset = affine_apply(&mo, &oo, &oi);
                Some((matrix, offset))
            }
        }
    }
}

fn affine_apply(matrix: &Matrix, offset: &[f64], y: &[f64]) -> Vec<f64> {
    matrix.iter().zip(offset).map(|(row, b)| row.iter().zip(y).map(|(a, x)| a * x).sum::<f64>() + b).collect()
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let inner = b.len();
    let cols = b.first().map(Vec::len).unwrap_or(0);
    a.iter().map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()).collect()
}

pub fn mat_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_jacobian_selects_rows() {
        let p = ChartMap::projection(3, vec![2]).unwrap();
        assert_eq!(p.jacobian(&[0.1, 0.2, 0.3]).unwrap(), vec![vec![0.0, 0.0, 1.0]]);
        assert_eq!(p.eval(&[0.1, 0.2, 0.3]).unwrap(), vec![0.3]);
    }

    #[test]
    fn composition_rank_is_checked() {
        let outer = ChartMap::identity(2);
        let inner = ChartMap::identity(3);
        assert!(matches!(ChartMap::compose(outer, inner), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn trig_jacobian_matches_finite_difference() {
        let f = ChartMap::trig(vec![
            TrigPoly::from_terms(2, &[(vec![1, 0], 1.0, 0.0)]),
            TrigPoly::from_terms(2, &[(vec![1, 1], 0.0, 0.5)]),
        ])
        .unwrap();
        let y = [0.13, 0.42];
        let jac = f.jacobian(&y).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut yp = y;
            let mut ym = y;
            yp[j] += h;
            ym[j] -= h;
            let (fp, fm) = (f.eval(&yp).unwrap(), f.eval(&ym).unwrap());
            for i in 0..2 {
                assert!((jac[i][j] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn affine_collapse_of_composition() {
        let a = ChartMap::affine(vec![vec![1.0, 1.0], vec![0.0, 1.0]], vec![0.5, 0.0]).unwrap();
        let b = ChartMap::translation(vec![0.25, 0.1]);
        let c = ChartMap::compose(a.clone(), b.clone()).unwrap();
        let (m, o) = c.as_affine().unwrap();
        let y = [0.3, 0.7];
        let direct = c.eval(&y).unwrap();
        let collapsed = affine_apply(&m, &o, &y);
        for (x, z) in direct.iter().zip(&collapsed) {
            assert!((x - z).abs() < 1e-15);
        }
    }
}
