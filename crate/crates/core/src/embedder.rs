//! Realizing a torus flow with a strongly adapted 1-form inside a potential
//! well.
//!
//! The pipeline is: the metric `g~` in which `theta` and `Y` are dual, an
//! isometric map `q` into `R^m` (explicit for flat metrics, least squares
//! otherwise), the momentum `p = L_Y q`, and a potential `V` defined near
//! `q(N)` so that `L_Y p = -grad V(q)`, blended into `tau |z|^2` far away.

use std::f64::consts::TAU;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::{flow_map_tol, torus_distance, TorusFlow};
use crate::forms::{check_adapted, Adaptation, OneForm, EXACT_TOL};
use crate::hamiltonian::{cutoff, energy, well_step, PotentialField, Scheme, WellState};
use crate::trig::{canonical, for_each_grid_point, fit_on_grid, frequency_box, Coeff, Freq, TrigPoly};

/// Largest number of grid points visited by any single check.
const MAX_GRID_POINTS: usize = 1 << 20;

/// Cutoff profile: `chi = 1` below `lo * eps`, `0` above `hi * eps`.
pub const CUTOFF: (f64, f64) = (1.0 / 3.0, 2.0 / 3.0);

type PolyMatrix<T = f64> = Vec<Vec<TrigPoly<T>>>;

fn grid_res_for(dim: usize, wanted: usize) -> usize {
    let mut res = wanted.max(2);
    while res > 2 && res.pow(dim as u32) > MAX_GRID_POINTS {
        res -= 1;
    }
    res
}

fn identity_metric<T: Coeff>(n: usize) -> PolyMatrix<T> {
    (0..n).map(|i| (0..n).map(|j| if i == j { TrigPoly::constant(n, T::one()) } else { TrigPoly::zero(n) }).collect()).collect()
}

fn sum_polys<T: Coeff>(n: usize, it: impl Iterator<Item = TrigPoly<T>>) -> TrigPoly<T> {
    it.fold(TrigPoly::zero(n), |acc, p| acc.add(&p))
}

/// `g~_ij = th(Y) gy_i gy_j / s^2 + (gy_i tp_j + tp_i gy_j) / s + C (g_ij - gy_i gy_j / s)`
/// where `gy = G Y`, `s = Y^T G Y` (a constant here) and `tp = theta^T P`
/// with `P` the `g`-orthogonal projection away from `Y`.
fn metric_formula<T: Coeff>(g: &PolyMatrix<T>, y: &[TrigPoly<T>], theta: &[TrigPoly<T>], c: &T, s_inv: &T) -> PolyMatrix<T> {
    let n = y.len();
    let gy: Vec<TrigPoly<T>> = (0..n).map(|i| sum_polys(n, (0..n).map(|j| g[i][j].mul(&y[j])))).collect();
    let ty = sum_polys(n, (0..n).map(|i| theta[i].mul(&y[i])));
    let tp: Vec<TrigPoly<T>> = (0..n).map(|j| theta[j].sub(&ty.mul(&gy[j]).scale(s_inv))).collect();
    let s_inv2 = s_inv.clone() * s_inv.clone();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let gg = gy[i].mul(&gy[j]);
                    ty.mul(&gg)
                        .scale(&s_inv2)
                        .add(&gy[i].mul(&tp[j]).add(&tp[i].mul(&gy[j])).scale(s_inv))
                        .add(&g[i][j].sub(&gg.scale(s_inv)).scale(c))
                })
                .collect()
        })
        .collect()
}

fn eval_matrix(m: &PolyMatrix, x: &[f64]) -> DMatrix<f64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, j| m[i][j].eval(x))
}

/// Smallest eigenvalue over the grid and a bound valid on the whole torus
/// (Weyl: eigenvalues move by at most the Frobenius norm of the change).
pub fn certified_min_eigenvalue(m: &PolyMatrix, res: usize) -> (f64, f64) {
    let n = m.len();
    let mut lo = f64::INFINITY;
    for_each_grid_point(n, res, |_, x| {
        let e = SymmetricEigen::new(eval_matrix(m, x)).eigenvalues.min();
        lo = lo.min(e);
    });
    let margin: f64 =
        m.iter().flat_map(|row| row.iter()).map(|p| p.lipschitz_margin(0.5 / res as f64).powi(2)).sum::<f64>().sqrt();
    (lo, lo - margin)
}

#[derive(Clone, Debug)]
pub struct MetricField {
    pub dim: usize,
    /// Entries of `g~` (symmetric).
    pub entries: PolyMatrix,
    pub base: PolyMatrix,
    pub theta: OneForm,
    /// The flow field `Y`.
    pub field: Vec<TrigPoly>,
    pub c: f64,
    /// `(C, certified min eigenvalue)` for every `C` tried.
    pub c_history: Vec<(f64, f64)>,
    pub min_eigenvalue: f64,
    /// `max |g~ Y - theta|` over coefficients (exact arithmetic when
    /// `symbolic`).
    pub duality_residual: f64,
    /// True when `Y^T g0 Y` is constant and the entries are exact products.
    pub symbolic: bool,
    /// Grid residual of the entry fit when not symbolic.
    pub fit_residual: f64,
}

impl MetricField {
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        eval_matrix(&self.entries, x)
    }

    pub fn degree(&self) -> i64 {
        self.entries.iter().flat_map(|r| r.iter()).map(TrigPoly::degree).max().unwrap_or(0)
    }

    /// Mean values of the entries, and the largest nonconstant coefficient.
    pub fn constant_part(&self) -> (DMatrix<f64>, f64) {
        let n = self.dim;
        let mean = DMatrix::from_fn(n, n, |i, j| self.entries[i][j].mean());
        let zero = vec![0i64; n];
        let rest = self
            .entries
            .iter()
            .flat_map(|r| r.iter())
            .flat_map(|p| p.terms().filter(|(k, _, _)| **k != zero).map(|(_, c, s)| c.abs().max(s.abs())).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        (mean, rest)
    }
}

/// Builds `g~` from a strongly adapted `theta`, doubling `C` from 1 until
/// the certified minimum eigenvalue reaches `delta`. `g0` defaults to the
/// identity.
pub fn build_metric(flow: &TorusFlow, theta: &OneForm, g0: Option<&PolyMatrix>, delta: f64) -> Result<MetricField> {
    let n = flow.dim();
    check_dim(n, theta.dim())?;
    let report = check_adapted(flow, theta, EXACT_TOL)?;
    if report.classification != Adaptation::Strong {
        return Err(Error::NotStronglyAdapted(format!(
            "classification {}, certified lower bound of theta(Y) {:e}",
            report.classification.as_str(),
            report.certified_lower
        )));
    }
    let base = g0.cloned().unwrap_or_else(|| identity_metric(n));
    if base.len() != n || base.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: base.len() });
    }
    for i in 0..n {
        for j in 0..i {
            if base[i][j].sub(&base[j][i]).max_coeff() > 0.0 {
                return Err(Error::InvalidParameter("base metric is not symmetric".into()));
            }
        }
    }
    let y = flow.components().to_vec();
    let comps = theta.components().to_vec();
    let gy: Vec<TrigPoly> = (0..n).map(|i| sum_polys(n, (0..n).map(|j| base[i][j].mul(&y[j])))).collect();
    let s = sum_polys(n, (0..n).map(|i| y[i].mul(&gy[i])));
    let s_const = s.sub(&TrigPoly::constant(n, s.mean())).max_coeff() <= 1e-12 * s.mean().abs();
    if s.mean() <= 0.0 {
        return Err(Error::MetricNotPositive { c: 0.0 });
    }

    let y_q: Vec<TrigPoly<BigRational>> = y.iter().map(TrigPoly::to_rational).collect();
    let th_q: Vec<TrigPoly<BigRational>> = comps.iter().map(TrigPoly::to_rational).collect();
    let g_q: PolyMatrix<BigRational> = base.iter().map(|r| r.iter().map(TrigPoly::to_rational).collect()).collect();
    let s_q = sum_polys(n, (0..n).map(|i| y_q[i].mul(&sum_polys(n, (0..n).map(|j| g_q[i][j].mul(&y_q[j]))))));
    let symbolic = s_const && s_q.terms().all(|(k, _, _)| k.iter().all(|&c| c == 0));

    let mut c = 1.0f64;
    let mut history = Vec::new();
    loop {
        let (entries, fit_residual, duality_residual) = if symbolic {
            let s_inv = num_traits::Inv::inv(s_q.mean());
            let c_q = BigRational::from_float(c).expect("finite C");
            let exact = metric_formula(&g_q, &y_q, &th_q, &c_q, &s_inv);
            let duality = (0..n)
                .map(|i| sum_polys(n, (0..n).map(|j| exact[i][j].mul(&y_q[j]))).sub(&th_q[i]).to_f64().max_coeff())
                .fold(0.0, f64::max);
            let entries: PolyMatrix = exact.iter().map(|r| r.iter().map(TrigPoly::to_f64).collect()).collect();
            (entries, 0.0, duality)
        } else {
            let (entries, fit) = fitted_metric(&base, &y, &comps, c)?;
            let duality = grid_duality(&entries, &y, &comps);
            (entries, fit, duality)
        };
        let deg = entries.iter().flat_map(|r| r.iter()).map(TrigPoly::degree).max().unwrap_or(0);
        let mut res = grid_res_for(n, (8 * deg).max(8) as usize);
        let (mut lo, mut cert) = certified_min_eigenvalue(&entries, res);
        while cert < delta && lo > delta && (2 * res).pow(n as u32) <= MAX_GRID_POINTS {
            res *= 2;
            (lo, cert) = certified_min_eigenvalue(&entries, res);
        }
        history.push((c, cert));
        if cert >= delta {
            return Ok(MetricField {
                dim: n,
                entries,
                base,
                theta: theta.clone(),
                field: y,
                c,
                c_history: history,
                min_eigenvalue: cert,
                duality_residual,
                symbolic,
                fit_residual,
            });
        }
        if c >= 2f64.powi(40) {
            return Err(Error::MetricNotPositive { c });
        }
        c *= 2.0;
    }
}

/// Pointwise evaluation of the displayed formula, fitted by trig polynomials.
fn fitted_metric(base: &PolyMatrix, y: &[TrigPoly], theta: &[TrigPoly], c: f64) -> Result<(PolyMatrix, f64)> {
    let n = y.len();
    let deg = base.iter().flat_map(|r| r.iter()).map(TrigPoly::degree).max().unwrap_or(0)
        + 2 * y.iter().map(TrigPoly::degree).max().unwrap_or(0)
        + theta.iter().map(TrigPoly::degree).max().unwrap_or(0)
        + 4;
    let res = grid_res_for(n, (2 * deg + 2) as usize);
    let deg = deg.min((res as i64 - 1) / 2);
    let point = |x: &[f64]| -> DMatrix<f64> {
        let g = eval_matrix(base, x);
        let yv = DVector::from_iterator(n, y.iter().map(|p| p.eval(x)));
        let tv = DVector::from_iterator(n, theta.iter().map(|p| p.eval(x)));
        let gy = &g * &yv;
        let s = yv.dot(&gy);
        let ty = tv.dot(&yv);
        let tp = &tv - &gy * (ty / s);
        &gy * gy.transpose() * (ty / (s * s)) + (&gy * tp.transpose() + &tp * gy.transpose()) / s + (&g - &gy * gy.transpose() / s) * c
    };
    let mut samples = vec![vec![Vec::new(); n]; n];
    for_each_grid_point(n, res, |_, x| {
        let m = point(x);
        for i in 0..n {
            for j in 0..n {
                samples[i][j].push(m[(i, j)]);
            }
        }
    });
    let entries: PolyMatrix =
        (0..n).map(|i| (0..n).map(|j| fit_on_grid(n, res, deg, &samples[i][j]).pruned(1e-15)).collect()).collect();
    let mut residual: f64 = 0.0;
    for_each_grid_point(n, grid_res_for(n, 2 * res + 1), |_, x| {
        let diff = eval_matrix(&entries, x) - point(x);
        residual = residual.max(diff.amax());
    });
    Ok((entries, residual))
}

fn grid_duality(entries: &PolyMatrix, y: &[TrigPoly], theta: &[TrigPoly]) -> f64 {
    let n = y.len();
    let mut worst: f64 = 0.0;
    for_each_grid_point(n, grid_res_for(n, 16), |_, x| {
        let g = eval_matrix(entries, x);
        let yv = DVector::from_iterator(n, y.iter().map(|p| p.eval(x)));
        let tv = DVector::from_iterator(n, theta.iter().map(|p| p.eval(x)));
        worst = worst.max((g * yv - tv).amax());
    });
    worst
}

/// `q : (R/Z)^n -> R^m` with `p = L_Y q`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingMap {
    pub dim: usize,
    pub q: Vec<TrigPoly>,
    pub p: Vec<TrigPoly>,
    /// `max |<d_i q, d_j q> - g~_ij|` over the check grid.
    pub residual: f64,
    /// Frequencies and radii when the map is a flat embedding.
    pub frequencies: Vec<Freq>,
    pub radii: Vec<f64>,
    /// Smallest Gram determinant over the check grid (immersion check).
    pub min_gram_det: f64,
    /// Smallest image distance between distinct check-grid points.
    pub min_separation: f64,
    pub converged: bool,
    /// Max residual after each optimizer iteration (empty for flat maps).
    pub residual_history: Vec<f64>,
}

impl EmbeddingMap {
    fn new(q: Vec<TrigPoly>, metric: &MetricField) -> Self {
        let n = metric.dim;
        let p = lie_derivative_vec(&metric.field, &q);
        let mut emb = EmbeddingMap {
            dim: n,
            q,
            p,
            residual: 0.0,
            frequencies: Vec::new(),
            radii: Vec::new(),
            min_gram_det: 0.0,
            min_separation: 0.0,
            converged: true,
            residual_history: Vec::new(),
        };
        emb.residual = emb.gram_residual(metric);
        emb.immersion_checks();
        emb
    }

    pub fn target_dim(&self) -> usize {
        self.q.len()
    }

    pub fn eval_q(&self, y: &[f64]) -> Vec<f64> {
        self.q.iter().map(|c| c.eval(y)).collect()
    }

    pub fn eval_p(&self, y: &[f64]) -> Vec<f64> {
        self.p.iter().map(|c| c.eval(y)).collect()
    }

    /// `m x n` matrix of `d_i q`.
    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.q.len(), self.dim, |k, i| self.q[k].partial(i).eval(y))
    }

    fn gram_polys(&self) -> PolyMatrix {
        let n = self.dim;
        let d: Vec<Vec<TrigPoly>> = self.q.iter().map(TrigPoly::gradient).collect();
        (0..n).map(|i| (0..n).map(|j| sum_polys(n, d.iter().map(|g| g[i].mul(&g[j])))).collect()).collect()
    }

    /// Grid maximum of `|<d_i q, d_j q> - g~_ij|`.
    pub fn gram_residual(&self, metric: &MetricField) -> f64 {
        let gram = self.gram_polys();
        let deg = gram.iter().flat_map(|r| r.iter()).map(TrigPoly::degree).max().unwrap_or(0).max(metric.degree());
        let mut worst: f64 = 0.0;
        for_each_grid_point(self.dim, grid_res_for(self.dim, (2 * deg + 2) as usize), |_, x| {
            worst = worst.max((eval_matrix(&gram, x) - metric.eval(x)).amax());
        });
        worst
    }

    fn immersion_checks(&mut self) {
        let n = self.dim;
        let gram = self.gram_polys();
        let res = grid_res_for(n, 16).min((4096f64.powf(1.0 / n as f64)) as usize).max(4);
        let mut det = f64::INFINITY;
        let mut pts = Vec::new();
        for_each_grid_point(n, res, |_, x| {
            det = det.min(eval_matrix(&gram, x).determinant());
            pts.push(self.eval_q(x));
        });
        let mut sep = f64::INFINITY;
        for i in 0..pts.len() {
            for j in 0..i {
                sep = sep.min(dist(&pts[i], &pts[j]));
            }
        }
        self.min_gram_det = det;
        self.min_separation = sep;
    }

    /// `max` over coefficients of `sum_k p_k d_i q_k - theta_i`: how far
    /// `(q, p)` is from pulling the canonical form back to `theta`.
    pub fn pullback_residual(&self, theta: &OneForm) -> f64 {
        let n = self.dim;
        (0..n)
            .map(|i| {
                let pulled = sum_polys(n, self.q.iter().zip(&self.p).map(|(q, p)| p.mul(&q.partial(i))));
                pulled.sub(&theta.components()[i]).max_coeff()
            })
            .fold(0.0, f64::max)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `L_Y f = sum_j Y_j d_j f` componentwise.
fn lie_derivative_vec(y: &[TrigPoly], f: &[TrigPoly]) -> Vec<TrigPoly> {
    let n = y.len();
    f.iter().map(|c| sum_polys(n, (0..n).map(|j| y[j].mul(&c.partial(j))))).collect()
}

/// Candidate frequencies for flat embeddings: canonical nonzero vectors with
/// entries in `[-2, 2]`, shortest first.
fn candidates(n: usize) -> Vec<Freq> {
    let mut c: Vec<Freq> = frequency_box(n, 2).into_iter().filter(|k| k.iter().any(|&x| x != 0) && canonical(k).0 == *k).collect();
    c.sort_by_key(|k| (k.iter().map(|x| x * x).sum::<i64>(), std::cmp::Reverse(k.clone())));
    c
}

fn int_det(m: &[Vec<i64>]) -> i64 {
    match m.len() {
        0 => 1,
        1 => m[0][0],
        n => (0..n)
            .map(|j| {
                let minor: Vec<Vec<i64>> = m[1..].iter().map(|r| r.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, v)| *v).collect()).collect();
                let sign = if j % 2 == 0 { 1 } else { -1 };
                sign * m[0][j] * int_det(&minor)
            })
            .sum(),
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// True when the vectors generate `Z^n` (gcd of the maximal minors is 1),
/// which makes `y -> (e^{2 pi i l.y})_l` injective on the torus.
pub fn generates_lattice(vectors: &[Freq], n: usize) -> bool {
    if vectors.len() < n {
        return false;
    }
    let mut g = 0;
    for_each_subset(vectors.len(), n, |idx| {
        let m: Vec<Vec<i64>> = idx.iter().map(|&i| vectors[i].clone()).collect();
        g = gcd(g, int_det(&m));
        g == 1
    });
    g == 1
}

/// Calls `f` on each `k`-subset of `0..len` in lexicographic order until it
/// returns true.
fn for_each_subset(len: usize, k: usize, mut f: impl FnMut(&[usize]) -> bool) -> bool {
    if k > len {
        return false;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if f(&idx) {
            return true;
        }
        let mut i = k;
        loop {
            if i == 0 {
                return false;
            }
            i -= 1;
            if idx[i] < len - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Subsets tried before giving up.
const FLAT_SEARCH_BUDGET: usize = 2_000_000;

/// Frequencies `l_i` and weights `w_i = (2 pi r_i)^2 > 0` with
/// `sum w_i l_i l_i^T = g`.
pub fn flat_decomposition(g: &DMatrix<f64>) -> Result<(Vec<Freq>, Vec<f64>)> {
    let n = g.nrows();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let b = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| g[(i, j)]));
    let cand = candidates(n);
    let mut best = f64::INFINITY;
    let mut tried = 0usize;
    let mut found = None;
    for size in 1..=pairs.len().min(cand.len()) {
        let hit = for_each_subset(cand.len(), size, |idx| {
            tried += 1;
            if tried > FLAT_SEARCH_BUDGET {
                return true;
            }
            let a = DMatrix::from_fn(pairs.len(), size, |r, c| {
                let (i, j) = pairs[r];
                (cand[idx[c]][i] * cand[idx[c]][j]) as f64
            });
            let Ok(w) = a.clone().svd(true, true).solve(&b, 1e-12) else { return false };
            let residual = (&a * &w - &b).amax();
            best = best.min(residual);
            if residual >= 1e-12 || w.iter().any(|&x| x <= 1e-14) {
                return false;
            }
            let freqs: Vec<Freq> = idx.iter().map(|&i| cand[i].clone()).collect();
            if !generates_lattice(&freqs, n) {
                return false;
            }
            found = Some((freqs, w.iter().copied().collect()));
            true
        });
        if hit {
            break;
        }
    }
    found.ok_or(Error::CandidateSetExhausted { best_residual: best })
}

fn flat_q(n: usize, freqs: &[Freq], weights: &[f64]) -> (Vec<TrigPoly>, Vec<f64>) {
    let mut q = Vec::new();
    let mut radii = Vec::new();
    for (l, w) in freqs.iter().zip(weights) {
        let r = w.sqrt() / TAU;
        q.push(TrigPoly::cos_term(n, l, r));
        q.push(TrigPoly::sin_term(n, l, r));
        radii.push(r);
    }
    (q, radii)
}

/// Exact isometric embedding of a constant metric as a product of round
/// circles `q(y) = (r_i cos 2 pi l_i.y, r_i sin 2 pi l_i.y)_i`.
pub fn flat_embedding(metric: &MetricField) -> Result<EmbeddingMap> {
    let (g, rest) = metric.constant_part();
    if rest > 1e-12 {
        return Err(Error::InvalidParameter(format!("metric is not constant (nonconstant coefficient {rest:e})")));
    }
    let (freqs, weights) = flat_decomposition(&g)?;
    let (q, radii) = flat_q(metric.dim, &freqs, &weights);
    let mut emb = EmbeddingMap::new(q, metric);
    emb.frequencies = freqs;
    emb.radii = radii;
    Ok(emb)
}

/// Levenberg-Marquardt fit of `<d_i q, d_j q> = g~_ij` on a grid over trig
/// polynomial coefficients of degree `degree`, started from the flat
/// embedding of the mean metric (padded to `m` coordinates with small
/// seeded noise). `converged` reports whether the residual reached `tol`.
pub fn optimize_embedding(metric: &MetricField, m: usize, degree: i64, iters: usize, tol: f64) -> Result<EmbeddingMap> {
    let n = metric.dim;
    if m < 2 * n + 2 {
        return Err(Error::InvalidParameter(format!("target dimension {m} is below 2n + 2 = {}", 2 * n + 2)));
    }
    if degree < 1 {
        return Err(Error::InvalidParameter("degree must be at least 1".into()));
    }
    let (mean, _) = metric.constant_part();
    let (freqs, weights) = flat_decomposition(&mean)?;
    let (q0, _) = flat_q(n, &freqs, &weights);
    if q0.len() > m {
        return Err(Error::InvalidParameter(format!("flat start needs {} coordinates, more than {m}", q0.len())));
    }
    let basis: Vec<Freq> = frequency_box(n, degree).into_iter().filter(|k| k.iter().any(|&x| x != 0) && canonical(k).0 == *k).collect();
    let nb = basis.len();
    let nvar = m * nb * 2;
    let index = |comp: usize, f: usize, sin: bool| (comp * nb + f) * 2 + usize::from(sin);
    let mut x = DVector::zeros(nvar);
    for (comp, poly) in q0.iter().enumerate() {
        for (f, k) in basis.iter().enumerate() {
            let (c, s) = poly.coeff(k);
            x[index(comp, f, false)] = c;
            x[index(comp, f, true)] = s;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for comp in q0.len()..m {
        for (f, k) in basis.iter().enumerate() {
            if k.iter().map(|c| c.abs()).max() == Some(1) {
                x[index(comp, f, false)] = 1e-3 * rng.gen_range(-1.0..1.0);
                x[index(comp, f, true)] = 1e-3 * rng.gen_range(-1.0..1.0);
            }
        }
    }

    let res = grid_res_for(n, (4 * degree + 2 * metric.degree() + 2) as usize);
    let mut points = Vec::new();
    for_each_grid_point(n, res, |_, y| points.push(y.to_vec()));
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let targets: Vec<DMatrix<f64>> = points.iter().map(|y| metric.eval(y)).collect();
    // d_i of each basis function at each point: (cos part, sin part).
    let dbasis: Vec<Vec<Vec<(f64, f64)>>> = points
        .iter()
        .map(|y| {
            basis
                .iter()
                .map(|k| {
                    let ph = TAU * k.iter().zip(y).map(|(&a, b)| a as f64 * b).sum::<f64>();
                    (0..n).map(|i| (-TAU * k[i] as f64 * ph.sin(), TAU * k[i] as f64 * ph.cos())).collect()
                })
                .collect()
        })
        .collect();
    let nres = points.len() * pairs.len();

    let residuals_and_jacobian = |x: &DVector<f64>, want_jac: bool| -> (DVector<f64>, Option<DMatrix<f64>>) {
        let mut r = DVector::zeros(nres);
        let mut jac = want_jac.then(|| DMatrix::zeros(nres, nvar));
        for (pi, db) in dbasis.iter().enumerate() {
            // dq[comp][i]
            let dq: Vec<Vec<f64>> = (0..m)
                .map(|comp| {
                    (0..n)
                        .map(|i| (0..nb).map(|f| x[index(comp, f, false)] * db[f][i].0 + x[index(comp, f, true)] * db[f][i].1).sum())
                        .collect()
                })
                .collect();
            for (pr, &(i, j)) in pairs.iter().enumerate() {
                let row = pi * pairs.len() + pr;
                r[row] = (0..m).map(|c| dq[c][i] * dq[c][j]).sum::<f64>() - targets[pi][(i, j)];
                if let Some(jm) = jac.as_mut() {
                    for c in 0..m {
                        for f in 0..nb {
                            jm[(row, index(c, f, false))] = db[f][i].0 * dq[c][j] + dq[c][i] * db[f][j].0;
                            jm[(row, index(c, f, true))] = db[f][i].1 * dq[c][j] + dq[c][i] * db[f][j].1;
                        }
                    }
                }
            }
        }
        (r, jac)
    };

    let (mut r, _) = residuals_and_jacobian(&x, false);
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    let mut history = vec![r.amax()];
    for _ in 0..iters {
        if r.amax() < 1e-14 {
            break;
        }
        let (_, jac) = residuals_and_jacobian(&x, true);
        let jac = jac.expect("jacobian requested");
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut accepted = false;
        for _ in 0..20 {
            let mut a = jtj.clone();
            for d in 0..nvar {
                a[(d, d)] += mu * (1.0 + jtj[(d, d)]);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let trial = &x + &step;
            let (rt, _) = residuals_and_jacobian(&trial, false);
            let ct = rt.norm_squared();
            if ct < cost {
                x = trial;
                r = rt;
                cost = ct;
                mu = (mu / 10.0).max(1e-15);
                accepted = true;
                break;
            }
            mu *= 10.0;
        }
        history.push(r.amax());
        if !accepted {
            break;
        }
    }

    let q: Vec<TrigPoly> = (0..m)
        .map(|comp| {
            let mut p = TrigPoly::zero(n);
            for (f, k) in basis.iter().enumerate() {
                p.add_term(k, x[index(comp, f, false)], x[index(comp, f, true)]);
            }
            p
        })
        .collect();
    let mut emb = EmbeddingMap::new(q, metric);
    emb.converged = emb.residual <= tol;
    emb.residual_history = history;
    Ok(emb)
}

/// Dense per-frequency coefficient table used for fast evaluation of a
/// family of trig polynomials and their first two derivatives.
#[derive(Clone, Debug)]
struct Bank {
    n: usize,
    freqs: Vec<Freq>,
}

impl Bank {
    fn new(n: usize, polys: &[&TrigPoly]) -> Self {
        let mut freqs: Vec<Freq> = polys.iter().flat_map(|p| p.terms().map(|(k, _, _)| k.clone())).collect();
        freqs.sort();
        freqs.dedup();
        Bank { n, freqs }
    }

    fn coeffs(&self, p: &TrigPoly) -> Vec<(f64, f64)> {
        self.freqs.iter().map(|k| p.coeff(k)).collect()
    }

    fn phases(&self, y: &[f64]) -> Vec<(f64, f64)> {
        self.freqs
            .iter()
            .map(|k| {
                let ph = TAU * k.iter().zip(y).map(|(&a, b)| a as f64 * b).sum::<f64>();
                (ph.cos(), ph.sin())
            })
            .collect()
    }

    fn value(&self, c: &[(f64, f64)], ph: &[(f64, f64)]) -> f64 {
        c.iter().zip(ph).map(|((a, b), (co, si))| a * co + b * si).sum()
    }

    fn grad(&self, c: &[(f64, f64)], ph: &[(f64, f64)]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                c.iter()
                    .zip(ph)
                    .zip(&self.freqs)
                    .map(|(((a, b), (co, si)), k)| TAU * k[i] as f64 * (b * co - a * si))
                    .sum()
            })
            .collect()
    }

    fn hessian(&self, c: &[(f64, f64)], ph: &[(f64, f64)]) -> DMatrix<f64> {
        let n = self.n;
        let mut h = DMatrix::zeros(n, n);
        for (((a, b), (co, si)), k) in c.iter().zip(ph).zip(&self.freqs) {
            let v = a * co + b * si;
            if v == 0.0 {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] -= TAU * TAU * (k[i] * k[j]) as f64 * v;
                }
            }
        }
        h
    }
}

#[derive(Clone, Debug)]
struct Derived {
    bank: Bank,
    q: Vec<Vec<(f64, f64)>>,
    a: Vec<Vec<(f64, f64)>>,
    v: Vec<(f64, f64)>,
}

/// Local data of the embedded manifold at a base point.
struct Local {
    q: Vec<f64>,
    /// `dq[k][i] = d_i q_k`.
    dq: Vec<Vec<f64>>,
    d2q: Vec<DMatrix<f64>>,
    a: Vec<f64>,
    da: Vec<Vec<f64>>,
    v: f64,
    dv: Vec<f64>,
}

/// Potential on `R^m` extending `v` off `q(N)` so that `-grad V = a` on
/// `q(N)`:
///
/// `V(z) = chi(d / eps) [v(y*) - <a(y*), z - q(y*)> + kappa d^2 / 2] + (1 - chi(d / eps)) tau |z|^2`
///
/// with `y*` the nearest base point, `d = |z - q(y*)|` and `chi` the fixed
/// quintic cutoff. Because `z - q(y*)` is normal at `y*`, pairing with `a`
/// equals pairing with its normal part. The `kappa` term and its gradient
/// vanish on `q(N)`; it keeps nearby trajectories from drifting off.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtendedPotential {
    pub base_dim: usize,
    pub dim: usize,
    pub q: Vec<TrigPoly>,
    /// `a = L_Y p`.
    pub accel: Vec<TrigPoly>,
    /// `v = |p|^2 / 2 - L`.
    pub v: TrigPoly,
    /// Tubular radius: half the reach estimate.
    pub eps: f64,
    pub reach: f64,
    pub tau: f64,
    #[serde(default)]
    pub kappa: f64,
    pub cutoff: (f64, f64),
    pub newton_iters: usize,
    pub newton_tol: f64,
    /// Warm-start table: base points and their images.
    pub samples: Vec<(Vec<f64>, Vec<f64>)>,
    /// Bound on `sup |<a, d_i q> + d_i v|`.
    pub identity_residual: f64,
    /// `max |grad V(q(y)) + a(y)|` over the samples.
    pub gradient_residual: f64,
    /// `(tau, K)` with `V >= tau |z|^2 - K`.
    pub coercive: (f64, f64),
    #[serde(skip)]
    derived: OnceLock<Derived>,
}

#[derive(Clone, Debug)]
pub struct PotentialOptions {
    pub tau: f64,
    /// Normal stiffness `kappa`.
    pub kappa: f64,
    pub newton_iters: usize,
    pub newton_tol: f64,
    /// Reject tubes thinner than this.
    pub min_reach: f64,
    /// Sample grid per axis; 0 chooses automatically.
    pub sample_res: usize,
}

impl Default for PotentialOptions {
    fn default() -> Self {
        PotentialOptions { tau: 1.0, kappa: 50.0, newton_iters: 30, newton_tol: 1e-14, min_reach: 1e-6, sample_res: 0 }
    }
}

/// Builds the extended potential with default options.
pub fn build_potential(emb: &EmbeddingMap, flow: &TorusFlow, l: &TrigPoly) -> Result<ExtendedPotential> {
    build_potential_with(emb, flow, l, &PotentialOptions::default())
}

pub fn build_potential_with(emb: &EmbeddingMap, flow: &TorusFlow, l: &TrigPoly, opts: &PotentialOptions) -> Result<ExtendedPotential> {
    let n = emb.dim;
    check_dim(n, flow.dim())?;
    check_dim(n, l.dim())?;
    if !(opts.tau > 0.0) || !(opts.kappa >= 0.0) {
        return Err(Error::InvalidParameter("need tau > 0 and kappa >= 0".into()));
    }
    let m = emb.target_dim();
    let a = lie_derivative_vec(flow.components(), &emb.p);
    let half_p2 = sum_polys(n, emb.p.iter().map(|p| p.mul(p))).scale(&0.5);
    let v = half_p2.sub(l);
    let identity_residual = (0..n)
        .map(|i| sum_polys(n, a.iter().zip(&emb.q).map(|(ak, qk)| ak.mul(&qk.partial(i)))).add(&v.partial(i)).amplitude_bound())
        .fold(0.0, f64::max);

    let deg = emb.q.iter().map(TrigPoly::degree).max().unwrap_or(1).max(1) as usize;
    let cap = (4096f64.powf(1.0 / n as f64)).floor() as usize;
    let res = if opts.sample_res > 0 { opts.sample_res } else { (16 * deg).min(cap).max(8) };
    let mut samples = Vec::new();
    for_each_grid_point(n, res, |_, y| samples.push((y.to_vec(), emb.eval_q(y))));

    // Federer: reach = inf |x' - x|^2 / (2 dist(x' - x, T_x)).
    let tangents: Vec<Vec<Vec<f64>>> = samples.iter().map(|(y, _)| orthonormal_tangents(&emb.jacobian(y))).collect();
    let mut reach = f64::INFINITY;
    for i in 0..samples.len() {
        for j in 0..samples.len() {
            if i == j {
                continue;
            }
            let w: Vec<f64> = samples[j].1.iter().zip(&samples[i].1).map(|(a, b)| a - b).collect();
            let w2: f64 = w.iter().map(|x| x * x).sum();
            let tan2: f64 = tangents[i].iter().map(|t| t.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum();
            let normal = (w2 - tan2).max(0.0).sqrt();
            if normal > 1e-14 * w2.sqrt() {
                reach = reach.min(w2 / (2.0 * normal));
            }
        }
    }
    if !(reach >= opts.min_reach) {
        return Err(Error::ReachTooSmall { reach, threshold: opts.min_reach });
    }
    let eps = 0.5 * reach;

    let q_max: f64 = emb.q.iter().map(|c| c.amplitude_bound().powi(2)).sum::<f64>().sqrt();
    let a_max: f64 = a.iter().map(|c| c.amplitude_bound().powi(2)).sum::<f64>().sqrt();
    let r_max = q_max + CUTOFF.1 * eps;
    let f_max = v.amplitude_bound() + a_max * CUTOFF.1 * eps + 0.5 * opts.kappa * (CUTOFF.1 * eps).powi(2);
    let mut pot = ExtendedPotential {
        base_dim: n,
        dim: m,
        q: emb.q.clone(),
        accel: a,
        v,
        eps,
        reach,
        tau: opts.tau,
        kappa: opts.kappa,
        cutoff: CUTOFF,
        newton_iters: opts.newton_iters,
        newton_tol: opts.newton_tol,
        samples,
        identity_residual,
        gradient_residual: 0.0,
        coercive: (opts.tau, f_max + opts.tau * r_max * r_max),
        derived: OnceLock::new(),
    };
    pot.gradient_residual = pot
        .samples
        .iter()
        .map(|(y, z)| {
            let g = pot.gradient(z);
            let av = pot.accel.iter().map(|c| c.eval(y));
            g.iter().zip(av).map(|(gi, ai)| (gi + ai).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    Ok(pot)
}

fn orthonormal_tangents(j: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for c in 0..j.ncols() {
        let mut v: Vec<f64> = j.column(c).iter().copied().collect();
        for t in &out {
            let d: f64 = t.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ti) in v.iter_mut().zip(t) {
                *vi -= d * ti;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}

impl ExtendedPotential {
    fn derived(&self) -> &Derived {
        self.derived.get_or_init(|| {
            let mut all: Vec<&TrigPoly> = self.q.iter().chain(&self.accel).collect();
            all.push(&self.v);
            let bank = Bank::new(self.base_dim, &all);
            Derived {
                q: self.q.iter().map(|p| bank.coeffs(p)).collect(),
                a: self.accel.iter().map(|p| bank.coeffs(p)).collect(),
                v: bank.coeffs(&self.v),
                bank,
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.dim || self.accel.len() != self.dim {
            return Err(Error::Format("extended potential: component count differs from dim".into()));
        }
        let n = self.base_dim;
        if self.q.iter().chain(&self.accel).any(|p| p.dim() != n) || self.v.dim() != n {
            return Err(Error::Format("extended potential: base dimension mismatch".into()));
        }
        if !(self.eps > 0.0 && self.tau > 0.0) || self.samples.is_empty() {
            return Err(Error::Format("extended potential: need eps > 0, tau > 0 and samples".into()));
        }
        if self.samples.iter().any(|(y, z)| y.len() != n || z.len() != self.dim) {
            return Err(Error::Format("extended potential: malformed sample table".into()));
        }
        Ok(())
    }

    pub fn coercive_bound(&self) -> Option<(f64, f64)> {
        Some(self.coercive)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn local(&self, y: &[f64]) -> Local {
        let d = self.derived();
        let ph = d.bank.phases(y);
        Local {
            q: d.q.iter().map(|c| d.bank.value(c, &ph)).collect(),
            dq: d.q.iter().map(|c| d.bank.grad(c, &ph)).collect(),
            d2q: d.q.iter().map(|c| d.bank.hessian(c, &ph)).collect(),
            a: d.a.iter().map(|c| d.bank.value(c, &ph)).collect(),
            da: d.a.iter().map(|c| d.bank.grad(c, &ph)).collect(),
            v: d.bank.value(&d.v, &ph),
            dv: d.bank.grad(&d.v, &ph),
        }
    }

    /// `G - H` with `G = Dq^T Dq` and `H_ik = <d_i d_k q, z - q>`.
    fn projection_matrix(&self, loc: &Local, z: &[f64]) -> DMatrix<f64> {
        let n = self.base_dim;
        let diff: Vec<f64> = z.iter().zip(&loc.q).map(|(a, b)| a - b).collect();
        DMatrix::from_fn(n, n, |i, k| {
            (0..self.dim).map(|c| loc.dq[c][i] * loc.dq[c][k] - loc.d2q[c][(i, k)] * diff[c]).sum()
        })
    }

    /// Nearest base point by Newton on `Dq^T (z - q(y)) = 0`, warm-started
    /// at the nearest sample.
    fn project(&self, z: &[f64]) -> (Vec<f64>, Local, f64) {
        let n = self.base_dim;
        let (y0, _) = self
            .samples
            .iter()
            .min_by(|a, b| dist(&a.1, z).total_cmp(&dist(&b.1, z)))
            .expect("validated potential has samples");
        let start = self.local(y0);
        let d0 = dist(&start.q, z);
        let mut y = y0.clone();
        let mut loc = start;
        for _ in 0..self.newton_iters {
            let phi = DVector::from_fn(n, |i, _| (0..self.dim).map(|c| loc.dq[c][i] * (z[c] - loc.q[c])).sum());
            let Some(step) = self.projection_matrix(&loc, z).lu().solve(&phi) else { break };
            if !(step.amax() < 0.25) {
                break;
            }
            for (yi, s) in y.iter_mut().zip(step.iter()) {
                *yi += s;
            }
            loc = self.local(&y);
            if step.amax() < self.newton_tol {
                break;
            }
        }
        let d = dist(&loc.q, z);
        if d > d0 + 1e-12 {
            let loc = self.local(y0);
            return (y0.clone(), loc, d0);
        }
        (y.iter().map(|c| c.rem_euclid(1.0)).collect(), loc, d)
    }

    fn tube_value(&self, loc: &Local, z: &[f64]) -> f64 {
        let mut lin = 0.0;
        let mut d2 = 0.0;
        for ((a, zi), qi) in loc.a.iter().zip(z).zip(&loc.q) {
            lin += a * (zi - qi);
            d2 += (zi - qi) * (zi - qi);
        }
        loc.v - lin + 0.5 * self.kappa * d2
    }

    /// Base point nearest to `z` (within the tube).
    pub fn nearest_base_point(&self, z: &[f64]) -> Vec<f64> {
        self.project(z).0
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|x| x * x).sum();
        let (_, loc, d) = self.project(z);
        let (chi, _) = cutoff(d / self.eps, self.cutoff.0, self.cutoff.1);
        if chi == 0.0 {
            return self.tau * r2;
        }
        chi * self.tube_value(&loc, z) + (1.0 - chi) * self.tau * r2
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let m = self.dim;
        let r2: f64 = z.iter().map(|x| x * x).sum();
        let (_, loc, d) = self.project(z);
        let (chi, dchi) = cutoff(d / self.eps, self.cutoff.0, self.cutoff.1);
        if chi == 0.0 {
            return z.iter().map(|x| 2.0 * self.tau * x).collect();
        }
        let n = self.base_dim;
        let diff: Vec<f64> = z.iter().zip(&loc.q).map(|(a, b)| a - b).collect();
        // grad F = -a + Dq (G - H)^{-1} b,
        // b_i = d_i v + <d_i q, a> - <d_i a, z - q>.
        let b = DVector::from_fn(n, |i, _| {
            loc.dv[i] + (0..m).map(|c| loc.dq[c][i] * loc.a[c] - loc.da[c][i] * diff[c]).sum::<f64>()
        });
        let coef = self.projection_matrix(&loc, z).lu().solve(&b).unwrap_or_else(|| DVector::zeros(n));
        let grad_f: Vec<f64> =
            (0..m).map(|c| -loc.a[c] + (0..n).map(|i| loc.dq[c][i] * coef[i]).sum::<f64>() + self.kappa * diff[c]).collect();
        let f = self.tube_value(&loc, z);
        let radial = if d > 0.0 { dchi / self.eps * (f - self.tau * r2) / d } else { 0.0 };
        (0..m).map(|c| chi * grad_f[c] + radial * diff[c] + (1.0 - chi) * 2.0 * self.tau * z[c]).collect()
    }
}

impl PotentialField for ExtendedPotential {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, q: &[f64]) -> f64 {
        ExtendedPotential::value(self, q)
    }
    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        ExtendedPotential::gradient(self, q)
    }
}

#[derive(Clone, Debug)]
pub struct SampleReport {
    pub y0: Vec<f64>,
    pub max_deviation: f64,
    pub energy_drift: f64,
    /// Base-point error of the well trajectory at the last checkpoint.
    pub base_error: f64,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub samples: Vec<SampleReport>,
    pub max_deviation: f64,
    /// Largest relative energy change along any trajectory.
    pub energy_drift: f64,
    pub checkpoints: usize,
    pub dt: f64,
    pub pass: bool,
}

pub const CHECKPOINTS: usize = 20;

/// Fourth-order Yoshida steps with `dt = 1e-4`.
pub fn verify_embedding(
    flow: &TorusFlow,
    emb: &EmbeddingMap,
    pot: &ExtendedPotential,
    y0s: &[Vec<f64>],
    t_end: f64,
    tol: f64,
) -> Result<VerifyReport> {
    verify_embedding_with(flow, emb, pot, y0s, t_end, tol, 1e-4, Scheme::Yoshida4)
}

/// Integrates the well from `(q(y0), p(y0))` and compares with
/// `(q, p)(flow_map(t, y0))` at `CHECKPOINTS` equally spaced times (plus
/// `t = 0`). Samples run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn verify_embedding_with(
    flow: &TorusFlow,
    emb: &EmbeddingMap,
    pot: &ExtendedPotential,
    y0s: &[Vec<f64>],
    t_end: f64,
    tol: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<VerifyReport> {
    check_dim(flow.dim(), emb.dim)?;
    check_dim(emb.target_dim(), pot.dim)?;
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and T >= 0 (dt={dt}, T={t_end})")));
    }
    for y in y0s {
        check_dim(emb.dim, y.len())?;
    }
    let per = ((t_end / CHECKPOINTS as f64 / dt).ceil() as usize).max(1);
    let h = t_end / (per * CHECKPOINTS) as f64;
    let run = |y0: &Vec<f64>| -> Result<SampleReport> {
        let mut s = WellState::new(emb.eval_q(y0), emb.eval_p(y0))?;
        let e0 = energy(pot, &s);
        let mut max_dev: f64 = 0.0;
        let mut drift: f64 = 0.0;
        let mut base_error = 0.0;
        for k in 0..=CHECKPOINTS {
            if k > 0 && t_end > 0.0 {
                for _ in 0..per {
                    well_step(pot, &mut s, h, scheme);
                }
                if !s.is_finite() {
                    return Err(Error::NonFinite { t: k as f64 * t_end / CHECKPOINTS as f64 });
                }
            }
            let t = k as f64 * t_end / CHECKPOINTS as f64;
            let yt = flow_map_tol(flow, t, y0, 1e-12)?;
            let dq = dist(&s.q, &emb.eval_q(&yt));
            let dp = dist(&s.p, &emb.eval_p(&yt));
            max_dev = max_dev.max(dq).max(dp);
            drift = drift.max((energy(pot, &s) - e0).abs() / e0.abs().max(1.0));
            if k == CHECKPOINTS {
                base_error = torus_distance(&pot.nearest_base_point(&s.q), &yt);
            }
        }
        Ok(SampleReport { y0: y0.clone(), max_deviation: max_dev, energy_drift: drift, base_error })
    };
    let results: Vec<Result<SampleReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = y0s.iter().map(|y0| scope.spawn(move || run(y0))).collect();
        handles.into_iter().map(|h| h.join().expect("verification thread panicked")).collect()
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    let max_deviation = samples.iter().map(|s| s.max_deviation).fold(0.0, f64::max);
    let energy_drift = samples.iter().map(|s| s.energy_drift).fold(0.0, f64::max);
    Ok(VerifyReport { samples, max_deviation, energy_drift, checkpoints: CHECKPOINTS, dt: h, pass: max_deviation <= tol })
}

/// Exactness potential `L` (with `L_Y theta = dL`) for a strongly adapted form.
pub fn lagrangian(flow: &TorusFlow, theta: &OneForm) -> Result<TrigPoly> {
    let report = check_adapted(flow, theta, EXACT_TOL)?;
    report.potential.ok_or_else(|| Error::NotStronglyAdapted("L_Y theta is not exact".into()))
}

/// Pipeline for flat cases: metric, flat embedding, potential.
pub fn embed_flat(flow: &TorusFlow, theta: &OneForm) -> Result<(MetricField, EmbeddingMap, ExtendedPotential)> {
    let metric = build_metric(flow, theta, None, 1e-3)?;
    let emb = flat_embedding(&metric)?;
    let pot = build_potential(&emb, flow, &lagrangian(flow, theta)?)?;
    Ok((metric, emb, pot))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_metric_is_trivial() {
        let flow = TorusFlow::circle_shift();
        let m = build_metric(&flow, &OneForm::constant(&[1.0]), None, 1e-3).unwrap();
        assert_eq!(m.entries[0][0].mean(), 1.0);
        assert_eq!(m.entries[0][0].num_terms(), 1);
        assert_eq!(m.duality_residual, 0.0);
        assert!(m.symbolic);
    }

    #[test]
    fn c_must_grow_for_off_axis_theta() {
        let flow = TorusFlow::rotation(&[1.0, 0.0]);
        let m = build_metric(&flow, &OneForm::constant(&[1.0, 5.0]), None, 1e-3).unwrap();
        assert!(m.c_history[0].1 < 0.0);
        assert_eq!(m.c, 32.0);
        assert_eq!(m.duality_residual, 0.0);
        // [[1, 5], [5, 32]]
        assert_eq!(m.entries[0][1].mean(), 5.0);
        assert_eq!(m.entries[1][1].mean(), 32.0);
    }

    #[test]
    fn rejects_non_strong_forms() {
        let flow = TorusFlow::bryant();
        assert!(matches!(
            build_metric(&flow, &OneForm::constant(&[0.0, 1.0]), None, 1e-3),
            Err(Error::NotStronglyAdapted(_))
        ));
    }

    #[test]
    fn flat_decompositions() {
        let (f, w) = flat_decomposition(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(f, vec![vec![1, 0], vec![0, 1]]);
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-14));
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (f, w) = flat_decomposition(&g).unwrap();
        assert_eq!(f, vec![vec![1, 0], vec![0, 1], vec![1, 1]]);
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(!generates_lattice(&[vec![1, 1], vec![1, -1]], 2));
    }

    #[test]
    fn lattice_determinant() {
        assert_eq!(int_det(&[vec![2, 1, 0], vec![0, 1, 0], vec![1, 1, 3]]), 6);
        assert!(generates_lattice(&[vec![2, 1], vec![1, 1]], 2));
    }
}
