//! 1-forms with trig-polynomial coefficients on tori: Lie derivatives,
//! exactness, pullbacks, adaptation checks and averaging along a flow.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chart::ChartMap;
use crate::error::{check_dim, Error, Result};
use crate::flows::{flow_map_with_jacobian, reduce_mod1, TorusFlow};
use crate::hamiltonian::{PotentialField, WellState};
use crate::trig::{certified_min, fit_on_grid, for_each_grid_point, Coeff, GridBound, TrigPoly};

/// `sum_i theta_i dy_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneForm<T: Coeff = f64> {
    components: Vec<TrigPoly<T>>,
}

impl<T: Coeff> OneForm<T> {
    pub fn new(components: Vec<TrigPoly<T>>) -> Result<Self> {
        let n = components.len();
        for c in &components {
            check_dim(n, c.dim())?;
        }
        Ok(OneForm { components })
    }

    pub fn zero(n: usize) -> Self {
        OneForm { components: vec![TrigPoly::zero(n); n] }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[TrigPoly<T>] {
        &self.components
    }

    pub fn degree(&self) -> i64 {
        self.components.iter().map(TrigPoly::degree).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        OneForm { components: self.components.iter().zip(&other.components).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        OneForm { components: self.components.iter().zip(&other.components).map(|(a, b)| a.sub(b)).collect() }
    }

    pub fn scale(&self, c: &T) -> Self {
        OneForm { components: self.components.iter().map(|p| p.scale(c)).collect() }
    }

    pub fn max_coeff(&self) -> f64 {
        self.components.iter().map(TrigPoly::max_coeff).fold(0.0, f64::max)
    }

    /// `theta(Y) = sum_i theta_i Y_i`, exact.
    pub fn contract(&self, y: &[TrigPoly<T>]) -> TrigPoly<T> {
        let n = self.dim();
        self.components.iter().zip(y).fold(TrigPoly::zero(n), |acc, (a, b)| acc.add(&a.mul(b)))
    }

    /// `(1/2pi) d f`.
    pub fn differential_unscaled(f: &TrigPoly<T>) -> Self {
        OneForm { components: (0..f.dim()).map(|i| f.partial_unscaled(i)).collect() }
    }

    /// `(1/2pi) L_Y theta` by Cartan's formula
    /// `d(theta(Y)) + iota_Y d theta`, all in coefficient space.
    pub fn lie_derivative_unscaled(&self, y: &[TrigPoly<T>]) -> Self {
        let n = self.dim();
        let d_contract = Self::differential_unscaled(&self.contract(y));
        let partials: Vec<Vec<TrigPoly<T>>> =
            self.components.iter().map(|c| (0..n).map(|j| c.partial_unscaled(j)).collect()).collect();
        let components = (0..n)
            .map(|i| {
                // (iota_Y d theta)_i = sum_j Y_j (d_j theta_i - d_i theta_j).
                let mut acc = d_contract.components[i].clone();
                for j in 0..n {
                    if i != j {
                        acc = acc.add(&y[j].mul(&partials[i][j].sub(&partials[j][i])));
                    }
                }
                acc
            })
            .collect();
        OneForm { components }
    }

    /// `(1/2pi)(d_i w_j - d_j w_i)` for `i < j`, the coefficients of `d w`.
    pub fn exterior_derivative_unscaled(&self) -> Vec<TrigPoly<T>> {
        let n = self.dim();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.components[j].partial_unscaled(i).sub(&self.components[i].partial_unscaled(j)));
            }
        }
        out
    }

    /// Candidate `L` with `(1/2pi) dL = self`, by dividing each frequency's
    /// coefficients by the entry `k_i` of largest magnitude.
    pub fn potential_unscaled(&self) -> TrigPoly<T> {
        let n = self.dim();
        let mut l = TrigPoly::zero(n);
        let mut freqs: Vec<&Vec<i64>> = self.components.iter().flat_map(|c| c.terms().map(|(k, _, _)| k)).collect();
        freqs.sort();
        freqs.dedup();
        for k in freqs {
            let Some((i, &ki)) = k.iter().enumerate().max_by_key(|(_, c)| c.abs()) else { continue };
            if ki == 0 {
                continue;
            }
            let (a, b) = self.components[i].coeff(k);
            // d_i (A cos + B sin)/2pi = k_i (B cos - A sin).
            l.add_term(k, -b.div_int(ki), a.div_int(ki));
        }
        l
    }
}

impl OneForm<f64> {
    /// `sum_i c_i dy_i` with constant coefficients.
    pub fn constant(coeffs: &[f64]) -> Self {
        let n = coeffs.len();
        OneForm { components: coeffs.iter().map(|&c| TrigPoly::constant(n, c)).collect() }
    }

    /// `dL`.
    pub fn differential(l: &TrigPoly) -> Self {
        OneForm { components: l.gradient() }
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(y)).collect()
    }

    pub fn to_rational(&self) -> OneForm<num_rational::BigRational> {
        OneForm { components: self.components.iter().map(TrigPoly::to_rational).collect() }
    }

    pub fn pruned(&self, tol: f64) -> Self {
        OneForm { components: self.components.iter().map(|c| c.pruned(tol)).collect() }
    }
}

impl OneForm<num_rational::BigRational> {
    pub fn to_f64(&self) -> OneForm {
        OneForm { components: self.components.iter().map(TrigPoly::to_f64).collect() }
    }
}

/// `L_Y theta`, exact in coefficient space.
pub fn lie_derivative(flow: &TorusFlow, theta: &OneForm) -> Result<OneForm> {
    check_dim(flow.dim(), theta.dim())?;
    Ok(theta.lie_derivative_unscaled(flow.components()).scale(&TAU))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exactness {
    pub exact: bool,
    /// `L` with `dL = omega` up to `residual`, when `exact`.
    pub potential: Option<TrigPoly>,
    /// Largest coefficient among `d omega`, the periods, and `omega - dL`.
    pub residual: f64,
}

pub const EXACT_TOL: f64 = 1e-10;

/// Decides `omega = dL` on the torus: closed, zero periods, and the
/// recovered `L` reproduces `omega`.
pub fn is_exact(omega: &OneForm) -> Exactness {
    is_exact_tol(omega, EXACT_TOL)
}

pub fn is_exact_tol(omega: &OneForm, tol: f64) -> Exactness {
    let closed = omega.exterior_derivative_unscaled().iter().map(|p| p.max_coeff() * TAU).fold(0.0, f64::max);
    let periods = omega.components.iter().map(|c| c.mean().abs()).fold(0.0, f64::max);
    let l = omega.potential_unscaled().scale(&(1.0 / TAU));
    let mismatch = omega.sub(&OneForm::differential(&l)).max_coeff();
    let residual = closed.max(periods).max(mismatch);
    let exact = residual <= tol;
    Exactness { exact, potential: exact.then_some(l), residual }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Adaptation {
    None,
    Weak,
    Strong,
}

impl Adaptation {
    pub fn as_str(self) -> &'static str {
        match self {
            Adaptation::None => "none",
            Adaptation::Weak => "weak",
            Adaptation::Strong => "strong",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptationReport {
    pub classification: Adaptation,
    /// Grid minimum of `theta(Y)`.
    pub min_theta_y: f64,
    /// Lower bound for `theta(Y)` valid on the whole torus.
    pub certified_lower: f64,
    pub grid_resolution: usize,
    pub exactness_residual: f64,
    /// `L` with `L_Y theta = dL`, when exact.
    pub potential: Option<TrigPoly>,
    pub theta_y: TrigPoly,
}

/// Largest grid (points in total) used when refining bounds.
const MAX_GRID_POINTS: usize = 1 << 22;

/// Grid bound on `p`, starting at `8 deg` points per axis and refining while
/// the grid minimum is positive but the certified bound is not.
pub fn refine_bound(p: &TrigPoly) -> GridBound {
    refine_bound_to(p, 0.0)
}

/// As [`refine_bound`], but keeps refining until the certified bound exceeds
/// `target` (or the grid minimum rules that out).
pub fn refine_bound_to(p: &TrigPoly, target: f64) -> GridBound {
    let n = p.dim() as u32;
    let mut res = (8 * p.degree()).max(8) as usize;
    loop {
        let b = certified_min(p, res);
        if b.certified_lower > target || b.grid_min <= target || (2 * res).pow(n) > MAX_GRID_POINTS {
            return b;
        }
        res *= 2;
    }
}

/// Classifies `theta` for `flow`. `eps` is the slack for both the exactness
/// residual of `L_Y theta` and the weak positivity test `min theta(Y) >= -eps`.
pub fn check_adapted(flow: &TorusFlow, theta: &OneForm, eps: f64) -> Result<AdaptationReport> {
    check_adapted_to(flow, theta, eps, 0.0)
}

/// [`check_adapted`] with the positivity bound refined towards `target`.
pub fn check_adapted_to(flow: &TorusFlow, theta: &OneForm, eps: f64, target: f64) -> Result<AdaptationReport> {
    check_dim(flow.dim(), theta.dim())?;
    flow.certify_nonsingular()?;
    let theta_y = theta.contract(flow.components());
    let bound = refine_bound_to(&theta_y, target);
    let ex = is_exact_tol(&lie_derivative(flow, theta)?, eps.max(EXACT_TOL));
    let classification = if !ex.exact {
        Adaptation::None
    } else if bound.certified_lower > 0.0 {
        Adaptation::Strong
    } else if bound.grid_min >= -eps {
        Adaptation::Weak
    } else {
        Adaptation::None
    };
    Ok(AdaptationReport {
        classification,
        min_theta_y: bound.grid_min,
        certified_lower: bound.certified_lower,
        grid_resolution: bound.resolution,
        exactness_residual: ex.residual,
        potential: ex.potential,
        theta_y,
    })
}

/// `phi^* theta`, exact when `phi` reduces to `y -> A y + b` with integer `A`.
pub fn pullback(phi: &ChartMap, theta: &OneForm) -> Result<OneForm> {
    check_dim(phi.target_dim(), theta.dim())?;
    let (a, b) = phi.as_affine().ok_or(Error::UnsupportedPullback)?;
    if a.iter().flatten().any(|x| x.fract() != 0.0) {
        return Err(Error::UnsupportedPullback);
    }
    let a: Vec<Vec<i64>> = a.iter().map(|r| r.iter().map(|&x| x as i64).collect()).collect();
    let n_src = phi.source_dim();
    // theta_i(A y + b): frequency k becomes A^T k with phase 2 pi k.b.
    let moved: Vec<TrigPoly> = theta
        .components
        .iter()
        .map(|c| {
            let mut out = TrigPoly::zero(n_src);
            for (k, &cc, &ss) in c.terms() {
                let kt: Vec<i64> = (0..n_src).map(|j| k.iter().zip(&a).map(|(ki, row)| ki * row[j]).sum()).collect();
                let phase: f64 = k.iter().zip(&b).map(|(&ki, bi)| ki as f64 * bi).sum();
                if phase == 0.0 {
                    out.add_term(&kt, cc, ss);
                } else {
                    let (s, co) = (TAU * phase).sin_cos();
                    out.add_term(&kt, cc * co + ss * s, ss * co - cc * s);
                }
            }
            out
        })
        .collect();
    let components = (0..n_src)
        .map(|j| {
            moved.iter().zip(&a).fold(TrigPoly::zero(n_src), |acc, (m, row)| {
                if row[j] == 0 {
                    acc
                } else {
                    acc.add(&m.scale(&(row[j] as f64)))
                }
            })
        })
        .collect();
    Ok(OneForm { components })
}

/// Grid-sampled pullback along any chart map, fitted at `degree` on a grid
/// of `res` points per axis. Returns the form and the max sample residual.
pub fn pullback_approx(phi: &ChartMap, theta: &OneForm, res: usize, degree: i64) -> Result<(OneForm, f64)> {
    check_dim(phi.target_dim(), theta.dim())?;
    let n = phi.source_dim();
    let mut samples = vec![Vec::new(); n];
    let mut err = None;
    for_each_grid_point(n, res, |_, y| {
        if err.is_some() {
            return;
        }
        match (phi.eval(y), phi.jacobian(y)) {
            (Ok(img), Ok(jac)) => {
                let t = theta.eval(&img);
                for (j, s) in samples.iter_mut().enumerate() {
                    s.push((0..t.len()).map(|i| t[i] * jac[i][j]).sum::<f64>());
                }
            }
            (Err(e), _) | (_, Err(e)) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    fit_samples(n, res, degree, &samples)
}

fn fit_samples(n: usize, res: usize, degree: i64, samples: &[Vec<f64>]) -> Result<(OneForm, f64)> {
    if res as i64 <= 2 * degree {
        return Err(Error::InvalidParameter(format!("grid {res} too coarse for degree {degree}")));
    }
    let components: Vec<TrigPoly> = samples.iter().map(|s| fit_on_grid(n, res, degree, s).pruned(1e-14)).collect();
    let mut residual = 0.0f64;
    let mut idx = 0;
    for_each_grid_point(n, res, |_, y| {
        for (c, s) in components.iter().zip(samples) {
            residual = residual.max((c.eval(y) - s[idx]).abs());
        }
        idx += 1;
    });
    Ok((OneForm { components }, residual))
}

#[derive(Clone, Debug)]
pub struct AveragedForm {
    pub form: OneForm,
    pub fit_residual: f64,
    pub degree: i64,
    pub grid_resolution: usize,
}

/// `int_0^1 (e^{tY})^* theta dt` by the `n_samples`-point midpoint rule, with
/// pullbacks from the variational equation sampled on a grid and fitted at
/// degree `deg theta + deg Y + 4`.
pub fn average(flow: &TorusFlow, theta: &OneForm, n_samples: usize) -> Result<AveragedForm> {
    average_with_degree(flow, theta, n_samples, theta.degree() + flow.degree() + 4)
}

pub fn average_with_degree(flow: &TorusFlow, theta: &OneForm, n_samples: usize, degree: i64) -> Result<AveragedForm> {
    check_dim(flow.dim(), theta.dim())?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    flow.certify_nonsingular()?;
    let n = flow.dim();
    let res = (4 * degree.max(1)) as usize;
    // Step h = 1 / (2 n r) puts every midpoint on a step boundary.
    let r = 512usize.div_ceil(n_samples);
    let h = 1.0 / (2 * n_samples * r) as f64;
    let mut samples = vec![Vec::new(); n];
    for_each_grid_point(n, res, |_, y| {
        let mut acc = vec![0.0; n];
        let mut x = y.to_vec();
        let mut jac: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let advance = |x: &mut Vec<f64>, jac: &mut Vec<Vec<f64>>, steps: usize| {
            let (nx, step_jac) = flow_map_with_jacobian(flow, h * steps as f64, x, steps).expect("dimension checked");
            *jac = crate::chart::mat_mul(&step_jac, jac);
            *x = nx;
        };
        for m in 0..n_samples {
            advance(&mut x, &mut jac, if m == 0 { r } else { 2 * r });
            let t = theta.eval(&x);
            for j in 0..n {
                acc[j] += (0..n).map(|i| t[i] * jac[i][j]).sum::<f64>();
            }
        }
        for (s, a) in samples.iter_mut().zip(acc) {
            s.push(a / n_samples as f64);
        }
    });
    let (form, fit_residual) = fit_samples(n, res, degree, &samples)?;
    Ok(AveragedForm { form, fit_residual, degree, grid_resolution: res })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArcCheck {
    pub pass: bool,
    pub trajectories: usize,
    /// Longest run of consecutive samples with `theta(Y) <= tol`.
    pub longest_zero_run: usize,
    pub min_theta_y: f64,
}

/// Sampled check that `theta(Y)` vanishes on no arc: `trajectories` random
/// orbit segments of length 1, 100 samples each; a run of two or more
/// consecutive samples with `theta(Y) <= tol` counts as an arc.
pub fn arc_nonvanishing(flow: &TorusFlow, theta: &OneForm, trajectories: usize, tol: f64, seed: u64) -> Result<ArcCheck> {
    check_dim(flow.dim(), theta.dim())?;
    let theta_y = theta.contract(flow.components());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut longest = 0usize;
    let mut min = f64::INFINITY;
    for _ in 0..trajectories {
        let mut x0: Vec<f64> = (0..flow.dim()).map(|_| rng.gen::<f64>()).collect();
        reduce_mod1(&mut x0);
        let traj = crate::flows::integrate(flow, &x0, 1.0, 1e-2)?;
        let mut run = 0usize;
        for p in &traj.points {
            let v = theta_y.eval(p);
            min = min.min(v);
            if v <= tol {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
    }
    Ok(ArcCheck { pass: longest < 2, trajectories, longest_zero_run: longest, min_theta_y: min })
}

/// Max residual of `L_X theta - dL` for the canonical form `theta = p dq` on
/// `T^* R^m` with `X = (p, -grad V)` and `L = |p|^2/2 - V`, every partial
/// derivative taken by central differences with step `h`.
pub fn canonical_form_check<V: PotentialField + ?Sized>(v: &V, samples: &[WellState], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("h must be positive".into()));
    }
    let m = v.dim();
    let field = |z: &[f64]| -> Vec<f64> {
        let mut out = z[m..].to_vec();
        out.extend(v.gradient(&z[..m]).into_iter().map(|g| -g));
        out
    };
    let theta = |z: &[f64]| -> Vec<f64> {
        let mut out = z[m..].to_vec();
        out.extend(std::iter::repeat_n(0.0, m));
        out
    };
    let lagrangian = |z: &[f64]| 0.5 * z[m..].iter().map(|p| p * p).sum::<f64>() - v.value(&z[..m]);
    let mut worst = 0.0f64;
    for s in samples {
        check_dim(m, s.q.len())?;
        check_dim(m, s.p.len())?;
        let z: Vec<f64> = s.q.iter().chain(&s.p).copied().collect();
        let x = field(&z);
        let th = theta(&z);
        let shifted = |b: usize, d: f64| -> Vec<f64> {
            let mut w = z.clone();
            w[b] += d;
            w
        };
        // d_theta[b][a] = d theta_a / d z_b, d_x[a][b] = d X_b / d z_a.
        let mut d_theta = Vec::with_capacity(2 * m);
        let mut d_x = Vec::with_capacity(2 * m);
        let mut d_l = Vec::with_capacity(2 * m);
        for b in 0..2 * m {
            let (zp, zm) = (shifted(b, h), shifted(b, -h));
            d_theta.push(theta(&zp).iter().zip(theta(&zm)).map(|(a, c)| (a - c) / (2.0 * h)).collect::<Vec<_>>());
            d_x.push(field(&zp).iter().zip(field(&zm)).map(|(a, c)| (a - c) / (2.0 * h)).collect::<Vec<_>>());
            d_l.push((lagrangian(&zp) - lagrangian(&zm)) / (2.0 * h));
        }
        for a in 0..2 * m {
            let lie: f64 = (0..2 * m).map(|b| x[b] * d_theta[b][a] + th[b] * d_x[a][b]).sum();
            worst = worst.max((lie - d_l[a]).abs());
        }
    }
    Ok(worst)
}

/// `theta(X) = |p|^2` for the canonical form.
pub fn canonical_theta_x(s: &WellState) -> f64 {
    s.p.iter().map(|p| p * p).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::flow_map;
    use crate::hamiltonian::Potential;
    use std::f64::consts::PI;

    fn dx() -> OneForm {
        OneForm::constant(&[1.0, 0.0])
    }

    fn dy() -> OneForm {
        OneForm::constant(&[0.0, 1.0])
    }

    #[test]
    fn lie_derivative_examples() {
        let rot = TorusFlow::rotation(&[1.0, 1.0]);
        assert_eq!(lie_derivative(&rot, &dx()).unwrap().max_coeff(), 0.0);
        let l = lie_derivative(&TorusFlow::bryant(), &dy()).unwrap();
        let expected = OneForm::new(vec![TrigPoly::sin_term(2, &[1, 0], -TAU), TrigPoly::zero(2)]).unwrap();
        assert!(l.sub(&expected).max_coeff() < 1e-15);
        let prod = TorusFlow::bryant().product(&TorusFlow::circle_shift());
        let dt = OneForm::constant(&[0.0, 0.0, 1.0]);
        assert!(lie_derivative(&prod, &dt).unwrap().max_coeff() == 0.0);
    }

    #[test]
    fn lie_derivative_matches_pullback_difference() {
        let flow = TorusFlow::bryant();
        let theta = OneForm::new(vec![
            TrigPoly::from_terms(2, &[(vec![0, 1], 0.4, 0.2)]),
            TrigPoly::from_terms(2, &[(vec![1, 1], -0.3, 0.5), (vec![0, 0], 1.0, 0.0)]),
        ])
        .unwrap();
        let lie = lie_derivative(&flow, &theta).unwrap();
        let y = [0.17, 0.62];
        let pulled = |t: f64| -> Vec<f64> {
            let (x, j) = flow_map_with_jacobian(&flow, t, &y, 200).unwrap();
            let th = theta.eval(&x);
            (0..2).map(|c| (0..2).map(|i| th[i] * j[i][c]).sum()).collect()
        };
        let exact = lie.eval(&y);
        let mut errs = Vec::new();
        for t in [1e-2, 1e-3] {
            let (a, b) = (pulled(t), pulled(-t));
            let fd: Vec<f64> = a.iter().zip(&b).map(|(p, m)| (p - m) / (2.0 * t)).collect();
            errs.push(fd.iter().zip(&exact).map(|(f, e)| (f - e).abs()).fold(0.0, f64::max));
        }
        let slope = (errs[0] / errs[1]).log10();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn exactness_examples() {
        let l = TrigPoly::sin_term(2, &[1, 1], 1.0);
        let ex = is_exact(&OneForm::differential(&l));
        assert!(ex.exact);
        assert!(ex.potential.unwrap().sub(&l).max_coeff() < 1e-15);
        assert!(!is_exact(&dx()).exact);
        let w = OneForm::new(vec![TrigPoly::sin_term(1, &[1], -TAU)]).unwrap();
        let ex = is_exact(&w);
        assert!(ex.potential.unwrap().sub(&TrigPoly::cos_term(1, &[1], 1.0)).max_coeff() < 1e-15);
        // Zero periods but not closed.
        let bad = OneForm::new(vec![TrigPoly::cos_term(2, &[0, 1], 1.0), TrigPoly::zero(2)]).unwrap();
        assert!(!is_exact(&bad).exact);
    }

    #[test]
    fn adaptation_examples() {
        let shift = TorusFlow::circle_shift();
        let r = check_adapted(&shift, &OneForm::constant(&[1.0]), 0.0).unwrap();
        assert_eq!(r.classification, Adaptation::Strong);
        assert_eq!(r.min_theta_y, 1.0);
        let r = check_adapted(&TorusFlow::bryant(), &OneForm::zero(2), 0.0).unwrap();
        assert_eq!(r.classification, Adaptation::Weak);
        let r = check_adapted(&TorusFlow::bryant(), &dy(), 1e-9).unwrap();
        assert_eq!(r.classification, Adaptation::None);
    }

    #[test]
    fn pullback_examples() {
        let proj = ChartMap::projection(2, vec![1]).unwrap();
        let dt = OneForm::constant(&[1.0]);
        assert_eq!(pullback(&proj, &dt).unwrap(), OneForm::constant(&[0.0, 1.0]));
        let theta = OneForm::new(vec![TrigPoly::sin_term(2, &[1, 2], 0.5), TrigPoly::cos_term(2, &[0, 1], 2.0)]).unwrap();
        assert_eq!(pullback(&ChartMap::identity(2), &theta).unwrap(), theta);
        let a = ChartMap::affine(vec![vec![2.0, 1.0], vec![1.0, 1.0]], vec![0.1, 0.3]).unwrap();
        let pulled = pullback(&a, &theta).unwrap();
        let y = [0.21, 0.73];
        let img = a.eval(&y).unwrap();
        let jac = a.jacobian(&y).unwrap();
        let th = theta.eval(&img);
        for j in 0..2 {
            let direct: f64 = (0..2).map(|i| th[i] * jac[i][j]).sum();
            assert!((pulled.eval(&y)[j] - direct).abs() < 1e-13);
        }
        let trig = ChartMap::trig(vec![TrigPoly::sin_term(1, &[1], 0.1)]).unwrap();
        assert!(matches!(pullback(&trig, &dt), Err(Error::UnsupportedPullback)));
    }

    #[test]
    fn approximate_pullback_has_small_residual() {
        // y -> y + 0.05 sin(2 pi y), a circle diffeomorphism.
        let phi = ChartMap::Trig { matrix: vec![vec![1.0]], offset: vec![0.0], parts: vec![TrigPoly::sin_term(1, &[1], 0.05)] };
        let theta = OneForm::new(vec![TrigPoly::cos_term(1, &[1], 1.0)]).unwrap();
        let (_, residual) = pullback_approx(&phi, &theta, 64, 20).unwrap();
        assert!(residual < 1e-10);
    }

    #[test]
    fn circle_shift_average() {
        let shift = TorusFlow::circle_shift();
        let theta = OneForm::new(vec![TrigPoly::from_terms(1, &[(vec![0], 1.0, 0.0), (vec![1], 0.0, 0.5)])]).unwrap();
        let avg = average(&shift, &theta, 256).unwrap();
        assert!(avg.form.sub(&OneForm::constant(&[1.0])).max_coeff() < 1e-8);
        let r = check_adapted(&shift, &avg.form, 1e-8).unwrap();
        assert_eq!(r.classification, Adaptation::Strong);
    }

    #[test]
    fn invariant_form_is_fixed_by_averaging() {
        let rot = TorusFlow::rotation(&[1.0, 0.3]);
        let avg = average(&rot, &dx(), 16).unwrap();
        assert!(avg.form.sub(&dx()).max_coeff() < 1e-10);
    }

    #[test]
    fn rotation_average_becomes_strong() {
        let rot = TorusFlow::rotation(&[0.5, 2f64.sqrt()]);
        let theta = OneForm::new(vec![TrigPoly::from_terms(2, &[(vec![0, 0], 1.0, 0.0), (vec![1, 0], 1.0, 0.0)]), TrigPoly::zero(2)]).unwrap();
        let before = check_adapted(&rot, &theta, 1e-9).unwrap();
        assert_eq!(before.classification, Adaptation::Weak);
        assert!(arc_nonvanishing(&rot, &theta, 100, 1e-12, 7).unwrap().pass);
        let n = 128;
        let avg = average(&rot, &theta, n).unwrap();
        // Direct midpoint quadrature of the time average.
        for x in [0.1, 0.37, 0.8] {
            let direct: f64 = (0..n).map(|m| 1.0 + (TAU * (x + 0.5 * (m as f64 + 0.5) / n as f64)).cos()).sum::<f64>() / n as f64;
            assert!((avg.form.eval(&[x, 0.4])[0] - direct).abs() < 1e-9);
            assert!((direct - (1.0 - 2.0 / PI * (TAU * x).sin())).abs() < 1e-4);
        }
        let after = check_adapted(&rot, &avg.form, 1e-9).unwrap();
        assert_eq!(after.classification, Adaptation::Strong);
        assert!(after.certified_lower > 0.0);
    }

    #[test]
    fn canonical_form_identity() {
        let samples: Vec<WellState> = (0..20)
            .map(|i| {
                let a = i as f64 * 0.37;
                WellState { q: vec![a.sin(), (2.0 * a).cos()], p: vec![(3.0 * a).cos(), 0.5 * a.sin()] }
            })
            .collect();
        assert!(canonical_form_check(&Potential::harmonic(2), &samples, 1e-5).unwrap() < 1e-7);
        assert!(canonical_form_check(&Potential::zero(2), &samples, 1e-5).unwrap() < 1e-9);
        let rest = WellState { q: vec![0.3, 0.1], p: vec![0.0, 0.0] };
        assert_eq!(canonical_theta_x(&rest), 0.0);
    }

    #[test]
    fn flow_map_pullback_of_invariant_form() {
        // e^{tY} for a rotation is a translation, so dx pulls back to dx.
        let rot = TorusFlow::rotation(&[0.3, 0.7]);
        let (x, j) = flow_map_with_jacobian(&rot, 0.4, &[0.1, 0.2], 40).unwrap();
        assert!(crate::flows::torus_distance(&x, &flow_map(&rot, 0.4, &[0.1, 0.2]).unwrap()) < 1e-14);
        assert_eq!(j, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }
}
