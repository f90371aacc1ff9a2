//! Potential wells `q' = p, p' = -grad V(q)`, the cotangent lift of a torus
//! flow, and a spectral leapfrog solver for the periodic nonlinear wave
//! equation with flat target in one space dimension.

use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::{reduce_mod1, step_count, TorusFlow, Trajectory};
use crate::trig::TrigPoly;

/// A smooth function on `R^m` with an exact gradient.
pub trait PotentialField {
    fn dim(&self) -> usize;
    fn value(&self, q: &[f64]) -> f64;
    fn gradient(&self, q: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Gaussian bumps plus a coercive tail `tau (1 - chi(|q|)) |q|^2`, where the
/// cutoff `chi` is 1 on `|q| <= radius` and 0 on `|q| >= 2 radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfPotential {
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub tau: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Polynomial { dim: usize, terms: Vec<Monomial> },
    Trig { poly: TrigPoly },
    Rbf(RbfPotential),
    Extended(Box<crate::embedder::ExtendedPotential>),
}

/// Quintic smoothstep cutoff: 1 for `s <= lo`, 0 for `s >= hi`.
/// Returns the value and its derivative in `s`.
pub fn cutoff(s: f64, lo: f64, hi: f64) -> (f64, f64) {
    if s <= lo {
        return (1.0, 0.0);
    }
    if s >= hi {
        return (0.0, 0.0);
    }
    let w = hi - lo;
    let x = (s - lo) / w;
    let up = x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
    let dup = 30.0 * x * x * (1.0 - x) * (1.0 - x);
    (1.0 - up, -dup / w)
}

impl Potential {
    pub fn zero(m: usize) -> Self {
        Potential::Polynomial { dim: m, terms: vec![] }
    }

    /// `|q|^2 / 2`.
    pub fn harmonic(m: usize) -> Self {
        let terms = (0..m).map(|i| Monomial { coeff: 0.5, powers: unit_powers(m, i, 2) }).collect();
        Potential::Polynomial { dim: m, terms }
    }

    /// `|q|^2 / 2 + sum q_i^4 / 4`.
    pub fn quartic(m: usize) -> Self {
        let mut terms: Vec<Monomial> = (0..m).map(|i| Monomial { coeff: 0.5, powers: unit_powers(m, i, 2) }).collect();
        terms.extend((0..m).map(|i| Monomial { coeff: 0.25, powers: unit_powers(m, i, 4) }));
        Potential::Polynomial { dim: m, terms }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Potential::Polynomial { dim, terms } => {
                for t in terms {
                    check_dim(*dim, t.powers.len())?;
                }
            }
            Potential::Trig { .. } => {}
            Potential::Rbf(r) => {
                check_dim(r.centers.len(), r.weights.len())?;
                for c in &r.centers {
                    check_dim(r.dim, c.len())?;
                }
                if !(r.sigma > 0.0) || !(r.radius > 0.0) || r.tau < 0.0 {
                    return Err(Error::InvalidParameter("rbf needs sigma > 0, radius > 0, tau >= 0".into()));
                }
            }
            Potential::Extended(e) => e.validate()?,
        }
        Ok(())
    }

    /// Constants `(tau', K)` with `V(q) >= tau' |q|^2 - K`, when the
    /// representation is coercive by construction.
    pub fn coercive_bound(&self) -> Option<(f64, f64)> {
        match self {
            Potential::Rbf(r) if r.tau > 0.0 => {
                let negative: f64 = r.weights.iter().filter(|w| **w < 0.0).map(|w| -w).sum();
                Some((r.tau, 4.0 * r.tau * r.radius * r.radius + negative))
            }
            Potential::Extended(e) => e.coercive_bound(),
            _ => None,
        }
    }
}

fn unit_powers(m: usize, i: usize, e: u32) -> Vec<u32> {
    (0..m).map(|j| if j == i { e } else { 0 }).collect()
}

impl PotentialField for Potential {
    fn dim(&self) -> usize {
        match self {
            Potential::Polynomial { dim, .. } => *dim,
            Potential::Trig { poly } => poly.dim(),
            Potential::Rbf(r) => r.dim,
            Potential::Extended(e) => e.dim(),
        }
    }

    fn value(&self, q: &[f64]) -> f64 {
        match self {
            Potential::Polynomial { terms, .. } => terms
                .iter()
                .map(|t| t.coeff * t.powers.iter().zip(q).map(|(&e, x)| x.powi(e as i32)).product::<f64>())
                .sum(),
            Potential::Trig { poly } => poly.eval(q),
            Potential::Rbf(r) => r.value(q),
            Potential::Extended(e) => e.value(q),
        }
    }

    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        match self {
            Potential::Polynomial { dim, terms } => {
                let mut g = vec![0.0; *dim];
                for t in terms {
                    for (i, gi) in g.iter_mut().enumerate() {
                        if t.powers[i] == 0 {
                            continue;
                        }
                        let mut prod = t.coeff * t.powers[i] as f64;
                        for (j, (&e, x)) in t.powers.iter().zip(q).enumerate() {
                            prod *= x.powi(if j == i { e as i32 - 1 } else { e as i32 });
                        }
                        *gi += prod;
                    }
                }
                g
            }
            Potential::Trig { poly } => (0..poly.dim()).map(|i| poly.partial(i).eval(q)).collect(),
            Potential::Rbf(r) => r.gradient(q),
            Potential::Extended(e) => e.gradient(q),
        }
    }
}

impl RbfPotential {
    fn value(&self, q: &[f64]) -> f64 {
        let s2 = 2.0 * self.sigma * self.sigma;
        let bumps: f64 = self.centers.iter().zip(&self.weights).map(|(c, w)| w * (-dist2(q, c) / s2).exp()).sum();
        let r2 = norm2(q);
        let (chi, _) = cutoff(r2.sqrt(), self.radius, 2.0 * self.radius);
        bumps + self.tau * (1.0 - chi) * r2
    }

    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        let mut g = vec![0.0; self.dim];
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let e = w * (-dist2(q, c) / (2.0 * s2)).exp();
            for i in 0..self.dim {
                g[i] -= e * (q[i] - c[i]) / s2;
            }
        }
        let r2 = norm2(q);
        let r = r2.sqrt();
        let (chi, dchi) = cutoff(r, self.radius, 2.0 * self.radius);
        for i in 0..self.dim {
            // d/dq [tau (1 - chi(r)) r^2] = tau (2 (1 - chi) q - dchi r q).
            g[i] += self.tau * (2.0 * (1.0 - chi) - dchi * r) * q[i];
        }
        g
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl WellState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        check_dim(q.len(), p.len())?;
        Ok(WellState { q, p })
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }
}

/// `|p|^2 / 2 + V(q)`.
pub fn energy<V: PotentialField + ?Sized>(v: &V, s: &WellState) -> f64 {
    0.5 * norm2(&s.p) + v.value(&s.q)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheme {
    /// Stormer-Verlet, kick-drift-kick.
    #[default]
    Verlet,
    /// Fourth-order Yoshida composition of three Verlet steps.
    Yoshida4,
}

fn verlet_step<V: PotentialField + ?Sized>(v: &V, s: &mut WellState, dt: f64) {
    let g = v.gradient(&s.q);
    for (p, gi) in s.p.iter_mut().zip(&g) {
        *p -= 0.5 * dt * gi;
    }
    for (q, p) in s.q.iter_mut().zip(&s.p) {
        *q += dt * p;
    }
    let g = v.gradient(&s.q);
    for (p, gi) in s.p.iter_mut().zip(&g) {
        *p -= 0.5 * dt * gi;
    }
}

/// One step of the chosen symplectic scheme.
pub fn well_step<V: PotentialField + ?Sized>(v: &V, s: &mut WellState, dt: f64, scheme: Scheme) {
    match scheme {
        Scheme::Verlet => verlet_step(v, s, dt),
        Scheme::Yoshida4 => {
            let cbrt2 = 2f64.cbrt();
            let w1 = 1.0 / (2.0 - cbrt2);
            let w0 = -cbrt2 * w1;
            verlet_step(v, s, w1 * dt);
            verlet_step(v, s, w0 * dt);
            verlet_step(v, s, w1 * dt);
        }
    }
}

/// Stormer-Verlet trajectory over `[0, t_end]`.
pub fn integrate_well<V: PotentialField + ?Sized>(
    v: &V,
    s0: &WellState,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory<WellState>> {
    integrate_well_with(v, s0, t_end, dt, Scheme::Verlet, 1)
}

/// Well trajectory with an explicit scheme, recording every `stride` steps
/// (the final state is always recorded).
pub fn integrate_well_with<V: PotentialField + ?Sized>(
    v: &V,
    s0: &WellState,
    t_end: f64,
    dt: f64,
    scheme: Scheme,
    stride: usize,
) -> Result<Trajectory<WellState>> {
    check_dim(v.dim(), s0.q.len())?;
    check_dim(v.dim(), s0.p.len())?;
    if !(dt > 0.0) || !(t_end >= 0.0) || stride == 0 {
        return Err(Error::InvalidParameter(format!("need dt > 0, T >= 0, stride > 0 (dt={dt}, T={t_end})")));
    }
    let n = if t_end == 0.0 { 0 } else { step_count(t_end, dt) };
    let h = if n == 0 { dt } else { t_end / n as f64 };
    let mut s = s0.clone();
    let mut times = vec![0.0];
    let mut points = vec![s.clone()];
    for i in 1..=n {
        well_step(v, &mut s, h, scheme);
        if !s.is_finite() {
            return Err(Error::NonFinite { t: i as f64 * h });
        }
        if i % stride == 0 || i == n {
            times.push(i as f64 * h);
            points.push(s.clone());
        }
    }
    let method = match scheme {
        Scheme::Verlet => "verlet",
        Scheme::Yoshida4 => "yoshida4",
    };
    Ok(Trajectory { times, points, step_size: h, method })
}

/// Hamiltonian `H(q, p) = sum p_i X_i(q)` on `T^*(R/Z)^n` and its equations
/// `q_i' = X_i(q)`, `p_i' = -sum_j p_j dX_j/dq_i`.
#[derive(Clone, Debug)]
pub struct LiftedSystem {
    flow: TorusFlow,
    /// `dx[j][i] = dX_j / dq_i`.
    dx: Vec<Vec<TrigPoly>>,
}

pub fn cotangent_lift(flow: &TorusFlow) -> LiftedSystem {
    LiftedSystem { flow: flow.clone(), dx: flow.jacobian_polys() }
}

impl LiftedSystem {
    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    pub fn base(&self) -> &TorusFlow {
        &self.flow
    }

    /// The embedding `q -> (q, 0)`.
    pub fn zero_section(&self, q: &[f64]) -> WellState {
        WellState { q: q.to_vec(), p: vec![0.0; q.len()] }
    }

    pub fn hamiltonian(&self, s: &WellState) -> f64 {
        self.flow.field(&s.q).iter().zip(&s.p).map(|(x, p)| x * p).sum()
    }

    pub fn rhs(&self, s: &WellState) -> WellState {
        let n = self.dim();
        let qdot = self.flow.field(&s.q);
        let pdot = (0..n)
            .map(|i| -(0..n).filter(|&j| s.p[j] != 0.0).map(|j| s.p[j] * self.dx[j][i].eval(&s.q)).sum::<f64>())
            .collect();
        WellState { q: qdot, p: pdot }
    }

    /// RK4 trajectory; `q` is reduced mod 1 after every step.
    pub fn integrate(&self, s0: &WellState, t_end: f64, dt: f64) -> Result<Trajectory<WellState>> {
        check_dim(self.dim(), s0.q.len())?;
        check_dim(self.dim(), s0.p.len())?;
        if !(dt > 0.0) || !(t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("need dt > 0 and T > 0, got dt={dt}, T={t_end}")));
        }
        let n = step_count(t_end, dt);
        let h = t_end / n as f64;
        let mut s = s0.clone();
        reduce_mod1(&mut s.q);
        let mut times = vec![0.0];
        let mut points = vec![s.clone()];
        let axpy = |s: &WellState, k: &WellState, c: f64| WellState {
            q: s.q.iter().zip(&k.q).map(|(a, b)| a + c * b).collect(),
            p: s.p.iter().zip(&k.p).map(|(a, b)| a + c * b).collect(),
        };
        for i in 1..=n {
            let k1 = self.rhs(&s);
            let k2 = self.rhs(&axpy(&s, &k1, h / 2.0));
            let k3 = self.rhs(&axpy(&s, &k2, h / 2.0));
            let k4 = self.rhs(&axpy(&s, &k3, h));
            for j in 0..s.q.len() {
                s.q[j] += h / 6.0 * (k1.q[j] + 2.0 * k2.q[j] + 2.0 * k3.q[j] + k4.q[j]);
                s.p[j] += h / 6.0 * (k1.p[j] + 2.0 * k2.p[j] + 2.0 * k3.p[j] + k4.p[j]);
            }
            if !s.is_finite() {
                return Err(Error::NonFinite { t: i as f64 * h });
            }
            reduce_mod1(&mut s.q);
            times.push(i as f64 * h);
            points.push(s.clone());
        }
        Ok(Trajectory { times, points, step_size: h, method: "rk4" })
    }
}

/// Grid samples of `q, p : R/Z -> R^m` at `x_j = j / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct NlwState {
    pub n: usize,
    pub m: usize,
    /// `q[j][c]`: component `c` at grid point `j`.
    pub q: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

impl NlwState {
    pub fn new(q: Vec<Vec<f64>>, p: Vec<Vec<f64>>) -> Result<Self> {
        let n = q.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("grid size {n} is not a power of two >= 2")));
        }
        check_dim(n, p.len())?;
        let m = q[0].len();
        for row in q.iter().chain(&p) {
            check_dim(m, row.len())?;
        }
        Ok(NlwState { n, m, q, p })
    }

    /// Samples `q0(x)`, `p0(x)` on the grid.
    pub fn sample(n: usize, q0: impl Fn(f64) -> Vec<f64>, p0: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let xs = (0..n).map(|j| j as f64 / n as f64);
        Self::new(xs.clone().map(&q0).collect(), xs.map(&p0).collect())
    }

    /// Spatially constant state equal to `s` everywhere.
    pub fn constant(n: usize, s: &WellState) -> Result<Self> {
        Self::new(vec![s.q.clone(); n], vec![s.p.clone(); n])
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }
}

struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Spectral { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn wavenumber(&self, j: usize) -> f64 {
        if j <= self.n / 2 {
            j as f64
        } else {
            j as f64 - self.n as f64
        }
    }

    /// Applies the Fourier multiplier `mult(k)` to each component of `u`.
    fn apply(&self, u: &[Vec<f64>], mult: impl Fn(f64, usize) -> Complex<f64>) -> Vec<Vec<f64>> {
        let m = u.first().map(Vec::len).unwrap_or(0);
        let mut out = vec![vec![0.0; m]; self.n];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n];
        for c in 0..m {
            for (b, row) in buf.iter_mut().zip(u) {
                *b = Complex::new(row[c], 0.0);
            }
            self.fwd.process(&mut buf);
            for (j, b) in buf.iter_mut().enumerate() {
                *b *= mult(self.wavenumber(j), j);
            }
            self.inv.process(&mut buf);
            for (row, b) in out.iter_mut().zip(&buf) {
                row[c] = b.re / self.n as f64;
            }
        }
        out
    }

    fn laplacian(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.apply(u, |k, _| Complex::new(-(TAU * k).powi(2), 0.0))
    }

    fn derivative(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nyquist = self.n / 2;
        self.apply(u, |k, j| if j == nyquist { Complex::new(0.0, 0.0) } else { Complex::new(0.0, TAU * k) })
    }
}

/// Spectral leapfrog for `q_t = p`, `p_t = q_xx - (grad V)(q)` on `R/Z`.
/// Requires `dt <= h / pi`; records every `stride` steps plus the final state.
pub fn integrate_nlw<V: PotentialField + ?Sized>(
    v: &V,
    s0: &NlwState,
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory<NlwState>> {
    check_dim(v.dim(), s0.m)?;
    if !(dt > 0.0) || !(t_end > 0.0) || stride == 0 {
        return Err(Error::InvalidParameter(format!("need dt > 0, T > 0, stride > 0 (dt={dt}, T={t_end})")));
    }
    let bound = s0.spacing() / std::f64::consts::PI;
    if dt > bound {
        return Err(Error::Stability { dt, bound });
    }
    let sp = Spectral::new(s0.n);
    let n = step_count(t_end, dt);
    let h = t_end / n as f64;
    let force = |q: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let lap = sp.laplacian(q);
        lap.into_iter()
            .zip(q)
            .map(|(mut l, qj)| {
                for (li, gi) in l.iter_mut().zip(v.gradient(qj)) {
                    *li -= gi;
                }
                l
            })
            .collect()
    };
    let mut s = s0.clone();
    let mut f = force(&s.q);
    let mut times = vec![0.0];
    let mut points = vec![s.clone()];
    for i in 1..=n {
        for (pj, fj) in s.p.iter_mut().zip(&f) {
            for (p, fc) in pj.iter_mut().zip(fj) {
                *p += 0.5 * h * fc;
            }
        }
        for (qj, pj) in s.q.iter_mut().zip(&s.p) {
            for (q, p) in qj.iter_mut().zip(pj) {
                *q += h * p;
            }
        }
        f = force(&s.q);
        for (pj, fj) in s.p.iter_mut().zip(&f) {
            for (p, fc) in pj.iter_mut().zip(fj) {
                *p += 0.5 * h * fc;
            }
        }
        if s.q.iter().chain(&s.p).flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { t: i as f64 * h });
        }
        if i % stride == 0 || i == n {
            times.push(i as f64 * h);
            points.push(s.clone());
        }
    }
    Ok(Trajectory { times, points, step_size: h, method: "spectral-leapfrog" })
}

/// Trapezoid quadrature of `|p|^2/2 + |q_x|^2/2 + V(q)` with spectral `q_x`.
pub fn nlw_energy<V: PotentialField + ?Sized>(v: &V, s: &NlwState) -> f64 {
    let sp = Spectral::new(s.n);
    let dq = sp.derivative(&s.q);
    let h = s.spacing();
    (0..s.n).map(|j| h * (0.5 * norm2(&s.p[j]) + 0.5 * norm2(&dq[j]) + v.value(&s.q[j]))).sum()
}
