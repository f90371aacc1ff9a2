//! Vector fields on tori with trig-polynomial components, RK4 trajectories,
//! flow maps and morphism checks.

use crate::chart::{mat_vec, ChartMap, Matrix};
use crate::error::{check_dim, Error, Result};
use crate::trig::{certified_min, GridBound, TrigPoly};

/// A vector field `Y` on `(R/Z)^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusFlow {
    components: Vec<TrigPoly>,
}

impl TorusFlow {
    pub fn new(components: Vec<TrigPoly>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::InvalidParameter("flow needs at least one component".into()));
        }
        for c in &components {
            check_dim(n, c.dim())?;
        }
        Ok(TorusFlow { components })
    }

    /// Linear flow `x -> x + alpha t`.
    pub fn rotation(alpha: &[f64]) -> Self {
        let n = alpha.len();
        TorusFlow { components: alpha.iter().map(|&a| TrigPoly::constant(n, a)).collect() }
    }

    /// `d/dt` on the circle.
    pub fn circle_shift() -> Self {
        Self::rotation(&[1.0])
    }

    /// `sin(2 pi x) d/dx + cos(2 pi x) d/dy` on the 2-torus.
    pub fn bryant() -> Self {
        TorusFlow {
            components: vec![TrigPoly::sin_term(2, &[1, 0], 1.0), TrigPoly::cos_term(2, &[1, 0], 1.0)],
        }
    }

    /// Product flow `(X, X')` on `(R/Z)^(n + n')`.
    pub fn product(&self, other: &TorusFlow) -> Self {
        let (n, m) = (self.dim(), other.dim());
        let mut components: Vec<TrigPoly> = self
            .components
            .iter()
            .map(|p| p.map_freqs(n + m, |k| k.iter().copied().chain(std::iter::repeat_n(0, m)).collect()))
            .collect();
        components.extend(
            other.components.iter().map(|p| p.map_freqs(n + m, |k| std::iter::repeat_n(0, n).chain(k.iter().copied()).collect())),
        );
        TorusFlow { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[TrigPoly] {
        &self.components
    }

    pub fn degree(&self) -> i64 {
        self.components.iter().map(TrigPoly::degree).max().unwrap_or(0)
    }

    pub fn negated(&self) -> Self {
        TorusFlow { components: self.components.iter().map(|p| p.scale(&-1.0)).collect() }
    }

    pub fn eval_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.field(x))
    }

    pub(crate) fn field(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|p| p.eval(x)).collect()
    }

    /// `|Y|^2` as an exact trig polynomial.
    pub fn speed_squared(&self) -> TrigPoly {
        self.components.iter().fold(TrigPoly::zero(self.dim()), |acc, p| acc.add(&p.mul(p)))
    }

    /// Grid bound on `|Y|^2`; the flow is certified nonsingular when
    /// `certified_lower > 0`.
    pub fn nonsingular_certificate(&self, res: usize) -> GridBound {
        certified_min(&self.speed_squared(), res)
    }

    /// Refines the certificate grid until it succeeds or becomes too large.
    pub fn certify_nonsingular(&self) -> Result<GridBound> {
        let sq = self.speed_squared();
        let mut res = (8 * sq.degree().max(1)) as usize;
        let budget = 1usize << 22;
        loop {
            let b = certified_min(&sq, res);
            if b.certified_lower > 0.0 {
                return Ok(b);
            }
            if b.grid_min <= 0.0 || (2 * res).pow(self.dim() as u32) > budget {
                return Err(Error::Singular { lower_bound: b.certified_lower });
            }
            res *= 2;
        }
    }

    /// `DY` with entry `(i, j) = d Y_i / d x_j`.
    pub fn jacobian_polys(&self) -> Vec<Vec<TrigPoly>> {
        self.components.iter().map(|p| p.gradient()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<P = Vec<f64>> {
    pub times: Vec<f64>,
    pub points: Vec<P>,
    pub step_size: f64,
    pub method: &'static str,
}

impl<P> Trajectory<P> {
    pub fn last(&self) -> &P {
        self.points.last().expect("trajectory is never empty")
    }
}

/// Reduces every coordinate into `[0, 1)`.
pub fn reduce_mod1(x: &mut [f64]) {
    for c in x {
        *c -= c.floor();
        if *c >= 1.0 {
            *c = 0.0;
        }
    }
}

/// Sup-norm distance on the torus.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(1.0);
            d.min(1.0 - d)
        })
        .fold(0.0, f64::max)
}

/// Number of uniform steps covering `t` with step at most `dt`.
pub(crate) fn step_count(t: f64, dt: f64) -> usize {
    let n = t / dt;
    let r = n.round();
    if (n - r).abs() < 1e-9 * n.max(1.0) {
        (r as usize).max(1)
    } else {
        n.ceil() as usize
    }
}

fn rk4_step(flow: &TorusFlow, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = flow.field(x);
    let shift = |k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k2 = flow.field(&shift(&k1, h / 2.0));
    let k3 = flow.field(&shift(&k2, h / 2.0));
    let k4 = flow.field(&shift(&k3, h));
    (0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

fn check_finite(x: &[f64], t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}

/// Classical RK4 trajectory over `[0, t_end]`. The global error is `O(dt^4)`
/// per unit time; the step is shrunk slightly so it divides `t_end`.
pub fn integrate(flow: &TorusFlow, x0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory> {
    check_dim(flow.dim(), x0.len())?;
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and T > 0, got dt={dt}, T={t_end}")));
    }
    let n = step_count(t_end, dt);
    let h = t_end / n as f64;
    let mut x = x0.to_vec();
    reduce_mod1(&mut x);
    let mut times = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    times.push(0.0);
    points.push(x.clone());
    for i in 1..=n {
        x = rk4_step(flow, &x, h);
        let t = i as f64 * h;
        check_finite(&x, t)?;
        reduce_mod1(&mut x);
        times.push(t);
        points.push(x.clone());
    }
    Ok(Trajectory { times, points, step_size: h, method: "rk4" })
}

fn advance(flow: &TorusFlow, x0: &[f64], t: f64, n: usize) -> Result<Vec<f64>> {
    let h = t / n as f64;
    let mut x = x0.to_vec();
    for i in 1..=n {
        x = rk4_step(flow, &x, h);
        check_finite(&x, i as f64 * h)?;
        reduce_mod1(&mut x);
    }
    Ok(x)
}

pub const DEFAULT_FLOW_TOL: f64 = 1e-10;

/// `e^{tY} x` with the default tolerance.
pub fn flow_map(flow: &TorusFlow, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    flow_map_tol(flow, t, x, DEFAULT_FLOW_TOL)
}

/// `e^{tY} x` with `dt = min(1e-3, tol^(1/4))`, halved until the Richardson
/// estimate of the finer run's error is below `tol`.
pub fn flow_map_tol(flow: &TorusFlow, t: f64, x: &[f64], tol: f64) -> Result<Vec<f64>> {
    check_dim(flow.dim(), x.len())?;
    let mut x0 = x.to_vec();
    reduce_mod1(&mut x0);
    if t == 0.0 {
        return Ok(x0);
    }
    let (field, span) = if t < 0.0 { (flow.negated(), -t) } else { (flow.clone(), t) };
    let mut n = step_count(span, 1e-3f64.min(tol.powf(0.25)));
    let mut coarse = advance(&field, &x0, span, n)?;
    for _ in 0..6 {
        let fine = advance(&field, &x0, span, 2 * n)?;
        // RK4: err(fine) ~ |coarse - fine| / 15.
        if torus_distance(&coarse, &fine) / 15.0 <= tol {
            return Ok(fine);
        }
        coarse = fine;
        n *= 2;
    }
    log::warn!("flow_map: tolerance {tol:e} not reached at {n} steps");
    Ok(coarse)
}

/// `e^{tY} x` together with its Jacobian, from the variational equation
/// `J' = DY(x) J`, integrated with `steps` RK4 steps.
pub fn flow_map_with_jacobian(flow: &TorusFlow, t: f64, x: &[f64], steps: usize) -> Result<(Vec<f64>, Matrix)> {
    check_dim(flow.dim(), x.len())?;
    let n = flow.dim();
    let field = if t < 0.0 { flow.negated() } else { flow.clone() };
    let dy = field.jacobian_polys();
    let h = t.abs() / steps.max(1) as f64;
    // Augmented state: x followed by J in row-major order.
    let rhs = |s: &[f64]| -> Vec<f64> {
        let (pos, jac) = s.split_at(n);
        let mut out = field.field(pos);
        let a: Vec<Vec<f64>> = dy.iter().map(|row| row.iter().map(|p| p.eval(pos)).collect()).collect();
        for i in 0..n {
            for j in 0..n {
                out.push((0..n).map(|k| a[i][k] * jac[k * n + j]).sum());
            }
        }
        out
    };
    let mut s: Vec<f64> = x.to_vec();
    for i in 0..n {
        for j in 0..n {
            s.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    if t != 0.0 {
        for _ in 0..steps.max(1) {
            let k1 = rhs(&s);
            let add = |k: &[f64], c: f64| -> Vec<f64> { s.iter().zip(k).map(|(a, b)| a + c * b).collect() };
            let k2 = rhs(&add(&k1, h / 2.0));
            let k3 = rhs(&add(&k2, h / 2.0));
            let k4 = rhs(&add(&k3, h));
            for i in 0..s.len() {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    let mut pos = s[..n].to_vec();
    check_finite(&s, t)?;
    reduce_mod1(&mut pos);
    let jac = (0..n).map(|i| s[n + i * n..n + (i + 1) * n].to_vec()).collect();
    Ok((pos, jac))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MorphismReport {
    pub max_residual: f64,
    pub pass: bool,
}

/// Max over the grid of `|d phi(X(y)) - X'(phi(y))|` (Euclidean norm).
pub fn check_morphism(
    phi: &ChartMap,
    src: &TorusFlow,
    dst: &TorusFlow,
    grid_res: usize,
    tol: f64,
) -> Result<MorphismReport> {
    check_dim(src.dim(), phi.source_dim())?;
    check_dim(dst.dim(), phi.target_dim())?;
    if grid_res == 0 {
        return Err(Error::InvalidParameter("grid_res must be positive".into()));
    }
    let mut worst = 0.0f64;
    let mut failure = None;
    crate::trig::for_each_grid_point(src.dim(), grid_res, |_, y| {
        if failure.is_some() {
            return;
        }
        let image = match phi.eval(y) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                return;
            }
        };
        let jac = phi.jacobian(y).expect("dimension checked");
        let pushed = mat_vec(&jac, &src.field(y));
        let target = dst.field(&image);
        let r = pushed.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(r);
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(MorphismReport { max_residual: worst, pass: worst <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bryant_x(x0: f64, t: f64) -> f64 {
        ((PI * x0).tan() * (2.0 * PI * t).exp()).atan() / PI
    }

    #[test]
    fn bryant_field_values() {
        let f = TorusFlow::bryant();
        let v = f.eval_field(&[0.25, 0.7]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1].abs() < 1e-15);
        assert_eq!(f.eval_field(&[0.0, 0.3]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(f.eval_field(&[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rotation_is_exact() {
        let f = TorusFlow::rotation(&[1.0, 1.41421356]);
        let traj = integrate(&f, &[0.0, 0.0], 1.0, 1e-3).unwrap();
        assert!(torus_distance(traj.last(), &[0.0, 0.41421356]) < 1e-10);
        assert_eq!(traj.times.len(), traj.points.len());
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn bryant_closed_form() {
        let f = TorusFlow::bryant();
        let traj = integrate(&f, &[0.25, 0.0], 5.0, 1e-3).unwrap();
        assert!((traj.last()[0] - bryant_x(0.25, 5.0)).abs() < 1e-6);
        let x = flow_map(&f, 5.0, &[0.25, 0.0]).unwrap();
        assert!(x[0] <= 0.5 && x[0] >= 0.5 - 1e-6);
    }

    #[test]
    fn invariant_circle_c0() {
        let f = TorusFlow::bryant();
        let traj = integrate(&f, &[0.0, 0.3], 10.0, 1e-3).unwrap();
        assert!(traj.points.iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn negative_time_inverts() {
        let f = TorusFlow::bryant();
        let x = [0.3, 0.6];
        let fwd = flow_map(&f, 0.7, &x).unwrap();
        let back = flow_map(&f, -0.7, &fwd).unwrap();
        assert!(torus_distance(&back, &x) < 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let f = TorusFlow::bryant();
        let x = [0.2, 0.1];
        let (_, jac) = flow_map_with_jacobian(&f, 0.5, &x, 2000).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (a, b) = (flow_map(&f, 0.5, &xp).unwrap(), flow_map(&f, 0.5, &xm).unwrap());
            for i in 0..2 {
                assert!((jac[i][j] - (a[i] - b[i]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nonsingular_certificates() {
        assert!(TorusFlow::bryant().certify_nonsingular().unwrap().certified_lower > 0.0);
        let degenerate = TorusFlow::new(vec![TrigPoly::sin_term(1, &[1], 1.0)]).unwrap();
        assert!(matches!(degenerate.certify_nonsingular(), Err(Error::Singular { .. })));
    }

    #[test]
    fn morphisms() {
        let bryant = TorusFlow::bryant();
        let id = ChartMap::identity(2);
        assert_eq!(check_morphism(&id, &bryant, &bryant, 16, 0.0).unwrap().max_residual, 0.0);
        let shift = ChartMap::translation(vec![0.0, 0.1]);
        assert!(check_morphism(&shift, &bryant, &bryant, 16, 1e-14).unwrap().pass);
        let prod = bryant.product(&TorusFlow::circle_shift());
        let proj = ChartMap::projection(3, vec![2]).unwrap();
        let r = check_morphism(&proj, &prod, &TorusFlow::circle_shift(), 8, 0.0).unwrap();
        assert_eq!(r.max_residual, 0.0);
        assert!(r.pass);
    }
}
