//! Real trigonometric polynomials on the torus (R/Z)^n.
//!
//! A [`TrigPoly`] is a finite sum of terms `a cos(2 pi k.x) + b sin(2 pi k.x)`
//! indexed by integer frequency vectors `k`. Frequencies are stored in a
//! canonical half-space (first nonzero entry positive) so that `k` and `-k`
//! never appear together, and the zero frequency carries no sine part.
//!
//! The coefficient type is generic so the same algebra runs over `f64` and
//! over exact rationals (see [`Coeff`]). Derivatives are exposed in the
//! "unscaled" form `(1/2pi) d/dx_i`, which keeps rational coefficients
//! rational; [`TrigPoly::partial`] restores the `2 pi` factor for `f64`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Integer frequency vector.
pub type Freq = Vec<i64>;

/// Coefficient field for trig polynomials.
pub trait Coeff:
    Clone
    + Debug
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn from_int(i: i64) -> Self;
    fn half(&self) -> Self;
    fn div_int(&self, k: i64) -> Self;
    fn magnitude(&self) -> f64;
}

impl Coeff for f64 {
    fn from_int(i: i64) -> Self {
        i as f64
    }
    fn half(&self) -> Self {
        0.5 * self
    }
    fn div_int(&self, k: i64) -> Self {
        self / k as f64
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Coeff for BigRational {
    fn from_int(i: i64) -> Self {
        BigRational::from_integer(BigInt::from(i))
    }
    fn half(&self) -> Self {
        self / BigRational::from_integer(BigInt::from(2))
    }
    fn div_int(&self, k: i64) -> Self {
        self / BigRational::from_integer(BigInt::from(k))
    }
    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }
}

/// Returns the canonical representative of `k` and whether it was negated.
pub fn canonical(k: &[i64]) -> (Freq, bool) {
    match k.iter().find(|&&c| c != 0) {
        Some(&c) if c < 0 => (k.iter().map(|c| -c).collect(), true),
        _ => (k.to_vec(), false),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly<T = f64> {
    dim: usize,
    terms: BTreeMap<Freq, (T, T)>,
}

impl<T: Coeff> TrigPoly<T> {
    pub fn zero(dim: usize) -> Self {
        TrigPoly { dim, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, c: T) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(&vec![0; dim], c, T::zero());
        p
    }

    pub fn cos_term(dim: usize, k: &[i64], c: T) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(k, c, T::zero());
        p
    }

    pub fn sin_term(dim: usize, k: &[i64], s: T) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(k, T::zero(), s);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Iterates over `(canonical frequency, cos coefficient, sin coefficient)`.
    pub fn terms(&self) -> impl Iterator<Item = (&Freq, &T, &T)> {
        self.terms.iter().map(|(k, (c, s))| (k, c, s))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Adds `c cos(2 pi k.x) + s sin(2 pi k.x)`; `k` need not be canonical.
    pub fn add_term(&mut self, k: &[i64], c: T, s: T) {
        assert_eq!(k.len(), self.dim, "frequency has wrong dimension");
        let (key, flipped) = canonical(k);
        let is_zero_freq = key.iter().all(|&x| x == 0);
        let s = if flipped { -s } else { s };
        // sin(0) vanishes identically.
        let s = if is_zero_freq { T::zero() } else { s };
        if c.is_zero() && s.is_zero() {
            return;
        }
        let entry = self.terms.entry(key).or_insert_with(|| (T::zero(), T::zero()));
        entry.0 = entry.0.clone() + c;
        entry.1 = entry.1.clone() + s;
        if entry.0.is_zero() && entry.1.is_zero() {
            let (key, _) = canonical(k);
            self.terms.remove(&key);
        }
    }

    /// Coefficients of `cos(2 pi k.x)` and `sin(2 pi k.x)` for any `k`.
    pub fn coeff(&self, k: &[i64]) -> (T, T) {
        let (key, flipped) = canonical(k);
        match self.terms.get(&key) {
            Some((c, s)) => (c.clone(), if flipped { -s.clone() } else { s.clone() }),
            None => (T::zero(), T::zero()),
        }
    }

    /// Zero-frequency coefficient (the mean over the torus).
    pub fn mean(&self) -> T {
        self.coeff(&vec![0; self.dim]).0
    }

    /// Largest sup-norm of a frequency present.
    pub fn degree(&self) -> i64 {
        self.terms.keys().map(|k| k.iter().map(|c| c.abs()).max().unwrap_or(0)).max().unwrap_or(0)
    }

    pub fn scale(&self, a: &T) -> Self {
        let mut out = Self::zero(self.dim);
        for (k, (c, s)) in &self.terms {
            out.add_term(k, a.clone() * c.clone(), a.clone() * s.clone());
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (k, (c, s)) in &other.terms {
            out.add_term(k, c.clone(), s.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (k, (c, s)) in &other.terms {
            out.add_term(k, -c.clone(), -s.clone());
        }
        out
    }

    /// Exact product via the product-to-sum identities.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = Self::zero(self.dim);
        for (k1, (a1, b1)) in &self.terms {
            for (k2, (a2, b2)) in &other.terms {
                let plus: Freq = k1.iter().zip(k2).map(|(x, y)| x + y).collect();
                let minus: Freq = k1.iter().zip(k2).map(|(x, y)| x - y).collect();
                // cos A cos B = (cos(A-B) + cos(A+B))/2
                // sin A sin B = (cos(A-B) - cos(A+B))/2
                // cos A sin B = (sin(A+B) - sin(A-B))/2
                // sin A cos B = (sin(A+B) + sin(A-B))/2
                let cc = (a1.clone() * a2.clone()).half();
                let ss = (b1.clone() * b2.clone()).half();
                let cs = (a1.clone() * b2.clone()).half();
                let sc = (b1.clone() * a2.clone()).half();
                out.add_term(&minus, cc.clone() + ss.clone(), sc.clone() - cs.clone());
                out.add_term(&plus, cc - ss, cs + sc);
            }
        }
        out
    }

    /// `(1 / 2pi) d/dx_i`, exact in coefficient space.
    pub fn partial_unscaled(&self, i: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (k, (c, s)) in &self.terms {
            let ki = T::from_int(k[i]);
            if ki.is_zero() {
                continue;
            }
            out.add_term(k, s.clone() * ki.clone(), -(c.clone() * ki));
        }
        out
    }

    /// Substitutes `x -> A^T`-transformed frequencies: returns `p(x)` with
    /// every frequency `k` replaced by `f(k)`. Coefficients are unchanged.
    pub fn map_freqs(&self, dim: usize, f: impl Fn(&[i64]) -> Freq) -> Self {
        let mut out = Self::zero(dim);
        for (k, (c, s)) in &self.terms {
            out.add_term(&f(k), c.clone(), s.clone());
        }
        out
    }

    pub fn map_coeffs<U: Coeff>(&self, f: impl Fn(&T) -> U) -> TrigPoly<U> {
        let mut out = TrigPoly::zero(self.dim);
        for (k, (c, s)) in &self.terms {
            out.add_term(k, f(c), f(s));
        }
        out
    }

    /// Largest coefficient magnitude (used for exactness residuals).
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().map(|(c, s)| c.magnitude().max(s.magnitude())).fold(0.0, f64::max)
    }
}

impl TrigPoly<f64> {
    pub fn from_terms(dim: usize, terms: &[(Freq, f64, f64)]) -> Self {
        let mut p = Self::zero(dim);
        for (k, c, s) in terms {
            p.add_term(k, *c, *s);
        }
        p
    }

    pub fn to_terms(&self) -> Vec<(Freq, f64, f64)> {
        self.terms.iter().map(|(k, (c, s))| (k.clone(), *c, *s)).collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms
            .iter()
            .map(|(k, (c, s))| {
                let phase = TAU * k.iter().zip(x).map(|(&ki, xi)| ki as f64 * xi).sum::<f64>();
                let (sn, cs) = phase.sin_cos();
                c * cs + s * sn
            })
            .sum()
    }

    pub fn partial(&self, i: usize) -> Self {
        self.partial_unscaled(i).scale(&TAU)
    }

    pub fn gradient(&self) -> Vec<Self> {
        (0..self.dim).map(|i| self.partial(i)).collect()
    }

    /// Drops terms whose coefficients are both below `tol` in magnitude.
    pub fn pruned(&self, tol: f64) -> Self {
        let mut out = Self::zero(self.dim);
        for (k, (c, s)) in &self.terms {
            if c.abs() > tol || s.abs() > tol {
                out.add_term(k, *c, *s);
            }
        }
        out
    }

    /// Bound on `|p(x) - p(g)|` whenever `|x - g|_inf <= radius`.
    ///
    /// Each term is `A cos(2 pi k.x + phi)` with `A = sqrt(c^2 + s^2)`, which is
    /// `2 pi A |k|_1`-Lipschitz in the sup norm.
    pub fn lipschitz_margin(&self, radius: f64) -> f64 {
        self.terms
            .iter()
            .map(|(k, (c, s))| {
                let l1: i64 = k.iter().map(|x| x.abs()).sum();
                c.hypot(*s) * TAU * l1 as f64 * radius
            })
            .sum()
    }

    /// Sum of coefficient amplitudes, an upper bound for `sup |p|`.
    pub fn amplitude_bound(&self) -> f64 {
        self.terms.values().map(|(c, s)| c.hypot(*s)).sum()
    }

    pub fn to_rational(&self) -> TrigPoly<BigRational> {
        self.map_coeffs(|c| crate::rational::from_f64_decimal(*c))
    }
}

impl TrigPoly<BigRational> {
    pub fn to_f64(&self) -> TrigPoly<f64> {
        self.map_coeffs(|c| c.to_f64().unwrap_or(f64::NAN))
    }
}

#[derive(Serialize, Deserialize)]
struct TrigPolyRepr {
    dim: usize,
    terms: Vec<(Freq, f64, f64)>,
}

impl Serialize for TrigPoly<f64> {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        TrigPolyRepr { dim: self.dim, terms: self.to_terms() }.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for TrigPoly<f64> {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let repr = TrigPolyRepr::deserialize(de)?;
        if let Some((k, _, _)) = repr.terms.iter().find(|(k, _, _)| k.len() != repr.dim) {
            return Err(serde::de::Error::custom(format!(
                "frequency {k:?} does not have dimension {}",
                repr.dim
            )));
        }
        Ok(TrigPoly::from_terms(repr.dim, &repr.terms))
    }
}

/// Result of sampling a trig polynomial on a uniform grid.
#[derive(Clone, Copy, Debug)]
pub struct GridBound {
    pub grid_min: f64,
    pub grid_max: f64,
    /// `grid_min` minus the Lipschitz margin: a lower bound valid everywhere.
    pub certified_lower: f64,
    pub resolution: usize,
}

/// Visits every point of the uniform grid `{j/res}^dim`.
pub fn for_each_grid_point(dim: usize, res: usize, mut f: impl FnMut(&[usize], &[f64])) {
    let total = res.checked_pow(dim as u32).expect("grid too large");
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    for flat in 0..total {
        let mut rem = flat;
        for d in (0..dim).rev() {
            idx[d] = rem % res;
            rem /= res;
            x[d] = idx[d] as f64 / res as f64;
        }
        f(&idx, &x);
    }
}

/// Grid minimum of `p` with a Lipschitz-certified global lower bound.
pub fn certified_min(p: &TrigPoly<f64>, res: usize) -> GridBound {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for_each_grid_point(p.dim(), res, |_, x| {
        let v = p.eval(x);
        lo = lo.min(v);
        hi = hi.max(v);
    });
    let margin = p.lipschitz_margin(0.5 / res as f64);
    GridBound { grid_min: lo, grid_max: hi, certified_lower: lo - margin, resolution: res }
}

/// Least-squares fit of grid samples by a trig polynomial of sup-degree
/// `degree`. On a uniform grid with `res > 2 * degree` the basis is
/// orthogonal, so the fit reduces to discrete Fourier projection.
pub fn fit_on_grid(dim: usize, res: usize, degree: i64, samples: &[f64]) -> TrigPoly<f64> {
    assert!(res as i64 > 2 * degree, "grid too coarse for fit degree");
    let total = samples.len() as f64;
    let mut out = TrigPoly::zero(dim);
    for k in frequency_box(dim, degree).into_iter().filter(|k| canonical(k).0 == *k) {
        let zero = k.iter().all(|&c| c == 0);
        let (mut sc, mut ss) = (0.0, 0.0);
        let mut i = 0;
        for_each_grid_point(dim, res, |_, x| {
            let phase = TAU * k.iter().zip(x).map(|(&ki, xi)| ki as f64 * xi).sum::<f64>();
            sc += samples[i] * phase.cos();
            ss += samples[i] * phase.sin();
            i += 1;
        });
        if zero {
            out.add_term(&k, sc / total, 0.0);
        } else {
            out.add_term(&k, 2.0 * sc / total, 2.0 * ss / total);
        }
    }
    out
}

/// All frequencies in the box `[-degree, degree]^dim`, lexicographic.
pub fn frequency_box(dim: usize, degree: i64) -> Vec<Freq> {
    let side = (2 * degree + 1) as usize;
    let mut out = Vec::with_capacity(side.pow(dim as u32));
    let mut cur = vec![-degree; dim];
    loop {
        out.push(cur.clone());
        let mut d = dim;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            if cur[d] < degree {
                cur[d] += 1;
                for c in cur.iter_mut().skip(d + 1) {
                    *c = -degree;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bryant_x() -> TrigPoly {
        TrigPoly::sin_term(2, &[1, 0], 1.0)
    }

    #[test]
    fn canonical_flips_sign_of_sine() {
        let p = TrigPoly::sin_term(1, &[-2], 3.0);
        assert_eq!(p.coeff(&[2]), (0.0, -3.0));
        assert_eq!(p.coeff(&[-2]), (0.0, 3.0));
        assert!((p.eval(&[0.1]) - 3.0 * (-TAU * 0.2).sin()).abs() < 1e-14);
    }

    #[test]
    fn zero_frequency_sine_is_dropped() {
        let p = TrigPoly::sin_term(2, &[0, 0], 5.0);
        assert!(p.is_zero());
    }

    #[test]
    fn sin_squared_plus_cos_squared_is_one() {
        let s = bryant_x();
        let c = TrigPoly::cos_term(2, &[1, 0], 1.0);
        let one = s.mul(&s).add(&c.mul(&c));
        assert_eq!(one, TrigPoly::constant(2, 1.0));
        assert_eq!(one.degree(), 0);
    }

    #[test]
    fn product_matches_pointwise() {
        let a = TrigPoly::from_terms(2, &[(vec![1, -1], 0.3, 1.2), (vec![0, 2], -0.5, 0.25)]);
        let b = TrigPoly::from_terms(2, &[(vec![2, 1], 1.0, -0.7), (vec![0, 0], 0.4, 0.0)]);
        let ab = a.mul(&b);
        for x in [[0.1, 0.2], [0.77, 0.31], [0.5, 0.0]] {
            assert!((ab.eval(&x) - a.eval(&x) * b.eval(&x)).abs() < 1e-13);
        }
    }

    #[test]
    fn partial_matches_finite_difference() {
        let p = TrigPoly::from_terms(2, &[(vec![1, 2], 0.3, -1.1), (vec![3, -1], 0.2, 0.6)]);
        let h = 1e-6;
        let x = [0.23, 0.61];
        let fd = (p.eval(&[x[0], x[1] + h]) - p.eval(&[x[0], x[1] - h])) / (2.0 * h);
        assert!((p.partial(1).eval(&x) - fd).abs() < 1e-7);
    }

    #[test]
    fn rational_product_is_exact() {
        let a = TrigPoly::from_terms(1, &[(vec![1], 1.0, 0.0)]).to_rational();
        let sq = a.mul(&a);
        let half = BigRational::new(1.into(), 2.into());
        assert_eq!(sq.coeff(&[0]).0, half.clone());
        assert_eq!(sq.coeff(&[2]).0, half);
    }

    #[test]
    fn certified_min_bounds_true_min() {
        let p = TrigPoly::from_terms(1, &[(vec![0], 1.0, 0.0), (vec![3], 0.0, 0.9)]);
        let b = certified_min(&p, 24);
        assert!(b.certified_lower <= 0.1 + 1e-12);
        assert!((b.grid_min - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_trig_poly() {
        let p = TrigPoly::from_terms(2, &[(vec![1, -2], 0.3, 1.2), (vec![0, 0], 0.5, 0.0)]);
        let res = 8;
        let mut samples = Vec::new();
        for_each_grid_point(2, res, |_, x| samples.push(p.eval(x)));
        let fit = fit_on_grid(2, res, 3, &samples);
        assert!(fit.sub(&p).max_coeff() < 1e-13);
    }

    #[test]
    fn serde_round_trip() {
        let p = TrigPoly::from_terms(2, &[(vec![1, -2], 0.3, 1.2), (vec![0, 0], 0.5, 0.0)]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<TrigPoly>(&json).unwrap(), p);
        assert!(serde_json::from_str::<TrigPoly>(r#"{"dim":2,"terms":[[[1],1.0,0.0]]}"#).is_err());
    }

    #[test]
    fn frequency_box_counts() {
        assert_eq!(frequency_box(2, 1).len(), 9);
        assert_eq!(frequency_box(3, 2).len(), 125);
        assert_eq!(frequency_box(1, 0), vec![vec![0]]);
    }
}
