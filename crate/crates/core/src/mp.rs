//! The Marčenko–Pastur law and its Stieltjes transforms.
//!
//! Closed forms are evaluated in rationalized form so that the defining
//! quadratic `m(1 + σ − y + yσm) = 1` holds to machine precision over the
//! whole parameter range. Integrals against the law go through
//! [`MpLaw::integrate`], which maps the support onto `v ∈ [0, π]` with
//! `x = a + (b − a) sin²(v/2)`; the square-root edges then become smooth.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadOptions, QuadValue};

/// Limiting dimension-to-sample ratio `y = lim p/n`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AspectRatio(f64);

impl AspectRatio {
    pub fn new(y: f64) -> Result<Self> {
        if y.is_finite() && y > 0.0 {
            Ok(Self(y))
        } else {
            Err(Error::InvalidAspectRatio(y))
        }
    }

    /// `y_n = p / n`.
    pub fn from_dims(p: usize, n: usize) -> Result<Self> {
        if p == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!("dimensions p={p}, n={n} must be positive")));
        }
        Self::new(p as f64 / n as f64)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AspectRatio {
    type Error = Error;
    fn try_from(y: f64) -> Result<Self> {
        Self::new(y)
    }
}

impl From<AspectRatio> for f64 {
    fn from(y: AspectRatio) -> f64 {
        y.0
    }
}

/// Where a resolvent or Stieltjes transform is evaluated.
///
/// `Sigma(σ)` stands for the real shift in `(S + σI)⁻¹`, i.e. `z = −σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpectralShift {
    Sigma(f64),
    Z(Complex64),
}

impl SpectralShift {
    /// The point `z` in `(S − zI)⁻¹` form.
    pub fn as_z(self) -> Complex64 {
        match self {
            SpectralShift::Sigma(s) => Complex64::new(-s, 0.0),
            SpectralShift::Z(z) => z,
        }
    }

    pub fn is_real_sigma(self) -> bool {
        matches!(self, SpectralShift::Sigma(_))
    }

    /// The complex conjugate shift.
    pub fn conj(self) -> Self {
        match self {
            SpectralShift::Sigma(s) => SpectralShift::Sigma(s),
            SpectralShift::Z(z) => SpectralShift::Z(z.conj()),
        }
    }
}

/// A transform value together with the residual of its defining quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesValue<T> {
    pub value: T,
    pub residual: f64,
}

/// Standard Marčenko–Pastur law with ratio `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpLaw {
    pub y: AspectRatio,
    pub a: f64,
    pub b: f64,
    pub atom_at_zero: f64,
}

const MP_QUAD: QuadOptions = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-13, max_intervals: 4000 };
/// Declared absolute accuracy of [`MpLaw::integrate`].
pub const MP_INTEGRAL_TOL: f64 = 1e-10;

impl MpLaw {
    pub fn new(y: AspectRatio) -> Self {
        let (a, b) = support(y);
        let yv = y.get();
        let atom_at_zero = if yv > 1.0 { 1.0 - 1.0 / yv } else { 0.0 };
        Self { y, a, b, atom_at_zero }
    }

    pub fn with_ratio(y: f64) -> Result<Self> {
        Ok(Self::new(AspectRatio::new(y)?))
    }

    pub fn ratio(&self) -> f64 {
        self.y.get()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Continuous part of the density; the atom at zero is not included.
    pub fn density(&self, x: f64) -> f64 {
        if x > self.a && x < self.b {
            ((self.b - x) * (x - self.a)).sqrt() / (2.0 * PI * x * self.ratio())
        } else {
            0.0
        }
    }

    /// Leftmost point carrying mass: `0` when there is an atom, else `a`.
    pub fn mass_lower_edge(&self) -> f64 {
        if self.atom_at_zero > 0.0 {
            0.0
        } else {
            self.a
        }
    }

    /// `m(σ) = ∫ dF_y(x) / (x + σ)` in closed form.
    pub fn m_sigma(&self, sigma: f64) -> Result<StieltjesValue<f64>> {
        check_sigma(sigma)?;
        let y = self.ratio();
        let lin = 1.0 + sigma - y;
        let disc = ((1.0 + y + sigma).powi(2) - 4.0 * y).sqrt();
        // Positive root of yσm² + (1+σ−y)m − 1 = 0, rationalized.
        let m = 2.0 / (lin + disc);
        let residual = (m * (1.0 + sigma - y + y * sigma * m) - 1.0).abs();
        Ok(StieltjesValue { value: m, residual })
    }

    pub fn m(&self, sigma: f64) -> Result<f64> {
        Ok(self.m_sigma(sigma)?.value)
    }

    /// `dm/dσ` by implicit differentiation of the quadratic.
    pub fn m_prime(&self, sigma: f64) -> Result<f64> {
        let m = self.m(sigma)?;
        let y = self.ratio();
        Ok(-m * (1.0 + y * m) / (1.0 + sigma - y + 2.0 * y * sigma * m))
    }

    /// `b(σ) = 1 / (1 + y m(σ))`.
    pub fn b_of_sigma(&self, sigma: f64) -> Result<f64> {
        Ok(1.0 / (1.0 + self.ratio() * self.m(sigma)?))
    }

    /// Checks that `shift` is a legal evaluation point for this law.
    pub fn validate_shift(&self, shift: SpectralShift) -> Result<()> {
        match shift {
            SpectralShift::Sigma(s) => check_sigma(s),
            SpectralShift::Z(z) => {
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::InvalidShift(format!("non-finite z = {z}")));
                }
                if z.im == 0.0 {
                    if z.re >= self.a && z.re <= self.b {
                        return Err(Error::InvalidShift(format!(
                            "real z = {} lies in the support [{}, {}]",
                            z.re, self.a, self.b
                        )));
                    }
                    if z.re == 0.0 && self.atom_at_zero > 0.0 {
                        return Err(Error::InvalidShift("z = 0 is the atom of the law".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// `s(z) = ∫ dF_y(x) / (x − z)`.
    ///
    /// Real `z` outside the support is the limit from the upper half plane;
    /// `Sigma(σ)` routes through [`MpLaw::m_sigma`].
    pub fn stieltjes(&self, shift: SpectralShift) -> Result<StieltjesValue<Complex64>> {
        self.validate_shift(shift)?;
        let z = match shift {
            SpectralShift::Sigma(s) => {
                let m = self.m_sigma(s)?;
                return Ok(StieltjesValue {
                    value: Complex64::new(m.value, 0.0),
                    residual: self.quadratic_residual(Complex64::new(-s, 0.0), Complex64::new(m.value, 0.0)),
                });
            }
            SpectralShift::Z(z) => z,
        };
        let s = self.s_unchecked(z);
        Ok(StieltjesValue { value: s, residual: self.quadratic_residual(z, s) })
    }

    pub fn s(&self, shift: SpectralShift) -> Result<Complex64> {
        Ok(self.stieltjes(shift)?.value)
    }

    /// `ds/dz` by implicit differentiation of `yzs² + (z + y − 1)s + 1 = 0`.
    pub fn s_prime(&self, shift: SpectralShift) -> Result<Complex64> {
        let s = self.s(shift)?;
        let z = shift.as_z();
        let y = self.ratio();
        Ok(-(s * s * y + s) / (z * s * (2.0 * y) + z + (y - 1.0)))
    }

    fn s_unchecked(&self, z: Complex64) -> Complex64 {
        let y = self.ratio();
        // R(z) = √(z−a)√(z−b): cut exactly on [a, b], R(z) ~ z at infinity.
        let r = (z - self.a).sqrt() * (z - self.b).sqrt();
        let lin = Complex64::new(1.0 - y, 0.0) - z;
        let plus = lin + r;
        let minus = lin - r;
        // (lin + r)(lin − r) = 4yz; use whichever form avoids cancellation.
        if plus.norm() >= minus.norm() {
            plus / (z * (2.0 * y))
        } else {
            Complex64::new(2.0, 0.0) / minus
        }
    }

    fn quadratic_residual(&self, z: Complex64, s: Complex64) -> f64 {
        let y = self.ratio();
        (z * s * s * y + (z + (y - 1.0)) * s + 1.0).norm()
    }

    /// `∫ f dF_y` including the atom at zero when `y > 1`.
    pub fn integrate<V, F>(&self, f: F) -> Result<V>
    where
        V: QuadValue,
        F: Fn(f64) -> V,
    {
        let (a, b) = (self.a, self.b);
        let width = b - a;
        let y = self.ratio();
        let scale = width * width / (8.0 * PI * y);
        let g = |v: f64| {
            let (s, c) = (0.5 * v).sin_cos();
            let s2 = s * s;
            let x = a + width * s2;
            // density(x) dx = (b−a)² sin²v / (8π x y) dv, sin²v = 4 s² c².
            f(x) * (scale * 4.0 * s2 * c * c / x)
        };
        let cont = integrate(g, 0.0, PI, MP_QUAD);
        let cont = match cont {
            Ok(r) => r.value,
            Err(Error::QuadratureFailed { err, .. }) if err <= MP_INTEGRAL_TOL => {
                integrate(g, 0.0, PI, QuadOptions { abs_tol: MP_INTEGRAL_TOL, ..MP_QUAD })?.value
            }
            Err(Error::NonFiniteIntegrand(v)) => {
                let s2 = (0.5 * v).sin().powi(2);
                return Err(Error::NonFiniteIntegrand(a + width * s2));
            }
            Err(e) => return Err(e),
        };
        if self.atom_at_zero > 0.0 {
            let f0 = f(0.0);
            if !f0.all_finite() {
                return Err(Error::NonFiniteIntegrand(0.0));
            }
            Ok(cont + f0 * self.atom_at_zero)
        } else {
            Ok(cont)
        }
    }
}

impl MpLaw {
    /// Distribution function `F_y(x)`, right-continuous at the atom.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::InvalidArgument("cdf at NaN".into()));
        }
        if x < 0.0 {
            return Ok(0.0);
        }
        if x <= self.a {
            return Ok(self.atom_at_zero);
        }
        if x >= self.b {
            return Ok(1.0);
        }
        let (a, b) = (self.a, self.b);
        let width = b - a;
        let scale = width * width / (2.0 * PI * self.ratio());
        let upper = 2.0 * ((x - a) / width).sqrt().asin();
        let g = |v: f64| {
            let (s, c) = (0.5 * v).sin_cos();
            let s2 = s * s;
            scale * s2 * c * c / (a + width * s2)
        };
        let cont = integrate(g, 0.0, upper, QuadOptions { abs_tol: 1e-12, rel_tol: 1e-12, max_intervals: 2000 })?.value;
        Ok((self.atom_at_zero + cont).clamp(0.0, 1.0))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidShift(format!("σ = {sigma} must be positive and finite")))
    }
}

/// `(a, b) = ((1 − √y)², (1 + √y)²)`.
pub fn support(y: AspectRatio) -> (f64, f64) {
    let r = y.get().sqrt();
    ((1.0 - r).powi(2), (1.0 + r).powi(2))
}

pub fn density(x: f64, y: AspectRatio) -> f64 {
    MpLaw::new(y).density(x)
}

pub fn m_sigma(sigma: f64, y: AspectRatio) -> Result<StieltjesValue<f64>> {
    MpLaw::new(y).m_sigma(sigma)
}

pub fn stieltjes(z: SpectralShift, y: AspectRatio) -> Result<StieltjesValue<Complex64>> {
    MpLaw::new(y).stieltjes(z)
}

pub fn mp_integral<F: Fn(f64) -> f64>(f: F, y: AspectRatio) -> Result<f64> {
    MpLaw::new(y).integrate(f)
}

pub fn b_of_sigma(sigma: f64, y: AspectRatio) -> Result<f64> {
    MpLaw::new(y).b_of_sigma(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cdf_limits_and_monotone() {
        for y in [0.5, 1.0, 2.0] {
            let l = law(y);
            assert_eq!(l.cdf(-1.0).unwrap(), 0.0);
            assert_eq!(l.cdf(l.b + 1.0).unwrap(), 1.0);
            assert!((l.cdf(l.b - 1e-12).unwrap() - 1.0).abs() < 1e-7);
            let mid = 0.5 * (l.a + l.b);
            let c = l.cdf(mid).unwrap();
            let mut prev = 0.0;
            for k in 0..50 {
                let v = l.cdf(l.a + (l.b - l.a) * k as f64 / 49.0).unwrap();
                assert!(v >= prev - 1e-14);
                prev = v;
            }
            assert!(c > 0.0 && c < 1.0);
        }
        assert_eq!(law(2.0).cdf(0.0).unwrap(), 0.5);
    }

    #[test]
    fn cdf_matches_density_quadrature() {
        let l = law(0.5);
        let x = 1.3;
        let ref_val = crate::quad::integrate(|t: f64| l.density(t), l.a, x, crate::quad::QuadOptions::default()).unwrap().value;
        assert!((l.cdf(x).unwrap() - ref_val).abs() < 1e-6);
    }

    fn law(y: f64) -> MpLaw {
        MpLaw::with_ratio(y).unwrap()
    }

    // The branch formula as printed: (1 − z − y + sgn(Im z)·√·)/(2yz), with
    // the square root taken in the upper half plane.
    fn printed_branch(z: Complex64, y: f64) -> Complex64 {
        let d = (Complex64::new(1.0 + y, 0.0) - z).powi(2) - 4.0 * y;
        let mut root = d.sqrt();
        if root.im < 0.0 {
            root = -root;
        }
        let sgn = z.im.signum();
        (Complex64::new(1.0 - y, 0.0) - z + root * sgn) / (z * (2.0 * y))
    }

    #[test]
    fn support_examples() {
        assert_eq!(support(AspectRatio::new(1.0).unwrap()), (0.0, 4.0));
        assert_eq!(support(AspectRatio::new(0.25).unwrap()), (0.25, 2.25));
        let (a, b) = support(AspectRatio::new(2.0).unwrap());
        assert!((a - (1.0 - 2f64.sqrt()).powi(2)).abs() < 1e-15);
        assert!((b - (1.0 + 2f64.sqrt()).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn invalid_ratio() {
        assert!(AspectRatio::new(0.0).is_err());
        assert!(AspectRatio::new(-1.0).is_err());
        assert!(AspectRatio::new(f64::NAN).is_err());
        assert!(AspectRatio::new(f64::INFINITY).is_err());
    }

    #[test]
    fn density_examples() {
        let l = law(1.0);
        assert_eq!(l.density(5.0), 0.0);
        assert!((l.density(1.0) - 3f64.sqrt() / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn total_mass_is_one() {
        for y in [0.5, 1.0, 2.0] {
            let total = law(y).integrate(|_| 1.0).unwrap();
            assert!((total - 1.0).abs() < 1e-10, "y={y}: {total}");
        }
    }

    #[test]
    fn moments() {
        for y in [0.3, 1.0, 2.0] {
            let l = law(y);
            assert!((l.integrate(|x| x).unwrap() - 1.0).abs() < 1e-10);
            assert!((l.integrate(|x| x * x).unwrap() - (1.0 + y)).abs() < 1e-10);
        }
    }

    #[test]
    fn m_sigma_examples() {
        let m = law(1.0).m_sigma(1.0).unwrap();
        assert!((m.value - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        assert!(m.residual <= 1e-12);
        let quad = law(1.0).integrate(|x| 1.0 / (x + 1.0)).unwrap();
        assert!((quad - m.value).abs() < 1e-10);

        let l2 = law(2.0);
        let cont = l2.integrate(|x| 1.0 / (x + 1.0)).unwrap() - 0.5;
        let m2 = l2.m(1.0).unwrap();
        assert!((cont + 0.5 - m2).abs() < 1e-10);
        assert!(cont > 0.0 && cont < m2);

        for y in [0.1, 1.0, 3.0] {
            let sm = 1e8 * law(y).m(1e8).unwrap();
            assert!((sm - 1.0).abs() < 1e-7);
        }
        assert!(law(1.0).m_sigma(0.0).is_err());
        assert!(law(1.0).m_sigma(-1.0).is_err());
    }

    #[test]
    fn m_prime_matches_finite_difference() {
        for y in [0.5, 1.0, 2.0] {
            for s in [0.3, 1.0, 4.0] {
                let l = law(y);
                let h = 1e-5;
                let fd = (l.m(s + h).unwrap() - l.m(s - h).unwrap()) / (2.0 * h);
                assert!((fd - l.m_prime(s).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn b_identities() {
        let l = law(1.0);
        let b = l.b_of_sigma(1.0).unwrap();
        assert!((1.0 / (1.0 + b) - l.m(1.0).unwrap()).abs() < 1e-12);

        let l = law(2.0);
        let (s, b, m) = (0.5, l.b_of_sigma(0.5).unwrap(), l.m(0.5).unwrap());
        assert!((b / (s + b) - (1.0 - s * m)).abs() < 1e-12);

        let l = law(0.5);
        let m = l.m(2.0).unwrap();
        assert!((1.0 / m - 1.0 / (1.0 + 0.5 * m) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stieltjes_examples() {
        let l = law(0.5);
        for s in [0.1, 1.0, 7.0] {
            let v = l.s(SpectralShift::Z(Complex64::new(-s, 0.0))).unwrap();
            assert!((v.re - l.m(s).unwrap()).abs() < 1e-14);
            assert_eq!(v.im, 0.0);
        }
        let z = Complex64::new(2.0, 1.0);
        let a = l.s(SpectralShift::Z(z)).unwrap();
        let b = l.s(SpectralShift::Z(z.conj())).unwrap();
        assert!((a - b.conj()).norm() < 1e-15);

        let l1 = law(1.0);
        let z = Complex64::new(2.0, 0.5);
        let quad: Complex64 = l1.integrate(|x| Complex64::new(1.0, 0.0) / (Complex64::new(x, 0.0) - z)).unwrap();
        assert!((quad - l1.s(SpectralShift::Z(z)).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn stieltjes_rejects_support_points() {
        let l = law(0.5);
        assert!(l.stieltjes(SpectralShift::Z(Complex64::new(1.0, 0.0))).is_err());
        assert!(l.stieltjes(SpectralShift::Z(Complex64::new(l.a, 0.0))).is_err());
        assert!(law(2.0).stieltjes(SpectralShift::Z(Complex64::new(0.0, 0.0))).is_err());
        // Zero is outside the support for y < 1: s(0) = 1/(1 − y).
        let s0 = l.s(SpectralShift::Z(Complex64::new(0.0, 0.0))).unwrap();
        assert!((s0.re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn real_z_outside_support_matches_quadrature() {
        for (y, x) in [(0.5, 5.0), (0.5, 0.05), (2.0, 0.1), (2.0, 7.0), (1.0, -0.5)] {
            let l = law(y);
            let s = l.s(SpectralShift::Z(Complex64::new(x, 0.0))).unwrap();
            let quad = l.integrate(|t| 1.0 / (t - x)).unwrap();
            assert!((s.re - quad).abs() < 1e-9 * quad.abs().max(1.0), "y={y} x={x}");
            assert_eq!(s.im, 0.0);
        }
    }

    proptest! {
        #[test]
        fn stieltjes_off_axis(re in -10.0..10.0f64, im in 0.01..10.0f64, y in 0.05..4.0f64, sign in proptest::bool::ANY) {
            let l = law(y);
            let z = Complex64::new(re, if sign { im } else { -im });
            let v = l.stieltjes(SpectralShift::Z(z)).unwrap();
            prop_assert!(v.residual <= 1e-12 * (1.0 + z.norm()), "residual {}", v.residual);
            prop_assert!(v.value.im * z.im > 0.0);
            let c = l.s(SpectralShift::Z(z.conj())).unwrap();
            prop_assert!((c - v.value.conj()).norm() <= 1e-15 * v.value.norm().max(1.0));
            let printed = printed_branch(z, y);
            prop_assert!((printed - v.value).norm() <= 1e-9 * v.value.norm().max(1.0));
        }

        #[test]
        fn m_monotone_and_bounded(s in 0.01..50.0f64, y in 0.05..5.0f64) {
            let l = law(y);
            let m = l.m_sigma(s).unwrap();
            prop_assert!(m.residual <= 1e-12);
            prop_assert!(m.value > 0.0 && m.value < 1.0 / s);
            prop_assert!(l.m(s * 1.01).unwrap() < m.value);
        }
    }
}
