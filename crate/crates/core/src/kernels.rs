//! Covariance kernels of the limiting resolvent processes and the
//! covariance functionals of linear spectral statistics.
//!
//! Several algebraic forms of the kernel `W` circulate. They are exposed
//! side by side as [`KernelForm`] variants; [`KernelForm::DividedDifference`]
//! is the canonical one and equals the MP covariance functional
//! `∫ dF/((x+σ₁)(x+σ₂)) − m(σ₁)m(σ₂)`. The `Theorem1Display` variant
//! differs from it by the factor `(1 − σ₁m₁)(1 − σ₂m₂)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp::{MpLaw, SpectralShift};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelForm {
    /// `(m₂ − m₁)/(σ₁ − σ₂) − m₁m₂`.
    #[default]
    DividedDifference,
    /// `y m₁m₂ / (1 − y(1 − σ₁m₁)(1 − σ₂m₂))`.
    Theorem1Display,
    /// `y b₁b₂ / ((σ₁+b₁)(σ₂+b₂)[(σ₁+b₁)(σ₂+b₂) − y b₁b₂])` with `b = 1/(1 + ym)`.
    Section4Derived,
    /// `y s₁s₂ / (1 − y(1 + z₁s₁)(1 + z₂s₂))`.
    Theorem2Display,
}

impl KernelForm {
    pub const ALL: [KernelForm; 4] = [
        KernelForm::DividedDifference,
        KernelForm::Theorem1Display,
        KernelForm::Section4Derived,
        KernelForm::Theorem2Display,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelForm::DividedDifference => "divided-difference",
            KernelForm::Theorem1Display => "theorem1-display",
            KernelForm::Section4Derived => "section4-derived",
            KernelForm::Theorem2Display => "theorem2-display",
        }
    }
}

impl fmt::Display for KernelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        KernelForm::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown kernel form `{s}`")))
    }
}

/// Real or complex entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceCase {
    Real,
    Complex,
}

/// Limiting inner product `ϑ(t, s)` of two sphere points.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ThetaValue(pub f64);

/// Spherical angles `t ∈ [0, 2π]^m` indexing a point of the sphere family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AngleTuple(pub Vec<f64>);

impl AngleTuple {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if let Some(bad) = t.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite angle {bad}")));
        }
        Ok(Self(t))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Frame coefficients `c₁..c_{m+1}` with `x(t) = Σ c_k x_k`.
    pub fn coefficients(&self) -> Vec<f64> {
        let m = self.0.len();
        let mut out = Vec::with_capacity(m + 1);
        let mut sines = 1.0;
        for &t in &self.0 {
            out.push(sines * t.cos());
            sines *= t.sin();
        }
        out.push(sines);
        out
    }
}

/// `ϑ(t, s) = x(t)* x(s)`, computed by the nested recursion
/// `cos t₁ cos s₁ + sin t₁ sin s₁ ϑ(t₂.., s₂..)`.
pub fn theta(t: &AngleTuple, s: &AngleTuple) -> Result<ThetaValue> {
    if t.dim() != s.dim() {
        return Err(Error::DimensionMismatch(format!("angle tuples of length {} and {}", t.dim(), s.dim())));
    }
    let mut acc = 1.0;
    for (&a, &b) in t.0.iter().zip(&s.0).rev() {
        acc = a.cos() * b.cos() + a.sin() * b.sin() * acc;
    }
    Ok(ThetaValue(acc))
}

// Relative gap below which divided differences switch to the midpoint derivative.
const MERGE_GAP: f64 = 1e-5;

/// `W(σ₁, σ₂)` under the chosen form.
pub fn w_sigma(sigma1: f64, sigma2: f64, law: &MpLaw, form: KernelForm) -> Result<f64> {
    // Order the arguments so symmetry holds bit for bit.
    let (s1, s2) = if sigma1 <= sigma2 { (sigma1, sigma2) } else { (sigma2, sigma1) };
    let m1 = law.m(s1)?;
    let m2 = law.m(s2)?;
    let y = law.ratio();
    let w = match form {
        KernelForm::DividedDifference => {
            let gap = s2 - s1;
            let slope = if gap == 0.0 {
                -law.m_prime(s1)?
            } else if gap <= MERGE_GAP * (0.5 * (s1 + s2)).max(1.0) {
                -law.m_prime(0.5 * (s1 + s2))?
            } else {
                (m2 - m1) / (s1 - s2)
            };
            slope - m1 * m2
        }
        KernelForm::Theorem1Display => {
            y * m1 * m2 / (1.0 - y * (1.0 - s1 * m1) * (1.0 - s2 * m2))
        }
        KernelForm::Section4Derived => {
            let b1 = law.b_of_sigma(s1)?;
            let b2 = law.b_of_sigma(s2)?;
            let d = (s1 + b1) * (s2 + b2);
            y * b1 * b2 / (d * (d - y * b1 * b2))
        }
        KernelForm::Theorem2Display => {
            let z1 = Complex64::new(-s1, 0.0);
            let z2 = Complex64::new(-s2, 0.0);
            let (a1, a2) = (Complex64::new(m1, 0.0), Complex64::new(m2, 0.0));
            let w = a1 * a2 * y / (1.0 - (z1 * a1 + 1.0) * (z2 * a2 + 1.0) * y);
            w.re
        }
    };
    Ok(w)
}

/// `(1 − σ₁m₁)(1 − σ₂m₂)`, the ratio of [`KernelForm::DividedDifference`]
/// to [`KernelForm::Theorem1Display`].
pub fn display_ratio(sigma1: f64, sigma2: f64, law: &MpLaw) -> Result<f64> {
    Ok((1.0 - sigma1 * law.m(sigma1)?) * (1.0 - sigma2 * law.m(sigma2)?))
}

fn shift_order(a: Complex64, b: Complex64) -> bool {
    (a.re, a.im) <= (b.re, b.im)
}

/// `W(z₁, z₂)` for general shifts.
pub fn w_z(z1: SpectralShift, z2: SpectralShift, law: &MpLaw, form: KernelForm) -> Result<Complex64> {
    let (za, zb) = (z1.as_z(), z2.as_z());
    let (sh1, sh2) = if shift_order(za, zb) { (z1, z2) } else { (z2, z1) };
    let (z1, z2) = (sh1.as_z(), sh2.as_z());
    let s1 = law.s(sh1)?;
    let s2 = law.s(sh2)?;
    let y = law.ratio();
    let w = match form {
        KernelForm::DividedDifference => {
            let gap = (z2 - z1).norm();
            let slope = if gap == 0.0 {
                law.s_prime(sh1)?
            } else if gap <= MERGE_GAP * (0.5 * (z1 + z2)).norm().max(1.0) {
                let mid = SpectralShift::Z(0.5 * (z1 + z2));
                law.s_prime(mid)?
            } else {
                (s1 - s2) / (z1 - z2)
            };
            slope - s1 * s2
        }
        KernelForm::Theorem1Display | KernelForm::Theorem2Display => {
            // Identical once σ = −z is substituted.
            s1 * s2 * y / (1.0 - (z1 * s1 + 1.0) * (z2 * s2 + 1.0) * y)
        }
        KernelForm::Section4Derived => {
            let b1 = 1.0 / (s1 * y + 1.0);
            let b2 = 1.0 / (s2 * y + 1.0);
            let d = (b1 - z1) * (b2 - z2);
            b1 * b2 * y / (d * (d - b1 * b2 * y))
        }
    };
    Ok(w)
}

/// Kernel value for any pair of shifts, real whenever both are real `σ`.
pub fn w_shift(a: SpectralShift, b: SpectralShift, law: &MpLaw, form: KernelForm) -> Result<Complex64> {
    match (a, b) {
        (SpectralShift::Sigma(s1), SpectralShift::Sigma(s2)) => {
            Ok(Complex64::new(w_sigma(s1, s2, law, form)?, 0.0))
        }
        _ => w_z(a, b, law, form),
    }
}

/// Covariance `E Y(t₁,t₂,·) Y(t₃,t₄,·)` of the limit process.
pub fn cov_process(
    theta14: ThetaValue,
    theta32: ThetaValue,
    theta13: ThetaValue,
    theta42: ThetaValue,
    w: Complex64,
    case: CovarianceCase,
) -> Complex64 {
    let mult = match case {
        CovarianceCase::Complex => theta14.0 * theta32.0,
        CovarianceCase::Real => theta14.0 * theta32.0 + theta13.0 * theta42.0,
    };
    w * mult
}

/// Multiplier `θ` for the pair of index pairs `u = (t₁,t₂)`, `v = (t₃,t₄)`.
pub fn theta_multiplier(
    u: (&AngleTuple, &AngleTuple),
    v: (&AngleTuple, &AngleTuple),
    case: CovarianceCase,
) -> Result<f64> {
    let (t1, t2) = u;
    let (t3, t4) = v;
    let a = theta(t1, t4)?.0 * theta(t3, t2)?.0;
    Ok(match case {
        CovarianceCase::Complex => a,
        CovarianceCase::Real => a + theta(t1, t3)?.0 * theta(t4, t2)?.0,
    })
}

/// `θ(∫fg dF − ∫f dF ∫g dF)`.
pub fn lss_cov<F, G>(f: F, g: G, theta: f64, law: &MpLaw) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let fg = law.integrate(|x| f(x) * g(x))?;
    let mf = law.integrate(&f)?;
    let mg = law.integrate(&g)?;
    Ok(theta * (fg - mf * mg))
}

/// Axis-aligned rectangle `[left, right] × [−half_height, half_height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub left: f64,
    pub right: f64,
    pub half_height: f64,
}

impl Rectangle {
    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.left, -self.half_height),
            Complex64::new(self.right, -self.half_height),
            Complex64::new(self.right, self.half_height),
            Complex64::new(self.left, self.half_height),
        ]
    }

    fn encloses_interval(&self, lo: f64, hi: f64) -> bool {
        self.half_height > 0.0 && self.left < lo && self.right > hi
    }

    /// Strictly contains `other` with no shared boundary points.
    fn strictly_contains(&self, other: &Rectangle) -> bool {
        self.left < other.left && self.right > other.right && self.half_height > other.half_height
    }

    /// Counter-clockwise trapezoid nodes and weights, `per_side` panels per side.
    pub fn trapezoid(&self, per_side: usize) -> (Vec<Complex64>, Vec<Complex64>) {
        let corners = self.corners();
        let mut nodes = Vec::with_capacity(4 * per_side);
        for k in 0..4 {
            let (from, to) = (corners[k], corners[(k + 1) % 4]);
            for j in 0..per_side {
                nodes.push(from + (to - from) * (j as f64 / per_side as f64));
            }
        }
        let len = nodes.len();
        let weights = (0..len)
            .map(|k| 0.5 * (nodes[(k + 1) % len] - nodes[(k + len - 1) % len]))
            .collect();
        (nodes, weights)
    }
}

/// Parameters of the double contour quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub inner: Option<Rectangle>,
    pub outer: Option<Rectangle>,
    pub nodes_per_side: usize,
    pub max_nodes_per_side: usize,
    pub tol: f64,
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self { inner: None, outer: None, nodes_per_side: 256, max_nodes_per_side: 4096, tol: 1e-8 }
    }
}

impl ContourSpec {
    /// The default pair: margin `δ = η = max(0.5, 0.1·width)` around the
    /// mass-carrying interval, second contour scaled by 1.5 about its centre.
    pub fn default_rectangles(law: &MpLaw) -> (Rectangle, Rectangle) {
        let lo = law.mass_lower_edge();
        let hi = law.b;
        let margin = (0.1 * (hi - lo)).max(0.5);
        let inner = Rectangle { left: lo - margin, right: hi + margin, half_height: margin };
        let c = 0.5 * (lo + hi);
        let outer = Rectangle {
            left: c + 1.5 * (inner.left - c),
            right: c + 1.5 * (inner.right - c),
            half_height: 1.5 * margin,
        };
        (inner, outer)
    }

    pub fn rectangles(&self, law: &MpLaw) -> Result<(Rectangle, Rectangle)> {
        let (di, dout) = Self::default_rectangles(law);
        let inner = self.inner.unwrap_or(di);
        let outer = self.outer.unwrap_or(dout);
        let (lo, hi) = (law.mass_lower_edge(), law.b);
        for (name, r) in [("inner", &inner), ("outer", &outer)] {
            if !r.encloses_interval(lo, hi) {
                return Err(Error::Contour(format!(
                    "{name} contour {r:?} does not strictly enclose [{lo}, {hi}]"
                )));
            }
        }
        if !(outer.strictly_contains(&inner) || inner.strictly_contains(&outer)) {
            return Err(Error::Contour("contours intersect".into()));
        }
        Ok((inner, outer))
    }
}

/// Outcome of [`lss_cov_contour`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourEstimate {
    pub value: f64,
    /// Imaginary part of the extrapolated integral, zero up to quadrature error.
    pub imag_residual: f64,
    /// Difference between the last two extrapolated values.
    pub change: f64,
    pub nodes_per_side: usize,
    /// Plain trapezoid values at each refinement level.
    pub trapezoid: Vec<f64>,
}

/// `−θ/(4π²) ∮∮ W(z₁,z₂) f(z₁) g(z₂) dz₁ dz₂` over two disjoint
/// counter-clockwise rectangles, divided-difference kernel.
///
/// Composite trapezoid on each side with Romberg extrapolation over
/// successive doublings of the panel count.
pub fn lss_cov_contour<F, G>(f: F, g: G, theta: f64, law: &MpLaw, spec: &ContourSpec) -> Result<ContourEstimate>
where
    F: Fn(Complex64) -> Complex64,
    G: Fn(Complex64) -> Complex64,
{
    if spec.nodes_per_side == 0 || spec.max_nodes_per_side < spec.nodes_per_side {
        return Err(Error::Contour(format!("bad node counts {spec:?}")));
    }
    let (c1, c2) = spec.rectangles(law)?;
    let mut table: Vec<Vec<Complex64>> = Vec::new();
    let mut trapezoid = Vec::new();
    let mut per_side = spec.nodes_per_side;
    loop {
        let t = double_trapezoid(&f, &g, law, &c1, &c2, per_side)?;
        trapezoid.push((t * (-theta / (4.0 * PI * PI))).re);
        let mut row = vec![t];
        if let Some(prev) = table.last() {
            for j in 1..=prev.len() {
                let factor = 4f64.powi(j as i32) - 1.0;
                let next = row[j - 1] + (row[j - 1] - prev[j - 1]) / factor;
                row.push(next);
            }
        }
        let best = *row.last().expect("row is non-empty");
        let change = table.last().map(|prev| (best - *prev.last().expect("non-empty")).norm());
        table.push(row);
        let scale = -theta / (4.0 * PI * PI);
        if let Some(ch) = change {
            let ch = ch * scale.abs();
            if ch < spec.tol || per_side * 2 > spec.max_nodes_per_side {
                let v = best * scale;
                return Ok(ContourEstimate {
                    value: v.re,
                    imag_residual: v.im,
                    change: ch,
                    nodes_per_side: per_side,
                    trapezoid,
                });
            }
        } else if per_side * 2 > spec.max_nodes_per_side {
            let v = best * scale;
            return Ok(ContourEstimate {
                value: v.re,
                imag_residual: v.im,
                change: f64::INFINITY,
                nodes_per_side: per_side,
                trapezoid,
            });
        }
        per_side *= 2;
    }
}

fn double_trapezoid<F, G>(
    f: &F,
    g: &G,
    law: &MpLaw,
    c1: &Rectangle,
    c2: &Rectangle,
    per_side: usize,
) -> Result<Complex64>
where
    F: Fn(Complex64) -> Complex64,
    G: Fn(Complex64) -> Complex64,
{
    let (z1, w1) = c1.trapezoid(per_side);
    let (z2, w2) = c2.trapezoid(per_side);
    let s_at = |z: &[Complex64]| -> Result<Vec<Complex64>> {
        z.iter().map(|&z| law.s(SpectralShift::Z(z))).collect()
    };
    let s1 = s_at(&z1)?;
    let s2 = s_at(&z2)?;
    let a: Vec<Complex64> = z1.iter().zip(&w1).map(|(&z, &w)| w * f(z)).collect();
    let b: Vec<Complex64> = z2.iter().zip(&w2).map(|(&z, &w)| w * g(z)).collect();
    let mut cross = Complex64::new(0.0, 0.0);
    for j in 0..z1.len() {
        let mut inner = Complex64::new(0.0, 0.0);
        for k in 0..z2.len() {
            inner += b[k] * (s1[j] - s2[k]) / (z1[j] - z2[k]);
        }
        cross += a[j] * inner;
    }
    let fa: Complex64 = a.iter().zip(&s1).map(|(a, s)| a * s).sum();
    let gb: Complex64 = b.iter().zip(&s2).map(|(b, s)| b * s).sum();
    Ok(cross - fa * gb)
}
