//! Data matrices, sample covariance matrices and the sphere family of unit
//! vectors.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{AngleTuple, CovarianceCase};
use crate::mp::AspectRatio;
use crate::rng::{substream, Purpose};

/// Scalar field of the data: `f64` for the real case, `Complex64` for the
/// complex case.
pub trait Field: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {
    const CASE: CovarianceCase;

    fn to_c64(self) -> Complex64;
    /// Standard Gaussian with `E|X|² = 1` (and `E X² = 0` when complex).
    fn standard_normal(rng: &mut ChaCha20Rng) -> Self;
    /// `XX*` for a `p × n` matrix, exactly Hermitian.
    fn gram(x: &DMatrix<Self>) -> DMatrix<Self>;
}

impl Field for f64 {
    const CASE: CovarianceCase = CovarianceCase::Real;

    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn standard_normal(rng: &mut ChaCha20Rng) -> Self {
        StandardNormal.sample(rng)
    }
    fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = x * x.transpose();
        mirror_lower(&mut g, |v| v);
        g
    }
}

impl Field for Complex64 {
    const CASE: CovarianceCase = CovarianceCase::Complex;

    fn to_c64(self) -> Complex64 {
        self
    }
    fn standard_normal(rng: &mut ChaCha20Rng) -> Self {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }
    fn gram(x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        // (A + iB)(A − iB)ᵀ = AAᵀ + BBᵀ + i(BAᵀ − ABᵀ), all real products.
        let a = x.map(|v| v.re);
        let b = x.map(|v| v.im);
        let re = &a * a.transpose() + &b * b.transpose();
        let im = &b * a.transpose() - &a * b.transpose();
        let mut g = DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
        mirror_lower(&mut g, |v| v.conj());
        for i in 0..g.nrows() {
            g[(i, i)].im = 0.0;
        }
        g
    }
}

fn mirror_lower<T: Copy>(g: &mut DMatrix<T>, conj: impl Fn(T) -> T) {
    let p = g.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            g[(j, i)] = conj(g[(i, j)]);
        }
    }
}

/// Base distributions that can be fed to [`truncate_standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseLaw {
    Gaussian,
    StudentT { dof: f64 },
    Uniform,
    Rademacher,
    CenteredExponential,
    /// A point mass; only useful to exercise the degenerate-law error.
    Constant { value: f64 },
}

impl BaseLaw {
    fn sample(&self, rng: &mut ChaCha20Rng) -> f64 {
        match *self {
            BaseLaw::Gaussian => StandardNormal.sample(rng),
            BaseLaw::StudentT { dof } => StudentT::new(dof).expect("validated dof").sample(rng),
            BaseLaw::Uniform => rng.random_range(-1.0..1.0),
            BaseLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            BaseLaw::CenteredExponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
            BaseLaw::Constant { value } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BaseLaw::StudentT { dof } if !(dof.is_finite() && dof > 0.0) => {
                Err(Error::InvalidArgument(format!("Student-t dof {dof} must be positive")))
            }
            BaseLaw::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidArgument("constant must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    fn cache_key(&self) -> (u8, u64) {
        match *self {
            BaseLaw::Gaussian => (0, 0),
            BaseLaw::StudentT { dof } => (1, dof.to_bits()),
            BaseLaw::Uniform => (2, 0),
            BaseLaw::Rademacher => (3, 0),
            BaseLaw::CenteredExponential => (4, 0),
            BaseLaw::Constant { value } => (5, value.to_bits()),
        }
    }
}

/// A base law clamped to `|X| ≤ bound` and then affinely standardized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedLaw {
    pub base: BaseLaw,
    pub n: usize,
    pub epsilon: f64,
    /// Clamp level `ε_n n^{1/4}` applied to the base draws.
    pub bound: f64,
    /// Mean of the clamped law (estimated).
    pub shift: f64,
    /// Standard deviation of the clamped law (estimated).
    pub scale: f64,
}

impl TruncatedLaw {
    pub fn sample(&self, rng: &mut ChaCha20Rng) -> f64 {
        (self.base.sample(rng).clamp(-self.bound, self.bound) - self.shift) / self.scale
    }

    /// Largest modulus a standardized draw can take.
    pub fn standardized_bound(&self) -> f64 {
        (self.bound + self.shift.abs()) / self.scale
    }
}

/// Distribution of the i.i.d. entries of `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryLaw {
    RealGaussian,
    ComplexGaussian,
    TruncatedGeneral(TruncatedLaw),
}

impl EntryLaw {
    pub fn case(&self) -> CovarianceCase {
        match self {
            EntryLaw::ComplexGaussian => CovarianceCase::Complex,
            EntryLaw::RealGaussian | EntryLaw::TruncatedGeneral(_) => CovarianceCase::Real,
        }
    }

    fn draw<T: Field>(&self, rng: &mut ChaCha20Rng) -> T {
        match self {
            EntryLaw::RealGaussian | EntryLaw::ComplexGaussian => T::standard_normal(rng),
            EntryLaw::TruncatedGeneral(t) => T::from_real(t.sample(rng)),
        }
    }
}

/// Default truncation schedule `ε_n = n^{−1/8}`.
pub fn default_epsilon(n: usize) -> f64 {
    (n as f64).powf(-0.125)
}

/// Draws used to estimate the standardization constants.
pub const CALIBRATION_DRAWS: usize = 1_000_000;

type CalibrationKey = ((u8, u64), usize, u64);

fn calibration_cache() -> &'static Mutex<HashMap<CalibrationKey, (f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<CalibrationKey, (f64, f64)>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Truncates `base` at `ε_n n^{1/4}` and renormalizes to mean 0, variance 1.
pub fn truncate_standardize(base: BaseLaw, n: usize, epsilon: f64) -> Result<EntryLaw> {
    base.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("ε_n = {epsilon} must be positive")));
    }
    let bound = epsilon * (n as f64).powf(0.25);
    let key = (base.cache_key(), n, epsilon.to_bits());
    let cached = calibration_cache().lock().expect("cache lock").get(&key).copied();
    let (shift, scale) = match cached {
        Some(c) => c,
        None => {
            let mut rng = substream(0, Purpose::Calibration, n as u64, 0);
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for k in 0..CALIBRATION_DRAWS {
                let v = base.sample(&mut rng).clamp(-bound, bound);
                let d = v - mean;
                mean += d / (k + 1) as f64;
                m2 += d * (v - mean);
            }
            let sd = (m2 / (CALIBRATION_DRAWS - 1) as f64).sqrt();
            calibration_cache().lock().expect("cache lock").insert(key, (mean, sd));
            (mean, sd)
        }
    };
    if scale.is_nan() || scale <= 1e-12 * bound.max(1.0) {
        return Err(Error::Degenerate(format!("{base:?} has zero variance after truncation")));
    }
    Ok(EntryLaw::TruncatedGeneral(TruncatedLaw { base, n, epsilon, bound, shift, scale }))
}

fn check_case<T: Field>(case: CovarianceCase) -> Result<()> {
    if case == T::CASE {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("entry law is {case:?} but the field is {:?}", T::CASE)))
    }
}

/// `p × n` matrix of i.i.d. entries; column `k` is drawn from its own
/// substream of `(seed, replication)`.
pub fn sample_matrix<T: Field>(law: &EntryLaw, p: usize, n: usize, seed: u64, replication: u64) -> Result<DMatrix<T>> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("dimensions p={p}, n={n} must be positive")));
    }
    check_case::<T>(law.case())?;
    let mut x = DMatrix::<T>::zeros(p, n);
    for (k, mut col) in x.column_iter_mut().enumerate() {
        let mut rng = substream(seed, Purpose::Data, replication, k as u64);
        for v in col.iter_mut() {
            *v = law.draw(&mut rng);
        }
    }
    Ok(x)
}

/// `S = XX*/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance<T: Field> {
    pub s: DMatrix<T>,
    pub p: usize,
    pub n: usize,
}

impl<T: Field> SampleCovariance<T> {
    pub fn from_data(x: &DMatrix<T>) -> Self {
        let (p, n) = x.shape();
        let mut s = T::gram(x);
        let inv = 1.0 / n as f64;
        s.iter_mut().for_each(|v| *v = v.scale(inv));
        Self { s, p, n }
    }

    /// Wraps an explicit Hermitian matrix, treating it as built from `n` samples.
    pub fn from_matrix(s: DMatrix<T>, n: usize) -> Result<Self> {
        if !s.is_square() || n == 0 {
            return Err(Error::DimensionMismatch(format!("{:?} with n = {n}", s.shape())));
        }
        if s.iter().any(|v| !v.to_c64().re.is_finite() || !v.to_c64().im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in S".into()));
        }
        let p = s.nrows();
        Ok(Self { s, p, n })
    }

    pub fn y_n(&self) -> AspectRatio {
        AspectRatio::from_dims(self.p, self.n).expect("dimensions are positive")
    }

    pub fn trace(&self) -> f64 {
        (0..self.p).map(|i| self.s[(i, i)].real()).sum()
    }
}

pub fn sample_cov<T: Field>(x: &DMatrix<T>) -> SampleCovariance<T> {
    SampleCovariance::from_data(x)
}

/// Orthonormal vectors `x₁ .. x_{m+1}` spanning the sphere family.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereFrame<T: Field> {
    pub vectors: Vec<DVector<T>>,
}

impl<T: Field> SphereFrame<T> {
    /// Number of angles `m`.
    pub fn m(&self) -> usize {
        self.vectors.len() - 1
    }

    pub fn p(&self) -> usize {
        self.vectors[0].len()
    }

    /// The first `m + 1` standard basis vectors of `ℝᵖ` / `ℂᵖ`.
    pub fn canonical(p: usize, m: usize) -> Result<Self> {
        if m + 1 > p {
            return Err(Error::InvalidArgument(format!("frame of {} vectors in dimension {p}", m + 1)));
        }
        let vectors = (0..=m)
            .map(|k| DVector::from_fn(p, |i, _| if i == k { T::one() } else { T::zero() }))
            .collect();
        Ok(Self { vectors })
    }
}

/// Orthonormal frame from the QR factorization of a Gaussian `p × (m+1)` matrix.
pub fn random_frame<T: Field>(p: usize, m: usize, seed: u64) -> Result<SphereFrame<T>> {
    if m + 1 > p {
        return Err(Error::InvalidArgument(format!("frame of {} vectors in dimension {p}", m + 1)));
    }
    let mut g = DMatrix::<T>::zeros(p, m + 1);
    for (k, mut col) in g.column_iter_mut().enumerate() {
        let mut rng = substream(seed, Purpose::Frame, 0, k as u64);
        col.iter_mut().for_each(|v| *v = T::standard_normal(&mut rng));
    }
    let q = g.qr().q();
    let vectors = (0..=m).map(|k| q.column(k).into_owned()).collect();
    Ok(SphereFrame { vectors })
}

/// `x(t) = x₁cos t₁ + x₂ sin t₁ cos t₂ + ⋯ + x_{m+1} sin t₁⋯sin t_m`.
pub fn sphere_point<T: Field>(frame: &SphereFrame<T>, t: &AngleTuple) -> Result<DVector<T>> {
    if t.dim() != frame.m() {
        return Err(Error::DimensionMismatch(format!("{} angles for a frame with m = {}", t.dim(), frame.m())));
    }
    let mut out = DVector::<T>::zeros(frame.p());
    for (c, v) in t.coefficients().into_iter().zip(&frame.vectors) {
        out.axpy(T::from_real(c), v, T::one());
    }
    Ok(out)
}
