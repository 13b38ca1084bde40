//! Linear spectral statistics of the eigenprojection measure
//! `Σⱼ f(λⱼ) (x*uⱼ)(uⱼ*y)` and their covariance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample_matrix, sphere_point, EntryLaw, Field, SampleCovariance};
use crate::error::{Error, Result};
use crate::kernels::{lss_cov, lss_cov_contour, theta_multiplier, AngleTuple, ContourEstimate, ContourSpec, CovarianceCase};
use crate::montecarlo::{compare_moments, empirical_cov, run_with, ComparisonReport, EmpiricalMoments, FrameSpec, MomentKind, StatisticArray};
use crate::mp::{AspectRatio, MpLaw};

pub const MAX_POLY_DEGREE: usize = 16;

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition<T: Field> {
    pub eigenvalues: DVector<f64>,
    pub vectors: DMatrix<T>,
}

impl<T: Field> SpectralDecomposition<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `max |U*U − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.vectors.ad_mul(&self.vectors);
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)].to_c64() - target).norm());
            }
        }
        worst
    }

    /// `max |UΛU* − S|`.
    pub fn reconstruction_error(&self, cov: &SampleCovariance<T>) -> f64 {
        let u = &self.vectors;
        let scaled = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)].scale(self.eigenvalues[j]));
        let r = scaled * u.adjoint() - &cov.s;
        r.iter().map(|v| v.to_c64().norm()).fold(0.0, f64::max)
    }

    /// `Σⱼ f(λⱼ)(x*uⱼ)(uⱼ*y)`.
    pub fn weighted_sum(&self, f: &TestFunction, x: &DVector<T>, y: &DVector<T>) -> Result<Complex64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("vectors of length {}, {} for p = {}", x.len(), y.len(), self.dim())));
        }
        let ax = self.vectors.ad_mul(x);
        let ay = self.vectors.ad_mul(y);
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..self.dim() {
            let fl = f.eval(self.eigenvalues[j])?;
            acc += ax[j].to_c64().conj() * ay[j].to_c64() * fl;
        }
        Ok(acc)
    }

    /// Kolmogorov–Smirnov distance between the ESD and `F_y`.
    pub fn esd_ks_distance(&self, law: &MpLaw) -> Result<f64> {
        let p = self.dim();
        let pf = p as f64;
        let zero_tol = 1e-10 * law.b;
        let snapped: Vec<f64> = self.eigenvalues.iter().map(|&l| if l.abs() <= zero_tol { 0.0 } else { l }).collect();
        let mut d = 0.0f64;
        let mut i = 0;
        while i < p {
            let x = snapped[i];
            let mut j = i;
            while j < p && snapped[j] == x {
                j += 1;
            }
            // The ESD jumps from i/p to j/p at x; F jumps only at zero.
            let f = law.cdf(x)?;
            let f_left = if x == 0.0 { 0.0 } else { f };
            d = d.max((f_left - i as f64 / pf).abs()).max((f - j as f64 / pf).abs());
            i = j;
        }
        Ok(d)
    }
}

/// Full Hermitian eigendecomposition of `S`, ascending.
pub fn eigen<T: Field>(cov: &SampleCovariance<T>) -> Result<SpectralDecomposition<T>> {
    let eig = cov
        .s
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(Error::EigenNonConvergence)?;
    let mut order: Vec<usize> = (0..cov.p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = DVector::from_iterator(cov.p, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(cov.p, cov.p, |r, c| eig.eigenvectors[(r, order[c])]);
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenNonConvergence);
    }
    Ok(SpectralDecomposition { eigenvalues, vectors })
}

/// A test function analytic on a neighbourhood of the MP support.
///
/// Text forms: `x`, `x^k`, `poly:c0,c1,...`, `resolvent:σ` for `1/(x+σ)`,
/// `exp` or `exp:a` for `e^{ax}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TestFunction {
    /// `Σ cₖ xᵏ`, lowest degree first.
    Polynomial(Vec<f64>),
    Resolvent { sigma: f64 },
    Exp { rate: f64 },
}

impl TestFunction {
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument("polynomial with no coefficients".into()));
        }
        if coeffs.len() > MAX_POLY_DEGREE + 1 {
            return Err(Error::InvalidArgument(format!("degree {} exceeds {MAX_POLY_DEGREE}", coeffs.len() - 1)));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        Ok(TestFunction::Polynomial(coeffs))
    }

    pub fn monomial(k: usize) -> Result<Self> {
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        Self::polynomial(c)
    }

    pub fn identity() -> Self {
        TestFunction::Polynomial(vec![0.0, 1.0])
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, TestFunction::Polynomial(c) if c.as_slice() == [0.0, 1.0])
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            TestFunction::Polynomial(c) => Some(c),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let v = match self {
            TestFunction::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck),
            TestFunction::Resolvent { sigma } => 1.0 / (x + sigma),
            TestFunction::Exp { rate } => (rate * x).exp(),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteIntegrand(x))
        }
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        match self {
            TestFunction::Polynomial(c) => c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &ck| acc * z + ck),
            TestFunction::Resolvent { sigma } => 1.0 / (z + sigma),
            TestFunction::Exp { rate } => (z * rate).exp(),
        }
    }

    /// Points where the function fails to be analytic.
    pub fn singularities(&self) -> Vec<f64> {
        match self {
            TestFunction::Resolvent { sigma } => vec![-sigma],
            _ => Vec::new(),
        }
    }

    fn real_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        move |x| self.eval(x).unwrap_or(f64::NAN)
    }

    fn validate(&self, law: &MpLaw) -> Result<()> {
        for s in self.singularities() {
            if s >= law.mass_lower_edge() - 1e-12 && s <= law.b + 1e-12 {
                return Err(Error::InvalidArgument(format!("{self} is singular at {s}, inside the support")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            t if t.is_identity() => write!(f, "x"),
            TestFunction::Polynomial(c) => {
                let parts: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
                write!(f, "poly:{}", parts.join(","))
            }
            TestFunction::Resolvent { sigma } => write!(f, "resolvent:{sigma:?}"),
            TestFunction::Exp { rate } => write!(f, "exp:{rate:?}"),
        }
    }
}

fn parse_number(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("non-finite number {s:?}")))
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "x" {
            return Ok(Self::identity());
        }
        if s == "exp" {
            return Ok(TestFunction::Exp { rate: 1.0 });
        }
        if let Some(k) = s.strip_prefix("x^") {
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad exponent in {s:?}")))?;
            return Self::monomial(k);
        }
        let (head, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("unknown test function {s:?}")))?;
        match head.trim() {
            "poly" => {
                let coeffs = rest.split(',').map(parse_number).collect::<Result<Vec<_>>>()?;
                Self::polynomial(coeffs)
            }
            "resolvent" => {
                let sigma = parse_number(rest)?;
                if sigma == 0.0 {
                    return Err(Error::InvalidArgument("resolvent:0 is singular at 0".into()));
                }
                Ok(TestFunction::Resolvent { sigma })
            }
            "exp" => Ok(TestFunction::Exp { rate: parse_number(rest)? }),
            other => Err(Error::InvalidArgument(format!("unknown test function kind {other:?}"))),
        }
    }
}

impl TryFrom<String> for TestFunction {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TestFunction> for String {
    fn from(f: TestFunction) -> String {
        f.to_string()
    }
}

fn check_len<T: Field>(p: usize, x: &DVector<T>, y: &DVector<T>) -> Result<()> {
    if x.len() != p || y.len() != p {
        return Err(Error::DimensionMismatch(format!("vectors of length {}, {} for p = {p}", x.len(), y.len())));
    }
    Ok(())
}

/// `X_n(f) = √p (Σⱼ f(λⱼ)(x*uⱼ)(uⱼ*y) − (x*y) ∫f dF_{y_n})`.
pub fn x_n_f<T: Field>(
    decomp: &SpectralDecomposition<T>,
    f: &TestFunction,
    x: &DVector<T>,
    y: &DVector<T>,
    y_n: AspectRatio,
) -> Result<Complex64> {
    let mean = MpLaw::new(y_n).integrate(f.real_fn())?;
    centered(decomp.dim(), decomp.weighted_sum(f, x, y)?, x, y, mean)
}

fn centered<T: Field>(p: usize, value: Complex64, x: &DVector<T>, y: &DVector<T>, mean: f64) -> Result<Complex64> {
    let xy = x.dotc(y).to_c64();
    let out = (value - xy * mean) * (p as f64).sqrt();
    if out.re.is_finite() && out.im.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFiniteIntegrand(f64::NAN))
    }
}

/// `x* f(S) y` for a polynomial `f`, Horner on vectors with `S v = X(X*v)/n`.
pub fn poly_bilinear<T: Field>(data: &DMatrix<T>, coeffs: &[f64], x: &DVector<T>, y: &DVector<T>) -> Result<Complex64> {
    let (p, n) = data.shape();
    check_len(p, x, y)?;
    let inv_n = 1.0 / n as f64;
    let Some((&top, rest)) = coeffs.split_last() else {
        return Ok(Complex64::new(0.0, 0.0));
    };
    if coeffs.len() == 2 && coeffs[0] == 0.0 {
        let ax = data.ad_mul(x);
        let ay = data.ad_mul(y);
        return Ok(ax.dotc(&ay).to_c64() * (coeffs[1] * inv_n));
    }
    let mut v = y.map(|e| e.scale(top));
    for &c in rest.iter().rev() {
        let w = data.ad_mul(&v);
        let mut sv = data * w;
        sv.iter_mut().for_each(|e| *e = e.scale(inv_n));
        sv.axpy(T::from_real(c), y, T::one());
        v = sv;
    }
    Ok(x.dotc(&v).to_c64())
}

/// `X_n(f)` for polynomial `f` without an eigendecomposition.
pub fn x_n_poly<T: Field>(data: &DMatrix<T>, coeffs: &[f64], x: &DVector<T>, y: &DVector<T>) -> Result<Complex64> {
    let (p, n) = data.shape();
    let y_n = AspectRatio::from_dims(p, n)?;
    let poly = TestFunction::polynomial(coeffs.to_vec())?;
    let mean = MpLaw::new(y_n).integrate(poly.real_fn())?;
    centered(p, poly_bilinear(data, coeffs, x, y)?, x, y, mean)
}

/// Covariance predictions for a pair `(X_n(f,u), X_n(g,v))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LssPrediction {
    pub theta: f64,
    pub direct: f64,
    pub contour: Option<ContourEstimate>,
}

/// Whether every singularity of `f` lies outside both integration contours.
pub fn contour_admissible(f: &TestFunction, law: &MpLaw, spec: &ContourSpec) -> Result<bool> {
    let (inner, outer) = spec.rectangles(law)?;
    let left = inner.left.min(outer.left);
    let right = inner.right.max(outer.right);
    Ok(f.singularities().iter().all(|&s| s < left || s > right))
}

pub fn predict_lss(f: &TestFunction, g: &TestFunction, theta: f64, law: &MpLaw, spec: &ContourSpec) -> Result<LssPrediction> {
    f.validate(law)?;
    g.validate(law)?;
    let direct = lss_cov(f.real_fn(), g.real_fn(), theta, law)?;
    let contour = if contour_admissible(f, law, spec)? && contour_admissible(g, law, spec)? {
        Some(lss_cov_contour(|z| f.eval_complex(z), |z| g.eval_complex(z), theta, law, spec)?)
    } else {
        None
    };
    Ok(LssPrediction { theta, direct, contour })
}

/// Monte Carlo configuration for a pair of linear spectral statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LssPlan {
    pub p: usize,
    pub n: usize,
    pub law: EntryLaw,
    pub frame: FrameSpec,
    pub f: TestFunction,
    pub g: TestFunction,
    /// `u = (t₁, t₂)` for `X_n(f, u)`.
    pub u: (AngleTuple, AngleTuple),
    /// `v = (t₃, t₄)` for `X_n(g, v)`.
    pub v: (AngleTuple, AngleTuple),
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub contour: ContourSpec,
}

impl LssPlan {
    pub fn y_n(&self) -> Result<AspectRatio> {
        AspectRatio::from_dims(self.p, self.n)
    }

    pub fn case(&self) -> CovarianceCase {
        self.law.case()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::TooFewReplications(self.replications));
        }
        let law = MpLaw::new(self.y_n()?);
        self.f.validate(&law)?;
        self.g.validate(&law)?;
        let m = self.frame.m();
        if m + 1 > self.p {
            return Err(Error::InvalidArgument(format!("frame needs {} vectors but p = {}", m + 1, self.p)));
        }
        for t in [&self.u.0, &self.u.1, &self.v.0, &self.v.1] {
            if t.dim() != m {
                return Err(Error::DimensionMismatch(format!("angle tuple of dimension {} for m = {m}", t.dim())));
            }
        }
        Ok(())
    }

    fn uses_eigen(&self) -> bool {
        self.f.coefficients().is_none() || self.g.coefficients().is_none()
    }
}

fn run_lss<T: Field>(plan: &LssPlan, workers: usize) -> Result<StatisticArray> {
    let frame = plan.frame.build::<T>(plan.p)?;
    let x_u = (sphere_point(&frame, &plan.u.0)?, sphere_point(&frame, &plan.u.1)?);
    let x_v = (sphere_point(&frame, &plan.v.0)?, sphere_point(&frame, &plan.v.1)?);
    let law = MpLaw::new(plan.y_n()?);
    let mean_f = law.integrate(plan.f.real_fn())?;
    let mean_g = law.integrate(plan.g.real_fn())?;
    let eig = plan.uses_eigen();
    run_with(plan.replications, 2, workers, |rep, row| {
        let data = sample_matrix::<T>(&plan.law, plan.p, plan.n, plan.master_seed, rep)?;
        let stat = |f: &TestFunction, (a, b): &(DVector<T>, DVector<T>), mean: f64, decomp: Option<&SpectralDecomposition<T>>| {
            let value = match (decomp, f.coefficients()) {
                (Some(d), _) => d.weighted_sum(f, a, b)?,
                (None, Some(c)) => poly_bilinear(&data, c, a, b)?,
                (None, None) => unreachable!("non-polynomial functions always use the eigen path"),
            };
            centered(plan.p, value, a, b, mean)
        };
        let decomp = if eig { Some(eigen(&SampleCovariance::from_data(&data))?) } else { None };
        row[0] = stat(&plan.f, &x_u, mean_f, decomp.as_ref())?;
        row[1] = stat(&plan.g, &x_v, mean_g, decomp.as_ref())?;
        Ok(())
    })
}

/// Raw statistics, moments and the comparison for one LSS plan.
#[derive(Debug, Clone, PartialEq)]
pub struct LssOutcome {
    pub samples: StatisticArray,
    pub moments: EmpiricalMoments,
    pub report: ComparisonReport,
    /// Predictions for entries `(0,0)`, `(0,1)`, `(1,1)` of the product moment.
    pub predictions: Vec<LssPrediction>,
}

pub const LABEL_DIRECT: &str = "direct";
pub const LABEL_CONTOUR: &str = "contour";

/// Simulates `(X_n(f,u), X_n(g,v))` and compares its covariance with the
/// direct MP-integral and contour predictions at `y_n`.
pub fn lss_experiment(plan: &LssPlan, workers: usize) -> Result<LssOutcome> {
    plan.validate()?;
    let law = MpLaw::new(plan.y_n()?);
    let case = plan.case();
    let complex = case == CovarianceCase::Complex;
    let funcs = [&plan.f, &plan.g];
    let pairs = [&plan.u, &plan.v];
    let swap = |p: &(AngleTuple, AngleTuple)| (p.1.clone(), p.0.clone());
    let mut table = Vec::new();
    for kind in [MomentKind::Product, MomentKind::Conjugate] {
        for i in 0..2 {
            for j in i..2 {
                let second = match kind {
                    MomentKind::Product => pairs[j].clone(),
                    MomentKind::Conjugate => swap(pairs[j]),
                };
                let theta = theta_multiplier((&pairs[i].0, &pairs[i].1), (&second.0, &second.1), case)?;
                table.push(((i, j, kind), predict_lss(funcs[i], funcs[j], theta, &law, &plan.contour)?));
            }
        }
    }
    let has_contour = table.iter().all(|(_, p)| p.contour.is_some());
    let mut labels = vec![LABEL_DIRECT.to_string()];
    if has_contour {
        labels.push(LABEL_CONTOUR.to_string());
    }
    let samples = match case {
        CovarianceCase::Real => run_lss::<f64>(plan, workers)?,
        CovarianceCase::Complex => run_lss::<Complex64>(plan, workers)?,
    };
    let moments = empirical_cov(&samples)?;
    let mut report = compare_moments(&moments, law.ratio(), complex, &labels, |i, j, kind| {
        let (_, pred) = table.iter().find(|(key, _)| *key == (i, j, kind)).expect("all entries predicted");
        let mut out = vec![Complex64::new(pred.direct, 0.0)];
        if let Some(c) = &pred.contour {
            out.push(Complex64::new(c.value, 0.0));
        }
        Ok(out)
    })?;
    report.add_gaussianity(&samples)?;
    let predictions = table.into_iter().filter(|((_, _, k), _)| *k == MomentKind::Product).map(|(_, p)| p).collect();
    Ok(LssOutcome { samples, moments, report, predictions })
}
