//! Resolvent bilinear forms `x*(S + σI)⁻¹y`, `x*(S − zI)⁻¹y` and the
//! normalized statistics `Y_n(t₁, t₂, σ)` / `Y_n(u, z)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sphere_point, Field, SampleCovariance, SphereFrame};
use crate::error::{Error, Result};
use crate::kernels::{theta, AngleTuple};
use crate::mp::{MpLaw, SpectralShift};

/// Minimum distance between a complex shift and the spectrum of `S`.
pub const SPECTRUM_GAP: f64 = 1e-8;

enum Factor<T: Field> {
    Cholesky(Cholesky<T, Dyn>),
    Lu(LU<Complex64, Dyn, Dyn>),
}

/// A factorization of `S + σI` (Cholesky) or `S − zI` (LU), reusable for
/// any number of bilinear forms.
pub struct Resolvent<T: Field> {
    shift: SpectralShift,
    factor: Factor<T>,
}

fn check_finite<T: Field>(s: &DMatrix<T>) -> Result<()> {
    if s.iter().all(|v| {
        let c = v.to_c64();
        c.re.is_finite() && c.im.is_finite()
    }) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("non-finite entry in S".into()))
    }
}

/// Distance from `z` to the interval `[lo, hi]` of the real line.
fn distance_to_interval(z: Complex64, lo: f64, hi: f64) -> f64 {
    let dx = if z.re < lo {
        lo - z.re
    } else if z.re > hi {
        z.re - hi
    } else {
        0.0
    };
    dx.hypot(z.im)
}

fn spectral_hull<T: Field>(s: &DMatrix<T>, z: Complex64) -> (f64, f64) {
    // Gershgorin first; only pay for eigenvalues when z is inside the disc hull.
    let p = s.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..p {
        let radius: f64 = (0..p).filter(|&j| j != i).map(|j| s[(i, j)].to_c64().norm()).sum();
        let d = s[(i, i)].to_c64().re;
        lo = lo.min(d - radius);
        hi = hi.max(d + radius);
    }
    if distance_to_interval(z, lo, hi) >= SPECTRUM_GAP {
        return (lo, hi);
    }
    let eig = s.clone().symmetric_eigenvalues();
    (eig.min(), eig.max())
}

impl<T: Field> Resolvent<T> {
    pub fn new(cov: &SampleCovariance<T>, shift: SpectralShift) -> Result<Self> {
        check_finite(&cov.s)?;
        let factor = match shift {
            SpectralShift::Sigma(sigma) => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::InvalidShift(format!("σ = {sigma} must be positive")));
                }
                let mut a = cov.s.clone();
                for i in 0..cov.p {
                    a[(i, i)] += T::from_real(sigma);
                }
                let chol = Cholesky::new(a)
                    .ok_or_else(|| Error::Factorization(format!("S + {sigma}I is not positive definite")))?;
                Factor::Cholesky(chol)
            }
            SpectralShift::Z(z) => {
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::InvalidShift(format!("non-finite z = {z}")));
                }
                let (lo, hi) = spectral_hull(&cov.s, z);
                if distance_to_interval(z, lo, hi) < SPECTRUM_GAP {
                    return Err(Error::InvalidShift(format!(
                        "z = {z} is within {SPECTRUM_GAP:e} of the spectrum [{lo}, {hi}]"
                    )));
                }
                let mut a = cov.s.map(|v| v.to_c64());
                for i in 0..cov.p {
                    a[(i, i)] -= z;
                }
                Factor::Lu(a.lu())
            }
        };
        Ok(Self { shift, factor })
    }

    pub fn shift(&self) -> SpectralShift {
        self.shift
    }

    /// `A⁻¹ y` as a complex vector.
    pub fn solve(&self, y: &DVector<T>) -> Result<DVector<Complex64>> {
        match &self.factor {
            Factor::Cholesky(c) => Ok(c.solve(y).map(|v| v.to_c64())),
            Factor::Lu(lu) => lu
                .solve(&y.map(|v| v.to_c64()))
                .ok_or_else(|| Error::Factorization("singular shifted matrix".into())),
        }
    }

    /// `x* A⁻¹ y`.
    pub fn bilinear(&self, x: &DVector<T>, y: &DVector<T>) -> Result<Complex64> {
        let sol = self.solve(y)?;
        Ok(dotc(x, &sol))
    }
}

fn dotc<T: Field>(x: &DVector<T>, v: &DVector<Complex64>) -> Complex64 {
    x.iter().zip(v.iter()).map(|(a, b)| a.to_c64().conj() * b).sum()
}

/// `x*(S + σI)⁻¹y`.
pub fn bilinear_sigma<T: Field>(cov: &SampleCovariance<T>, x: &DVector<T>, y: &DVector<T>, sigma: f64) -> Result<Complex64> {
    Resolvent::new(cov, SpectralShift::Sigma(sigma))?.bilinear(x, y)
}

/// `x*(S − zI)⁻¹y`.
pub fn bilinear_z<T: Field>(cov: &SampleCovariance<T>, x: &DVector<T>, y: &DVector<T>, z: Complex64) -> Result<Complex64> {
    Resolvent::new(cov, SpectralShift::Z(z))?.bilinear(x, y)
}

/// One evaluation of `Y_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventStatistic {
    pub t1: AngleTuple,
    pub t2: AngleTuple,
    pub shift: SpectralShift,
    /// The bilinear form `x(t₁)*(S − zI)⁻¹x(t₂)`.
    pub raw: Complex64,
    /// `√p (raw − ϑ(t₁,t₂) m_n)`.
    pub centered: Complex64,
    pub y_n: f64,
}

/// A single grid point `(t₁, t₂, shift)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub t1: AngleTuple,
    pub t2: AngleTuple,
    pub shift: SpectralShift,
}

/// Product grid of angle pairs and shifts, enumerated shift-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub pairs: Vec<(AngleTuple, AngleTuple)>,
    pub shifts: Vec<SpectralShift>,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.pairs.len() * self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point `k = shift_index · pairs + pair_index`.
    pub fn points(&self) -> Vec<GridPoint> {
        self.shifts
            .iter()
            .flat_map(|&shift| {
                self.pairs.iter().map(move |(t1, t2)| GridPoint { t1: t1.clone(), t2: t2.clone(), shift })
            })
            .collect()
    }

    /// Angle dimension `m` shared by every tuple.
    pub fn angle_dim(&self) -> Option<usize> {
        self.pairs.first().map(|(t, _)| t.dim())
    }

    pub fn has_complex_shift(&self) -> bool {
        self.shifts.iter().any(|s| !s.is_real_sigma())
    }

    pub fn validate(&self, law: &MpLaw) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty grid".into()));
        }
        let m = self.angle_dim().expect("non-empty");
        for (t1, t2) in &self.pairs {
            if t1.dim() != m || t2.dim() != m {
                return Err(Error::DimensionMismatch("angle tuples of different lengths in grid".into()));
            }
        }
        for &s in &self.shifts {
            law.validate_shift(s)?;
        }
        Ok(())
    }
}

fn centering<T: Field>(cov: &SampleCovariance<T>, shift: SpectralShift) -> Result<(MpLaw, Complex64)> {
    let law = MpLaw::new(cov.y_n());
    let m = law.s(shift)?;
    Ok((law, m))
}

/// `Y_n(t₁, t₂, shift)` with centering `m_n` at `y_n = p/n`.
pub fn y_stat<T: Field>(
    cov: &SampleCovariance<T>,
    frame: &SphereFrame<T>,
    t1: &AngleTuple,
    t2: &AngleTuple,
    shift: SpectralShift,
) -> Result<ResolventStatistic> {
    let grid = GridSpec { pairs: vec![(t1.clone(), t2.clone())], shifts: vec![shift] };
    Ok(process_on_grid(cov, frame, &grid)?.remove(0))
}

/// Evaluates `Y_n` on every grid point; one factorization per shift.
pub fn process_on_grid<T: Field>(
    cov: &SampleCovariance<T>,
    frame: &SphereFrame<T>,
    grid: &GridSpec,
) -> Result<Vec<ResolventStatistic>> {
    if frame.p() != cov.p {
        return Err(Error::DimensionMismatch(format!("frame in dimension {} for p = {}", frame.p(), cov.p)));
    }
    let sqrt_p = (cov.p as f64).sqrt();
    let y_n = cov.y_n().get();
    let mut lefts = Vec::with_capacity(grid.pairs.len());
    let mut rights = Vec::with_capacity(grid.pairs.len());
    let mut thetas = Vec::with_capacity(grid.pairs.len());
    for (t1, t2) in &grid.pairs {
        lefts.push(sphere_point(frame, t1)?);
        rights.push(sphere_point(frame, t2)?);
        thetas.push(theta(t1, t2)?.0);
    }
    let mut out = Vec::with_capacity(grid.len());
    for &shift in &grid.shifts {
        let (law, m_n) = centering(cov, shift)?;
        law.validate_shift(shift)?;
        let res = Resolvent::new(cov, shift)?;
        let mut solved: Vec<Option<DVector<Complex64>>> = vec![None; grid.pairs.len()];
        for (k, (t1, t2)) in grid.pairs.iter().enumerate() {
            // Reuse the solve for repeated right-hand angles.
            let reuse = grid.pairs[..k].iter().position(|(_, prev)| prev == t2);
            let sol = match reuse.and_then(|j| solved[j].clone()) {
                Some(v) => v,
                None => res.solve(&rights[k])?,
            };
            let raw = dotc(&lefts[k], &sol);
            solved[k] = Some(sol);
            out.push(ResolventStatistic {
                t1: t1.clone(),
                t2: t2.clone(),
                shift,
                raw,
                centered: (raw - m_n * thetas[k]) * sqrt_p,
                y_n,
            });
        }
    }
    Ok(out)
}

/// The normalized triple `√p(x*Ax − m_n, x*Ay, y*Ay − m_n)`, `A = (S + σI)⁻¹`.
pub fn three_quantities<T: Field>(
    cov: &SampleCovariance<T>,
    x: &DVector<T>,
    y: &DVector<T>,
    sigma: f64,
) -> Result<(f64, Complex64, f64)> {
    if x.len() != cov.p || y.len() != cov.p {
        return Err(Error::DimensionMismatch("vectors do not match S".into()));
    }
    if x.dotc(y).to_c64().norm() > 1e-12 {
        return Err(Error::InvalidArgument("x and y must be orthogonal".into()));
    }
    let shift = SpectralShift::Sigma(sigma);
    let res = Resolvent::new(cov, shift)?;
    let (_, m_n) = centering(cov, shift)?;
    let sqrt_p = (cov.p as f64).sqrt();
    let ay = res.solve(y)?;
    let ax = res.solve(x)?;
    let xx = dotc(x, &ax);
    let xy = dotc(x, &ay);
    let yy = dotc(y, &ay);
    Ok(((xx.re - m_n.re) * sqrt_p, xy * sqrt_p, (yy.re - m_n.re) * sqrt_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{random_frame, sample_cov, sample_matrix, EntryLaw};

    fn gaussian_cov(p: usize, n: usize, seed: u64) -> SampleCovariance<f64> {
        sample_cov(&sample_matrix::<f64>(&EntryLaw::RealGaussian, p, n, seed, 0).unwrap())
    }

    fn unit(p: usize, k: usize) -> DVector<f64> {
        DVector::from_fn(p, |i, _| if i == k { 1.0 } else { 0.0 })
    }

    #[test]
    fn identity_matrix() {
        let cov = SampleCovariance::from_matrix(DMatrix::<f64>::identity(4, 4), 4).unwrap();
        let x = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let y = DVector::from_vec(vec![0.5, -0.5, 0.5, 0.5]);
        let v = bilinear_sigma(&cov, &x, &y, 2.0).unwrap();
        assert!((v.re - 0.5 / 3.0).abs() < 1e-15 && v.im == 0.0);
        let z = Complex64::new(2.0, 1.0);
        let w = bilinear_z(&cov, &x, &y, z).unwrap();
        assert!((w - 0.5 / (1.0 - z)).norm() < 1e-15);
    }

    #[test]
    fn large_sigma_limit() {
        let cov = gaussian_cov(20, 40, 1);
        let x = DVector::from_fn(20, |i, _| (i as f64 + 1.0).sin()).normalize();
        let y = DVector::from_fn(20, |i, _| (i as f64 + 1.0).cos()).normalize();
        let v = bilinear_sigma(&cov, &x, &y, 1e6).unwrap() * 1e6;
        assert!((v.re - x.dot(&y)).abs() < 1e-4);
    }

    #[test]
    fn diagonal_disjoint_supports() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let cov = SampleCovariance::from_matrix(s, 8).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 0.6, 0.8]);
        assert_eq!(bilinear_sigma(&cov, &x, &y, 0.5).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn sigma_errors() {
        let cov = gaussian_cov(5, 10, 1);
        let x = unit(5, 0);
        assert!(bilinear_sigma(&cov, &x, &x, 0.0).is_err());
        assert!(bilinear_sigma(&cov, &x, &x, -1.0).is_err());
        let mut bad = cov.s.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(SampleCovariance::from_matrix(bad, 10).is_err());
    }

    #[test]
    fn z_path_agrees_with_sigma_path() {
        let cov = gaussian_cov(30, 60, 2);
        let x = DVector::from_fn(30, |i, _| (i as f64).sin()).normalize();
        let y = DVector::from_fn(30, |i, _| (i as f64 * 0.3).cos()).normalize();
        let a = bilinear_sigma(&cov, &x, &y, 0.7).unwrap();
        let b = bilinear_z(&cov, &x, &y, Complex64::new(-0.7, 0.0)).unwrap();
        assert!((a - b).norm() < 1e-12);
        let z = Complex64::new(2.0, 1.0);
        let c = bilinear_z(&cov, &x, &x, z).unwrap();
        let d = bilinear_z(&cov, &x, &x, z.conj()).unwrap();
        assert!((c - d.conj()).norm() < 1e-12);
    }

    #[test]
    fn z_on_spectrum_rejected() {
        let cov = gaussian_cov(30, 60, 2);
        let x = unit(30, 0);
        assert!(bilinear_z(&cov, &x, &x, Complex64::new(1.0, 0.0)).is_err());
        assert!(bilinear_z(&cov, &x, &x, Complex64::new(1.0, 1e-10)).is_err());
        assert!(bilinear_z(&cov, &x, &x, Complex64::new(1.0, 1e-3)).is_ok());
        assert!(bilinear_z(&cov, &x, &x, Complex64::new(-1.0, 0.0)).is_ok());
    }

    #[test]
    fn factorization_reuse_matches_naive_solve() {
        let cov = gaussian_cov(25, 50, 3);
        let res = Resolvent::new(&cov, SpectralShift::Sigma(0.4)).unwrap();
        let mut a = cov.s.clone();
        for i in 0..25 {
            a[(i, i)] += 0.4;
        }
        let inv = a.try_inverse().unwrap();
        for k in 0..5 {
            let x = DVector::from_fn(25, |i, _| ((i + k) as f64).sin());
            let y = DVector::from_fn(25, |i, _| ((i * k) as f64).cos());
            let naive = x.dot(&(&inv * &y));
            assert!((res.bilinear(&x, &y).unwrap().re - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn first_resolvent_identity() {
        let cov = gaussian_cov(25, 40, 4);
        let x = DVector::from_fn(25, |i, _| (i as f64).sin()).normalize();
        let y = DVector::from_fn(25, |i, _| (i as f64 * 0.7).cos()).normalize();
        let (s1, s2) = (0.3, 1.7);
        let r1 = Resolvent::new(&cov, SpectralShift::Sigma(s1)).unwrap();
        let r2 = Resolvent::new(&cov, SpectralShift::Sigma(s2)).unwrap();
        let lhs = r1.bilinear(&x, &y).unwrap() - r2.bilinear(&x, &y).unwrap();
        let r2y = r2.solve(&y).unwrap().map(|v| v.re);
        let rhs = r1.bilinear(&x, &r2y).unwrap() * (s2 - s1);
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn real_inputs_give_real_outputs() {
        let cov = gaussian_cov(20, 30, 5);
        let frame = random_frame::<f64>(20, 1, 1).unwrap();
        let grid = GridSpec {
            pairs: vec![
                (AngleTuple(vec![0.0]), AngleTuple(vec![1.0])),
                (AngleTuple(vec![2.0]), AngleTuple(vec![0.5])),
            ],
            shifts: vec![SpectralShift::Sigma(0.5), SpectralShift::Sigma(2.0)],
        };
        for st in process_on_grid(&cov, &frame, &grid).unwrap() {
            assert!(st.raw.im.abs() < 1e-12 && st.centered.im.abs() < 1e-12);
        }
    }

    #[test]
    fn y_stat_examples() {
        let cov = gaussian_cov(20, 40, 6);
        let frame = random_frame::<f64>(20, 1, 2).unwrap();
        let t = AngleTuple(vec![0.8]);
        let st = y_stat(&cov, &frame, &t, &t, SpectralShift::Sigma(1.0)).unwrap();
        let x = sphere_point(&frame, &t).unwrap();
        let m_n = MpLaw::with_ratio(0.5).unwrap().m(1.0).unwrap();
        let direct = (bilinear_sigma(&cov, &x, &x, 1.0).unwrap().re - m_n) * 20f64.sqrt();
        assert!((st.centered.re - direct).abs() < 1e-12);
        assert_eq!(st.y_n, 0.5);

        // p = n = 1.
        let cov1 = SampleCovariance::from_matrix(DMatrix::from_element(1, 1, 2.5), 1).unwrap();
        let f1 = SphereFrame::<f64>::canonical(1, 0).unwrap();
        let e = AngleTuple(vec![]);
        let st = y_stat(&cov1, &f1, &e, &e, SpectralShift::Sigma(1.0)).unwrap();
        let m1 = MpLaw::with_ratio(1.0).unwrap().m(1.0).unwrap();
        assert!((st.centered.re - (1.0 / 3.5 - m1)).abs() < 1e-15);
    }

    #[test]
    fn grid_properties() {
        let x = sample_matrix::<Complex64>(&EntryLaw::ComplexGaussian, 15, 30, 7, 0).unwrap();
        let cov = sample_cov(&x);
        let frame = random_frame::<Complex64>(15, 1, 3).unwrap();
        let a = AngleTuple(vec![0.3]);
        let b = AngleTuple(vec![1.4]);
        let grid = GridSpec {
            pairs: vec![(a.clone(), b.clone()), (b.clone(), a.clone()), (a.clone(), b.clone())],
            shifts: vec![SpectralShift::Sigma(0.8), SpectralShift::Z(Complex64::new(3.0, 0.5))],
        };
        let out = process_on_grid(&cov, &frame, &grid).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out[0].raw, out[2].raw);
        assert!((out[0].raw - out[1].raw.conj()).norm() < 1e-12);
        let single = y_stat(&cov, &frame, &b, &a, SpectralShift::Z(Complex64::new(3.0, 0.5))).unwrap();
        assert!((single.raw - out[4].raw).norm() < 1e-14);
    }

    #[test]
    fn three_quantities_examples() {
        let p = 6;
        let cov = SampleCovariance::from_matrix(DMatrix::<f64>::identity(p, p), 12).unwrap();
        let (x, y) = (unit(p, 0), unit(p, 1));
        let (a, b, c) = three_quantities(&cov, &x, &y, 1.0).unwrap();
        let m_n = MpLaw::with_ratio(0.5).unwrap().m(1.0).unwrap();
        let expect = (p as f64).sqrt() * (0.5 - m_n);
        assert!((a - expect).abs() < 1e-14 && (c - expect).abs() < 1e-14);
        assert_eq!(b.norm(), 0.0);
        assert!(three_quantities(&cov, &x, &x, 1.0).is_err());
    }
}
