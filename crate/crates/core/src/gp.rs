//! Exact finite-grid sampler of the limiting Gaussian process.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{CovarianceCase, KernelForm};
use crate::montecarlo::{predicted_moment, MomentKind, StatisticArray};
use crate::mp::{AspectRatio, MpLaw};
use crate::resolvent::{GridPoint, GridSpec};
use crate::rng::{substream, Purpose};

pub const JITTER_START: f64 = 1e-12;
pub const JITTER_CAP: f64 = 1e-6;
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Covariance of the limit process on a grid, with its Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridKernelMatrix {
    pub points: Vec<GridPoint>,
    pub case: CovarianceCase,
    pub form: KernelForm,
    pub y: AspectRatio,
    pub matrix: DMatrix<f64>,
    /// Smallest eigenvalue before any jitter.
    pub min_eigenvalue: f64,
    /// Diagonal shift that made the factorization succeed; `None` if it never did.
    pub jitter: Option<f64>,
    /// Lower-triangular `L` with `LLᵀ = matrix + jitter·I` on the coordinates
    /// of nonzero variance; rows of zero-variance coordinates are zero.
    pub factor: Option<DMatrix<f64>>,
}

impl GridKernelMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue >= -PSD_TOLERANCE
    }
}

/// Kernel matrix `K_ij = cov_process(θ's, W(σᵢ, σⱼ), case)` for real shifts.
///
/// In the complex case the entries are the moments `E YᵢYⱼ`, which form a
/// covariance matrix when every statistic is real-valued (`t₁ = t₂`).
pub fn build_kernel_matrix(grid: &GridSpec, case: CovarianceCase, y: AspectRatio, form: KernelForm) -> Result<GridKernelMatrix> {
    if grid.has_complex_shift() {
        return Err(Error::InvalidShift("the limit process is sampled for real σ only".into()));
    }
    let law = MpLaw::new(y);
    grid.validate(&law)?;
    let points = grid.points();
    let k = points.len();
    let mut matrix = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = predicted_moment(&points[i], &points[j], MomentKind::Product, case, &law, form)?.re;
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    let min_eigenvalue = matrix.clone().symmetric_eigenvalues().min();
    let (jitter, factor) = match factorize(&matrix) {
        Some((d, l)) => (Some(d), Some(l)),
        None => (None, None),
    };
    Ok(GridKernelMatrix { points, case, form, y, matrix, min_eigenvalue, jitter, factor })
}

fn factorize(matrix: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
    let k = matrix.nrows();
    let active: Vec<usize> = (0..k).filter(|&i| matrix[(i, i)] != 0.0).collect();
    let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| matrix[(active[i], active[j])]);
    let mut delta = 0.0;
    loop {
        let shifted = &sub + DMatrix::identity(active.len(), active.len()) * delta;
        if let Some(ch) = shifted.cholesky() {
            let l = ch.l();
            let mut full = DMatrix::zeros(k, k);
            for (a, &i) in active.iter().enumerate() {
                for (b, &j) in active.iter().enumerate() {
                    full[(i, j)] = l[(a, b)];
                }
            }
            return Some((delta, full));
        }
        delta = if delta == 0.0 { JITTER_START } else { delta * 2.0 };
        if delta > JITTER_CAP {
            return None;
        }
    }
}

/// `count × K` i.i.d. rows `N(0, K)`; row `r` draws from its own substream.
pub fn sample_paths(km: &GridKernelMatrix, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let l = km.factor.as_ref().ok_or_else(|| {
        Error::Factorization(format!(
            "kernel matrix not factorizable with jitter up to {JITTER_CAP:e} (min eigenvalue {:e})",
            km.min_eigenvalue
        ))
    })?;
    let k = km.dim();
    let mut out = DMatrix::zeros(count, k);
    for r in 0..count {
        let mut rng = substream(seed, Purpose::Paths, r as u64, 0);
        let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let row = l * z;
        for (j, v) in row.iter().enumerate() {
            out[(r, j)] = *v;
        }
    }
    Ok(out)
}

/// Paths packaged for [`crate::montecarlo::empirical_cov`].
pub fn paths_as_statistics(paths: &DMatrix<f64>) -> StatisticArray {
    let rows: Vec<Vec<f64>> = paths.row_iter().map(|r| r.iter().copied().collect()).collect();
    StatisticArray::from_real_rows(&rows).expect("rectangular by construction")
}

/// Minimum eigenvalue of one kernel form's matrix on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdDiagnostic {
    pub form: KernelForm,
    pub min_eigenvalue: Option<f64>,
    pub psd: bool,
    pub error: Option<String>,
}

/// PSD check of every kernel form on `grid`. Reported, never asserted.
pub fn psd_diagnostics(grid: &GridSpec, case: CovarianceCase, y: AspectRatio) -> Vec<PsdDiagnostic> {
    KernelForm::ALL
        .iter()
        .map(|&form| match build_kernel_matrix(grid, case, y, form) {
            Ok(km) => PsdDiagnostic { form, min_eigenvalue: Some(km.min_eigenvalue), psd: km.is_psd(), error: None },
            Err(e) => PsdDiagnostic { form, min_eigenvalue: None, psd: false, error: Some(e.to_string()) },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{w_sigma, AngleTuple};
    use crate::montecarlo::empirical_cov;
    use crate::mp::SpectralShift;
    use proptest::prelude::*;

    fn grid(pairs: Vec<(f64, f64)>, sigmas: Vec<f64>) -> GridSpec {
        GridSpec {
            pairs: pairs.into_iter().map(|(a, b)| (AngleTuple(vec![a]), AngleTuple(vec![b]))).collect(),
            shifts: sigmas.into_iter().map(SpectralShift::Sigma).collect(),
        }
    }

    fn y(v: f64) -> AspectRatio {
        AspectRatio::new(v).unwrap()
    }

    #[test]
    fn single_point_variances() {
        let g = grid(vec![(0.0, 0.0)], vec![1.0]);
        let law = MpLaw::new(y(0.5));
        let w = w_sigma(1.0, 1.0, &law, KernelForm::DividedDifference).unwrap();
        let c = build_kernel_matrix(&g, CovarianceCase::Complex, y(0.5), KernelForm::DividedDifference).unwrap();
        assert!((c.matrix[(0, 0)] - w).abs() < 1e-15);
        let r = build_kernel_matrix(&g, CovarianceCase::Real, y(0.5), KernelForm::DividedDifference).unwrap();
        assert!((r.matrix[(0, 0)] - 2.0 * w).abs() < 1e-15);
        assert_eq!(r.jitter, Some(0.0));
    }

    #[test]
    fn complex_shift_rejected() {
        let mut g = grid(vec![(0.0, 0.0)], vec![1.0]);
        g.shifts.push(SpectralShift::Z(num_complex::Complex64::new(2.5, 0.5)));
        assert!(build_kernel_matrix(&g, CovarianceCase::Real, y(0.5), KernelForm::DividedDifference).is_err());
    }

    #[test]
    fn duplicate_points_handled() {
        let g = grid(vec![(0.3, 0.3), (0.3, 0.3)], vec![1.0]);
        let km = build_kernel_matrix(&g, CovarianceCase::Real, y(0.5), KernelForm::DividedDifference).unwrap();
        assert!(km.jitter.unwrap() <= JITTER_CAP);
        let paths = sample_paths(&km, 100, 1).unwrap();
        for r in 0..100 {
            assert!((paths[(r, 0)] - paths[(r, 1)]).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_matrix_gives_zero_paths() {
        // θ(t₁,t₄)θ(t₃,t₂) + θ(t₁,t₃)θ(t₄,t₂) vanishes for the complex case at (0, π/2).
        let g = grid(vec![(0.0, std::f64::consts::FRAC_PI_2)], vec![1.0]);
        let mut km = build_kernel_matrix(&g, CovarianceCase::Complex, y(0.5), KernelForm::DividedDifference).unwrap();
        km.matrix.fill(0.0);
        km.factor = factorize(&km.matrix).map(|(_, l)| l);
        let paths = sample_paths(&km, 10, 2).unwrap();
        assert!(paths.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_variance_within_se() {
        let g = grid(vec![(0.0, 0.0)], vec![0.7]);
        let km = build_kernel_matrix(&g, CovarianceCase::Real, y(0.5), KernelForm::DividedDifference).unwrap();
        let paths = sample_paths(&km, 10_000, 3).unwrap();
        let emp = empirical_cov(&paths_as_statistics(&paths)).unwrap();
        let z = (emp.product[(0, 0)].re - km.matrix[(0, 0)]) / emp.product_se[(0, 0)].re;
        assert!(z.abs() < 5.0, "z = {z}");
    }

    #[test]
    fn deterministic_per_seed() {
        let g = grid(vec![(0.0, 0.0), (0.0, 1.0)], vec![0.5, 2.0]);
        let km = build_kernel_matrix(&g, CovarianceCase::Real, y(1.0), KernelForm::DividedDifference).unwrap();
        assert_eq!(sample_paths(&km, 50, 9).unwrap(), sample_paths(&km, 50, 9).unwrap());
        assert_ne!(sample_paths(&km, 50, 9).unwrap(), sample_paths(&km, 50, 10).unwrap());
    }

    #[test]
    fn diagnostics_cover_all_forms() {
        let g = grid(vec![(0.0, 0.0), (0.4, 1.1)], vec![0.5, 1.0, 4.0]);
        let d = psd_diagnostics(&g, CovarianceCase::Real, y(0.5));
        assert_eq!(d.len(), KernelForm::ALL.len());
        let dd = d.iter().find(|x| x.form == KernelForm::DividedDifference).unwrap();
        assert!(dd.psd);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn divided_difference_is_psd(
            pairs in prop::collection::vec((0.0f64..3.2, 0.0f64..3.2), 1..5),
            sigmas in prop::collection::vec(0.05f64..10.0, 1..6),
            yv in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0]),
            real in any::<bool>(),
        ) {
            // Complex-case statistics are real-valued only on the diagonal t₁ = t₂.
            let pairs = if real { pairs } else { pairs.into_iter().map(|(a, _)| (a, a)).collect() };
            let g = grid(pairs, sigmas);
            let case = if real { CovarianceCase::Real } else { CovarianceCase::Complex };
            let km = build_kernel_matrix(&g, case, y(yv), KernelForm::DividedDifference).unwrap();
            prop_assert!(km.min_eigenvalue >= -PSD_TOLERANCE, "{}", km.min_eigenvalue);
            prop_assert!(km.matrix.iter().all(|v| v.is_finite()));
        }
    }
}
