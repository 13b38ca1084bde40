//! Seeded replication engine and empirical-vs-predicted covariance
//! comparison.
//!
//! Row `r` of every statistic array is computed from the substreams of
//! replication `r` only, so output is bit-identical for any worker count.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ensembles::{random_frame, sample_cov, sample_matrix, EntryLaw, Field, SphereFrame};
use crate::error::{Error, Result};
use crate::kernels::{cov_process, theta, w_shift, CovarianceCase, KernelForm};
use crate::mp::{AspectRatio, MpLaw};
use crate::resolvent::{process_on_grid, GridPoint, GridSpec};

/// How the orthonormal vectors `x₁..x_{m+1}` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrameSpec {
    /// First `m + 1` standard basis vectors.
    Canonical { m: usize },
    /// QR-orthonormalized Gaussian vectors, fixed across replications.
    Random { m: usize, seed: u64 },
}

impl FrameSpec {
    pub fn m(&self) -> usize {
        match *self {
            FrameSpec::Canonical { m } | FrameSpec::Random { m, .. } => m,
        }
    }

    pub fn build<T: Field>(&self, p: usize) -> Result<SphereFrame<T>> {
        match *self {
            FrameSpec::Canonical { m } => SphereFrame::canonical(p, m),
            FrameSpec::Random { m, seed } => random_frame(p, m, seed),
        }
    }
}

/// A seeded Monte Carlo configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub p: usize,
    pub n: usize,
    pub law: EntryLaw,
    pub frame: FrameSpec,
    pub grid: GridSpec,
    pub replications: usize,
    pub master_seed: u64,
}

impl ExperimentPlan {
    pub fn case(&self) -> CovarianceCase {
        self.law.case()
    }

    pub fn y_n(&self) -> Result<AspectRatio> {
        AspectRatio::from_dims(self.p, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::TooFewReplications(self.replications));
        }
        let law = MpLaw::new(self.y_n()?);
        if self.frame.m() + 1 > self.p {
            return Err(Error::InvalidArgument(format!(
                "frame needs {} vectors but p = {}",
                self.frame.m() + 1,
                self.p
            )));
        }
        self.grid.validate(&law)?;
        if self.grid.angle_dim() != Some(self.frame.m()) {
            return Err(Error::DimensionMismatch(format!(
                "grid angles have dimension {:?}, frame has m = {}",
                self.grid.angle_dim(),
                self.frame.m()
            )));
        }
        Ok(())
    }

    /// Whether the statistics can carry an imaginary part.
    pub fn is_complex_valued(&self) -> bool {
        self.case() == CovarianceCase::Complex || self.grid.has_complex_shift()
    }
}

/// `R × K` array of statistics, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl StatisticArray {
    pub fn get(&self, r: usize, k: usize) -> Complex64 {
        self.data[r * self.cols + k]
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, k: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self.get(r, k)).collect()
    }

    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch("columns of different lengths".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(columns.iter().map(|c| c[r]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("rows of different lengths".into()));
        }
        let data = rows.iter().flatten().map(|&v| Complex64::new(v, 0.0)).collect();
        Ok(Self { rows: rows.len(), cols, data })
    }
}

/// Runs `fill(replication, row)` for every replication on a pool of
/// `workers` threads.
pub fn run_with<F>(rows: usize, cols: usize, workers: usize, fill: F) -> Result<StatisticArray>
where
    F: Fn(u64, &mut [Complex64]) -> Result<()> + Sync,
{
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::ResourceExhausted(format!("{rows} × {cols} statistics overflow")))?;
    let mut data: Vec<Complex64> = Vec::new();
    data.try_reserve_exact(len)
        .map_err(|e| Error::ResourceExhausted(format!("cannot allocate {rows} × {cols} statistics: {e}")))?;
    data.resize(len, Complex64::new(0.0, 0.0));
    if cols > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::ResourceExhausted(format!("thread pool: {e}")))?;
        pool.install(|| {
            data.par_chunks_mut(cols)
                .enumerate()
                .try_for_each(|(r, row)| fill(r as u64, row))
        })?;
    }
    Ok(StatisticArray { rows, cols, data })
}

fn run_grid<T: Field>(plan: &ExperimentPlan, workers: usize) -> Result<StatisticArray> {
    let frame = plan.frame.build::<T>(plan.p)?;
    run_with(plan.replications, plan.grid.len(), workers, |rep, row| {
        let x = sample_matrix::<T>(&plan.law, plan.p, plan.n, plan.master_seed, rep)?;
        let cov = sample_cov(&x);
        let stats = process_on_grid(&cov, &frame, &plan.grid)?;
        for (slot, st) in row.iter_mut().zip(stats) {
            *slot = st.centered;
        }
        Ok(())
    })
}

/// All grid statistics `Y_n(t₁, t₂, shift)` for each replication.
pub fn run_replications(plan: &ExperimentPlan, workers: usize) -> Result<StatisticArray> {
    plan.validate()?;
    match plan.case() {
        CovarianceCase::Real => run_grid::<f64>(plan, workers),
        CovarianceCase::Complex => run_grid::<Complex64>(plan, workers),
    }
}

/// Sample moments of a statistic array with jackknife standard errors.
///
/// Standard errors of complex entries are packed as `re` = SE of the real
/// part, `im` = SE of the imaginary part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoments {
    pub replications: usize,
    pub mean: Vec<Complex64>,
    pub mean_se: Vec<Complex64>,
    /// Unbiased `E (Y_i − EY_i)(Y_j − EY_j)`.
    pub product: DMatrix<Complex64>,
    pub product_se: DMatrix<Complex64>,
    /// Unbiased `E (Y_i − EY_i) conj(Y_j − EY_j)`.
    pub hermitian: DMatrix<Complex64>,
    pub hermitian_se: DMatrix<Complex64>,
}

impl EmpiricalMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `|C_ij| / √(C_ii C_jj)` from the Hermitian covariance.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let c = &self.hermitian;
        let denom = (c[(i, i)].re * c[(j, j)].re).sqrt();
        if denom > 0.0 {
            c[(i, j)].norm() / denom
        } else {
            0.0
        }
    }

    /// Real-part correlation, signed.
    pub fn real_correlation(&self, i: usize, j: usize) -> f64 {
        let c = &self.hermitian;
        let denom = (c[(i, i)].re * c[(j, j)].re).sqrt();
        if denom > 0.0 {
            c[(i, j)].re / denom
        } else {
            0.0
        }
    }
}

fn jackknife_se(q: impl Iterator<Item = f64> + Clone, r: usize) -> f64 {
    // Leave-one-out covariance estimates deviate from the full estimate by
    // (S − R q_r)/((R−1)(R−2)); summing squares gives the closed form below.
    if r < 3 {
        return f64::INFINITY;
    }
    let rf = r as f64;
    let mean = q.clone().sum::<f64>() / rf;
    let ss: f64 = q.map(|v| (v - mean).powi(2)).sum();
    (rf * ss / ((rf - 1.0) * (rf - 2.0).powi(2))).sqrt()
}

/// Unbiased covariance (product and Hermitian) with jackknife SEs.
pub fn empirical_cov(samples: &StatisticArray) -> Result<EmpiricalMoments> {
    let (r, k) = (samples.rows, samples.cols);
    if r < 2 {
        return Err(Error::TooFewReplications(r));
    }
    let rf = r as f64;
    let cols: Vec<Vec<Complex64>> = (0..k).map(|c| samples.column(c)).collect();
    let mean: Vec<Complex64> = cols.iter().map(|c| c.iter().sum::<Complex64>() / rf).collect();
    let dev: Vec<Vec<Complex64>> = cols.iter().zip(&mean).map(|(c, m)| c.iter().map(|v| v - m).collect()).collect();
    let mean_se = dev
        .iter()
        .map(|d| {
            let vr = d.iter().map(|v| v.re * v.re).sum::<f64>() / (rf - 1.0);
            let vi = d.iter().map(|v| v.im * v.im).sum::<f64>() / (rf - 1.0);
            Complex64::new((vr / rf).sqrt(), (vi / rf).sqrt())
        })
        .collect();
    let zero = Complex64::new(0.0, 0.0);
    let mut product = DMatrix::from_element(k, k, zero);
    let mut product_se = DMatrix::from_element(k, k, zero);
    let mut hermitian = DMatrix::from_element(k, k, zero);
    let mut hermitian_se = DMatrix::from_element(k, k, zero);
    for i in 0..k {
        for j in i..k {
            let (a, b) = (&dev[i], &dev[j]);
            let prod: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            let herm: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x * y.conj()).collect();
            let p = prod.iter().sum::<Complex64>() / (rf - 1.0);
            let h = herm.iter().sum::<Complex64>() / (rf - 1.0);
            let pse = Complex64::new(
                jackknife_se(prod.iter().map(|v| v.re), r),
                jackknife_se(prod.iter().map(|v| v.im), r),
            );
            let hse = Complex64::new(
                jackknife_se(herm.iter().map(|v| v.re), r),
                jackknife_se(herm.iter().map(|v| v.im), r),
            );
            product[(i, j)] = p;
            product[(j, i)] = p;
            product_se[(i, j)] = pse;
            product_se[(j, i)] = pse;
            hermitian[(i, j)] = h;
            hermitian[(j, i)] = h.conj();
            hermitian_se[(i, j)] = hse;
            hermitian_se[(j, i)] = hse;
        }
        hermitian[(i, i)].im = 0.0;
    }
    Ok(EmpiricalMoments { replications: r, mean, mean_se, product, product_se, hermitian, hermitian_se })
}

/// Which second moment an entry compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentKind {
    /// `E Y_i Y_j`.
    Product,
    /// `E Y_i conj(Y_j)`.
    Conjugate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub value: Complex64,
    pub z_re: f64,
    pub z_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub i: usize,
    pub j: usize,
    pub moment: MomentKind,
    pub empirical: Complex64,
    pub se_re: f64,
    pub se_im: f64,
    pub predictions: Vec<Prediction>,
}

impl ComparisonEntry {
    pub fn prediction(&self, label: &str) -> Option<&Prediction> {
        self.predictions.iter().find(|p| p.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub label: String,
    pub sum_sq_z: f64,
    pub max_abs_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianityReport {
    pub column: usize,
    pub replications: usize,
    pub predicted_variance: f64,
    pub skewness: f64,
    /// `skewness · √(R/6)`.
    pub skewness_stat: f64,
    pub excess_kurtosis: f64,
    /// `excess kurtosis · √(R/24)`.
    pub kurtosis_stat: f64,
    /// Kolmogorov–Smirnov distance to `N(0, predicted_variance)`.
    pub ks_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub replications: usize,
    pub y_n: f64,
    pub labels: Vec<String>,
    pub entries: Vec<ComparisonEntry>,
    pub fits: Vec<FitSummary>,
    /// Label with the smallest summed squared z-score.
    pub verdict: String,
    pub gaussianity: Vec<GaussianityReport>,
}

impl ComparisonReport {
    pub fn entry(&self, i: usize, j: usize, moment: MomentKind) -> Option<&ComparisonEntry> {
        let (i, j) = (i.min(j), i.max(j));
        self.entries.iter().find(|e| e.i == i && e.j == j && e.moment == moment)
    }

    pub fn fit(&self, label: &str) -> Option<&FitSummary> {
        self.fits.iter().find(|f| f.label == label)
    }

    /// Labels ordered from best to worst fit.
    pub fn ranking(&self) -> Vec<&str> {
        let mut f: Vec<&FitSummary> = self.fits.iter().collect();
        f.sort_by(|a, b| a.sum_sq_z.total_cmp(&b.sum_sq_z));
        f.into_iter().map(|f| f.label.as_str()).collect()
    }

    /// Attaches per-column normality diagnostics using the first label's
    /// predicted variance of each column's real part.
    pub fn add_gaussianity(&mut self, samples: &StatisticArray) -> Result<()> {
        if samples.rows < MIN_NORMALITY_REPLICATIONS {
            return Ok(());
        }
        let mut out = Vec::new();
        for k in 0..samples.cols {
            let pred = |kind| {
                self.entry(k, k, kind)
                    .and_then(|e| e.predictions.first())
                    .map(|p| p.value.re)
            };
            let var = match (pred(MomentKind::Product), pred(MomentKind::Conjugate)) {
                (Some(p), Some(h)) => 0.5 * (p + h),
                (Some(p), None) => p,
                _ => continue,
            };
            let col: Vec<f64> = samples.column(k).iter().map(|v| v.re).collect();
            match normality_tests(&col, var) {
                Ok(mut g) => {
                    g.column = k;
                    out.push(g);
                }
                Err(Error::Degenerate(_)) | Err(Error::InvalidArgument(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        self.gaussianity = out;
        Ok(())
    }
}

fn zscore(diff: f64, se: f64, scale: f64) -> f64 {
    diff / se.max(1e-15 * scale.max(1.0))
}

/// Builds a report from the empirical moments and a prediction rule giving,
/// for `(i, j, kind)`, one predicted value per label.
pub fn compare_moments<P>(emp: &EmpiricalMoments, y_n: f64, complex_valued: bool, labels: &[String], predict: P) -> Result<ComparisonReport>
where
    P: Fn(usize, usize, MomentKind) -> Result<Vec<Complex64>>,
{
    let k = emp.dim();
    let kinds: &[MomentKind] = if complex_valued {
        &[MomentKind::Product, MomentKind::Conjugate]
    } else {
        &[MomentKind::Product]
    };
    let mut entries = Vec::new();
    let mut sums = vec![0.0; labels.len()];
    let mut maxes = vec![0.0f64; labels.len()];
    for &kind in kinds {
        for i in 0..k {
            for j in i..k {
                let (value, se) = match kind {
                    MomentKind::Product => (emp.product[(i, j)], emp.product_se[(i, j)]),
                    MomentKind::Conjugate => (emp.hermitian[(i, j)], emp.hermitian_se[(i, j)]),
                };
                let predicted = predict(i, j, kind)?;
                if predicted.len() != labels.len() {
                    return Err(Error::DimensionMismatch("prediction count differs from labels".into()));
                }
                let mut predictions = Vec::with_capacity(labels.len());
                for (l, (label, pred)) in labels.iter().zip(predicted).enumerate() {
                    let scale = pred.norm().max(value.norm());
                    let z_re = zscore(value.re - pred.re, se.re, scale);
                    let z_im = if complex_valued { zscore(value.im - pred.im, se.im, scale) } else { 0.0 };
                    sums[l] += z_re * z_re + z_im * z_im;
                    maxes[l] = maxes[l].max(z_re.abs()).max(z_im.abs());
                    predictions.push(Prediction { label: label.clone(), value: pred, z_re, z_im });
                }
                entries.push(ComparisonEntry { i, j, moment: kind, empirical: value, se_re: se.re, se_im: se.im, predictions });
            }
        }
    }
    let fits: Vec<FitSummary> = labels
        .iter()
        .zip(sums.iter().zip(&maxes))
        .map(|(label, (&sum_sq_z, &max_abs_z))| FitSummary { label: label.clone(), sum_sq_z, max_abs_z })
        .collect();
    let verdict = fits
        .iter()
        .min_by(|a, b| a.sum_sq_z.total_cmp(&b.sum_sq_z))
        .map(|f| f.label.clone())
        .unwrap_or_default();
    Ok(ComparisonReport {
        replications: emp.replications,
        y_n,
        labels: labels.to_vec(),
        entries,
        fits,
        verdict,
        gaussianity: Vec::new(),
    })
}

/// Predicted `E Y_i Y_j` (or `E Y_i conj(Y_j)`) for two grid points.
pub fn predicted_moment(
    a: &GridPoint,
    b: &GridPoint,
    kind: MomentKind,
    case: CovarianceCase,
    law: &MpLaw,
    form: KernelForm,
) -> Result<Complex64> {
    // conj Y(t₃, t₄, z) = Y(t₄, t₃, z̄).
    let (t3, t4, shift_b) = match kind {
        MomentKind::Product => (&b.t1, &b.t2, b.shift),
        MomentKind::Conjugate => (&b.t2, &b.t1, b.shift.conj()),
    };
    let w = w_shift(a.shift, shift_b, law, form)?;
    Ok(cov_process(theta(&a.t1, t4)?, theta(t3, &a.t2)?, theta(&a.t1, t3)?, theta(t4, &a.t2)?, w, case))
}

/// Compares the empirical covariance of the grid statistics against each
/// kernel form, evaluated at `y_n = p/n`.
pub fn compare_kernel(emp: &EmpiricalMoments, plan: &ExperimentPlan, forms: &[KernelForm]) -> Result<ComparisonReport> {
    let points = plan.grid.points();
    if points.len() != emp.dim() {
        return Err(Error::DimensionMismatch(format!("{} grid points, {} statistics", points.len(), emp.dim())));
    }
    let law = MpLaw::new(plan.y_n()?);
    let labels: Vec<String> = forms.iter().map(|f| f.name().to_string()).collect();
    let case = plan.case();
    compare_moments(emp, law.ratio(), plan.is_complex_valued(), &labels, |i, j, kind| {
        forms
            .iter()
            .map(|&form| predicted_moment(&points[i], &points[j], kind, case, &law, form))
            .collect()
    })
}

pub const MIN_NORMALITY_REPLICATIONS: usize = 100;

/// Skewness, excess kurtosis and KS distance against `N(0, predicted_variance)`.
pub fn normality_tests(samples: &[f64], predicted_variance: f64) -> Result<GaussianityReport> {
    let r = samples.len();
    if r < MIN_NORMALITY_REPLICATIONS {
        return Err(Error::TooFewReplications(r));
    }
    if !(predicted_variance.is_finite() && predicted_variance > 0.0) {
        return Err(Error::InvalidArgument(format!("predicted variance {predicted_variance}")));
    }
    let rf = r as f64;
    let mean = samples.iter().sum::<f64>() / rf;
    let m2 = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rf;
    if m2.is_nan() || m2 <= 0.0 {
        return Err(Error::Degenerate("zero-variance column".into()));
    }
    let m3 = samples.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / rf;
    let m4 = samples.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / rf;
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    let normal = Normal::new(0.0, predicted_variance.sqrt())
        .map_err(|e| Error::InvalidArgument(format!("normal reference: {e}")))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ks_distance = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / rf).max((i + 1) as f64 / rf - f)
        })
        .fold(0.0, f64::max);
    Ok(GaussianityReport {
        column: 0,
        replications: r,
        predicted_variance,
        skewness,
        skewness_stat: skewness * (rf / 6.0).sqrt(),
        excess_kurtosis,
        kurtosis_stat: excess_kurtosis * (rf / 24.0).sqrt(),
        ks_distance,
    })
}

/// Everything produced by one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub samples: StatisticArray,
    pub moments: EmpiricalMoments,
    pub report: ComparisonReport,
}

/// Runs the plan and compares the result with each kernel form.
pub fn simulate(plan: &ExperimentPlan, forms: &[KernelForm], workers: usize) -> Result<Simulation> {
    let samples = run_replications(plan, workers)?;
    let moments = empirical_cov(&samples)?;
    let mut report = compare_kernel(&moments, plan, forms)?;
    report.add_gaussianity(&samples)?;
    Ok(Simulation { samples, moments, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::AngleTuple;
    use crate::mp::SpectralShift;
    use crate::rng::{substream, Purpose};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small_plan(replications: usize) -> ExperimentPlan {
        ExperimentPlan {
            p: 10,
            n: 20,
            law: EntryLaw::RealGaussian,
            frame: FrameSpec::Random { m: 1, seed: 3 },
            grid: GridSpec {
                pairs: vec![(AngleTuple(vec![0.0]), AngleTuple(vec![0.0]))],
                shifts: vec![SpectralShift::Sigma(1.0)],
            },
            replications,
            master_seed: 11,
        }
    }

    #[test]
    fn forced_identical_streams_give_identical_rows() {
        let plan = small_plan(2);
        let frame = plan.frame.build::<f64>(plan.p).unwrap();
        let arr = run_with(2, 1, 1, |_, row| {
            let x = sample_matrix::<f64>(&plan.law, plan.p, plan.n, plan.master_seed, 0)?;
            let st = process_on_grid(&sample_cov(&x), &frame, &plan.grid)?;
            row[0] = st[0].centered;
            Ok(())
        })
        .unwrap();
        assert_eq!(arr.row(0), arr.row(1));
    }

    #[test]
    fn single_point_grid_shape() {
        let arr = run_replications(&small_plan(5), 1).unwrap();
        assert_eq!((arr.rows, arr.cols), (5, 1));
        assert_ne!(arr.get(0, 0), arr.get(1, 0));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let plan = small_plan(12);
        let a = run_replications(&plan, 1).unwrap();
        let b = run_replications(&plan, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_validation() {
        let mut plan = small_plan(1);
        assert!(matches!(run_replications(&plan, 1), Err(Error::TooFewReplications(1))));
        plan.replications = 3;
        plan.grid.pairs[0].0 = AngleTuple(vec![0.0, 1.0]);
        assert!(run_replications(&plan, 1).is_err());
        let mut plan = small_plan(3);
        plan.grid.shifts = vec![SpectralShift::Sigma(-1.0)];
        assert!(run_replications(&plan, 1).is_err());
    }

    #[test]
    fn errors_propagate_from_rows() {
        let r = run_with(4, 1, 2, |rep, _| if rep == 2 { Err(Error::Factorization("x".into())) } else { Ok(()) });
        assert!(matches!(r, Err(Error::Factorization(_))));
    }

    #[test]
    fn empirical_cov_basics() {
        let rows: Vec<Vec<f64>> = (0..50).map(|r| vec![2.0, r as f64, r as f64]).collect();
        let arr = StatisticArray::from_real_rows(&rows).unwrap();
        let emp = empirical_cov(&arr).unwrap();
        assert_eq!(emp.product[(0, 0)].re, 0.0);
        assert!((emp.real_correlation(1, 2) - 1.0).abs() < 1e-12);
        assert!((emp.product[(1, 1)].re - 212.5).abs() < 1e-9);
        assert!(empirical_cov(&StatisticArray::from_real_rows(&[vec![1.0]]).unwrap()).is_err());
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let mut rng = substream(1, Purpose::Paths, 0, 0);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let emp = empirical_cov(&StatisticArray::from_real_rows(&rows).unwrap()).unwrap();
        let cov = |rows: &[Vec<f64>]| {
            let n = rows.len() as f64;
            let ma = rows.iter().map(|r| r[0]).sum::<f64>() / n;
            let mb = rows.iter().map(|r| r[1]).sum::<f64>() / n;
            rows.iter().map(|r| (r[0] - ma) * (r[1] - mb)).sum::<f64>() / (n - 1.0)
        };
        let loo: Vec<f64> = (0..rows.len())
            .map(|k| {
                let rest: Vec<Vec<f64>> = rows.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, r)| r.clone()).collect();
                cov(&rest)
            })
            .collect();
        let n = loo.len() as f64;
        let m = loo.iter().sum::<f64>() / n;
        let se = ((n - 1.0) / n * loo.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt();
        assert!((cov(&rows) - emp.product[(0, 1)].re).abs() < 1e-14);
        assert!((se - emp.product_se[(0, 1)].re).abs() < 1e-12);
    }

    #[test]
    fn synthetic_gaussian_covariance_recovered() {
        // C = L Lᵀ with L = [[1, 0], [0.6, 0.8]].
        let mut rng = substream(2, Purpose::Paths, 0, 0);
        let rows: Vec<Vec<f64>> = (0..20_000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![a, 0.6 * a + 0.8 * b]
            })
            .collect();
        let emp = empirical_cov(&StatisticArray::from_real_rows(&rows).unwrap()).unwrap();
        let c = [[1.0, 0.6], [0.6, 1.0]];
        for (i, row) in c.iter().enumerate() {
            for (j, &cij) in row.iter().enumerate() {
                let z = (emp.product[(i, j)].re - cij) / emp.product_se[(i, j)].re;
                assert!(z.abs() < 5.0, "({i},{j}) z = {z}");
            }
        }
        let h = &emp.hermitian;
        assert_eq!(h[(0, 1)], h[(1, 0)].conj());
        let eig = h.map(|v| v.re).symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10);
    }

    #[test]
    fn normality_calibration() {
        let mut rng = substream(3, Purpose::Paths, 0, 0);
        let r = 10_000;
        let normal: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).collect();
        let g = normality_tests(&normal, 1.0).unwrap();
        assert!(g.skewness_stat.abs() < 4.0);
        assert!(g.kurtosis_stat.abs() < 4.0);
        assert!(g.ks_distance < 1.63 / (r as f64).sqrt());
        let uniform: Vec<f64> = (0..r).map(|_| rng.random_range(-3f64.sqrt()..3f64.sqrt())).collect();
        let u = normality_tests(&uniform, 1.0).unwrap();
        assert!((u.excess_kurtosis + 1.2).abs() < 0.1);
        assert!(u.kurtosis_stat < -4.0);
        assert!(normality_tests(&vec![1.0; 200], 1.0).is_err());
        assert!(normality_tests(&normal[..50], 1.0).is_err());
    }

    #[test]
    fn compare_kernel_ranks_true_form_first_on_synthetic_data() {
        // Draw exact limit-law samples for a two-shift grid and check calibration.
        let plan = ExperimentPlan {
            p: 200,
            n: 400,
            law: EntryLaw::RealGaussian,
            frame: FrameSpec::Canonical { m: 1 },
            grid: GridSpec {
                pairs: vec![(AngleTuple(vec![0.0]), AngleTuple(vec![0.0]))],
                shifts: vec![SpectralShift::Sigma(0.5), SpectralShift::Sigma(2.0)],
            },
            replications: 4000,
            master_seed: 0,
        };
        let law = MpLaw::new(plan.y_n().unwrap());
        let pts = plan.grid.points();
        let c = |i: usize, j: usize| {
            predicted_moment(&pts[i], &pts[j], MomentKind::Product, CovarianceCase::Real, &law, KernelForm::DividedDifference)
                .unwrap()
                .re
        };
        let (c00, c01, c11) = (c(0, 0), c(0, 1), c(1, 1));
        let l10 = c01 / c00.sqrt();
        let l11 = (c11 - l10 * l10).sqrt();
        let mut rng = substream(4, Purpose::Paths, 0, 0);
        let rows: Vec<Vec<f64>> = (0..plan.replications)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![c00.sqrt() * a, l10 * a + l11 * b]
            })
            .collect();
        let emp = empirical_cov(&StatisticArray::from_real_rows(&rows).unwrap()).unwrap();
        let report = compare_kernel(&emp, &plan, &[KernelForm::Theorem1Display, KernelForm::DividedDifference]).unwrap();
        assert_eq!(report.verdict, "divided-difference");
        assert_eq!(report.entries.len(), 3);
        assert!(report.fit("divided-difference").unwrap().max_abs_z < 4.0);
        for e in &report.entries {
            for p in &e.predictions {
                assert!(p.z_re.is_finite() && p.z_im.is_finite());
            }
        }
    }
}
