use mplab::ensembles::EntryLaw;
use mplab::gp::{build_kernel_matrix, paths_as_statistics, sample_paths};
use mplab::kernels::{AngleTuple, KernelForm};
use mplab::montecarlo::{compare_kernel, empirical_cov, run_replications, ExperimentPlan, FrameSpec, StatisticArray};
use mplab::mp::SpectralShift;
use mplab::resolvent::GridSpec;
use mplab::rng::{substream, Purpose};
use num_complex::Complex64;
use rand::Rng;

#[test]
fn z_scores_are_calibrated_on_limit_samples() {
    let mut rng = substream(77, Purpose::Paths, 0, 0);
    let (mut inside, mut total) = (0usize, 0usize);
    for plan_idx in 0..50u64 {
        let n_pairs = rng.random_range(1..=2);
        let pairs = (0..n_pairs)
            .map(|_| (AngleTuple(vec![rng.random_range(0.0..3.0)]), AngleTuple(vec![rng.random_range(0.0..3.0)])))
            .collect();
        let shifts = (0..rng.random_range(1..=3)).map(|_| SpectralShift::Sigma(rng.random_range(0.2..5.0))).collect();
        let (p, n) = [(50, 100), (100, 100), (100, 50)][rng.random_range(0..3)];
        let plan = ExperimentPlan {
            p,
            n,
            law: EntryLaw::RealGaussian,
            frame: FrameSpec::Canonical { m: 1 },
            grid: GridSpec { pairs, shifts },
            replications: 500,
            master_seed: plan_idx,
        };
        let km = build_kernel_matrix(&plan.grid, plan.case(), plan.y_n().unwrap(), KernelForm::DividedDifference).unwrap();
        let paths = sample_paths(&km, plan.replications, 1000 + plan_idx).unwrap();
        let emp = empirical_cov(&paths_as_statistics(&paths)).unwrap();
        let report = compare_kernel(&emp, &plan, &[KernelForm::DividedDifference]).unwrap();
        for e in &report.entries {
            let z = e.predictions[0].z_re;
            assert!(z.is_finite());
            total += 1;
            if z.abs() <= 4.0 {
                inside += 1;
            }
        }
    }
    let frac = inside as f64 / total as f64;
    assert!(frac >= 0.99, "{inside}/{total} entries within 4 SE");
}

#[test]
fn statistic_array_identical_at_1_4_16_workers() {
    let plan = ExperimentPlan {
        p: 30,
        n: 50,
        law: EntryLaw::ComplexGaussian,
        frame: FrameSpec::Random { m: 2, seed: 4 },
        grid: GridSpec {
            pairs: vec![(AngleTuple(vec![0.1, 0.2]), AngleTuple(vec![1.0, 2.0]))],
            shifts: vec![SpectralShift::Sigma(1.0), SpectralShift::Z(Complex64::new(0.5, 1.0))],
        },
        replications: 37,
        master_seed: 123,
    };
    let a = run_replications(&plan, 1).unwrap();
    for w in [4, 16] {
        let b = run_replications(&plan, w).unwrap();
        let bits = |s: &StatisticArray| s.data.iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "{w} workers");
    }
}

#[test]
fn mean_is_near_zero_in_the_clt_regime() {
    let plan = ExperimentPlan {
        p: 100,
        n: 200,
        law: EntryLaw::RealGaussian,
        frame: FrameSpec::Random { m: 1, seed: 5 },
        grid: GridSpec {
            pairs: vec![(AngleTuple(vec![0.0]), AngleTuple(vec![0.0])), (AngleTuple(vec![0.0]), AngleTuple(vec![1.2]))],
            shifts: vec![SpectralShift::Sigma(1.0)],
        },
        replications: 400,
        master_seed: 6,
    };
    let emp = empirical_cov(&run_replications(&plan, 1).unwrap()).unwrap();
    for k in 0..2 {
        let z = emp.mean[k].re / emp.mean_se[k].re;
        assert!(z.abs() <= 3.0, "column {k}: mean z = {z}");
    }
}

#[test]
fn duplicated_column_is_perfectly_correlated() {
    let cols = vec![
        (0..30).map(|k| Complex64::new((k as f64).sin(), 0.0)).collect::<Vec<_>>(),
        (0..30).map(|k| Complex64::new((k as f64).sin(), 0.0)).collect::<Vec<_>>(),
    ];
    let emp = empirical_cov(&StatisticArray::from_columns(&cols).unwrap()).unwrap();
    assert!((emp.correlation(0, 1) - 1.0).abs() < 1e-12);
}
