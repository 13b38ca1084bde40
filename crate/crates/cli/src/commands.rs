use mplab::config::{Command, RunConfig};
use mplab::gp::{build_kernel_matrix, paths_as_statistics, psd_diagnostics, sample_paths, PsdDiagnostic};
use mplab::kernels::{display_ratio, w_sigma, CovarianceCase, KernelForm};
use mplab::lss::{lss_experiment, LssPrediction, TestFunction, LABEL_CONTOUR, LABEL_DIRECT};
use mplab::montecarlo::{simulate, ComparisonReport, MomentKind, StatisticArray};
use mplab::mp::{MpLaw, SpectralShift};
use mplab::resolvent::GridPoint;
use mplab::Error;
use num_complex::Complex64;
use serde::Serialize;

use crate::output::{num, Outputs, Table};

/// Why a run stopped; each maps to a process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

fn setup(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn numerical(e: Error) -> Failure {
    match e {
        Error::Config(m) => Failure::Config(m),
        other => Failure::Numerical(other.to_string()),
    }
}

fn io(e: String) -> Failure {
    Failure::Numerical(e)
}

pub fn execute(cfg: &RunConfig, workers: usize) -> Result<Outputs, Failure> {
    match cfg.command {
        Command::Law => law(cfg),
        Command::Kernel => kernel(cfg),
        Command::Simulate => simulate_cmd(cfg, workers),
        Command::Lss => lss_cmd(cfg, workers),
        Command::Gp => gp_cmd(cfg),
    }
}

#[derive(Serialize)]
struct TransformRow {
    arg: Complex64,
    value: Complex64,
    quadrature: Complex64,
    residual: f64,
}

#[derive(Serialize)]
struct LawSummary {
    y: f64,
    a: f64,
    b: f64,
    atom: f64,
    density: Vec<(f64, f64)>,
    m: Vec<TransformRow>,
    s: Vec<TransformRow>,
}

fn law(cfg: &RunConfig) -> Result<Outputs, Failure> {
    let s = cfg.law_section().map_err(setup)?;
    let header = ["y", "quantity", "arg_re", "arg_im", "value_re", "value_im", "quadrature_re", "quadrature_im", "residual"];
    let mut table = Table::new("mplab-law v1", header.iter().map(|h| h.to_string()).collect());
    let mut summaries = Vec::new();
    for &y in &s.y {
        let law = MpLaw::with_ratio(y).map_err(setup)?;
        let row = |q: &str, arg: Complex64, value: Complex64, quad: Option<Complex64>, res: Option<f64>| {
            let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
            vec![
                num(y),
                q.to_string(),
                num(arg.re),
                num(arg.im),
                num(value.re),
                num(value.im),
                opt(quad.map(|c| c.re)),
                opt(quad.map(|c| c.im)),
                opt(res),
            ]
        };
        let zero = Complex64::new(0.0, 0.0);
        let real = |v: f64| Complex64::new(v, 0.0);
        table.push(row("support-a", zero, real(law.a), None, None));
        table.push(row("support-b", zero, real(law.b), None, None));
        table.push(row("atom", zero, real(law.atom_at_zero), None, None));
        let mut density = Vec::new();
        for k in 0..s.density_points {
            let x = law.a + (law.b - law.a) * (k as f64 + 0.5) / s.density_points as f64;
            let d = law.density(x);
            density.push((x, d));
            table.push(row("density", real(x), real(d), None, None));
        }
        let mut ms = Vec::new();
        for &sigma in &s.sigma {
            let m = law.m_sigma(sigma).map_err(numerical)?;
            let q = law.integrate(|x| 1.0 / (x + sigma)).map_err(numerical)?;
            table.push(row("m", real(sigma), real(m.value), Some(real(q)), Some(m.residual)));
            ms.push(TransformRow { arg: real(sigma), value: real(m.value), quadrature: real(q), residual: m.residual });
        }
        let mut ss = Vec::new();
        for &[re, im] in &s.z {
            let z = Complex64::new(re, im);
            let st = law.stieltjes(SpectralShift::Z(z)).map_err(numerical)?;
            let q = if im == 0.0 {
                law.integrate(|x| real(1.0 / (x - re)))
            } else {
                law.integrate(|x| 1.0 / (real(x) - z))
            }
            .map_err(numerical)?;
            table.push(row("s", z, st.value, Some(q), Some(st.residual)));
            ss.push(TransformRow { arg: z, value: st.value, quadrature: q, residual: st.residual });
        }
        summaries.push(LawSummary { y, a: law.a, b: law.b, atom: law.atom_at_zero, density, m: ms, s: ss });
    }
    let mut out = Outputs::new();
    out.csv("law.csv", table).map_err(io)?;
    out.json("law.json", &summaries).map_err(io)?;
    Ok(out)
}

#[derive(Serialize)]
struct KernelRow {
    y: f64,
    sigma1: f64,
    sigma2: f64,
    values: Vec<(KernelForm, f64)>,
    dd_over_thm1: f64,
    one_minus_sigma_m_product: f64,
}

#[derive(Serialize)]
struct KernelReport {
    rows: Vec<KernelRow>,
    psd: Vec<(f64, Vec<PsdDiagnostic>)>,
}

fn kernel(cfg: &RunConfig) -> Result<Outputs, Failure> {
    let (s, forms) = cfg.kernel_section().map_err(setup)?;
    let mut header: Vec<String> = vec!["y".into(), "sigma1".into(), "sigma2".into()];
    header.extend(forms.iter().map(|f| f.name().to_string()));
    header.push("dd_over_thm1".into());
    header.push("one_minus_sigma_m_product".into());
    let mut table = Table::new("mplab-kernel v1", header);
    let mut rows = Vec::new();
    let mut psd = Vec::new();
    for &y in &s.y {
        let law = MpLaw::with_ratio(y).map_err(setup)?;
        for &s1 in &s.sigma {
            for &s2 in &s.sigma {
                let values = forms
                    .iter()
                    .map(|&f| w_sigma(s1, s2, &law, f).map(|v| (f, v)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(numerical)?;
                let dd = w_sigma(s1, s2, &law, KernelForm::DividedDifference).map_err(numerical)?;
                let t1 = w_sigma(s1, s2, &law, KernelForm::Theorem1Display).map_err(numerical)?;
                let ratio = display_ratio(s1, s2, &law).map_err(numerical)?;
                let mut r = vec![num(y), num(s1), num(s2)];
                r.extend(values.iter().map(|(_, v)| num(*v)));
                r.push(num(dd / t1));
                r.push(num(ratio));
                table.push(r);
                rows.push(KernelRow { y, sigma1: s1, sigma2: s2, values, dd_over_thm1: dd / t1, one_minus_sigma_m_product: ratio });
            }
        }
        let grid = mplab::resolvent::GridSpec {
            pairs: vec![(mplab::kernels::AngleTuple(vec![0.0]), mplab::kernels::AngleTuple(vec![0.0]))],
            shifts: s.sigma.iter().map(|&v| SpectralShift::Sigma(v)).collect(),
        };
        psd.push((y, psd_diagnostics(&grid, s.case, law.y)));
    }
    let mut out = Outputs::new();
    out.csv("kernel.csv", table).map_err(io)?;
    out.json("kernel.json", &KernelReport { rows, psd }).map_err(io)?;
    Ok(out)
}

fn angles(t: &mplab::kernels::AngleTuple) -> String {
    t.0.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" ")
}

fn comparison_table(report: &ComparisonReport, extra_contour_diff: bool) -> Table {
    let mut header: Vec<String> = ["i", "j", "moment", "empirical_re", "empirical_im", "se_re", "se_im"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    for l in &report.labels {
        for suffix in ["re", "im", "z_re", "z_im"] {
            header.push(format!("{l}_{suffix}"));
        }
    }
    if extra_contour_diff {
        header.push("contour_minus_direct_abs".into());
    }
    let mut table = Table::new("mplab-comparison v1", header);
    for e in &report.entries {
        let moment = match e.moment {
            MomentKind::Product => "product",
            MomentKind::Conjugate => "conjugate",
        };
        let mut row = vec![
            e.i.to_string(),
            e.j.to_string(),
            moment.to_string(),
            num(e.empirical.re),
            num(e.empirical.im),
            num(e.se_re),
            num(e.se_im),
        ];
        for p in &e.predictions {
            row.extend([num(p.value.re), num(p.value.im), num(p.z_re), num(p.z_im)]);
        }
        if extra_contour_diff {
            let d = match (e.prediction(LABEL_CONTOUR), e.prediction(LABEL_DIRECT)) {
                (Some(c), Some(d)) => num((c.value - d.value).norm()),
                _ => String::new(),
            };
            row.push(d);
        }
        table.push(row);
    }
    table
}

fn gate(cfg: &RunConfig, report: &ComparisonReport) -> bool {
    let Some(limit) = cfg.gate_z else { return false };
    report
        .entries
        .iter()
        .filter_map(|e| e.predictions.first())
        .any(|p| p.z_re.abs() > limit || p.z_im.abs() > limit)
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    p: usize,
    n: usize,
    replications: usize,
    points: Vec<GridPoint>,
    mean: &'a [Complex64],
    mean_se: &'a [Complex64],
    comparison: &'a ComparisonReport,
}

fn simulate_cmd(cfg: &RunConfig, workers: usize) -> Result<Outputs, Failure> {
    let (plan, forms) = cfg.experiment_plan().map_err(setup)?;
    let sim = simulate(&plan, &forms, workers).map_err(numerical)?;
    let points = plan.grid.points();
    let header = ["replication", "point", "t1", "t2", "shift_re", "shift_im", "value_re", "value_im"];
    let mut raw = Table::new("mplab-raw v1", header.iter().map(|h| h.to_string()).collect());
    for r in 0..sim.samples.rows {
        for (k, pt) in points.iter().enumerate() {
            let v = sim.samples.get(r, k);
            let z = pt.shift.as_z();
            raw.push(vec![r.to_string(), k.to_string(), angles(&pt.t1), angles(&pt.t2), num(z.re), num(z.im), num(v.re), num(v.im)]);
        }
    }
    let mut out = Outputs::new();
    out.gate_failed = gate(cfg, &sim.report);
    out.csv("raw.csv", raw).map_err(io)?;
    out.csv("comparison.csv", comparison_table(&sim.report, false)).map_err(io)?;
    let report = SimulateReport {
        p: plan.p,
        n: plan.n,
        replications: plan.replications,
        points,
        mean: &sim.moments.mean,
        mean_se: &sim.moments.mean_se,
        comparison: &sim.report,
    };
    out.json("report.json", &report).map_err(io)?;
    Ok(out)
}

#[derive(Serialize)]
struct LssReport<'a> {
    f: &'a TestFunction,
    g: &'a TestFunction,
    replications: usize,
    predictions: &'a [LssPrediction],
    comparison: &'a ComparisonReport,
}

fn raw_columns(samples: &StatisticArray, names: &[&str]) -> Table {
    let mut header = vec!["replication".to_string()];
    for n in names {
        header.push(format!("{n}_re"));
        header.push(format!("{n}_im"));
    }
    let mut t = Table::new("mplab-raw v1", header);
    for r in 0..samples.rows {
        let mut row = vec![r.to_string()];
        for v in samples.row(r) {
            row.push(num(v.re));
            row.push(num(v.im));
        }
        t.push(row);
    }
    t
}

fn lss_cmd(cfg: &RunConfig, workers: usize) -> Result<Outputs, Failure> {
    let plan = cfg.lss_plan().map_err(setup)?;
    let outcome = lss_experiment(&plan, workers).map_err(numerical)?;
    let mut out = Outputs::new();
    out.gate_failed = gate(cfg, &outcome.report);
    out.csv("raw.csv", raw_columns(&outcome.samples, &["x_f", "x_g"])).map_err(io)?;
    out.csv("comparison.csv", comparison_table(&outcome.report, true)).map_err(io)?;
    let report = LssReport {
        f: &plan.f,
        g: &plan.g,
        replications: plan.replications,
        predictions: &outcome.predictions,
        comparison: &outcome.report,
    };
    out.json("report.json", &report).map_err(io)?;
    Ok(out)
}

#[derive(Serialize)]
struct GpEntry {
    i: usize,
    j: usize,
    kernel: f64,
    empirical: f64,
    se: f64,
    z: f64,
}

#[derive(Serialize)]
struct GpReport {
    case: CovarianceCase,
    form: KernelForm,
    y: f64,
    count: usize,
    points: Vec<GridPoint>,
    min_eigenvalue: f64,
    jitter: Option<f64>,
    kernel_matrix: Vec<Vec<f64>>,
    entries: Vec<GpEntry>,
}

fn gp_cmd(cfg: &RunConfig) -> Result<Outputs, Failure> {
    let (s, grid, y) = cfg.gp_section().map_err(setup)?;
    let km = build_kernel_matrix(&grid, s.case, y, s.form).map_err(setup)?;
    let paths = sample_paths(&km, s.count, s.seed).map_err(numerical)?;
    let emp = mplab::montecarlo::empirical_cov(&paths_as_statistics(&paths)).map_err(numerical)?;
    let k = km.dim();
    let mut entries = Vec::new();
    for i in 0..k {
        for j in i..k {
            let kernel = km.matrix[(i, j)];
            let empirical = emp.product[(i, j)].re;
            let se = emp.product_se[(i, j)].re;
            let z = if se > 0.0 { (empirical - kernel) / se } else { 0.0 };
            entries.push(GpEntry { i, j, kernel, empirical, se, z });
        }
    }
    let mut header = vec!["sample".to_string()];
    header.extend((0..k).map(|j| format!("y{j}")));
    let mut table = Table::new("mplab-gp-paths v1", header);
    for r in 0..paths.nrows() {
        let mut row = vec![r.to_string()];
        row.extend(paths.row(r).iter().map(|v| num(*v)));
        table.push(row);
    }
    let report = GpReport {
        case: s.case,
        form: s.form,
        y: y.get(),
        count: s.count,
        points: km.points.clone(),
        min_eigenvalue: km.min_eigenvalue,
        jitter: km.jitter,
        kernel_matrix: km.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
        entries,
    };
    let mut out = Outputs::new();
    out.csv("paths.csv", table).map_err(io)?;
    out.json("report.json", &report).map_err(io)?;
    Ok(out)
}
