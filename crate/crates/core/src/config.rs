//! Run configuration (TOML) and run manifest (JSON).
//!
//! Both parsers reject unknown keys and validate every field before any
//! computation starts.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensembles::{default_epsilon, truncate_standardize, BaseLaw, EntryLaw};
use crate::error::{Error, Result};
use crate::kernels::{AngleTuple, ContourSpec, CovarianceCase, KernelForm};
use crate::lss::{LssPlan, TestFunction};
use crate::montecarlo::{ExperimentPlan, FrameSpec};
use crate::mp::{AspectRatio, MpLaw, SpectralShift};
use crate::resolvent::GridSpec;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "MPLAB_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Law,
    Kernel,
    Simulate,
    Lss,
    Gp,
}

/// Entry distribution as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LawConfig {
    RealGaussian,
    ComplexGaussian,
    /// `base` clamped at `ε_n n^{1/4}` and standardized.
    Truncated { base: BaseLaw, epsilon: Option<f64> },
}

impl LawConfig {
    pub fn build(&self, n: usize) -> Result<EntryLaw> {
        match *self {
            LawConfig::RealGaussian => Ok(EntryLaw::RealGaussian),
            LawConfig::ComplexGaussian => Ok(EntryLaw::ComplexGaussian),
            LawConfig::Truncated { base, epsilon } => {
                truncate_standardize(base, n, epsilon.unwrap_or_else(|| default_epsilon(n)))
            }
        }
    }

    pub fn case(&self) -> CovarianceCase {
        match self {
            LawConfig::ComplexGaussian => CovarianceCase::Complex,
            _ => CovarianceCase::Real,
        }
    }
}

/// `[t₁, t₂]` for `m = 1` or `[[t₁…], [t₂…]]` in general.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnglePairConfig {
    Scalar([f64; 2]),
    Tuple([Vec<f64>; 2]),
}

impl AnglePairConfig {
    pub fn build(&self) -> Result<(AngleTuple, AngleTuple)> {
        let (a, b) = match self {
            AnglePairConfig::Scalar([a, b]) => (vec![*a], vec![*b]),
            AnglePairConfig::Tuple([a, b]) => (a.clone(), b.clone()),
        };
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Config(format!("angle pair {self:?} needs two tuples of equal, positive length")));
        }
        Ok((AngleTuple::new(a)?, AngleTuple::new(b)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FrameConfig {
    pub m: usize,
    /// Random frame seed; omitted means the canonical basis.
    pub seed: Option<u64>,
}

impl FrameConfig {
    fn build(&self) -> FrameSpec {
        match self.seed {
            Some(seed) => FrameSpec::Random { m: self.m, seed },
            None => FrameSpec::Canonical { m: self.m },
        }
    }
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig { m: 1, seed: None }
    }
}

fn shifts(sigma: &[f64], z: &[[f64; 2]]) -> Vec<SpectralShift> {
    sigma
        .iter()
        .map(|&s| SpectralShift::Sigma(s))
        .chain(z.iter().map(|&[re, im]| SpectralShift::Z(Complex64::new(re, im))))
        .collect()
}

fn forms_or_all(forms: &Option<Vec<KernelForm>>) -> Vec<KernelForm> {
    forms.clone().unwrap_or_else(|| KernelForm::ALL.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LawSection {
    pub y: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub z: Vec<[f64; 2]>,
    #[serde(default = "default_density_points")]
    pub density_points: usize,
}

fn default_density_points() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct KernelSection {
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
    pub forms: Option<Vec<KernelForm>>,
    #[serde(default = "default_case")]
    pub case: CovarianceCase,
}

fn default_case() -> CovarianceCase {
    CovarianceCase::Real
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentSection {
    pub p: usize,
    pub n: usize,
    pub law: LawConfig,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub frame: FrameConfig,
    /// Uses the pairs `(x,x)`, `(x,y)`, `(y,y)` with `x ⟂ y`.
    #[serde(default)]
    pub three_quantities: bool,
    #[serde(default)]
    pub pairs: Vec<AnglePairConfig>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub z: Vec<[f64; 2]>,
    pub forms: Option<Vec<KernelForm>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LssSection {
    pub p: usize,
    pub n: usize,
    pub law: LawConfig,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub frame: FrameConfig,
    pub f: TestFunction,
    pub g: TestFunction,
    pub u: AnglePairConfig,
    pub v: AnglePairConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GpSection {
    pub y: f64,
    pub case: CovarianceCase,
    pub pairs: Vec<AnglePairConfig>,
    pub sigma: Vec<f64>,
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub form: KernelForm,
}

/// A complete, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub output_dir: Option<String>,
    pub workers: Option<usize>,
    /// Exit with a gate failure if any reported `|z|` for the first form exceeds this.
    pub gate_z: Option<f64>,
    pub law: Option<LawSection>,
    pub kernel: Option<KernelSection>,
    pub experiment: Option<ExperimentSection>,
    pub lss: Option<LssSection>,
    pub gp: Option<GpSection>,
}

fn missing(section: &str) -> Error {
    Error::Config(format!("missing [{section}] section"))
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked without running an experiment.
    pub fn validate(&self) -> Result<()> {
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if let Some(g) = self.gate_z {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Config(format!("gate-z = {g} must be positive")));
            }
        }
        match self.command {
            Command::Law => self.law_section().map(|_| ()),
            Command::Kernel => self.kernel_section().map(|_| ()),
            Command::Simulate => self.experiment_plan().map(|_| ()),
            Command::Lss => self.lss_plan_unchecked().map(|_| ()),
            Command::Gp => self.gp_section().map(|_| ()),
        }
    }

    pub fn law_section(&self) -> Result<&LawSection> {
        let s = self.law.as_ref().ok_or_else(|| missing("law"))?;
        if s.y.is_empty() {
            return Err(Error::Config("law.y is empty".into()));
        }
        for &y in &s.y {
            let law = MpLaw::with_ratio(y).map_err(config_err)?;
            for shift in shifts(&s.sigma, &s.z) {
                law.validate_shift(shift).map_err(config_err)?;
            }
        }
        if s.density_points > 100_000 {
            return Err(Error::Config("law.density-points is limited to 100000".into()));
        }
        Ok(s)
    }

    pub fn kernel_section(&self) -> Result<(&KernelSection, Vec<KernelForm>)> {
        let s = self.kernel.as_ref().ok_or_else(|| missing("kernel"))?;
        if s.y.is_empty() || s.sigma.is_empty() {
            return Err(Error::Config("kernel.y and kernel.sigma must be non-empty".into()));
        }
        for &y in &s.y {
            let law = MpLaw::with_ratio(y).map_err(config_err)?;
            for &sigma in &s.sigma {
                law.validate_shift(SpectralShift::Sigma(sigma)).map_err(config_err)?;
            }
        }
        Ok((s, forms_or_all(&s.forms)))
    }

    /// Plan for `simulate`; truncated laws are calibrated here.
    pub fn experiment_plan(&self) -> Result<(ExperimentPlan, Vec<KernelForm>)> {
        let s = self.experiment.as_ref().ok_or_else(|| missing("experiment"))?;
        check_dims(s.p, s.n, s.replications)?;
        let pairs = if s.three_quantities {
            if !s.pairs.is_empty() || s.frame.m != 1 {
                return Err(Error::Config("three-quantities fixes the pairs and needs frame.m = 1".into()));
            }
            vec![(0.0, 0.0), (0.0, FRAC_PI_2), (FRAC_PI_2, FRAC_PI_2)]
                .into_iter()
                .map(|(a, b)| (AngleTuple(vec![a]), AngleTuple(vec![b])))
                .collect()
        } else {
            s.pairs.iter().map(AnglePairConfig::build).collect::<Result<Vec<_>>>().map_err(config_err)?
        };
        let grid = GridSpec { pairs, shifts: shifts(&s.sigma, &s.z) };
        check_truncated(&s.law)?;
        let law = s.law.build(s.n).map_err(config_err)?;
        let plan = ExperimentPlan {
            p: s.p,
            n: s.n,
            law,
            frame: s.frame.build(),
            grid,
            replications: s.replications,
            master_seed: s.seed,
        };
        plan.validate().map_err(config_err)?;
        Ok((plan, forms_or_all(&s.forms)))
    }

    fn lss_plan_unchecked(&self) -> Result<LssPlan> {
        let s = self.lss.as_ref().ok_or_else(|| missing("lss"))?;
        check_dims(s.p, s.n, s.replications)?;
        check_truncated(&s.law)?;
        let law = match s.law {
            LawConfig::Truncated { .. } => EntryLaw::RealGaussian,
            _ => s.law.build(s.n).map_err(config_err)?,
        };
        let plan = LssPlan {
            p: s.p,
            n: s.n,
            law,
            frame: s.frame.build(),
            f: s.f.clone(),
            g: s.g.clone(),
            u: s.u.build().map_err(config_err)?,
            v: s.v.build().map_err(config_err)?,
            replications: s.replications,
            master_seed: s.seed,
            contour: ContourSpec::default(),
        };
        plan.validate().map_err(config_err)?;
        Ok(plan)
    }

    pub fn lss_plan(&self) -> Result<LssPlan> {
        let mut plan = self.lss_plan_unchecked()?;
        let s = self.lss.as_ref().expect("checked above");
        plan.law = s.law.build(s.n).map_err(config_err)?;
        Ok(plan)
    }

    pub fn gp_section(&self) -> Result<(&GpSection, GridSpec, AspectRatio)> {
        let s = self.gp.as_ref().ok_or_else(|| missing("gp"))?;
        let y = AspectRatio::new(s.y).map_err(config_err)?;
        let pairs = s.pairs.iter().map(AnglePairConfig::build).collect::<Result<Vec<_>>>().map_err(config_err)?;
        let grid = GridSpec { pairs, shifts: shifts(&s.sigma, &[]) };
        grid.validate(&MpLaw::new(y)).map_err(config_err)?;
        if s.count < 2 {
            return Err(Error::Config("gp.count must be at least 2".into()));
        }
        if s.count.saturating_mul(grid.len()) > 100_000_000 {
            return Err(Error::Config("gp.count × grid size exceeds 1e8".into()));
        }
        Ok((s, grid, y))
    }

    /// Explicit `workers`, else the environment variable, else 1.
    pub fn resolve_workers(&self, env: Option<&str>) -> Result<usize> {
        if let Some(w) = self.workers {
            return Ok(w);
        }
        match env {
            None => Ok(1),
            Some(v) => match v.trim().parse::<usize>() {
                Ok(w) if w > 0 => Ok(w),
                _ => Err(Error::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
            },
        }
    }

    /// All seeds that influence the output.
    pub fn seeds(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let frame_seed = |f: &FrameConfig| f.seed;
        match self.command {
            Command::Simulate => {
                if let Some(s) = &self.experiment {
                    out.push(s.seed);
                    out.extend(frame_seed(&s.frame));
                }
            }
            Command::Lss => {
                if let Some(s) = &self.lss {
                    out.push(s.seed);
                    out.extend(frame_seed(&s.frame));
                }
            }
            Command::Gp => out.extend(self.gp.as_ref().map(|g| g.seed)),
            Command::Law | Command::Kernel => {}
        }
        out
    }
}

fn check_dims(p: usize, n: usize, replications: usize) -> Result<()> {
    if p == 0 || n == 0 {
        return Err(Error::Config("p and n must be positive".into()));
    }
    if p.saturating_mul(n) > 50_000_000 {
        return Err(Error::Config(format!("p × n = {p} × {n} is too large")));
    }
    if replications < 2 {
        return Err(Error::Config(format!("replications = {replications}; at least 2 are required")));
    }
    Ok(())
}

fn check_truncated(law: &LawConfig) -> Result<()> {
    if let LawConfig::Truncated { base, epsilon } = law {
        if let Some(e) = epsilon {
            if !(e.is_finite() && *e > 0.0) {
                return Err(Error::Config(format!("epsilon = {e} must be positive")));
            }
        }
        match base {
            BaseLaw::StudentT { dof } if !(dof.is_finite() && *dof > 0.0) => {
                return Err(Error::Config(format!("Student-t dof {dof} must be positive")));
            }
            BaseLaw::Constant { value } if !value.is_finite() => {
                return Err(Error::Config("constant must be finite".into()));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.config.validate()?;
        if m.workers == 0 {
            return Err(Error::Config("manifest workers must be positive".into()));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
