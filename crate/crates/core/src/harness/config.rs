//! TOML experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::registry::{benchmark_from_spec, cosh_certificate, lookup, Benchmark, TanhModelSpec};
use crate::error::{Error, Result};
use crate::evaluation::{CouplingBudget, DiscountedBudget, ErgodicBudget, GridSpec, KernelEstimator, SweepSettings};
use crate::lyapunov::{CertificateShape, LyapunovCertificate};
use crate::sde::BoxRegion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Id(String),
    Inline(InlineModel),
}

/// Tanh-family model declared in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub control: [f64; 2],
    pub sigma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub constant_cost: bool,
    /// Computational box `[lower, upper]` on every axis.
    pub domain: [f64; 2],
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSection {
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    MonteCarlo,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorName,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Precomputed kernel exchange file, relative to the config file.
    pub file: Option<PathBuf>,
    /// Running cost `c[node][action]` for a kernel file without a model.
    pub cost_table: Option<Vec<Vec<f64>>>,
}

fn default_estimator() -> EstimatorName {
    EstimatorName::MonteCarlo
}
fn default_samples() -> usize {
    10_000
}
fn default_substeps() -> usize {
    4
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            estimator: default_estimator(),
            samples: default_samples(),
            substeps: default_substeps(),
            file: None,
            cost_table: None,
        }
    }
}

impl KernelSection {
    pub fn estimator(&self) -> KernelEstimator {
        match self.estimator {
            EstimatorName::MonteCarlo => KernelEstimator::MonteCarlo {
                samples: self.samples,
                substeps: self.substeps,
            },
            EstimatorName::Quadrature => KernelEstimator::Quadrature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub vi_tol: f64,
    #[serde(default = "default_tol")]
    pub rvi_tol: f64,
}

fn default_tol() -> f64 {
    1e-8
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            vi_tol: default_tol(),
            rvi_tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    #[serde(default = "default_dt_divisor")]
    pub dt_divisor: usize,
    pub replications: usize,
    /// Truncation tolerance for the discounted horizon.
    pub tolerance: f64,
    pub ergodic_replications: usize,
    pub ergodic_horizon: f64,
    pub burn_in: f64,
}

fn default_dt_divisor() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub replications: usize,
    /// `N·h`, the common time horizon of every level.
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    pub shape: ShapeName,
    /// `cosh` only; defaults to ½.
    pub scale: Option<f64>,
    pub c0: f64,
    pub c1: f64,
    pub k_lower: Vec<f64>,
    pub k_upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Cosh,
    Quadratic,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantSection {
    /// Fixed grid counts shared by every `h`; the box is the `[grid]` box.
    pub counts: Vec<usize>,
    #[serde(default = "quadrature")]
    pub estimator: EstimatorName,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_power_tol")]
    pub power_tol: f64,
    pub horizon: f64,
    #[serde(default = "one")]
    pub paths: usize,
    pub burn_in: f64,
    pub spacing: f64,
}

fn quadrature() -> EstimatorName {
    EstimatorName::Quadrature
}
fn default_power_tol() -> f64 {
    1e-12
}

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<ModelRef>,
    pub alpha: f64,
    pub x0: Option<Vec<f64>>,
    pub h_list: Vec<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub record_runtime: bool,
    pub grid: Option<GridSection>,
    pub actions: Option<ActionSection>,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub rollout: Option<RolloutSection>,
    pub coupling: Option<CouplingSection>,
    pub certificate: Option<CertificateSection>,
    pub invariant: Option<InvariantSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    /// Raw file bytes, hashed into manifests.
    pub text: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = Self::parse(&text).map_err(|e| e.context(path.display().to_string()))?;
        let loaded = LoadedConfig {
            config,
            path: path.to_path_buf(),
            text,
        };
        if let Some(file) = loaded.kernel_file() {
            if !file.is_file() {
                return Err(Error::Config(format!("kernel.file: {} does not exist", file.display())));
            }
        }
        Ok(loaded)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.h_list.is_empty() {
            return bad("h_list: at least one sampling period is required".into());
        }
        if let Some(h) = self.h_list.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return bad(format!("h_list: {h} is not a positive period"));
        }
        if self.h_list.windows(2).any(|w| !(w[0] > w[1])) {
            return bad(format!("h_list: {:?} must be strictly decreasing", self.h_list));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha: {} must be positive", self.alpha));
        }
        for (key, tol) in [("solver.vi_tol", self.solver.vi_tol), ("solver.rvi_tol", self.solver.rvi_tol)] {
            if !(tol > 0.0 && tol.is_finite()) {
                return bad(format!("{key}: {tol} must be positive"));
            }
        }
        if self.kernel.estimator == EstimatorName::MonteCarlo && (self.kernel.samples == 0 || self.kernel.substeps == 0) {
            return bad("kernel: samples and substeps must be positive".into());
        }
        if self.kernel.cost_table.is_some() && self.kernel.file.is_none() {
            return bad("kernel.cost_table needs kernel.file".into());
        }
        if self.model.is_none() && self.kernel.file.is_none() {
            return bad("model: required unless kernel.file is given".into());
        }
        if let Some(r) = &self.rollout {
            if r.dt_divisor == 0 || !(r.tolerance > 0.0) || r.replications == 0 || r.ergodic_replications == 0 {
                return bad("rollout: dt_divisor, tolerance and replication counts must be positive".into());
            }
            if !(r.burn_in >= 0.0 && r.burn_in < r.ergodic_horizon) {
                return bad("rollout: burn_in must lie in [0, ergodic_horizon)".into());
            }
        }
        if let Some(c) = &self.coupling {
            if c.replications == 0 || !(c.horizon > 0.0) {
                return bad("coupling: replications and horizon must be positive".into());
            }
        }
        if let Some(inv) = &self.invariant {
            if !(inv.power_tol > 0.0) || inv.paths == 0 || !(inv.spacing > 0.0) || !(inv.burn_in >= 0.0 && inv.burn_in < inv.horizon) {
                return bad("invariant: power_tol, paths and spacing must be positive and burn_in in [0, horizon)".into());
            }
        }
        if let Some(c) = &self.certificate {
            if !(c.c0 > 0.0 && c.c1 > 0.0) {
                return bad("certificate: c0 and c1 must be positive".into());
            }
        }
        Ok(())
    }
}

impl LoadedConfig {
    fn relative(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn kernel_file(&self) -> Option<PathBuf> {
        self.config.kernel.file.as_deref().map(|p| self.relative(p))
    }

    /// Output directory: `override_dir` if given, else `output_dir` relative
    /// to the config file.
    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        match override_dir {
            Some(p) => p.to_path_buf(),
            None => self.relative(&self.config.output_dir),
        }
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        let model = self
            .config
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("model: this command needs a model".into()))?;
        let mut bench = match model {
            ModelRef::Id(id) => lookup(id)?,
            ModelRef::Inline(m) => {
                let spec = TanhModelSpec {
                    dim: m.dim,
                    kappa: m.kappa,
                    gamma: m.gamma,
                    control: m.control,
                    sigma: m.sigma,
                    lambda: m.lambda,
                    constant_cost: m.constant_cost,
                };
                let domain = BoxRegion::new(vec![m.domain[0]; m.dim], vec![m.domain[1]; m.dim])
                    .map_err(|e| e.context("model.domain"))?;
                let cert = match &self.config.certificate {
                    Some(c) => certificate_from(c)?,
                    None => cosh_certificate(m.dim),
                };
                benchmark_from_spec(&m.name, spec, domain, cert)?
            }
        };
        if let Some(c) = &self.config.certificate {
            bench.certificate = certificate_from(c)?;
        }
        Ok(bench)
    }

    pub fn x0(&self, bench: &Benchmark) -> Result<Vec<f64>> {
        let x0 = self.config.x0.clone().unwrap_or_else(|| bench.domain.center());
        if x0.len() != bench.model.dim {
            return Err(Error::Config(format!("x0: length {} but the model is {}-d", x0.len(), bench.model.dim)));
        }
        Ok(x0)
    }

    pub fn grid_spec(&self, bench: &Benchmark) -> Result<GridSpec> {
        match &self.config.grid {
            Some(g) => {
                let bounds = BoxRegion::new(g.lower.clone(), g.upper.clone()).map_err(|e| e.context("grid"))?;
                if bounds.dim() != bench.model.dim {
                    return Err(Error::Config(format!("grid: {}-d box for a {}-d model", bounds.dim(), bench.model.dim)));
                }
                Ok(GridSpec {
                    bounds,
                    counts: g.counts.clone(),
                })
            }
            None => Ok(GridSpec {
                bounds: bench.domain.clone(),
                counts: None,
            }),
        }
    }

    pub fn action_counts(&self, bench: &Benchmark) -> Vec<usize> {
        self.config
            .actions
            .as_ref()
            .map(|a| a.counts.clone())
            .unwrap_or_else(|| bench.action_counts.clone())
    }

    /// Sweep settings; budgets are present only for the sections given.
    pub fn sweep_settings(&self, bench: &Benchmark) -> Result<SweepSettings> {
        let c = &self.config;
        Ok(SweepSettings {
            alpha: c.alpha,
            x0: self.x0(bench)?,
            h_list: c.h_list.clone(),
            grid: self.grid_spec(bench)?,
            action_counts: self.action_counts(bench),
            estimator: c.kernel.estimator(),
            vi_tol: c.solver.vi_tol,
            rvi_tol: c.solver.rvi_tol,
            dt_divisor: c.rollout.as_ref().map_or(16, |r| r.dt_divisor),
            discounted: c.rollout.as_ref().map(|r| DiscountedBudget {
                replications: r.replications,
                tolerance: r.tolerance,
            }),
            ergodic: c.rollout.as_ref().map(|r| ErgodicBudget {
                replications: r.ergodic_replications,
                horizon: r.ergodic_horizon,
                burn_in: r.burn_in,
            }),
            coupling: c.coupling.as_ref().map(|k| CouplingBudget {
                replications: k.replications,
                horizon: k.horizon,
            }),
            record_runtime: c.record_runtime,
        })
    }
}

pub fn certificate_from(c: &CertificateSection) -> Result<LyapunovCertificate> {
    let k = BoxRegion::new(c.k_lower.clone(), c.k_upper.clone()).map_err(|e| e.context("certificate"))?;
    let shape = match (c.shape, c.scale) {
        (ShapeName::Cosh, scale) => CertificateShape::Cosh { scale: scale.unwrap_or(0.5) },
        (_, Some(_)) => return Err(Error::Config("certificate.scale applies to the cosh shape only".into())),
        (ShapeName::Quadratic, None) => CertificateShape::Quadratic,
        (ShapeName::Zero, None) => CertificateShape::Zero,
    };
    LyapunovCertificate::from_shape(shape, c.c0, c.c1, k).map_err(|e| e.context("certificate"))
}
