//! Subcommand bodies. Each is a pure function of the config and the master
//! seed, apart from the wall-clock fields of the manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{certificate_from, EstimatorName, LoadedConfig};
use super::registry::Benchmark;
use crate::error::{Error, Result};
use crate::evaluation::{
    build_kernel, coupling_experiment, invariant_measure_sweep, value_convergence_sweep, CouplingSettings, InvariantSettings,
    KernelEstimator,
};
use crate::lyapunov::{
    check_continuous_drift, check_discrete_drift, CertificateShapeReport, ContinuousDriftReport, DiscreteDriftReport,
    LyapunovCertificate,
};
use crate::mdp::{assemble_mdp, build_action_net, build_grid, SampledMdp, TransitionKernel};
use crate::rng::RandomSource;
use crate::solvers::{relative_value_iteration, value_iteration, SolutionRecord};

/// Stream tag shared with the sweep, so `build-kernel` and `sweep` produce
/// the same kernel for the same `h`.
const KERNEL_TAG: u64 = 0x100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveKind {
    Discounted,
    Average,
}

/// Common invocation parameters.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: LoadedConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Invocation {
    pub fn new(config: LoadedConfig, seed_override: Option<u64>, out_override: Option<&Path>) -> Self {
        let seed = seed_override.unwrap_or(config.config.master_seed);
        let out = config.output_dir(out_override);
        Self { config, seed, out }
    }

    fn rng(&self) -> RandomSource {
        RandomSource::new(self.seed, 0)
    }

    fn write(&self, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        std::fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T, written: &mut Vec<PathBuf>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text, written)
    }

    fn finish(&self, command: &str, started: Instant, mut written: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
        let manifest = Manifest {
            command: command.to_string(),
            config: self.config.path.display().to_string(),
            config_sha256: hex::encode(Sha256::digest(self.config.text.as_bytes())),
            master_seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: written
                .iter()
                .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
                .collect(),
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        self.write_json("manifest.json", &manifest, &mut written)?;
        Ok(written)
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    config: String,
    config_sha256: String,
    master_seed: u64,
    version: String,
    outputs: Vec<String>,
    elapsed_s: f64,
}

/// `kernel_<h>.json` style names.
fn tagged(prefix: &str, h: f64, ext: &str) -> String {
    format!("{prefix}_{h}.{ext}")
}

fn kernel_for(inv: &Invocation, bench: &Benchmark, idx: usize, h: f64) -> Result<TransitionKernel> {
    let grid = inv.config.grid_spec(bench)?.build(&bench.model, h)?;
    let actions = build_action_net(&bench.model.control_box, &inv.config.action_counts(bench))?;
    let estimator = inv.config.config.kernel.estimator();
    build_kernel(&bench.model, &grid, &actions, h, estimator, inv.rng().derive(KERNEL_TAG + idx as u64))
        .map_err(|e| e.context(format!("kernel at h = {h}")))
}

/// Writes one kernel exchange file per `h` and logs the row-sum audit.
pub fn build_kernels(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let bench = inv.config.benchmark()?;
    let mut written = Vec::new();
    for (idx, &h) in inv.config.config.h_list.iter().enumerate() {
        let kernel = kernel_for(inv, &bench, idx, h)?;
        log::info!(
            "h = {h}: {} nodes x {} actions, max |row sum - 1| before renormalization = {:e}",
            kernel.n_nodes,
            kernel.n_actions,
            kernel.meta.max_row_deviation
        );
        std::fs::create_dir_all(&inv.out)?;
        let path = inv.out.join(tagged("kernel", h, "json"));
        kernel.save(&path)?;
        written.push(path);
    }
    inv.finish("build-kernel", started, written)
}

/// MDPs to solve: the configured kernel file, or one estimated kernel per `h`.
fn mdps(inv: &Invocation) -> Result<Vec<(SampledMdp, Option<Vec<f64>>)>> {
    let cfg = &inv.config.config;
    if let Some(file) = inv.config.kernel_file() {
        let kernel = TransitionKernel::load(&file).map_err(|e| e.context(format!("kernel.file {}", file.display())))?;
        let mdp = match &cfg.kernel.cost_table {
            Some(table) => SampledMdp::from_tables(kernel, table, cfg.alpha)?,
            None => {
                let bench = inv.config.benchmark()?;
                assemble_mdp(&bench.model, kernel, cfg.alpha)?
            }
        };
        return Ok(vec![(mdp, cfg.x0.clone())]);
    }
    let bench = inv.config.benchmark()?;
    let x0 = inv.config.x0(&bench)?;
    cfg.h_list
        .iter()
        .enumerate()
        .map(|(idx, &h)| Ok((assemble_mdp(&bench.model, kernel_for(inv, &bench, idx, h)?, cfg.alpha)?, Some(x0.clone()))))
        .collect()
}

/// Solves every MDP and writes `solution_<kind>_<h>.json`.
pub fn solve(inv: &Invocation, kind: SolveKind) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let cfg = &inv.config.config;
    let mut written = Vec::new();
    for (mdp, x0) in mdps(inv)? {
        let h = mdp.h;
        let (record, name) = match kind {
            SolveKind::Discounted => {
                let (sol, policy) = value_iteration(&mdp, cfg.solver.vi_tol)?;
                (SolutionRecord::new(&mdp, &sol, &policy), tagged("solution_discounted", h, "json"))
            }
            SolveKind::Average => {
                let anchor = match (mdp.grid(), x0) {
                    (Some(g), Some(x)) if x.len() == g.dim() => g.nearest_node(&x),
                    _ => 0,
                };
                let (sol, policy) = relative_value_iteration(&mdp, cfg.solver.rvi_tol, anchor)?;
                (SolutionRecord::new(&mdp, &sol, &policy), tagged("solution_average", h, "json"))
            }
        };
        log::info!("h = {h}: solved in {} iterations (residual {:e})", record.iterations, record.residual);
        std::fs::create_dir_all(&inv.out)?;
        let path = inv.out.join(name);
        record.save(&path)?;
        written.push(path);
    }
    inv.finish("solve", started, written)
}

/// Runs the value-convergence sweep and writes `sweep.csv`.
pub fn sweep(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let bench = inv.config.benchmark()?;
    let settings = inv.config.sweep_settings(&bench)?;
    let table = value_convergence_sweep(&bench.model, &settings, Some(&bench.feedback), inv.rng())?;
    let mut written = Vec::new();
    inv.write("sweep.csv", &table.to_csv(), &mut written)?;
    inv.finish("sweep", started, written)
}

pub const ROLLOUT_HEADER: &str = "h,criterion,optimal,rollout_mean,rollout_se,allowance,within";

/// Rolls the discounted and average-cost policies out on the diffusion and
/// compares them with the chain's optimal values: the discounted rollout is
/// allowed `bound_c·h + 3·se + truncation`, the long-run average
/// `3·se + 0.1·bound_c·√h`.
pub fn rollout(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    if inv.config.config.rollout.is_none() {
        return Err(Error::Config("rollout: the [rollout] section is required".into()));
    }
    let bench = inv.config.benchmark()?;
    let mut settings = inv.config.sweep_settings(&bench)?;
    settings.coupling = None;
    let table = value_convergence_sweep(&bench.model, &settings, None, inv.rng())?;
    let bound_c = table.cost_bound;
    let mut csv = String::from(ROLLOUT_HEADER);
    csv.push('\n');
    for r in &table.rows {
        if let Some(d) = &r.rollout_disc {
            let allowance = bound_c * r.h + 3.0 * d.std_error + d.truncation_bound;
            let within = (d.mean - r.j_star_x0).abs() <= allowance;
            csv.push_str(&format!("{},discounted,{},{},{},{},{}\n", r.h, r.j_star_x0, d.mean, d.std_error, allowance, within));
        }
        if let Some(e) = &r.rollout_erg {
            let allowance = 3.0 * e.std_error + 0.1 * bound_c * r.h.sqrt();
            let within = (e.mean - r.rho_h).abs() <= allowance;
            csv.push_str(&format!("{},average,{},{},{},{},{}\n", r.h, r.rho_h, e.mean, e.std_error, allowance, within));
        }
    }
    let mut written = Vec::new();
    inv.write("rollout.csv", &csv, &mut written)?;
    inv.finish("rollout", started, written)
}

/// Synchronous coupling under the benchmark's Lipschitz feedback; writes
/// `coupling.csv` and `coupling.json`.
pub fn coupling(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let cfg = &inv.config.config;
    let section = cfg
        .coupling
        .as_ref()
        .ok_or_else(|| Error::Config("coupling: the [coupling] section is required".into()))?;
    let bench = inv.config.benchmark()?;
    let x0 = inv.config.x0(&bench)?;
    let dt_divisor = cfg.rollout.as_ref().map_or(16, |r| r.dt_divisor);
    let h_min = *cfg.h_list.last().expect("validated nonempty");
    let settings = CouplingSettings {
        h_list: cfg.h_list.clone(),
        horizon: section.horizon,
        dt: h_min / dt_divisor as f64,
        replications: section.replications,
    };
    // same stream family as the sweep's coupling column
    let table = coupling_experiment(&bench.model, &bench.feedback, &x0, &settings, inv.rng().derive(0x400))?;
    let mut written = Vec::new();
    inv.write("coupling.csv", &table.to_csv(), &mut written)?;
    inv.write_json("coupling.json", &table, &mut written)?;
    inv.finish("coupling", started, written)
}

#[derive(Debug, Serialize)]
pub struct LyapunovReport {
    pub certificate: String,
    /// Nonnegativity and interior-minimum flags on the model grid.
    pub shape: Option<CertificateShapeReport>,
    pub continuous: Option<ContinuousDriftReport>,
    pub discrete: Vec<DiscreteDriftReport>,
    pub pass: bool,
}

/// Continuous drift on the grid × action net (when a model is given),
/// discrete drift on every kernel, and the invariant-measure sweep when
/// `[invariant]` is present. Writes `lyapunov.json` (and `invariant.csv`).
pub fn lyapunov(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let cfg = &inv.config.config;
    let bench = match cfg.model {
        Some(_) => Some(inv.config.benchmark()?),
        None => None,
    };
    let cert: LyapunovCertificate = match (&bench, &cfg.certificate) {
        (Some(b), _) => b.certificate.clone(),
        (None, Some(c)) => certificate_from(c)?,
        (None, None) => return Err(Error::Config("certificate: needed when no model is given".into())),
    };
    let (shape, continuous) = match &bench {
        Some(b) => {
            let h_min = *cfg.h_list.last().expect("validated nonempty");
            let grid = inv.config.grid_spec(b)?.build(&b.model, h_min)?;
            let actions = build_action_net(&b.model.control_box, &inv.config.action_counts(b))?;
            (
                Some(cert.shape_report(&grid)),
                Some(check_continuous_drift(&b.model, &cert, &grid.nodes(), &actions)),
            )
        }
        None => (None, None),
    };
    let kernels: Vec<TransitionKernel> = match inv.config.kernel_file() {
        Some(file) => vec![TransitionKernel::load(&file).map_err(|e| e.context(format!("kernel.file {}", file.display())))?],
        None => {
            let b = bench.as_ref().expect("model or kernel file is validated");
            cfg.h_list
                .iter()
                .enumerate()
                .map(|(idx, &h)| kernel_for(inv, b, idx, h))
                .collect::<Result<_>>()?
        }
    };
    let discrete = kernels.iter().map(|k| check_discrete_drift(k, &cert)).collect::<Result<Vec<_>>>()?;
    let pass = continuous.as_ref().is_none_or(|c| c.pass) && discrete.iter().all(|d| d.pass);
    for d in &discrete {
        log::info!("h = {}: discrete drift {} (C0_hat = {:e})", d.h, if d.pass { "feasible" } else { "infeasible" }, d.c0_hat);
    }
    let report = LyapunovReport {
        certificate: cert.name.clone(),
        shape,
        continuous,
        discrete,
        pass,
    };
    let mut written = Vec::new();
    inv.write_json("lyapunov.json", &report, &mut written)?;

    if let Some(section) = &cfg.invariant {
        let b = bench.as_ref().ok_or_else(|| Error::Config("invariant: needs a model".into()))?;
        let spec = inv.config.grid_spec(b)?;
        let h_min = *cfg.h_list.last().expect("validated nonempty");
        let settings = InvariantSettings {
            h_list: cfg.h_list.clone(),
            grid: build_grid(&spec.bounds, &section.counts)?,
            estimator: match section.estimator {
                EstimatorName::MonteCarlo => KernelEstimator::MonteCarlo {
                    samples: section.samples,
                    substeps: section.substeps,
                },
                EstimatorName::Quadrature => KernelEstimator::Quadrature,
            },
            power_tol: section.power_tol,
            x0: inv.config.x0(b)?,
            horizon: section.horizon,
            paths: section.paths,
            burn_in: section.burn_in,
            dt: h_min / cfg.rollout.as_ref().map_or(16, |r| r.dt_divisor) as f64,
            spacing: section.spacing,
        };
        let table = invariant_measure_sweep(&b.model, &b.feedback, &settings, inv.rng())?;
        inv.write("invariant.csv", &table.to_csv(), &mut written)?;
    }
    inv.finish("lyapunov", started, written)
}
