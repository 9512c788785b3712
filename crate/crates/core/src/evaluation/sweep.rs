use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::coupling::{coupling_experiment, CouplingSettings};
use super::rollout::{discounted_horizon, rollout_discounted, rollout_ergodic, DiscountedRollout, ErgodicRollout, GridPolicy, RolloutEstimate};
use crate::error::{Error, Result};
use crate::mdp::{
    assemble_mdp, build_action_net, build_grid, default_counts, estimate_kernel_mc, estimate_kernel_quadrature_1d,
    ActionNet, Grid, SampledMdp, TransitionKernel,
};
use crate::rng::RandomSource;
use crate::sde::{BoxRegion, DiffusionModel, FeedbackPolicy};
use crate::solvers::{relative_value_iteration, value_iteration};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelEstimator {
    MonteCarlo { samples: usize, substeps: usize },
    /// Closed-form Gaussian integration of one Euler step (d = 1 only).
    Quadrature,
}

impl KernelEstimator {
    pub fn samples(&self) -> usize {
        match self {
            KernelEstimator::MonteCarlo { samples, .. } => *samples,
            KernelEstimator::Quadrature => 0,
        }
    }
}

/// Grid over `bounds`; without explicit counts the spacing follows
/// `σ_min·√h/2` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: BoxRegion,
    pub counts: Option<Vec<usize>>,
}

impl GridSpec {
    pub fn build(&self, model: &DiffusionModel, h: f64) -> Result<Grid> {
        let counts = match &self.counts {
            Some(c) => c.clone(),
            None => default_counts(&self.bounds, (2.0 * model.constants.nondegeneracy_floor).sqrt(), h),
        };
        build_grid(&self.bounds, &counts)
    }
}

/// Builds the kernel for one sampling period.
pub fn build_kernel(
    model: &DiffusionModel,
    grid: &Grid,
    actions: &ActionNet,
    h: f64,
    estimator: KernelEstimator,
    rng: RandomSource,
) -> Result<TransitionKernel> {
    match estimator {
        KernelEstimator::MonteCarlo { samples, substeps } => estimate_kernel_mc(model, grid, actions, h, substeps, samples, rng),
        KernelEstimator::Quadrature => estimate_kernel_quadrature_1d(model, grid, actions, h),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedBudget {
    pub replications: usize,
    /// Truncation tolerance that fixes the horizon.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicBudget {
    pub replications: usize,
    pub horizon: f64,
    pub burn_in: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingBudget {
    pub replications: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub alpha: f64,
    pub x0: Vec<f64>,
    /// Strictly decreasing; the last entry is the reference.
    pub h_list: Vec<f64>,
    pub grid: GridSpec,
    pub action_counts: Vec<usize>,
    pub estimator: KernelEstimator,
    pub vi_tol: f64,
    pub rvi_tol: f64,
    /// Euler step is `h_min / dt_divisor` for every rollout.
    pub dt_divisor: usize,
    pub discounted: Option<DiscountedBudget>,
    pub ergodic: Option<ErgodicBudget>,
    pub coupling: Option<CouplingBudget>,
    /// Write wall-clock seconds into `runtime_s`; zero otherwise.
    pub record_runtime: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: f64,
    pub grid_n: usize,
    pub actions_m: usize,
    pub samples: usize,
    pub j_star_x0: f64,
    pub rho_h: f64,
    pub rollout_disc: Option<RolloutEstimate>,
    pub rollout_erg: Option<RolloutEstimate>,
    /// `|J*_h(x0) − J*_{h_min}(x0)|`.
    pub gap_vs_ref: f64,
    pub coupling_z: Option<f64>,
    pub runtime_s: f64,
    pub master_seed: u64,
    pub max_row_deviation: f64,
    pub vi_iterations: usize,
    pub rvi_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub cost_bound: f64,
}

pub const SWEEP_HEADER: &str = "h,grid_n,actions_m,samples,J_star_x0,rho_h,rollout_disc_mean,rollout_disc_se,rollout_erg_mean,rollout_erg_se,gap_vs_ref,coupling_Z,runtime_s,master_seed";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.h,
                r.grid_n,
                r.actions_m,
                r.samples,
                r.j_star_x0,
                r.rho_h,
                opt(r.rollout_disc.as_ref().map(|e| e.mean)),
                opt(r.rollout_disc.as_ref().map(|e| e.std_error)),
                opt(r.rollout_erg.as_ref().map(|e| e.mean)),
                opt(r.rollout_erg.as_ref().map(|e| e.std_error)),
                r.gap_vs_ref,
                opt(r.coupling_z),
                r.runtime_s,
                r.master_seed,
            ));
        }
        out
    }
}

/// Everything solved at one sampling period.
pub struct SolvedLevel {
    pub grid: Grid,
    pub actions: ActionNet,
    pub mdp: SampledMdp,
    pub discounted: crate::solvers::ValueSolution,
    pub discounted_policy: crate::solvers::Policy,
    pub ergodic: crate::solvers::ValueSolution,
    pub ergodic_policy: crate::solvers::Policy,
}

/// Kernel → MDP → value iteration and relative value iteration at one `h`.
pub fn solve_level(model: &DiffusionModel, settings: &SweepSettings, h: f64, rng: RandomSource) -> Result<SolvedLevel> {
    let grid = settings.grid.build(model, h)?;
    let actions = build_action_net(&model.control_box, &settings.action_counts)?;
    let kernel = build_kernel(model, &grid, &actions, h, settings.estimator, rng)?;
    let mdp = assemble_mdp(model, kernel, settings.alpha)?;
    let (discounted, discounted_policy) = value_iteration(&mdp, settings.vi_tol)?;
    let anchor = grid.nearest_node(&settings.x0);
    let (ergodic, ergodic_policy) = relative_value_iteration(&mdp, settings.rvi_tol, anchor)?;
    Ok(SolvedLevel {
        grid,
        actions,
        mdp,
        discounted,
        discounted_policy,
        ergodic,
        ergodic_policy,
    })
}

fn check_settings(model: &DiffusionModel, s: &SweepSettings) -> Result<()> {
    if s.h_list.is_empty() || s.h_list.windows(2).any(|w| !(w[0] > w[1])) || s.h_list.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Config("h_list must be positive and strictly decreasing".into()));
    }
    if s.x0.len() != model.dim {
        return Err(Error::Config(format!("x0 has length {} but the model is {}-d", s.x0.len(), model.dim)));
    }
    if !(s.alpha > 0.0) || !(s.vi_tol > 0.0) || !(s.rvi_tol > 0.0) || s.dt_divisor == 0 {
        return Err(Error::Config("alpha, tolerances and dt_divisor must be positive".into()));
    }
    Ok(())
}

/// For each `h`: estimate the kernel, solve both criteria, and roll the
/// extracted policies out on the diffusion. Gaps are taken against the last
/// (finest) `h`. Coupling, when requested, uses `lipschitz_policy`.
pub fn value_convergence_sweep(
    model: &DiffusionModel,
    settings: &SweepSettings,
    lipschitz_policy: Option<&dyn FeedbackPolicy>,
    rng: RandomSource,
) -> Result<SweepTable> {
    check_settings(model, settings)?;
    let h_min = *settings.h_list.last().expect("nonempty");
    let dt = h_min / settings.dt_divisor as f64;
    let coupling = match (settings.coupling, lipschitz_policy) {
        (Some(budget), Some(policy)) => {
            let cs = CouplingSettings {
                h_list: settings.h_list.clone(),
                horizon: budget.horizon,
                dt,
                replications: budget.replications,
            };
            Some(coupling_experiment(model, policy, &settings.x0, &cs, rng.derive(0x400))?)
        }
        (Some(_), None) => return Err(Error::Config("coupling requested without a feedback policy".into())),
        _ => None,
    };

    let mut rows = Vec::with_capacity(settings.h_list.len());
    for (idx, &h) in settings.h_list.iter().enumerate() {
        let started = Instant::now();
        let tag = idx as u64;
        let level = solve_level(model, settings, h, rng.derive(0x100 + tag)).map_err(|e| e.context(format!("sweep at h = {h}")))?;
        let j_star_x0 = level.grid.interpolate(&level.discounted.values, &settings.x0);
        let rho_h = level.ergodic.gain.expect("ergodic solution carries a gain");

        let rollout_disc = match settings.discounted {
            Some(b) => {
                let policy = GridPolicy::new(level.grid.clone(), level.actions.clone(), level.discounted_policy.clone())?;
                let ds = DiscountedRollout {
                    alpha: settings.alpha,
                    horizon: discounted_horizon(model.constants.bound_c, settings.alpha, b.tolerance),
                    dt,
                    period: h,
                    replications: b.replications,
                    tolerance: Some(b.tolerance),
                };
                Some(rollout_discounted(model, &policy, &settings.x0, &ds, rng.derive(0x200 + tag)).map_err(|e| e.context(format!("discounted rollout at h = {h}")))?)
            }
            None => None,
        };
        let rollout_erg = match settings.ergodic {
            Some(b) => {
                let policy = GridPolicy::new(level.grid.clone(), level.actions.clone(), level.ergodic_policy.clone())?;
                let es = ErgodicRollout {
                    horizon: b.horizon,
                    burn_in: b.burn_in,
                    dt,
                    period: h,
                    replications: b.replications,
                };
                Some(rollout_ergodic(model, &policy, &settings.x0, &es, rng.derive(0x300 + tag)).map_err(|e| e.context(format!("ergodic rollout at h = {h}")))?)
            }
            None => None,
        };
        let runtime_s = if settings.record_runtime {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        log::info!("h = {h}: J*(x0) = {j_star_x0}, rho = {rho_h}");
        rows.push(SweepRow {
            h,
            grid_n: level.grid.len(),
            actions_m: level.actions.len(),
            samples: settings.estimator.samples(),
            j_star_x0,
            rho_h,
            rollout_disc,
            rollout_erg,
            gap_vs_ref: 0.0,
            coupling_z: coupling.as_ref().map(|c| c.rows[idx].z),
            runtime_s,
            master_seed: rng.master_seed,
            max_row_deviation: level.mdp.kernel.meta.max_row_deviation,
            vi_iterations: level.discounted.iterations,
            rvi_iterations: level.ergodic.iterations,
        });
    }
    let reference = rows.last().expect("nonempty").j_star_x0;
    for r in &mut rows {
        r.gap_vs_ref = (r.j_star_x0 - reference).abs();
    }
    Ok(SweepTable {
        rows,
        cost_bound: model.constants.bound_c,
    })
}
