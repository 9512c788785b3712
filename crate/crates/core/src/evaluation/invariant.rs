use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use super::sweep::KernelEstimator;
use crate::lyapunov::{bl_distance, pooled_invariant_measure, stationary_distribution_on, BlDictionary, DEFAULT_POWER_ITERATIONS};
use crate::mdp::{estimate_policy_kernel, estimate_policy_kernel_quadrature_1d, Grid};
use crate::rng::RandomSource;
use crate::sde::{DiffusionModel, FeedbackPolicy};
use crate::solvers::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSettings {
    pub h_list: Vec<f64>,
    /// Fixed grid shared by every `h`.
    pub grid: Grid,
    pub estimator: KernelEstimator,
    pub power_tol: f64,
    pub x0: Vec<f64>,
    /// Reference trajectories for the diffusion's invariant measure, each of
    /// length `horizon`; their occupation measures are pooled.
    pub horizon: f64,
    pub paths: usize,
    pub burn_in: f64,
    pub dt: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantRow {
    pub h: f64,
    pub grid_n: usize,
    pub bl_distance: f64,
    pub unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantTable {
    pub rows: Vec<InvariantRow>,
    pub reference_samples: usize,
    /// Distances never increase as `h` decreases.
    pub nonincreasing: bool,
}

impl InvariantTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,grid_n,bl_distance,unique\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.h, r.grid_n, r.bl_distance, r.unique));
        }
        out
    }
}

/// Bounded-Lipschitz distance between the chain's stationary distribution
/// under `policy` (kernel estimated per `h` on a fixed grid) and the
/// long-run occupation measure of the diffusion under the same feedback.
pub fn invariant_measure_sweep(
    model: &DiffusionModel,
    policy: &dyn FeedbackPolicy,
    settings: &InvariantSettings,
    rng: RandomSource,
) -> Result<InvariantTable> {
    let grid = &settings.grid;
    if settings.h_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Config("h_list must be strictly decreasing".into()));
    }
    let bounds = grid.bounds.clone();
    let dictionary = BlDictionary::standard(&bounds);
    let reference = pooled_invariant_measure(
        model,
        policy,
        &settings.x0,
        settings.horizon,
        settings.burn_in,
        settings.dt,
        settings.spacing,
        settings.paths,
        bounds.clone(),
        rng.derive(0x500),
    )?;
    let points = grid.nodes().concat();
    let mut rows = Vec::with_capacity(settings.h_list.len());
    for (idx, &h) in settings.h_list.iter().enumerate() {
        let kernel = match settings.estimator {
            KernelEstimator::MonteCarlo { samples, substeps } => {
                estimate_policy_kernel(model, grid, policy, h, substeps, samples, rng.derive(0x600 + idx as u64))
            }
            KernelEstimator::Quadrature => estimate_policy_kernel_quadrature_1d(model, grid, policy, h),
        }
        .map_err(|e| e.context(format!("policy kernel at h = {h}")))?;
        let mu = stationary_distribution_on(
            &kernel,
            points.clone(),
            bounds.clone(),
            &Policy::constant(grid.len(), 0),
            settings.power_tol,
            DEFAULT_POWER_ITERATIONS,
        )
        .map_err(|e| e.context(format!("stationary distribution at h = {h}")))?;
        rows.push(InvariantRow {
            h,
            grid_n: grid.len(),
            bl_distance: bl_distance(&mu, &reference, &dictionary)?,
            unique: mu.unique,
        });
    }
    let nonincreasing = rows.windows(2).all(|w| w[1].bl_distance <= w[0].bl_distance);
    Ok(InvariantTable {
        rows,
        reference_samples: reference.len(),
        nonincreasing,
    })
}
