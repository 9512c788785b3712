//! The sampled-time controlled Markov chain as a finite MDP: grid, action net,
//! estimated `h`-step kernel, stage cost `c·h` and discount `e^{−αh}`.

mod actions;
mod grid;
mod kernel;

pub use actions::{build_action_net, ActionNet};
pub use grid::{build_grid, default_counts, Grid};
pub use kernel::{
    estimate_kernel_mc, estimate_kernel_quadrature_1d, estimate_policy_kernel, estimate_policy_kernel_quadrature_1d, gaussian_deposit_1d, EstimationMeta, EstimatorKind,
    KernelFile, Layout, SparseRow, TransitionKernel, KERNEL_FORMAT,
};

use crate::error::{Error, Result};
use crate::sde::DiffusionModel;

#[derive(Debug, Clone, PartialEq)]
pub struct SampledMdp {
    pub kernel: TransitionKernel,
    /// Node-major: `stage_cost[i * n_actions + a] = c(x_i, a)·h`.
    pub stage_cost: Vec<f64>,
    pub h: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Sup-norm bound on the running cost `c` (not on `c·h`).
    pub cost_bound: f64,
}

/// Attaches stage costs and the discount factor to an estimated kernel.
pub fn assemble_mdp(model: &DiffusionModel, kernel: TransitionKernel, alpha: f64) -> Result<SampledMdp> {
    let layout = kernel
        .layout
        .as_ref()
        .ok_or_else(|| Error::Assembly("kernel carries no grid/action layout".into()))?;
    if layout.grid.dim() != model.dim {
        return Err(Error::Assembly(format!(
            "kernel grid is {}-d but the model is {}-d",
            layout.grid.dim(),
            model.dim
        )));
    }
    if layout.actions.actions.iter().any(|a| a.len() != model.control_dim()) {
        return Err(Error::Assembly("action net does not match the model's control box".into()));
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Assembly(format!("discount rate {alpha} must be finite and nonnegative")));
    }
    let h = kernel.h;
    let n = kernel.n_nodes;
    let m = kernel.n_actions;
    let mut stage_cost = Vec::with_capacity(n * m);
    let mut x = vec![0.0; model.dim];
    for i in 0..n {
        layout.grid.coords_into(i, &mut x);
        for a in 0..m {
            stage_cost.push(model.cost(&x, layout.actions.get(a)) * h);
        }
    }
    Ok(SampledMdp {
        kernel,
        stage_cost,
        h,
        alpha,
        beta: (-alpha * h).exp(),
        cost_bound: model.constants.bound_c,
    })
}

impl SampledMdp {
    /// MDP from explicit tables: `running_cost[i][a]` is `c` (stage cost is `c·h`).
    pub fn from_tables(kernel: TransitionKernel, running_cost: &[Vec<f64>], alpha: f64) -> Result<Self> {
        let n = kernel.n_nodes;
        let m = kernel.n_actions;
        if running_cost.len() != n || running_cost.iter().any(|r| r.len() != m) {
            return Err(Error::Assembly(format!("cost table must be {n}×{m}")));
        }
        let h = kernel.h;
        let stage_cost = running_cost.iter().flatten().map(|c| c * h).collect();
        let cost_bound = running_cost.iter().flatten().fold(0.0f64, |acc, c| acc.max(c.abs()));
        Ok(Self {
            kernel,
            stage_cost,
            h,
            alpha,
            beta: (-alpha * h).exp(),
            cost_bound,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.kernel.n_nodes
    }

    pub fn n_actions(&self) -> usize {
        self.kernel.n_actions
    }

    #[inline]
    pub fn stage_cost(&self, node: usize, action: usize) -> f64 {
        self.stage_cost[node * self.kernel.n_actions + action]
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.kernel.grid()
    }

    pub fn actions(&self) -> Option<&ActionNet> {
        self.kernel.actions()
    }
}
