use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionNet, Grid};
use crate::rng::RandomSource;
use crate::sde::{simulate_with, Control, DiffusionModel, FeedbackPolicy};
use crate::solvers::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    pub horizon: f64,
    /// `bound_c·e^{−α·horizon}/α` for discounted estimates, 0 otherwise.
    pub truncation_bound: f64,
    /// The truncation bound exceeds the requested tolerance.
    pub truncation_warning: bool,
}

/// A grid policy extended off the grid by nearest-node lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPolicy {
    pub grid: Grid,
    pub actions: ActionNet,
    pub policy: Policy,
}

impl GridPolicy {
    pub fn new(grid: Grid, actions: ActionNet, policy: Policy) -> Result<Self> {
        if policy.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "policy covers {} nodes, grid has {}",
                policy.len(),
                grid.len()
            )));
        }
        Policy::new(policy.actions.clone(), actions.len())?;
        Ok(Self { grid, actions, policy })
    }
}

impl FeedbackPolicy for GridPolicy {
    fn action_into(&self, x: &[f64], out: &mut [f64]) {
        let a = self.policy.action(self.grid.nearest_node(x));
        out.copy_from_slice(self.actions.get(a));
    }
}

/// Horizon making the discounted truncation at most `tol/2`.
pub fn discounted_horizon(bound_c: f64, alpha: f64, tol: f64) -> f64 {
    (2.0 * bound_c / (alpha * tol)).ln().max(0.0) / alpha
}

pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `replications` independent paths (replication `r` on stream `r`) and
/// reduces in replication order.
fn replicate(replications: usize, rng: RandomSource, run: impl Fn(RandomSource) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    if replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is needed".into()));
    }
    (0..replications)
        .into_par_iter()
        .map(|r| run(rng.stream(r as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedRollout {
    pub alpha: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Decision period: actions are refreshed at multiples of `period`.
    pub period: f64,
    pub replications: usize,
    /// Truncation tolerance; `None` skips the warning flag.
    pub tolerance: Option<f64>,
}

/// Monte Carlo estimate of `E ∫₀^T e^{−αs} c(X_s, a(s)) ds` with actions
/// held on `[k·period, (k+1)·period)`. Each Euler step contributes its
/// left-endpoint cost times the exact discount integral over the step.
pub fn rollout_discounted(
    model: &DiffusionModel,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    settings: &DiscountedRollout,
    rng: RandomSource,
) -> Result<RolloutEstimate> {
    let alpha = settings.alpha;
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("discount rate {alpha} must be positive")));
    }
    let control = Control::SampledFeedback {
        period: settings.period,
        policy,
    };
    let values = replicate(settings.replications, rng, |stream| {
        let mut total = 0.0;
        simulate_with(model, control, x0, settings.horizon, settings.dt, stream, |s| {
            let weight = (-alpha * s.time).exp() * -(-alpha * s.step).exp_m1() / alpha;
            total += model.cost(s.state, s.action) * weight;
        })?;
        Ok(total)
    })?;
    let (mean, std_error) = mean_and_se(&values);
    let truncation_bound = model.constants.bound_c * (-alpha * settings.horizon).exp() / alpha;
    Ok(RolloutEstimate {
        mean,
        std_error,
        replications: settings.replications,
        horizon: settings.horizon,
        truncation_bound,
        truncation_warning: settings.tolerance.is_some_and(|t| truncation_bound > 0.5 * t * (1.0 + 1e-9)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicRollout {
    pub horizon: f64,
    pub burn_in: f64,
    pub dt: f64,
    pub period: f64,
    pub replications: usize,
}

/// Time average of `c` over `[burn_in, horizon]`, averaged over replications.
pub fn rollout_ergodic(
    model: &DiffusionModel,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    settings: &ErgodicRollout,
    rng: RandomSource,
) -> Result<RolloutEstimate> {
    let (burn_in, horizon) = (settings.burn_in, settings.horizon);
    if !(burn_in >= 0.0 && burn_in < horizon) {
        return Err(Error::InvalidArgument(format!("burn-in {burn_in} must lie in [0, {horizon})")));
    }
    let control = Control::SampledFeedback {
        period: settings.period,
        policy,
    };
    let values = replicate(settings.replications, rng, |stream| {
        let mut total = 0.0;
        let mut span = 0.0;
        simulate_with(model, control, x0, horizon, settings.dt, stream, |s| {
            let start = s.time.max(burn_in);
            let end = s.time + s.step;
            if end > start {
                total += model.cost(s.state, s.action) * (end - start);
                span += end - start;
            }
        })?;
        Ok(total / span)
    })?;
    let (mean, std_error) = mean_and_se(&values);
    Ok(RolloutEstimate {
        mean,
        std_error,
        replications: settings.replications,
        horizon,
        truncation_bound: 0.0,
        truncation_warning: false,
    })
}
