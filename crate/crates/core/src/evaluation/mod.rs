//! Rollouts of chain policies on the diffusion and the convergence
//! diagnostics built on them.

mod agreement;
mod coupling;
mod gap;
mod invariant;
mod rollout;
mod sweep;

pub use agreement::{kernel_agreement, KernelAgreement, RowAgreement};
pub use coupling::{coupling_experiment, log_log_slope, CouplingRow, CouplingSettings, CouplingTable};
pub use gap::{interpolation_gap_check, GapReport};
pub use invariant::{invariant_measure_sweep, InvariantRow, InvariantSettings, InvariantTable};
pub use rollout::{
    discounted_horizon, rollout_discounted, rollout_ergodic, DiscountedRollout, ErgodicRollout, GridPolicy, RolloutEstimate,
};
pub use sweep::{
    build_kernel, solve_level, value_convergence_sweep, CouplingBudget, DiscountedBudget, ErgodicBudget, GridSpec,
    KernelEstimator, SolvedLevel, SweepRow, SweepSettings, SweepTable, SWEEP_HEADER,
};
