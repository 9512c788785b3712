//! Finite-MDP solvers: discounted value iteration and policy evaluation,
//! average-cost relative value iteration, tabular Q-learning.
//!
//! Every sweep computes node updates in parallel and reduces residuals
//! sequentially in node order, so results do not depend on the worker count.

mod average;
mod discounted;
mod qlearning;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use average::{relative_value_iteration, relative_value_iteration_capped, relative_update};
pub use discounted::{bellman_update, policy_evaluation, policy_evaluation_capped, value_iteration, value_iteration_capped};
pub use qlearning::{q_learning, Exploration, QLearningOptions, QLearningResult, StepSize};

use crate::error::{Error, Result};
use crate::mdp::SampledMdp;

pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

/// Deterministic stationary Markov policy: `actions[i]` is the action index at node `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: Vec<usize>,
}

impl Policy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some((i, a)) = actions.iter().enumerate().find(|(_, a)| **a >= n_actions) {
            return Err(Error::InvalidArgument(format!(
                "policy picks action {a} at node {i} but only {n_actions} exist"
            )));
        }
        Ok(Self { actions })
    }

    pub fn constant(n_nodes: usize, action: usize) -> Self {
        Self {
            actions: vec![action; n_nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action(&self, node: usize) -> usize {
        self.actions[node]
    }

    pub(crate) fn check(&self, mdp: &SampledMdp) -> Result<()> {
        if self.actions.len() != mdp.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "policy covers {} nodes, MDP has {}",
                self.actions.len(),
                mdp.n_nodes()
            )));
        }
        Policy::new(self.actions.clone(), mdp.n_actions()).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Discounted,
    Ergodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSolution {
    pub kind: SolutionKind,
    /// Discounted value per node, or the relative value with `values[anchor] == 0`.
    pub values: Vec<f64>,
    /// Cost per unit time (`g / h`); ergodic only.
    pub gain: Option<f64>,
    pub anchor: Option<usize>,
    pub residual: f64,
    pub iterations: usize,
}

/// Flat exchange record for a solved MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionRecord {
    pub kind: SolutionKind,
    pub h: f64,
    pub beta: Option<f64>,
    pub gain: Option<f64>,
    pub anchor: Option<usize>,
    pub residual: f64,
    pub iterations: usize,
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
}

impl SolutionRecord {
    pub fn new(mdp: &SampledMdp, solution: &ValueSolution, policy: &Policy) -> Self {
        Self {
            kind: solution.kind,
            h: mdp.h,
            beta: (solution.kind == SolutionKind::Discounted).then_some(mdp.beta),
            gain: solution.gain,
            anchor: solution.anchor,
            residual: solution.residual,
            iterations: solution.iterations,
            values: solution.values.clone(),
            policy: policy.actions.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `min_a [c_h(i,a) + discount · P_a v](i)` and its lowest-index argmin.
#[inline]
pub(crate) fn best_action(mdp: &SampledMdp, v: &[f64], discount: f64, i: usize) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for a in 0..mdp.n_actions() {
        let q = mdp.stage_cost(i, a) + discount * mdp.kernel.row(a, i).expect(v);
        if q < best.0 {
            best = (q, a);
        }
    }
    best
}

/// Minimizing selector of `c_h + discount · P v`, ties to the lowest action index.
pub fn greedy_policy(mdp: &SampledMdp, v: &[f64], discount: f64) -> Policy {
    let actions = (0..mdp.n_nodes())
        .into_par_iter()
        .map(|i| best_action(mdp, v, discount, i).1)
        .collect();
    Policy { actions }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    Ok(())
}
