use rayon::prelude::*;

use super::{best_action, check_tol, greedy_policy, Policy, SolutionKind, ValueSolution, DEFAULT_MAX_ITERATIONS};
use crate::error::{Error, Result};
use crate::mdp::SampledMdp;

fn check_discount(mdp: &SampledMdp) -> Result<()> {
    if !(mdp.beta > 0.0 && mdp.beta < 1.0) {
        return Err(Error::InvalidDiscount { beta: mdp.beta });
    }
    Ok(())
}

/// One Bellman sweep `out = min_a [c_h + β P_a v]`.
pub fn bellman_update(mdp: &SampledMdp, v: &[f64], out: &mut [f64]) {
    out.par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| *o = best_action(mdp, v, mdp.beta, i).0);
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iterates `sweep` from zero until successive iterates differ by at most
/// `tol·(1−β)/(2β)` in sup-norm, which puts the last iterate within `tol/2`
/// of the fixed point.
fn iterate(
    mdp: &SampledMdp,
    tol: f64,
    cap: usize,
    what: &'static str,
    sweep: impl Fn(&[f64], &mut [f64]),
) -> Result<(Vec<f64>, f64, usize)> {
    check_discount(mdp)?;
    check_tol(tol)?;
    let beta = mdp.beta;
    let threshold = tol * (1.0 - beta) / (2.0 * beta);
    let n = mdp.n_nodes();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut delta = f64::INFINITY;
    for k in 1..=cap {
        sweep(&v, &mut next);
        delta = sup_diff(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if !delta.is_finite() {
            break;
        }
        if delta <= threshold {
            return Ok((v, delta, k));
        }
    }
    Err(Error::NonConvergence {
        iterations: cap,
        residual: delta,
        hint: what,
    })
}

/// Discounted value iteration from `V ≡ 0`; returns a value within `tol` of
/// the optimum and its greedy policy.
pub fn value_iteration(mdp: &SampledMdp, tol: f64) -> Result<(ValueSolution, Policy)> {
    value_iteration_capped(mdp, tol, DEFAULT_MAX_ITERATIONS)
}

pub fn value_iteration_capped(mdp: &SampledMdp, tol: f64, cap: usize) -> Result<(ValueSolution, Policy)> {
    let (values, residual, iterations) = iterate(mdp, tol, cap, "value iteration did not settle", |v, out| {
        bellman_update(mdp, v, out)
    })?;
    let policy = greedy_policy(mdp, &values, mdp.beta);
    Ok((
        ValueSolution {
            kind: SolutionKind::Discounted,
            values,
            gain: None,
            anchor: None,
            residual,
            iterations,
        },
        policy,
    ))
}

/// Discounted cost of a fixed policy, `V = c_h^π + β P^π V`, to sup-norm `tol`.
pub fn policy_evaluation(mdp: &SampledMdp, policy: &Policy, tol: f64) -> Result<Vec<f64>> {
    policy_evaluation_capped(mdp, policy, tol, DEFAULT_MAX_ITERATIONS)
}

pub fn policy_evaluation_capped(mdp: &SampledMdp, policy: &Policy, tol: f64, cap: usize) -> Result<Vec<f64>> {
    policy.check(mdp)?;
    let beta = mdp.beta;
    let (values, _, _) = iterate(mdp, tol, cap, "policy evaluation did not settle", |v, out| {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let a = policy.action(i);
            *o = mdp.stage_cost(i, a) + beta * mdp.kernel.row(a, i).expect(v);
        })
    })?;
    Ok(values)
}
