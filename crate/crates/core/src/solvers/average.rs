use rayon::prelude::*;

use super::{best_action, check_tol, greedy_policy, Policy, SolutionKind, ValueSolution, DEFAULT_MAX_ITERATIONS};
use crate::error::{Error, Result};
use crate::mdp::SampledMdp;

/// Undiscounted sweep `out = min_a [c_h + P_a w] − (that at anchor)`.
/// Returns the subtracted offset.
pub fn relative_update(mdp: &SampledMdp, w: &[f64], anchor: usize, out: &mut [f64]) -> f64 {
    out.par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| *o = best_action(mdp, w, 1.0, i).0);
    let offset = out[anchor];
    for o in out.iter_mut() {
        *o -= offset;
    }
    offset
}

/// Relative value iteration for the average-cost optimality equation, from
/// `W ≡ 0` until the span of successive differences is at most `tol`.
///
/// The per-step gain `g` is the midpoint of the bracket
/// `min(TW − W) ≤ g ≤ max(TW − W)` at the last sweep; the reported gain is
/// the cost per unit time `g / h`.
pub fn relative_value_iteration(mdp: &SampledMdp, tol: f64, anchor: usize) -> Result<(ValueSolution, Policy)> {
    relative_value_iteration_capped(mdp, tol, anchor, DEFAULT_MAX_ITERATIONS)
}

pub fn relative_value_iteration_capped(
    mdp: &SampledMdp,
    tol: f64,
    anchor: usize,
    cap: usize,
) -> Result<(ValueSolution, Policy)> {
    check_tol(tol)?;
    let n = mdp.n_nodes();
    if anchor >= n {
        return Err(Error::InvalidArgument(format!("anchor {anchor} outside {n} nodes")));
    }
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    for k in 1..=cap {
        let offset = relative_update(mdp, &w, anchor, &mut next);
        // TW − W = next + offset − w
        let (lo, hi) = next
            .iter()
            .zip(&w)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        span = hi - lo;
        std::mem::swap(&mut w, &mut next);
        if !span.is_finite() {
            break;
        }
        if span <= tol {
            let g = offset + 0.5 * (lo + hi);
            let policy = greedy_policy(mdp, &w, 1.0);
            return Ok((
                ValueSolution {
                    kind: SolutionKind::Ergodic,
                    values: w,
                    gain: Some(g / mdp.h),
                    anchor: Some(anchor),
                    residual: span,
                    iterations: k,
                },
                policy,
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: cap,
        residual: span,
        hint: "span not contracting; the chain may be reducible (grid truncated too tightly?)",
    })
}
