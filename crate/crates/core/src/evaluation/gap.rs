use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::SampledMdp;
use crate::rng::RandomSource;
use crate::solvers::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub paths: usize,
    pub steps: usize,
    /// Largest pathwise `|Σ β^k c_h − ∫ e^{−αs} c ds|`.
    pub max_gap: f64,
    pub mean_gap: f64,
    /// `bound_c · h`.
    pub bound: f64,
    pub pass: bool,
}

/// Compares the discounted chain sum with the discounted integral of its
/// piecewise-constant interpolation, path by path. Chains start at `start`,
/// run `steps` transitions, and path `p` draws from stream `p`.
pub fn interpolation_gap_check(
    mdp: &SampledMdp,
    policy: &Policy,
    start: usize,
    steps: usize,
    paths: usize,
    rng: RandomSource,
) -> Result<GapReport> {
    policy.check(mdp)?;
    if start >= mdp.n_nodes() || paths == 0 {
        return Err(Error::InvalidArgument("start node out of range or no paths requested".into()));
    }
    let (h, alpha, beta) = (mdp.h, mdp.alpha, mdp.beta);
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("interpolation gap needs a positive discount rate".into()));
    }
    // ∫_{kh}^{(k+1)h} e^{−αs} ds = β^k (1 − β)/α
    let cell = -(-alpha * h).exp_m1() / alpha;
    let gaps: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut g = rng.stream(p as u64).generator();
            let mut i = start;
            let mut discount = 1.0;
            let (mut sum, mut integral) = (0.0, 0.0);
            for _ in 0..steps {
                let a = policy.action(i);
                let ch = mdp.stage_cost(i, a);
                sum += discount * ch;
                integral += discount * (ch / h) * cell;
                discount *= beta;
                i = mdp.kernel.row(a, i).sample(g.uniform());
            }
            (sum - integral).abs()
        })
        .collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let mean_gap = gaps.iter().sum::<f64>() / paths as f64;
    let bound = mdp.cost_bound * h;
    Ok(GapReport {
        paths,
        steps,
        max_gap,
        mean_gap,
        bound,
        pass: max_gap <= bound,
    })
}
