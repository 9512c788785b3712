use serde::{Deserialize, Serialize};

use super::{Policy, DEFAULT_MAX_ITERATIONS};
use crate::error::{Error, Result};
use crate::mdp::SampledMdp;
use crate::rng::RandomSource;

/// Step size as a function of the visit count `n ≥ 1` of the (node, action) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `1 / n^exponent`, exponent in (1/2, 1].
    Polynomial { exponent: f64 },
    /// `scale / (scale + n − 1)`.
    Harmonic { scale: f64 },
}

impl StepSize {
    fn at(&self, n: u64) -> f64 {
        match *self {
            StepSize::Polynomial { exponent } => (n as f64).powf(-exponent),
            StepSize::Harmonic { scale } => scale / (scale + (n - 1) as f64),
        }
    }
}

/// ε-greedy exploration decaying linearly from `start` to `end` over `decay_episodes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl Exploration {
    fn at(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 {
            return self.end;
        }
        let f = (episode as f64 / self.decay_episodes as f64).min(1.0);
        self.start + (self.end - self.start) * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QLearningOptions {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub step_size: StepSize,
    pub exploration: Exploration,
}

impl Default for QLearningOptions {
    fn default() -> Self {
        Self {
            episodes: 2_000,
            steps_per_episode: 200,
            step_size: StepSize::Polynomial { exponent: 0.7 },
            exploration: Exploration {
                start: 1.0,
                end: 0.1,
                decay_episodes: 1_000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearningResult {
    /// Node-major: `q[i * n_actions + a]`.
    pub q: Vec<f64>,
    pub policy: Policy,
    /// `‖T_Q q − q‖∞` against the exact kernel.
    pub bellman_residual: f64,
    pub transitions: u64,
}

fn greedy(q: &[f64]) -> (usize, f64) {
    q.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (a, v)| if *v < best.1 { (a, *v) } else { best })
}

/// Tabular Q-learning on the MDP used as a simulator: next states are drawn
/// from the kernel rows. Single-threaded; episodes start at uniform nodes.
pub fn q_learning(mdp: &SampledMdp, options: &QLearningOptions, rng: RandomSource) -> Result<QLearningResult> {
    if !(mdp.beta > 0.0 && mdp.beta < 1.0) {
        return Err(Error::InvalidDiscount { beta: mdp.beta });
    }
    let total = options.episodes as u128 * options.steps_per_episode as u128;
    if total > DEFAULT_MAX_ITERATIONS as u128 * 1000 {
        return Err(Error::InvalidArgument(format!("{total} transitions exceed the cap")));
    }
    let n = mdp.n_nodes();
    let m = mdp.n_actions();
    let mut q = vec![0.0; n * m];
    let mut visits = vec![0u64; n * m];
    let mut g = rng.generator();
    let mut transitions = 0;
    for episode in 0..options.episodes {
        let eps = options.exploration.at(episode);
        let mut i = g.index(n);
        for _ in 0..options.steps_per_episode {
            let a = if g.uniform() < eps {
                g.index(m)
            } else {
                greedy(&q[i * m..(i + 1) * m]).0
            };
            let j = mdp.kernel.row(a, i).sample(g.uniform());
            let target = mdp.stage_cost(i, a) + mdp.beta * greedy(&q[j * m..(j + 1) * m]).1;
            let k = i * m + a;
            visits[k] += 1;
            let step = options.step_size.at(visits[k]);
            q[k] += step * (target - q[k]);
            i = j;
            transitions += 1;
        }
    }
    let mut residual = 0.0f64;
    let vmin: Vec<f64> = (0..n).map(|j| greedy(&q[j * m..(j + 1) * m]).1).collect();
    for i in 0..n {
        for a in 0..m {
            let t = mdp.stage_cost(i, a) + mdp.beta * mdp.kernel.row(a, i).expect(&vmin);
            residual = residual.max((t - q[i * m + a]).abs());
        }
    }
    let policy = Policy {
        actions: (0..n).map(|i| greedy(&q[i * m..(i + 1) * m]).0).collect(),
    };
    Ok(QLearningResult {
        q,
        policy,
        bellman_residual: residual,
        transitions,
    })
}
