use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TransitionKernel;
use crate::rng::RandomSource;
use crate::sde::{simulate_with, substeps_per_period, BoxRegion, Control, DiffusionModel, FeedbackPolicy};
use crate::solvers::Policy;

pub const DEFAULT_POWER_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ChainStationary,
    DiffusionLongRun,
}

/// Weighted point cloud over a reference box. Points are stored flat,
/// `dim` coordinates each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub bounds: BoxRegion,
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
    /// Set when a second start converged elsewhere (chain measures only).
    pub unique: bool,
}

impl EmpiricalMeasure {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .chunks_exact(self.dim)
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim).map(|k| self.integrate(|x| x[k])).collect()
    }

    /// Point mass at `x`.
    pub fn dirac(bounds: BoxRegion, x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            bounds,
            points: x.to_vec(),
            weights: vec![1.0],
            provenance: Provenance::DiffusionLongRun,
            unique: true,
        }
    }

    /// `(coordinates…, weight)` rows, one line each.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (x, w) in self.points.chunks_exact(self.dim).zip(&self.weights) {
            for v in x {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{w}\n"));
        }
        out
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn power_iterate(kernel: &TransitionKernel, policy: &Policy, mut mu: Vec<f64>, tol: f64, cap: usize) -> Result<Vec<f64>> {
    let mut next = vec![0.0; mu.len()];
    let mut diff = f64::INFINITY;
    for _ in 0..cap {
        kernel.push_forward(&policy.actions, &mu, &mut next);
        diff = l1(&next, &mu);
        std::mem::swap(&mut mu, &mut next);
        if diff <= tol {
            return Ok(mu);
        }
    }
    Err(Error::NonConvergence {
        iterations: cap,
        residual: diff,
        hint: "power iteration did not settle; the chain may be reducible or periodic",
    })
}

/// Stationary distribution of the policy chain by power iteration from the
/// uniform distribution, stopped when successive iterates are within `tol` in
/// L1. A second run from a point mass at node 0 checks uniqueness.
pub fn stationary_distribution(kernel: &TransitionKernel, policy: &Policy, tol: f64) -> Result<EmpiricalMeasure> {
    stationary_distribution_capped(kernel, policy, tol, DEFAULT_POWER_ITERATIONS)
}

pub fn stationary_distribution_capped(
    kernel: &TransitionKernel,
    policy: &Policy,
    tol: f64,
    cap: usize,
) -> Result<EmpiricalMeasure> {
    let grid = kernel
        .grid()
        .ok_or_else(|| Error::InvalidArgument("kernel carries no grid".into()))?;
    stationary_distribution_on(kernel, grid.nodes().concat(), grid.bounds.clone(), policy, tol, cap)
}

/// As [`stationary_distribution`] for kernels without a stored layout; the
/// caller supplies node coordinates (flat) and the reference box.
pub fn stationary_distribution_on(
    kernel: &TransitionKernel,
    points: Vec<f64>,
    bounds: BoxRegion,
    policy: &Policy,
    tol: f64,
    cap: usize,
) -> Result<EmpiricalMeasure> {
    let n = kernel.n_nodes;
    if policy.len() != n || policy.actions.iter().any(|a| *a >= kernel.n_actions) {
        return Err(Error::InvalidArgument("policy does not fit the kernel".into()));
    }
    let dim = bounds.dim();
    if points.len() != n * dim {
        return Err(Error::BoxMismatch);
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let mu = power_iterate(kernel, policy, vec![1.0 / n as f64; n], tol, cap)?;
    let mut start = vec![0.0; n];
    start[0] = 1.0;
    let unique = match power_iterate(kernel, policy, start, tol, cap) {
        Ok(other) => l1(&other, &mu) <= 1e-6_f64.max(1e3 * tol),
        Err(_) => false,
    };
    if !unique {
        log::warn!("stationary distribution depends on the starting point");
    }
    Ok(EmpiricalMeasure {
        bounds,
        dim,
        points,
        weights: mu,
        provenance: Provenance::ChainStationary,
        unique,
    })
}

/// Long-run occupation measure of the diffusion under state feedback: one
/// trajectory on `[0, horizon]`, recording the state every `spacing` time
/// units after `burn_in`. Uniform weights.
#[allow(clippy::too_many_arguments)]
pub fn empirical_invariant_measure(
    model: &DiffusionModel,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    horizon: f64,
    burn_in: f64,
    dt: f64,
    spacing: f64,
    bounds: BoxRegion,
    rng: RandomSource,
) -> Result<EmpiricalMeasure> {
    let points = occupation_points(model, policy, x0, horizon, burn_in, dt, spacing, rng)?;
    Ok(uniform_measure(bounds, model.dim, points))
}

/// Occupation measure pooled over `paths` independent trajectories of the
/// same length; trajectory `r` uses stream `r` of `rng`.
#[allow(clippy::too_many_arguments)]
pub fn pooled_invariant_measure(
    model: &DiffusionModel,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    horizon: f64,
    burn_in: f64,
    dt: f64,
    spacing: f64,
    paths: usize,
    bounds: BoxRegion,
    rng: RandomSource,
) -> Result<EmpiricalMeasure> {
    if paths == 0 {
        return Err(Error::InvalidArgument("at least one trajectory is needed".into()));
    }
    let per_path: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|r| occupation_points(model, policy, x0, horizon, burn_in, dt, spacing, rng.stream(r as u64)))
        .collect::<Result<_>>()?;
    Ok(uniform_measure(bounds, model.dim, per_path.concat()))
}

#[allow(clippy::too_many_arguments)]
fn occupation_points(
    model: &DiffusionModel,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    horizon: f64,
    burn_in: f64,
    dt: f64,
    spacing: f64,
    rng: RandomSource,
) -> Result<Vec<f64>> {
    if !(burn_in >= 0.0 && burn_in < horizon) {
        return Err(Error::InvalidArgument(format!("burn-in {burn_in} must lie in [0, {horizon})")));
    }
    let every = substeps_per_period(spacing, dt)?;
    let first = (burn_in / dt).ceil() as usize;
    let mut points = Vec::new();
    simulate_with(model, Control::Feedback(policy), x0, horizon, dt, rng, |s| {
        if s.index >= first && (s.index - first) % every == 0 {
            points.extend_from_slice(s.state);
        }
    })?;
    if points.is_empty() {
        return Err(Error::InvalidArgument("no samples recorded after burn-in".into()));
    }
    Ok(points)
}

fn uniform_measure(bounds: BoxRegion, dim: usize, points: Vec<f64>) -> EmpiricalMeasure {
    let count = points.len() / dim;
    EmpiricalMeasure {
        bounds,
        dim,
        points,
        weights: vec![1.0 / count as f64; count],
        provenance: Provenance::DiffusionLongRun,
        unique: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    /// `scale · clamp((x_k − center) / half_width, −1, 1)`.
    Coordinate { axis: usize, center: f64, half_width: f64, scale: f64 },
    /// `scale · Π_k logistic(slope·(x_k − offset_k))`.
    Sigmoid { offsets: Vec<f64>, slope: f64, scale: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Coordinate {
                axis,
                center,
                half_width,
                scale,
            } => scale * ((x[*axis] - center) / half_width).clamp(-1.0, 1.0),
            TestFunction::Sigmoid { offsets, slope, scale } => {
                scale
                    * offsets
                        .iter()
                        .zip(x)
                        .map(|(o, v)| 1.0 / (1.0 + (-slope * (v - o)).exp()))
                        .product::<f64>()
            }
        }
    }

    /// Upper bound on `sup|f| + Lip(f)`.
    pub fn bl_norm_bound(&self) -> f64 {
        match self {
            TestFunction::Coordinate { half_width, scale, .. } => scale * (1.0 + 1.0 / half_width),
            TestFunction::Sigmoid { offsets, slope, scale } => {
                scale * (1.0 + (offsets.len() as f64).sqrt() * slope / 4.0)
            }
        }
    }
}

pub const DICTIONARY_SIZE: usize = 64;

/// Fixed family of test functions with BL norm at most one; the distance it
/// induces is a lower bound on the bounded-Lipschitz metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlDictionary {
    pub bounds: BoxRegion,
    pub functions: Vec<TestFunction>,
}

impl BlDictionary {
    /// Coordinate maps on each axis, then products of sigmoids centered on
    /// cell midpoints of a lattice over the box, cycling through slopes
    /// 1, 2, 4, until 64 functions are defined.
    pub fn standard(bounds: &BoxRegion) -> Self {
        let d = bounds.dim();
        let mut functions = Vec::with_capacity(DICTIONARY_SIZE);
        for axis in 0..d.min(DICTIONARY_SIZE) {
            let half_width = 0.5 * (bounds.upper[axis] - bounds.lower[axis]);
            functions.push(TestFunction::Coordinate {
                axis,
                center: 0.5 * (bounds.upper[axis] + bounds.lower[axis]),
                half_width,
                scale: half_width / (1.0 + half_width),
            });
        }
        let slopes = [1.0, 2.0, 4.0];
        let budget = DICTIONARY_SIZE - functions.len();
        let per_slope = (budget / slopes.len()).max(1);
        let m = ((per_slope as f64).powf(1.0 / d as f64).floor() as usize).max(2);
        let mut round = 0;
        while functions.len() < DICTIONARY_SIZE {
            let slope = slopes[round % slopes.len()];
            // later rounds shift the lattice by a quarter cell
            let shift = 0.5 + 0.25 * (round / slopes.len()) as f64;
            let scale = 1.0 / (1.0 + (d as f64).sqrt() * slope / 4.0);
            for cell in 0..m.pow(d as u32) {
                if functions.len() == DICTIONARY_SIZE {
                    break;
                }
                let mut rem = cell;
                let offsets = (0..d)
                    .map(|k| {
                        let j = rem % m;
                        rem /= m;
                        let w = (bounds.upper[k] - bounds.lower[k]) / m as f64;
                        bounds.lower[k] + (j as f64 + shift.fract()) * w
                    })
                    .collect();
                functions.push(TestFunction::Sigmoid { offsets, slope, scale });
            }
            round += 1;
        }
        Self {
            bounds: bounds.clone(),
            functions,
        }
    }

    /// `∫ f dμ` for every dictionary function.
    pub fn moments(&self, mu: &EmpiricalMeasure) -> Vec<f64> {
        self.functions.iter().map(|f| mu.integrate(|x| f.eval(x))).collect()
    }
}

/// `max_f |∫f dμ1 − ∫f dμ2|` over the dictionary.
pub fn bl_distance(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, dictionary: &BlDictionary) -> Result<f64> {
    if mu1.bounds != mu2.bounds || mu1.bounds != dictionary.bounds || mu1.dim != mu2.dim {
        return Err(Error::BoxMismatch);
    }
    let a = dictionary.moments(mu1);
    let b = dictionary.moments(mu2);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_action_net, build_grid, Layout};
    use proptest::prelude::*;

    fn chain(p: Vec<Vec<f64>>) -> TransitionKernel {
        let mut k = TransitionKernel::from_dense(0.1, &[p]).unwrap();
        let n = k.n_nodes;
        let grid = build_grid(&BoxRegion::cube(1, 0.0, 1.0), &[n]).unwrap();
        let actions = build_action_net(&BoxRegion::cube(1, 0.0, 0.0), &[1]).unwrap();
        k.layout = Some(Layout { grid, actions });
        k
    }

    #[test]
    fn two_state_chain() {
        let k = chain(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let mu = stationary_distribution(&k, &Policy::constant(2, 0), 1e-14).unwrap();
        assert!((mu.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((mu.weights[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(mu.unique);
        let mut next = vec![0.0; 2];
        k.push_forward(&[0, 0], &mu.weights, &mut next);
        assert!(l1(&next, &mu.weights) <= 2e-14);
    }

    #[test]
    fn identity_chain_keeps_uniform_and_warns() {
        let k = chain(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let mu = stationary_distribution(&k, &Policy::constant(3, 0), 1e-12).unwrap();
        assert_eq!(mu.weights, vec![1.0 / 3.0; 3]);
        assert!(!mu.unique);
    }

    #[test]
    fn periodic_chain_hits_the_cap() {
        let k = chain(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        // the uniform start is already invariant; a skewed start oscillates
        let mu = stationary_distribution_capped(&k, &Policy::constant(2, 0), 1e-12, 100).unwrap();
        assert!(!mu.unique);
        let out = power_iterate(&k, &Policy::constant(2, 0), vec![1.0, 0.0], 1e-12, 100);
        assert!(matches!(out, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn dictionary_is_in_the_bl_unit_ball() {
        for b in [BoxRegion::cube(1, -4.0, 4.0), BoxRegion::cube(2, -1.0, 1.0), BoxRegion::cube(3, 0.0, 10.0)] {
            let dict = BlDictionary::standard(&b);
            assert_eq!(dict.functions.len(), DICTIONARY_SIZE);
            assert!(dict.functions.iter().all(|f| f.bl_norm_bound() <= 1.0 + 1e-15));
            assert_eq!(BlDictionary::standard(&b), dict);
        }
    }

    #[test]
    fn point_masses() {
        let b = BoxRegion::cube(1, -4.0, 4.0);
        let dict = BlDictionary::standard(&b);
        for delta in [0.01, 0.1, 0.5] {
            let d = bl_distance(&EmpiricalMeasure::dirac(b.clone(), &[0.0]), &EmpiricalMeasure::dirac(b.clone(), &[delta]), &dict).unwrap();
            assert!(d <= delta + 1e-15);
            // the coordinate element alone gives δ·s/half_width = δ/5
            assert!(d >= delta / 5.0 - 1e-15);
        }
        let same = EmpiricalMeasure::dirac(b.clone(), &[0.3]);
        assert_eq!(bl_distance(&same, &same, &dict).unwrap(), 0.0);
        let other = EmpiricalMeasure::dirac(BoxRegion::cube(1, -1.0, 1.0), &[0.3]);
        assert!(matches!(bl_distance(&same, &other, &dict), Err(Error::BoxMismatch)));
    }

    fn measure(points: &[f64], weights: &[f64]) -> EmpiricalMeasure {
        let s: f64 = weights.iter().sum();
        EmpiricalMeasure {
            bounds: BoxRegion::cube(1, -4.0, 4.0),
            dim: 1,
            points: points.to_vec(),
            weights: weights.iter().map(|w| w / s).collect(),
            provenance: Provenance::ChainStationary,
            unique: true,
        }
    }

    proptest! {
        #[test]
        fn bl_distance_is_a_pseudometric(
            p in proptest::collection::vec(-4.0f64..4.0, 5),
            w1 in proptest::collection::vec(0.01f64..1.0, 5),
            w2 in proptest::collection::vec(0.01f64..1.0, 5),
            w3 in proptest::collection::vec(0.01f64..1.0, 5),
        ) {
            let dict = BlDictionary::standard(&BoxRegion::cube(1, -4.0, 4.0));
            let (a, b, c) = (measure(&p, &w1), measure(&p, &w2), measure(&p, &w3));
            let ab = bl_distance(&a, &b, &dict).unwrap();
            prop_assert_eq!(ab, bl_distance(&b, &a, &dict).unwrap());
            let ac = bl_distance(&a, &c, &dict).unwrap();
            let bc = bl_distance(&b, &c, &dict).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(bl_distance(&a, &a, &dict).unwrap(), 0.0);
        }
    }
}
