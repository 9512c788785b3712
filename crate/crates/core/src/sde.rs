//! Controlled diffusions `dX = b(X, U) dt + σ(X) dW`, their generator, and
//! Euler–Maruyama path realizations under piecewise-constant or feedback
//! controls.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Writes σ(x) row-major into a d×d buffer.
pub type SigmaFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type CostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config(format!(
                "box bounds have mismatched or zero length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::Config(format!("box axis {i} has non-finite bounds")));
            }
            if l > u {
                return Err(Error::Config(format!("box axis {i} has lower {l} > upper {u}")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp_into(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    /// `other` lies inside `self` with a positive gap on every face.
    pub fn strictly_contains(&self, other: &BoxRegion) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| other.lower[i] > self.lower[i] && other.upper[i] < self.upper[i])
    }
}

/// Bounds and regularity constants a model declares about itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub bound_b: f64,
    pub bound_sigma: f64,
    pub bound_c: f64,
    pub lipschitz_b: f64,
    pub lipschitz_sigma: f64,
    pub lipschitz_c: f64,
    /// Lower bound on the eigenvalues of `a = σσᵀ/2` over the computational box.
    pub nondegeneracy_floor: f64,
}

#[derive(Clone)]
pub struct DiffusionModel {
    pub name: String,
    pub dim: usize,
    pub control_box: BoxRegion,
    pub constants: ModelConstants,
    drift: DriftFn,
    sigma: SigmaFn,
    running_cost: CostFn,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("control_box", &self.control_box)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl DiffusionModel {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        control_box: BoxRegion,
        constants: ModelConstants,
        drift: DriftFn,
        sigma: SigmaFn,
        running_cost: CostFn,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            dim,
            control_box,
            constants,
            drift,
            sigma,
            running_cost,
        })
    }

    pub fn control_dim(&self) -> usize {
        self.control_box.dim()
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        (self.drift)(x, a, out)
    }

    pub fn drift(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, a, &mut out);
        out
    }

    #[inline]
    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        (self.sigma)(x, out)
    }

    pub fn sigma(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.sigma_into(x, &mut out);
        out
    }

    #[inline]
    pub fn cost(&self, x: &[f64], a: &[f64]) -> f64 {
        (self.running_cost)(x, a)
    }

    /// `a(x) = σ(x)σ(x)ᵀ / 2`, row-major.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let s = self.sigma(x);
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = 0.5 * (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum::<f64>();
            }
        }
        a
    }

    /// One Euler–Maruyama step in place: `x += b(x,a) dt + σ(x) √dt z`.
    #[inline]
    pub fn euler_step(&self, x: &mut [f64], a: &[f64], dt: f64, z: &[f64], scratch: &mut StepScratch) {
        let d = self.dim;
        self.drift_into(x, a, &mut scratch.drift);
        self.sigma_into(x, &mut scratch.sigma);
        let sq = dt.sqrt();
        for i in 0..d {
            let noise: f64 = (0..d).map(|k| scratch.sigma[i * d + k] * z[k]).sum();
            x[i] += scratch.drift[i] * dt + noise * sq;
        }
    }

    /// Sampled verification of the declared bounds, nondegeneracy floor and
    /// Lipschitz constants over `region × control_box`.
    pub fn check_assumptions(&self, region: &BoxRegion, samples: usize, rng: RandomSource) -> AssumptionReport {
        let d = self.dim;
        let c = &self.constants;
        let mut g = rng.generator();
        let draw = |b: &BoxRegion, g: &mut crate::rng::GaussianStream| -> Vec<f64> {
            (0..b.dim())
                .map(|i| b.lower[i] + (b.upper[i] - b.lower[i]) * g.uniform())
                .collect()
        };
        let mut report = AssumptionReport::default();
        let tol = 1e-12;
        for _ in 0..samples {
            let x = draw(region, &mut g);
            let y = draw(region, &mut g);
            let u = draw(&self.control_box, &mut g);
            let v = draw(&self.control_box, &mut g);

            let bx = self.drift(&x, &u);
            let sx = self.sigma(&x);
            let cx = self.cost(&x, &u);
            let nb = norm(&bx);
            let ns = norm(&sx);
            report.max_drift = report.max_drift.max(nb);
            report.max_sigma = report.max_sigma.max(ns);
            report.max_cost = report.max_cost.max(cx);
            report.min_cost = report.min_cost.min(cx);

            let lam = min_eigenvalue(&self.diffusion_matrix(&x), d);
            report.min_eigenvalue = report.min_eigenvalue.min(lam);

            let by = self.drift(&y, &v);
            let sy = self.sigma(&y);
            let dx = dist(&x, &y);
            let du = dist(&u, &v);
            let joint = (dx * dx + du * du).sqrt();
            if joint > 0.0 {
                report.lipschitz_b_ratio = report.lipschitz_b_ratio.max(dist(&bx, &by) / joint);
            }
            if dx > 0.0 {
                report.lipschitz_sigma_ratio = report.lipschitz_sigma_ratio.max(dist(&sx, &sy) / dx);
                let cyu = self.cost(&y, &u);
                report.lipschitz_c_ratio = report.lipschitz_c_ratio.max((cx - cyu).abs() / dx);
            }
        }
        report.bounds_ok = report.max_drift <= c.bound_b + tol
            && report.max_sigma <= c.bound_sigma + tol
            && report.max_cost <= c.bound_c + tol
            && report.min_cost >= -tol;
        report.nondegenerate_ok = report.min_eigenvalue >= c.nondegeneracy_floor - tol;
        report.lipschitz_ok = report.lipschitz_b_ratio <= c.lipschitz_b + tol
            && report.lipschitz_sigma_ratio <= c.lipschitz_sigma + tol
            && report.lipschitz_c_ratio <= c.lipschitz_c + tol;
        report
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub bounds_ok: bool,
    pub nondegenerate_ok: bool,
    pub lipschitz_ok: bool,
    pub max_drift: f64,
    pub max_sigma: f64,
    pub max_cost: f64,
    pub min_cost: f64,
    pub min_eigenvalue: f64,
    pub lipschitz_b_ratio: f64,
    pub lipschitz_sigma_ratio: f64,
    pub lipschitz_c_ratio: f64,
}

impl Default for AssumptionReport {
    fn default() -> Self {
        Self {
            bounds_ok: false,
            nondegenerate_ok: false,
            lipschitz_ok: false,
            max_drift: 0.0,
            max_sigma: 0.0,
            max_cost: f64::NEG_INFINITY,
            min_cost: f64::INFINITY,
            min_eigenvalue: f64::INFINITY,
            lipschitz_b_ratio: 0.0,
            lipschitz_sigma_ratio: 0.0,
            lipschitz_c_ratio: 0.0,
        }
    }
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.bounds_ok && self.nondegenerate_ok && self.lipschitz_ok
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn min_eigenvalue(a: &[f64], d: usize) -> f64 {
    if d == 1 {
        return a[0];
    }
    let m = DMatrix::from_row_slice(d, d, a);
    m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Scratch buffers for [`DiffusionModel::euler_step`].
#[derive(Debug, Clone)]
pub struct StepScratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl StepScratch {
    pub fn new(dim: usize) -> Self {
        Self {
            drift: vec![0.0; dim],
            sigma: vec![0.0; dim * dim],
        }
    }
}

/// Finite mixture of actions (a relaxed control with finite support).
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedAction {
    pub actions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl RelaxedAction {
    pub fn atom(action: Vec<f64>) -> Self {
        Self {
            actions: vec![action],
            weights: vec![1.0],
        }
    }
}

/// `Σ w_i b(x, a_i)`.
pub fn eval_relaxed_drift(model: &DiffusionModel, x: &[f64], mix: &RelaxedAction) -> Result<Vec<f64>> {
    if mix.actions.len() != mix.weights.len() || mix.actions.is_empty() {
        return Err(Error::InvalidDistribution(format!(
            "{} actions but {} weights",
            mix.actions.len(),
            mix.weights.len()
        )));
    }
    if let Some(w) = mix.weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("negative or NaN weight {w}")));
    }
    let total: f64 = mix.weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
    }
    let mut out = vec![0.0; model.dim];
    let mut buf = vec![0.0; model.dim];
    for (a, w) in mix.actions.iter().zip(&mix.weights) {
        if a.len() != model.control_dim() || !model.control_box.contains(a) {
            return Err(Error::InvalidArgument(format!("action {a:?} outside the control box")));
        }
        model.drift_into(x, a, &mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o += w * b;
        }
    }
    Ok(out)
}

/// A C² scalar function with analytic first and second derivatives.
pub trait SmoothFunction: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Row-major d×d Hessian.
    fn hessian(&self, x: &[f64], out: &mut [f64]);
}

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// [`SmoothFunction`] assembled from closures.
#[derive(Clone)]
pub struct AnalyticFunction {
    value: ValueFn,
    gradient: VectorFn,
    hessian: VectorFn,
}

impl AnalyticFunction {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hessian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }
}

impl SmoothFunction for AnalyticFunction {
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        (self.hessian)(x, out)
    }
}

/// `L_a f(x) = tr(a(x) ∇²f(x)) + b(x,a)·∇f(x)`.
pub fn apply_generator(model: &DiffusionModel, f: &dyn SmoothFunction, x: &[f64], action: &[f64]) -> f64 {
    let d = model.dim;
    let a = model.diffusion_matrix(x);
    let mut hess = vec![0.0; d * d];
    let mut grad = vec![0.0; d];
    f.hessian(x, &mut hess);
    f.gradient(x, &mut grad);
    let b = model.drift(x, action);
    let second: f64 = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| a[i * d + j] * hess[j * d + i])
        .sum();
    let first: f64 = b.iter().zip(&grad).map(|(bi, gi)| bi * gi).sum();
    second + first
}

/// State feedback `x ↦ u(x)`.
pub trait FeedbackPolicy: Send + Sync {
    fn action_into(&self, x: &[f64], out: &mut [f64]);
}

impl<F> FeedbackPolicy for F
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn action_into(&self, x: &[f64], out: &mut [f64]) {
        self(x, out)
    }
}

/// How actions are chosen along a simulated path.
#[derive(Clone, Copy)]
pub enum Control<'a> {
    /// `actions[n]` is held on `[n·period, (n+1)·period)`.
    PiecewiseConstant { period: f64, actions: &'a [Vec<f64>] },
    /// Re-evaluated at every Euler step.
    Feedback(&'a dyn FeedbackPolicy),
    /// Evaluated at sampling instants `n·period` and held until the next one.
    SampledFeedback { period: f64, policy: &'a dyn FeedbackPolicy },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `actions[k]` acts on `[times[k], times[k+1])`.
    pub actions: Vec<Vec<f64>>,
}

/// Number of Euler substeps per period when `dt` divides `period`.
pub fn substeps_per_period(period: f64, dt: f64) -> Result<usize> {
    if !(period > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("period {period} and dt {dt} must be positive")));
    }
    let ratio = period / dt;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * m {
        return Err(Error::InvalidArgument(format!("dt {dt} does not divide period {period}")));
    }
    Ok(m as usize)
}

/// Uniform steps of `dt` covering `[0, horizon]`, the last one possibly shorter.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon {horizon} / dt {dt} invalid")));
    }
    let ratio = horizon / dt;
    let n = ratio.round();
    if (ratio - n).abs() <= 1e-9 * n.max(1.0) {
        Ok(n as usize)
    } else {
        Ok(ratio.ceil() as usize)
    }
}

/// Euler–Maruyama realization of the controlled diffusion.
pub fn simulate_path(
    model: &DiffusionModel,
    control: Control<'_>,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    rng: RandomSource,
) -> Result<Path> {
    let n = step_count(horizon, dt)?;
    let mut path = Path {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        actions: Vec::with_capacity(n),
    };
    let last = simulate_with(model, control, x0, horizon, dt, rng, |s| {
        path.times.push(s.time);
        path.states.push(s.state.to_vec());
        path.actions.push(s.action.to_vec());
    })?;
    path.times.push(horizon);
    path.states.push(last);
    Ok(path)
}

/// State and action at the start of one Euler step, as seen by [`simulate_with`].
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub index: usize,
    pub time: f64,
    /// Length of this step; only the last one can be shorter than `dt`.
    pub step: f64,
    pub state: &'a [f64],
    pub action: &'a [f64],
}

/// Streaming form of [`simulate_path`]: calls `visit` before every Euler step
/// and returns the terminal state without storing the path.
pub fn simulate_with(
    model: &DiffusionModel,
    control: Control<'_>,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    rng: RandomSource,
    mut visit: impl FnMut(StepView<'_>),
) -> Result<Vec<f64>> {
    let d = model.dim;
    let m = model.control_dim();
    if x0.len() != d {
        return Err(Error::InvalidArgument(format!("x0 has length {} but dim is {d}", x0.len())));
    }
    let n = step_count(horizon, dt)?;
    let hold = match control {
        Control::PiecewiseConstant { period, actions } => {
            let s = substeps_per_period(period, dt)?;
            let blocks = n.div_ceil(s);
            if actions.len() < blocks {
                return Err(Error::InvalidArgument(format!(
                    "{} actions supplied but {blocks} periods are needed",
                    actions.len()
                )));
            }
            s
        }
        Control::SampledFeedback { period, .. } => substeps_per_period(period, dt)?,
        Control::Feedback(_) => 1,
    };

    let mut g = rng.generator();
    let mut scratch = StepScratch::new(d);
    let mut z = vec![0.0; d];
    let mut x = x0.to_vec();
    let mut a = vec![0.0; m];
    for k in 0..n {
        match control {
            Control::PiecewiseConstant { actions, .. } => a.copy_from_slice(&actions[k / hold]),
            Control::Feedback(p) => p.action_into(&x, &mut a),
            Control::SampledFeedback { policy, .. } => {
                if k % hold == 0 {
                    policy.action_into(&x, &mut a)
                }
            }
        }
        let t = k as f64 * dt;
        let t_next = if k + 1 == n { horizon } else { (k + 1) as f64 * dt };
        let step = t_next - t;
        visit(StepView {
            index: k,
            time: t,
            step,
            state: &x,
            action: &a,
        });
        g.fill_normal(&mut z);
        model.euler_step(&mut x, &a, step, &z, &mut scratch);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationDiverged { step: k });
        }
    }
    Ok(x)
}

/// Piecewise-constant, right-continuous interpolation `X^h(t) = X_{⌊t/h⌋}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainInterpolation {
    states: Vec<Vec<f64>>,
    h: f64,
}

pub fn interpolate_chain(states: Vec<Vec<f64>>, h: f64) -> Result<ChainInterpolation> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling period {h} must be positive")));
    }
    if states.is_empty() {
        return Err(Error::InvalidArgument("no states to interpolate".into()));
    }
    Ok(ChainInterpolation { states, h })
}

impl ChainInterpolation {
    pub fn end(&self) -> f64 {
        self.states.len() as f64 * self.h
    }

    pub fn at(&self, t: f64) -> Result<&[f64]> {
        let k = (t / self.h).floor();
        if !(t >= 0.0) || k >= self.states.len() as f64 {
            return Err(Error::OutOfRange { t, end: self.end() });
        }
        Ok(&self.states[k as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn one_dim(
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sigma: f64,
        cost: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> DiffusionModel {
        DiffusionModel::new(
            "test",
            1,
            BoxRegion::cube(1, -0.5, 0.5),
            ModelConstants {
                bound_b: 2.0,
                bound_sigma: sigma,
                bound_c: 1.0,
                lipschitz_b: 2.25,
                lipschitz_sigma: 0.0,
                lipschitz_c: 1.0,
                nondegeneracy_floor: 0.5 * sigma * sigma,
            },
            Arc::new(move |x, a, out| out[0] = drift(x[0], a[0])),
            Arc::new(move |_, out| out[0] = sigma),
            Arc::new(move |x, a| cost(x[0], a[0])),
        )
        .unwrap()
    }

    fn tanh_model() -> DiffusionModel {
        one_dim(|x, a| -(2.0 * x).tanh() + a, 0.5, |x, a| x * x / (1.0 + x * x) + 0.1 * a * a)
    }

    #[test]
    fn relaxed_drift_examples() {
        let m = tanh_model();
        let atom = eval_relaxed_drift(&m, &[0.3], &RelaxedAction::atom(vec![0.2])).unwrap();
        assert_eq!(atom, m.drift(&[0.3], &[0.2]));

        let id = one_dim(|_, a| a, 1.0, |_, _| 0.0);
        let mut id = id;
        id.control_box = BoxRegion::cube(1, -1.0, 1.0);
        let sym = RelaxedAction {
            actions: vec![vec![-1.0], vec![1.0]],
            weights: vec![0.5, 0.5],
        };
        assert_eq!(eval_relaxed_drift(&id, &[0.7], &sym).unwrap(), vec![0.0]);

        let mix = RelaxedAction {
            actions: vec![vec![-0.5], vec![0.5]],
            weights: vec![0.25, 0.75],
        };
        let out = eval_relaxed_drift(&m, &[0.0], &mix).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn relaxed_drift_rejects_unnormalized_weights() {
        let m = tanh_model();
        let bad = RelaxedAction {
            actions: vec![vec![-0.5], vec![0.5]],
            weights: vec![0.5, 0.5 + 1e-10],
        };
        assert!(matches!(
            eval_relaxed_drift(&m, &[0.0], &bad),
            Err(Error::InvalidDistribution(_))
        ));
        let neg = RelaxedAction {
            actions: vec![vec![-0.5], vec![0.5]],
            weights: vec![1.5, -0.5],
        };
        assert!(eval_relaxed_drift(&m, &[0.0], &neg).is_err());
    }

    fn square() -> AnalyticFunction {
        AnalyticFunction::new(|x| x[0] * x[0], |x, g| g[0] = 2.0 * x[0], |_, h| h[0] = 2.0)
    }

    #[test]
    fn generator_closed_forms() {
        let bm = one_dim(|_, _| 0.0, 1.0, |_, _| 0.0);
        for x in [-3.0, 0.0, 1.7] {
            assert!((apply_generator(&bm, &square(), &[x], &[0.0]) - 1.0).abs() < 1e-15);
        }
        let mut pure = one_dim(|_, a| a, 1.0, |_, _| 0.0);
        pure.control_box = BoxRegion::cube(1, -1.0, 1.0);
        let lin = AnalyticFunction::new(|x| x[0], |_, g| g[0] = 1.0, |_, h| h[0] = 0.0);
        assert!((apply_generator(&pure, &lin, &[0.4], &[0.3]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn generator_in_two_dimensions_uses_full_trace() {
        // σ = [[1, 0], [1, 1]] → a = ½[[1, 1], [1, 2]]; f = x0·x1 has H = [[0,1],[1,0]].
        let m = DiffusionModel::new(
            "2d",
            2,
            BoxRegion::cube(1, 0.0, 0.0),
            ModelConstants {
                bound_b: 0.0,
                bound_sigma: 3f64.sqrt(),
                bound_c: 0.0,
                lipschitz_b: 0.0,
                lipschitz_sigma: 0.0,
                lipschitz_c: 0.0,
                nondegeneracy_floor: 0.1,
            },
            Arc::new(|_, _, out| out.fill(0.0)),
            Arc::new(|_, out| out.copy_from_slice(&[1.0, 0.0, 1.0, 1.0])),
            Arc::new(|_, _| 0.0),
        )
        .unwrap();
        let f = AnalyticFunction::new(
            |x| x[0] * x[1],
            |x, g| {
                g[0] = x[1];
                g[1] = x[0];
            },
            |_, h| h.copy_from_slice(&[0.0, 1.0, 1.0, 0.0]),
        );
        assert!((apply_generator(&m, &f, &[0.2, 0.3], &[0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_dynamics_give_constant_path() {
        let m = one_dim(|_, _| 0.0, 0.0, |_, _| 0.0);
        let p = simulate_path(&m, Control::Feedback(&|_: &[f64], a: &mut [f64]| a[0] = 0.0), &[1.25], 1.0, 0.1, RandomSource::new(1, 0)).unwrap();
        assert!(p.states.iter().all(|s| s[0] == 1.25));
        assert_eq!(p.states.len(), 11);
        assert_eq!(p.actions.len(), 10);
    }

    #[test]
    fn deterministic_euler_reaches_one() {
        let m = one_dim(|_, _| 1.0, 0.0, |_, _| 0.0);
        let actions = vec![vec![0.0]; 10];
        let p = simulate_path(
            &m,
            Control::PiecewiseConstant { period: 0.1, actions: &actions },
            &[0.0],
            1.0,
            0.1,
            RandomSource::new(1, 0),
        )
        .unwrap();
        assert!((p.states.last().unwrap()[0] - 1.0).abs() < 1e-12);
        assert_eq!(*p.times.last().unwrap(), 1.0);
    }

    #[test]
    fn final_partial_step_lands_on_horizon() {
        let m = one_dim(|_, _| 1.0, 0.0, |_, _| 0.0);
        let p = simulate_path(&m, Control::Feedback(&|_: &[f64], a: &mut [f64]| a[0] = 0.0), &[0.0], 0.35, 0.1, RandomSource::new(1, 0)).unwrap();
        assert_eq!(p.times.len(), 5);
        assert_eq!(*p.times.last().unwrap(), 0.35);
        assert!((p.states.last().unwrap()[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn piecewise_actions_are_held_per_block() {
        let m = tanh_model();
        let actions = vec![vec![0.5], vec![-0.5], vec![0.0]];
        let p = simulate_path(
            &m,
            Control::PiecewiseConstant { period: 0.2, actions: &actions },
            &[0.0],
            0.6,
            0.05,
            RandomSource::new(3, 0),
        )
        .unwrap();
        let held: Vec<f64> = p.actions.iter().map(|a| a[0]).collect();
        assert_eq!(held, [0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5, 0.0, 0.0, 0.0, 0.0]);

        let err = simulate_path(
            &m,
            Control::PiecewiseConstant { period: 0.2, actions: &actions },
            &[0.0],
            0.6,
            0.03,
            RandomSource::new(3, 0),
        );
        assert!(err.is_err(), "dt must divide the period");
    }

    #[test]
    fn sampled_feedback_holds_between_instants() {
        let m = tanh_model();
        let policy = |x: &[f64], a: &mut [f64]| a[0] = (-0.5 * (2.0 * x[0]).tanh()).clamp(-0.5, 0.5);
        let p = simulate_path(
            &m,
            Control::SampledFeedback { period: 0.1, policy: &policy },
            &[1.0],
            1.0,
            0.025,
            RandomSource::new(4, 2),
        )
        .unwrap();
        for (k, a) in p.actions.iter().enumerate() {
            let anchor = k - k % 4;
            assert_eq!(a, &p.actions[anchor]);
        }
    }

    #[test]
    fn divergence_reports_step() {
        let m = one_dim(|x, _| if x > 2.0 { f64::INFINITY } else { 1.0 }, 0.0, |_, _| 0.0);
        let err = simulate_path(&m, Control::Feedback(&|_: &[f64], a: &mut [f64]| a[0] = 0.0), &[0.0], 5.0, 0.5, RandomSource::new(0, 0)).unwrap_err();
        // x: 0, .5, 1, 1.5, 2, 2.5 → drift at 2.5 is infinite on step 5
        assert!(matches!(err, Error::SimulationDiverged { step: 5 }), "{err:?}");
    }

    #[test]
    fn same_stream_same_path_bitwise() {
        let m = tanh_model();
        let pol = |x: &[f64], a: &mut [f64]| a[0] = -0.25 * x[0].tanh();
        let run = || simulate_path(&m, Control::Feedback(&pol), &[0.3], 2.0, 0.01, RandomSource::new(99, 5)).unwrap();
        let (a, b) = (run(), run());
        assert!(a.states.iter().zip(&b.states).all(|(x, y)| x[0].to_bits() == y[0].to_bits()));
    }

    #[test]
    fn interpolation_examples() {
        let c = interpolate_chain(vec![vec![5.0]], 0.1).unwrap();
        assert_eq!(c.at(0.0).unwrap(), &[5.0]);
        assert_eq!(c.at(0.0999).unwrap(), &[5.0]);
        assert!(matches!(c.at(0.1), Err(Error::OutOfRange { .. })));

        let c = interpolate_chain(vec![vec![0.0], vec![1.0]], 0.25).unwrap();
        assert_eq!(c.at(0.25).unwrap(), &[1.0]);
        assert_eq!(c.at(0.2499999).unwrap(), &[0.0]);

        let c = interpolate_chain(vec![vec![0.0], vec![1.0], vec![2.0]], 0.5).unwrap();
        assert_eq!(c.at(0.749).unwrap(), &[1.0]);
        assert!(c.at(-0.01).is_err());
        assert!(c.at(1.5).is_err());
    }

    #[test]
    fn assumption_check_on_tanh_model() {
        let m = tanh_model();
        let report = m.check_assumptions(&BoxRegion::cube(1, -4.0, 4.0), 2000, RandomSource::new(5, 0));
        assert!(report.all_ok(), "{report:?}");

        let mut lying = tanh_model();
        lying.constants.bound_b = 0.5;
        let report = lying.check_assumptions(&BoxRegion::cube(1, -4.0, 4.0), 2000, RandomSource::new(5, 0));
        assert!(!report.bounds_ok);
    }
}
