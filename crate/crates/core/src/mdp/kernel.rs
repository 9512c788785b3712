//! Sampled-time transition kernels on a truncated grid.
//!
//! Endpoints of the sampled diffusion are clipped to the grid box and spread
//! over the surrounding nodes with cloud-in-cell weights, which keeps the
//! conditional mean of an unclipped endpoint exact.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::actions::ActionNet;
use super::grid::Grid;
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::sde::{DiffusionModel, FeedbackPolicy, StepScratch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    MonteCarlo,
    /// Single Euler step over `h` integrated in closed form against the Gaussian.
    GaussianQuadrature,
    /// Supplied directly (fixtures, hand-built chains).
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationMeta {
    pub estimator: EstimatorKind,
    pub samples: usize,
    pub substeps: usize,
    pub seed: u64,
    /// Largest `|row sum − 1|` seen before renormalization.
    pub max_row_deviation: f64,
}

impl EstimationMeta {
    pub fn explicit() -> Self {
        Self {
            estimator: EstimatorKind::Explicit,
            samples: 0,
            substeps: 0,
            seed: 0,
            max_row_deviation: 0.0,
        }
    }
}

/// Grid and action net a kernel was estimated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub grid: Grid,
    pub actions: ActionNet,
}

/// One sparse row: `probs[k]` is the mass on node `cols[k]`, columns ascending.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseRow {
    pub cols: Vec<u32>,
    pub probs: Vec<f64>,
}

impl SparseRow {
    pub fn point_mass(j: usize) -> Self {
        Self {
            cols: vec![j as u32],
            probs: vec![1.0],
        }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let mut row = SparseRow::default();
        for (j, p) in dense.iter().enumerate() {
            if *p != 0.0 {
                row.cols.push(j as u32);
                row.probs.push(*p);
            }
        }
        row
    }

    /// Sum in storage order.
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    #[inline]
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.cols
            .iter()
            .zip(&self.probs)
            .map(|(j, p)| p * f[*j as usize])
            .sum()
    }

    /// Inverse-CDF draw for a uniform `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (j, p) in self.iter() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        self.cols.last().map(|j| *j as usize).unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cols.iter().zip(&self.probs).map(|(j, p)| (*j as usize, *p))
    }

    /// Scales to unit mass and then nudges the largest entry until the sum taken
    /// in storage order is exactly one. Returns the pre-normalization deviation.
    pub fn renormalize(&mut self) -> f64 {
        let total = self.total();
        let deviation = (total - 1.0).abs();
        for p in &mut self.probs {
            *p /= total;
        }
        let largest = self
            .probs
            .iter()
            .enumerate()
            .fold(0, |best, (k, p)| if *p > self.probs[best] { k } else { best });
        for _ in 0..4 {
            let s = self.total();
            if s == 1.0 {
                return deviation;
            }
            self.probs[largest] += 1.0 - s;
        }
        // Rounding inside the running sum can make it skip over 1 whatever the
        // largest entry is. The final addition is monotone in the last entry,
        // so solve for that one, first pulling the partial sum to at most 1.
        let last = self.probs.len() - 1;
        let largest = self.probs[..last]
            .iter()
            .enumerate()
            .fold(0, |best, (k, p)| if *p > self.probs[best] { k } else { best });
        let mut head: f64 = self.probs[..last].iter().sum();
        while head > 1.0 && last > 0 {
            self.probs[largest] = self.probs[largest].next_down();
            head = self.probs[..last].iter().sum();
        }
        let mut p = (1.0 - head).max(0.0);
        for _ in 0..64 {
            let s = head + p;
            if s == 1.0 {
                break;
            }
            p = if s > 1.0 { p.next_down().max(0.0) } else { p.next_up() };
        }
        self.probs[last] = p;
        deviation
    }
}

/// Per-action row-stochastic matrices `P[a][i][j]` for sampling period `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    pub h: f64,
    pub n_nodes: usize,
    pub n_actions: usize,
    pub meta: EstimationMeta,
    pub layout: Option<Layout>,
    /// Action-major: row `(a, i)` is stored at `a * n_nodes + i`.
    rows: Vec<SparseRow>,
}

impl TransitionKernel {
    /// Builds a kernel from explicit rows `rows[a][i]`, validating stochasticity.
    pub fn from_rows(h: f64, rows: Vec<Vec<SparseRow>>, meta: EstimationMeta, layout: Option<Layout>) -> Result<Self> {
        let n_actions = rows.len();
        if n_actions == 0 {
            return Err(Error::Assembly("kernel has no actions".into()));
        }
        let n_nodes = rows[0].len();
        if n_nodes == 0 {
            return Err(Error::Assembly("kernel has no nodes".into()));
        }
        if !(h > 0.0) {
            return Err(Error::Assembly(format!("sampling period {h} must be positive")));
        }
        if let Some(l) = &layout {
            if l.grid.len() != n_nodes || l.actions.len() != n_actions {
                return Err(Error::Assembly(format!(
                    "layout is {}×{} but kernel is {n_nodes}×{n_actions}",
                    l.grid.len(),
                    l.actions.len()
                )));
            }
        }
        let mut flat = Vec::with_capacity(n_nodes * n_actions);
        for (a, per_action) in rows.into_iter().enumerate() {
            if per_action.len() != n_nodes {
                return Err(Error::Assembly(format!("action {a} has {} rows, expected {n_nodes}", per_action.len())));
            }
            for (i, row) in per_action.into_iter().enumerate() {
                if row.cols.len() != row.probs.len() {
                    return Err(Error::Assembly(format!("row ({a}, {i}) has mismatched lengths")));
                }
                if row.cols.iter().any(|j| *j as usize >= n_nodes) {
                    return Err(Error::Assembly(format!("row ({a}, {i}) points outside the node set")));
                }
                if row.cols.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Assembly(format!("row ({a}, {i}) columns are not strictly increasing")));
                }
                if row.probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::Assembly(format!("row ({a}, {i}) has a negative entry")));
                }
                if (row.total() - 1.0).abs() > 1e-9 {
                    return Err(Error::Assembly(format!("row ({a}, {i}) sums to {}", row.total())));
                }
                flat.push(row);
            }
        }
        Ok(Self {
            h,
            n_nodes,
            n_actions,
            meta,
            layout,
            rows: flat,
        })
    }

    /// Builds from dense matrices `p[a][i][j]`.
    pub fn from_dense(h: f64, p: &[Vec<Vec<f64>>]) -> Result<Self> {
        let rows = p
            .iter()
            .map(|m| m.iter().map(|r| SparseRow::from_dense(r)).collect())
            .collect();
        Self::from_rows(h, rows, EstimationMeta::explicit(), None)
    }

    /// Every row a point mass on its own node.
    pub fn identity(h: f64, layout: Layout) -> Self {
        let n = layout.grid.len();
        let m = layout.actions.len();
        let rows = (0..m)
            .flat_map(|_| (0..n).map(SparseRow::point_mass))
            .collect();
        Self {
            h,
            n_nodes: n,
            n_actions: m,
            meta: EstimationMeta::explicit(),
            layout: Some(layout),
            rows,
        }
    }

    #[inline]
    pub fn row(&self, action: usize, node: usize) -> &SparseRow {
        &self.rows[action * self.n_nodes + node]
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.layout.as_ref().map(|l| &l.grid)
    }

    pub fn actions(&self) -> Option<&ActionNet> {
        self.layout.as_ref().map(|l| &l.actions)
    }

    /// Largest `|row sum − 1|` over stored rows.
    pub fn max_row_error(&self) -> f64 {
        self.rows.iter().map(|r| (r.total() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.probs.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// `μ ↦ μ P_π` for a deterministic policy.
    pub fn push_forward(&self, policy: &[usize], mu: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, (m, a)) in mu.iter().zip(policy).enumerate() {
            if *m == 0.0 {
                continue;
            }
            for (j, p) in self.row(*a, i).iter() {
                out[j] += m * p;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = KernelFile::from(self);
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: KernelFile = serde_json::from_str(&text)?;
        file.into_kernel()
    }
}

pub const KERNEL_FORMAT: &str = "mca-kernel/1";

/// On-disk kernel: header followed by rows of `(column, probability)` pairs,
/// action-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub format: String,
    pub dim: Option<usize>,
    pub h: f64,
    pub n_nodes: usize,
    pub n_actions: usize,
    pub layout: Option<Layout>,
    pub meta: EstimationMeta,
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl From<&TransitionKernel> for KernelFile {
    fn from(k: &TransitionKernel) -> Self {
        Self {
            format: KERNEL_FORMAT.into(),
            dim: k.grid().map(Grid::dim),
            h: k.h,
            n_nodes: k.n_nodes,
            n_actions: k.n_actions,
            layout: k.layout.clone(),
            meta: k.meta.clone(),
            rows: k
                .rows
                .iter()
                .map(|r| r.cols.iter().copied().zip(r.probs.iter().copied()).collect())
                .collect(),
        }
    }
}

impl KernelFile {
    pub fn into_kernel(self) -> Result<TransitionKernel> {
        if self.format != KERNEL_FORMAT {
            return Err(Error::Assembly(format!("unknown kernel format {:?}", self.format)));
        }
        if self.rows.len() != self.n_nodes * self.n_actions {
            return Err(Error::Assembly(format!(
                "kernel file has {} rows, header says {}×{}",
                self.rows.len(),
                self.n_nodes,
                self.n_actions
            )));
        }
        let mut it = self.rows.into_iter();
        let rows = (0..self.n_actions)
            .map(|_| {
                (0..self.n_nodes)
                    .map(|_| {
                        let pairs = it.next().unwrap_or_default();
                        SparseRow {
                            cols: pairs.iter().map(|p| p.0).collect(),
                            probs: pairs.iter().map(|p| p.1).collect(),
                        }
                    })
                    .collect()
            })
            .collect();
        TransitionKernel::from_rows(self.h, rows, self.meta, self.layout)
    }
}

/// Dense accumulator reused across tasks on one worker.
struct Accumulator {
    mass: Vec<f64>,
    touched: Vec<u32>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            mass: vec![0.0; n],
            touched: Vec::new(),
        }
    }

    #[inline]
    fn add(&mut self, j: usize, w: f64) {
        if self.mass[j] == 0.0 {
            self.touched.push(j as u32);
        }
        self.mass[j] += w;
    }

    fn drain(&mut self, scale: f64) -> SparseRow {
        self.touched.sort_unstable();
        let mut row = SparseRow::default();
        for &j in &self.touched {
            let m = std::mem::take(&mut self.mass[j as usize]);
            if m > 0.0 {
                row.cols.push(j);
                row.probs.push(m * scale);
            }
        }
        self.touched.clear();
        row
    }
}

fn check_layout(model: &DiffusionModel, grid: &Grid, actions: &ActionNet) -> Result<()> {
    if grid.dim() != model.dim {
        return Err(Error::InvalidArgument(format!("grid is {}-d but model is {}-d", grid.dim(), model.dim)));
    }
    if actions.actions.iter().any(|a| a.len() != model.control_dim()) {
        return Err(Error::InvalidArgument("action dimension does not match the control box".into()));
    }
    Ok(())
}

fn assemble(h: f64, n: usize, m: usize, layout: Option<Layout>, meta: EstimationMeta, tasks: Vec<Result<SparseRow>>) -> Result<TransitionKernel> {
    let mut rows = vec![SparseRow::default(); n * m];
    let mut worst = 0.0f64;
    // tasks are node-major (i·m + a), storage is action-major
    for (t, row) in tasks.into_iter().enumerate() {
        let mut row = row?;
        worst = worst.max(row.renormalize());
        let (i, a) = (t / m, t % m);
        rows[a * n + i] = row;
    }
    if worst > 1e-9 {
        log::warn!("kernel row sums deviated by {worst:e} before renormalization");
    }
    Ok(TransitionKernel {
        h,
        n_nodes: n,
        n_actions: m,
        meta: EstimationMeta {
            max_row_deviation: worst,
            ..meta
        },
        layout,
        rows,
    })
}

fn check_mc_args(h: f64, substeps: usize, samples: usize) -> Result<()> {
    if substeps == 0 || samples == 0 {
        return Err(Error::InvalidArgument("substeps and samples must be at least 1".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling period {h} must be positive")));
    }
    Ok(())
}

/// Simulates `samples` Euler paths over `[0, h]` from every node for each of
/// `m` action slots. Task `t = i·m + a` uses stream `t`.
#[allow(clippy::too_many_arguments)]
fn mc_rows(
    model: &DiffusionModel,
    grid: &Grid,
    m: usize,
    action_of: &(dyn Fn(usize, usize, &[f64], &mut [f64]) + Sync),
    h: f64,
    substeps: usize,
    samples: usize,
    rng: RandomSource,
) -> Vec<Result<SparseRow>> {
    let n = grid.len();
    let d = model.dim;
    let k = model.control_dim();
    let dt = h / substeps as f64;
    let scale = 1.0 / samples as f64;
    (0..n * m)
        .into_par_iter()
        .map_init(
            || {
                (
                    Accumulator::new(n),
                    StepScratch::new(d),
                    vec![0.0; d],
                    vec![0.0; d],
                    vec![0.0; d],
                    vec![0.0; k],
                )
            },
            |(acc, scratch, start, x, z, action), t| {
                let (i, a) = (t / m, t % m);
                grid.coords_into(i, start);
                action_of(i, a, start, action);
                let mut g = rng.stream(t as u64).generator();
                for _ in 0..samples {
                    x.copy_from_slice(start);
                    for s in 0..substeps {
                        g.fill_normal(z);
                        model.euler_step(x, action, dt, z, scratch);
                        if x.iter().any(|v| !v.is_finite()) {
                            acc.drain(0.0);
                            return Err(Error::SimulationDiverged { step: s }
                                .context(format!("kernel estimation at node {i}, action {a}")));
                        }
                    }
                    grid.deposit(x, |j, w| acc.add(j, w));
                }
                Ok(acc.drain(scale))
            },
        )
        .collect()
}

/// Monte Carlo estimate of the sampled kernel: for each (node, action),
/// `samples` Euler paths over `[0, h]` with `substeps` steps and the action
/// held fixed. Task `(i, a)` draws from stream `i·|actions| + a`.
pub fn estimate_kernel_mc(
    model: &DiffusionModel,
    grid: &Grid,
    actions: &ActionNet,
    h: f64,
    substeps: usize,
    samples: usize,
    rng: RandomSource,
) -> Result<TransitionKernel> {
    check_layout(model, grid, actions)?;
    check_mc_args(h, substeps, samples)?;
    let pick = |_: usize, a: usize, _: &[f64], out: &mut [f64]| out.copy_from_slice(actions.get(a));
    let tasks = mc_rows(model, grid, actions.len(), &pick, h, substeps, samples, rng);
    let meta = EstimationMeta {
        estimator: EstimatorKind::MonteCarlo,
        samples,
        substeps,
        seed: rng.master_seed,
        max_row_deviation: 0.0,
    };
    let layout = Layout {
        grid: grid.clone(),
        actions: actions.clone(),
    };
    assemble(h, grid.len(), actions.len(), Some(layout), meta, tasks)
}

/// Kernel of the chain under a fixed feedback policy, sampled at the nodes:
/// a single action slot whose action at node `x_i` is `policy(x_i)`. The
/// result has no action layout; pair it with `grid` yourself.
pub fn estimate_policy_kernel(
    model: &DiffusionModel,
    grid: &Grid,
    policy: &dyn FeedbackPolicy,
    h: f64,
    substeps: usize,
    samples: usize,
    rng: RandomSource,
) -> Result<TransitionKernel> {
    if grid.dim() != model.dim {
        return Err(Error::InvalidArgument(format!("grid is {}-d but model is {}-d", grid.dim(), model.dim)));
    }
    check_mc_args(h, substeps, samples)?;
    let pick = |_: usize, _: usize, x: &[f64], out: &mut [f64]| policy.action_into(x, out);
    let tasks = mc_rows(model, grid, 1, &pick, h, substeps, samples, rng);
    let meta = EstimationMeta {
        estimator: EstimatorKind::MonteCarlo,
        samples,
        substeps,
        seed: rng.master_seed,
        max_row_deviation: 0.0,
    };
    assemble(h, grid.len(), 1, None, meta, tasks)
}

/// Policy kernel from one Euler step integrated in closed form (d = 1 only):
/// row `i` is the deposited law of `x_i + b(x_i, u(x_i))h + σ(x_i)√h·N(0, 1)`.
pub fn estimate_policy_kernel_quadrature_1d(
    model: &DiffusionModel,
    grid: &Grid,
    policy: &dyn FeedbackPolicy,
    h: f64,
) -> Result<TransitionKernel> {
    if model.dim != 1 || grid.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "closed-form kernel needs a 1-d model and grid, got {} and {}",
            model.dim,
            grid.dim()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("sampling period {h} must be positive")));
    }
    let tasks: Vec<Result<SparseRow>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.coords(i);
            let mut u = vec![0.0; model.control_dim()];
            policy.action_into(&x, &mut u);
            let b = model.drift(&x, &u)[0];
            let s = model.sigma(&x)[0].abs();
            Ok(gaussian_deposit_1d(grid, x[0] + b * h, s * h.sqrt()))
        })
        .collect();
    let meta = EstimationMeta {
        estimator: EstimatorKind::GaussianQuadrature,
        samples: 0,
        substeps: 1,
        seed: 0,
        max_row_deviation: 0.0,
    };
    assemble(h, grid.len(), 1, None, meta, tasks)
}

/// `E[(Y − u)^+]` for `Y ~ N(mean, sd²)`.
fn call_payoff(mean: f64, sd: f64, u: f64) -> f64 {
    let z = (mean - u) / sd;
    let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (mean - u) * cdf + sd * pdf
}

/// Cloud-in-cell masses of a clipped `N(mean, sd²)` endpoint on a 1-d grid,
/// integrated exactly. Each hat function is a second difference of ramps, so
/// its expectation is a second difference of [`call_payoff`].
pub fn gaussian_deposit_1d(grid: &Grid, mean: f64, sd: f64) -> SparseRow {
    let n = grid.counts[0];
    let lo = grid.bounds.lower[0];
    let delta = grid.spacing[0];
    if !(sd > 1e-12 * delta) {
        let mut row = SparseRow::default();
        grid.deposit(&[mean], |j, w| {
            row.cols.push(j as u32);
            row.probs.push(w);
        });
        return row;
    }
    let reach = 12.0 * sd;
    let first = (((mean - reach - lo) / delta).floor().max(0.0) as usize).min(n - 1);
    let last = (((mean + reach - lo) / delta).ceil().max(0.0) as usize).min(n - 1);
    let x = |j: usize| grid.coords(j)[0];
    // Calls and puts differ by a linear function, so hat masses can use
    // whichever is out of the money and avoid cancellation.
    let c = |j: usize| call_payoff(mean, sd, x(j));
    let p = |j: usize| call_payoff(-mean, sd, -x(j));
    let mut row = SparseRow::default();
    for j in first..=last {
        let below = x(j) < mean;
        let mass = if j == 0 {
            if below {
                (p(1) - p(0)) / delta
            } else {
                1.0 - (c(0) - c(1)) / delta
            }
        } else if j + 1 == n {
            if below {
                1.0 - (p(n - 1) - p(n - 2)) / delta
            } else {
                (c(n - 2) - c(n - 1)) / delta
            }
        } else if below {
            (p(j - 1) - 2.0 * p(j) + p(j + 1)) / delta
        } else {
            (c(j - 1) - 2.0 * c(j) + c(j + 1)) / delta
        };
        if mass > 0.0 {
            row.cols.push(j as u32);
            row.probs.push(mass);
        }
    }
    row
}

/// Deterministic 1-d kernel: one Euler step over `h` gives an exactly Gaussian
/// endpoint, whose cloud-in-cell deposition is integrated in closed form.
pub fn estimate_kernel_quadrature_1d(
    model: &DiffusionModel,
    grid: &Grid,
    actions: &ActionNet,
    h: f64,
) -> Result<TransitionKernel> {
    if model.dim != 1 {
        return Err(Error::Unsupported(format!(
            "closed-form kernel needs a 1-d model, got dim {}",
            model.dim
        )));
    }
    check_layout(model, grid, actions)?;
    let n = grid.len();
    let m = actions.len();
    let tasks: Vec<Result<SparseRow>> = (0..n * m)
        .into_par_iter()
        .map(|t| {
            let (i, a) = (t / m, t % m);
            let x = grid.coords(i);
            let b = model.drift(&x, actions.get(a))[0];
            let s = model.sigma(&x)[0].abs();
            Ok(gaussian_deposit_1d(grid, x[0] + b * h, s * h.sqrt()))
        })
        .collect();
    let meta = EstimationMeta {
        estimator: EstimatorKind::GaussianQuadrature,
        samples: 0,
        substeps: 1,
        seed: 0,
        max_row_deviation: 0.0,
    };
    let layout = Layout {
        grid: grid.clone(),
        actions: actions.clone(),
    };
    assemble(h, n, m, Some(layout), meta, tasks)
}
