use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::sde::{substeps_per_period, DiffusionModel, FeedbackPolicy, StepScratch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub h: f64,
    /// Sampling periods covered (`N` with `N·h` the horizon).
    pub periods: usize,
    /// `max_{t ≤ Nh} E|X_t − X^h(t)|²` over the fine time grid, with `X^h`
    /// the piecewise-constant interpolation of the chain.
    pub z: f64,
    /// `max_{n ≤ N} E|X_{nh} − X^h_n|²`, sampling instants only.
    pub z_sampled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTable {
    pub rows: Vec<CouplingRow>,
    /// Least-squares slope of `log z` against `log h`.
    pub slope: f64,
    pub slope_sampled: f64,
    /// `z` increases strictly with `h`.
    pub monotone: bool,
    pub horizon: f64,
    pub dt: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSettings {
    pub h_list: Vec<f64>,
    /// `N·h`, shared by every `h`.
    pub horizon: f64,
    pub dt: f64,
    pub replications: usize,
}

/// Replications are summed in this many fixed blocks, then the blocks are
/// reduced in order; the totals do not depend on the worker count.
const BLOCKS: usize = 64;

pub fn log_log_slope(h: &[f64], z: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = z.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Synchronous coupling of the diffusion under continuous feedback `policy`
/// with the sampled chain that applies the same policy only at multiples of
/// `h`. Both run Euler steps of size `dt` from `x0` on identical Gaussian
/// increments (replication `r` on stream `r`, shared across all `h`).
pub fn coupling_experiment(
    model: &DiffusionModel,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    settings: &CouplingSettings,
    rng: RandomSource,
) -> Result<CouplingTable> {
    let d = model.dim;
    let k = model.control_dim();
    if x0.len() != d {
        return Err(Error::InvalidArgument(format!("x0 has length {} but dim is {d}", x0.len())));
    }
    if settings.replications == 0 || settings.h_list.is_empty() {
        return Err(Error::InvalidArgument("need at least one h and one replication".into()));
    }
    let dt = settings.dt;
    let fine = substeps_per_period(settings.horizon, dt)?;
    let mut holds = Vec::with_capacity(settings.h_list.len());
    for &h in &settings.h_list {
        let s = substeps_per_period(h, dt).map_err(|e| e.context(format!("coupling at h = {h}")))?;
        if fine % s != 0 {
            return Err(Error::InvalidArgument(format!("h = {h} does not divide the horizon {}", settings.horizon)));
        }
        holds.push(s);
    }
    let nh = holds.len();
    let width = fine + 1;
    let reps = settings.replications;

    let blocks: Vec<Result<Vec<f64>>> = (0..BLOCKS)
        .into_par_iter()
        .map(|b| {
            // [interp | sampled] per h, each of length `width`
            let mut acc = vec![0.0; 2 * nh * width];
            let mut scratch = StepScratch::new(d);
            let mut z = vec![0.0; d];
            let mut x = vec![0.0; d];
            let mut a = vec![0.0; k];
            let mut path = vec![0.0; width * d];
            let mut y = vec![0.0; d];
            let mut held = vec![0.0; d];
            let mut incr = vec![0.0; fine * d];
            for r in (b * reps / BLOCKS)..((b + 1) * reps / BLOCKS) {
                let mut g = rng.stream(r as u64).generator();
                g.fill_normal(&mut incr);
                x.copy_from_slice(x0);
                path[..d].copy_from_slice(x0);
                for j in 0..fine {
                    policy.action_into(&x, &mut a);
                    z.copy_from_slice(&incr[j * d..(j + 1) * d]);
                    model.euler_step(&mut x, &a, dt, &z, &mut scratch);
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::SimulationDiverged { step: j });
                    }
                    path[(j + 1) * d..(j + 2) * d].copy_from_slice(&x);
                }
                for (hi, &s) in holds.iter().enumerate() {
                    let (interp, sampled) = acc[2 * hi * width..(2 * hi + 2) * width].split_at_mut(width);
                    y.copy_from_slice(x0);
                    for j in 0..fine {
                        if j % s == 0 {
                            held.copy_from_slice(&y);
                            policy.action_into(&y, &mut a);
                            sampled[j] += sq_dist(&path[j * d..(j + 1) * d], &y);
                        }
                        interp[j] += sq_dist(&path[j * d..(j + 1) * d], &held);
                        z.copy_from_slice(&incr[j * d..(j + 1) * d]);
                        model.euler_step(&mut y, &a, dt, &z, &mut scratch);
                        if y.iter().any(|v| !v.is_finite()) {
                            return Err(Error::SimulationDiverged { step: j });
                        }
                    }
                    // at t = Nh the interpolation jumps to the new chain state
                    let end = sq_dist(&path[fine * d..], &y);
                    interp[fine] += end;
                    sampled[fine] += end;
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = vec![0.0; 2 * nh * width];
    for block in blocks {
        for (t, v) in total.iter_mut().zip(block?) {
            *t += v;
        }
    }
    let scale = 1.0 / reps as f64;
    let rows: Vec<CouplingRow> = settings
        .h_list
        .iter()
        .zip(&holds)
        .enumerate()
        .map(|(hi, (&h, &s))| {
            let interp = &total[2 * hi * width..(2 * hi + 1) * width];
            let sampled = &total[(2 * hi + 1) * width..(2 * hi + 2) * width];
            CouplingRow {
                h,
                periods: fine / s,
                z: interp.iter().copied().fold(0.0, f64::max) * scale,
                z_sampled: sampled.iter().step_by(s).copied().fold(0.0, f64::max) * scale,
            }
        })
        .collect();
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let zs: Vec<f64> = rows.iter().map(|r| r.z).collect();
    let zs_sampled: Vec<f64> = rows.iter().map(|r| r.z_sampled).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| hs[a].total_cmp(&hs[b]));
    let monotone = order.windows(2).all(|w| zs[w[0]] < zs[w[1]]);
    let slope = if rows.len() > 1 { log_log_slope(&hs, &zs) } else { f64::NAN };
    let slope_sampled = if rows.len() > 1 { log_log_slope(&hs, &zs_sampled) } else { f64::NAN };
    Ok(CouplingTable {
        rows,
        slope,
        slope_sampled,
        monotone,
        horizon: settings.horizon,
        dt,
        replications: reps,
    })
}

impl CouplingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,periods,z,z_sampled\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.h, r.periods, r.z, r.z_sampled));
        }
        out
    }
}
