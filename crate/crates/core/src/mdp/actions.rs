use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::BoxRegion;

/// Finite ε-net of the control set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNet {
    pub actions: Vec<Vec<f64>>,
    pub covering_radius: f64,
}

/// Uniform lattice over the control box including its endpoints. A single point
/// per axis sits at the axis midpoint.
pub fn build_action_net(control_box: &BoxRegion, per_axis_counts: &[usize]) -> Result<ActionNet> {
    if control_box.dim() != per_axis_counts.len() {
        return Err(Error::Config(format!(
            "control box has {} axes but {} counts were given",
            control_box.dim(),
            per_axis_counts.len()
        )));
    }
    let mut axes = Vec::with_capacity(per_axis_counts.len());
    let mut steps = Vec::with_capacity(per_axis_counts.len());
    for (axis, &n) in per_axis_counts.iter().enumerate() {
        let (l, u) = (control_box.lower[axis], control_box.upper[axis]);
        if n == 0 {
            return Err(Error::Config(format!("action axis {axis} needs at least one point")));
        }
        if n > 1 && !(u > l) {
            return Err(Error::Config(format!(
                "action axis {axis} is degenerate; use a single point"
            )));
        }
        if n == 1 {
            axes.push(vec![0.5 * (l + u)]);
            steps.push(u - l);
        } else {
            let step = (u - l) / (n - 1) as f64;
            axes.push(
                (0..n)
                    .map(|k| if k + 1 == n { u } else { l + k as f64 * step })
                    .collect(),
            );
            steps.push(step);
        }
    }
    let mut actions = vec![vec![]];
    for axis in &axes {
        actions = actions
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut a = prefix.clone();
                    a.push(*v);
                    a
                })
            })
            .collect();
    }
    let covering_radius = 0.5 * steps.iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok(ActionNet {
        actions,
        covering_radius,
    })
}

impl ActionNet {
    /// Explicit list of actions; each must lie in `control_box` and be distinct.
    pub fn from_actions(actions: Vec<Vec<f64>>, control_box: &BoxRegion, covering_radius: f64) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Config("action net is empty".into()));
        }
        for (k, a) in actions.iter().enumerate() {
            if a.len() != control_box.dim() || !control_box.contains(a) {
                return Err(Error::Config(format!("action {k} {a:?} is outside the control box")));
            }
            if actions[..k].contains(a) {
                return Err(Error::Config(format!("action {k} {a:?} is listed twice")));
            }
        }
        Ok(Self {
            actions,
            covering_radius,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.actions[k]
    }

    /// Index of the action closest to `a` (Euclidean), lowest index on ties.
    pub fn nearest(&self, a: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, b) in self.actions.iter().enumerate() {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }
}
