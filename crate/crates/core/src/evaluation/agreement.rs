use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TransitionKernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowAgreement {
    pub action: usize,
    pub node: usize,
    /// Total variation `½ Σ_j |p_j − q_j|`.
    pub tv: f64,
    /// `3 Σ_j sqrt(p̄_j (1 − p̄_j) / M)` with `p̄` the average of the two rows.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelAgreement {
    pub samples: usize,
    pub rows: Vec<RowAgreement>,
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Row-by-row agreement between a Monte Carlo kernel with `samples` draws
/// per row and a reference kernel on the same layout.
pub fn kernel_agreement(mc: &TransitionKernel, reference: &TransitionKernel) -> Result<KernelAgreement> {
    if mc.n_nodes != reference.n_nodes || mc.n_actions != reference.n_actions || mc.layout != reference.layout {
        return Err(Error::InvalidArgument("kernels do not share a layout".into()));
    }
    let samples = mc.meta.samples;
    if samples == 0 {
        return Err(Error::InvalidArgument("first kernel is not a Monte Carlo estimate".into()));
    }
    let n = mc.n_nodes;
    let mut dense_p = vec![0.0; n];
    let mut dense_q = vec![0.0; n];
    let mut rows = Vec::with_capacity(n * mc.n_actions);
    for a in 0..mc.n_actions {
        for i in 0..n {
            let (p, q) = (mc.row(a, i), reference.row(a, i));
            for (j, v) in p.iter() {
                dense_p[j] = v;
            }
            for (j, v) in q.iter() {
                dense_q[j] = v;
            }
            let mut tv = 0.0;
            let mut se = 0.0;
            let mut touched: Vec<usize> = p.cols.iter().chain(&q.cols).map(|j| *j as usize).collect();
            touched.sort_unstable();
            touched.dedup();
            for &j in &touched {
                tv += (dense_p[j] - dense_q[j]).abs();
                let pooled = 0.5 * (dense_p[j] + dense_q[j]);
                se += (pooled * (1.0 - pooled) / samples as f64).sqrt();
                dense_p[j] = 0.0;
                dense_q[j] = 0.0;
            }
            rows.push(RowAgreement {
                action: a,
                node: i,
                tv: 0.5 * tv,
                bound: 3.0 * se,
            });
        }
    }
    let worst_ratio = rows
        .iter()
        .map(|r| if r.bound > 0.0 { r.tv / r.bound } else if r.tv > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(KernelAgreement {
        samples,
        rows,
        worst_ratio,
        pass: worst_ratio <= 1.0,
    })
}

impl KernelAgreement {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("action,node,tv,bound\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.action, r.node, r.tv, r.bound));
        }
        out
    }
}
