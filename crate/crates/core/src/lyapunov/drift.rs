use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::certificate::LyapunovCertificate;
use crate::error::{Error, Result};
use crate::mdp::{ActionNet, TransitionKernel};
use crate::sde::{apply_generator, BoxRegion, DiffusionModel};

pub const DRIFT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants {
    pub c0: f64,
    pub c1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousDriftReport {
    pub check: String,
    pub pass: bool,
    /// Largest `L_a V + C1·V − C0·1_K` over test nodes and actions.
    pub worst_violation: f64,
    pub location: Vec<f64>,
    pub action: Vec<f64>,
    pub constants: DriftConstants,
    /// Smallest `C0` that would pass at these nodes, if any does.
    pub required_c0: Option<f64>,
    /// Number of test nodes with a violation above the slack.
    pub violations: usize,
    /// Bounding box of the violating nodes.
    pub violation_hull: Option<BoxRegion>,
}

/// Worst-case `L_a V + C1·V` over the action net at each node.
fn drift_margins(
    model: &DiffusionModel,
    cert: &LyapunovCertificate,
    nodes: &[Vec<f64>],
    actions: &ActionNet,
) -> Vec<(f64, usize)> {
    nodes
        .par_iter()
        .map(|x| {
            let v = cert.value(x);
            let mut worst = (f64::NEG_INFINITY, 0);
            for (k, a) in actions.actions.iter().enumerate() {
                let m = apply_generator(model, cert.v.as_ref(), x, a) + cert.c1 * v;
                if m > worst.0 {
                    worst = (m, k);
                }
            }
            worst
        })
        .collect()
}

/// Checks `L_a V(x) ≤ C0·1_K(x) − C1·V(x)` at every test node and action.
pub fn check_continuous_drift(
    model: &DiffusionModel,
    cert: &LyapunovCertificate,
    test_nodes: &[Vec<f64>],
    actions: &ActionNet,
) -> ContinuousDriftReport {
    let margins = drift_margins(model, cert, test_nodes, actions);
    let mut worst = (f64::NEG_INFINITY, 0usize, 0usize);
    let mut inside_max = 0.0f64;
    let mut outside_ok = true;
    let mut violating: Vec<&[f64]> = Vec::new();
    for (i, (x, (m, a))) in test_nodes.iter().zip(&margins).enumerate() {
        let in_k = cert.k.contains(x);
        let excess = m - if in_k { cert.c0 } else { 0.0 };
        if excess > worst.0 {
            worst = (excess, i, *a);
        }
        if excess > DRIFT_SLACK {
            violating.push(x);
        }
        if in_k {
            inside_max = inside_max.max(*m);
        } else if *m > DRIFT_SLACK {
            outside_ok = false;
        }
    }
    let violation_hull = (!violating.is_empty()).then(|| {
        let d = violating[0].len();
        let lower = (0..d).map(|k| violating.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min)).collect();
        let upper = (0..d).map(|k| violating.iter().map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
        BoxRegion { lower, upper }
    });
    let (location, action) = if test_nodes.is_empty() {
        (vec![], vec![])
    } else {
        (test_nodes[worst.1].clone(), actions.get(worst.2).to_vec())
    };
    ContinuousDriftReport {
        check: "continuous_drift".into(),
        pass: worst.0 <= DRIFT_SLACK,
        worst_violation: worst.0,
        location,
        action,
        constants: DriftConstants {
            c0: cert.c0,
            c1: cert.c1,
        },
        required_c0: outside_ok.then_some(inside_max),
        violations: violating.len(),
        violation_hull,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDriftReport {
    pub check: String,
    pub pass: bool,
    pub h: f64,
    /// `1 − e^{−C1·h}`.
    pub epsilon: f64,
    /// Smallest `Ĉ0` with `P_a V ≤ (1−ε)V + Ĉ0` at every node and action.
    pub c0_hat: f64,
    /// `C0·(1 − e^{−C1 h})/C1`, the constant the continuous certificate predicts.
    pub predicted_c0_hat: f64,
    /// Largest `V` among nodes where `P_a V > (1−ε)V` for some action; the
    /// smallest admissible `K̂` is `{V ≤ k_hat_level}`.
    pub k_hat_level: f64,
    /// Smallest `V` over boundary nodes of the grid.
    pub boundary_level: f64,
    pub k_hat_interior: bool,
    pub violations: usize,
    /// Node with the largest excess `P_a V − (1−ε)V`.
    pub location: Vec<f64>,
    pub constants: DriftConstants,
}

/// Per node: `max_a P_a V(i) − (1−ε)V(i)`.
fn discrete_excess(kernel: &TransitionKernel, values: &[f64], keep: f64) -> Vec<f64> {
    (0..kernel.n_nodes)
        .into_par_iter()
        .map(|i| {
            let pv = (0..kernel.n_actions)
                .map(|a| kernel.row(a, i).expect(values))
                .fold(f64::NEG_INFINITY, f64::max);
            pv - keep * values[i]
        })
        .collect()
}

fn node_values(kernel: &TransitionKernel, cert: &LyapunovCertificate) -> Result<Vec<f64>> {
    let grid = kernel
        .grid()
        .ok_or_else(|| Error::InvalidArgument("kernel carries no grid".into()))?;
    if grid.dim() != cert.k.dim() {
        return Err(Error::BoxMismatch);
    }
    Ok((0..grid.len()).map(|i| cert.value(&grid.coords(i))).collect())
}

/// Discrete drift `Σ_j P_a(i,j)V(x_j) ≤ (1−ε)V(x_i) + Ĉ0·1_K̂(x_i)` with
/// `ε = 1 − e^{−C1 h}` and `h` taken from the kernel. Passes when the
/// smallest admissible `K̂` stays off the grid boundary.
pub fn check_discrete_drift(kernel: &TransitionKernel, cert: &LyapunovCertificate) -> Result<DiscreteDriftReport> {
    let values = node_values(kernel, cert)?;
    let grid = kernel.grid().expect("checked above");
    let h = kernel.h;
    let keep = (-cert.c1 * h).exp();
    let excess = discrete_excess(kernel, &values, keep);

    let mut c0_hat = 0.0f64;
    let mut arg = 0;
    let mut level = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut boundary_level = f64::INFINITY;
    for (i, e) in excess.iter().enumerate() {
        if *e > c0_hat {
            c0_hat = *e;
            arg = i;
        }
        if *e > 0.0 {
            violations += 1;
            level = level.max(values[i]);
        }
        if grid.is_boundary(i) {
            boundary_level = boundary_level.min(values[i]);
        }
    }
    let k_hat_interior = level < boundary_level;
    Ok(DiscreteDriftReport {
        check: "discrete_drift".into(),
        pass: k_hat_interior,
        h,
        epsilon: 1.0 - keep,
        c0_hat,
        predicted_c0_hat: cert.c0 * (1.0 - keep) / cert.c1,
        k_hat_level: level,
        boundary_level,
        k_hat_interior,
        violations,
        location: grid.coords(arg),
        constants: DriftConstants {
            c0: cert.c0,
            c1: cert.c1,
        },
    })
}

/// Tests the discrete drift inequality for a given `Ĉ0` with
/// `K̂ = {V ≤ Ĉ0 / (1 − ε − e^{−C1 h} + slack)}`.
pub fn discrete_drift_holds(kernel: &TransitionKernel, cert: &LyapunovCertificate, c0_hat: f64, slack: f64) -> Result<bool> {
    if !(slack > 0.0) {
        return Err(Error::InvalidArgument(format!("slack {slack} must be positive")));
    }
    let values = node_values(kernel, cert)?;
    let decay = (-cert.c1 * kernel.h).exp();
    let eps = 1.0 - decay;
    let level = c0_hat / (1.0 - eps - decay + slack);
    let excess = discrete_excess(kernel, &values, 1.0 - eps);
    Ok(excess
        .iter()
        .zip(&values)
        .all(|(e, v)| *e <= if *v <= level { c0_hat } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::CertificateShape;
    use crate::mdp::{build_action_net, build_grid, estimate_kernel_quadrature_1d, Layout};
    use crate::sde::ModelConstants;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn benchmark() -> DiffusionModel {
        DiffusionModel::new(
            "bench",
            1,
            BoxRegion::cube(1, -0.5, 0.5),
            ModelConstants {
                bound_b: 1.5,
                bound_sigma: 0.5,
                bound_c: 1.025,
                lipschitz_b: 2.25,
                lipschitz_sigma: 0.0,
                lipschitz_c: 1.0,
                nondegeneracy_floor: 0.125,
            },
            Arc::new(|x, a, out| out[0] = -(2.0 * x[0]).tanh() + a[0]),
            Arc::new(|_, out| out[0] = 0.5),
            Arc::new(|x, a| x[0] * x[0] / (1.0 + x[0] * x[0]) + 0.1 * a[0] * a[0]),
        )
        .unwrap()
    }

    fn cosh_cert(c0: f64) -> LyapunovCertificate {
        LyapunovCertificate::from_shape(CertificateShape::Cosh { scale: 0.5 }, c0, 0.15, BoxRegion::cube(1, -2.0, 2.0)).unwrap()
    }

    /// Closed form of `L_a cosh(x/2) + C1·cosh(x/2)` for the benchmark, σ = 0.5.
    fn margin_oracle(x: f64, a: f64, c1: f64) -> f64 {
        let b = -(2.0 * x).tanh() + a;
        0.125 * 0.25 * (0.5 * x).cosh() + b * 0.5 * (0.5 * x).sinh() + c1 * (0.5 * x).cosh()
    }

    #[test]
    fn cosh_certificate_margins_match_direct_evaluation() {
        let model = benchmark();
        let grid = build_grid(&BoxRegion::cube(1, -4.0, 4.0), &[161]).unwrap();
        let net = build_action_net(&model.control_box, &[11]).unwrap();
        let report = check_continuous_drift(&model, &cosh_cert(0.25), &grid.nodes(), &net);
        let mut inside = 0.0f64;
        let mut outside = f64::NEG_INFINITY;
        for x in grid.nodes() {
            let worst = net.actions.iter().map(|a| margin_oracle(x[0], a[0], 0.15)).fold(f64::NEG_INFINITY, f64::max);
            if x[0].abs() <= 2.0 {
                inside = inside.max(worst);
            } else {
                outside = outside.max(worst);
            }
        }
        assert!(outside < 0.0);
        assert!((report.required_c0.unwrap() - inside).abs() < 1e-12);
        assert!(report.pass);
        assert!(!check_continuous_drift(&model, &cosh_cert(0.5 * inside), &grid.nodes(), &net).pass);
    }

    #[test]
    fn zero_certificate_passes_trivially() {
        let model = benchmark();
        let grid = build_grid(&BoxRegion::cube(1, -4.0, 4.0), &[41]).unwrap();
        let net = build_action_net(&model.control_box, &[3]).unwrap();
        let zero = LyapunovCertificate::from_shape(CertificateShape::Zero, 1.0, 1.0, BoxRegion::cube(1, -2.0, 2.0)).unwrap();
        let report = check_continuous_drift(&model, &zero, &grid.nodes(), &net);
        assert!(report.pass);
        assert!(!zero.shape_report(&grid).inf_compact_proxy());
    }

    #[test]
    fn pushing_drift_violates_on_the_side_it_pushes_toward() {
        // b ≡ +1: L V + C1 V = (σ²/8 + C1) cosh(x/2) + ½ sinh(x/2) > 0 exactly when
        // tanh(x/2) > −2(σ²/8 + C1); with C1 = 0.15 that is x > −0.366…
        let model = DiffusionModel::new(
            "push",
            1,
            BoxRegion::cube(1, 0.0, 0.0),
            ModelConstants {
                bound_b: 1.0,
                bound_sigma: 0.5,
                bound_c: 1.0,
                lipschitz_b: 0.0,
                lipschitz_sigma: 0.0,
                lipschitz_c: 0.0,
                nondegeneracy_floor: 0.125,
            },
            Arc::new(|_, _, out| out[0] = 1.0),
            Arc::new(|_, out| out[0] = 0.5),
            Arc::new(|_, _| 0.0),
        )
        .unwrap();
        let grid = build_grid(&BoxRegion::cube(1, -4.0, 4.0), &[81]).unwrap();
        let net = build_action_net(&model.control_box, &[1]).unwrap();
        let cert = LyapunovCertificate::from_shape(CertificateShape::Cosh { scale: 0.5 }, 1e-6, 0.15, BoxRegion::cube(1, -1e-3, 1e-3)).unwrap();
        let report = check_continuous_drift(&model, &cert, &grid.nodes(), &net);
        assert!(!report.pass);
        let threshold = 2.0 * (-2.0f64 * (0.03125 + 0.15)).atanh();
        let hull = report.violation_hull.unwrap();
        assert!(hull.lower[0] > threshold && hull.lower[0] - threshold <= 0.1 + 1e-12);
        assert_eq!(hull.upper[0], 4.0);
    }

    fn benchmark_kernel(h: f64) -> TransitionKernel {
        let model = benchmark();
        let grid = build_grid(&BoxRegion::cube(1, -4.0, 4.0), &[161]).unwrap();
        let net = build_action_net(&model.control_box, &[5]).unwrap();
        estimate_kernel_quadrature_1d(&model, &grid, &net, h).unwrap()
    }

    #[test]
    fn discrete_drift_on_benchmark_kernel() {
        let cert = cosh_cert(0.25);
        for h in [0.2, 0.05] {
            let report = check_discrete_drift(&benchmark_kernel(h), &cert).unwrap();
            assert!(report.pass, "{report:?}");
            let ratio = report.c0_hat / report.predicted_c0_hat;
            assert!(ratio > 0.25 && ratio < 4.0, "ratio {ratio}");
            assert!(report.k_hat_level < report.boundary_level);
        }
    }

    #[test]
    fn identity_kernel_is_infeasible() {
        let model = benchmark();
        let grid = build_grid(&BoxRegion::cube(1, -4.0, 4.0), &[41]).unwrap();
        let actions = build_action_net(&model.control_box, &[3]).unwrap();
        let k = TransitionKernel::identity(0.1, Layout { grid, actions });
        let report = check_discrete_drift(&k, &cosh_cert(0.25)).unwrap();
        assert!(!report.pass);
        assert_eq!(report.violations, 41);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn feasibility_is_monotone_in_c0_hat(c in 0.0f64..0.05, extra in 0.0f64..0.05) {
            let k = benchmark_kernel(0.1);
            let cert = cosh_cert(0.25);
            if discrete_drift_holds(&k, &cert, c, 0.01).unwrap() {
                prop_assert!(discrete_drift_holds(&k, &cert, c + extra, 0.01).unwrap());
            }
        }
    }
}
