//! Built-in benchmark models.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{check_continuous_drift, CertificateShape, LyapunovCertificate};
use crate::mdp::{build_action_net, build_grid};
use crate::sde::{BoxRegion, DiffusionModel, FeedbackPolicy, ModelConstants};

/// Per-axis model `dX_k = (−κ·tanh(γ·X_k) + a_k)dt + σ dW_k` with running
/// cost `Σ_k x_k²/(1 + x_k²) + λ|a|²`, or `c ≡ 1` when `constant_cost` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TanhModelSpec {
    #[serde(default = "one")]
    pub dim: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub control: [f64; 2],
    pub sigma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub constant_cost: bool,
}

fn one() -> usize {
    1
}

impl TanhModelSpec {
    pub fn build(&self, name: &str) -> Result<DiffusionModel> {
        let &TanhModelSpec {
            dim,
            kappa,
            gamma,
            control,
            sigma,
            lambda,
            constant_cost,
        } = self;
        if dim == 0 || !(sigma > 0.0) || !(control[1] >= control[0]) || kappa < 0.0 || gamma < 0.0 || lambda < 0.0 {
            return Err(Error::Config(format!("model {name}: invalid parameters {self:?}")));
        }
        let umax = control[0].abs().max(control[1].abs());
        let d = dim as f64;
        let constants = ModelConstants {
            bound_b: d.sqrt() * (kappa + umax),
            bound_sigma: d.sqrt() * sigma,
            bound_c: if constant_cost { 1.0 } else { d + lambda * d * umax * umax },
            lipschitz_b: (kappa * gamma).hypot(1.0),
            lipschitz_sigma: 0.0,
            // sup of d/dx x²/(1+x²) is 3√3/8
            lipschitz_c: if constant_cost { 0.0 } else { 0.65 * d.sqrt() },
            nondegeneracy_floor: 0.5 * sigma * sigma,
        };
        let control_box = BoxRegion::new(vec![control[0]; dim], vec![control[1]; dim])?;
        let cost: crate::sde::CostFn = if constant_cost {
            Arc::new(|_, _| 1.0)
        } else {
            Arc::new(move |x, a| {
                x.iter().map(|v| v * v / (1.0 + v * v)).sum::<f64>() + lambda * a.iter().map(|u| u * u).sum::<f64>()
            })
        };
        DiffusionModel::new(
            name,
            dim,
            control_box,
            constants,
            Arc::new(move |x, a, out| {
                for k in 0..x.len() {
                    out[k] = -kappa * (gamma * x[k]).tanh() + a[k];
                }
            }),
            Arc::new(move |x, out| {
                let d = x.len();
                out.fill(0.0);
                for k in 0..d {
                    out[k * d + k] = sigma;
                }
            }),
            cost,
        )
    }
}

/// Lipschitz feedback `u(x) = −½·tanh(2x)` per axis, clipped to the control box.
#[derive(Debug, Clone, Copy)]
pub struct TanhFeedback {
    pub lower: f64,
    pub upper: f64,
}

impl FeedbackPolicy for TanhFeedback {
    fn action_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = (-0.5 * (2.0 * v).tanh()).clamp(self.lower, self.upper);
        }
    }
}

/// A registered model with its computational box and defaults.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub id: String,
    pub spec: TanhModelSpec,
    pub model: DiffusionModel,
    pub domain: BoxRegion,
    pub action_counts: Vec<usize>,
    pub certificate: LyapunovCertificate,
    pub feedback: TanhFeedback,
}

pub const BENCHMARK_IDS: [&str; 3] = ["const_cost", "bounded_ou", "uncontrolled_1d"];

pub fn bounded_ou_spec() -> TanhModelSpec {
    TanhModelSpec {
        dim: 1,
        kappa: 1.0,
        gamma: 2.0,
        control: [-0.5, 0.5],
        sigma: 0.5,
        lambda: 0.1,
        constant_cost: false,
    }
}

/// `V = cosh(x/2)`, `K = [−2, 2]`, `C1 = 0.15`, `C0 = 0.25`.
pub fn cosh_certificate(dim: usize) -> LyapunovCertificate {
    LyapunovCertificate::from_shape(CertificateShape::Cosh { scale: 0.5 }, 0.25, 0.15, BoxRegion::cube(dim, -2.0, 2.0))
        .expect("positive constants")
}

/// Assembles a benchmark from a model spec and verifies its certificate on a
/// 161-point-per-axis grid against an 11-point-per-axis action net.
pub fn benchmark_from_spec(id: &str, spec: TanhModelSpec, domain: BoxRegion, certificate: LyapunovCertificate) -> Result<Benchmark> {
    let model = spec.build(id)?;
    if domain.dim() != model.dim {
        return Err(Error::Config(format!("benchmark {id}: domain is {}-d, model is {}-d", domain.dim(), model.dim)));
    }
    let degenerate = spec.control[0] == spec.control[1];
    let action_counts = vec![if degenerate { 1 } else { 5 }; model.dim];
    let grid = build_grid(&domain, &vec![161.min(if model.dim > 1 { 41 } else { 161 }); model.dim])?;
    let net = build_action_net(&model.control_box, &vec![if degenerate { 1 } else { 11 }; model.dim])?;
    let report = check_continuous_drift(&model, &certificate, &grid.nodes(), &net);
    if !report.pass {
        return Err(Error::Config(format!(
            "benchmark {id}: certificate {} fails the drift check (worst violation {:e} at {:?})",
            certificate.name, report.worst_violation, report.location
        )));
    }
    Ok(Benchmark {
        id: id.to_string(),
        feedback: TanhFeedback {
            lower: spec.control[0],
            upper: spec.control[1],
        },
        spec,
        model,
        domain,
        action_counts,
        certificate,
    })
}

pub fn lookup(id: &str) -> Result<Benchmark> {
    let domain = BoxRegion::cube(1, -4.0, 4.0);
    let spec = match id {
        "bounded_ou" => bounded_ou_spec(),
        "const_cost" => TanhModelSpec {
            constant_cost: true,
            ..bounded_ou_spec()
        },
        "uncontrolled_1d" => TanhModelSpec {
            control: [0.0, 0.0],
            lambda: 0.0,
            ..bounded_ou_spec()
        },
        other => {
            return Err(Error::Config(format!(
                "unknown model id {other:?}; registered: {}",
                BENCHMARK_IDS.join(", ")
            )))
        }
    };
    benchmark_from_spec(id, spec, domain, cosh_certificate(1))
}
