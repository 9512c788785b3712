use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Grid;
use crate::sde::{AnalyticFunction, BoxRegion, SmoothFunction};

/// Built-in Lyapunov function shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum CertificateShape {
    /// `Σ_k cosh(scale·x_k)`.
    Cosh { scale: f64 },
    /// `Σ_k x_k²`.
    Quadratic,
    /// `V ≡ 0` (never inf-compact; passes the continuous check trivially).
    Zero,
}

impl CertificateShape {
    pub fn function(&self) -> AnalyticFunction {
        match *self {
            CertificateShape::Cosh { scale } => AnalyticFunction::new(
                move |x| x.iter().map(|v| (scale * v).cosh()).sum(),
                move |x, g| {
                    for (gi, v) in g.iter_mut().zip(x) {
                        *gi = scale * (scale * v).sinh();
                    }
                },
                move |x, h| {
                    let d = x.len();
                    h.fill(0.0);
                    for (k, v) in x.iter().enumerate() {
                        h[k * d + k] = scale * scale * (scale * v).cosh();
                    }
                },
            ),
            CertificateShape::Quadratic => AnalyticFunction::new(
                |x| x.iter().map(|v| v * v).sum(),
                |x, g| {
                    for (gi, v) in g.iter_mut().zip(x) {
                        *gi = 2.0 * v;
                    }
                },
                |x, h| {
                    let d = x.len();
                    h.fill(0.0);
                    for k in 0..d {
                        h[k * d + k] = 2.0;
                    }
                },
            ),
            CertificateShape::Zero => AnalyticFunction::new(|_| 0.0, |_, g| g.fill(0.0), |_, h| h.fill(0.0)),
        }
    }
}

/// Candidate for `L_u V ≤ C0·1_K − C1·V`.
#[derive(Clone)]
pub struct LyapunovCertificate {
    pub name: String,
    pub v: Arc<dyn SmoothFunction>,
    pub c0: f64,
    pub c1: f64,
    pub k: BoxRegion,
}

impl fmt::Debug for LyapunovCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovCertificate")
            .field("name", &self.name)
            .field("c0", &self.c0)
            .field("c1", &self.c1)
            .field("k", &self.k)
            .finish_non_exhaustive()
    }
}

/// Shape checks of a certificate on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateShapeReport {
    pub nonnegative: bool,
    /// The grid minimum of `V` is attained at an interior node only.
    pub interior_minimum: bool,
    pub min_value: f64,
}

impl CertificateShapeReport {
    pub fn inf_compact_proxy(&self) -> bool {
        self.nonnegative && self.interior_minimum
    }
}

impl LyapunovCertificate {
    pub fn new(name: impl Into<String>, v: Arc<dyn SmoothFunction>, c0: f64, c1: f64, k: BoxRegion) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) || !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::InvalidArgument(format!("certificate constants must be positive, got C0={c0}, C1={c1}")));
        }
        Ok(Self {
            name: name.into(),
            v,
            c0,
            c1,
            k,
        })
    }

    pub fn from_shape(shape: CertificateShape, c0: f64, c1: f64, k: BoxRegion) -> Result<Self> {
        let name = match shape {
            CertificateShape::Cosh { scale } => format!("cosh({scale}·x)"),
            CertificateShape::Quadratic => "|x|²".to_string(),
            CertificateShape::Zero => "zero".to_string(),
        };
        Self::new(name, Arc::new(shape.function()), c0, c1, k)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.v.value(x)
    }

    pub fn shape_report(&self, grid: &Grid) -> CertificateShapeReport {
        let values: Vec<f64> = (0..grid.len()).map(|i| self.value(&grid.coords(i))).collect();
        let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
        let nonnegative = min_value >= 0.0;
        let interior_minimum = (0..grid.len())
            .filter(|&i| values[i] == min_value)
            .all(|i| !grid.is_boundary(i));
        CertificateShapeReport {
            nonnegative,
            interior_minimum,
            min_value,
        }
    }
}
