//! Foster–Lyapunov drift checks for the diffusion and the sampled chain,
//! stationary distributions, long-run occupation measures and a
//! bounded-Lipschitz distance between them.

mod certificate;
mod drift;
mod measure;

pub use certificate::{CertificateShape, CertificateShapeReport, LyapunovCertificate};
pub use drift::{
    check_continuous_drift, check_discrete_drift, discrete_drift_holds, ContinuousDriftReport, DiscreteDriftReport,
    DriftConstants, DRIFT_SLACK,
};
pub use measure::{
    bl_distance, empirical_invariant_measure, pooled_invariant_measure, stationary_distribution, stationary_distribution_capped,
    stationary_distribution_on, BlDictionary, EmpiricalMeasure, Provenance, TestFunction, DEFAULT_POWER_ITERATIONS,
    DICTIONARY_SIZE,
};
