pub mod error;
pub mod evaluation;
pub mod harness;
pub mod lyapunov;
pub mod mdp;
pub mod rng;
pub mod sde;
pub mod solvers;
