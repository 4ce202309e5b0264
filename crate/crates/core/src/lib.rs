//! Risk-bounded motion planning for serial arms under sensing noise.
//!
//! The crate is organised along the planning pipeline:
//!
//! * [`geom`]: capsule-link kinematics and the exact distance oracle.
//! * [`env`]: noisy sphere scenes, problem generation and training data.
//! * [`sdf`]: the stochastic signed-distance network and its training.
//! * [`riskopt`]: inverse normal CDF, conservative bounds, PWL encodings and
//!   the QP / branch-and-bound solvers.
//! * [`ccik`]: per-waypoint chance-constrained inverse kinematics.
//! * [`planner`]: RRT-Connect candidates and the hierarchical safe planner.
//! * [`eval`]: Monte-Carlo risk estimation, baselines and benchmark reports.

#[cfg(test)]
#[macro_use]
mod test_util {
    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            let tol: f64 = $tol;
            assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
        }};
    }
}

pub mod ccik;
pub mod env;
pub mod eval;
pub mod error;
pub mod geom;
pub mod planner;
pub mod riskopt;
pub mod sdf;
pub mod rng;

pub use error::{Error, Result};
