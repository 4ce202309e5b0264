//! Inverse normal CDF, the logistic bound on it, secant PWL encodings and
//! the QP / branch-and-bound solvers used by the chance-constrained IK step.

pub mod dump;
pub mod mip;
pub mod normal;
pub mod pwl;
pub mod qp;

pub use mip::{solve_convex, solve_mip, MipProblem, MipResult, MipSettings, PwlConstraint};
pub use normal::{inv_std_normal_cdf, logit_bound, std_normal_cdf};
pub use pwl::{build_secant_pwl, logit_bound_pwl, AffinePiece, PwlApprox, Spacing, GAMMA_BAR_MAX, GAMMA_BAR_MIN};
pub use qp::{solve_qp, QpProblem, QpSettings, SolveResult, SolveStatus};
