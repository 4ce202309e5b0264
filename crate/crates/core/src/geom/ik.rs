//! Damped least-squares inverse kinematics toward an end-effector pose.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChainState, JointVector, KinematicChain, PoseMode, RigidPose};
use crate::error::Result;

/// Wrap an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Heading of a planar rotation about `z`.
pub fn planar_heading(pose: &RigidPose) -> f64 {
    let m = pose.rotation.matrix();
    m[(1, 0)].atan2(m[(0, 0)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkSettings {
    pub max_iter: usize,
    pub damping: f64,
    /// Largest joint change per iteration (∞-norm, radians).
    pub max_step: f64,
    pub pos_tol: f64,
    pub ang_tol: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            max_iter: 300,
            damping: 1e-2,
            max_step: 0.3,
            pos_tol: 1e-4,
            ang_tol: 1e-4,
        }
    }
}

impl KinematicChain {
    /// Position and orientation error norms of the end effector against
    /// `target`.
    pub fn pose_distance(&self, state: &ChainState, target: &RigidPose) -> (f64, f64) {
        let ee = &state.end_effector;
        let pos = (target.translation - ee.translation).norm();
        let ang = if self.dim() == 2 {
            wrap_angle(planar_heading(target) - planar_heading(ee)).abs()
        } else {
            (target.rotation * ee.rotation.inverse()).angle()
        };
        (pos, ang)
    }

    /// Task-space error `target - current`, with the rotational part as a
    /// wrapped planar angle or a world-frame rotation vector.
    fn pose_error(&self, state: &ChainState, target: &RigidPose, mode: PoseMode) -> DVector<f64> {
        let d = self.dim();
        let mut e = DVector::zeros(self.pose_dim(mode));
        let dp = target.translation - state.end_effector.translation;
        for i in 0..d {
            e[i] = dp[i];
        }
        if mode == PoseMode::Full {
            if d == 2 {
                e[2] = wrap_angle(planar_heading(target) - planar_heading(&state.end_effector));
            } else {
                let w = (target.rotation * state.end_effector.rotation.inverse()).scaled_axis();
                e.rows_mut(3, 3).copy_from(&w);
            }
        }
        e
    }

    /// Jacobian mapping joint rates to end-effector linear and angular
    /// velocity.
    fn geometric_jacobian(&self, state: &ChainState, mode: PoseMode) -> DMatrix<f64> {
        let mut jac = self.jacobian_of(state, mode);
        if mode == PoseMode::Full && self.dim() == 3 {
            let ee_link = self.num_links() - 1;
            for i in 0..self.dof() {
                let w = if self.is_ancestor(i, ee_link) {
                    state.frames[i].rotation * self.links()[i].axis.into_inner()
                } else {
                    nalgebra::Vector3::zeros()
                };
                for r in 0..3 {
                    jac[(3 + r, i)] = w[r];
                }
            }
        }
        jac
    }

    /// Iterate damped least-squares steps from `q0`, clamping to the joint
    /// limits. Returns the configuration if it reaches the tolerances.
    pub fn solve_ik(
        &self,
        target: &RigidPose,
        mode: PoseMode,
        q0: &JointVector,
        settings: &IkSettings,
    ) -> Result<Option<JointVector>> {
        let mut q = self.limits().clamp(q0);
        let n = self.dof();
        for _ in 0..settings.max_iter {
            let state = self.forward_kinematics(&q)?;
            let (pos, ang) = self.pose_distance(&state, target);
            if pos <= settings.pos_tol && (mode == PoseMode::Position || ang <= settings.ang_tol) {
                return Ok(Some(q));
            }
            let e = self.pose_error(&state, target, mode);
            let j = self.geometric_jacobian(&state, mode);
            let lambda2 = settings.damping * settings.damping;
            let jjt = &j * j.transpose() + DMatrix::identity(j.nrows(), j.nrows()) * lambda2;
            let Some(y) = jjt.lu().solve(&e) else {
                return Ok(None);
            };
            let mut dq = j.transpose() * y;
            let big = dq.amax();
            if big > settings.max_step {
                dq *= settings.max_step / big;
            }
            let next = q.add(dq.as_slice());
            q = self.limits().clamp(&next);
            if dq.amax() < 1e-12 && n > 0 {
                break;
            }
        }
        let state = self.forward_kinematics(&q)?;
        let (pos, ang) = self.pose_distance(&state, target);
        Ok(
            (pos <= settings.pos_tol && (mode == PoseMode::Position || ang <= settings.ang_tol))
                .then_some(q),
        )
    }

    /// Uniform configuration inside the joint limits.
    pub fn random_configuration(&self, rng: &mut impl Rng) -> JointVector {
        let lim = self.limits();
        JointVector(
            lim.lower
                .iter()
                .zip(&lim.upper)
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect(),
        )
    }
}
