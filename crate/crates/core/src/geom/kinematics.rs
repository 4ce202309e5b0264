use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::distance::segment_closest_point;
use super::{JointVector, KinematicChain, Point, RigidPose};
use crate::error::Result;

/// Which components of the end-effector pose enter the task vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseMode {
    /// Translation followed by a minimal rotation (planar angle or rotation
    /// vector).
    #[default]
    Full,
    /// Translation only.
    Position,
}

/// Link frames for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub frames: Vec<RigidPose>,
    /// Unwrapped planar heading of every link frame (zero for spatial chains).
    pub headings: Vec<f64>,
    pub end_effector: RigidPose,
}

impl ChainState {
    /// World-frame axis segment of every link.
    pub fn segments(&self, chain: &KinematicChain) -> Vec<(Point, Point)> {
        chain
            .links()
            .iter()
            .zip(&self.frames)
            .map(|(link, frame)| {
                let (a, b) = link.segment_local();
                (frame.transform_point(&a), frame.transform_point(&b))
            })
            .collect()
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the SO(3) left Jacobian at rotation vector `phi`; maps a world
/// angular velocity to the rate of change of `phi`.
fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let coef = if theta < 1e-5 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * k + coef * k * k
}

impl KinematicChain {
    /// Compose joint transforms in chain order.
    pub fn forward_kinematics(&self, q: &JointVector) -> Result<ChainState> {
        self.check_q(q)?;
        let k_links = self.num_links();
        let mut frames: Vec<RigidPose> = Vec::with_capacity(k_links);
        let mut headings = Vec::with_capacity(k_links);
        for (k, link) in self.links().iter().enumerate() {
            let (parent, heading) = match link.parent {
                Some(p) => (frames[p], headings[p]),
                None => (*self.base(), self.base_angle()),
            };
            let joint = RigidPose::new(
                link.offset,
                nalgebra::Rotation3::from_axis_angle(&link.axis, q.0[k]),
            );
            frames.push(parent.compose(&joint));
            headings.push(if self.dim() == 2 {
                heading + link.axis.z * q.0[k]
            } else {
                0.0
            });
        }
        let last = k_links - 1;
        let tip = RigidPose::new(
            Vector3::new(self.links()[last].length, 0.0, 0.0),
            nalgebra::Rotation3::identity(),
        );
        let end_effector = frames[last].compose(&tip);
        Ok(ChainState {
            frames,
            headings,
            end_effector,
        })
    }

    pub fn end_effector(&self, q: &JointVector) -> Result<RigidPose> {
        Ok(self.forward_kinematics(q)?.end_effector)
    }

    /// End-effector task vector: translation (d entries) then, in full mode,
    /// the planar heading or the rotation vector.
    pub fn pose_vector(&self, q: &JointVector, mode: PoseMode) -> Result<DVector<f64>> {
        let state = self.forward_kinematics(q)?;
        Ok(self.pose_vector_of(&state, mode))
    }

    pub fn pose_vector_of(&self, state: &ChainState, mode: PoseMode) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(self.pose_dim(mode));
        for i in 0..d {
            out[i] = state.end_effector.translation[i];
        }
        if mode == PoseMode::Full {
            if d == 2 {
                out[2] = *state.headings.last().unwrap();
            } else {
                let phi = state.end_effector.rotation.scaled_axis();
                out.rows_mut(3, 3).copy_from(&phi);
            }
        }
        out
    }

    /// Analytic Jacobian of `pose_vector` with respect to `q`.
    pub fn jacobian(&self, q: &JointVector, mode: PoseMode) -> Result<DMatrix<f64>> {
        let state = self.forward_kinematics(q)?;
        Ok(self.jacobian_of(&state, mode))
    }

    pub fn jacobian_of(&self, state: &ChainState, mode: PoseMode) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.dof();
        let ee_link = self.num_links() - 1;
        let p_ee = state.end_effector.translation;
        let left_inv = if d == 3 && mode == PoseMode::Full {
            Some(so3_left_jacobian_inv(&state.end_effector.rotation.scaled_axis()))
        } else {
            None
        };
        let mut jac = DMatrix::zeros(self.pose_dim(mode), n);
        for i in 0..n {
            if !self.is_ancestor(i, ee_link) {
                continue;
            }
            let frame = &state.frames[i];
            let axis = frame.rotation * self.links()[i].axis.into_inner();
            let lin = axis.cross(&(p_ee - frame.translation));
            for r in 0..d {
                jac[(r, i)] = lin[r];
            }
            if mode == PoseMode::Full {
                if d == 2 {
                    jac[(2, i)] = self.links()[i].axis.z;
                } else if let Some(m) = &left_inv {
                    let w = m * axis;
                    for r in 0..3 {
                        jac[(3 + r, i)] = w[r];
                    }
                }
            }
        }
        jac
    }

    /// Signed distance from `x` to every capsule: distance to the link axis
    /// segment minus the capsule radius.
    pub fn exact_link_point_distance(&self, q: &JointVector, x: &Point) -> Result<Vec<f64>> {
        let state = self.forward_kinematics(q)?;
        Ok(self.link_point_distance_of(&state, x))
    }

    pub fn link_point_distance_of(&self, state: &ChainState, x: &Point) -> Vec<f64> {
        state
            .segments(self)
            .iter()
            .zip(self.links())
            .map(|((a, b), link)| super::point_segment_distance(x, a, b) - link.radius)
            .collect()
    }

    /// Signed distances and their gradients with respect to `q` (one row per
    /// link). The gradient is zero where `x` lies exactly on a link axis.
    pub fn link_point_distance_grad(
        &self,
        q: &JointVector,
        x: &Point,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let state = self.forward_kinematics(q)?;
        let n = self.dof();
        let k_links = self.num_links();
        let mut dist = Vec::with_capacity(k_links);
        let mut grad = DMatrix::zeros(k_links, n);
        for (k, (a, b)) in state.segments(self).iter().enumerate() {
            let p = segment_closest_point(x, a, b);
            let diff = x - p;
            let norm = diff.norm();
            dist.push(norm - self.links()[k].radius);
            if norm == 0.0 {
                continue;
            }
            let normal = diff / norm;
            for i in 0..n {
                if !self.is_ancestor(i, k) {
                    continue;
                }
                let frame = &state.frames[i];
                let axis = frame.rotation * self.links()[i].axis.into_inner();
                let vel = axis.cross(&(p - frame.translation));
                grad[(k, i)] = -normal.dot(&vel);
            }
        }
        Ok((dist, grad))
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geom::{JointLimits, LinkGeometry};

    fn unit_two_link() -> KinematicChain {
        KinematicChain::planar(
            &[1.0, 1.0],
            &[0.05, 0.05],
            JointLimits {
                lower: vec![-3.2; 2],
                upper: vec![3.2; 2],
            },
        )
        .unwrap()
    }

    fn random_q(chain: &KinematicChain, rng: &mut impl Rng) -> JointVector {
        JointVector(
            chain
                .limits()
                .lower
                .iter()
                .zip(&chain.limits().upper)
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect(),
        )
    }

    #[test]
    fn straight_chain_reaches_sum_of_lengths() {
        let chain = unit_two_link();
        let ee = chain.end_effector(&JointVector(vec![0.0, 0.0])).unwrap();
        assert_close!(ee.translation.x, 2.0, 1e-15);
        assert_close!(ee.translation.y, 0.0, 1e-15);
    }

    #[test]
    fn quarter_turn_points_up() {
        let chain = unit_two_link();
        let ee = chain.end_effector(&JointVector(vec![FRAC_PI_2, 0.0])).unwrap();
        assert_close!(ee.translation.x, 0.0, 1e-12);
        assert_close!(ee.translation.y, 2.0, 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let chain = unit_two_link();
        assert!(chain.forward_kinematics(&JointVector(vec![0.0])).is_err());
    }

    /// Independent oracle: homogeneous 4x4 matrix product.
    fn homogeneous_fk(chain: &KinematicChain, q: &[f64]) -> Matrix4<f64> {
        let mut frames: Vec<Matrix4<f64>> = Vec::new();
        for (k, link) in chain.links().iter().enumerate() {
            let parent = match link.parent {
                Some(p) => frames[p],
                None => {
                    let mut m = chain.base().rotation.to_homogeneous();
                    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&chain.base().translation);
                    m
                }
            };
            let trans = Matrix4::new_translation(&link.offset);
            let (s, c) = q[k].sin_cos();
            let a = link.axis.into_inner();
            // Rodrigues written out by hand.
            let kx = skew(&a);
            let r = Matrix3::identity() + s * kx + (1.0 - c) * kx * kx;
            let mut rot = Matrix4::identity();
            rot.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            frames.push(parent * trans * rot);
        }
        let last = frames.len() - 1;
        frames[last] * Matrix4::new_translation(&Vector3::new(chain.links()[last].length, 0.0, 0.0))
    }

    fn three_link_spatial() -> KinematicChain {
        let axes = [
            Vector3::z_axis(),
            nalgebra::Unit::new_normalize(Vector3::new(0.0, 1.0, 0.3)),
            Vector3::x_axis(),
        ];
        let links = (0..3usize)
            .map(|k| LinkGeometry {
                parent: k.checked_sub(1),
                offset: if k == 0 { Vector3::new(0.1, 0.0, 0.2) } else { Vector3::new(0.4, 0.05, 0.0) },
                axis: axes[k],
                length: 0.4,
                radius: 0.04,
            })
            .collect();
        KinematicChain::new(
            3,
            links,
            JointLimits { lower: vec![-3.0; 3], upper: vec![3.0; 3] },
            RigidPose::new(
                Vector3::new(0.2, -0.1, 0.3),
                nalgebra::Rotation3::new(Vector3::new(0.1, 0.2, -0.3)),
            ),
        )
        .unwrap()
    }

    #[test]
    fn fk_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for chain in [KinematicChain::default_planar(), three_link_spatial()] {
            for _ in 0..50 {
                let q = random_q(&chain, &mut rng);
                let ee = chain.end_effector(&q).unwrap();
                let h = homogeneous_fk(&chain, &q.0);
                for r in 0..3 {
                    assert_close!(ee.translation[r], h[(r, 3)], 1e-12);
                    for c in 0..3 {
                        assert_close!(ee.rotation.matrix()[(r, c)], h[(r, c)], 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn fk_is_bit_deterministic() {
        let chain = three_link_spatial();
        let q = JointVector(vec![0.3, -1.1, 2.0]);
        let a = chain.forward_kinematics(&q).unwrap();
        let b = chain.forward_kinematics(&q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_link_jacobian_is_analytic() {
        let length = 0.7;
        let chain = KinematicChain::planar(
            &[length],
            &[0.05],
            JointLimits { lower: vec![-3.0], upper: vec![3.0] },
        )
        .unwrap();
        let j = chain.jacobian(&JointVector(vec![0.0]), PoseMode::Full).unwrap();
        assert_eq!(j.shape(), (3, 1));
        assert_close!(j[(0, 0)], 0.0, 1e-15);
        assert_close!(j[(1, 0)], length, 1e-15);
        assert_close!(j[(2, 0)], 1.0, 1e-15);
    }

    fn fd_jacobian(chain: &KinematicChain, q: &JointVector, mode: PoseMode, h: f64) -> DMatrix<f64> {
        let n = chain.dof();
        let mut out = DMatrix::zeros(chain.pose_dim(mode), n);
        for i in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp.0[i] += h;
            qm.0[i] -= h;
            let col = (chain.pose_vector(&qp, mode).unwrap() - chain.pose_vector(&qm, mode).unwrap())
                / (2.0 * h);
            out.set_column(i, &col);
        }
        out
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for chain in [KinematicChain::default_planar(), KinematicChain::default_spatial(), three_link_spatial()] {
            for mode in [PoseMode::Full, PoseMode::Position] {
                let mut checked = 0;
                while checked < 100 {
                    let q = random_q(&chain, &mut rng);
                    // The rotation vector is discontinuous at angle pi.
                    let angle = chain.end_effector(&q).unwrap().rotation.angle();
                    if chain.dim() == 3 && angle > 3.0 {
                        continue;
                    }
                    let j = chain.jacobian(&q, mode).unwrap();
                    let fd = fd_jacobian(&chain, &q, mode, 1e-6);
                    let rel = (&j - &fd).norm() / j.norm().max(1e-3);
                    assert!(rel <= 1e-5, "rel error {rel} for {:?}", q);
                    checked += 1;
                }
            }
        }
    }

    #[test]
    fn collinear_chain_is_singular() {
        let chain = KinematicChain::default_planar();
        let j = chain.jacobian(&JointVector(vec![0.4, 0.0, 0.0]), PoseMode::Position).unwrap();
        let sv = j.clone().svd(false, false).singular_values;
        assert!(sv.min() < 1e-12);
        let jf = chain.jacobian(&JointVector(vec![0.4, 0.0, 0.0]), PoseMode::Full).unwrap();
        assert!(jf.rank(1e-10) < 3);
    }

    #[test]
    fn point_on_axis_is_maximal_penetration() {
        let chain = KinematicChain::default_planar();
        let q = JointVector(vec![0.0, 0.0, 0.0]);
        let d = chain.exact_link_point_distance(&q, &Point::new(0.25, 0.0, 0.0)).unwrap();
        assert_close!(d[0], -0.05, 1e-15);
    }

    #[test]
    fn offset_point_reports_clearance() {
        let chain = KinematicChain::default_planar();
        let q = JointVector(vec![0.0, 0.0, 0.0]);
        let d = chain
            .exact_link_point_distance(&q, &Point::new(0.25, 0.05 + 0.05, 0.0))
            .unwrap();
        assert_close!(d[0], 0.05, 1e-12);
    }

    #[test]
    fn distance_matches_dense_segment_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chain = three_link_spatial();
        for _ in 0..20 {
            let q = random_q(&chain, &mut rng);
            let x = Point::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let exact = chain.exact_link_point_distance(&q, &x).unwrap();
            let state = chain.forward_kinematics(&q).unwrap();
            for (k, (a, b)) in state.segments(&chain).iter().enumerate() {
                let samples = 100_000;
                let best = (0..=samples)
                    .map(|s| (x - (a + (b - a) * (s as f64 / samples as f64))).norm())
                    .fold(f64::INFINITY, f64::min);
                assert_close!(exact[k], best - chain.links()[k].radius, 1e-4);
            }
        }
    }

    #[test]
    fn distance_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for chain in [KinematicChain::default_planar(), three_link_spatial()] {
            for _ in 0..50 {
                let q = random_q(&chain, &mut rng);
                let mut x = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
                if chain.dim() == 3 {
                    x.z = rng.random_range(-1.0..1.0);
                }
                let (_, g) = chain.link_point_distance_grad(&q, &x).unwrap();
                let h = 1e-6;
                for i in 0..chain.dof() {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp.0[i] += h;
                    qm.0[i] -= h;
                    let dp = chain.exact_link_point_distance(&qp, &x).unwrap();
                    let dm = chain.exact_link_point_distance(&qm, &x).unwrap();
                    for k in 0..chain.num_links() {
                        assert_close!(g[(k, i)], (dp[k] - dm[k]) / (2.0 * h), 1e-6);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn distance_is_one_lipschitz_in_x(
            q in prop::collection::vec(-3.0f64..3.0, 3),
            x in prop::collection::vec(-1.5f64..1.5, 3),
            dx in prop::collection::vec(-0.2f64..0.2, 3),
        ) {
            let chain = KinematicChain::default_spatial();
            let q = JointVector(q);
            let x = Point::new(x[0], x[1], x[2]);
            let y = x + Point::new(dx[0], dx[1], dx[2]);
            let a = chain.exact_link_point_distance(&q, &x).unwrap();
            let b = chain.exact_link_point_distance(&q, &y).unwrap();
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() <= (x - y).norm() + 1e-12);
            }
        }

        #[test]
        fn distance_is_invariant_under_rigid_motion(
            q in prop::collection::vec(-3.0f64..3.0, 3),
            x in prop::collection::vec(-1.5f64..1.5, 3),
            t in prop::collection::vec(-1.0f64..1.0, 3),
            r in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let chain = KinematicChain::default_spatial();
            let motion = RigidPose::new(
                Vector3::new(t[0], t[1], t[2]),
                nalgebra::Rotation3::new(Vector3::new(r[0], r[1], r[2])),
            );
            let moved = chain.with_base(motion.compose(chain.base())).unwrap();
            let q = JointVector(q);
            let x = Point::new(x[0], x[1], x[2]);
            let a = chain.exact_link_point_distance(&q, &x).unwrap();
            let b = moved.exact_link_point_distance(&q, &motion.transform_point(&x)).unwrap();
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() <= 1e-12);
            }
        }
    }
}
