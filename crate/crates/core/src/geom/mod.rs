//! Serial-arm geometry: capsule links, forward kinematics, task Jacobian and
//! the exact point-to-link signed distance oracle.
//!
//! All geometry is carried in three dimensions internally. Planar chains
//! (`dim == 2`) keep every point on the `z = 0` plane and every joint axis
//! along `±z`, so the same code path serves both variants.

mod distance;
mod ik;
mod kinematics;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use distance::{point_segment_distance, segment_closest_point};
pub use ik::{planar_heading, wrap_angle, IkSettings};
pub use kinematics::{ChainState, PoseMode};

pub type Point = Vector3<f64>;

/// Robot configuration in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, delta: &[f64]) -> Self {
        Self(self.0.iter().zip(delta).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &JointVector) -> Vec<f64> {
        self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()
    }

    /// Infinity-norm distance to `other`.
    pub fn dist_inf(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Euclidean distance to `other`.
    pub fn dist2(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Linear interpolation `self + t (other - self)`.
    pub fn lerp(&self, other: &JointVector, t: f64) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + t * (b - a))
                .collect(),
        )
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Rigid transform in the chain's ambient space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub translation: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Rotation3::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    /// Planar pose: translation `(x, y)` and rotation `angle` about `z`.
    pub fn planar(x: f64, y: f64, angle: f64) -> Self {
        Self {
            translation: Vector3::new(x, y, 0.0),
            rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), angle),
        }
    }

    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            translation: self.translation + self.rotation * other.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rot = self.rotation.inverse();
        RigidPose {
            translation: -(rot * self.translation),
            rotation: rot,
        }
    }

    pub fn transform_point(&self, p: &Point) -> Point {
        self.translation + self.rotation * p
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.rotation.matrix()
    }
}

/// One capsule link: the segment from the joint origin to `(length, 0, 0)`
/// in the link frame, swept by a sphere of `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    pub parent: Option<usize>,
    /// Joint origin in the parent frame (the parent's frame, not its tip).
    pub offset: Vector3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub length: f64,
    pub radius: f64,
}

impl LinkGeometry {
    pub fn segment_local(&self) -> (Point, Point) {
        (Point::zeros(), Point::new(self.length, 0.0, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl JointLimits {
    pub fn clamp(&self, q: &JointVector) -> JointVector {
        JointVector(
            q.0.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect(),
        )
    }

    pub fn contains(&self, q: &JointVector) -> bool {
        q.0.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Serial (tree-ordered) chain of revolute joints, one joint per link.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    dim: usize,
    links: Vec<LinkGeometry>,
    limits: JointLimits,
    base: RigidPose,
    /// Unwrapped planar heading of the base (ignored in 3-D).
    base_angle: f64,
}

impl KinematicChain {
    pub fn new(
        dim: usize,
        links: Vec<LinkGeometry>,
        limits: JointLimits,
        base: RigidPose,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Argument(format!("dimension must be 2 or 3, got {dim}")));
        }
        if links.is_empty() {
            return Err(Error::Argument("chain needs at least one link".into()));
        }
        let n = links.len();
        if limits.lower.len() != n || limits.upper.len() != n {
            return Err(Error::Argument(format!(
                "joint limits must have {n} entries"
            )));
        }
        for (i, (lo, hi)) in limits.lower.iter().zip(&limits.upper).enumerate() {
            if !(lo < hi) {
                return Err(Error::Argument(format!("joint {i}: lower limit must be below upper")));
            }
        }
        for (k, link) in links.iter().enumerate() {
            if let Some(p) = link.parent {
                if p >= k {
                    return Err(Error::Argument(format!(
                        "link {k}: parent {p} must precede it"
                    )));
                }
            }
            if !(link.radius > 0.0) || !link.length.is_finite() || link.length < 0.0 {
                return Err(Error::Argument(format!("link {k}: bad capsule dimensions")));
            }
            if !link.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::Argument(format!("link {k}: non-finite offset")));
            }
            if dim == 2 {
                if link.offset.z != 0.0 || link.axis.x != 0.0 || link.axis.y != 0.0 {
                    return Err(Error::Argument(format!(
                        "link {k}: planar chains need z = 0 offsets and z axes"
                    )));
                }
            }
        }
        let base_angle = if dim == 2 {
            let m = base.rotation.matrix();
            m[(1, 0)].atan2(m[(0, 0)])
        } else {
            0.0
        };
        Ok(Self {
            dim,
            links,
            limits,
            base,
            base_angle,
        })
    }

    /// Serial planar arm with links along `x`, each joint at its parent's tip.
    pub fn planar(lengths: &[f64], radii: &[f64], limits: JointLimits) -> Result<Self> {
        if lengths.len() != radii.len() {
            return Err(Error::Argument("lengths and radii differ in size".into()));
        }
        let links = lengths
            .iter()
            .zip(radii)
            .enumerate()
            .map(|(k, (&length, &radius))| LinkGeometry {
                parent: k.checked_sub(1),
                offset: if k == 0 {
                    Vector3::zeros()
                } else {
                    Vector3::new(lengths[k - 1], 0.0, 0.0)
                },
                axis: Vector3::z_axis(),
                length,
                radius,
            })
            .collect();
        Self::new(2, links, limits, RigidPose::identity())
    }

    /// Default desk-scale robot: planar 3-DoF arm, lengths (0.5, 0.4, 0.3) m,
    /// radii 0.05 m.
    pub fn default_planar() -> Self {
        Self::planar(
            &[0.5, 0.4, 0.3],
            &[0.05, 0.05, 0.05],
            JointLimits {
                lower: vec![-std::f64::consts::PI, -2.6, -2.6],
                upper: vec![std::f64::consts::PI, 2.6, 2.6],
            },
        )
        .expect("default chain is valid")
    }

    /// Spatial variant with the same link lengths: a yaw joint followed by
    /// two pitch joints.
    pub fn default_spatial() -> Self {
        let lengths = [0.5, 0.4, 0.3];
        let axes = [Vector3::z_axis(), Vector3::y_axis(), Vector3::y_axis()];
        let links = (0..3usize)
            .map(|k| LinkGeometry {
                parent: k.checked_sub(1),
                offset: if k == 0 {
                    Vector3::zeros()
                } else {
                    Vector3::new(lengths[k - 1], 0.0, 0.0)
                },
                axis: axes[k],
                length: lengths[k],
                radius: 0.05,
            })
            .collect();
        Self::new(
            3,
            links,
            JointLimits {
                lower: vec![-std::f64::consts::PI, -2.6, -2.6],
                upper: vec![std::f64::consts::PI, 2.6, 2.6],
            },
            RigidPose::identity(),
        )
        .expect("default chain is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Joint count `n`.
    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Link count `K`.
    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkGeometry] {
        &self.links
    }

    pub fn limits(&self) -> &JointLimits {
        &self.limits
    }

    pub fn base(&self) -> &RigidPose {
        &self.base
    }

    pub fn base_angle(&self) -> f64 {
        self.base_angle
    }

    /// Same chain mounted at a different base pose.
    pub fn with_base(&self, base: RigidPose) -> Result<Self> {
        Self::new(self.dim, self.links.clone(), self.limits.clone(), base)
    }

    /// Upper bound on how far any point of link `k` or its descendants can be
    /// from joint `i`, used for conservative motion bounds.
    pub fn reach(&self) -> f64 {
        // Sum of all link extents bounds the lever arm of every joint.
        self.links
            .iter()
            .map(|l| l.offset.norm() + l.length + l.radius)
            .sum()
    }

    /// Per-link bound `L_k` such that moving every joint by at most `δ` moves
    /// every point of link `k`'s segment by at most `L_k · δ`.
    pub fn link_lipschitz(&self) -> Vec<f64> {
        (0..self.links.len())
            .map(|k| {
                let mut total = 0.0;
                let mut lever = self.links[k].length;
                let mut cur = Some(k);
                while let Some(i) = cur {
                    total += lever;
                    lever += self.links[i].offset.norm();
                    cur = self.links[i].parent;
                }
                total
            })
            .collect()
    }

    /// True when `ancestor` lies on the path from the base to `link`.
    pub fn is_ancestor(&self, ancestor: usize, link: usize) -> bool {
        let mut cur = Some(link);
        while let Some(k) = cur {
            if k == ancestor {
                return true;
            }
            cur = self.links[k].parent;
        }
        false
    }

    pub fn check_q(&self, q: &JointVector) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Argument(format!(
                "configuration has {} entries, chain has {} joints",
                q.len(),
                self.dof()
            )));
        }
        if !q.is_finite() {
            return Err(Error::Argument("configuration is not finite".into()));
        }
        Ok(())
    }

    /// Pose-vector length for the given mode.
    pub fn pose_dim(&self, mode: PoseMode) -> usize {
        match (mode, self.dim) {
            (PoseMode::Position, d) => d,
            (PoseMode::Full, 2) => 3,
            (PoseMode::Full, _) => 6,
        }
    }

    pub fn to_json(&self) -> ChainJson {
        ChainJson {
            dim: self.dim,
            n: self.dof(),
            links: self
                .links
                .iter()
                .map(|l| LinkJson {
                    parent: l.parent,
                    offset: l.offset.as_slice()[..self.dim].to_vec(),
                    axis: if self.dim == 2 {
                        None
                    } else {
                        Some(l.axis.as_slice().to_vec())
                    },
                    axis_sign: if self.dim == 2 { Some(l.axis.z.signum()) } else { None },
                    length: l.length,
                    radius: l.radius,
                })
                .collect(),
            limits: self.limits.clone(),
            base: Some(BaseJson {
                translation: self.base.translation.as_slice()[..self.dim].to_vec(),
                rotation: if self.dim == 2 {
                    vec![self.base_angle]
                } else {
                    self.base.rotation.scaled_axis().as_slice().to_vec()
                },
            }),
        }
    }

    pub fn from_json(doc: &ChainJson) -> Result<Self> {
        let dim = doc.dim;
        if doc.n != doc.links.len() {
            return Err(Error::Argument(format!(
                "n = {} but {} links given",
                doc.n,
                doc.links.len()
            )));
        }
        let vec_of = |v: &[f64], what: &str| -> Result<Vector3<f64>> {
            if v.len() != dim {
                return Err(Error::Argument(format!("{what} needs {dim} coordinates")));
            }
            let mut out = Vector3::zeros();
            out.as_mut_slice()[..dim].copy_from_slice(v);
            Ok(out)
        };
        let mut links = Vec::with_capacity(doc.links.len());
        for l in &doc.links {
            let axis = if dim == 2 {
                let s = l.axis_sign.unwrap_or(1.0);
                if s < 0.0 {
                    -Vector3::z_axis()
                } else {
                    Vector3::z_axis()
                }
            } else {
                let a = l
                    .axis
                    .as_ref()
                    .ok_or_else(|| Error::Argument("spatial links need an axis".into()))?;
                let a = vec_of(a, "axis")?;
                Unit::try_new(a, 1e-12)
                    .ok_or_else(|| Error::Argument("joint axis has zero length".into()))?
            };
            links.push(LinkGeometry {
                parent: l.parent,
                offset: vec_of(&l.offset, "offset")?,
                axis,
                length: l.length,
                radius: l.radius,
            });
        }
        let base = match &doc.base {
            None => RigidPose::identity(),
            Some(b) => {
                let t = vec_of(&b.translation, "base translation")?;
                let rotation = if dim == 2 {
                    let angle = *b
                        .rotation
                        .first()
                        .ok_or_else(|| Error::Argument("planar base needs an angle".into()))?;
                    Rotation3::from_axis_angle(&Vector3::z_axis(), angle)
                } else {
                    Rotation3::new(vec_of(&b.rotation, "base rotation")?)
                };
                RigidPose::new(t, rotation)
            }
        };
        let mut chain = Self::new(dim, links, doc.limits.clone(), base)?;
        if dim == 2 {
            if let Some(b) = &doc.base {
                chain.base_angle = b.rotation[0];
            }
        }
        Ok(chain)
    }
}

/// JSON form of a chain. See `docs/formats.md`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainJson {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub n: usize,
    pub links: Vec<LinkJson>,
    pub limits: JointLimits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseJson>,
}

fn default_dim() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkJson {
    pub parent: Option<usize>,
    pub offset: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Vec<f64>>,
    /// Planar chains only: `+1` for counter-clockwise joints, `-1` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_sign: Option<f64>,
    pub length: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseJson {
    pub translation: Vec<f64>,
    /// Planar: `[angle]`; spatial: rotation vector.
    pub rotation: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_json_round_trip() {
        for chain in [KinematicChain::default_planar(), KinematicChain::default_spatial()] {
            let doc = chain.to_json();
            let text = serde_json::to_string(&doc).unwrap();
            let back = KinematicChain::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(back, chain);
        }
    }

    #[test]
    fn rejects_bad_limits() {
        let err = KinematicChain::planar(
            &[1.0],
            &[0.1],
            JointLimits {
                lower: vec![1.0],
                upper: vec![0.0],
            },
        );
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn rejects_forward_parent() {
        let mut doc = KinematicChain::default_planar().to_json();
        doc.links[0].parent = Some(2);
        assert!(KinematicChain::from_json(&doc).is_err());
    }
}
