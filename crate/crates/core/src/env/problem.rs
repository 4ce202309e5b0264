//! Tabletop scenes and randomized planning problems.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Aabb, EnvironmentPoint, Scene};
use crate::error::{Error, Result};
use crate::geom::{
    planar_heading, ChainJson, IkSettings, JointVector, KinematicChain, Point, PoseMode, RigidPose,
};
use crate::rng::{seeded, stream};

/// Uniform jitter half-widths. Positions in meters, rotations in degrees,
/// all about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub object_position: f64,
    pub object_rotation_deg: f64,
    pub base_position: f64,
    pub base_rotation_deg: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn standard(seed: u64) -> Self {
        Self {
            object_position: 0.025,
            object_rotation_deg: 15.0,
            base_position: 0.10,
            base_rotation_deg: 90.0,
            seed,
        }
    }

    pub fn none(seed: u64) -> Self {
        Self {
            object_position: 0.0,
            object_rotation_deg: 0.0,
            base_position: 0.0,
            base_rotation_deg: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.object_position,
            self.object_rotation_deg,
            self.base_position,
            self.base_rotation_deg,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument("jitters must be finite and non-negative".into()));
        }
        Ok(())
    }
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self::standard(0)
    }
}

/// End-effector pose ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GoalJson", into = "GoalJson")]
pub struct GoalRegion {
    pub dim: usize,
    pub pose: RigidPose,
    pub pos_tol: f64,
    pub ang_tol: f64,
    pub mode: PoseMode,
}

impl GoalRegion {
    pub fn contains(&self, chain: &KinematicChain, q: &JointVector) -> Result<bool> {
        let state = chain.forward_kinematics(q)?;
        let (pos, ang) = chain.pose_distance(&state, &self.pose);
        Ok(pos <= self.pos_tol && (self.mode == PoseMode::Position || ang <= self.ang_tol))
    }

    fn transformed(&self, t: &RigidPose) -> Self {
        Self { pose: t.compose(&self.pose), ..*self }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalJson {
    pub position: Vec<f64>,
    /// Planar: `[heading]`; spatial: rotation vector.
    pub rotation: Vec<f64>,
    pub pos_tol: f64,
    pub ang_tol: f64,
    #[serde(default)]
    pub mode: PoseMode,
}

impl TryFrom<GoalJson> for GoalRegion {
    type Error = Error;

    fn try_from(g: GoalJson) -> Result<Self> {
        let dim = g.position.len();
        let mut t = Vector3::zeros();
        let rotation = match (dim, g.rotation.as_slice()) {
            (2, [a]) => Rotation3::from_axis_angle(&Vector3::z_axis(), *a),
            (3, [x, y, z]) => Rotation3::new(Vector3::new(*x, *y, *z)),
            _ => return Err(Error::Format("goal needs 2-D position + [heading] or 3-D position + rotation vector".into())),
        };
        t.as_mut_slice()[..dim].copy_from_slice(&g.position);
        if !(g.pos_tol >= 0.0 && g.ang_tol >= 0.0) {
            return Err(Error::Format("goal tolerances must be non-negative".into()));
        }
        Ok(Self { dim, pose: RigidPose::new(t, rotation), pos_tol: g.pos_tol, ang_tol: g.ang_tol, mode: g.mode })
    }
}

impl From<GoalRegion> for GoalJson {
    fn from(g: GoalRegion) -> Self {
        let rotation = if g.dim == 2 {
            vec![planar_heading(&g.pose)]
        } else {
            g.pose.rotation.scaled_axis().as_slice().to_vec()
        };
        GoalJson {
            position: g.pose.translation.as_slice()[..g.dim].to_vec(),
            rotation,
            pos_tol: g.pos_tol,
            ang_tol: g.ang_tol,
            mode: g.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: usize,
    pub scene: Scene,
    pub q_start: JointVector,
    /// A collision-free configuration inside the goal region.
    pub q_goal: JointVector,
    pub goal: GoalRegion,
}

/// Problem file: the chain plus its problems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSet {
    pub chain: ChainJson,
    pub problems: Vec<Problem>,
}

/// Unperturbed scene, start and goal. The goal moves rigidly with
/// `goal_object` when objects are jittered.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalProblem {
    pub scene: Scene,
    pub q_start: JointVector,
    pub goal: GoalRegion,
    pub goal_object: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabletopConfig {
    pub dim: usize,
    /// Sensor noise on clutter spheres (meters).
    pub sigma: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Half-width of the cubic workspace box.
    pub half_extent: f64,
    pub seed: u64,
}

impl Default for TabletopConfig {
    fn default() -> Self {
        Self { dim: 2, sigma: 0.02, radius_min: 0.01, radius_max: 0.03, half_extent: 1.5, seed: 0 }
    }
}

/// Object ids used by [`nominal_tabletop`].
pub const TALL_OBSTACLE: usize = 0;
pub const TARGET: usize = 1;

/// Robot at the origin facing a table. A noise-free row (grid in 3-D) of
/// spheres forms the table top; a tall sensed obstacle stands between the
/// start and a small sensed target whose pre-grasp pose is the goal.
///
/// Coordinates are (forward, up) in 2-D and (forward, lateral, up) in 3-D.
/// The spatial goal constrains position only, since three joints cannot
/// meet a full spatial pose.
pub fn nominal_tabletop(cfg: &TabletopConfig) -> Result<NominalProblem> {
    let dim = cfg.dim;
    if dim != 2 && dim != 3 {
        return Err(Error::Argument(format!("dimension must be 2 or 3, got {dim}")));
    }
    if !(0.0 <= cfg.radius_min && cfg.radius_min <= cfg.radius_max) || cfg.sigma < 0.0 {
        return Err(Error::Argument("need 0 <= radius_min <= radius_max and sigma >= 0".into()));
    }
    // The spatial arm's first link turns in the horizontal plane through the
    // base, so its table sits lower.
    let at = |fwd: f64, up: f64, lat: f64| -> Point {
        if dim == 2 {
            Point::new(fwd, up, 0.0)
        } else {
            Point::new(fwd, lat, up - 0.3)
        }
    };
    let lats: Vec<f64> = if dim == 2 { vec![0.0] } else { vec![-0.2, -0.12, -0.04, 0.04, 0.12, 0.2] };
    let mut rng = seeded(cfg.seed);
    let mut radius = || {
        if cfg.radius_max > cfg.radius_min {
            rng.random_range(cfg.radius_min..cfg.radius_max)
        } else {
            cfg.radius_min
        }
    };
    let mut points = Vec::new();
    for i in 0..23 {
        for &lat in &lats {
            points.push(EnvironmentPoint::new(at(0.25 + 0.04 * i as f64, -0.28, lat), 0.03, 0.0));
        }
    }
    let obj_lats: Vec<f64> = if dim == 2 { vec![0.0] } else { vec![-0.08, 0.0, 0.08] };
    for fwd in [0.38, 0.44] {
        for j in 0..10 {
            for &lat in &obj_lats {
                points.push(EnvironmentPoint {
                    center: at(fwd, -0.24 + 0.04 * j as f64, lat),
                    radius: radius(),
                    sigma: cfg.sigma,
                    object: Some(TALL_OBSTACLE),
                });
            }
        }
    }
    for fwd in [0.62, 0.66, 0.70] {
        for up in [-0.24, -0.20, -0.16] {
            for &lat in &obj_lats {
                points.push(EnvironmentPoint {
                    center: at(fwd, up, lat),
                    radius: radius(),
                    sigma: cfg.sigma,
                    object: Some(TARGET),
                });
            }
        }
    }
    let scene = Scene::new(dim, points, Aabb::centered(dim, cfg.half_extent))?;
    let (q_start, goal) = if dim == 2 {
        (
            JointVector(vec![FRAC_PI_2, 0.0, 0.0]),
            GoalRegion {
                dim,
                pose: RigidPose::planar(0.66, -0.05, -FRAC_PI_2),
                pos_tol: 0.02,
                ang_tol: 0.1,
                mode: PoseMode::Full,
            },
        )
    } else {
        (
            JointVector(vec![0.0, -FRAC_PI_2, 0.0]),
            GoalRegion {
                dim,
                pose: RigidPose::new(
                    at(0.66, -0.05, 0.0),
                    Rotation3::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2),
                ),
                pos_tol: 0.02,
                ang_tol: PI,
                mode: PoseMode::Position,
            },
        )
    };
    Ok(NominalProblem { scene, q_start, goal, goal_object: Some(TARGET) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    /// Perturbation draws per problem before giving up.
    pub max_retries: usize,
    /// Required clearance (mean scene) of the start configuration.
    pub start_margin: f64,
    /// Required clearance (mean scene) of the goal witness.
    pub goal_margin: f64,
    pub ik_restarts: usize,
    pub ik: IkSettings,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self { max_retries: 200, start_margin: 0.03, goal_margin: 0.03, ik_restarts: 16, ik: IkSettings::default() }
    }
}

fn yaw(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle)
}

fn jitter_vec(dim: usize, half: f64, rng: &mut impl Rng) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    for i in 0..dim {
        v[i] = if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    }
    v
}

fn jitter_angle(half_deg: f64, rng: &mut impl Rng) -> f64 {
    if half_deg > 0.0 {
        rng.random_range(-half_deg..=half_deg).to_radians()
    } else {
        0.0
    }
}

/// Apply one perturbation draw. Each object is rotated about its centroid
/// and shifted; then the whole scene moves by the inverse of the base
/// jitter, which keeps the robot fixed.
fn perturb(
    chain: &KinematicChain,
    nominal: &NominalProblem,
    spec: &PerturbationSpec,
    rng: &mut impl Rng,
) -> Result<(Scene, GoalRegion)> {
    let dim = nominal.scene.dim();
    let n_obj = nominal.scene.points().iter().filter_map(|p| p.object).max().map_or(0, |m| m + 1);
    let mut object_tf = Vec::with_capacity(n_obj);
    for k in 0..n_obj {
        let members: Vec<&EnvironmentPoint> =
            nominal.scene.points().iter().filter(|p| p.object == Some(k)).collect();
        let centroid = if members.is_empty() {
            Point::zeros()
        } else {
            members.iter().map(|p| p.center).sum::<Point>() / members.len() as f64
        };
        let r = yaw(jitter_angle(spec.object_rotation_deg, rng));
        let t = jitter_vec(dim, spec.object_position, rng);
        // x -> c + R (x - c) + t
        object_tf.push(RigidPose::new(centroid + t - r * centroid, r));
    }
    let delta = RigidPose::new(
        jitter_vec(dim, spec.base_position, rng),
        yaw(jitter_angle(spec.base_rotation_deg, rng)),
    );
    let base = chain.base();
    let world = base.compose(&delta.inverse()).compose(&base.inverse());

    let mut scene = nominal.scene.clone();
    for p in scene.points_mut() {
        let mut c = p.center;
        if let Some(k) = p.object {
            c = object_tf[k].transform_point(&c);
        }
        p.center = world.transform_point(&c);
    }
    let scene = Scene::new(dim, scene.points().to_vec(), *nominal.scene.bounds())
        .map_err(|e| Error::Generation(format!("perturbed scene invalid: {e}")))?;
    let mut goal = nominal.goal;
    if let Some(k) = nominal.goal_object.filter(|k| *k < n_obj) {
        goal = goal.transformed(&object_tf[k]);
    }
    Ok((scene, goal.transformed(&world)))
}

/// Collision-free configuration inside `goal`, searched by IK from the start
/// and from random restarts.
fn goal_witness(
    chain: &KinematicChain,
    scene: &Scene,
    goal: &GoalRegion,
    q_start: &JointVector,
    settings: &GenerationSettings,
    rng: &mut impl Rng,
) -> Result<Option<JointVector>> {
    for attempt in 0..=settings.ik_restarts {
        let q0 = if attempt == 0 { q_start.clone() } else { chain.random_configuration(rng) };
        let Some(q) = chain.solve_ik(&goal.pose, goal.mode, &q0, &settings.ik)? else {
            continue;
        };
        let state = chain.forward_kinematics(&q)?;
        if scene.clearance(chain, &state) >= settings.goal_margin {
            return Ok(Some(q));
        }
    }
    Ok(None)
}

/// `count` perturbed copies of `nominal`. Problem `i` draws from its own RNG
/// stream, so the list is a pure function of `spec.seed`. Draws whose start
/// is in collision or whose goal has no collision-free IK solution are
/// rejected.
pub fn generate_problems(
    chain: &KinematicChain,
    nominal: &NominalProblem,
    spec: &PerturbationSpec,
    count: usize,
    settings: &GenerationSettings,
) -> Result<Vec<Problem>> {
    if count == 0 {
        return Err(Error::Argument("count must be at least 1".into()));
    }
    spec.validate()?;
    chain.check_q(&nominal.q_start)?;
    if nominal.scene.dim() != chain.dim() {
        return Err(Error::Argument("scene and chain dimensions differ".into()));
    }
    let start_state = chain.forward_kinematics(&nominal.q_start)?;
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let mut rng = stream(spec.seed, id as u64);
        let mut found = None;
        for _ in 0..settings.max_retries.max(1) {
            let (scene, goal) = perturb(chain, nominal, spec, &mut rng)?;
            if scene.clearance(chain, &start_state) < settings.start_margin {
                continue;
            }
            if let Some(q_goal) = goal_witness(chain, &scene, &goal, &nominal.q_start, settings, &mut rng)? {
                found = Some(Problem { id, scene, q_start: nominal.q_start.clone(), q_goal, goal });
                break;
            }
        }
        match found {
            Some(p) => out.push(p),
            None => {
                return Err(Error::Generation(format!(
                    "problem {id}: no valid draw in {} attempts",
                    settings.max_retries
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_marks_table_noise_free() {
        for dim in [2, 3] {
            let nom = nominal_tabletop(&TabletopConfig { dim, ..Default::default() }).unwrap();
            for p in nom.scene.points() {
                match p.object {
                    None => assert_eq!(p.sigma, 0.0),
                    Some(_) => {
                        assert_eq!(p.sigma, 0.02);
                        assert!((0.01..0.03).contains(&p.radius));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_jitter_reproduces_nominal() {
        let chain = KinematicChain::default_planar();
        let nom = nominal_tabletop(&TabletopConfig::default()).unwrap();
        let probs = generate_problems(&chain, &nom, &PerturbationSpec::none(4), 3, &GenerationSettings::default()).unwrap();
        for p in &probs {
            assert_eq!(p.scene, nom.scene);
            assert_eq!(p.goal, nom.goal);
            assert!(p.goal.contains(&chain, &p.q_goal).unwrap());
        }
    }

    #[test]
    fn goal_json_round_trip() {
        let nom = nominal_tabletop(&TabletopConfig::default()).unwrap();
        let text = serde_json::to_string(&nom.goal).unwrap();
        let back: GoalRegion = serde_json::from_str(&text).unwrap();
        assert!((back.pose.translation - nom.goal.pose.translation).norm() < 1e-15);
        assert!((planar_heading(&back.pose) + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn object_jitter_keeps_object_rigid() {
        let chain = KinematicChain::default_planar();
        let nom = nominal_tabletop(&TabletopConfig::default()).unwrap();
        let spec = PerturbationSpec { base_position: 0.0, base_rotation_deg: 0.0, ..PerturbationSpec::standard(9) };
        let mut rng = seeded(1);
        let (scene, _) = perturb(&chain, &nom, &spec, &mut rng).unwrap();
        let pts = |s: &Scene| -> Vec<Point> {
            s.points().iter().filter(|p| p.object == Some(TARGET)).map(|p| p.center).collect()
        };
        let (a, b) = (pts(&nom.scene), pts(&scene));
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert!(((a[i] - a[j]).norm() - (b[i] - b[j]).norm()).abs() < 1e-12);
            }
        }
        // table untouched without base jitter
        for (p, q) in nom.scene.points().iter().zip(scene.points()) {
            if p.object.is_none() {
                assert_eq!(p.center, q.center);
            }
        }
    }

    #[test]
    fn rejection_exhaustion_is_an_error() {
        let chain = KinematicChain::default_planar();
        let mut nom = nominal_tabletop(&TabletopConfig::default()).unwrap();
        // sphere sitting on the first link
        nom.scene.points_mut().push(EnvironmentPoint::new(Point::new(0.0, 0.2, 0.0), 0.05, 0.0));
        let settings = GenerationSettings { max_retries: 3, ..Default::default() };
        let err = generate_problems(&chain, &nom, &PerturbationSpec::none(0), 1, &settings).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
    }
}
