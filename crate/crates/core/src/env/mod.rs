//! Scenes of noisy sensed spheres, randomized problem generation and training
//! data for the distance model.

mod dataset;
mod problem;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{ChainState, KinematicChain, Point};

pub use dataset::{
    generate_dataset, generate_dataset_at, read_dataset, write_dataset, Dataset, DatasetSizes, DATASET_MAGIC,
};
pub use problem::{
    generate_problems, nominal_tabletop, GenerationSettings, GoalRegion, NominalProblem,
    PerturbationSpec, Problem, ProblemSet, TabletopConfig,
};

/// A sensed sphere. `sigma` is the per-axis standard deviation of its center;
/// zero marks noise-free geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentPoint {
    pub center: Point,
    pub radius: f64,
    pub sigma: f64,
    /// Rigid object the sphere belongs to, if any. Object jitter moves all of
    /// an object's spheres together.
    pub object: Option<usize>,
}

impl EnvironmentPoint {
    pub fn new(center: Point, radius: f64, sigma: f64) -> Self {
        Self { center, radius, sigma, object: None }
    }

    pub fn is_noisy(&self) -> bool {
        self.sigma > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    /// Cube `[-half, half]^dim` (with `z = 0` for planar boxes).
    pub fn centered(dim: usize, half: f64) -> Self {
        let mut min = Point::zeros();
        let mut max = Point::zeros();
        for i in 0..dim {
            min[i] = -half;
            max[i] = half;
        }
        Self { min, max }
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn sample(&self, dim: usize, rng: &mut impl Rng) -> Point {
        let mut p = Point::zeros();
        for i in 0..dim {
            p[i] = rng.random_range(self.min[i]..=self.max[i]);
        }
        p
    }
}

/// Sphere scene inside an axis-aligned workspace box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneJson", into = "SceneJson")]
pub struct Scene {
    dim: usize,
    points: Vec<EnvironmentPoint>,
    bounds: Aabb,
}

impl Scene {
    /// An empty point list is accepted: it is the obstacle-free workspace.
    pub fn new(dim: usize, points: Vec<EnvironmentPoint>, bounds: Aabb) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Argument(format!("scene dimension must be 2 or 3, got {dim}")));
        }
        for i in 0..dim {
            if !(bounds.min[i] < bounds.max[i]) {
                return Err(Error::Argument(format!("empty bounds along axis {i}")));
            }
        }
        for (i, p) in points.iter().enumerate() {
            let finite = p.center.iter().all(|v| v.is_finite())
                && p.radius.is_finite()
                && p.sigma.is_finite();
            if !finite || p.radius < 0.0 || p.sigma < 0.0 {
                return Err(Error::Argument(format!(
                    "point {i}: radius and sigma must be finite and non-negative"
                )));
            }
            if dim == 2 && p.center.z != 0.0 {
                return Err(Error::Argument(format!("point {i}: planar scene with z != 0")));
            }
            if !bounds.contains(&p.center) {
                return Err(Error::Argument(format!("point {i}: center outside bounds")));
            }
        }
        Ok(Self { dim, points, bounds })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[EnvironmentPoint] {
        &self.points
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn noisy_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_noisy()).count()
    }

    /// Copy with every noisy radius scaled by `1 + ratio`. Noise-free
    /// geometry keeps its radius.
    pub fn inflated(&self, ratio: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            if p.is_noisy() {
                p.radius *= 1.0 + ratio;
            }
        }
        out
    }

    /// Smallest signed clearance between any link capsule and any sphere.
    /// `+∞` for an empty scene.
    pub fn clearance(&self, chain: &KinematicChain, state: &ChainState) -> f64 {
        let mut best = f64::INFINITY;
        for p in &self.points {
            for d in chain.link_point_distance_of(state, &p.center) {
                best = best.min(d - p.radius);
            }
        }
        best
    }

    pub fn in_collision(&self, chain: &KinematicChain, state: &ChainState) -> bool {
        self.clearance(chain, state) < 0.0
    }

    pub(crate) fn points_mut(&mut self) -> &mut Vec<EnvironmentPoint> {
        &mut self.points
    }
}

/// One draw of the sensed scene: each noisy center gets isotropic Gaussian
/// noise of its own `sigma`; radii and noise-free points are unchanged.
pub fn sample_scene_realization(scene: &Scene, rng: &mut impl Rng) -> Scene {
    let mut out = scene.clone();
    for p in &mut out.points {
        if p.is_noisy() {
            for i in 0..scene.dim {
                let z: f64 = StandardNormal.sample(rng);
                p.center[i] += p.sigma * z;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneJson {
    pub points: Vec<PointJson>,
    pub bounds: BoundsJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointJson {
    pub c: Vec<f64>,
    pub r: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsJson {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

fn vec3(v: &[f64], dim: usize, what: &str) -> Result<Point> {
    if v.len() != dim {
        return Err(Error::Format(format!("{what}: expected {dim} coordinates, got {}", v.len())));
    }
    let mut p = Vector3::zeros();
    p.as_mut_slice()[..dim].copy_from_slice(v);
    Ok(p)
}

impl TryFrom<SceneJson> for Scene {
    type Error = Error;

    fn try_from(doc: SceneJson) -> Result<Self> {
        let dim = doc.bounds.min.len();
        let bounds = Aabb {
            min: vec3(&doc.bounds.min, dim, "bounds.min")?,
            max: vec3(&doc.bounds.max, dim, "bounds.max")?,
        };
        let points = doc
            .points
            .iter()
            .map(|p| {
                Ok(EnvironmentPoint {
                    center: vec3(&p.c, dim, "point center")?,
                    radius: p.r,
                    sigma: p.sigma,
                    object: p.object,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Scene::new(dim, points, bounds).map_err(|e| Error::Format(e.to_string()))
    }
}

impl From<Scene> for SceneJson {
    fn from(s: Scene) -> Self {
        let d = s.dim;
        SceneJson {
            points: s
                .points
                .iter()
                .map(|p| PointJson {
                    c: p.center.as_slice()[..d].to_vec(),
                    r: p.radius,
                    sigma: p.sigma,
                    object: p.object,
                })
                .collect(),
            bounds: BoundsJson {
                min: s.bounds.min.as_slice()[..d].to_vec(),
                max: s.bounds.max.as_slice()[..d].to_vec(),
            },
        }
    }
}
