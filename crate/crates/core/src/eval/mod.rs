//! Monte-Carlo path risk, inflation baselines and path metrics.

mod bench;
mod report;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Problem, Scene};
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, JointVector, KinematicChain, Point};
use crate::planner::{discretize, plan_candidate, Path, PathKind, PlannerConfig};
use crate::rng::stream;

pub use bench::{run_benchmark, BenchConfig, BenchRow, Benchmark, Method, MethodSummary};
pub use report::{risk_cdf_svg, scene_svg, sign_test, summary_markdown, wilson_interval, REPORT_HEADER};

/// Collision probability estimate with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub risk: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
    pub collisions: usize,
}

impl RiskEstimate {
    pub fn from_counts(collisions: usize, samples: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(collisions, samples);
        Self { risk: collisions as f64 / samples as f64, ci_low, ci_high, samples, collisions }
    }

    /// Binomial standard error at the estimate.
    pub fn standard_error(&self) -> f64 {
        (self.risk * (1.0 - self.risk) / self.samples as f64).sqrt()
    }
}

/// Configurations along `waypoints` no more than `resolution` apart
/// (∞-norm), endpoints included.
pub fn densify(waypoints: &[JointVector], resolution: f64) -> Vec<JointVector> {
    let mut out = Vec::new();
    if let Some(first) = waypoints.first() {
        out.push(first.clone());
    }
    for w in waypoints.windows(2) {
        let pieces = ((w[0].dist_inf(&w[1]) / resolution).ceil() as usize).max(1);
        for i in 1..=pieces {
            out.push(w[0].lerp(&w[1], i as f64 / pieces as f64));
        }
    }
    out
}

/// Dense edge resolution of the MC checker (radians).
pub const EDGE_RESOLUTION: f64 = 1e-3;

/// Per-sphere precomputation for the MC checker.
///
/// Moving a sphere center by `ε` changes every link distance by at most
/// `‖ε‖`, so configuration `c` can only collide with a displaced sphere when
/// its mean clearance is below `‖ε‖`. Clearances are sorted per sphere, and
/// only that prefix is checked exactly.
struct SphereIndex {
    /// `(clearance, config)` pairs in increasing clearance.
    margins: Vec<(f64, usize)>,
}

/// Estimate `Pr[any configuration along the path collides]` by sampling
/// scene realizations. Sample `s` draws from stream `(seed, s)`, so the
/// estimate does not depend on `jobs`.
pub fn mc_path_risk(
    chain: &KinematicChain,
    scene: &Scene,
    waypoints: &[JointVector],
    samples: usize,
    seed: u64,
    jobs: usize,
) -> Result<RiskEstimate> {
    if samples < 100 {
        return Err(Error::Argument("at least 100 samples are required".into()));
    }
    if waypoints.is_empty() {
        return Err(Error::Argument("path has no waypoints".into()));
    }
    let configs = densify(waypoints, EDGE_RESOLUTION);
    let segments: Vec<Vec<(Point, Point)>> = configs
        .iter()
        .map(|q| Ok(chain.forward_kinematics(q)?.segments(chain)))
        .collect::<Result<_>>()?;
    let radii: Vec<f64> = chain.links().iter().map(|l| l.radius).collect();
    let clearance = |segs: &[(Point, Point)], center: &Point, r: f64| {
        segs.iter()
            .zip(&radii)
            .map(|((a, b), lr)| point_segment_distance(center, a, b) - lr - r)
            .fold(f64::INFINITY, f64::min)
    };

    let mut noisy = Vec::new();
    for p in scene.points() {
        if p.is_noisy() {
            let mut margins: Vec<(f64, usize)> =
                segments.iter().enumerate().map(|(c, s)| (clearance(s, &p.center, p.radius), c)).collect();
            margins.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            noisy.push((p, SphereIndex { margins }));
        } else if segments.iter().any(|s| clearance(s, &p.center, p.radius) < 0.0) {
            // fixed geometry is hit in every realization
            return Ok(RiskEstimate::from_counts(samples, samples));
        }
    }
    let dim = scene.dim();
    let collides = |s: usize| -> bool {
        let mut rng = stream(seed, s as u64);
        // draw every sphere's noise first so the stream layout matches a
        // full scene realization
        let offsets: Vec<Point> = noisy
            .iter()
            .map(|(p, _)| {
                let mut e = Point::zeros();
                for i in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    e[i] = p.sigma * z;
                }
                e
            })
            .collect();
        noisy.iter().zip(&offsets).any(|((p, idx), e)| {
            let reach = e.norm();
            let center = p.center + e;
            idx.margins
                .iter()
                .take_while(|(m, _)| *m < reach)
                .any(|(_, c)| clearance(&segments[*c], &center, p.radius) < 0.0)
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let hits: usize = pool.install(|| (0..samples).into_par_iter().filter(|s| collides(*s)).count());
    Ok(RiskEstimate::from_counts(hits, samples))
}

/// RRT-Connect on the mean scene with every noisy radius scaled by
/// `1 + ratio`. Ratio 0 reproduces the planner's candidate exactly.
pub fn inflate_baseline(chain: &KinematicChain, problem: &Problem, ratio: f64, config: &PlannerConfig) -> Result<Path> {
    if !(ratio >= 0.0) {
        return Err(Error::Argument("inflation ratio must be non-negative".into()));
    }
    let scene = problem.scene.inflated(ratio);
    let c = plan_candidate(chain, problem, &scene, config)?;
    Ok(Path { kind: PathKind::Baseline, ..c.path })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    /// `Σ ‖q_{j+1} − q_j‖₂` (radians).
    pub path_length_rad: f64,
    /// `Σ ‖EE(q_{j+1}) − EE(q_j)‖₂` (meters).
    pub ee_displacement_m: f64,
}

pub fn path_metrics(waypoints: &[JointVector], chain: &KinematicChain) -> Result<PathMetrics> {
    if waypoints.len() < 2 {
        return Err(Error::Argument("metrics need at least two waypoints".into()));
    }
    let ee: Vec<_> = waypoints.iter().map(|q| chain.end_effector(q).map(|p| p.translation)).collect::<Result<_>>()?;
    Ok(PathMetrics {
        path_length_rad: waypoints.windows(2).map(|w| w[0].dist2(&w[1])).sum(),
        ee_displacement_m: ee.windows(2).map(|w| (w[1] - w[0]).norm()).sum(),
    })
}

/// Waypoints of the discretized candidate paths of the first `paths`
/// problems that admit one, for held-out model evaluation.
pub fn path_waypoints(chain: &KinematicChain, problems: &[Problem], paths: usize, config: &PlannerConfig) -> Result<Vec<JointVector>> {
    let mut out = Vec::new();
    let mut used = 0;
    for p in problems {
        if used == paths {
            break;
        }
        match plan_candidate(chain, p, &p.scene, config) {
            Ok(c) => {
                out.extend(discretize(&c.path, config.spacing)?.waypoints);
                used += 1;
            }
            Err(Error::Planning(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used < paths {
        return Err(Error::Planning(format!("only {used} of {paths} problems have a candidate path")));
    }
    Ok(out)
}
