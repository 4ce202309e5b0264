//! Candidate planning on the mean scene and the waypoint-by-waypoint safe
//! transform with its risk ledger.

mod rrt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ccik::{ccikopt, CcikConfig, CcikInput, CcikSolution};
use crate::env::{Problem, Scene};
use crate::error::{Error, Result};
use crate::geom::{JointVector, KinematicChain};
use crate::riskopt::logit_bound_pwl;
use crate::rng::{stream, stream_id};
use crate::sdf::DistanceModel;

pub use rrt::{rrt_connect, shortcut, RrtConfig};

/// Collision checks against spheres at their mean centers.
///
/// Edges are certified rather than sampled: at a configuration with per-link
/// clearance `c_k`, no joint motion of ∞-norm below `min_k c_k / L_k` can
/// reach a sphere (see [`KinematicChain::link_lipschitz`]), so the sweep
/// advances by exactly that much.
#[derive(Debug, Clone)]
pub struct MeanSceneChecker<'a> {
    chain: &'a KinematicChain,
    scene: &'a Scene,
    lipschitz: Vec<f64>,
    /// Clearances below this count as contact (meters).
    pub min_clearance: f64,
}

impl<'a> MeanSceneChecker<'a> {
    pub fn new(chain: &'a KinematicChain, scene: &'a Scene) -> Self {
        Self { chain, scene, lipschitz: chain.link_lipschitz(), min_clearance: 1e-3 }
    }

    pub fn chain(&self) -> &KinematicChain {
        self.chain
    }

    /// Largest certified ∞-norm joint step, or `None` when `q` is blocked.
    pub fn safe_radius(&self, q: &JointVector) -> Result<Option<f64>> {
        if !self.chain.limits().contains(q) {
            return Ok(None);
        }
        let state = self.chain.forward_kinematics(q)?;
        let mut clear = f64::INFINITY;
        let mut radius = f64::INFINITY;
        for p in self.scene.points() {
            for (k, d) in self.chain.link_point_distance_of(&state, &p.center).into_iter().enumerate() {
                let c = d - p.radius;
                clear = clear.min(c);
                radius = radius.min(c / self.lipschitz[k]);
            }
        }
        Ok((clear >= self.min_clearance).then_some(radius))
    }

    pub fn config_free(&self, q: &JointVector) -> Result<bool> {
        Ok(self.safe_radius(q)?.is_some())
    }

    pub fn edge_free(&self, a: &JointVector, b: &JointVector) -> Result<bool> {
        let len = a.dist_inf(b);
        let mut t = 0.0;
        loop {
            let q = a.lerp(b, t);
            let Some(r) = self.safe_radius(&q)? else {
                return Ok(false);
            };
            if t >= 1.0 {
                return Ok(true);
            }
            t = if len == 0.0 { 1.0 } else { (t + r / len).min(1.0) };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Candidate,
    Safe,
    Baseline,
}

/// Path file: `{kind, waypoints, risk_bound, allocations}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub kind: PathKind,
    pub waypoints: Vec<JointVector>,
    /// Σ allocations for safe paths.
    pub risk_bound: Option<f64>,
    #[serde(default)]
    pub allocations: Vec<f64>,
}

impl Path {
    pub fn new(kind: PathKind, waypoints: Vec<JointVector>) -> Self {
        Self { kind, waypoints, risk_bound: None, allocations: Vec::new() }
    }

    pub fn segments(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    /// Sum of Euclidean joint-space segment lengths.
    pub fn joint_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].dist2(&w[1])).sum()
    }
}

/// Split every segment into `⌈len_∞ / spacing⌉` equal pieces.
pub fn discretize(path: &Path, spacing: f64) -> Result<Path> {
    if !(spacing > 0.0) {
        return Err(Error::Argument("spacing must be positive".into()));
    }
    let Some(first) = path.waypoints.first() else {
        return Err(Error::Argument("path has no waypoints".into()));
    };
    let mut out = vec![first.clone()];
    for w in path.waypoints.windows(2) {
        let pieces = ((w[0].dist_inf(&w[1]) / spacing).ceil() as usize).max(1);
        for i in 1..pieces {
            out.push(w[0].lerp(&w[1], i as f64 / pieces as f64));
        }
        out.push(w[1].clone());
    }
    Ok(Path { waypoints: out, ..path.clone() })
}

/// The total risk budget and what each waypoint took from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskLedger {
    pub total: f64,
    /// `Δ_0, Δ_1, …`; one more entry than `allocations`.
    pub remaining: Vec<f64>,
    pub allocations: Vec<f64>,
}

impl RiskLedger {
    pub fn new(total: f64) -> Self {
        Self { total, remaining: vec![total], allocations: Vec::new() }
    }

    pub fn current(&self) -> f64 {
        *self.remaining.last().expect("ledger starts with the total")
    }

    pub fn spend(&mut self, gamma: f64) {
        let next = self.current() - gamma;
        self.allocations.push(gamma);
        self.remaining.push(next);
    }

    /// `Δ − Δ_last`, the guaranteed path risk bound.
    pub fn bound(&self) -> f64 {
        self.total - self.current()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Total risk bound `Δ`.
    pub risk_bound: f64,
    /// Waypoint spacing (∞-norm radians).
    pub spacing: f64,
    pub rrt: RrtConfig,
    /// Candidate planning attempts before giving up.
    pub attempts: usize,
    pub seed: u64,
    pub ccik: CcikConfig,
    /// Extra steps toward the last candidate pose when the final safe
    /// waypoint still lags outside the goal region.
    #[serde(default = "default_settle")]
    pub settle_steps: usize,
}

fn default_settle() -> usize {
    10
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            risk_bound: 0.10,
            spacing: 0.15,
            rrt: RrtConfig::default(),
            attempts: 15,
            seed: 0,
            ccik: CcikConfig::default(),
            settle_steps: default_settle(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.risk_bound > 0.0 && self.risk_bound <= 0.5) {
            return Err(Error::Argument("risk bound must lie in (0, 0.5]".into()));
        }
        if !(self.spacing > 0.0) || self.spacing > self.ccik.step_bound {
            return Err(Error::Argument("waypoint spacing must be positive and at most the step bound".into()));
        }
        if self.attempts == 0 {
            return Err(Error::Argument("attempts must be at least 1".into()));
        }
        self.rrt.validate()
    }
}

/// A candidate path and the number of attempts it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub path: Path,
    pub attempts: usize,
}

/// RRT-Connect plus shortcutting on `scene` (means only), retried with fresh
/// streams up to `config.attempts` times. Attempt `a` of problem `id` uses
/// stream `(seed, id, a)`.
pub fn plan_candidate(chain: &KinematicChain, problem: &Problem, scene: &Scene, config: &PlannerConfig) -> Result<Candidate> {
    config.validate()?;
    let checker = MeanSceneChecker::new(chain, scene);
    if !checker.config_free(&problem.q_start)? {
        return Err(Error::Planning("start is in collision with the mean scene".into()));
    }
    if problem.goal.contains(chain, &problem.q_start)? {
        let q = problem.q_start.clone();
        return Ok(Candidate { path: Path::new(PathKind::Candidate, vec![q.clone(), q]), attempts: 1 });
    }
    for attempt in 0..config.attempts {
        let mut rng = stream(config.seed, stream_id(&[problem.id as u64, attempt as u64]));
        let goal = goal_configuration(chain, problem, &checker, attempt, &mut rng)?;
        let Some(goal) = goal else { continue };
        if let Some(raw) = rrt_connect(&checker, &problem.q_start, &goal, &config.rrt, &mut rng)? {
            let path = shortcut(&checker, raw, config.rrt.shortcut_rounds, &mut rng)?;
            return Ok(Candidate { path: Path::new(PathKind::Candidate, path), attempts: attempt + 1 });
        }
    }
    Err(Error::Planning(format!("no candidate path in {} attempts", config.attempts)))
}

/// The stored goal witness first; fresh IK solutions on later attempts.
fn goal_configuration(
    chain: &KinematicChain,
    problem: &Problem,
    checker: &MeanSceneChecker<'_>,
    attempt: usize,
    rng: &mut impl Rng,
) -> Result<Option<JointVector>> {
    if attempt == 0 && checker.config_free(&problem.q_goal)? {
        return Ok(Some(problem.q_goal.clone()));
    }
    let settings = crate::geom::IkSettings::default();
    for _ in 0..8 {
        let seed = chain.random_configuration(rng);
        if let Some(q) = chain.solve_ik(&problem.goal.pose, problem.goal.mode, &seed, &settings)? {
            if problem.goal.contains(chain, &q)? && checker.config_free(&q)? {
                return Ok(Some(q));
            }
        }
    }
    Ok(checker.config_free(&problem.q_goal)?.then(|| problem.q_goal.clone()))
}

/// One CC-IK step of the safe transform, for logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub waypoint: usize,
    pub budget: f64,
    pub allocated: f64,
    pub active: usize,
    pub status: crate::riskopt::SolveStatus,
    pub objective: f64,
    pub step_bound: f64,
}

impl StepLog {
    fn from_solution(waypoint: usize, budget: f64, sol: &CcikSolution) -> Self {
        Self {
            waypoint,
            budget,
            allocated: sol.allocated_total,
            active: sol.active,
            status: sol.status,
            objective: sol.objective,
            step_bound: sol.step_bound,
        }
    }
}

/// Result of one hierarchical planning query.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    /// The discretized candidate path.
    pub candidate: Path,
    /// Safe waypoints reached so far; the full path on success.
    pub safe: Path,
    pub ledger: RiskLedger,
    /// Index `j` of the step `q_j → q_{j+1}` that failed.
    pub failed_at: Option<usize>,
    pub attempts: usize,
    pub steps: Vec<StepLog>,
    /// Whether the last safe waypoint lies in the goal region.
    pub goal_reached: bool,
}

impl PlanOutcome {
    pub fn is_success(&self) -> bool {
        self.failed_at.is_none()
    }

    /// JSON-lines log, one record per step.
    pub fn log_lines(&self) -> String {
        let mut s = String::new();
        for step in &self.steps {
            s.push_str(&serde_json::to_string(step).expect("step log serializes"));
            s.push('\n');
        }
        s
    }
}

/// Plan a candidate on the scene means, discretize it, then move along it
/// with one CC-IK step per waypoint, each limited by the remaining budget
/// `Δ_j`. The first failed step ends the query. Settling steps, if any, are
/// charged to the same ledger.
pub fn hierarchical_plan(
    chain: &KinematicChain,
    problem: &Problem,
    model: &dyn DistanceModel,
    config: &PlannerConfig,
) -> Result<PlanOutcome> {
    let cand = plan_candidate(chain, problem, &problem.scene, config)?;
    let candidate = discretize(&cand.path, config.spacing)?;
    let ccik = CcikConfig { pose_mode: problem.goal.mode, ..config.ccik };
    let pwl = logit_bound_pwl(ccik.pwl_segments)?;
    let mut ledger = RiskLedger::new(config.risk_bound);
    let mut safe = vec![problem.q_start.clone()];
    let mut steps = Vec::new();
    let mut failed_at = None;
    let last = chain.pose_vector(candidate.waypoints.last().expect("candidate has waypoints"), ccik.pose_mode)?;
    let mut j = 0;
    loop {
        let target = if j < candidate.segments() {
            chain.pose_vector(&candidate.waypoints[j + 1], ccik.pose_mode)?
        } else if j < candidate.segments() + config.settle_steps && !problem.goal.contains(chain, &safe[j])? {
            last.clone()
        } else {
            break;
        };
        let budget = ledger.current();
        let input = CcikInput {
            chain,
            model,
            scene: &problem.scene,
            q_current: &safe[j],
            target: &target,
            budget,
        };
        let sol = ccikopt(&input, &ccik, &pwl)?;
        steps.push(StepLog::from_solution(j, budget, &sol));
        if !sol.is_success() {
            failed_at = Some(j);
            break;
        }
        let next = chain.limits().clamp(&safe[j].add(&sol.delta_q));
        safe.push(next);
        ledger.spend(sol.allocated_total);
        j += 1;
    }
    let goal_reached = failed_at.is_none() && problem.goal.contains(chain, safe.last().expect("start present"))?;
    let safe = Path {
        kind: PathKind::Safe,
        waypoints: safe,
        risk_bound: Some(ledger.bound()),
        allocations: ledger.allocations.clone(),
    };
    Ok(PlanOutcome { candidate, safe, ledger, failed_at, attempts: cand.attempts, steps, goal_reached })
}
