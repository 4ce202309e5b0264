//! Chance-constrained IK for one waypoint.
//!
//! Each link/point pair contributes the linearized chance constraint
//! `Pr[Γ + ∇Γᵀ Δq ≥ r] ≥ γ̄` with `Γ ~ N(μ, σ²)`. It holds when
//! `−∇μᵀ Δq + σ φ⁻¹(γ̄) ≤ μ − r`, and therefore when the logistic bound, or
//! its secant PWL, replaces `φ⁻¹`. The risks `γ = 1 − γ̄` share the waypoint
//! budget through the union bound: `Σ γ ≤ Δ_j`.
//!
//! Decision vector: `x = [Δq; δ; γ̄]`, with motion cost `Δqᵀ Q Δq`, slack
//! cost `δᵀ D δ`, and `−h Σ γ̄` rewarding low risk. The slack absorbs any
//! mismatch in `J Δq − δ = FK(target) − FK(current)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::Scene;
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, JointVector, KinematicChain, PoseMode};
use crate::riskopt::{
    logit_bound_pwl, solve_convex, solve_mip, MipProblem, MipSettings, PwlApprox, PwlConstraint,
    QpProblem, SolveStatus, GAMMA_BAR_MAX, GAMMA_BAR_MIN,
};
use crate::sdf::DistanceModel;

/// One linearized link/point chance constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveConstraint {
    pub link: usize,
    pub point: usize,
    /// `μ_{k,r} − r_r` (meters).
    pub mu: f64,
    pub sigma: f64,
    /// `−∇_q μ_{k,r}`.
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    #[default]
    Convex,
    Mip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcikConfig {
    /// `Q = motion_weight · I`.
    pub motion_weight: f64,
    /// `D = slack_weight · I`.
    pub slack_weight: f64,
    /// `h`: reward per unit of `γ̄`.
    pub risk_weight: f64,
    /// `‖Δq‖_∞` bound (radians).
    pub step_bound: f64,
    /// Drop pairs with `μ − r` above this (meters); `None` keeps all.
    pub prune_distance: Option<f64>,
    pub pwl_segments: usize,
    pub mode: SolveMode,
    pub pose_mode: PoseMode,
    /// Retry once with half the step bound when the first solve fails.
    pub retry_halved: bool,
    pub mip: MipSettings,
}

impl Default for CcikConfig {
    fn default() -> Self {
        Self {
            motion_weight: 1.0,
            slack_weight: 10.0,
            risk_weight: 1.0,
            step_bound: 0.2,
            prune_distance: Some(0.5),
            pwl_segments: 16,
            mode: SolveMode::Convex,
            pose_mode: PoseMode::Full,
            retry_halved: true,
            mip: MipSettings::default(),
        }
    }
}

/// All link/point pairs at `q`, from one batched model query. Each pair
/// gets the model's μ minus the sphere radius.
pub fn gather_constraints(
    model: &dyn DistanceModel,
    scene: &Scene,
    q: &JointVector,
    prune_distance: Option<f64>,
) -> Result<Vec<ActiveConstraint>> {
    if scene.is_empty() {
        return Ok(Vec::new());
    }
    let xs: Vec<_> = scene.points().iter().map(|p| p.center).collect();
    let preds = model.predict_batch(q, &xs, true)?;
    let mut out = Vec::new();
    for (r, (pred, point)) in preds.iter().zip(scene.points()).enumerate() {
        let grad = pred
            .grad_mu_q
            .as_ref()
            .ok_or_else(|| Error::Evaluation("model returned no gradient".into()))?;
        for k in 0..pred.mu.len() {
            let mu = pred.mu[k] - point.radius;
            if prune_distance.is_some_and(|d| mu > d) {
                continue;
            }
            out.push(ActiveConstraint {
                link: k,
                point: r,
                mu,
                sigma: pred.sigma[k],
                gradient: grad.row(k).iter().map(|g| -g).collect(),
            });
        }
    }
    Ok(out)
}

/// Everything needed to assemble one step, independent of chain and model.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProblem {
    pub q_current: Vec<f64>,
    pub q_lower: Vec<f64>,
    pub q_upper: Vec<f64>,
    /// Pose Jacobian at `q_current` (`m × n`).
    pub jacobian: DMatrix<f64>,
    /// `FK(target) − FK(current)` (`m`).
    pub pose_error: DVector<f64>,
    pub constraints: Vec<ActiveConstraint>,
    pub budget: f64,
    pub motion: DMatrix<f64>,
    pub slack: DMatrix<f64>,
    pub risk_weight: f64,
    pub step_bound: f64,
}

/// Variable layout of an assembled step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub c: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.n + self.m + self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gamma_bar(&self, i: usize) -> usize {
        self.n + self.m + i
    }
}

/// The budget row keeps this much slack so that solver tolerance cannot
/// push the allocation over the budget.
pub const BUDGET_MARGIN: f64 = 2e-6;

pub fn assemble(step: &StepProblem, pwl: &PwlApprox) -> Result<(MipProblem, Layout)> {
    let n = step.q_current.len();
    let m = step.pose_error.len();
    let c = step.constraints.len();
    let dims_ok = step.q_lower.len() == n
        && step.q_upper.len() == n
        && step.jacobian.shape() == (m, n)
        && step.motion.shape() == (n, n)
        && step.slack.shape() == (m, m)
        && step.constraints.iter().all(|a| a.gradient.len() == n);
    if !dims_ok {
        return Err(Error::Assembly("inconsistent step dimensions".into()));
    }
    if !(step.budget > 0.0) || !(step.step_bound > 0.0) || !(step.risk_weight >= 0.0) {
        return Err(Error::Assembly("budget and step bound must be positive, risk weight >= 0".into()));
    }
    if let Some(a) = step.constraints.iter().find(|a| !(a.sigma >= 0.0) || !a.mu.is_finite()) {
        return Err(Error::Assembly(format!("constraint ({}, {}) has invalid mu/sigma", a.link, a.point)));
    }
    let layout = Layout { n, m, c };
    let nv = layout.len();
    let mut qp = QpProblem::new(nv);
    qp.p.view_mut((0, 0), (n, n)).copy_from(&(&step.motion * 2.0));
    qp.p.view_mut((n, n), (m, m)).copy_from(&(&step.slack * 2.0));
    for i in 0..c {
        qp.q[layout.gamma_bar(i)] = -step.risk_weight;
    }
    qp.a_eq = DMatrix::zeros(m, nv);
    qp.a_eq.view_mut((0, 0), (m, n)).copy_from(&step.jacobian);
    for i in 0..m {
        qp.a_eq[(i, n + i)] = -1.0;
    }
    qp.b_eq = step.pose_error.clone();
    for j in 0..n {
        qp.lower[j] = (step.q_lower[j] - step.q_current[j]).max(-step.step_bound);
        qp.upper[j] = (step.q_upper[j] - step.q_current[j]).min(step.step_bound);
        if qp.lower[j] > qp.upper[j] {
            return Err(Error::Assembly(format!("joint {j} starts outside its limits")));
        }
    }
    let mut constraints = Vec::with_capacity(c);
    for (i, a) in step.constraints.iter().enumerate() {
        let g = layout.gamma_bar(i);
        qp.lower[g] = GAMMA_BAR_MIN;
        qp.upper[g] = GAMMA_BAR_MAX;
        let mut row = DVector::zeros(nv);
        for j in 0..n {
            row[j] = a.gradient[j];
        }
        constraints.push(PwlConstraint { row, var: g, scale: a.sigma, rhs: a.mu, pwl: pwl.clone() });
    }
    if c > 0 {
        // Σ (1 − γ̄) ≤ Δ  ⇔  −Σ γ̄ ≤ Δ − C
        let mut row = DMatrix::zeros(1, nv);
        for i in 0..c {
            row[(0, layout.gamma_bar(i))] = -1.0;
        }
        let rhs = DVector::from_element(1, step.budget - c as f64 - BUDGET_MARGIN);
        qp.push_inequalities(&row, &rhs);
    }
    Ok((MipProblem { base: qp, constraints }, layout))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcikSolution {
    pub status: SolveStatus,
    pub delta_q: Vec<f64>,
    pub slack: Vec<f64>,
    /// `(link, point, γ)` per active constraint.
    pub gamma: Vec<(usize, usize, f64)>,
    pub allocated_total: f64,
    pub objective: f64,
    pub active: usize,
    /// Step bound of the accepted (or last) solve.
    pub step_bound: f64,
    pub nodes: usize,
}

impl CcikSolution {
    pub fn is_success(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Compact per-step record for logs.
    pub fn debug_record(&self) -> serde_json::Value {
        serde_json::json!({
            "active": self.active,
            "allocated_total": self.allocated_total,
            "status": self.status,
            "objective": self.objective,
            "step_bound": self.step_bound,
        })
    }
}

/// Solve an assembled step and read back `Δq`, `δ` and the risks.
pub fn solve_step(step: &StepProblem, pwl: &PwlApprox, mode: SolveMode, mip: &MipSettings) -> Result<CcikSolution> {
    let (prob, layout) = assemble(step, pwl)?;
    let result = match mode {
        SolveMode::Convex => solve_convex(&prob, &mip.qp)?,
        SolveMode::Mip => solve_mip(&prob, mip)?,
    };
    let x = &result.solution.x;
    let gamma: Vec<(usize, usize, f64)> = step
        .constraints
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let gb = x[layout.gamma_bar(i)].clamp(GAMMA_BAR_MIN, GAMMA_BAR_MAX);
            (a.link, a.point, 1.0 - gb)
        })
        .collect();
    let allocated_total = gamma.iter().map(|g| g.2).sum();
    Ok(CcikSolution {
        status: result.solution.status,
        delta_q: x.rows(0, layout.n).iter().copied().collect(),
        slack: x.rows(layout.n, layout.m).iter().copied().collect(),
        gamma,
        allocated_total,
        objective: result.solution.objective,
        active: layout.c,
        step_bound: step.step_bound,
        nodes: result.nodes,
    })
}

/// Pose-vector difference `target − current`, with planar headings wrapped.
pub fn pose_difference(chain: &KinematicChain, target: &DVector<f64>, current: &DVector<f64>, mode: PoseMode) -> DVector<f64> {
    let mut e = target - current;
    if mode == PoseMode::Full && chain.dim() == 2 {
        e[2] = wrap_angle(e[2]);
    }
    e
}

pub struct CcikInput<'a> {
    pub chain: &'a KinematicChain,
    pub model: &'a dyn DistanceModel,
    pub scene: &'a Scene,
    pub q_current: &'a JointVector,
    pub target: &'a DVector<f64>,
    pub budget: f64,
}

/// Move from `q_current` toward the target pose under the waypoint budget.
/// A failed solve is retried once with half the step bound when configured.
pub fn ccikopt(input: &CcikInput<'_>, config: &CcikConfig, pwl: &PwlApprox) -> Result<CcikSolution> {
    let chain = input.chain;
    chain.check_q(input.q_current)?;
    let state = chain.forward_kinematics(input.q_current)?;
    let jacobian = chain.jacobian_of(&state, config.pose_mode);
    let current = chain.pose_vector_of(&state, config.pose_mode);
    if input.target.len() != current.len() {
        return Err(Error::Assembly("target pose vector has the wrong length".into()));
    }
    let constraints = gather_constraints(input.model, input.scene, input.q_current, config.prune_distance)?;
    let n = chain.dof();
    let m = current.len();
    let mut step = StepProblem {
        q_current: input.q_current.0.clone(),
        q_lower: chain.limits().lower.clone(),
        q_upper: chain.limits().upper.clone(),
        jacobian,
        pose_error: pose_difference(chain, input.target, &current, config.pose_mode),
        constraints,
        budget: input.budget,
        motion: DMatrix::identity(n, n) * config.motion_weight,
        slack: DMatrix::identity(m, m) * config.slack_weight,
        risk_weight: config.risk_weight,
        step_bound: config.step_bound,
    };
    let first = solve_step(&step, pwl, config.mode, &config.mip)?;
    if first.is_success() || !config.retry_halved {
        return Ok(first);
    }
    step.step_bound *= 0.5;
    solve_step(&step, pwl, config.mode, &config.mip)
}

/// The default PWL for `config`.
pub fn default_pwl(config: &CcikConfig) -> Result<PwlApprox> {
    logit_bound_pwl(config.pwl_segments)
}

