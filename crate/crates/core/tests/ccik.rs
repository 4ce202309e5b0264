//! Chance-constrained IK steps against grid-search and Monte-Carlo oracles.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use riskplan::ccik::{
    assemble, ccikopt, default_pwl, gather_constraints, solve_step, ActiveConstraint, CcikConfig, CcikInput,
    SolveMode, StepProblem,
};
use riskplan::env::{Aabb, EnvironmentPoint, Scene};
use riskplan::geom::{KinematicChain, Point, PoseMode};
use riskplan::riskopt::{logit_bound, logit_bound_pwl, MipSettings, PwlApprox, SolveStatus};
use riskplan::sdf::ExactGaussianModel;

fn one_dof(mu: f64, sigma: f64, budget: f64) -> StepProblem {
    StepProblem {
        q_current: vec![0.0],
        q_lower: vec![-10.0],
        q_upper: vec![10.0],
        jacobian: DMatrix::from_element(1, 1, 1.0),
        pose_error: DVector::from_element(1, 0.5),
        constraints: vec![ActiveConstraint { link: 0, point: 0, mu, sigma, gradient: vec![1.0] }],
        budget,
        motion: DMatrix::identity(1, 1),
        slack: DMatrix::identity(1, 1) * 10.0,
        risk_weight: 1.0,
        step_bound: 10.0,
    }
}

/// Objective of the 1-DoF step, minimized over Δq for a fixed γ̄ in closed form.
fn one_dof_grid(step: &StepProblem, pwl: &PwlApprox) -> (f64, f64, f64) {
    let a = &step.constraints[0];
    let e = step.pose_error[0];
    let (qw, dw) = (step.motion[(0, 0)], step.slack[(0, 0)]);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let n = 20_000;
    let lo = 1.0 - step.budget;
    for i in 0..=n {
        let gb = lo + (0.999_999 - lo) * i as f64 / n as f64;
        let cap = (a.mu - a.sigma * pwl.eval(gb)) / a.gradient[0];
        // unconstrained minimizer of qw·Δq² + dw·(Δq − e)², then clipped
        let dq = (dw * e / (qw + dw)).min(cap);
        let obj = qw * dq * dq + dw * (dq - e).powi(2) - step.risk_weight * gb;
        if obj < best.0 {
            best = (obj, dq, gb);
        }
    }
    best
}

#[test]
fn one_dof_step_matches_grid_search() {
    let step = one_dof(0.1, 0.02, 0.05);
    let pwl = logit_bound_pwl(16).unwrap();
    let grid = one_dof_grid(&step, &pwl);
    for mode in [SolveMode::Convex, SolveMode::Mip] {
        let sol = solve_step(&step, &pwl, mode, &MipSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.delta_q[0] - grid.1).abs() <= 1e-3, "{mode:?}: {} vs {}", sol.delta_q[0], grid.1);
        assert!((sol.objective - grid.0).abs() <= 1e-4);
        // the whole budget is spent: every unit of γ̄ removed buys motion
        assert!((sol.allocated_total - 0.05).abs() <= 1e-4);
    }
    // at γ̄ = 0.95 the motion is capped by μ − σ·pwl(0.95), itself above μ − σ·logit_bound(0.95)
    let cap = 0.1 - 0.02 * pwl.eval(0.95);
    assert!((grid.1 - cap).abs() <= 1e-3);
    assert!(cap <= 0.1 - 0.02 * logit_bound(0.95).unwrap());
}

#[test]
fn no_constraints_gives_damped_least_squares() {
    let mut step = one_dof(0.1, 0.02, 0.05);
    step.constraints.clear();
    let pwl = logit_bound_pwl(16).unwrap();
    let (prob, layout) = assemble(&step, &pwl).unwrap();
    assert_eq!(layout.c, 0);
    assert_eq!(prob.base.num_vars(), 2);
    assert_eq!(prob.base.a_in.nrows(), 0);
    let sol = solve_step(&step, &pwl, SolveMode::Convex, &MipSettings::default()).unwrap();
    assert!((sol.delta_q[0] - 10.0 * 0.5 / 11.0).abs() <= 1e-7);
    assert_eq!(sol.allocated_total, 0.0);
}

#[test]
fn zero_sigma_is_the_deterministic_constraint() {
    let pwl = logit_bound_pwl(16).unwrap();
    let sol = solve_step(&one_dof(0.1, 0.0, 0.05), &pwl, SolveMode::Convex, &MipSettings::default()).unwrap();
    assert!((sol.delta_q[0] - 0.1).abs() <= 1e-6);
    // with σ = 0 no risk needs to be allocated
    assert!(sol.allocated_total <= 1e-5);
    // the solution converges as σ shrinks
    let mut prev = f64::INFINITY;
    for s in [1e-2, 1e-3, 1e-4, 1e-5] {
        let dq = solve_step(&one_dof(0.1, s, 0.05), &pwl, SolveMode::Convex, &MipSettings::default()).unwrap().delta_q[0];
        let gap = (dq - 0.1).abs();
        assert!(gap < prev + 1e-9);
        prev = gap;
    }
    assert!(prev <= 1e-4);
}

#[test]
fn inconsistent_dimensions_are_rejected() {
    let pwl = logit_bound_pwl(8).unwrap();
    let mut step = one_dof(0.1, 0.02, 0.05);
    step.constraints[0].gradient.push(0.0);
    assert!(matches!(assemble(&step, &pwl), Err(riskplan::Error::Assembly(_))));
    let mut step = one_dof(0.1, 0.02, 0.05);
    step.budget = 0.0;
    assert!(assemble(&step, &pwl).is_err());
}

fn random_step(rng: &mut ChaCha8Rng) -> StepProblem {
    let n = 3;
    let m = 3;
    let c = rng.random_range(1..6);
    let jac = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let constraints = (0..c)
        .map(|i| {
            let grad: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            ActiveConstraint {
                link: i % 3,
                point: i,
                mu: rng.random_range(0.02..0.3),
                sigma: rng.random_range(0.005..0.04),
                gradient: grad,
            }
        })
        .collect();
    StepProblem {
        q_current: vec![0.0; n],
        q_lower: vec![-3.0; n],
        q_upper: vec![3.0; n],
        jacobian: jac,
        pose_error: DVector::from_fn(m, |_, _| rng.random_range(-0.3..0.3)),
        constraints,
        budget: rng.random_range(0.01..0.2),
        motion: DMatrix::identity(n, n),
        slack: DMatrix::identity(m, m) * 10.0,
        risk_weight: 1.0,
        step_bound: 0.2,
    }
}

/// Fraction of Γ draws violating any linearized constraint `Γ − r + ∇μᵀΔq ≥ 0`.
fn mc_violation(step: &StepProblem, dq: &[f64], draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut bad = 0usize;
    for _ in 0..draws {
        let hit = step.constraints.iter().any(|a| {
            let z: f64 = StandardNormal.sample(rng);
            let gamma = a.mu + a.sigma * z;
            let lin: f64 = a.gradient.iter().zip(dq).map(|(g, d)| g * d).sum();
            gamma - lin < 0.0
        });
        bad += hit as usize;
    }
    bad as f64 / draws as f64
}

#[test]
fn solved_steps_are_sound_under_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pwl = logit_bound_pwl(16).unwrap();
    let mut solved = 0;
    while solved < 20 {
        let step = random_step(&mut rng);
        let sol = solve_step(&step, &pwl, SolveMode::Convex, &MipSettings::default()).unwrap();
        if !sol.is_success() {
            continue;
        }
        solved += 1;
        assert!(sol.allocated_total <= step.budget + 1e-9);
        assert!(sol.gamma.iter().all(|g| g.2 > 0.0 && g.2 <= 0.5));
        let n = 100_000;
        let p = mc_violation(&step, &sol.delta_q, n, &mut rng);
        let se = (sol.allocated_total * (1.0 - sol.allocated_total) / n as f64).sqrt();
        assert!(p <= sol.allocated_total + 3.0 * se, "{p} > {}", sol.allocated_total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn larger_budget_never_raises_the_objective(seed in 0u64..10_000, extra in 0.01f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = random_step(&mut rng);
        let pwl = logit_bound_pwl(16).unwrap();
        let a = solve_step(&step, &pwl, SolveMode::Convex, &MipSettings::default()).unwrap();
        let mut wider = step.clone();
        wider.budget += extra;
        let b = solve_step(&wider, &pwl, SolveMode::Convex, &MipSettings::default()).unwrap();
        if a.is_success() {
            prop_assert!(b.is_success());
            prop_assert!(b.objective <= a.objective + 1e-6 * (1.0 + a.objective.abs()));
        }
    }

    #[test]
    fn allocations_respect_budget_and_domain(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = random_step(&mut rng);
        let pwl = logit_bound_pwl(16).unwrap();
        let sol = solve_step(&step, &pwl, SolveMode::Convex, &MipSettings::default()).unwrap();
        if sol.is_success() {
            prop_assert!(sol.allocated_total <= step.budget + 1e-9);
            for g in &sol.gamma {
                prop_assert!(g.2 > 0.0 && g.2 <= 0.5);
            }
            prop_assert!(sol.delta_q.iter().all(|d| d.abs() <= step.step_bound + 1e-7));
        }
    }
}

fn scene(points: &[(f64, f64)]) -> Scene {
    let pts = points
        .iter()
        .map(|&(x, y)| EnvironmentPoint::new(Point::new(x, y, 0.0), 0.02, 0.02))
        .collect();
    Scene::new(2, pts, Aabb::centered(2, 20.0)).unwrap()
}

#[test]
fn gathering_counts_and_prunes_pairs() {
    let chain = KinematicChain::default_planar();
    let model = ExactGaussianModel { chain: chain.clone(), sigma: 0.02 };
    let q = riskplan::geom::JointVector(vec![0.3, -0.4, 0.5]);
    let near = scene(&[(0.5, 0.3), (0.6, -0.2), (0.2, 0.5), (-0.3, 0.1)]);
    assert_eq!(gather_constraints(&model, &near, &q, None).unwrap().len(), 12);
    let far = scene(&[(10.0, 0.0)]);
    assert!(gather_constraints(&model, &far, &q, Some(0.5)).unwrap().is_empty());
    assert_eq!(gather_constraints(&model, &far, &q, None).unwrap().len(), 3);
    let c = &gather_constraints(&model, &near, &q, None).unwrap()[0];
    assert!((c.mu - (chain.exact_link_point_distance(&q, &Point::new(0.5, 0.3, 0.0)).unwrap()[0] - 0.02)).abs() < 1e-12);
}

#[test]
fn pruning_does_not_change_the_step() {
    let chain = KinematicChain::default_planar();
    let model = ExactGaussianModel { chain: chain.clone(), sigma: 0.02 };
    let q = riskplan::geom::JointVector(vec![0.3, -0.4, 0.5]);
    // one point close to the arm, others well beyond the prune distance
    let sc = scene(&[(0.75, 0.45), (3.0, 3.0), (-3.0, 2.5)]);
    let target = chain.pose_vector(&riskplan::geom::JointVector(vec![0.5, -0.2, 0.3]), PoseMode::Full).unwrap();
    let input = CcikInput { chain: &chain, model: &model, scene: &sc, q_current: &q, target: &target, budget: 0.05 };
    let pruned_cfg = CcikConfig::default();
    let full_cfg = CcikConfig { prune_distance: None, ..CcikConfig::default() };
    let pwl = default_pwl(&pruned_cfg).unwrap();
    let a = ccikopt(&input, &pruned_cfg, &pwl).unwrap();
    let b = ccikopt(&input, &full_cfg, &pwl).unwrap();
    assert!(a.active < b.active);
    assert!(a.is_success() && b.is_success());
    for (x, y) in a.delta_q.iter().zip(&b.delta_q) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn empty_scene_step_is_unconstrained() {
    let chain = KinematicChain::default_planar();
    let model = ExactGaussianModel { chain: chain.clone(), sigma: 0.02 };
    let q = riskplan::geom::JointVector(vec![0.3, -0.4, 0.5]);
    let sc = Scene::new(2, vec![], Aabb::centered(2, 2.0)).unwrap();
    let target = chain.pose_vector(&riskplan::geom::JointVector(vec![0.35, -0.45, 0.55]), PoseMode::Full).unwrap();
    let input = CcikInput { chain: &chain, model: &model, scene: &sc, q_current: &q, target: &target, budget: 0.05 };
    let cfg = CcikConfig::default();
    let sol = ccikopt(&input, &cfg, &default_pwl(&cfg).unwrap()).unwrap();
    assert!(sol.is_success());
    assert_eq!(sol.allocated_total, 0.0);
    // closed form (JᵀDJ + Q)⁻¹ JᵀD e
    let j = chain.jacobian(&q, PoseMode::Full).unwrap();
    let e = &target - chain.pose_vector(&q, PoseMode::Full).unwrap();
    let d = DMatrix::identity(3, 3) * 10.0;
    let lhs = j.transpose() * &d * &j + DMatrix::identity(3, 3);
    let dq = lhs.lu().solve(&(j.transpose() * &d * e)).unwrap();
    for i in 0..3 {
        assert!((sol.delta_q[i] - dq[i]).abs() <= 1e-6);
    }
}
