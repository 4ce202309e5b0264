//! Monte-Carlo risk against brute-force and analytic oracles, baselines and
//! the benchmark sweep.

use riskplan::env::{
    generate_problems, nominal_tabletop, sample_scene_realization, Aabb, EnvironmentPoint, GenerationSettings,
    GoalRegion, PerturbationSpec, Problem, Scene, TabletopConfig,
};
use riskplan::eval::{
    densify, inflate_baseline, mc_path_risk, path_metrics, risk_cdf_svg, run_benchmark, sign_test, summary_markdown,
    wilson_interval, BenchConfig, Method, REPORT_HEADER,
};
use riskplan::geom::{JointLimits, JointVector, KinematicChain, Point, PoseMode};
use riskplan::planner::{hierarchical_plan, plan_candidate, PlannerConfig};
use riskplan::rng::stream;
use riskplan::sdf::ExactGaussianModel;
use statrs::distribution::{ContinuousCDF, DiscreteCDF, Normal};

fn jv(v: &[f64]) -> JointVector {
    JointVector(v.to_vec())
}

fn scene(points: Vec<EnvironmentPoint>) -> Scene {
    Scene::new(2, points, Aabb::centered(2, 2.0)).unwrap()
}

fn noisy(x: f64, y: f64, r: f64, sigma: f64) -> EnvironmentPoint {
    EnvironmentPoint::new(Point::new(x, y, 0.0), r, sigma)
}

#[test]
fn wilson_matches_closed_forms() {
    // k = 0: upper end is z² / (n + z²)
    let z2 = 1.959_963_984_540_054f64.powi(2);
    let (lo, hi) = wilson_interval(0, 100);
    assert_eq!(lo, 0.0);
    assert!((hi - z2 / (100.0 + z2)).abs() < 1e-12);
    // large n approaches the normal interval
    let (lo, hi) = wilson_interval(250_000, 1_000_000);
    let half = 1.959_963_984_540_054 * (0.25f64 * 0.75 / 1e6).sqrt();
    assert!((lo - (0.25 - half)).abs() < 1e-6 && (hi - (0.25 + half)).abs() < 1e-6);
}

#[test]
fn sign_test_matches_the_binomial_tail() {
    let (w, l, p) = sign_test(&vec![(0.0, 1.0); 10]);
    assert_eq!((w, l), (10, 0));
    assert!((p - 0.5f64.powi(10)).abs() < 1e-15);
    let mut pairs = vec![(0.0, 1.0); 21];
    pairs.extend(vec![(1.0, 0.0); 9]);
    pairs.push((0.5, 0.5));
    let (_, _, p) = sign_test(&pairs);
    let oracle = 1.0 - statrs::distribution::Binomial::new(0.5, 30).unwrap().cdf(20);
    assert!((p - oracle).abs() < 1e-12, "{p} vs {oracle}");
}

#[test]
fn empty_scene_has_zero_risk() {
    let chain = KinematicChain::default_planar();
    let est = mc_path_risk(&chain, &scene(vec![]), &[jv(&[0.0, 0.0, 0.0]), jv(&[1.0, 0.5, 0.0])], 500, 1, 1).unwrap();
    assert_eq!(est.collisions, 0);
    assert_eq!(est.ci_low, 0.0);
    assert!(est.ci_high > 0.0 && est.ci_high < 0.01);
}

#[test]
fn point_on_the_surface_is_a_coin_flip() {
    let chain = KinematicChain::default_planar();
    // a zero-radius point on the top surface of the first link
    let sc = scene(vec![noisy(0.25, 0.05, 0.0, 0.01)]);
    let est = mc_path_risk(&chain, &sc, &[jv(&[0.0, 0.0, 0.0])], 20_000, 3, 1).unwrap();
    assert!((est.risk - 0.5).abs() <= 3.0 * est.standard_error(), "{}", est.risk);
}

#[test]
fn static_risk_matches_the_gaussian_tail() {
    let chain = KinematicChain::default_planar();
    let (sigma, r) = (0.02, 0.03);
    for d in [0.02, 0.05, 0.09] {
        // sphere above the middle of link 0, clear of the other links
        let sc = scene(vec![noisy(0.25, 0.05 + r + d, r, sigma)]);
        let est = mc_path_risk(&chain, &sc, &[jv(&[0.0, 0.0, 0.0])], 20_000, 4, 1).unwrap();
        let tail = Normal::new(0.0, 1.0).unwrap().cdf(-d / sigma);
        let se = (tail * (1.0 - tail) / 20_000.0).sqrt();
        assert!((est.risk - tail).abs() <= 3.0 * se.max(1e-4), "d {d}: {} vs {tail}", est.risk);
    }
}

#[test]
fn pruned_estimate_equals_brute_force() {
    let chain = KinematicChain::default_planar();
    let sc = scene(vec![
        noisy(0.9, 0.16, 0.03, 0.03),
        noisy(1.25, -0.1, 0.02, 0.03),
        noisy(-0.5, 0.5, 0.05, 0.02),
        EnvironmentPoint::new(Point::new(0.0, -0.8, 0.0), 0.05, 0.0),
    ]);
    let path = [jv(&[0.0, 0.0, 0.0]), jv(&[0.05, -0.05, 0.0]), jv(&[0.1, 0.0, 0.0])];
    let samples = 300;
    let est = mc_path_risk(&chain, &sc, &path, samples, 11, 1).unwrap();
    let dense = densify(&path, 1e-3);
    let mut hits = 0;
    for s in 0..samples {
        let real = sample_scene_realization(&sc, &mut stream(11, s as u64));
        hits += dense.iter().any(|q| real.in_collision(&chain, &chain.forward_kinematics(q).unwrap())) as usize;
    }
    assert_eq!(est.collisions, hits);
    assert!(hits > 0 && hits < samples, "{hits}");
    // and the answer does not depend on the worker count
    assert_eq!(mc_path_risk(&chain, &sc, &path, samples, 11, 3).unwrap(), est);
}

#[test]
fn half_samples_agree_within_their_intervals() {
    let chain = KinematicChain::default_planar();
    let sc = scene(vec![noisy(0.25, 0.12, 0.03, 0.02)]);
    let path = [jv(&[0.0, 0.0, 0.0]), jv(&[0.1, 0.0, 0.0])];
    let a = mc_path_risk(&chain, &sc, &path, 5000, 100, 1).unwrap();
    let b = mc_path_risk(&chain, &sc, &path, 5000, 200, 1).unwrap();
    let combined = (a.ci_high - a.ci_low) / 2.0 + (b.ci_high - b.ci_low) / 2.0;
    assert!((a.risk - b.risk).abs() <= combined);
}

#[test]
fn fixed_geometry_contact_is_certain() {
    let chain = KinematicChain::default_planar();
    let sc = scene(vec![EnvironmentPoint::new(Point::new(0.25, 0.0, 0.0), 0.01, 0.0)]);
    let est = mc_path_risk(&chain, &sc, &[jv(&[0.0, 0.0, 0.0])], 100, 0, 1).unwrap();
    assert_eq!(est.risk, 1.0);
}

#[test]
fn metrics_follow_chord_sums() {
    let chain = KinematicChain::default_planar();
    let q = jv(&[0.3, 0.2, 0.1]);
    let m = path_metrics(&[q.clone(), q.clone()], &chain).unwrap();
    assert_eq!((m.path_length_rad, m.ee_displacement_m), (0.0, 0.0));

    let one = KinematicChain::planar(&[1.0], &[0.05], JointLimits { lower: vec![-4.0], upper: vec![4.0] }).unwrap();
    for n in [1usize, 2, 8, 1000] {
        let wps: Vec<JointVector> = (0..=n).map(|i| jv(&[std::f64::consts::PI * i as f64 / n as f64])).collect();
        let m = path_metrics(&wps, &one).unwrap();
        let chord = n as f64 * 2.0 * (std::f64::consts::PI / (2.0 * n as f64)).sin();
        assert!((m.path_length_rad - std::f64::consts::PI).abs() < 1e-9);
        assert!((m.ee_displacement_m - chord).abs() < 1e-9);
    }
    // additive under concatenation
    let a = [jv(&[0.0, 0.0, 0.0]), jv(&[0.4, 0.1, -0.2])];
    let b = [jv(&[0.4, 0.1, -0.2]), jv(&[0.9, -0.3, 0.5])];
    let ab = [a[0].clone(), a[1].clone(), b[1].clone()];
    let (ma, mb, mab) = (path_metrics(&a, &chain).unwrap(), path_metrics(&b, &chain).unwrap(), path_metrics(&ab, &chain).unwrap());
    assert!((ma.path_length_rad + mb.path_length_rad - mab.path_length_rad).abs() < 1e-12);
    assert!((ma.ee_displacement_m + mb.ee_displacement_m - mab.ee_displacement_m).abs() < 1e-12);
}

fn stretched_goal_problem(points: Vec<EnvironmentPoint>, pos_tol: f64) -> Problem {
    let chain = KinematicChain::default_planar();
    let goal_q = jv(&[0.0, 0.0, 0.0]);
    Problem {
        id: 0,
        scene: scene(points),
        q_start: jv(&[0.5, 0.0, 0.0]),
        goal: GoalRegion {
            dim: 2,
            pose: chain.end_effector(&goal_q).unwrap(),
            pos_tol,
            ang_tol: 0.1,
            mode: PoseMode::Full,
        },
        q_goal: goal_q,
    }
}

#[test]
fn inflation_closes_a_tight_gap() {
    let chain = KinematicChain::default_planar();
    // 2.5 cm beyond the stretched tip: open up to 1.5× the radius, closed at 1.6×
    let p = stretched_goal_problem(vec![noisy(1.325, 0.0, 0.05, 0.02)], 0.002);
    let config = PlannerConfig { attempts: 3, ..PlannerConfig::default() };
    assert!(inflate_baseline(&chain, &p, 0.4, &config).is_ok());
    assert!(matches!(inflate_baseline(&chain, &p, 0.6, &config), Err(riskplan::Error::Planning(_))));
    let zero = inflate_baseline(&chain, &p, 0.0, &config).unwrap();
    let cand = plan_candidate(&chain, &p, &p.scene, &config).unwrap();
    assert_eq!(zero.waypoints, cand.path.waypoints);
}

#[test]
fn safe_path_avoids_an_obstacle_straddling_the_candidate() {
    let chain = KinematicChain::default_planar();
    // noisy sphere 1 cm past the tip's sweep, halfway along the motion
    let mid = 0.25f64;
    let rr = 1.25 + 0.03 + 0.01;
    let p = stretched_goal_problem(vec![noisy(rr * mid.cos(), rr * mid.sin(), 0.03, 0.01)], 0.02);
    let model = ExactGaussianModel { chain: chain.clone(), sigma: 0.01 };
    // a heavier risk price keeps the greedy steps from draining the budget
    // before the closest approach
    let mut config = PlannerConfig::default();
    config.ccik.risk_weight = 20.0;
    let out = hierarchical_plan(&chain, &p, &model, &config).unwrap();
    assert!(out.is_success(), "{}", out.log_lines());
    let bound = out.ledger.bound();
    let safe = mc_path_risk(&chain, &p.scene, &out.safe.waypoints, 5000, 9, 1).unwrap();
    let cand = mc_path_risk(&chain, &p.scene, &out.candidate.waypoints, 5000, 9, 1).unwrap();
    assert!(safe.risk <= bound + 3.0 * safe.standard_error(), "{} vs bound {bound}", safe.risk);
    assert!(cand.risk > safe.risk, "candidate {} safe {}", cand.risk, safe.risk);
    assert!(cand.risk > 0.1);
}

#[test]
fn benchmark_rows_are_complete_and_reproducible() {
    let chain = KinematicChain::default_planar();
    let nominal = nominal_tabletop(&TabletopConfig::default()).unwrap();
    let problems = generate_problems(&chain, &nominal, &PerturbationSpec::standard(3), 2, &GenerationSettings::default()).unwrap();
    let model = ExactGaussianModel { chain: chain.clone(), sigma: 0.02 };
    let config = BenchConfig { samples: 200, ..BenchConfig::default() };
    let bench = run_benchmark(&chain, &problems, &model, &config).unwrap();
    assert_eq!(bench.rows.len(), 2 * 5);
    let csv = bench.to_csv();
    assert!(csv.starts_with(REPORT_HEADER));
    assert_eq!(csv.lines().count(), 11);
    for r in bench.rows_of(Method::Proposed) {
        if r.success {
            assert!(r.risk_bound.is_some() && r.initial_risk.is_some());
        }
    }
    let again = run_benchmark(&chain, &problems, &model, &BenchConfig { jobs: 2, ..config.clone() }).unwrap();
    assert_eq!(again.to_csv(), csv);
    assert!(risk_cdf_svg(&bench).starts_with("<svg"));
    assert!(summary_markdown(&bench).contains("proposed"));
    assert_eq!(bench.timings_csv().lines().count(), 11);
}
