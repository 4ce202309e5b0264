//! QP and branch-and-bound solvers against enumeration oracles.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskplan::riskopt::{
    build_secant_pwl, logit_bound_pwl, solve_convex, solve_mip, solve_qp, MipProblem, MipSettings,
    PwlApprox, PwlConstraint, QpProblem, QpSettings, Spacing,
};

fn random_qp(seed: u64, n: usize, m: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut qp = QpProblem::new(n);
    qp.p = &r * r.transpose() + DMatrix::identity(n, n) * 0.05;
    qp.q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    qp.a_in = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    qp.b_in = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    qp
}

/// Minimum objective over every primal-feasible KKT point of every active
/// subset of the inequalities. The optimum is one of them.
fn active_set_oracle(qp: &QpProblem) -> Option<f64> {
    let n = qp.num_vars();
    let m = qp.a_in.nrows();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&qp.q));
        for (r, &i) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = qp.a_in[(i, j)];
                kkt[(j, n + r)] = qp.a_in[(i, j)];
            }
            rhs[n + r] = qp.b_in[i];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let slack = &qp.a_in * &x - &qp.b_in;
        if slack.max() <= 1e-9 {
            let f = qp.objective(&x);
            best = Some(best.map_or(f, |b: f64| b.min(f)));
        }
    }
    best
}

#[test]
fn random_qps_match_active_set_enumeration() {
    for seed in 0..40 {
        let qp = random_qp(seed, 10, 5);
        let oracle = active_set_oracle(&qp).expect("random instance should be feasible");
        let r = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert!(r.is_optimal(), "seed {seed}: {:?}", r.status);
        assert!(r.max_violation <= 1e-6, "seed {seed}");
        assert!((r.objective - oracle).abs() <= 1e-5, "seed {seed}: {} vs {oracle}", r.objective);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn optimal_results_are_feasible_and_not_worse_than_oracle(seed in 1000u64..100_000, n in 2usize..8, m in 1usize..7) {
        let qp = random_qp(seed, n, m);
        let r = solve_qp(&qp, &QpSettings::default()).unwrap();
        if r.is_optimal() {
            prop_assert!(r.max_violation <= 1e-6);
            if let Some(oracle) = active_set_oracle(&qp) {
                prop_assert!(r.objective <= oracle + 1e-5);
            }
        }
    }
}

/// Minimum over all segment assignments, each a convex QP with the chosen
/// piece as a row and the PWL variable boxed to its segment.
fn segment_enumeration(prob: &MipProblem) -> Option<f64> {
    let sizes: Vec<usize> = prob.constraints.iter().map(|c| c.pwl.segments()).collect();
    let total: usize = sizes.iter().product();
    let mut best: Option<f64> = None;
    for code in 0..total {
        let mut rest = code;
        let mut qp = prob.base.clone();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (c, &size) in prob.constraints.iter().zip(&sizes) {
            let s = rest % size;
            rest /= size;
            let bp = c.pwl.breakpoints();
            qp.lower[c.var] = qp.lower[c.var].max(bp[s]);
            qp.upper[c.var] = qp.upper[c.var].min(bp[s + 1]);
            let piece = c.pwl.pieces()[s];
            let mut row = c.row.clone();
            row[c.var] += c.scale * piece.slope;
            rows.push(row);
            rhs.push(c.rhs - c.scale * piece.intercept);
        }
        if qp.lower.iter().zip(qp.upper.iter()).any(|(l, u)| l > u) {
            continue;
        }
        let m = DMatrix::from_fn(rows.len(), qp.num_vars(), |i, j| rows[i][j]);
        qp.push_inequalities(&m, &DVector::from_vec(rhs));
        let r = solve_qp(&qp, &QpSettings::default()).unwrap();
        if r.is_optimal() {
            best = Some(best.map_or(r.objective, |b: f64| b.min(r.objective)));
        }
    }
    best
}

fn nonconvex_toy(seed: u64) -> MipProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let mut base = QpProblem::new(n);
    base.p = DMatrix::identity(n, n) * 2.0;
    base.q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
    let constraints = (0..2)
        .map(|k| {
            let values: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            PwlConstraint {
                row: DVector::from_fn(n, |_, _| rng.random_range(0.0..0.5)),
                var: k,
                scale: rng.random_range(0.5..2.0),
                rhs: 1.0,
                pwl: PwlApprox::from_values(vec![0.0, 0.3, 0.5, 0.8, 1.0], values).unwrap(),
            }
        })
        .collect();
    MipProblem { base, constraints }
}

#[test]
fn nonconvex_mip_matches_segment_enumeration() {
    let mut nonconvex_seen = 0;
    for seed in 0..25 {
        let prob = nonconvex_toy(seed);
        if prob.constraints.iter().any(|c| !c.pwl.is_convex()) {
            nonconvex_seen += 1;
        }
        let oracle = segment_enumeration(&prob);
        let r = solve_mip(&prob, &MipSettings::default()).unwrap();
        match oracle {
            Some(best) => {
                assert!(r.solution.is_optimal(), "seed {seed}");
                assert!(r.solution.max_violation <= 1e-6, "seed {seed}");
                assert!((r.solution.objective - best).abs() <= 1e-5, "seed {seed}: {} vs {best}", r.solution.objective);
            }
            None => assert!(!r.solution.is_optimal(), "seed {seed}"),
        }
    }
    assert!(nonconvex_seen > 10);
}

#[test]
fn convex_and_mip_modes_agree_on_logit_constraints() {
    let pwl = logit_bound_pwl(16).unwrap();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // x = [u; g1; g2]: pull u upward against two risk-weighted rows and a
        // budget on the risk variables.
        let mut base = QpProblem::new(3);
        base.p[(0, 0)] = 2.0;
        base.q[0] = -2.0 * rng.random_range(0.5..1.5);
        base.q[1] = -0.1;
        base.q[2] = -0.1;
        base.a_in = DMatrix::from_row_slice(1, 3, &[0.0, -1.0, -1.0]);
        base.b_in = DVector::from_element(1, -1.95);
        let constraints = (0..2)
            .map(|k| {
                let mut row = DVector::zeros(3);
                row[0] = rng.random_range(0.5..1.5);
                PwlConstraint {
                    row,
                    var: 1 + k,
                    scale: rng.random_range(0.01..0.05),
                    rhs: rng.random_range(0.3..0.8),
                    pwl: pwl.clone(),
                }
            })
            .collect();
        let prob = MipProblem { base, constraints };
        let cvx = solve_convex(&prob, &QpSettings::default()).unwrap();
        let mip = solve_mip(&prob, &MipSettings::default()).unwrap();
        assert!(cvx.solution.is_optimal() && mip.solution.is_optimal(), "seed {seed}: {:?} {:?} {:?}", cvx.solution.status, mip.solution.status, cvx.solution.x);
        assert!(
            (cvx.solution.objective - mip.solution.objective).abs() <= 1e-5,
            "seed {seed}: {} vs {}",
            cvx.solution.objective,
            mip.solution.objective
        );
    }
}

#[test]
fn secant_refinement_tightens_logit_gap() {
    let f = |t: f64| riskplan::riskopt::logit_bound(t).unwrap();
    let g8 = build_secant_pwl(f, 0.5, 0.999, 8, Spacing::Uniform).unwrap().max_gap(f);
    let g16 = build_secant_pwl(f, 0.5, 0.999, 16, Spacing::Uniform).unwrap().max_gap(f);
    assert!(g16 <= g8);
}
