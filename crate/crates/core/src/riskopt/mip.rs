//! QPs with piecewise-affine terms, solved in convex mode (one linear row per
//! piece) or by branch-and-bound over segment selection.
//!
//! Each PWL constraint reads `row · x + scale · pwl(x[var]) ≤ rhs` with
//! `scale ≥ 0`, where `pwl` is the interpolant (the value on the segment
//! containing `x[var]`). When `pwl` is convex the interpolant is the maximum
//! of its pieces and convex mode is exact. Branch-and-bound handles any PWL:
//! a node restricts each constraint to a range of segments and relaxes the
//! interpolant by its lower convex envelope over that range.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::pwl::{AffinePiece, PwlApprox};
use super::qp::{solve_qp, QpProblem, QpSettings, SolveResult, SolveStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PwlConstraint {
    pub row: DVector<f64>,
    pub var: usize,
    pub scale: f64,
    pub rhs: f64,
    pub pwl: PwlApprox,
}

impl PwlConstraint {
    /// `row · x + scale · pwl(x[var]) - rhs`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        self.row.dot(x) + self.scale * self.pwl.eval(x[self.var]) - self.rhs
    }

    fn push_rows(&self, pieces: &[AffinePiece], rows: &mut Vec<DVector<f64>>, rhs: &mut Vec<f64>) {
        for piece in pieces {
            let mut r = self.row.clone();
            r[self.var] += self.scale * piece.slope;
            rows.push(r);
            rhs.push(self.rhs - self.scale * piece.intercept);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipProblem {
    pub base: QpProblem,
    pub constraints: Vec<PwlConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MipSettings {
    pub qp: QpSettings,
    pub node_limit: usize,
    /// Relative optimality gap at which nodes are pruned.
    pub gap_tol: f64,
}

impl Default for MipSettings {
    fn default() -> Self {
        Self {
            qp: QpSettings::default(),
            node_limit: 10_000,
            gap_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipResult {
    pub solution: SolveResult,
    pub nodes: usize,
    /// Segment containing `x[var]` for each PWL constraint.
    pub segments: Vec<usize>,
}

impl MipProblem {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let n = self.base.num_vars();
        for (i, c) in self.constraints.iter().enumerate() {
            if c.row.len() != n || c.var >= n {
                return Err(Error::Argument(format!("PWL constraint {i} has wrong dimensions")));
            }
            if !(c.scale >= 0.0) || !c.scale.is_finite() || !c.rhs.is_finite() {
                return Err(Error::Argument(format!(
                    "PWL constraint {i} needs a finite scale ≥ 0 and finite rhs"
                )));
            }
        }
        Ok(())
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = self.base.max_violation(x);
        for c in &self.constraints {
            let t = x[c.var];
            worst = worst
                .max(c.residual(x))
                .max(c.pwl.lo() - t)
                .max(t - c.pwl.hi());
        }
        worst
    }

    fn qp_with(&self, ranges: &[(usize, usize)], envelope: bool) -> QpProblem {
        let mut qp = self.base.clone();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (c, &(first, last)) in self.constraints.iter().zip(ranges) {
            let bp = c.pwl.breakpoints();
            qp.lower[c.var] = qp.lower[c.var].max(bp[first]);
            qp.upper[c.var] = qp.upper[c.var].min(bp[last + 1]);
            if envelope {
                c.push_rows(&c.pwl.convex_envelope(first, last), &mut rows, &mut rhs);
            } else {
                c.push_rows(&c.pwl.pieces()[first..=last], &mut rows, &mut rhs);
            }
        }
        if !rows.is_empty() {
            let n = qp.num_vars();
            let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
            qp.push_inequalities(&m, &DVector::from_vec(rhs));
        }
        qp
    }

    /// The linear program obtained by keeping every affine piece as a row.
    pub fn convex_qp(&self) -> QpProblem {
        let ranges: Vec<_> = self.constraints.iter().map(|c| (0, c.pwl.segments() - 1)).collect();
        self.qp_with(&ranges, false)
    }

    fn segments_of(&self, x: &DVector<f64>) -> Vec<usize> {
        self.constraints.iter().map(|c| c.pwl.segment_of(x[c.var])).collect()
    }
}

/// Convex mode: exact for convex PWLs, conservative otherwise.
pub fn solve_convex(prob: &MipProblem, settings: &QpSettings) -> Result<MipResult> {
    prob.validate()?;
    let mut solution = solve_qp(&prob.convex_qp(), settings)?;
    solution.max_violation = prob.max_violation(&solution.x);
    Ok(MipResult {
        segments: prob.segments_of(&solution.x),
        solution,
        nodes: 1,
    })
}

struct Node {
    bound: f64,
    order: usize,
    ranges: Vec<(usize, usize)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Reversed so the heap pops the lowest bound, then the oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// Best-first branch-and-bound over segment ranges.
pub fn solve_mip(prob: &MipProblem, settings: &MipSettings) -> Result<MipResult> {
    prob.validate()?;
    let n = prob.base.num_vars();
    let feas_tol = settings.qp.feas_tol;
    let root: Vec<_> = prob.constraints.iter().map(|c| (0, c.pwl.segments() - 1)).collect();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        order: 0,
        ranges: root,
    });
    let mut next_order = 1;
    let mut incumbent: Option<SolveResult> = None;
    let mut nodes = 0;
    let mut inexact = false;
    let mut last_relaxation: Option<SolveResult> = None;

    let prune_level = |inc: &Option<SolveResult>| match inc {
        Some(r) => r.objective - settings.gap_tol * r.objective.abs().max(1.0),
        None => f64::INFINITY,
    };

    while let Some(node) = heap.pop() {
        if node.bound >= prune_level(&incumbent) {
            continue;
        }
        if nodes >= settings.node_limit {
            let mut solution = incumbent.or(last_relaxation).unwrap_or_else(|| SolveResult {
                status: SolveStatus::IterationLimit,
                x: DVector::zeros(n),
                objective: f64::NAN,
                max_violation: f64::INFINITY,
                iterations: 0,
                polished: false,
            });
            solution.status = SolveStatus::IterationLimit;
            solution.max_violation = prob.max_violation(&solution.x);
            return Ok(MipResult {
                segments: prob.segments_of(&solution.x),
                solution,
                nodes,
            });
        }
        nodes += 1;
        let relax = solve_qp(&prob.qp_with(&node.ranges, true), &settings.qp)?;
        match relax.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                return Ok(MipResult {
                    segments: prob.segments_of(&relax.x),
                    solution: relax,
                    nodes,
                })
            }
            SolveStatus::IterationLimit => {
                inexact = true;
                continue;
            }
        }
        if relax.objective >= prune_level(&incumbent) {
            continue;
        }
        // Most violated constraint whose range still spans several segments.
        let mut branch: Option<(usize, f64)> = None;
        for (i, c) in prob.constraints.iter().enumerate() {
            let (first, last) = node.ranges[i];
            let v = c.residual(&relax.x);
            if first < last && v > feas_tol && branch.map_or(true, |(_, w)| v > w) {
                branch = Some((i, v));
            }
        }
        match branch {
            None => {
                let mut sol = relax.clone();
                sol.max_violation = prob.max_violation(&sol.x);
                if sol.max_violation <= feas_tol {
                    incumbent = Some(sol);
                } else {
                    inexact = true;
                }
            }
            Some((i, _)) => {
                let c = &prob.constraints[i];
                let (first, last) = node.ranges[i];
                let bp = c.pwl.breakpoints();
                let t = relax.x[c.var];
                let split = (first + 1..=last)
                    .min_by(|&a, &b| (bp[a] - t).abs().total_cmp(&(bp[b] - t).abs()))
                    .unwrap();
                for range in [(first, split - 1), (split, last)] {
                    let mut ranges = node.ranges.clone();
                    ranges[i] = range;
                    heap.push(Node {
                        bound: relax.objective,
                        order: next_order,
                        ranges,
                    });
                    next_order += 1;
                }
            }
        }
        last_relaxation = Some(relax);
    }

    let solution = match incumbent {
        Some(mut s) => {
            if inexact {
                s.status = SolveStatus::IterationLimit;
            }
            s
        }
        None => SolveResult {
            status: if inexact {
                SolveStatus::IterationLimit
            } else {
                SolveStatus::Infeasible
            },
            x: last_relaxation.map(|r| r.x).unwrap_or_else(|| DVector::zeros(n)),
            objective: f64::NAN,
            max_violation: f64::INFINITY,
            iterations: 0,
            polished: false,
        },
    };
    Ok(MipResult {
        segments: prob.segments_of(&solution.x),
        solution,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riskopt::pwl::{build_secant_pwl, Spacing};

    fn single(pwl: PwlApprox) -> MipProblem {
        // min (x0 - 2)² + x1  s.t.  x0 - x1 + 0.5 pwl(x1) ≤ 0.3
        let mut base = QpProblem::new(2);
        base.p[(0, 0)] = 2.0;
        base.q[0] = -4.0;
        base.q[1] = 1.0;
        MipProblem {
            base,
            constraints: vec![PwlConstraint {
                row: DVector::from_vec(vec![1.0, -1.0]),
                var: 1,
                scale: 0.5,
                rhs: 0.3,
                pwl,
            }],
        }
    }

    #[test]
    fn one_segment_matches_plain_qp() {
        let pwl = PwlApprox::from_values(vec![0.0, 1.0], vec![0.2, 1.0]).unwrap();
        let prob = single(pwl);
        let mip = solve_mip(&prob, &MipSettings::default()).unwrap();
        let qp = solve_qp(&prob.convex_qp(), &QpSettings::default()).unwrap();
        assert!(mip.solution.is_optimal() && qp.is_optimal());
        assert_close!(mip.solution.objective, qp.objective, 1e-9);
    }

    #[test]
    fn convex_two_segments_agree() {
        let pwl = build_secant_pwl(|t| t * t, 0.0, 1.0, 2, Spacing::Uniform).unwrap();
        let prob = single(pwl);
        let mip = solve_mip(&prob, &MipSettings::default()).unwrap();
        let cvx = solve_convex(&prob, &QpSettings::default()).unwrap();
        assert!(mip.solution.is_optimal() && cvx.solution.is_optimal());
        assert_close!(mip.solution.objective, cvx.solution.objective, 1e-6);
        assert_eq!(mip.nodes, 1);
    }

    fn zigzag() -> MipProblem {
        // min (x - 0.5)² s.t. pwl(x) ≤ 0.5, pwl peaking at 0, 0.5 and 1
        let mut base = QpProblem::new(1);
        base.p[(0, 0)] = 2.0;
        base.q[0] = -1.0;
        let pwl =
            PwlApprox::from_values(vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        MipProblem {
            base,
            constraints: vec![PwlConstraint {
                row: DVector::zeros(1),
                var: 0,
                scale: 1.0,
                rhs: 0.5,
                pwl,
            }],
        }
    }

    #[test]
    fn nonconvex_toy_branches_to_the_right_optimum() {
        let r = solve_mip(&zigzag(), &MipSettings::default()).unwrap();
        assert!(r.solution.is_optimal());
        assert!(r.nodes > 1);
        assert_close!(r.solution.objective, 0.125f64.powi(2) - 0.25, 1e-7);
        assert_close!((r.solution.x[0] - 0.5).abs(), 0.125, 1e-6);
    }

    #[test]
    fn node_limit_reports_incumbent_status() {
        let settings = MipSettings {
            node_limit: 1,
            ..Default::default()
        };
        let r = solve_mip(&zigzag(), &settings).unwrap();
        assert_eq!(r.solution.status, SolveStatus::IterationLimit);
    }

    #[test]
    fn rejects_negative_scale() {
        let pwl = PwlApprox::from_values(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let mut prob = single(pwl);
        prob.constraints[0].scale = -1.0;
        assert!(solve_mip(&prob, &MipSettings::default()).is_err());
    }
}
