//! Dense convex QP solver.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  A_eq x = b_eq,   A_in x ≤ b_in,   lower ≤ x ≤ upper
//! ```
//!
//! with a dense primal-dual interior-point iteration (Mehrotra
//! predictor-corrector) on row-normalized data. Once the iterate is close,
//! the active set it implies is polished by solving the equality-constrained
//! KKT system directly; a polished point that passes feasibility,
//! stationarity and multiplier-sign checks is returned as the optimum. When
//! the iteration fails, a feasibility phase decides between infeasible and
//! iteration-limit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with zero cost over `n` variables.
    pub fn new(n: usize) -> Self {
        Self {
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |what: &str| Err(Error::Argument(format!("QP {what} has inconsistent dimensions")));
        if self.p.shape() != (n, n) {
            return bad("cost matrix");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad("equality system");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return bad("inequality system");
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bounds");
        }
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > 1e-9 * self.p.amax().max(1.0) {
            return Err(Error::Argument("QP cost matrix is not symmetric".into()));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        let finite_v = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&self.p)
            || !finite_v(&self.q)
            || !finite(&self.a_eq)
            || !finite_v(&self.b_eq)
            || !finite(&self.a_in)
            || !finite_v(&self.b_in)
        {
            return Err(Error::Argument("QP data must be finite".into()));
        }
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| l.is_nan() || u.is_nan()) {
            return Err(Error::Argument("QP bounds must not be NaN".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest violation of any equality, inequality or bound.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.a_eq.nrows() > 0 {
            worst = worst.max((&self.a_eq * x - &self.b_eq).amax());
        }
        if self.a_in.nrows() > 0 {
            let r = &self.a_in * x - &self.b_in;
            worst = worst.max(r.max().max(0.0));
        }
        for i in 0..x.len() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }

    /// Append inequality rows `rows x ≤ rhs`.
    pub fn push_inequalities(&mut self, rows: &DMatrix<f64>, rhs: &DVector<f64>) {
        self.a_in = vstack(&self.a_in, rows);
        self.b_in = vstack_v(&self.b_in, rhs);
    }
}

pub(crate) fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols().max(b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), n);
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

pub(crate) fn vstack_v(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Objective unbounded below on the feasible set.
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub polished: bool,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    /// Primal feasibility tolerance on every constraint.
    pub feas_tol: f64,
    /// Relative stationarity tolerance.
    pub opt_tol: f64,
    /// Interior-point iteration cap.
    pub max_iter: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            opt_tol: 1e-6,
            max_iter: 200,
            polish: true,
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// `A x = b`, `G x ≤ h` with every row scaled to unit ∞-norm.
struct Form {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
}

fn normalize_rows(m: &mut DMatrix<f64>, rhs: &mut DVector<f64>) {
    for i in 0..m.nrows() {
        let norm = m.row(i).amax();
        if norm > 0.0 {
            m.row_mut(i).unscale_mut(norm);
            rhs[i] /= norm;
        }
    }
}

impl Form {
    fn of(prob: &QpProblem) -> Self {
        let n = prob.num_vars();
        let uppers: Vec<usize> = (0..n).filter(|&j| prob.upper[j].is_finite()).collect();
        let lowers: Vec<usize> = (0..n).filter(|&j| prob.lower[j].is_finite()).collect();
        let m_in = prob.a_in.nrows();
        let m = m_in + uppers.len() + lowers.len();
        let mut g = DMatrix::zeros(m, n);
        let mut h = DVector::zeros(m);
        g.rows_mut(0, m_in).copy_from(&prob.a_in);
        h.rows_mut(0, m_in).copy_from(&prob.b_in);
        for (r, &j) in uppers.iter().enumerate() {
            g[(m_in + r, j)] = 1.0;
            h[m_in + r] = prob.upper[j];
        }
        for (r, &j) in lowers.iter().enumerate() {
            let row = m_in + uppers.len() + r;
            g[(row, j)] = -1.0;
            h[row] = -prob.lower[j];
        }
        let mut a = prob.a_eq.clone();
        let mut b = prob.b_eq.clone();
        normalize_rows(&mut a, &mut b);
        normalize_rows(&mut g, &mut h);
        Self {
            p: prob.p.clone(),
            q: prob.q.clone(),
            a,
            b,
            g,
            h,
        }
    }

    fn n(&self) -> usize {
        self.q.len()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Feasibility problem `min t` over `(x, t)` with every row relaxed by
    /// `t` and `t ≥ -1`.
    fn phase_one(&self) -> Form {
        let n = self.n();
        let m = self.g.nrows();
        let pe = self.a.nrows();
        let rows = m + 2 * pe + 1;
        let mut g = DMatrix::zeros(rows, n + 1);
        let mut h = DVector::zeros(rows);
        g.view_mut((0, 0), (m, n)).copy_from(&self.g);
        h.rows_mut(0, m).copy_from(&self.h);
        g.view_mut((m, 0), (pe, n)).copy_from(&self.a);
        h.rows_mut(m, pe).copy_from(&self.b);
        g.view_mut((m + pe, 0), (pe, n)).copy_from(&(-&self.a));
        h.rows_mut(m + pe, pe).copy_from(&(-&self.b));
        for i in 0..rows - 1 {
            g[(i, n)] = -1.0;
        }
        g[(rows - 1, n)] = -1.0;
        h[rows - 1] = 1.0;
        let mut p = DMatrix::zeros(n + 1, n + 1);
        for j in 0..n {
            p[(j, j)] = 1e-9;
        }
        let mut q = DVector::zeros(n + 1);
        q[n] = 1.0;
        Form {
            p,
            q,
            a: DMatrix::zeros(0, n + 1),
            b: DVector::zeros(0),
            g,
            h,
        }
    }
}

/// Factorization of the reduced Newton system
/// `[P + Gᵀ diag(d) G, Aᵀ; A, 0]`, regularized and refined.
struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    k0: DMatrix<f64>,
    n: usize,
}

const KKT_REG: f64 = 1e-10;

impl Kkt {
    fn factor(f: &Form, d: Option<&DVector<f64>>) -> Self {
        let n = f.n();
        let pe = f.a.nrows();
        let mut k0 = DMatrix::zeros(n + pe, n + pe);
        let mut hmat = f.p.clone();
        if let Some(d) = d {
            let mut gd = f.g.clone();
            for i in 0..gd.nrows() {
                gd.row_mut(i).scale_mut(d[i]);
            }
            hmat += f.g.transpose() * gd;
        }
        k0.view_mut((0, 0), (n, n)).copy_from(&hmat);
        k0.view_mut((n, 0), (pe, n)).copy_from(&f.a);
        k0.view_mut((0, n), (n, pe)).copy_from(&f.a.transpose());
        let mut kd = k0.clone();
        for j in 0..n {
            kd[(j, j)] += KKT_REG;
        }
        for j in n..n + pe {
            kd[(j, j)] -= KKT_REG;
        }
        Self { lu: kd.lu(), k0, n }
    }

    fn solve(&self, rx: &DVector<f64>, ry: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let rhs = vstack_v(rx, ry);
        let mut sol = self.lu.solve(&rhs)?;
        for _ in 0..3 {
            let resid = &rhs - &self.k0 * &sol;
            sol += self.lu.solve(&resid)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let pe = sol.len() - self.n;
        Some((sol.rows(0, self.n).into_owned(), sol.rows(self.n, pe).into_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum IpmStatus {
    Converged,
    Diverged,
    Limit,
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha: f64 = 1.0;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

/// Mehrotra predictor-corrector iteration. `probe` sees every iterate with
/// its residual level and may stop the iteration by returning true.
fn ipm(
    f: &Form,
    max_iter: usize,
    tol: f64,
    mut probe: impl FnMut(&Iterate, f64) -> bool,
) -> (IpmStatus, Iterate, usize) {
    let n = f.n();
    let m = f.g.nrows();
    let pe = f.a.nrows();
    let fail = |n: usize| Iterate {
        x: DVector::zeros(n),
        y: DVector::zeros(pe),
        z: DVector::zeros(m),
        s: DVector::zeros(m),
    };

    // Starting point from the least-squares-like system with unit scaling.
    let init = Kkt::factor(f, Some(&DVector::from_element(m, 1.0)));
    let Some((x, y)) = init.solve(&(-&f.q + f.g.transpose() * &f.h), &f.b) else {
        return (IpmStatus::Diverged, fail(n), 0);
    };
    let zv = &f.g * &x - &f.h;
    let shift = |v: DVector<f64>| {
        let lo = if v.is_empty() { 1.0 } else { v.min() };
        if lo < 1e-8 {
            v.add_scalar(1.0 - lo)
        } else {
            v
        }
    };
    let s = shift(-&zv);
    let z = shift(zv);
    let mut it = Iterate { x, y, z, s };
    let q_scale = 1.0 + inf_norm(&f.q);
    let b_scale = 1.0 + inf_norm(&f.b).max(inf_norm(&f.h));

    for k in 0..=max_iter {
        let rd = &f.p * &it.x + &f.q + f.a.transpose() * &it.y + f.g.transpose() * &it.z;
        let rp = &f.a * &it.x - &f.b;
        let ri = &f.g * &it.x + &it.s - &f.h;
        let mu = if m > 0 { it.s.dot(&it.z) / m as f64 } else { 0.0 };
        let pres = inf_norm(&rp).max(inf_norm(&ri)) / b_scale;
        let dres = inf_norm(&rd) / q_scale;
        let gap = mu * m as f64 / (1.0 + f.objective(&it.x).abs());
        if probe(&it, pres.max(dres).max(gap)) {
            return (IpmStatus::Converged, it, k);
        }
        if pres <= tol && dres <= tol && gap <= tol {
            return (IpmStatus::Converged, it, k);
        }
        if inf_norm(&it.x) > 1e12 || inf_norm(&it.z) > 1e14 || !it.x.iter().all(|v| v.is_finite()) {
            return (IpmStatus::Diverged, it, k);
        }
        if k == max_iter {
            break;
        }
        let d = it.z.component_div(&it.s);
        let kkt = Kkt::factor(f, Some(&d));
        let direction = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let rc_s = rc.component_div(&it.s);
            let rx = -&rd - f.g.transpose() * (d.component_mul(&ri) - &rc_s);
            let (dx, dy) = kkt.solve(&rx, &(-&rp))?;
            let gdx = &f.g * &dx;
            let dz = d.component_mul(&(&gdx + &ri)) - rc_s;
            let ds = -&ri - gdx;
            Some((dx, dy, dz, ds))
        };
        let rc_aff = it.s.component_mul(&it.z);
        let Some((_, _, dz_a, ds_a)) = direction(&rc_aff) else {
            return (IpmStatus::Diverged, it, k);
        };
        let alpha_aff = max_step(&it.s, &ds_a).min(max_step(&it.z, &dz_a));
        let sigma = if m > 0 {
            let mu_aff = (&it.s + &ds_a * alpha_aff).dot(&(&it.z + &dz_a * alpha_aff)) / m as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let Some((dx, dy, dz, ds)) = direction(&rc) else {
            return (IpmStatus::Diverged, it, k);
        };
        let mut alpha = (0.99 * max_step(&it.s, &ds).min(max_step(&it.z, &dz))).min(1.0);
        // μ(α) = μ + α b + α² c. For QPs c = dxᵀ P dx / m can be large enough
        // that a long step raises complementarity, so α is capped to keep a
        // sufficient decrease.
        if m > 0 {
            let b = (it.s.dot(&dz) + it.z.dot(&ds)) / m as f64 + 0.01 * mu;
            let c = ds.dot(&dz) / m as f64;
            if b < 0.0 && c > 0.0 {
                alpha = alpha.min(-0.9 * b / c);
            }
        }
        it.x += &dx * alpha;
        it.y += &dy * alpha;
        it.z += &dz * alpha;
        it.s += &ds * alpha;
    }
    (IpmStatus::Limit, it, max_iter)
}

struct Polished {
    x: DVector<f64>,
    objective: f64,
    violation: f64,
}

/// Solve the KKT system of the active set implied by `(s, z)` and accept the
/// point only if it is optimal for the original problem.
fn polish(prob: &QpProblem, f: &Form, active: &[usize], settings: &QpSettings) -> Option<Polished> {
    let n = f.n();
    let pe = f.a.nrows();
    let na = active.len();
    let mut c = DMatrix::zeros(pe + na, n);
    let mut rhs_c = DVector::zeros(pe + na);
    c.rows_mut(0, pe).copy_from(&f.a);
    rhs_c.rows_mut(0, pe).copy_from(&f.b);
    for (r, &i) in active.iter().enumerate() {
        c.row_mut(pe + r).copy_from(&f.g.row(i));
        rhs_c[pe + r] = f.h[i];
    }
    let sub = Form {
        p: f.p.clone(),
        q: f.q.clone(),
        a: c,
        b: rhs_c,
        g: DMatrix::zeros(0, n),
        h: DVector::zeros(0),
    };
    let (x, mult) = Kkt::factor(&sub, None).solve(&(-&f.q), &sub.b)?;
    for r in 0..na {
        if mult[pe + r] < -1e-9 * (1.0 + mult[pe + r].abs()) {
            return None;
        }
    }
    let violation = prob.max_violation(&x);
    if violation > settings.feas_tol {
        return None;
    }
    let px = &f.p * &x;
    let aty = sub.a.transpose() * &mult;
    let stat = inf_norm(&(&px + &f.q + &aty));
    let scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&f.q)).max(1.0);
    if stat > settings.opt_tol * scale {
        return None;
    }
    Some(Polished {
        objective: prob.objective(&x),
        x,
        violation,
    })
}

/// Recession direction along which the objective decreases without bound.
fn is_unbounded_direction(f: &Form, x: &DVector<f64>) -> bool {
    let norm = inf_norm(x);
    if !(norm > 1e6) {
        return false;
    }
    let d = x / norm;
    let p_scale = f.p.amax().max(1.0);
    inf_norm(&(&f.p * &d)) <= 1e-6 * p_scale
        && f.q.dot(&d) < -1e-9 * (1.0 + inf_norm(&f.q))
        && inf_norm(&(&f.a * &d)) <= 1e-6
        && (f.g.nrows() == 0 || (&f.g * &d).max() <= 1e-6)
}

/// Solve a convex QP (`P` positive semidefinite).
pub fn solve_qp(prob: &QpProblem, settings: &QpSettings) -> Result<SolveResult> {
    prob.validate()?;
    let n = prob.num_vars();
    let result = |status, x: DVector<f64>, iterations, polished| SolveResult {
        status,
        objective: if status == SolveStatus::Unbounded {
            f64::NEG_INFINITY
        } else {
            prob.objective(&x)
        },
        max_violation: prob.max_violation(&x),
        x,
        iterations,
        polished,
    };
    if (0..n).any(|j| prob.lower[j] > prob.upper[j]) {
        return Ok(result(SolveStatus::Infeasible, DVector::zeros(n), 0, false));
    }
    let f = Form::of(prob);
    if f.p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("QP cost matrix must be finite".into()));
    }
    let tol = 1e-3 * settings.feas_tol.min(settings.opt_tol);

    let mut polished: Option<Polished> = None;
    let mut last_active: Option<Vec<usize>> = None;
    let (status, it, iters) = ipm(&f, settings.max_iter, tol, |it, level| {
        if !settings.polish || level > 1e-5 {
            return false;
        }
        let active: Vec<usize> = (0..it.s.len()).filter(|&i| it.z[i] > it.s[i]).collect();
        if last_active.as_ref() == Some(&active) {
            return false;
        }
        polished = polish(prob, &f, &active, settings);
        last_active = Some(active);
        polished.is_some()
    });
    if let Some(p) = polished {
        return Ok(SolveResult {
            status: SolveStatus::Optimal,
            objective: p.objective,
            max_violation: p.violation,
            x: p.x,
            iterations: iters,
            polished: true,
        });
    }
    if status == IpmStatus::Converged {
        let x = it.x;
        let viol = prob.max_violation(&x);
        let status = if viol <= settings.feas_tol {
            SolveStatus::Optimal
        } else {
            SolveStatus::IterationLimit
        };
        return Ok(result(status, x, iters, false));
    }
    if is_unbounded_direction(&f, &it.x) {
        return Ok(result(SolveStatus::Unbounded, it.x, iters, false));
    }
    // Decide feasibility before reporting a plain failure.
    let phase = f.phase_one();
    let (p_status, p_it, _) = ipm(&phase, settings.max_iter, 1e-10, |_, _| false);
    if p_status == IpmStatus::Converged && p_it.x[n] > 0.1 * settings.feas_tol {
        return Ok(result(SolveStatus::Infeasible, it.x, iters, false));
    }
    let x = if it.x.iter().all(|v| v.is_finite()) {
        it.x
    } else {
        p_it.x.rows(0, n).into_owned()
    };
    Ok(result(SolveStatus::IterationLimit, x, iters, false))
}
