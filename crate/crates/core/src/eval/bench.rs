//! The comparison sweep: proposed planner against radius-inflation baselines.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{inflate_baseline, mc_path_risk, path_metrics, RiskEstimate};
use crate::env::Problem;
use crate::error::{Error, Result};
use crate::geom::KinematicChain;
use crate::planner::{hierarchical_plan, Path, PlannerConfig};
use crate::rng::stream_id;
use crate::sdf::DistanceModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "ratio")]
pub enum Method {
    Proposed,
    Inflation(f64),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Proposed => "proposed".into(),
            Method::Inflation(r) => format!("inflate-{r:.1}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub planner: PlannerConfig,
    /// Inflation ratios of the baselines; 0 is the uncertainty-unaware one.
    pub ratios: Vec<f64>,
    /// MC samples per path.
    pub samples: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { planner: PlannerConfig::default(), ratios: vec![0.0, 0.2, 0.4, 0.6], samples: 5000, seed: 0, jobs: 1 }
    }
}

impl BenchConfig {
    pub fn methods(&self) -> Vec<Method> {
        let mut m = vec![Method::Proposed];
        m.extend(self.ratios.iter().map(|r| Method::Inflation(*r)));
        m
    }
}

/// One problem × method result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub problem: usize,
    pub method: Method,
    pub success: bool,
    pub goal_reached: bool,
    pub risk: Option<RiskEstimate>,
    /// Σ allocations (proposed only).
    pub risk_bound: Option<f64>,
    /// MC risk of the candidate the proposed method started from.
    pub initial_risk: Option<f64>,
    pub path_length_rad: Option<f64>,
    pub ee_displacement_m: Option<f64>,
    pub waypoints: usize,
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Path>,
}

impl BenchRow {
    fn failed(problem: usize, method: Method, why: String) -> Self {
        Self {
            problem,
            method,
            success: false,
            goal_reached: false,
            risk: None,
            risk_bound: None,
            initial_risk: None,
            path_length_rad: None,
            ee_displacement_m: None,
            waypoints: 0,
            failure: Some(why),
            path: None,
        }
    }

    /// Whether the MC risk is within the reported bound plus three
    /// standard errors.
    pub fn bound_holds(&self) -> Option<bool> {
        let (r, b) = (self.risk?, self.risk_bound?);
        Some(r.risk <= b + 3.0 * r.standard_error())
    }
}

/// Rows plus per-row wall-clock time, kept apart so that the report itself
/// is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub methods: Vec<Method>,
    pub rows: Vec<BenchRow>,
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

fn run_method(
    chain: &KinematicChain,
    problem: &Problem,
    model: &dyn DistanceModel,
    method: Method,
    config: &BenchConfig,
) -> Result<BenchRow> {
    // common random numbers: every method of a problem sees the same draws
    let mc_seed = stream_id(&[config.seed, problem.id as u64]);
    let mc = |path: &Path| mc_path_risk(chain, &problem.scene, &path.waypoints, config.samples, mc_seed, 1);
    let (path, bound, initial, success, goal_reached) = match method {
        Method::Proposed => {
            let out = match hierarchical_plan(chain, problem, model, &config.planner) {
                Ok(out) => out,
                Err(Error::Planning(why)) => return Ok(BenchRow::failed(problem.id, method, why)),
                Err(e) => return Err(e),
            };
            let initial = mc(&out.candidate)?.risk;
            if let Some(j) = out.failed_at {
                let mut row = BenchRow::failed(problem.id, method, format!("cc-ik failed at waypoint {j}"));
                row.initial_risk = Some(initial);
                return Ok(row);
            }
            let bound = out.ledger.bound();
            (out.safe, Some(bound), Some(initial), true, out.goal_reached)
        }
        Method::Inflation(ratio) => match inflate_baseline(chain, problem, ratio, &config.planner) {
            Ok(p) => {
                let reached = problem.goal.contains(chain, p.waypoints.last().expect("non-empty path"))?;
                (p, None, None, true, reached)
            }
            Err(Error::Planning(why)) => return Ok(BenchRow::failed(problem.id, method, why)),
            Err(e) => return Err(e),
        },
    };
    let risk = mc(&path)?;
    let m = path_metrics(&path.waypoints, chain)?;
    Ok(BenchRow {
        problem: problem.id,
        method,
        success,
        goal_reached,
        risk: Some(risk),
        risk_bound: bound,
        initial_risk: initial,
        path_length_rad: Some(m.path_length_rad),
        ee_displacement_m: Some(m.ee_displacement_m),
        waypoints: path.waypoints.len(),
        failure: None,
        path: Some(path),
    })
}

/// Every method on every problem. Planning failures become failed rows;
/// problems run in parallel on `config.jobs` workers with results in input
/// order.
pub fn run_benchmark(
    chain: &KinematicChain,
    problems: &[Problem],
    model: &dyn DistanceModel,
    config: &BenchConfig,
) -> Result<Benchmark> {
    config.planner.validate()?;
    let methods = config.methods();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let per_problem: Vec<Result<Vec<(BenchRow, f64)>>> = pool.install(|| {
        problems
            .par_iter()
            .map(|p| {
                methods
                    .iter()
                    .map(|m| {
                        let t = Instant::now();
                        let row = run_method(chain, p, model, *m, config)?;
                        Ok((row, t.elapsed().as_secs_f64()))
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut seconds = Vec::new();
    for r in per_problem {
        for (row, s) in r? {
            rows.push(row);
            seconds.push(s);
        }
    }
    Ok(Benchmark { methods, rows, seconds })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub attempted: usize,
    pub succeeded: usize,
    pub risk_mean: f64,
    pub risk_std: f64,
    pub length_mean: f64,
    pub length_std: f64,
    pub ee_mean: f64,
    pub ee_std: f64,
    pub bound_mean: Option<f64>,
    pub initial_risk_mean: Option<f64>,
}

impl Benchmark {
    pub fn rows_of(&self, method: Method) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn summary(&self, method: Method) -> MethodSummary {
        let rows: Vec<&BenchRow> = self.rows_of(method).collect();
        let ok: Vec<&&BenchRow> = rows.iter().filter(|r| r.success).collect();
        let risk: Vec<f64> = ok.iter().filter_map(|r| r.risk.map(|x| x.risk)).collect();
        let len: Vec<f64> = ok.iter().filter_map(|r| r.path_length_rad).collect();
        let ee: Vec<f64> = ok.iter().filter_map(|r| r.ee_displacement_m).collect();
        let bounds: Vec<f64> = ok.iter().filter_map(|r| r.risk_bound).collect();
        let initial: Vec<f64> = rows.iter().filter_map(|r| r.initial_risk).collect();
        let (risk_mean, risk_std) = mean_std(&risk);
        let (length_mean, length_std) = mean_std(&len);
        let (ee_mean, ee_std) = mean_std(&ee);
        MethodSummary {
            method,
            attempted: rows.len(),
            succeeded: ok.len(),
            risk_mean,
            risk_std,
            length_mean,
            length_std,
            ee_mean,
            ee_std,
            bound_mean: (!bounds.is_empty()).then(|| mean_std(&bounds).0),
            initial_risk_mean: (!initial.is_empty()).then(|| mean_std(&initial).0),
        }
    }

    /// Report CSV with [`super::REPORT_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut s = String::from(super::REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let risk = r.risk;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.problem,
                r.method.label(),
                r.success,
                r.goal_reached,
                fmt_opt(risk.map(|x| x.risk)),
                fmt_opt(risk.map(|x| x.ci_low)),
                fmt_opt(risk.map(|x| x.ci_high)),
                fmt_opt(r.risk_bound),
                fmt_opt(r.initial_risk),
                fmt_opt(r.path_length_rad),
                fmt_opt(r.ee_displacement_m),
                r.waypoints,
                r.failure.as_deref().unwrap_or("").replace(',', ";"),
            )
            .expect("writing to a string");
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("problem,method,seconds\n");
        for (r, t) in self.rows.iter().zip(&self.seconds) {
            writeln!(s, "{},{},{t:.6}", r.problem, r.method.label()).expect("writing to a string");
        }
        s
    }

    /// Risks of `a` and `b` on problems where both succeeded.
    pub fn paired_risks(&self, a: Method, b: Method) -> Vec<(f64, f64)> {
        self.rows_of(a)
            .filter_map(|ra| {
                let rb = self.rows_of(b).find(|rb| rb.problem == ra.problem)?;
                Some((ra.risk?.risk, rb.risk?.risk)).filter(|_| ra.success && rb.success)
            })
            .collect()
    }
}
