use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use riskplan::env::{
    generate_dataset, generate_dataset_at, generate_problems, nominal_tabletop, read_dataset, write_dataset, Aabb,
    DatasetSizes, GenerationSettings, PerturbationSpec, Problem, ProblemSet, TabletopConfig,
};
use riskplan::eval::{
    inflate_baseline, path_waypoints, risk_cdf_svg, run_benchmark, scene_svg, summary_markdown, BenchConfig, Benchmark,
    Method,
};
use riskplan::geom::KinematicChain;
use riskplan::planner::{hierarchical_plan, PlannerConfig};
use riskplan::sdf::{
    evaluate_model, read_checkpoint, train, write_checkpoint, DistanceModel, ExactGaussianModel, ModelConfig, TrainHyper,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::io::{open, read_problem_set, require, suffixed, with_config, write_atomic, write_json, write_sidecar};
use crate::settings::usage;

fn chain_of(robot: &str, chain: Option<&Path>) -> Result<KinematicChain> {
    if let Some(path) = chain {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(KinematicChain::from_json(&doc)?);
    }
    match robot {
        "planar" => Ok(KinematicChain::default_planar()),
        "spatial" => Ok(KinematicChain::default_spatial()),
        other => Err(usage(format!("unknown robot `{other}` (planar, spatial)"))),
    }
}

fn workspace(chain: &KinematicChain, half_extent: Option<f64>) -> Result<Aabb> {
    let h = half_extent.unwrap_or(chain.reach() + 0.1);
    if !(h > 0.0) {
        return Err(usage("half_extent must be positive"));
    }
    Ok(Aabb::centered(chain.dim(), h))
}

fn sizes_of(preset: &str) -> Result<DatasetSizes> {
    match preset {
        "desk" => Ok(DatasetSizes::desk()),
        "full" => Ok(DatasetSizes::full()),
        other => Err(usage(format!("unknown preset `{other}` (desk, full)"))),
    }
}

fn perturbation_of(name: &str, seed: u64) -> Result<PerturbationSpec> {
    match name {
        "standard" => Ok(PerturbationSpec::standard(seed)),
        "none" => Ok(PerturbationSpec::none(seed)),
        other => Err(usage(format!("unknown perturbation `{other}` (standard, none)"))),
    }
}

/// Sensed-point noise of the problems, for the exact Gaussian oracle.
fn scene_sigma(problems: &[Problem]) -> f64 {
    problems.iter().flat_map(|p| p.scene.points()).map(|p| p.sigma).fold(0.0, f64::max)
}

fn load_model(
    model: &Option<PathBuf>,
    exact: bool,
    chain: &KinematicChain,
    problems: &[Problem],
) -> Result<Box<dyn DistanceModel>> {
    if exact {
        return Ok(Box::new(ExactGaussianModel { chain: chain.clone(), sigma: scene_sigma(problems).max(1e-4) }));
    }
    let path = model.as_deref().ok_or_else(|| usage("--model is required (or --exact)"))?;
    let m = read_checkpoint(&mut std::io::BufReader::new(open(path)?)).with_context(|| format!("loading {}", path.display()))?;
    if m.config.n != chain.dof() || m.config.k != chain.num_links() || m.config.d != chain.dim() {
        bail!("checkpoint {} does not match the chain ({} joints, {} links)", path.display(), chain.dof(), chain.num_links());
    }
    Ok(Box::new(m))
}

fn pick<'a>(problems: &'a [Problem], id: usize) -> Result<&'a Problem> {
    problems.iter().find(|p| p.id == id).ok_or_else(|| usage(format!("no problem with id {id}")))
}

// ---------------------------------------------------------------- gen-dataset

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataset {
    pub out: Option<PathBuf>,
    pub robot: String,
    pub chain: Option<PathBuf>,
    pub preset: String,
    pub configs: Option<usize>,
    pub draws: Option<usize>,
    pub sigma: f64,
    pub half_extent: Option<f64>,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for GenDataset {
    fn default() -> Self {
        Self {
            out: None,
            robot: "planar".into(),
            chain: None,
            preset: "desk".into(),
            configs: None,
            draws: None,
            sigma: 0.02,
            half_extent: None,
            seed: 0,
            jobs: 1,
        }
    }
}

pub fn gen_dataset(s: GenDataset) -> Result<()> {
    let out = require(&s.out, "out")?;
    let chain = chain_of(&s.robot, s.chain.as_deref())?;
    let bounds = workspace(&chain, s.half_extent)?;
    let mut sizes = sizes_of(&s.preset)?;
    sizes.configs = s.configs.unwrap_or(sizes.configs);
    sizes.draws = s.draws.unwrap_or(sizes.draws);
    let ds = generate_dataset(&chain, &bounds, &sizes, s.sigma, s.seed, s.jobs)?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &ds)?;
    write_atomic(out, &buf)?;
    write_sidecar(out, &json!({ "command": "gen-dataset", "settings": s, "sizes": sizes, "chain": chain.to_json() }))?;
    eprintln!("{} samples -> {}", ds.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Train {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub preset: String,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub lr_final_ratio: Option<f64>,
    pub batch: Option<usize>,
    pub widths: Option<Vec<usize>>,
    pub kl_weight: Option<f64>,
    pub seed: u64,
}

impl Default for Train {
    fn default() -> Self {
        Self {
            dataset: None,
            out: None,
            loss_csv: None,
            preset: "desk".into(),
            epochs: None,
            lr: None,
            lr_final_ratio: None,
            batch: None,
            widths: None,
            kl_weight: None,
            seed: 0,
        }
    }
}

pub fn train_cmd(s: Train) -> Result<()> {
    let data = require(&s.dataset, "dataset")?;
    let out = require(&s.out, "out")?;
    let ds = read_dataset(&mut std::io::BufReader::new(open(data)?)).with_context(|| format!("loading {}", data.display()))?;
    let (mut config, mut hyper) = match s.preset.as_str() {
        "desk" => (ModelConfig::desk(ds.n, ds.dim, ds.links), TrainHyper::desk()),
        "full" => (ModelConfig::full(ds.n, ds.dim, ds.links), TrainHyper::full()),
        other => return Err(usage(format!("unknown preset `{other}` (desk, full)"))),
    };
    hyper.epochs = s.epochs.unwrap_or(hyper.epochs);
    hyper.lr = s.lr.unwrap_or(hyper.lr);
    hyper.lr_final_ratio = s.lr_final_ratio.unwrap_or(hyper.lr_final_ratio);
    hyper.batch = s.batch.unwrap_or(hyper.batch);
    hyper.seed = s.seed;
    if let Some(w) = &s.widths {
        config.widths = w.clone();
    }
    config.kl_weight = s.kl_weight.unwrap_or(config.kl_weight);
    let trained = train(&ds, &config, &hyper)?;
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &trained.model)?;
    write_atomic(out, &buf)?;
    let effective = json!({ "command": "train", "settings": s, "model": config, "hyper": hyper });
    write_sidecar(out, &effective)?;
    let loss = s.loss_csv.clone().unwrap_or_else(|| suffixed(out, ".loss.csv"));
    write_atomic(&loss, trained.trace.to_csv().as_bytes())?;
    write_sidecar(&loss, &effective)?;
    if let Some(last) = trained.trace.epochs.last() {
        eprintln!("final loss {:.6} (nll {:.6}, kl {:.6}) -> {}", last.total, last.nll, last.kl, out.display());
    }
    Ok(())
}

// ----------------------------------------------------------------- eval-model

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalModel {
    pub model: Option<PathBuf>,
    pub problems: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub robot: String,
    pub chain: Option<PathBuf>,
    pub paths: usize,
    pub draws: usize,
    pub sigma: f64,
    pub half_extent: Option<f64>,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for EvalModel {
    fn default() -> Self {
        Self {
            model: None,
            problems: None,
            out: None,
            robot: "planar".into(),
            chain: None,
            paths: 100,
            draws: 5,
            sigma: 0.02,
            half_extent: None,
            seed: 1,
            jobs: 1,
        }
    }
}

/// Problems for held-out evaluation: a given file, or a fresh tabletop set.
pub fn heldout_problems(chain: &KinematicChain, sigma: f64, count: usize, seed: u64) -> Result<Vec<Problem>> {
    let nominal = nominal_tabletop(&TabletopConfig { dim: chain.dim(), sigma, ..TabletopConfig::default() })?;
    Ok(generate_problems(chain, &nominal, &PerturbationSpec::standard(seed), count, &GenerationSettings::default())?)
}

pub fn eval_model(s: EvalModel) -> Result<()> {
    let (chain, problems) = match &s.problems {
        Some(p) => read_problem_set(p)?,
        None => {
            let chain = chain_of(&s.robot, s.chain.as_deref())?;
            // extra problems cover the ones without a candidate path
            let problems = heldout_problems(&chain, s.sigma, s.paths + s.paths / 5 + 5, s.seed)?;
            (chain, problems)
        }
    };
    let model = load_model(&s.model, false, &chain, &problems)?;
    let planner = PlannerConfig { seed: s.seed, ..PlannerConfig::default() };
    let configs = path_waypoints(&chain, &problems, s.paths, &planner)?;
    let sizes = DatasetSizes { draws: s.draws, ..DatasetSizes::desk() };
    let bounds = workspace(&chain, s.half_extent)?;
    let ds = generate_dataset_at(&chain, &bounds, &configs, &sizes, s.sigma, s.seed, s.jobs)?;
    let metrics = evaluate_model(model.as_ref(), &ds)?;
    let table = metrics.to_table();
    match &s.out {
        Some(out) => {
            write_atomic(out, table.as_bytes())?;
            write_sidecar(out, &json!({ "command": "eval-model", "settings": s, "samples": metrics.samples }))?;
        }
        None => print!("{table}"),
    }
    eprintln!("{} held-out samples on {} waypoints", metrics.samples, configs.len());
    Ok(())
}

// --------------------------------------------------------------- gen-problems

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenProblems {
    pub out: Option<PathBuf>,
    pub robot: String,
    pub chain: Option<PathBuf>,
    pub count: usize,
    pub sigma: f64,
    pub perturbation: String,
    pub seed: u64,
}

impl Default for GenProblems {
    fn default() -> Self {
        Self {
            out: None,
            robot: "planar".into(),
            chain: None,
            count: 30,
            sigma: 0.02,
            perturbation: "standard".into(),
            seed: 0,
        }
    }
}

pub fn gen_problems(s: GenProblems) -> Result<()> {
    let out = require(&s.out, "out")?;
    let chain = chain_of(&s.robot, s.chain.as_deref())?;
    let spec = perturbation_of(&s.perturbation, s.seed)?;
    let nominal = nominal_tabletop(&TabletopConfig { dim: chain.dim(), sigma: s.sigma, seed: s.seed, ..TabletopConfig::default() })?;
    let problems = generate_problems(&chain, &nominal, &spec, s.count, &GenerationSettings::default())?;
    let set = ProblemSet { chain: chain.to_json(), problems };
    write_json(out, &with_config(&set, &json!({ "command": "gen-problems", "settings": s }))?)?;
    eprintln!("{} problems -> {}", set.problems.len(), out.display());
    Ok(())
}

// ----------------------------------------------------------------------- plan

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    pub problems: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Use the exact Gaussian distance model instead of a checkpoint.
    pub exact: bool,
    pub id: usize,
    pub out: Option<PathBuf>,
    pub candidate_out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub delta: f64,
    pub attempts: usize,
    pub spacing: f64,
    pub seed: u64,
}

impl Default for Plan {
    fn default() -> Self {
        let p = PlannerConfig::default();
        Self {
            problems: None,
            model: None,
            exact: false,
            id: 0,
            out: None,
            candidate_out: None,
            log: None,
            delta: p.risk_bound,
            attempts: p.attempts,
            spacing: p.spacing,
            seed: 0,
        }
    }
}

fn planner_config(delta: f64, attempts: usize, spacing: f64, seed: u64) -> Result<PlannerConfig> {
    let c = PlannerConfig { risk_bound: delta, attempts, spacing, seed, ..PlannerConfig::default() };
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

pub fn plan(s: Plan) -> Result<()> {
    let out = require(&s.out, "out")?;
    let (chain, problems) = read_problem_set(require(&s.problems, "problems")?)?;
    let problem = pick(&problems, s.id)?;
    let model = load_model(&s.model, s.exact, &chain, &problems)?;
    let config = planner_config(s.delta, s.attempts, s.spacing, s.seed)?;
    let outcome = hierarchical_plan(&chain, problem, model.as_ref(), &config)?;
    let effective = json!({ "command": "plan", "settings": s, "planner": config });
    let log = s.log.clone().unwrap_or_else(|| suffixed(out, ".log.jsonl"));
    write_atomic(&log, outcome.log_lines().as_bytes())?;
    write_sidecar(&log, &effective)?;
    if let Some(c) = &s.candidate_out {
        write_json(c, &with_config(&outcome.candidate, &effective)?)?;
    }
    if let Some(j) = outcome.failed_at {
        bail!("cc-ik failed at waypoint {j}; step log in {}", log.display());
    }
    let mut doc = with_config(&outcome.safe, &effective)?;
    doc["residual_budget"] = json!(outcome.ledger.remaining);
    doc["goal_reached"] = json!(outcome.goal_reached);
    write_json(out, &doc)?;
    eprintln!(
        "{} waypoints, risk bound {:.6}, goal reached: {} -> {}",
        outcome.safe.waypoints.len(),
        outcome.ledger.bound(),
        outcome.goal_reached,
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------- baseline

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub problems: Option<PathBuf>,
    pub id: usize,
    pub out: Option<PathBuf>,
    pub ratio: f64,
    pub attempts: usize,
    pub spacing: f64,
    pub seed: u64,
}

impl Default for Baseline {
    fn default() -> Self {
        let p = PlannerConfig::default();
        Self { problems: None, id: 0, out: None, ratio: 0.0, attempts: p.attempts, spacing: p.spacing, seed: 0 }
    }
}

pub fn baseline(s: Baseline) -> Result<()> {
    let out = require(&s.out, "out")?;
    let (chain, problems) = read_problem_set(require(&s.problems, "problems")?)?;
    let problem = pick(&problems, s.id)?;
    if !(s.ratio >= 0.0) {
        return Err(usage("ratio must be non-negative"));
    }
    let config = planner_config(PlannerConfig::default().risk_bound, s.attempts, s.spacing, s.seed)?;
    let path = inflate_baseline(&chain, problem, s.ratio, &config)?;
    write_json(out, &with_config(&path, &json!({ "command": "baseline", "settings": s, "planner": config }))?)?;
    eprintln!("{} waypoints -> {}", path.waypoints.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evaluate {
    pub problems: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub exact: bool,
    pub out: Option<PathBuf>,
    pub samples: usize,
    pub ratios: Vec<f64>,
    pub delta: f64,
    pub attempts: usize,
    pub spacing: f64,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for Evaluate {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            problems: None,
            model: None,
            exact: false,
            out: None,
            samples: b.samples,
            ratios: b.ratios,
            delta: b.planner.risk_bound,
            attempts: b.planner.attempts,
            spacing: b.planner.spacing,
            seed: 0,
            jobs: 1,
        }
    }
}

pub fn evaluate(s: Evaluate) -> Result<()> {
    let out = require(&s.out, "out")?;
    let (chain, problems) = read_problem_set(require(&s.problems, "problems")?)?;
    let model = load_model(&s.model, s.exact, &chain, &problems)?;
    if s.samples < 100 {
        return Err(usage("--samples must be at least 100"));
    }
    if s.ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(usage("ratios must be non-negative"));
    }
    let config = BenchConfig {
        planner: planner_config(s.delta, s.attempts, s.spacing, s.seed)?,
        ratios: s.ratios.clone(),
        samples: s.samples,
        seed: s.seed,
        jobs: s.jobs.max(1),
    };
    let bench = run_benchmark(&chain, &problems, model.as_ref(), &config)?;
    let effective = json!({ "command": "evaluate", "settings": s, "bench": config });
    write_atomic(out, bench.to_csv().as_bytes())?;
    write_sidecar(out, &effective)?;
    write_atomic(&suffixed(out, ".timings.csv"), bench.timings_csv().as_bytes())?;
    write_json(&suffixed(out, ".json"), &with_config(&bench, &effective)?)?;
    for m in &bench.methods {
        let x = bench.summary(*m);
        eprintln!("{:>12}: {}/{} ok, mean risk {:.4}", m.label(), x.succeeded, x.attempted, x.risk_mean);
    }
    Ok(())
}

// --------------------------------------------------------------------- report

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    /// The `.json` written next to the report CSV by `evaluate`.
    pub bench: Option<PathBuf>,
    pub problems: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub snapshots: usize,
}

impl Default for Report {
    fn default() -> Self {
        Self { bench: None, problems: None, out_dir: None, snapshots: 3 }
    }
}

fn svg_with_config(svg: &str, config: &Value) -> String {
    let comment = serde_json::to_string(config).unwrap_or_default().replace("--", "- -");
    match svg.find('\n') {
        Some(i) => format!("{}\n<!-- config: {comment} -->{}", &svg[..i], &svg[i..]),
        None => svg.to_string(),
    }
}

pub fn report(s: Report) -> Result<()> {
    let bench_path = require(&s.bench, "bench")?;
    let dir = require(&s.out_dir, "out-dir")?;
    let text = std::fs::read_to_string(bench_path).with_context(|| format!("reading {}", bench_path.display()))?;
    let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", bench_path.display()))?;
    let bench: Benchmark = serde_json::from_value(doc.clone()).with_context(|| format!("parsing {}", bench_path.display()))?;
    let effective = json!({ "command": "report", "settings": s, "evaluate": doc.get("config").cloned().unwrap_or(Value::Null) });

    write_atomic(&dir.join("risk_cdf.svg"), svg_with_config(&risk_cdf_svg(&bench), &effective).as_bytes())?;
    let mut md = String::from("# Benchmark summary\n\n");
    md.push_str(&summary_markdown(&bench));
    md.push_str("\n## Effective configuration\n\n```json\n");
    md.push_str(&serde_json::to_string_pretty(&effective)?);
    md.push_str("\n```\n");
    write_atomic(&dir.join("summary.md"), md.as_bytes())?;

    if s.snapshots > 0 {
        let (chain, problems) = read_problem_set(require(&s.problems, "problems")?)?;
        for p in problems.iter().take(s.snapshots) {
            let paths: Vec<(String, riskplan::planner::Path)> = bench
                .rows
                .iter()
                .filter(|r| r.problem == p.id && matches!(r.method, Method::Proposed | Method::Inflation(0.0)))
                .filter_map(|r| r.path.clone().map(|path| (r.method.label(), path)))
                .collect();
            let refs: Vec<(&str, &riskplan::planner::Path)> = paths.iter().map(|(n, p)| (n.as_str(), p)).collect();
            let svg = scene_svg(&chain, &p.scene, &refs)?;
            write_atomic(&dir.join(format!("problem_{}.svg", p.id)), svg_with_config(&svg, &effective).as_bytes())?;
        }
    }
    eprintln!("report -> {}", dir.display());
    Ok(())
}
