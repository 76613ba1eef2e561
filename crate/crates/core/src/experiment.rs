//! Seeded, resumable sweeps over `(N, T, graph)` grids with per-instance JSON
//! artifacts and an aggregate CSV.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline;
use crate::config::{ExperimentConfig, Method, Mode, SampleSize, UndirectedSolver};
use crate::directed::{self, penalty, BasinConfig, CandidateSet};
use crate::error::{CovMatchError, Result};
use crate::graph::{gen_cyclic_directed, gen_dag, gen_undirected, Gso, WeightRange, DEFAULT_MAX_RETRIES};
use crate::io::GraphDoc;
use crate::rng::derive_seed;
use crate::sem::{asymptotic_cov, sample_cov, sample_data, CovSpec, SemModel};
use crate::undirected::{self, identifiability_check};

const GRAPH_STREAM: u64 = 0x6772_6170;
const DATA_STREAM: u64 = 0x6461_7461;
const SOLVER_STREAM: u64 = 0x736f_6c76;
const HOLDOUT_STREAM: u64 = 0x686f_6c64;

/// Margin by which an estimate must beat the truth's objective to be flagged.
pub const FLAG_MARGIN: f64 = 1e-9;

pub const FLAG_NONIDENTIFIABLE: &str = "nonidentifiable";
pub const FLAG_DEGENERATE: &str = "degenerate_spectrum";
pub const FLAG_UNDEFINED_METRIC: &str = "undefined_metric";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub mode: Mode,
    pub n: usize,
    pub t: SampleSize,
    pub graph: usize,
    pub method: Method,
    pub nse: f64,
    pub runtime_s: f64,
    pub objective: f64,
    pub flags: Vec<String>,
    pub estimate: GraphDoc,
}

impl InstanceResult {
    pub fn flagged(&self) -> bool {
        self.flags.iter().any(|f| f == FLAG_NONIDENTIFIABLE)
    }

    fn metric_defined(&self) -> bool {
        !self.flags.iter().any(|f| f == FLAG_UNDEFINED_METRIC)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: Mode,
    pub n: usize,
    pub t: SampleSize,
    pub method: Method,
    pub mean_nse: f64,
    pub std_nse: f64,
    pub mean_runtime: f64,
    pub n_flagged_nonidentifiable: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub instances: Vec<InstanceResult>,
    pub aggregate: Vec<AggregateRow>,
    pub aggregate_unflagged: Vec<AggregateRow>,
    pub aggregate_path: PathBuf,
    /// Instances loaded from disk instead of recomputed.
    pub resumed: usize,
}

/// Directed: the estimate attains a strictly lower penalty than the truth.
pub fn flag_nonidentifiable_directed(truth: &Gso, estimate: &Gso, alpha: f64) -> bool {
    penalty(estimate.weights(), alpha) < penalty(truth.weights(), alpha) - FLAG_MARGIN
}

/// Undirected: either uniqueness condition fails for the truth.
pub fn flag_nonidentifiable_undirected(truth: &Gso) -> Result<bool> {
    Ok(!identifiability_check(truth)?.identifiable())
}

pub fn flag_nonidentifiable(truth: &Gso, estimate: &Gso, alpha: f64) -> Result<bool> {
    match truth.kind() {
        crate::graph::GraphKind::Undirected => flag_nonidentifiable_undirected(truth),
        crate::graph::GraphKind::Directed => Ok(flag_nonidentifiable_directed(truth, estimate, alpha)),
    }
}

pub fn graph_seed(seed: u64, n: usize, g: usize) -> u64 {
    derive_seed(seed, &[GRAPH_STREAM, n as u64, g as u64])
}

pub fn data_seed(seed: u64, n: usize, g: usize, t: SampleSize) -> u64 {
    derive_seed(seed, &[DATA_STREAM, n as u64, g as u64, t.seed_tag()])
}

pub fn solver_seed(seed: u64, n: usize, g: usize, t: SampleSize, method: Method) -> u64 {
    derive_seed(seed, &[SOLVER_STREAM, n as u64, g as u64, t.seed_tag(), method.seed_tag()])
}

/// Ground truth of graph `g` at size `n`.
pub fn make_truth(cfg: &ExperimentConfig, n: usize, g: usize) -> Result<Gso> {
    let seed = graph_seed(cfg.seed, n, g);
    let k = cfg.edges_per_node;
    let m = ((k * n as f64).round() as usize).min(n * (n - 1) / 2);
    match cfg.mode {
        Mode::Undirected => gen_undirected(n, m, WeightRange::unit(), seed),
        Mode::Dag => gen_dag(n, (k / n as f64).min(1.0), WeightRange::dag_default(), seed),
        Mode::Cyclic => {
            let m = ((k * n as f64).round() as usize).min(n * (n - 1));
            gen_cyclic_directed(n, m, WeightRange::unit(), seed, DEFAULT_MAX_RETRIES)
        }
    }
}

pub fn make_cov(cfg: &ExperimentConfig, truth: &Gso, g: usize, t: SampleSize) -> Result<CovSpec> {
    let model = SemModel::white(truth.clone());
    match t {
        SampleSize::Asymptotic => asymptotic_cov(&model),
        SampleSize::Finite(tt) => Ok(sample_cov(&sample_data(&model, tt, data_seed(cfg.seed, truth.n(), g, t))?)),
    }
}

pub fn basin_config(cfg: &ExperimentConfig, seed: u64) -> BasinConfig {
    let mut b = BasinConfig::preset(cfg.budget, seed);
    b.workers = cfg.solver_workers;
    if let Some(k) = cfg.cycles {
        b.cycles = k;
    }
    if let Some(r) = cfg.r_max {
        b.fresh.r_max = r;
        b.candidate.r_max = r;
    }
    b
}

struct Estimate {
    s: Gso,
    objective: f64,
    flags: Vec<String>,
}

fn run_covmatch(cfg: &ExperimentConfig, truth: &Gso, c: &CovSpec, seed: u64) -> Result<Estimate> {
    let n = truth.n();
    match cfg.mode {
        Mode::Undirected => {
            let p = undirected::build_problem(c, cfg.alpha)?;
            let sol = match cfg.undirected_solver {
                UndirectedSolver::Exact => undirected::solve_exact(&p)?,
                UndirectedSolver::Bnb => undirected::solve_bnb(&p)?,
            };
            let mut flags = Vec::new();
            if n <= undirected::MAX_EXACT_N && flag_nonidentifiable_undirected(truth)? {
                flags.push(FLAG_NONIDENTIFIABLE.to_string());
            }
            if p.degenerate {
                flags.push(FLAG_DEGENERATE.to_string());
            }
            Ok(Estimate { s: p.reconstruct(&sol.q), objective: sol.objective, flags })
        }
        Mode::Dag | Mode::Cyclic => {
            let p = directed::build_directed(c, cfg.alpha)?;
            let bc = basin_config(cfg, seed);
            let c0 = CandidateSet::initial(n, bc.capacity, bc.capacity, bc.delta_start, seed)?;
            let (best, report) = directed::basin_hop_candidates(&p, c0, &bc)?;
            let s = directed::reconstruct(&p, &best);
            let mut flags = Vec::new();
            if flag_nonidentifiable_directed(truth, &s, cfg.alpha) {
                flags.push(FLAG_NONIDENTIFIABLE.to_string());
            }
            Ok(Estimate { s, objective: report.final_cost, flags })
        }
    }
}

fn run_sigmatch(cfg: &ExperimentConfig, truth: &Gso, c: &CovSpec) -> Result<Estimate> {
    let alpha = cfg.sigmatch_alpha();
    let s = baseline::sigmatch(c, alpha)?;
    let objective = baseline::sigmatch_objective(s.weights(), c.matrix(), alpha);
    let mut flags = Vec::new();
    let flagged = match cfg.mode {
        Mode::Undirected => truth.n() <= undirected::MAX_EXACT_N && flag_nonidentifiable_undirected(truth)?,
        _ => flag_nonidentifiable_directed(truth, &s, cfg.alpha),
    };
    if flagged {
        flags.push(FLAG_NONIDENTIFIABLE.to_string());
    }
    Ok(Estimate { s, objective, flags })
}

/// Run one `(N, T, graph, method)` cell.
pub fn run_instance(cfg: &ExperimentConfig, n: usize, t: SampleSize, g: usize, method: Method) -> Result<InstanceResult> {
    let truth = make_truth(cfg, n, g)?;
    let c = make_cov(cfg, &truth, g, t)?;
    let start = Instant::now();
    let est = match method {
        Method::Covmatch => run_covmatch(cfg, &truth, &c, solver_seed(cfg.seed, n, g, t, method))?,
        Method::Sigmatch => run_sigmatch(cfg, &truth, &c)?,
    };
    let runtime_s = if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let mut flags = est.flags;
    let nse = match baseline::nse(&truth, &est.s) {
        Ok(v) => v,
        Err(CovMatchError::UndefinedMetric(_)) => {
            flags.push(FLAG_UNDEFINED_METRIC.to_string());
            f64::NAN
        }
        Err(e) => return Err(e),
    };
    Ok(InstanceResult {
        mode: cfg.mode,
        n,
        t,
        graph: g,
        method,
        nse,
        runtime_s,
        objective: est.objective,
        flags,
        estimate: GraphDoc::from(&est.s),
    })
}

pub fn instance_path(dir: &Path, mode: Mode, n: usize, t: SampleSize, g: usize, method: Method) -> PathBuf {
    dir.join("instances").join(format!("{mode}_N{n}_T{t}_g{g}_{method}.json"))
}

fn load_instance(path: &Path) -> Option<InstanceResult> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Run (or resume) every cell of the grid and write the aggregate tables.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    fs::create_dir_all(dir.join("instances")).map_err(|e| {
        CovMatchError::Config(format!("cannot create output directory {}: {e}", dir.display()))
    })?;
    let mut cells = Vec::new();
    for &n in &cfg.n_list {
        for &t in &cfg.t_list {
            for &method in &cfg.methods {
                for g in 0..cfg.n_graphs {
                    cells.push((n, t, method, g));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CovMatchError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<(InstanceResult, bool)>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, t, method, g)| {
                let path = instance_path(&dir, cfg.mode, n, t, g, method);
                if let Some(done) = load_instance(&path) {
                    return Ok((done, true));
                }
                let r = run_instance(cfg, n, t, g, method)?;
                let tmp = path.with_extension("json.tmp");
                fs::write(&tmp, serde_json::to_string_pretty(&r)?)?;
                fs::rename(&tmp, &path)?;
                Ok((r, false))
            })
            .collect()
    });
    let mut instances = Vec::with_capacity(results.len());
    let mut resumed = 0;
    for r in results {
        let (inst, was_loaded) = r?;
        resumed += was_loaded as usize;
        instances.push(inst);
    }
    let all = aggregate(cfg, &instances, false);
    let aggregate_unflagged = aggregate(cfg, &instances, true);
    let aggregate_path = dir.join("aggregate.csv");
    write_aggregate(&aggregate_path, &all)?;
    write_aggregate(&dir.join("aggregate_excluding_flagged.csv"), &aggregate_unflagged)?;
    Ok(ExperimentOutput { instances, aggregate: all, aggregate_unflagged, aggregate_path, resumed })
}

/// One row per `(N, T, method)`, in configuration order. With
/// `exclude_flagged` the statistics skip instances flagged non-identifiable.
pub fn aggregate(cfg: &ExperimentConfig, instances: &[InstanceResult], exclude_flagged: bool) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        for &t in &cfg.t_list {
            for &method in &cfg.methods {
                let cell: Vec<&InstanceResult> = instances
                    .iter()
                    .filter(|r| r.n == n && r.t == t && r.method == method)
                    .collect();
                let n_flagged = cell.iter().filter(|r| r.flagged()).count();
                let used: Vec<&&InstanceResult> = cell
                    .iter()
                    .filter(|r| r.metric_defined() && !(exclude_flagged && r.flagged()))
                    .collect();
                let (mean, std) = mean_std(used.iter().map(|r| r.nse));
                let mean_runtime = if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.iter().map(|r| r.runtime_s).sum::<f64>() / cell.len() as f64
                };
                rows.push(AggregateRow {
                    mode: cfg.mode,
                    n,
                    t,
                    method,
                    mean_nse: mean,
                    std_nse: std,
                    mean_runtime,
                    n_flagged_nonidentifiable: n_flagged,
                });
            }
        }
    }
    rows
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64;
    (mean, var.sqrt())
}

pub const AGGREGATE_HEADER: [&str; 8] =
    ["mode", "N", "T", "method", "mean_nse", "std_nse", "mean_runtime", "n_flagged_nonidentifiable"];

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.mode.to_string(),
            r.n.to_string(),
            r.t.to_string(),
            r.method.to_string(),
            format!("{:?}", r.mean_nse),
            format!("{:?}", r.std_nse),
            format!("{:?}", r.mean_runtime),
            r.n_flagged_nonidentifiable.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != AGGREGATE_HEADER.len() {
            return Err(CovMatchError::Input(format!("aggregate row has {} fields", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| CovMatchError::Input(format!("bad number {:?}", &rec[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|_| CovMatchError::Input(format!("bad integer {:?}", &rec[i])))
        };
        rows.push(AggregateRow {
            mode: rec[0].parse()?,
            n: int(1)?,
            t: rec[2].parse()?,
            method: match &rec[3] {
                "covmatch" => Method::Covmatch,
                "sigmatch" => Method::Sigmatch,
                other => return Err(CovMatchError::Input(format!("unknown method {other:?}"))),
            },
            mean_nse: num(4)?,
            std_nse: num(5)?,
            mean_runtime: num(6)?,
            n_flagged_nonidentifiable: int(7)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaChoice {
    pub n: usize,
    pub t: SampleSize,
    pub method: Method,
    pub alpha: f64,
    /// `(alpha, mean NSE)` for every grid point, in ascending alpha.
    pub scores: Vec<(f64, f64)>,
}

/// Seed of the held-out block used for tuning.
pub fn holdout_seed(seed: u64) -> u64 {
    derive_seed(seed, &[HOLDOUT_STREAM])
}

/// Per `(N, T, method)`, the alpha with the lowest mean NSE on a held-out
/// seed block; ties go to the smaller alpha.
pub fn grid_search_alpha(cfg: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<AlphaChoice>> {
    if alphas.is_empty() {
        return Err(CovMatchError::Config("alpha grid is empty".into()));
    }
    let mut grid: Vec<f64> = alphas.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let base = cfg.output_dir();
    let mut runs = Vec::with_capacity(grid.len());
    for (i, &a) in grid.iter().enumerate() {
        let mut c = cfg.clone();
        c.alpha = a;
        c.sigmatch_alpha = Some(a);
        c.seed = holdout_seed(cfg.seed);
        c.output_dir = Some(base.join("grid").join(format!("alpha_{i}")));
        runs.push(run_experiment(&c)?.aggregate);
    }
    let mut out = Vec::new();
    for (row_idx, row) in runs[0].iter().enumerate() {
        let scores: Vec<(f64, f64)> = grid.iter().zip(&runs).map(|(&a, r)| (a, r[row_idx].mean_nse)).collect();
        let mut best = scores[0];
        for &s in &scores[1..] {
            if s.1 < best.1 || best.1.is_nan() && !s.1.is_nan() {
                best = s;
            }
        }
        out.push(AlphaChoice { n: row.n, t: row.t, method: row.method, alpha: best.0, scores });
    }
    Ok(out)
}
