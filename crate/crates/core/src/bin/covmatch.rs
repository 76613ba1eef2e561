use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use covmatch::baseline;
use covmatch::config::{ExperimentConfig, SampleSize};
use covmatch::directed::{self, BasinConfig, Budget, CandidateSet};
use covmatch::experiment;
use covmatch::graph::{self, DEFAULT_MAX_RETRIES};
use covmatch::io;
use covmatch::sem::{self, SemModel};
use covmatch::undirected::{self, identifiability_check, MAX_EXACT_N};
use covmatch::{CovMatchError, CovSource, CovSpec, DataMatrix, GraphKind, Gso, Result, WeightRange};

#[derive(Parser)]
#[command(name = "covmatch", version, about = "Graph identification from covariance by covariance matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random weighted graph.
    Generate(GenerateArgs),
    /// Sample SEM data and/or its covariance from a graph.
    Simulate(SimulateArgs),
    /// Recover a graph from a covariance matrix.
    Identify(IdentifyArgs),
    /// Baselines and real-data helpers.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Score an estimate against the truth.
    Evaluate(EvaluateArgs),
    /// Run a configured sweep.
    Experiment(ExperimentArgs),
    /// Tune alpha on a held-out seed block.
    GridSearch(GridSearchArgs),
    /// Render an aggregate CSV as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenMode {
    Undirected,
    Dag,
    Cyclic,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum IdMode {
    Undirected,
    Directed,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Undirected,
    Directed,
}

impl From<KindArg> for GraphKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Undirected => GraphKind::Undirected,
            KindArg::Directed => GraphKind::Directed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Exact,
    Bnb,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    mode: GenMode,
    #[arg(long)]
    n: usize,
    /// Edge count for undirected and cyclic graphs [default: 2N].
    #[arg(long)]
    edges: Option<usize>,
    /// Edge probability for DAGs [default: 2/N].
    #[arg(long)]
    prob: Option<f64>,
    /// Smallest weight magnitude.
    #[arg(long, requires = "w_max")]
    w_min: Option<f64>,
    /// Largest weight magnitude.
    #[arg(long, requires = "w_min")]
    w_max: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file, `.json` or dense `.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Ground-truth graph, `.json` or dense CSV.
    #[arg(long)]
    graph: PathBuf,
    /// Kind of a CSV graph.
    #[arg(long, value_enum, default_value = "directed")]
    kind: KindArg,
    /// Number of samples, or `asymptotic`.
    #[arg(long)]
    samples: SampleSize,
    /// Noise covariance (dense CSV) [default: identity].
    #[arg(long)]
    sigma_e: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data matrix output, N rows by T columns.
    #[arg(long)]
    data_out: Option<PathBuf>,
    /// Covariance output.
    #[arg(long)]
    cov_out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long, value_enum)]
    mode: IdMode,
    #[arg(long)]
    alpha: f64,
    /// Covariance matrix (dense CSV).
    #[arg(long)]
    cov: PathBuf,
    /// Noise covariance (dense CSV).
    #[arg(long)]
    sigma_e: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    budget: Budget,
    /// Basin hopping cycles, overriding the budget preset.
    #[arg(long)]
    cycles: Option<usize>,
    /// Floor for covariance eigenvalues (undirected only); off by default.
    #[arg(long)]
    eig_floor: Option<f64>,
    #[arg(long, value_enum, default_value = "auto")]
    solver: SolverArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Estimated graph output (CSV).
    #[arg(long, default_value = "estimate.csv")]
    out: PathBuf,
    /// JSON report output [default: stdout].
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Node-domain signal matching.
    Sigmatch {
        #[arg(long)]
        cov: PathBuf,
        #[arg(long)]
        alpha: f64,
        /// Symmetric, hollow variant.
        #[arg(long)]
        symmetric: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kendall copula covariance of a data matrix (N rows by T columns).
    Kendall {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Binary consensus of several estimates.
    Consensus {
        #[arg(long, required = true, num_args = 1..)]
        graphs: Vec<PathBuf>,
        #[arg(long)]
        top_k: usize,
        #[arg(long)]
        min_freq: usize,
        /// Treat inputs as undirected.
        #[arg(long)]
        undirected: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
    /// Zero estimate entries below this magnitude before scoring.
    #[arg(long)]
    prune: Option<f64>,
    /// Magnitude at which an estimate entry counts as an edge.
    #[arg(long, default_value_t = 1e-8)]
    threshold: f64,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Threads over instances.
    #[arg(long)]
    workers: Option<usize>,
    /// Threads inside each directed solver.
    #[arg(long)]
    solver_workers: Option<usize>,
    #[arg(long)]
    n_graphs: Option<usize>,
    #[arg(long)]
    budget: Option<Budget>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Write zero runtimes for byte-reproducible output.
    #[arg(long)]
    no_timing: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(d) = &self.output_dir {
            cfg.output_dir = Some(d.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(w) = self.solver_workers {
            cfg.solver_workers = w;
        }
        if let Some(g) = self.n_graphs {
            cfg.n_graphs = g;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if self.no_timing {
            cfg.timing = false;
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GridSearchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated alpha grid.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct PlotArgs {
    /// Aggregate CSV written by `experiment`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mean NSE")]
    title: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Simulate(a) => simulate(a),
        Command::Identify(a) => identify(a),
        Command::Baseline(b) => baseline_cmd(b),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => {
            let mut cfg = ExperimentConfig::from_file(&a.config)?;
            a.overrides.apply(&mut cfg)?;
            let out = experiment::run_experiment(&cfg)?;
            eprintln!(
                "{} instances ({} resumed); aggregate written to {}",
                out.instances.len(),
                out.resumed,
                out.aggregate_path.display()
            );
            Ok(())
        }
        Command::GridSearch(a) => {
            let mut cfg = ExperimentConfig::from_file(&a.config)?;
            a.overrides.apply(&mut cfg)?;
            let choices = experiment::grid_search_alpha(&cfg, &a.alphas)?;
            let text = serde_json::to_string_pretty(&choices)?;
            std::fs::write(cfg.output_dir().join("grid_search.json"), &text)?;
            println!("{text}");
            Ok(())
        }
        Command::Plot(a) => plot(a),
    }
}

fn load_cov(path: &Path) -> Result<CovSpec> {
    CovSpec::new(io::load_matrix_csv(path)?, CovSource::External)
}

fn load_truth(path: &Path, kind: GraphKind) -> Result<Gso> {
    let g = io::load_graph(path, kind)?;
    Gso::new(g.kind(), g.into_weights())
}

fn write_report(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let range = |default: WeightRange| match (a.w_min, a.w_max) {
        (Some(lo), Some(hi)) => WeightRange::two_sided(lo, hi),
        _ => Ok(default),
    };
    let edges = a.edges.unwrap_or(2 * a.n);
    let g = match a.mode {
        GenMode::Undirected => graph::gen_undirected(a.n, edges, range(WeightRange::unit())?, a.seed)?,
        GenMode::Dag => {
            let p = a.prob.unwrap_or(2.0 / a.n.max(1) as f64).min(1.0);
            graph::gen_dag(a.n, p, range(WeightRange::dag_default())?, a.seed)?
        }
        GenMode::Cyclic => {
            graph::gen_cyclic_directed(a.n, edges, range(WeightRange::unit())?, a.seed, DEFAULT_MAX_RETRIES)?
        }
    };
    io::save_graph(&a.out, &g)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.data_out.is_none() && a.cov_out.is_none() {
        return Err(CovMatchError::Parameter("nothing to write: pass --data-out and/or --cov-out".into()));
    }
    let s = load_truth(&a.graph, a.kind.into())?;
    let model = match &a.sigma_e {
        Some(p) => SemModel::colored(s, io::load_matrix_csv(p)?)?,
        None => SemModel::white(s),
    };
    match a.samples {
        SampleSize::Asymptotic => {
            if a.data_out.is_some() {
                return Err(CovMatchError::Parameter("asymptotic mode has no data matrix".into()));
            }
            let c = sem::asymptotic_cov(&model)?;
            io::save_matrix_csv(a.cov_out.as_deref().expect("checked above"), c.matrix())
        }
        SampleSize::Finite(t) => {
            let x = sem::sample_data(&model, t, a.seed)?;
            if let Some(p) = &a.data_out {
                io::save_matrix_csv(p, x.x())?;
            }
            if let Some(p) = &a.cov_out {
                io::save_matrix_csv(p, sem::sample_cov(&x).matrix())?;
            }
            Ok(())
        }
    }
}

fn identify(a: IdentifyArgs) -> Result<()> {
    let c = load_cov(&a.cov)?;
    let sigma_e = a.sigma_e.as_deref().map(io::load_matrix_csv).transpose()?;
    let start = Instant::now();
    match a.mode {
        IdMode::Undirected => {
            let p = match (&sigma_e, a.eig_floor) {
                (Some(_), Some(_)) => {
                    return Err(CovMatchError::Parameter("--eig-floor is not supported with --sigma-e".into()))
                }
                (Some(se), None) => undirected::build_problem_colored(&c, se, a.alpha)?,
                (None, Some(f)) => undirected::build_problem_floored(&c, a.alpha, f)?,
                (None, None) => undirected::build_problem(&c, a.alpha)?,
            };
            let pool = pool(a.workers)?;
            let sol = pool.install(|| match a.solver {
                SolverArg::Exact => undirected::solve_exact(&p),
                SolverArg::Bnb => undirected::solve_bnb(&p),
                SolverArg::Auto if p.n() <= MAX_EXACT_N => undirected::solve_exact(&p),
                SolverArg::Auto => undirected::solve_bnb(&p),
            })?;
            let wall_time = start.elapsed().as_secs_f64();
            let s = p.reconstruct(&sol.q);
            io::save_matrix_csv(&a.out, s.weights())?;
            let mut hollow = s.weights().clone();
            hollow.fill_diagonal(0.0);
            let ident = identifiability_check(&Gso::estimate(GraphKind::Undirected, hollow)).ok();
            write_report(
                a.report.as_deref(),
                &json!({
                    "objective": sol.objective,
                    "q": sol.q.as_slice(),
                    "cond_i": ident.as_ref().map(|r| r.cond_i),
                    "cond_ii": ident.as_ref().map(|r| r.cond_ii),
                    "degenerate_spectrum": p.degenerate,
                    "wall_time": wall_time,
                }),
            )
        }
        IdMode::Directed => {
            if a.eig_floor.is_some() {
                return Err(CovMatchError::Parameter("--eig-floor applies to undirected mode only".into()));
            }
            let p = match &sigma_e {
                Some(se) => directed::build_directed_colored(&c, se, a.alpha)?,
                None => directed::build_directed(&c, a.alpha)?,
            };
            let mut cfg = BasinConfig::preset(a.budget, a.seed);
            cfg.workers = a.workers;
            if let Some(k) = a.cycles {
                cfg.cycles = k;
            }
            let c0 = CandidateSet::initial(p.n(), cfg.capacity, cfg.capacity, cfg.delta_start, a.seed)?;
            let (best, report) = directed::basin_hop_candidates(&p, c0, &cfg)?;
            let s = directed::reconstruct(&p, &best);
            io::save_matrix_csv(&a.out, s.weights())?;
            write_report(
                a.report.as_deref(),
                &json!({
                    "final_cost": report.final_cost,
                    "cycles_used": report.cycles_used,
                    "candidate_costs": report.candidate_costs,
                    "wall_time": report.wall_time,
                    "seed": report.seed,
                }),
            )
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(CovMatchError::Parameter("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CovMatchError::Parameter(format!("worker pool: {e}")))
}

fn baseline_cmd(b: BaselineCommand) -> Result<()> {
    match b {
        BaselineCommand::Sigmatch { cov, alpha, symmetric, out } => {
            let c = load_cov(&cov)?;
            let s = if symmetric { baseline::sigmatch_symmetric(&c, alpha)? } else { baseline::sigmatch(&c, alpha)? };
            io::save_matrix_csv(&out, s.weights())
        }
        BaselineCommand::Kendall { data, out } => {
            let x = DataMatrix::new(io::load_matrix_csv(&data)?)?;
            io::save_matrix_csv(&out, baseline::kendall_copula_cov(&x)?.matrix())
        }
        BaselineCommand::Consensus { graphs, top_k, min_freq, undirected, out } => {
            let kind = if undirected { GraphKind::Undirected } else { GraphKind::Directed };
            let gs = graphs.iter().map(|p| io::load_graph(p, kind)).collect::<Result<Vec<_>>>()?;
            let c = baseline::consensus_graph(&gs, top_k, min_freq)?;
            io::save_graph(&out, &c)
        }
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let truth = io::load_graph(&a.truth, GraphKind::Directed)?;
    let mut est = io::load_graph(&a.estimate, GraphKind::Directed)?;
    if truth.n() != est.n() {
        return Err(CovMatchError::Input(format!("truth has N = {}, estimate has N = {}", truth.n(), est.n())));
    }
    if let Some(w) = a.prune {
        est = baseline::prune(&est, w)?;
    }
    let report = baseline::evaluate(&truth, &est, a.threshold, 0.0)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[cfg(feature = "plot")]
fn plot(a: PlotArgs) -> Result<()> {
    let rows = experiment::read_aggregate(&a.input)?;
    std::fs::write(&a.out, covmatch::plot::nse_chart(&rows, &a.title)?)?;
    Ok(())
}

#[cfg(not(feature = "plot"))]
fn plot(_: PlotArgs) -> Result<()> {
    Err(CovMatchError::Config("built without the `plot` feature".into()))
}
