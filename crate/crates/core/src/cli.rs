//! `qsched` command line: single trials, size sweeps and offline
//! verification of emitted traces.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid flags or files,
//! 3 round cap reached.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    self, convergence_stats, GraphSource, InstanceRecipe, InstanceSource, SweepStats, TrialConfig,
    TrialError, TrialResult,
};
use crate::oracle::{self, VerificationReport};
use crate::problem::{ProblemInstance, ValueSpec};
use crate::topology::Digraph;

pub const TOOL: &str = "qsched";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAP: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qsched", version, about = "Quantized ratio consensus for CPU workload balancing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one or more trials, verify them, and emit a JSON or CSV record.
    Run(RunArgs),
    /// Run trials across network sizes and emit aggregate statistics.
    Sweep(SweepArgs),
    /// Re-verify a JSON record emitted by `run`.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Number of nodes (inferred from list specs or a graph file if omitted).
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Probability of each directed edge in generated graphs.
    #[arg(long, default_value_t = 0.5)]
    pub edge_prob: f64,
    /// Scaling bound; defaults to the smallest power of ten covering total capacity.
    #[arg(long)]
    pub pi_upper: Option<u64>,
    /// Load spec: list:a,b,..  uniform:lo,hi  alt:even,odd  const:c
    #[arg(long)]
    pub loads: Option<ValueSpec>,
    /// Shorthand for `--loads uniform:<min>,<max>`.
    #[arg(long, requires = "load_max", conflicts_with = "loads")]
    pub load_min: Option<u64>,
    #[arg(long, requires = "load_min", conflicts_with = "loads")]
    pub load_max: Option<u64>,
    /// Utilization spec, same syntax as --loads [default: const:0]
    #[arg(long)]
    pub utils: Option<ValueSpec>,
    /// Capacity spec, same syntax as --loads [default: alt:100,300]
    #[arg(long)]
    pub capacities: Option<ValueSpec>,
    /// Edge-list file (`n <count>` header, `receiver sender` lines).
    #[arg(long)]
    pub graph_file: Option<PathBuf>,
    /// Instance file (`nodes <n> pi_upper <P> diameter <D>` header).
    #[arg(long, conflicts_with_all = ["loads", "load_min", "load_max", "utils", "capacities", "pi_upper"])]
    pub instance_file: Option<PathBuf>,
    /// Window length to use instead of the graph diameter (must be >= it).
    #[arg(long)]
    pub diameter_bound: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub max_graph_retries: u32,
    /// Epsilon for the reported convergence bounds.
    #[arg(long, default_value_t = oracle::DEFAULT_EPS)]
    pub eps: f64,
    /// Worker threads for running trials in parallel.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Reject instances whose pi_upper is below total capacity.
    #[arg(long)]
    pub strict_bound: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Number of trials, with seeds seed..seed+trials-1.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Record per-round (y, z, q_s) for every node.
    #[arg(long)]
    pub snapshots: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the first trial's graph as an edge list.
    #[arg(long)]
    pub save_graph: Option<PathBuf>,
    /// Write the first trial's instance file.
    #[arg(long)]
    pub save_instance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub trace_file: PathBuf,
    /// Overrides the epsilon stored in the record.
    #[arg(long)]
    pub eps: Option<f64>,
}

/// Every flag after defaults and inference, echoed into each record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub command: String,
    pub nodes: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub edge_prob: Option<f64>,
    pub graph_file: Option<String>,
    pub instance_file: Option<String>,
    pub pi_upper: Option<u64>,
    pub loads: Option<ValueSpec>,
    pub utils: Option<ValueSpec>,
    pub capacities: Option<ValueSpec>,
    pub diameter_bound: Option<u32>,
    pub seed: u64,
    pub trials: usize,
    pub max_rounds: Option<u64>,
    pub max_graph_retries: u32,
    pub eps: f64,
    pub snapshots: bool,
    pub strict_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub seed: u64,
    pub error: String,
}

/// One JSON document per invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: ConfigEcho,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trials: Vec<TrialResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verification: Vec<VerificationReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<TrialFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepStats>,
}

/// A one-line usage error.
#[derive(Debug)]
struct Usage(String);

impl<E: std::fmt::Display> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args, out, err),
        Command::Sweep(args) => cmd_sweep(&args, out, err),
        Command::Verify(args) => cmd_verify(&args, out, err),
    };
    match result {
        Ok(code) => code,
        Err(Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn read_file(path: &PathBuf) -> Result<String, Usage> {
    fs::read_to_string(path).map_err(|e| Usage(format!("cannot read {}: {e}", path.display())))
}

struct Scenario {
    base: TrialConfig,
    echo: ConfigEcho,
}

fn build_scenario(s: &ScenarioArgs, command: &str, fixed_nodes: Option<usize>) -> Result<Scenario, Usage> {
    if !(s.eps > 0.0 && s.eps < 1.0) {
        return Err(Usage(format!("--eps must lie in (0, 1), got {}", s.eps)));
    }
    if s.workers == Some(0) {
        return Err(Usage("--workers must be positive".into()));
    }
    if s.diameter_bound == Some(0) {
        return Err(Usage("--diameter-bound must be positive".into()));
    }
    let graph = match &s.graph_file {
        Some(path) => {
            let g = Digraph::from_edge_list(&read_file(path)?)
                .map_err(|e| Usage(format!("{}: {e}", path.display())))?;
            if !g.is_strongly_connected() {
                return Err(Usage(format!("{}: graph is not strongly connected", path.display())));
            }
            Some(Arc::new(g))
        }
        None => {
            if !(s.edge_prob > 0.0 && s.edge_prob <= 1.0) {
                return Err(Usage(format!("--edge-prob must lie in (0, 1], got {}", s.edge_prob)));
            }
            None
        }
    };
    let graph_nodes = graph.as_ref().map(|g| g.node_count());

    let mut echo = ConfigEcho {
        command: command.into(),
        nodes: None,
        sizes: None,
        edge_prob: graph.is_none().then_some(s.edge_prob),
        graph_file: s.graph_file.as_ref().map(|p| p.display().to_string()),
        instance_file: s.instance_file.as_ref().map(|p| p.display().to_string()),
        pi_upper: s.pi_upper,
        loads: None,
        utils: None,
        capacities: None,
        diameter_bound: s.diameter_bound,
        seed: s.seed,
        trials: 0,
        max_rounds: s.max_rounds,
        max_graph_retries: s.max_graph_retries,
        eps: s.eps,
        snapshots: false,
        strict_bound: s.strict_bound,
    };

    let instance = match &s.instance_file {
        Some(path) => {
            let mut inst = ProblemInstance::from_text(&read_file(path)?)
                .map_err(|e| Usage(format!("{}: {e}", path.display())))?;
            if let Some(n) = s.nodes.or(fixed_nodes) {
                if n != inst.node_count() {
                    return Err(Usage(format!("--nodes {n} but instance file has {} nodes", inst.node_count())));
                }
            }
            if s.diameter_bound.is_some() {
                inst = inst.with_diameter_bound(s.diameter_bound);
            }
            echo.nodes = Some(inst.node_count());
            echo.pi_upper = Some(inst.pi_upper());
            echo.diameter_bound = inst.diameter_bound();
            InstanceSource::Given { instance: inst }
        }
        None => {
            let loads = match (&s.loads, s.load_min, s.load_max) {
                (Some(spec), _, _) => spec.clone(),
                (None, Some(lo), Some(hi)) if lo <= hi => ValueSpec::Uniform { lo, hi },
                (None, Some(lo), Some(hi)) => {
                    return Err(Usage(format!("--load-min {lo} exceeds --load-max {hi}")))
                }
                _ => ValueSpec::Uniform { lo: 1, hi: 100 },
            };
            let utils = s.utils.clone().unwrap_or(ValueSpec::Constant(0));
            let capacities = s.capacities.clone().unwrap_or(ValueSpec::Alternating { even: 100, odd: 300 });
            let hints = [loads.len_hint(), utils.len_hint(), capacities.len_hint(), graph_nodes, s.nodes, fixed_nodes];
            let mut n = None;
            for h in hints.into_iter().flatten() {
                match n {
                    Some(prev) if prev != h => {
                        return Err(Usage(format!("inconsistent node counts: {prev} vs {h}")))
                    }
                    _ => n = Some(h),
                }
            }
            if command == "run" && n.is_none() {
                return Err(Usage("--nodes is required unless implied by a list spec or --graph-file".into()));
            }
            if let Some(n) = n {
                if n < 2 && graph.is_none() {
                    return Err(Usage("generated graphs need at least 2 nodes".into()));
                }
            }
            echo.nodes = n;
            echo.loads = Some(loads.clone());
            echo.utils = Some(utils.clone());
            echo.capacities = Some(capacities.clone());
            InstanceSource::Generated(InstanceRecipe {
                nodes: n.unwrap_or(0),
                loads,
                utils,
                capacities,
                pi_upper: s.pi_upper,
                diameter_bound: s.diameter_bound,
            })
        }
    };
    if let (Some(g), InstanceSource::Given { instance }) = (&graph, &instance) {
        if g.node_count() != instance.node_count() {
            return Err(Usage(format!(
                "graph file has {} nodes but instance file has {}",
                g.node_count(),
                instance.node_count()
            )));
        }
    }
    let graph = match graph {
        Some(g) => GraphSource::Given(g),
        None => GraphSource::Random { edge_prob: s.edge_prob },
    };
    let mut base = TrialConfig::new(instance, graph, s.seed);
    base.max_rounds = s.max_rounds;
    base.max_graph_retries = s.max_graph_retries;
    Ok(Scenario { base, echo })
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, Usage> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Usage(format!("cannot start worker pool: {e}")))
}

/// Whether an error stems from the inputs rather than the protocol run.
fn is_input_error(e: &TrialError) -> bool {
    !matches!(
        e,
        TrialError::Protocol(_)
            | TrialError::Conservation { .. }
            | TrialError::EmptyNode { .. }
            | TrialError::WindowMismatch { .. }
            | TrialError::NonMonotoneExtrema { .. }
            | TrialError::PartialTermination { .. }
    )
}

fn run_one(cfg: &TrialConfig, strict: bool, save_graph: bool) -> Result<(TrialResult, Option<Arc<Digraph>>), TrialError> {
    let (inst, graph, retries) = engine::resolve_inputs(cfg)?;
    if strict {
        inst.check_capacity_bound()?;
    }
    let result = engine::run_on(cfg, &inst, &graph, retries)?;
    Ok((result, save_graph.then_some(graph)))
}

fn emit(out: &mut dyn Write, path: &Option<PathBuf>, body: &str) -> Result<(), Usage> {
    match path {
        Some(p) => fs::write(p, body).map_err(|e| Usage(format!("cannot write {}: {e}", p.display()))),
        None => out
            .write_all(body.as_bytes())
            .map_err(|e| Usage(format!("cannot write output: {e}"))),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Usage> {
    if args.trials == 0 {
        return Err(Usage("--trials must be positive".into()));
    }
    let Scenario { mut base, mut echo } = build_scenario(&args.scenario, "run", None)?;
    base.snapshots = args.snapshots;
    echo.trials = args.trials;
    echo.snapshots = args.snapshots;
    let strict = args.scenario.strict_bound;
    let save_graph = args.save_graph.is_some();

    let pool = thread_pool(args.scenario.workers)?;
    let outcomes: Vec<(u64, Result<(TrialResult, Option<Arc<Digraph>>), TrialError>)> = pool.install(|| {
        (0..args.trials as u64)
            .into_par_iter()
            .map(|t| {
                let cfg = base.with_seed(base.seed.wrapping_add(t));
                (cfg.seed, run_one(&cfg, strict, save_graph && t == 0))
            })
            .collect()
    });

    let mut trials = Vec::new();
    let mut failures = Vec::new();
    let mut first_graph = None;
    for (seed, outcome) in outcomes {
        match outcome {
            Ok((result, graph)) => {
                first_graph = first_graph.or(graph);
                trials.push(result);
            }
            Err(e) if is_input_error(&e) => return Err(Usage(format!("seed {seed}: {e}"))),
            Err(e) => {
                let _ = writeln!(err, "seed {seed}: {e}");
                failures.push(TrialFailure { seed, error: e.to_string() });
            }
        }
    }
    if let (Some(path), Some(g)) = (&args.save_graph, &first_graph) {
        fs::write(path, g.to_edge_list()).map_err(|e| Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    if let (Some(path), Some(t)) = (&args.save_instance, trials.first()) {
        fs::write(path, t.instance.to_text()).map_err(|e| Usage(format!("cannot write {}: {e}", path.display())))?;
    }

    let verification: Vec<VerificationReport> = trials
        .iter()
        .map(|t| oracle::verify_trial(t, &t.instance, args.scenario.eps))
        .collect();
    if args.scenario.graph_file.is_none() {
        if let Some(t) = trials.first() {
            echo.nodes = Some(t.node_count);
        }
    }

    let capped = trials.iter().any(|t| !t.terminated());
    let all_pass = failures.is_empty() && verification.iter().all(|v| v.pass);
    for v in verification.iter().filter(|v| !v.pass) {
        for issue in v.issues.iter().take(5) {
            let _ = writeln!(err, "seed {}: {issue}", v.seed);
        }
    }

    let body = match args.format {
        Format::Json => {
            let record = OutputRecord {
                tool: TOOL.into(),
                version: VERSION.into(),
                seed: args.scenario.seed,
                config: echo,
                trials,
                verification,
                failures,
                sweep: None,
            };
            let mut s = serde_json::to_string(&record).map_err(|e| Usage(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Csv => run_csv(&trials, &verification),
    };
    emit(out, &args.out, &body)?;

    Ok(if capped {
        EXIT_CAP
    } else if all_pass {
        EXIT_OK
    } else {
        EXIT_VERIFY
    })
}

fn run_csv(trials: &[TrialResult], verification: &[VerificationReport]) -> String {
    let mut s = String::from(
        "tool,version,seed,nodes,edges,diameter,window,graph_retries,termination_round,first_converge,last_converge,mean_converge,converge_window,q_tasks_num,q_tasks_den,verified\n",
    );
    for (t, v) in trials.iter().zip(verification) {
        let stats = convergence_stats(t).ok();
        let _ = writeln!(
            s,
            "{TOOL},{VERSION},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t.seed,
            t.node_count,
            t.edge_count,
            t.diameter,
            t.window,
            t.graph_retries,
            opt(t.termination_round),
            t.first_converge,
            t.last_converge,
            opt(stats.map(|s| s.mean)),
            opt(stats.map(|s| s.window)),
            t.q_tasks_num,
            t.q_tasks_den,
            v.pass
        );
    }
    s
}

pub fn sweep_csv(stats: &SweepStats, seed: u64) -> String {
    let mut s = String::from(
        "tool,version,seed,size,trials,failed,capped,mean_termination,std_termination,mean_first_converge,std_first_converge,mean_last_converge,std_last_converge,mean_window,std_window,mean_wall_seconds,std_wall_seconds\n",
    );
    for r in &stats.rows {
        let pair = |x: Option<engine::Summary>| match x {
            Some(x) => format!("{},{}", x.mean, x.std),
            None => ",".into(),
        };
        let _ = writeln!(
            s,
            "{TOOL},{VERSION},{seed},{},{},{},{},{},{},{},{},{}",
            r.size,
            r.trials,
            r.failed,
            r.capped,
            pair(r.termination),
            pair(r.first_converge),
            pair(r.last_converge),
            pair(r.window),
            pair(r.wall_seconds)
        );
    }
    s
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Usage> {
    if args.trials == 0 {
        return Err(Usage("--trials must be positive".into()));
    }
    if args.sizes.iter().any(|&n| n < 2) {
        return Err(Usage("sweep sizes must be at least 2".into()));
    }
    if args.scenario.instance_file.is_some() || args.scenario.graph_file.is_some() {
        let fixed = args.sizes.len() == 1;
        if !fixed {
            return Err(Usage("file-driven sweeps take exactly one size".into()));
        }
    }
    if args.scenario.nodes.is_some() {
        return Err(Usage("use --sizes instead of --nodes for sweeps".into()));
    }
    let fixed_nodes = (args.sizes.len() == 1).then(|| args.sizes[0]);
    let Scenario { base, mut echo } = build_scenario(&args.scenario, "sweep", fixed_nodes)?;
    echo.trials = args.trials;
    echo.nodes = None;
    echo.sizes = Some(args.sizes.clone());

    let pool = thread_pool(args.scenario.workers)?;
    let trials = pool.install(|| engine::run_sweep_trials(&args.sizes, args.trials, &base));
    let mut input_error = None;
    for t in &trials {
        if let Err(e) = &t.outcome {
            let _ = writeln!(err, "size {} seed {}: {e}", t.size, t.seed);
            if is_input_error(e) && input_error.is_none() {
                input_error = Some(format!("size {} seed {}: {e}", t.size, t.seed));
            }
        }
    }
    if let Some(msg) = input_error {
        return Err(Usage(msg));
    }
    let stats = engine::aggregate(&args.sizes, &trials);
    let body = match args.format {
        Format::Csv => sweep_csv(&stats, args.scenario.seed),
        Format::Json => {
            let failures = trials
                .iter()
                .filter_map(|t| t.outcome.as_ref().err().map(|e| TrialFailure { seed: t.seed, error: e.to_string() }))
                .collect();
            let record = OutputRecord {
                tool: TOOL.into(),
                version: VERSION.into(),
                seed: args.scenario.seed,
                config: echo,
                trials: Vec::new(),
                verification: Vec::new(),
                failures,
                sweep: Some(stats.clone()),
            };
            let mut s = serde_json::to_string(&record).map_err(|e| Usage(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    emit(out, &args.out, &body)?;

    let failed = stats.rows.iter().any(|r| r.failed > 0);
    let capped = stats.rows.iter().any(|r| r.capped > 0);
    Ok(if capped {
        EXIT_CAP
    } else if failed {
        EXIT_VERIFY
    } else {
        EXIT_OK
    })
}

#[derive(Debug, Serialize)]
struct VerifySummary<'a> {
    tool: &'a str,
    version: &'a str,
    trace_version: &'a str,
    pass: bool,
    reports: Vec<VerificationReport>,
}

fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Usage> {
    let text = read_file(&args.trace_file)?;
    let record: OutputRecord = serde_json::from_str(&text)
        .map_err(|e| Usage(format!("{}: not a {TOOL} run record: {e}", args.trace_file.display())))?;
    if record.tool != TOOL {
        return Err(Usage(format!("{}: record was written by `{}`", args.trace_file.display(), record.tool)));
    }
    if record.version != VERSION {
        let _ = writeln!(
            err,
            "warning: trace written by {TOOL} {}, this is {VERSION}; checking anyway",
            record.version
        );
    }
    if record.trials.is_empty() && record.failures.is_empty() {
        return Err(Usage(format!("{}: record holds no trials", args.trace_file.display())));
    }
    let eps = args.eps.unwrap_or(record.config.eps);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Usage(format!("--eps must lie in (0, 1), got {eps}")));
    }
    let reports: Vec<VerificationReport> = record
        .trials
        .iter()
        .map(|t| oracle::verify_trial(t, &t.instance, eps))
        .collect();
    for f in &record.failures {
        let _ = writeln!(err, "seed {}: recorded failure: {}", f.seed, f.error);
    }
    for r in reports.iter().filter(|r| !r.pass) {
        for issue in r.issues.iter().take(5) {
            let _ = writeln!(err, "seed {}: {issue}", r.seed);
        }
    }
    let pass = record.failures.is_empty() && reports.iter().all(|r| r.pass);
    let summary = VerifySummary {
        tool: TOOL,
        version: VERSION,
        trace_version: &record.version,
        pass,
        reports,
    };
    let mut s = serde_json::to_string(&summary).map_err(|e| Usage(e.to_string()))?;
    s.push('\n');
    emit(out, &None, &s)?;
    Ok(if pass { EXIT_OK } else { EXIT_VERIFY })
}
