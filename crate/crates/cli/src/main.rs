//! `regionbp`: command-line front end for exact inference, belief
//! propagation, regional BP, domain decomposition and LDPC experiments.

mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regionbp::bethe::{bp_run, BpOptions};
use regionbp::dd::{dd_run, DdInit, DdOptions, RegionSolver};
use regionbp::format::{parse_graph, parse_partition};
use regionbp::ldpc::{ber_experiment, generate_ldpc, BerExperiment, ConstraintMode, DecodeMethod, DecodeOptions};
use regionbp::oracle::{Oracle, DEFAULT_ENUMERATION_CAP};
use regionbp::regions::{auto_partition, build_decomposition, regional_bp_run, DEFAULT_REGION_BUDGET};
use regionbp::solvers::{GibbsOptions, GibbsSolverOptions, InnerOptions, InnerUpdate};
use regionbp::{Error, FactorGraph, InferenceResult, Result};

#[derive(Parser, Debug)]
#[command(name = "regionbp", version, about = "Inference on discrete factor graphs in energy form")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "REGIONBP_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one engine on a graph file and print the result document.
    Infer(InferArgs),
    /// Bit-error-rate experiment on a random LDPC code; prints CSV.
    Ldpc(LdpcArgs),
    /// Run every engine on one graph and report pairwise distances.
    Compare(CompareArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Exact,
    Bp,
    RegionalBp,
    Dd,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Bp => "bp",
            Method::RegionalBp => "regional-bp",
            Method::Dd => "dd",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SolverKind {
    Exact,
    Gibbs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Init {
    Uniform,
    Prior,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Constraint {
    Hard,
    Soft,
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// Graph document (JSON).
    #[arg(long)]
    graph: PathBuf,
    /// Partition: a JSON file mapping region ids to factor ids, `inline`
    /// for the graph's own region block, or `auto` for greedy growing.
    /// Defaults to `inline` when the graph has regions, else `auto`.
    #[arg(long)]
    regions: Option<String>,
    /// State-space budget per region for `--regions auto`.
    #[arg(long, default_value_t = DEFAULT_REGION_BUDGET)]
    region_budget: u64,
    /// Largest joint state space enumerated by exact methods.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: u64,
}

/// Outer-loop controls shared by bp, regional-bp and dd.
#[derive(Args, Debug, Clone, Copy)]
struct LoopArgs {
    /// Iteration budget (bp and regional-bp: 1000, dd: 200).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Convergence threshold on log-message changes (bp: 1e-8, dd: 1e-6).
    #[arg(long)]
    tol: Option<f64>,
    /// Weight on the old message.
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    /// Initial variable-to-region messages for dd.
    #[arg(long, value_enum, default_value_t = Init::Uniform)]
    init: Init,
}

#[derive(Args, Debug, Clone, Copy)]
struct SolverArgs {
    /// Region solver used by dd.
    #[arg(long, value_enum, default_value_t = SolverKind::Exact)]
    solver: SolverKind,
    /// Kept Gibbs sweeps per region solve.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Discarded leading sweeps (default: 10% of samples).
    #[arg(long)]
    burn_in: Option<usize>,
    /// Inner field updates per region solve; 0 returns the Boltzmann
    /// marginals under the incoming messages.
    #[arg(long, default_value_t = 0)]
    inner_iters: usize,
    /// Inner residual tolerance (exact: 1e-10, gibbs: 1e-3).
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Inner update rule for the exact solver.
    #[arg(long, default_value = "newton", value_parser = parse_update)]
    inner_update: InnerUpdate,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_update(s: &str) -> std::result::Result<InnerUpdate, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum)]
    method: Method,
    #[command(flatten)]
    looping: LoopArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Evaluate the soundness residual after a dd run.
    #[arg(long)]
    check_soundness: bool,
    /// Write the document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    looping: LoopArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LdpcArgs {
    /// Code length.
    #[arg(long)]
    n: usize,
    /// Checks per bit.
    #[arg(long)]
    dv: usize,
    /// Bits per check.
    #[arg(long)]
    dc: usize,
    /// Flip probabilities, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Decoders, comma separated: exact, bp, regional-bp, dd.
    #[arg(long, value_delimiter = ',', default_value = "bp,dd", value_parser = parse_decode_method)]
    methods: Vec<DecodeMethod>,
    /// Checks per region for regional-bp and dd.
    #[arg(long, default_value_t = 2)]
    block_size: usize,
    #[arg(long, value_enum, default_value_t = Constraint::Hard)]
    constraint: Constraint,
    /// Odd-parity energy in soft mode.
    #[arg(long, default_value_t = ConstraintMode::DEFAULT_PENALTY)]
    delta: f64,
    #[command(flatten)]
    looping: LoopArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_decode_method(s: &str) -> std::result::Result<DecodeMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn partition(graph: &FactorGraph, args: &GraphArgs) -> Result<BTreeMap<String, Vec<String>>> {
    match args.regions.as_deref() {
        Some("auto") => Ok(auto_partition(graph, args.region_budget)),
        Some("inline") => graph
            .regions()
            .cloned()
            .ok_or_else(|| Error::Partition("graph has no region block".into())),
        Some(path) => parse_partition(&read(Path::new(path))?),
        None => Ok(graph
            .regions()
            .cloned()
            .unwrap_or_else(|| auto_partition(graph, args.region_budget))),
    }
}

fn bp_options(l: &LoopArgs) -> BpOptions {
    let d = BpOptions::default();
    BpOptions {
        max_iterations: l.max_iters.unwrap_or(d.max_iterations),
        tolerance: l.tol.unwrap_or(d.tolerance),
        damping: l.damping,
    }
}

fn dd_options(l: &LoopArgs, s: &SolverArgs, cap: u64, check_soundness: bool) -> DdOptions {
    let d = DdOptions::default();
    let solver = match s.solver {
        SolverKind::Exact => RegionSolver::Exact(InnerOptions {
            max_iterations: s.inner_iters,
            tolerance: s.inner_tol.unwrap_or(InnerOptions::default().tolerance),
            update: s.inner_update,
            cap,
            ..InnerOptions::default()
        }),
        SolverKind::Gibbs => RegionSolver::Gibbs(GibbsSolverOptions {
            inner: InnerOptions {
                max_iterations: s.inner_iters,
                tolerance: s.inner_tol.unwrap_or(InnerOptions::sampling().tolerance),
                ..InnerOptions::sampling()
            },
            sampler: GibbsOptions {
                sweeps: s.samples,
                burn_in: s.burn_in,
                thinning: 1,
                seed: s.seed,
            },
            outer_iteration: 0,
        }),
    };
    DdOptions {
        max_iterations: l.max_iters.unwrap_or(d.max_iterations),
        tolerance: l.tol.unwrap_or(d.tolerance),
        damping: l.damping,
        solver,
        init: match l.init {
            Init::Uniform => DdInit::Uniform,
            Init::Prior => DdInit::Prior,
        },
        check_soundness,
    }
}

fn run_method(
    method: Method,
    graph: &FactorGraph,
    args: &GraphArgs,
    l: &LoopArgs,
    s: &SolverArgs,
    check_soundness: bool,
) -> Result<InferenceResult> {
    match method {
        Method::Exact => Oracle::with_cap(args.cap).infer(graph),
        Method::Bp => bp_run(graph, &bp_options(l)).map(|o| o.result),
        Method::RegionalBp => {
            let decomp = build_decomposition(graph, &partition(graph, args)?)?;
            regional_bp_run(graph, &decomp, &bp_options(l)).map(|o| o.result)
        }
        Method::Dd => {
            let decomp = build_decomposition(graph, &partition(graph, args)?)?;
            dd_run(graph, &decomp, &dd_options(l, s, args.cap, check_soundness)).map(|o| o.result)
        }
    }
}

fn infer(a: &InferArgs) -> Result<u8> {
    let graph = parse_graph(&read(&a.graph.graph)?)?;
    let result = run_method(a.method, &graph, &a.graph, &a.looping, &a.solver, a.check_soundness)?;
    write(a.out.as_deref(), &output::to_json(&output::result_document(a.method.name(), &result)))?;
    Ok(if result.status.is_converged() { 0 } else { 2 })
}

fn compare(a: &CompareArgs) -> Result<u8> {
    let graph = parse_graph(&read(&a.graph.graph)?)?;
    let results = [Method::Exact, Method::Bp, Method::RegionalBp, Method::Dd]
        .into_iter()
        .map(|m| Ok((m.name(), run_method(m, &graph, &a.graph, &a.looping, &a.solver, true)?)))
        .collect::<Result<Vec<_>>>()?;
    write(a.out.as_deref(), &output::to_json(&output::compare_document(&results)))?;
    Ok(0)
}

fn ldpc(a: &LdpcArgs) -> Result<u8> {
    let code = generate_ldpc(a.n, a.dv, a.dc, a.solver.seed)?;
    let exp = BerExperiment {
        code,
        flip_probabilities: a.p.clone(),
        trials: a.trials,
        methods: a.methods.clone(),
        constraint: match a.constraint {
            Constraint::Hard => ConstraintMode::Hard,
            Constraint::Soft => ConstraintMode::Soft { penalty: a.delta },
        },
        decode: DecodeOptions {
            bp: bp_options(&a.looping),
            dd: dd_options(&a.looping, &a.solver, DEFAULT_ENUMERATION_CAP, false),
            block_size: a.block_size,
        },
        seed: a.solver.seed,
    };
    write(a.out.as_deref(), &ber_experiment(&exp)?.to_csv()?)?;
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Input("--threads must be positive".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Infer(a) => infer(a),
        Command::Ldpc(a) => ldpc(a),
        Command::Compare(a) => compare(a),
    })
}

fn main() -> ExitCode {
    // usage errors exit 1: status 2 is reserved for runs that hit the
    // iteration budget
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("regionbp: {e}");
            ExitCode::from(1)
        }
    }
}
