//! `carpet`: command-line front end for the carpet laboratory.
//!
//! Exit codes: 0 success, 1 experiment failure, 2 usage error,
//! 3 capacity error, 4 nothing to report.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use carpet_core::carpet::{build_graph_with_budget, validate_params, CarpetGraph, DEFAULT_VERTEX_BUDGET};
use carpet_core::coupling::{self, Canonical, Coupler, RandomWitness, WitnessPolicy};
use carpet_core::error::Error;
use carpet_core::harmonic::{self, Geometry, HittingSpec};
use carpet_core::harness::{self, Experiment, ExperimentConfig, RunManifest, Verdict, MANIFEST_FILE};
use carpet_core::heat::{self, TransitionOperator};
use carpet_core::resistance;
use carpet_core::solver::DEFAULT_TOLERANCE;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CAPACITY: u8 = 3;
const EXIT_NOTHING: u8 = 4;

#[derive(Parser)]
#[command(name = "carpet", version, about = "Random walks, harmonic functions and resistance on Sierpinski carpet graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a level-n carpet graph and write it in the text interchange format.
    Build(BuildArgs),
    /// Harnack constant and oscillation ratio of the box D_n.
    Harnack(HarnackArgs),
    /// Probability of reaching B(x, r) before leaving B(x, c2 r), from every y with |y - x| <= c1 r.
    Hitting(HittingArgs),
    /// Heat kernel diagnostics.
    #[command(subcommand)]
    Heat(HeatCommand),
    /// Coupled random walks.
    #[command(subcommand)]
    Couple(CoupleCommand),
    /// Effective resistances.
    #[command(subcommand)]
    Resist(ResistCommand),
    /// Run the experiment suite and write artifacts plus a manifest.
    Suite(SuiteArgs),
    /// Summarise a finished suite run and write plot-data files.
    Report(ReportArgs),
}

#[derive(Args)]
struct GraphArg {
    /// Graph file in the `carpet d k a n |V| |E|` text format.
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Args)]
struct OutArg {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, default_value_t = 2)]
    d: i64,
    #[arg(long, default_value_t = 3)]
    k: i64,
    #[arg(long, default_value_t = 1)]
    a: i64,
    /// Carpet level.
    #[arg(long)]
    n: u32,
    /// Refuse graphs with more vertices than this.
    #[arg(long, default_value_t = DEFAULT_VERTEX_BUDGET)]
    budget: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct HarnackArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Box level n; inner region D_{n-1}.
    #[arg(long)]
    level: u32,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct HittingArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Ball center (vertex id).
    #[arg(long)]
    x: usize,
    /// Ball radius.
    #[arg(long)]
    r: f64,
    #[arg(long, default_value_t = 2.0)]
    c1: f64,
    #[arg(long, default_value_t = 4.0)]
    c2: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Subcommand)]
enum HeatCommand {
    /// On-diagonal decay p_t(x, x) at dyadic times.
    ///
    /// CSV columns: t (walk steps), p_tt (return probability of the lazy walk).
    Diag(DiagArgs),
    /// Sub-Gaussian and Gaussian regime fits of the off-diagonal kernel.
    ///
    /// The pairs file has columns `y,steps`: target vertex id and number of
    /// walk steps. Lines starting with `#` and a `y,steps` header are skipped.
    /// The kernel source is --x (default: the central vertex).
    Regime(RegimeArgs),
}

#[derive(Args)]
struct DiagArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Largest time, in walk steps.
    #[arg(long, default_value_t = 4096)]
    tmax: u64,
    /// Source vertex; the central vertex when omitted.
    #[arg(long)]
    x: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct RegimeArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[arg(long)]
    pairs: PathBuf,
    /// Source vertex; the central vertex when omitted.
    #[arg(long)]
    x: Option<usize>,
    /// Spectral dimension; estimated from the diagonal decay when omitted.
    #[arg(long)]
    ds: Option<f64>,
    /// Walk dimension; estimated from exit times when omitted.
    #[arg(long)]
    dw: Option<f64>,
    /// Walk steps per unit time; 2d when omitted.
    #[arg(long)]
    steps_per_time: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CouplerArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Box level: walks start in D_{n-1} and stop on leaving D_n.
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = coupling::DEFAULT_MAX_STEPS)]
    max_steps: u64,
    /// Pick the isometry witness uniformly instead of canonically.
    #[arg(long)]
    random_witness: bool,
}

#[derive(Subcommand)]
enum CoupleCommand {
    /// Probability that the walks meet before leaving D_n.
    Run(RunArgs),
    /// Probability that an m-associated pair becomes (m+1)-associated within j renewals.
    Upgrade(UpgradeArgs),
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    coupler: CouplerArgs,
    /// Start of the first walk; the origin when omitted.
    #[arg(long)]
    x: Option<usize>,
    /// Start of the second walk; the first-axis neighbour of the origin when omitted.
    #[arg(long)]
    y: Option<usize>,
    /// Include a per-trial trajectory digest for replay.
    #[arg(long)]
    audit: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct UpgradeArgs {
    #[command(flatten)]
    coupler: CouplerArgs,
    #[arg(long, default_value_t = 0)]
    m: u32,
    /// Number of renewal windows.
    #[arg(long, default_value_t = coupling::DEFAULT_RENEWALS)]
    j: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Subcommand)]
enum ResistCommand {
    /// Resistance between opposite faces of the level-n carpet.
    Face(FaceArgs),
    /// Resistance from target sets to the far boundary, extrapolated in the level.
    Infinity(InfinityArgs),
}

#[derive(Args)]
struct FaceArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Level; the graph's own level when omitted.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct InfinityArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Target sets: one vertex id per line, groups separated by blank lines.
    #[arg(long)]
    set: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    levels: Vec<u32>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SuiteArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; may be repeated. Wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated experiment selector.
    #[arg(long)]
    experiments: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Stop at the first failing experiment.
    #[arg(long)]
    fail_fast: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Manifest file, or the output directory containing it.
    #[arg(long, default_value = "carpet-out")]
    manifest: PathBuf,
    /// Directory for the report and plot-data files; the manifest's directory when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a subcommand, with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Capacity { .. } => EXIT_CAPACITY,
            Error::Params(_) | Error::Config(_) | Error::Parse { .. } | Error::Argument(_) | Error::Range(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Build(a) => build(a),
        Command::Harnack(a) => harnack(a),
        Command::Hitting(a) => hitting(a),
        Command::Heat(HeatCommand::Diag(a)) => heat_diag(a),
        Command::Heat(HeatCommand::Regime(a)) => heat_regime(a),
        Command::Couple(CoupleCommand::Run(a)) => couple_run(a),
        Command::Couple(CoupleCommand::Upgrade(a)) => couple_upgrade(a),
        Command::Resist(ResistCommand::Face(a)) => resist_face(a),
        Command::Resist(ResistCommand::Infinity(a)) => resist_infinity(a),
        Command::Suite(a) => suite(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("carpet: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn output(out: &OutArg) -> CliResult<Box<dyn Write>> {
    Ok(match &out.out {
        Some(path) => Box::new(BufWriter::new(fs::File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &OutArg, value: &T) -> CliResult<u8> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(0)
}

fn load_graph(arg: &GraphArg) -> CliResult<CarpetGraph> {
    let file = fs::File::open(&arg.graph)
        .map_err(|e| usage(format!("cannot open graph {}: {e}", arg.graph.display())))?;
    Ok(CarpetGraph::read_from(BufReader::new(file))?)
}

fn check_vertex(graph: &CarpetGraph, v: usize) -> CliResult<usize> {
    if v < graph.len() {
        Ok(v)
    } else {
        Err(usage(format!("vertex {v} out of range (graph has {} vertices)", graph.len())))
    }
}

fn build(a: BuildArgs) -> CliResult<u8> {
    let params = validate_params(a.d, a.k, a.a).map_err(Error::from)?;
    let graph = build_graph_with_budget(a.n, &params, a.budget)?;
    let mut w = output(&a.out)?;
    graph.write_to(&mut w)?;
    w.flush()?;
    Ok(0)
}

fn harnack(a: HarnackArgs) -> CliResult<u8> {
    let graph = load_graph(&a.graph)?;
    let report = harmonic::harnack_constant(&graph, a.level, a.tol)?;
    write_json(&a.out, &report)
}

#[derive(Serialize)]
struct HittingOutput {
    spec: HittingSpec,
    starts: usize,
    min: f64,
    argmin: usize,
    max: f64,
    mean: f64,
    residual: f64,
}

fn hitting(a: HittingArgs) -> CliResult<u8> {
    let graph = load_graph(&a.graph)?;
    let x = check_vertex(&graph, a.x)?;
    let spec = HittingSpec::new(x, a.r, a.c1, a.c2)?;
    let field = harmonic::hitting_field(&graph, &spec, a.tol)?;
    let lat = graph.lattice();
    let reach2 = (a.c1 * a.r).powi(2);
    let starts: Vec<usize> = (0..graph.len()).filter(|&y| lat.dist2(x, y) as f64 <= reach2).collect();
    let (mut min, mut argmin, mut max, mut sum) = (f64::INFINITY, x, f64::NEG_INFINITY, 0.0);
    for &y in &starts {
        let p = field.value(y);
        if p < min {
            min = p;
            argmin = y;
        }
        max = max.max(p);
        sum += p;
    }
    write_json(
        &a.out,
        &HittingOutput {
            spec,
            starts: starts.len(),
            min,
            argmin,
            max,
            mean: sum / starts.len() as f64,
            residual: field.residual,
        },
    )
}

fn source_vertex(graph: &CarpetGraph, x: Option<usize>) -> CliResult<usize> {
    match x {
        Some(v) => check_vertex(graph, v),
        None => Ok(graph.central_vertex()),
    }
}

fn heat_diag(a: DiagArgs) -> CliResult<u8> {
    let graph = load_graph(&a.graph)?;
    let x = source_vertex(&graph, a.x)?;
    if a.tmax == 0 {
        return Err(usage("--tmax must be positive"));
    }
    let op = TransitionOperator::new(graph.network());
    let series = heat::diagonal_series(&op, x, &heat::dyadic_times(1, a.tmax));
    let mut w = output(&a.out)?;
    writeln!(w, "t,p_tt")?;
    for (t, p) in series {
        writeln!(w, "{t},{p}")?;
    }
    w.flush()?;
    Ok(0)
}

fn read_pairs(path: &Path) -> CliResult<Vec<(usize, u64)>> {
    let file = fs::File::open(path).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('y') {
            continue;
        }
        let bad = || Failure::from(Error::Parse { line: i + 1, msg: format!("expected `y,steps`, found `{line}`") });
        let (y, t) = line.split_once(',').ok_or_else(bad)?;
        pairs.push((y.trim().parse().map_err(|_| bad())?, t.trim().parse().map_err(|_| bad())?));
    }
    Ok(pairs)
}

#[derive(Serialize)]
struct RegimeOutput {
    source: usize,
    ds: f64,
    dw: f64,
    fit: heat::RegimeFit,
}

fn heat_regime(a: RegimeArgs) -> CliResult<u8> {
    let graph = load_graph(&a.graph)?;
    let pairs = read_pairs(&a.pairs)?;
    let x = source_vertex(&graph, a.x)?;
    let ds = match a.ds {
        Some(v) => v,
        None => {
            let window = (16, heat::saturation_time(graph.lattice()).max(128));
            harness::spectral_estimate(&graph, window)?.2.value
        }
    };
    let dw = match a.dw {
        Some(v) => v,
        None => {
            let centre = graph.central_vertex();
            let radii: Vec<f64> = (1..31)
                .map(|i| f64::from(1u32 << i))
                .take_while(|&r| graph.ball_fits(centre, r))
                .collect();
            heat::estimate_dw(&graph, centre, &radii)?.value
        }
    };
    let op = TransitionOperator::new(graph.network());
    let spt = a.steps_per_time.unwrap_or_else(|| heat::brownian_steps_per_time(graph.params().d()));
    let fit = heat::regime_fit(&op, graph.lattice(), x, &pairs, ds, dw, spt)?;
    write_json(&a.out, &RegimeOutput { source: x, ds, dw, fit })
}

fn default_pair(graph: &CarpetGraph) -> CliResult<(usize, usize)> {
    let d = graph.params().d();
    let mut e1 = vec![0; d];
    let origin = graph.find(&e1).ok_or_else(|| usage("the origin cell is not in the carpet"))?;
    e1[0] = 1;
    let next = graph.find(&e1).ok_or_else(|| usage("the origin has no first-axis neighbour"))?;
    Ok((origin, next))
}

fn couple_run(a: RunArgs) -> CliResult<u8> {
    let graph = load_graph(&a.coupler.graph)?;
    let (dx, dy) = default_pair(&graph)?;
    let x = check_vertex(&graph, a.x.unwrap_or(dx))?;
    let y = check_vertex(&graph, a.y.unwrap_or(dy))?;
    let c = &a.coupler;
    fn go<P: WitnessPolicy>(c: &Coupler<'_, P>, a: &RunArgs, x: usize, y: usize) -> CliResult<u8> {
        let p = &a.coupler;
        let est = coupling::coupling_probability(c, x, y, p.n, p.trials, p.max_steps, p.seed, a.audit)?;
        write_json(&a.out, &est)
    }
    if c.random_witness {
        go(&Coupler::with_policy(&graph, c.n, RandomWitness)?, &a, x, y)
    } else {
        go(&Coupler::with_policy(&graph, c.n, Canonical)?, &a, x, y)
    }
}

fn couple_upgrade(a: UpgradeArgs) -> CliResult<u8> {
    let graph = load_graph(&a.coupler.graph)?;
    let c = &a.coupler;
    fn go<P: WitnessPolicy>(cp: &Coupler<'_, P>, a: &UpgradeArgs) -> CliResult<u8> {
        let c = &a.coupler;
        let est = coupling::upgrade_probability(cp, a.m, c.n, a.j, c.trials, c.max_steps, c.seed)?;
        write_json(&a.out, &est)
    }
    if c.random_witness {
        go(&Coupler::with_policy(&graph, c.n, RandomWitness)?, &a)
    } else {
        go(&Coupler::with_policy(&graph, c.n, Canonical)?, &a)
    }
}

fn resist_face(a: FaceArgs) -> CliResult<u8> {
    let graph = load_graph(&a.graph)?;
    let value = match a.n {
        Some(n) if n != graph.level() => resistance::face_resistance(graph.params(), n, a.tol)?,
        _ => resistance::face_resistance_of(&graph, a.tol)?,
    };
    write_json(&a.out, &value)
}

/// Vertex-id groups separated by blank lines.
fn read_sets(path: &Path) -> CliResult<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))?;
    let mut sets = vec![Vec::new()];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !sets.last().is_some_and(Vec::is_empty) {
                sets.push(Vec::new());
            }
            continue;
        }
        let v = line.parse().map_err(|_| {
            Failure::from(Error::Parse { line: i + 1, msg: format!("expected a vertex id, found `{line}`") })
        })?;
        sets.last_mut().expect("at least one group").push(v);
    }
    sets.retain(|s| !s.is_empty());
    if sets.is_empty() {
        return Err(usage(format!("{} contains no vertex ids", path.display())));
    }
    Ok(sets)
}

fn resist_infinity(a: InfinityArgs) -> CliResult<u8> {
    let graph = load_graph(&a.graph)?;
    let sets = read_sets(&a.set)?;
    let mut reports = Vec::with_capacity(sets.len());
    for set in &sets {
        for &v in set {
            check_vertex(&graph, v)?;
        }
        reports.push(resistance::resistance_to_infinity(&graph, set, &a.levels, a.tol)?);
    }
    write_json(&a.out, &reports)
}

fn suite(a: SuiteArgs) -> CliResult<u8> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &a.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(list) = &a.experiments {
        cfg.set("experiments", list)?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = a.out_dir {
        cfg.output_dir = dir;
    }
    if a.fail_fast {
        cfg.fail_fast = true;
    }
    let manifest = harness::run_suite(&cfg)?;
    for e in &manifest.experiments {
        match &e.error {
            Some(err) => println!("{:<14} FAILED  {err}", e.experiment.name()),
            None => println!("{:<14} ok      {:.2}s", e.experiment.name(), e.seconds),
        }
    }
    for c in &manifest.criteria {
        let verdict = match c.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::HypothesisNotMet => "HYPOTHESIS NOT MET",
            Verdict::NotEvaluated => "NOT EVALUATED",
        };
        println!("criterion {} {}: {verdict}  {}", c.id, c.name, c.detail);
    }
    println!("manifest: {}", manifest.output_dir.join(MANIFEST_FILE).display());
    let capacity_failed = manifest.experiments.iter().any(|e| {
        e.experiment == Experiment::Capacity && e.error.as_deref().is_some_and(|m| m.starts_with("capacity exceeded"))
    });
    Ok(if capacity_failed {
        EXIT_CAPACITY
    } else if manifest.failed() {
        EXIT_FAILURE
    } else {
        0
    })
}

fn report(a: ReportArgs) -> CliResult<u8> {
    let path = if a.manifest.is_dir() { a.manifest.join(MANIFEST_FILE) } else { a.manifest.clone() };
    let manifest = RunManifest::load(&path).map_err(|e| usage(format!("cannot read manifest {}: {e}", path.display())))?;
    let dir = a.out.unwrap_or_else(|| manifest.output_dir.clone());
    let report = harness::export_report(&manifest, &dir)?;
    if report.empty {
        eprintln!("carpet: nothing to report");
        return Ok(EXIT_NOTHING);
    }
    print!("{}", report.text);
    if !report.gaps.is_empty() {
        eprintln!("carpet: missing artifacts: {}", report.gaps.join(", "));
        return Ok(EXIT_FAILURE);
    }
    Ok(0)
}
