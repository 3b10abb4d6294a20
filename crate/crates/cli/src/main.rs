//! `hierprice`: run experiments, solve equilibria, audit traces and ingest
//! hierarchies from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure (including audit mismatches),
//! 2 usage, configuration or input-format failure.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use hierprice::equilibrium::{equilibrium_general, equilibrium_n2, jacobian, QualityVector};
use hierprice::hierarchy::{read_trace, write_trace_record, FeedbackMode, Tree};
use hierprice::ingest::{load_hierarchy_csv, to_tree_spec, NormalizationMethod};
use hierprice::mechanism::UpdateRate;
use hierprice::simlab::output::{comparison_rows, experiment_rows, summary_json, sweep_rows, write_csv, CsvRow};
use hierprice::simlab::{
    compare_modes, run_experiment, run_mode, sweep_eta, AuditReport, EtaConfig, ExperimentConfig, ExperimentResult,
    ModeSelection, QualitySampler, ScheduleSpec, TreeSource,
};
use hierprice::Error;

#[derive(Parser, Debug)]
#[command(name = "hierprice", version, about = "Hierarchical selection by proportional-redistribution prices")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed, or the first seed when combined with --seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of consecutive seeds to run.
    #[arg(long, global = true)]
    seeds: Option<u64>,
    #[arg(long, global = true)]
    rounds: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Uniform update rate for every depth.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Exploration mixing.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Input block size.
    #[arg(long, global = true)]
    block_size: Option<u64>,
    /// Output file; falls back to the config's `output`, then standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the per-round trace of the first seed (JSON lines).
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured experiment.
    Simulate,
    /// Delta/explicit accuracy ratio over a (branching, depth) grid.
    CompareModes {
        #[arg(long, value_delimiter = ',', default_value = "2")]
        branching: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "3,6")]
        depths: Vec<usize>,
    },
    /// Accuracy by update rate and depth.
    SweepEta {
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.05,0.1,0.2,0.3,0.5")]
        rates: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "3,6,9")]
        depths: Vec<usize>,
    },
    /// Equilibrium of one selector with the given child qualities.
    Equilibrium {
        #[arg(required = true, num_args = 2..)]
        qualities: Vec<f64>,
    },
    /// Fidelity audit of a delta-mode trace.
    Audit { trace: PathBuf },
    /// Convert a `node_id,parent_id,quality` CSV into a tree spec.
    Ingest {
        csv: PathBuf,
        #[arg(long, default_value = "rank")]
        normalize: NormalizationMethod,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Delta,
    Explicit,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Failure classes, mapped onto exit codes.
enum Failure {
    Usage(String),
    Runtime(String),
    Mismatch,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Json(_)
            | Error::Tree(_)
            | Error::Ingest(_)
            | Error::Trace { .. }
            | Error::Mode(_)
            | Error::InvalidRate(_)
            | Error::InvalidQualities(_)
            | Error::InvalidArity(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Mismatch) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = cli.global;
    match cli.command {
        Command::Simulate => {
            let path = g.config.as_ref().ok_or_else(|| Failure::usage("simulate needs --config"))?;
            let config = resolve(&g, Some(load_config(path)?))?;
            eprintln!("simulate: {} seed(s) x {} rounds", config.seeds.len(), config.rounds);
            let started = Instant::now();
            let result = run_experiment(&config)?;
            eprintln!("simulate: done in {:.1?}", started.elapsed());
            if let Some(trace) = &g.trace {
                write_trace(&config, trace)?;
            }
            let rows = experiment_rows(&result);
            emit(&g, &config, &rows, [("run".to_string(), &result)])
        }
        Command::CompareModes { branching, depths } => {
            let config = resolve(&g, g.config.as_deref().map(load_config).transpose()?)?;
            let grid: Vec<(usize, usize)> =
                branching.iter().flat_map(|&b| depths.iter().map(move |&d| (b, d))).collect();
            eprintln!("compare-modes: {} cell(s), {} seed(s) x {} rounds", grid.len(), config.seeds.len(), config.rounds);
            let cells = compare_modes(&config, &grid)?;
            for cell in &cells {
                let ratio = cell.ratio().map_or("undefined".into(), |r| format!("{r:.4}"));
                eprintln!("  b={} D={}: ratio {ratio}", cell.branching, cell.depth);
            }
            let rows = comparison_rows(&cells);
            let labelled = cells.iter().map(|c| (format!("b={};D={}", c.branching, c.depth), &c.result));
            emit(&g, &config, &rows, labelled)
        }
        Command::SweepEta { rates, depths } => {
            let config = resolve(&g, g.config.as_deref().map(load_config).transpose()?)?;
            eprintln!("sweep-eta: {} rate(s) x {} depth(s)", rates.len(), depths.len());
            let table = sweep_eta(&config, &rates, &depths)?;
            for &d in &depths {
                eprintln!("  D={d}: best rate {:?}", table.best_rate(d));
            }
            let rows = sweep_rows(&table);
            let labelled = table.rows.iter().map(|r| (format!("eta={};D={}", r.rate, r.depth), &r.result));
            emit(&g, &config, &rows, labelled)
        }
        Command::Equilibrium { qualities } => equilibrium(&g, qualities),
        Command::Audit { trace } => audit(&g, &trace),
        Command::Ingest { csv, normalize } => {
            let rows = load_hierarchy_csv(&csv).map_err(|e| Failure::usage(format!("{}: {e}", csv.display())))?;
            let spec = to_tree_spec(&rows, normalize)?;
            let tree: Tree = Tree::from_spec(&spec).map_err(Error::from)?;
            eprintln!("ingest: {} nodes, {} leaves, depth {}", spec.nodes.len(), tree.leaf_count(), tree.depth());
            let text = spec.to_json()?;
            write_text(&g.out, &(text + "\n"))
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if let Some(dir) = path.parent() {
        config.tree.rebase(dir);
    }
    Ok(config)
}

/// Applies flag overrides on top of the config (or the built-in default)
/// and validates the result.
fn resolve(g: &Global, base: Option<ExperimentConfig>) -> Result<ExperimentConfig, Failure> {
    let mut config = base.unwrap_or_else(|| {
        let tree = TreeSource::Uniform { branching: 2, depth: 3, sampler: QualitySampler::default(), contexts: 1 };
        ExperimentConfig::new(tree, 100_000, (0..10).collect())
    });
    match (g.seed, g.seeds) {
        (Some(s), None) => config.seeds = vec![s],
        (first, Some(n)) => config.seeds = (0..n).map(|i| first.unwrap_or(0) + i).collect(),
        (None, None) => {}
    }
    if let Some(r) = g.rounds {
        config.rounds = r;
    }
    if let Some(m) = g.mode {
        config.mode = match m {
            ModeArg::Delta => ModeSelection::Delta,
            ModeArg::Explicit => ModeSelection::Explicit,
            ModeArg::Both => ModeSelection::Both,
        };
        config.metrics = None;
    }
    if let Some(eta) = g.eta {
        config.eta = EtaConfig::constant(eta);
    }
    if let Some(eps) = g.epsilon {
        config.epsilon = eps;
    }
    if let Some(b) = g.block_size {
        config.schedule = ScheduleSpec::Block { block_size: b, universe: config.schedule.universe() };
    }
    config.validate()?;
    Ok(config)
}

/// CSV goes to `--out` (or stdout) with the JSON summary beside it; with
/// `--format json` only the summary is written.
fn emit<'a>(
    g: &Global,
    config: &ExperimentConfig,
    rows: &[CsvRow],
    cells: impl IntoIterator<Item = (String, &'a ExperimentResult)>,
) -> Result<(), Failure> {
    let summary = serde_json::to_string_pretty(&summary_json(config, cells)).map_err(Error::from)? + "\n";
    let out = g.out.clone().or_else(|| config.output.clone());
    if g.format == Some(Format::Json) {
        return write_text(&out, &summary);
    }
    match &out {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path)?);
            write_csv(&mut out, config, rows)?;
            out.flush()?;
            let summary_path = path.with_extension("summary.json");
            std::fs::write(&summary_path, summary)?;
            eprintln!("wrote {} and {}", path.display(), summary_path.display());
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            write_csv(&mut out, config, rows)?;
        }
    }
    Ok(())
}

fn write_text(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_trace(config: &ExperimentConfig, path: &Path) -> Result<(), Failure> {
    let seed = config.seeds[0];
    let mode = if config.mode.runs(FeedbackMode::Delta) { FeedbackMode::Delta } else { FeedbackMode::Explicit };
    let tree: Tree = Tree::from_spec(&config.tree.realize(seed)?).map_err(Error::from)?;
    let mut out = BufWriter::new(File::create(path)?);
    let mut failed = None;
    run_mode(config, tree, seed, mode, |record| {
        if failed.is_none() {
            failed = write_trace_record(&mut out, record).err();
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    out.flush()?;
    eprintln!("wrote trace of seed {seed} to {}", path.display());
    Ok(())
}

fn equilibrium(g: &Global, qualities: Vec<f64>) -> Result<(), Failure> {
    let p: QualityVector<f64> = QualityVector::sorted(qualities)?;
    let eta: UpdateRate<f64> = UpdateRate::from_f64(g.eta.unwrap_or(0.1))?;
    let sol = if p.len() == 2 { equilibrium_n2(p.values()[0], p.values()[1])? } else { equilibrium_general(&p)? };
    let n = p.len();
    let residual = if sol.interior {
        let j = jacobian(&p, &eta)?;
        let c = sol.c;
        Some(j.column_sums().iter().map(|s| (s / *eta.value() - c).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    let slope = sol.alpha.map(|a| -*eta.value() * a);
    if g.format == Some(Format::Json) {
        let value = serde_json::json!({
            "format_version": 1,
            "qualities": p.values(),
            "eta": *eta.value(),
            "c": sol.c,
            "interior": sol.interior,
            "w_star": sol.w_star.as_ref().filter(|_| sol.interior).map(|w| w.weights().to_vec()),
            "drift_slope": slope,
            "eq_cost": sol.eq_cost,
            "eq_cost_fraction": sol.eq_cost.map(|c| if p.values()[0] > 0.0 { c / p.values()[0] } else { 0.0 }),
            "column_sum_residual": residual,
        });
        return write_text(&g.out, &(serde_json::to_string_pretty(&value).map_err(Error::from)? + "\n"));
    }
    let mut text = String::new();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    text += &format!("qualities: ({})\n", fmt(p.values()));
    text += &format!("c: {:.6}\n", sol.c);
    if sol.interior {
        let w = sol.w_star.as_ref().expect("interior solutions carry w*");
        text += &format!("interior: yes\nw*: ({})\n", fmt(w.weights()));
    } else {
        text += "interior: no (not interior; no equilibrium strictly inside the simplex)\n";
    }
    if let (Some(cost), Some(slope)) = (sol.eq_cost, slope) {
        text += &format!("drift slope: {slope:.6}\n");
        text += &format!("c_eq: {cost:.6} ({:.2}% of p1)\n", 100.0 * cost / p.values()[0].max(f64::MIN_POSITIVE));
    }
    if let Some(r) = residual {
        text += &format!("jacobian column sums / eta - c: max residual {r:.3e} (N = {n})\n");
    }
    write_text(&g.out, &text)
}

fn audit(g: &Global, path: &Path) -> Result<(), Failure> {
    let file = File::open(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let mut report = AuditReport::default();
    for record in read_trace(BufReader::new(file)) {
        report.observe(&record?)?;
    }
    let text = if g.format == Some(Format::Json) {
        serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"
    } else {
        let mut t = format!(
            "{} mismatches / {} observations over {} rounds\n",
            report.mismatches, report.observations, report.rounds
        );
        for (i, d) in report.by_depth.iter().enumerate() {
            t += &format!("  depth {}: {} / {}\n", i + 1, d.mismatches, d.observations);
        }
        t
    };
    write_text(&g.out, &text)?;
    if report.mismatches > 0 {
        return Err(Failure::Mismatch);
    }
    Ok(())
}
