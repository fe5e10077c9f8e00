use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robust_pushsum::cli::{self, CliError, ExperimentConfig, Mode, Overrides, RunArtifacts};
use robust_pushsum::rng::{stream, Stream};
use robust_pushsum::schedule::ScheduleTrace;

#[derive(Parser)]
#[command(
    name = "pushsum",
    version,
    about = "Asynchronous push-sum learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSV and JSON outputs.
    Run(RunArgs),
    /// Run several experiments over a list of seeds.
    Sweep(SweepArgs),
    /// Generate a schedule and write it in the text trace format.
    Trace(TraceArgs),
    /// List built-in presets, or print one as TOML.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct Source {
    /// Path to a TOML experiment file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in preset.
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path),
            (None, Some(name)) => cli::preset(name),
            (None, None) => Err(CliError::Config {
                path: "<args>".into(),
                msg: "pass --config <file> or --preset <name>".into(),
            }),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Record history and audit the recursions.
    #[arg(long)]
    audit: bool,
    /// Replay a schedule file instead of generating one.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment files; may be combined with --preset.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    #[arg(long = "preset")]
    presets: Vec<String>,
    /// Comma-separated seeds, or a range `a..b`.
    #[arg(long, default_value = "0..30")]
    seeds: String,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value = "out/sweep")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config {
        path: "--seeds".into(),
        msg: format!("expected `a..b` or a comma-separated list, got `{text}`"),
    };
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

fn summarize(a: &RunArtifacts) {
    let r = &a.report;
    println!("{} [{:?}] seed={} K={}", r.name, r.mode, r.seed, r.horizon);
    if let Some(l) = &r.learning {
        match l.concentration_tick {
            Some(k) => println!("  concentrated on {:?} from tick {k}", l.objective.optimal),
            None => println!(
                "  not concentrated on {:?} by the horizon",
                l.objective.optimal
            ),
        }
        if let Some(rate) = &l.rate {
            println!(
                "  rate bound {:.4e}, worst relative error {:.3}",
                rate.bound,
                rate.max_relative_error()
            );
        }
    }
    if let Some(d) = &r.raps {
        println!(
            "  consensus error {:.3e}, bound satisfied: {}",
            d.final_error, d.bound_satisfied
        );
    }
    for c in &r.checks {
        println!(
            "  {:<22} {:>11.3e} {}",
            c.name,
            c.value,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
}

fn run(args: RunArgs) -> Result<bool, CliError> {
    let mut config = args.source.load()?;
    Overrides {
        seed: args.seed,
        horizon: args.horizon,
        mode: args.mode,
        out_dir: args.out_dir,
        audit: args.audit,
    }
    .apply(&mut config);
    let artifacts = cli::run_experiment(&config, args.trace.as_deref())?;
    if !args.quiet {
        summarize(&artifacts);
        println!("  wrote {}", config.output.dir.display());
    }
    Ok(artifacts.passed())
}

fn sweep(args: SweepArgs) -> Result<bool, CliError> {
    let mut configs = args
        .configs
        .iter()
        .map(|p| ExperimentConfig::load(p))
        .chain(args.presets.iter().map(|n| cli::preset(n)))
        .collect::<Result<Vec<_>, _>>()?;
    for c in &mut configs {
        if let Some(h) = args.horizon {
            c.horizon = h;
        }
    }
    let seeds = parse_seeds(&args.seeds)?;
    let report = cli::sweep(&configs, &seeds, &args.out_dir)?;
    for cell in &report.cells {
        println!(
            "{:<16} concentrated {}/{}",
            cell.name,
            cell.concentrated_runs,
            cell.runs.len()
        );
    }
    println!("wrote {}", args.out_dir.join("sweep.json").display());
    Ok(report.passed)
}

fn trace(args: TraceArgs) -> Result<bool, CliError> {
    let mut config = args.source.load()?;
    Overrides {
        seed: args.seed,
        horizon: args.horizon,
        ..Overrides::default()
    }
    .apply(&mut config);
    let exp = config.validate()?;
    let schedule = ScheduleTrace::generate(
        &config.params,
        &exp.graph,
        config.horizon,
        &mut stream(config.seed, Stream::Schedule),
    )
    .map_err(|e| CliError::Run(e.to_string()))?;
    let text = schedule.to_text(&exp.graph);
    match args.output {
        Some(path) => fs::write(&path, text).map_err(|source| CliError::Io { path, source })?,
        None => print!("{text}"),
    }
    Ok(true)
}

fn presets(name: Option<String>) -> Result<bool, CliError> {
    match name {
        Some(n) => {
            let text = cli::preset_text(&n).ok_or_else(|| CliError::Config {
                path: "preset".into(),
                msg: format!("unknown preset `{n}`"),
            })?;
            print!("{text}");
        }
        None => {
            for n in cli::PRESET_NAMES {
                println!("{n}");
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Trace(a) => trace(a),
        Command::Presets { name } => presets(name),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
