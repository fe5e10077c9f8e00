//! Experiment runner behind the `pushsum` binary.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{
    AgentConfig, Experiment, ExperimentConfig, Family, Mode, ModelConfig, OutputConfig, RapsConfig,
    TopologyConfig,
};

use crate::analysis::{
    audit_lemma1_recursions, check_raps_decay, estimate_rate, theorem2_constants, AuditReport,
    RapsDecayReport, RateEstimate, Theorem2Constants,
};
use crate::engine::{run_learning, run_raps, BeliefTrace, ObservationSource, RunOptions};
use crate::rng::{stream, Stream};
use crate::schedule::ScheduleTrace;
use crate::stats::HypothesisModel;

/// Per-agent conservation tolerance of the mass audit.
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance on belief vectors summing to one.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Pass threshold of the recursion audit.
pub const AUDIT_TOL: f64 = 1e-9;
/// Belief mass on the optimal set counted as concentrated.
pub const CONCENTRATION_LEVEL: f64 = 0.95;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("run failed: {0}")]
    Run(String),
    #[error("sweep needs at least one seed and one configuration")]
    EmptySweep,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::EmptySweep => 2,
            CliError::Io { .. } | CliError::Run(_) => 3,
        }
    }
}

pub const PRESET_NAMES: [&str; 6] = [
    "star-hi", "star-lo", "path-hi", "path-lo", "cycle-hi", "cycle-lo",
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "star-hi" => include_str!("../../presets/star-hi.toml"),
        "star-lo" => include_str!("../../presets/star-lo.toml"),
        "path-hi" => include_str!("../../presets/path-hi.toml"),
        "path-lo" => include_str!("../../presets/path-lo.toml"),
        "cycle-hi" => include_str!("../../presets/cycle-hi.toml"),
        "cycle-lo" => include_str!("../../presets/cycle-lo.toml"),
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let text = preset_text(name).ok_or_else(|| CliError::Config {
        path: "preset".into(),
        msg: format!(
            "unknown preset `{name}` (available: {})",
            PRESET_NAMES.join(", ")
        ),
    })?;
    ExperimentConfig::from_toml(text)
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub mode: Option<Mode>,
    pub out_dir: Option<PathBuf>,
    /// Turns a learning run into an audit run.
    pub audit: bool,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(h) = self.horizon {
            config.horizon = h;
        }
        if let Some(m) = self.mode {
            config.mode = m;
        }
        if let Some(d) = &self.out_dir {
            config.output.dir = d.clone();
        }
        if self.audit && config.mode == Mode::Learning {
            config.mode = Mode::Audit;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveSummary {
    pub values: Vec<f64>,
    pub optimal: Vec<usize>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAudit {
    pub theta_v: usize,
    pub theta_w: usize,
    pub residuals: AuditReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningReport {
    pub objective: ObjectiveSummary,
    /// `[agent][theta]` at the final tick.
    pub final_beliefs: Vec<Vec<f64>>,
    /// First tick after which every agent keeps more than the concentration
    /// level of belief on the optimal set.
    pub concentration_tick: Option<usize>,
    pub concentrated: bool,
    pub rate: Option<RateEstimate>,
    pub audit: Option<Vec<PairAudit>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub horizon: usize,
    pub constants: Theorem2Constants,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearningReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raps: Option<RapsDecayReport>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
struct RunMetadata<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    horizon: usize,
    trace: String,
    max_mass_residual: f64,
    stale_drops: usize,
}

/// Per-tick lowest belief mass any agent puts on the optimal set.
pub fn optimal_mass_floor(trace: &BeliefTrace<f64>, optimal: &[usize]) -> Vec<f64> {
    (0..=trace.horizon())
        .map(|k| {
            (0..trace.agent_count())
                .map(|i| optimal.iter().map(|&t| trace.belief(k, i, t)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn concentration_tick(floor: &[f64]) -> Option<usize> {
    let last_below = floor.iter().rposition(|&v| v <= CONCENTRATION_LEVEL);
    match last_below {
        None => Some(0),
        Some(k) if k + 1 < floor.len() => Some(k + 1),
        Some(_) => None,
    }
}

fn normalization_error(trace: &BeliefTrace<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..=trace.horizon() {
        for i in 0..trace.agent_count() {
            let s: f64 = (0..trace.hypothesis_count())
                .map(|t| trace.belief(k, i, t))
                .sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

fn learning_report(
    exp: &Experiment,
    model: &HypothesisModel<f64>,
    schedule: &ScheduleTrace,
    options: &RunOptions,
) -> Result<(LearningReport, Vec<Check>, BeliefTrace<f64>), CliError> {
    let run = run_learning(
        &exp.graph,
        model,
        schedule,
        ObservationSource::Sampled {
            seed: exp.config.seed,
        },
        options,
    )
    .map_err(|e| CliError::Run(e.to_string()))?;
    let objective = model
        .objective()
        .map_err(|e| CliError::Run(e.to_string()))?;
    let trace = run.beliefs;
    let n = exp.graph.node_count();
    let mut checks = vec![
        Check::at_most(
            "mass_conservation",
            trace.max_residual(),
            MASS_TOL * n as f64,
        ),
        Check::at_most(
            "belief_normalization",
            normalization_error(&trace),
            NORMALIZATION_TOL,
        ),
    ];
    let audit = if options.record_history {
        let mut pairs = Vec::new();
        for v in (0..model.hypothesis_count()).filter(|&t| !objective.is_optimal(t)) {
            for &w in &objective.optimal {
                let residuals = audit_lemma1_recursions(
                    &exp.graph,
                    model,
                    schedule,
                    run.history.as_ref(),
                    v,
                    w,
                )
                .map_err(|e| CliError::Run(e.to_string()))?;
                pairs.push(PairAudit {
                    theta_v: v,
                    theta_w: w,
                    residuals,
                });
            }
        }
        let worst = pairs
            .iter()
            .map(|p| p.residuals.max_residual)
            .fold(0.0, f64::max);
        checks.push(Check::at_most("recursion_audit", worst, AUDIT_TOL));
        Some(pairs)
    } else {
        None
    };
    let floor = optimal_mass_floor(&trace, &objective.optimal);
    let horizon = trace.horizon();
    let report = LearningReport {
        objective: ObjectiveSummary {
            values: objective.values.clone(),
            optimal: objective.optimal.clone(),
            gap: objective.gap,
        },
        final_beliefs: (0..n)
            .map(|i| {
                (0..trace.hypothesis_count())
                    .map(|t| trace.belief(horizon, i, t))
                    .collect()
            })
            .collect(),
        concentration_tick: concentration_tick(&floor),
        concentrated: floor[horizon] > CONCENTRATION_LEVEL,
        rate: estimate_rate(&trace, model, 0.5).ok(),
        audit,
    };
    Ok((report, checks, trace))
}

/// Everything a run produces, before it is written to disk.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: Report,
    pub csv_name: &'static str,
    pub csv: String,
    pub metadata_json: String,
    pub report_json: String,
}

impl RunArtifacts {
    pub fn passed(&self) -> bool {
        self.report.passed
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let io = |path: PathBuf| move |source| CliError::Io { path, source };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        for (name, body) in [
            (self.csv_name, &self.csv),
            ("run.json", &self.metadata_json),
            ("report.json", &self.report_json),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(io(path.clone()))?;
        }
        Ok(())
    }
}

/// Runs a validated experiment. `schedule` replaces the generated schedule.
pub fn execute(
    exp: &Experiment,
    schedule: Option<ScheduleTrace>,
) -> Result<RunArtifacts, CliError> {
    let cfg = &exp.config;
    let (trace_source, schedule) = match schedule {
        Some(s) => {
            s.validate(&cfg.params, &exp.graph)
                .map_err(|e| CliError::Run(format!("replayed schedule: {e}")))?;
            if s.horizon() != cfg.horizon {
                return Err(CliError::Run(format!(
                    "replayed schedule covers {} ticks, config asks for {}",
                    s.horizon(),
                    cfg.horizon
                )));
            }
            ("file".to_string(), s)
        }
        None => (
            "generated".to_string(),
            ScheduleTrace::generate(
                &cfg.params,
                &exp.graph,
                cfg.horizon,
                &mut stream(cfg.seed, Stream::Schedule),
            )
            .map_err(|e| CliError::Run(e.to_string()))?,
        ),
    };
    let n = exp.graph.node_count();
    let constants = theorem2_constants(n, cfg.params.l_del, cfg.params.l_u, cfg.params.l_f)
        .map_err(|e| CliError::Run(e.to_string()))?;

    let (learning, raps, checks, csv_name, csv, max_residual, stale) = match cfg.mode {
        Mode::Learning | Mode::Audit => {
            let model = exp
                .model
                .as_ref()
                .expect("validated learning config has a model");
            let options = RunOptions {
                record_history: cfg.mode == Mode::Audit,
                fault: None,
            };
            let (report, checks, trace) = learning_report(exp, model, &schedule, &options)?;
            let csv = trace.to_csv();
            (
                Some(report),
                None,
                checks,
                "beliefs.csv",
                csv,
                trace.max_residual(),
                trace.stale_drops(),
            )
        }
        Mode::Raps => {
            let x0 = exp.x0.as_ref().expect("validated raps config has x0");
            let out = run_raps(&exp.graph, &schedule, x0, &RunOptions::default())
                .map_err(|e| CliError::Run(e.to_string()))?;
            let decay = check_raps_decay(&out, &constants);
            let checks = vec![
                Check::at_most("mass_conservation", out.max_residual(), MASS_TOL * n as f64),
                Check {
                    name: "consensus_bound".into(),
                    value: decay.max_error,
                    threshold: f64::NAN,
                    passed: decay.bound_satisfied,
                },
            ];
            (
                None,
                Some(decay),
                checks,
                "raps.csv",
                out.to_csv(),
                out.max_residual(),
                out.stale_drops(),
            )
        }
    };
    let passed = checks.iter().all(|c| c.passed);
    let report = Report {
        name: cfg.display_name(),
        mode: cfg.mode,
        seed: cfg.seed,
        horizon: cfg.horizon,
        constants,
        learning,
        raps,
        checks,
        passed,
    };
    let metadata = RunMetadata {
        config: cfg,
        seed: cfg.seed,
        horizon: cfg.horizon,
        trace: trace_source,
        max_mass_residual: max_residual,
        stale_drops: stale,
    };
    Ok(RunArtifacts {
        csv_name,
        csv,
        metadata_json: serde_json::to_string_pretty(&metadata).expect("metadata serializes") + "\n",
        report_json: serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        report,
    })
}

/// Validates, runs and writes outputs to the configured directory.
pub fn run_experiment(
    config: &ExperimentConfig,
    schedule_file: Option<&Path>,
) -> Result<RunArtifacts, CliError> {
    let exp = config.validate()?;
    let schedule = match schedule_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            Some(
                ScheduleTrace::parse(&text, &exp.graph)
                    .map_err(|e| CliError::Run(e.to_string()))?,
            )
        }
        None => None,
    };
    let artifacts = execute(&exp, schedule)?;
    artifacts.write(&config.output.dir)?;
    Ok(artifacts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub seed: u64,
    pub passed: bool,
    pub concentrated: Option<bool>,
    pub concentration_tick: Option<usize>,
    pub max_mass_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub name: String,
    pub runs: Vec<SweepRun>,
    pub concentrated_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub total_runs: usize,
    pub concentrated_runs: usize,
    pub passed: bool,
}

/// Runs every configuration at every seed in parallel. Each run writes to
/// `<out_dir>/<name>/seed-<seed>/`; the aggregate goes to `<out_dir>/sweep.json`.
pub fn sweep(
    configs: &[ExperimentConfig],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<SweepReport, CliError> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(CliError::EmptySweep);
    }
    let experiments: Vec<Experiment> = configs
        .iter()
        .map(|c| c.validate())
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, u64)> = (0..experiments.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<Result<SweepRun, CliError>> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let mut exp = experiments[c].clone();
            exp.config.seed = seed;
            exp.config.output.dir = out_dir
                .join(exp.config.display_name())
                .join(format!("seed-{seed}"));
            let artifacts = execute(&exp, None)?;
            artifacts.write(&exp.config.output.dir)?;
            let learning = artifacts.report.learning.as_ref();
            Ok(SweepRun {
                seed,
                passed: artifacts.passed(),
                concentrated: learning.map(|l| l.concentrated),
                concentration_tick: learning.and_then(|l| l.concentration_tick),
                max_mass_residual: artifacts.report.checks[0].value,
            })
        })
        .collect();
    let mut runs = results.into_iter();
    let mut cells = Vec::with_capacity(experiments.len());
    for exp in &experiments {
        let cell_runs = runs
            .by_ref()
            .take(seeds.len())
            .collect::<Result<Vec<_>, _>>()?;
        cells.push(SweepCell {
            name: exp.config.display_name(),
            concentrated_runs: cell_runs
                .iter()
                .filter(|r| r.concentrated == Some(true))
                .count(),
            runs: cell_runs,
        });
    }
    let report = SweepReport {
        total_runs: jobs.len(),
        concentrated_runs: cells.iter().map(|c| c.concentrated_runs).sum(),
        passed: cells.iter().all(|c| c.runs.iter().all(|r| r.passed)),
        cells,
    };
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let path = out_dir.join("sweep.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&report).expect("sweep serializes") + "\n",
    )
    .map_err(|source| CliError::Io { path, source })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap();
            assert_eq!(c.name.as_deref(), Some(name));
            c.validate().unwrap();
        }
        assert!(matches!(preset("nope"), Err(CliError::Config { .. })));
    }

    #[test]
    fn preset_objective_is_calibrated() {
        let exp = preset("star-hi").unwrap().validate().unwrap();
        let obj = exp.model.unwrap().objective().unwrap();
        assert_eq!(obj.optimal, vec![2]);
        assert!((obj.values[2] - 0.29).abs() <= 0.01, "{:?}", obj.values);
    }

    #[test]
    fn concentration_tick_semantics() {
        assert_eq!(concentration_tick(&[0.3, 0.96, 0.5, 0.97, 0.99]), Some(3));
        assert_eq!(concentration_tick(&[0.3, 0.96, 0.5]), None);
        assert_eq!(concentration_tick(&[0.99, 0.99]), Some(0));
    }

    #[test]
    fn empty_sweep_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            sweep(&[], &[0], dir.path()),
            Err(CliError::EmptySweep)
        ));
        let c = preset("star-hi").unwrap();
        assert!(matches!(
            sweep(&[c], &[], dir.path()),
            Err(CliError::EmptySweep)
        ));
    }

    #[test]
    fn overrides_apply() {
        let mut c = preset("path-lo").unwrap();
        Overrides {
            seed: Some(9),
            horizon: Some(50),
            audit: true,
            ..Overrides::default()
        }
        .apply(&mut c);
        assert_eq!((c.seed, c.horizon, c.mode), (9, 50, Mode::Audit));
    }
}
