//! Command-line entry point. Exit codes: 0 success, 1 configuration error,
//! 2 runtime fault.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{
    evaluate, export_trajectories, format_metrics_table, load_trajectories, logged_gate_events,
    output_paths, replay_gate_events, run_ablation, write_episodes_csv, write_metrics_csv,
    ConfigError, EvalError, FileConfig,
};
use crate::env::CurriculumStage;
use crate::nn::load_checkpoint;
use crate::orchestrator::{
    run_training, run_vanilla_baseline, EnvEvaluator, NoHooks, OrchestratorError,
};

pub const OUT_DIR_ENV: &str = "CRUISE_OUT_DIR";
pub const SNAPSHOT_FILE: &str = "config.resolved.toml";

#[derive(Debug, Parser)]
#[command(
    name = "gaterace",
    version,
    about = "Multi-drone racing: training, evaluation and analysis"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration; defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; falls back to the config file, then $CRUISE_OUT_DIR, then ./runs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Reward without the extension terms.
    #[arg(long, global = true)]
    paper_strict: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Curriculum training with self-play.
    Train {
        /// Continue from the resume state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Final-stage-only training with the full curriculum budget.
    TrainVanilla,
    /// Evaluate checkpoints and write metrics.
    Evaluate,
    /// Velocity per curriculum stage from per-stage checkpoints.
    Ablate,
    /// Write the configured track geometry as TOML.
    ExportTrack,
    /// Recompute gate passages from a trajectory file and compare with its log.
    Replay { trajectory: PathBuf },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidConfig(_) | EvalError::Checkpoint(_) | EvalError::Track(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::InvalidConfig(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn resolve(global: &GlobalArgs) -> Result<(FileConfig, PathBuf), Failure> {
    let mut cfg = match &global.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if global.paper_strict {
        cfg.paper_strict = true;
    }
    let out = global
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    cfg.out_dir = Some(out.clone());
    Ok((cfg, out))
}

fn write_snapshot(cfg: &FileConfig, out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let path = out.join(SNAPSHOT_FILE);
    fs::write(&path, cfg.to_toml()).map_err(|e| io_failure(&path, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (cfg, out) = resolve(&cli.global)?;
    match cli.command {
        Command::Train { resume } => {
            let tc = cfg.training_config()?;
            write_snapshot(&cfg, &out)?;
            let o = run_training(&tc, Some(&out), resume, &mut EnvEvaluator, &mut NoHooks)?;
            let syncs = o.sync_events.iter().filter(|e| e.synced).count();
            println!(
                "trained {} timesteps over {} phases, {} opponent syncs{}; outputs in {}",
                o.timesteps,
                o.phase_params.len(),
                syncs,
                if o.interrupted {
                    " (stopped early)"
                } else {
                    ""
                },
                out.display()
            );
        }
        Command::TrainVanilla => {
            let tc = cfg.training_config()?;
            write_snapshot(&cfg, &out)?;
            let o = run_vanilla_baseline(&tc, Some(&out), &mut EnvEvaluator, &mut NoHooks)?;
            println!(
                "trained {} timesteps at the final stage; outputs in {}",
                o.timesteps,
                out.display()
            );
        }
        Command::Evaluate => {
            let setup = cfg.eval_setup()?;
            write_snapshot(&cfg, &out)?;
            let ev = evaluate(&setup)?;
            let label = format!("{}_n{}", setup.env.track.name, setup.env.num_agents);
            let rows = vec![(label, ev.summary.clone())];
            let (metrics, episodes) = output_paths(&out);
            write_metrics_csv(&metrics, &rows)?;
            write_episodes_csv(&episodes, &ev.results)?;
            for h in &ev.histories {
                export_trajectories(
                    h,
                    &out.join("trajectories")
                        .join(format!("episode_{}.jsonl", h.meta.episode)),
                )?;
            }
            print!("{}", format_metrics_table(&rows));
        }
        Command::Ablate => {
            let a = &cfg.ablate;
            if a.checkpoints.is_empty() {
                return Err(Failure::Config(
                    "config field `ablate.checkpoints`: no checkpoint given".into(),
                ));
            }
            let stages = a.stage_indices();
            if stages.len() != a.checkpoints.len() {
                return Err(Failure::Config(
                    "config field `ablate.stages`: one stage per checkpoint".into(),
                ));
            }
            let mut pairs = Vec::new();
            for (k, path) in stages.iter().zip(&a.checkpoints) {
                let stage = CurriculumStage::builtin(*k).ok_or_else(|| {
                    Failure::Config(format!(
                        "config field `ablate.stages`: no built-in stage {k}"
                    ))
                })?;
                let params = load_checkpoint(path).map_err(|e| Failure::Config(e.to_string()))?;
                pairs.push((stage, params));
            }
            let base = cfg.eval_env(1, cfg.evaluate.stage)?;
            write_snapshot(&cfg, &out)?;
            let report = run_ablation(
                &pairs,
                &base,
                &a.agent_counts,
                a.episodes,
                cfg.seed,
                cfg.evaluate.success_mode,
            )?;
            let rows: Vec<_> = report
                .rows
                .iter()
                .map(|r| {
                    (
                        format!("stage{}_n{}", r.stage, r.num_agents),
                        r.summary.clone(),
                    )
                })
                .collect();
            write_metrics_csv(&out.join("ablation.csv"), &rows)?;
            print!("{}", format_metrics_table(&rows));
            for (n, ok) in &report.monotone {
                let verdict = if *ok {
                    "increases"
                } else {
                    "does NOT increase"
                };
                println!("n={n}: velocity {verdict} stage over stage");
            }
        }
        Command::ExportTrack => {
            let track = cfg.track.resolve()?;
            fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
            let path = out.join(format!("{}.toml", track.name));
            track
                .save(&path)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("{}", path.display());
        }
        Command::Replay { trajectory } => {
            let h = load_trajectories(&trajectory).map_err(|e| Failure::Config(e.to_string()))?;
            let logged = logged_gate_events(&h);
            let replayed = replay_gate_events(&h);
            println!(
                "{} logged gate passages, {} replayed",
                logged.len(),
                replayed.len()
            );
            if logged != replayed {
                return Err(Failure::Runtime(
                    "replayed gate passages differ from the log".into(),
                ));
            }
            println!("replay matches");
        }
    }
    Ok(())
}
