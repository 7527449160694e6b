//! Episode evaluation, race metrics, ablation over curriculum stages, data
//! export and the command-line front end.

mod ablation;
pub mod cli;
mod config;
mod trajectory;

pub use ablation::{run_ablation, AblationReport, AblationRow};
pub use config::{
    AblationSection, ConfigError, EvaluateSection, FileConfig, TrackSection, TrainSection,
};
pub use trajectory::{
    export_trajectories, load_trajectories, logged_gate_events, replay_gate_events, EpisodeHistory,
    GatePassage, TrajectoryMeta, TrajectoryRecord,
};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AgentStatus, EnvConfig, EventKind, RacingEnv, TerminationCause};
use crate::nn::{forward, NnError, PolicyParams};
use crate::orchestrator::pad_observations;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Checkpoint(#[from] NnError),
    #[error(transparent)]
    Track(#[from] crate::track::TrackError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("episode {episode}: {message}")]
    Episode { episode: usize, message: String },
}

/// How an episode or agent counts as a success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessMode {
    /// Every agent reaches the lap target without a collision termination.
    #[default]
    PerEpisode,
    /// Each agent is scored on its own.
    PerAgent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub agent: usize,
    /// Path length over active flight time, m/s.
    pub mean_velocity: f64,
    pub path_length: f64,
    pub flight_time: f64,
    pub lap_times: Vec<f64>,
    pub laps_completed: u32,
    pub gates_passed: u32,
    /// Came within the collision radius of another drone at least once.
    pub collided: bool,
    pub termination: Option<TerminationCause>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    pub agents: Vec<AgentResult>,
    pub success: bool,
    /// Simulated seconds.
    pub duration: f64,
}

/// Fixed-policy evaluation of one environment configuration.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub env: EnvConfig,
    /// One policy per agent.
    pub policies: Vec<PolicyParams>,
    pub episodes: usize,
    /// Episode `i` runs with seed `seed_base + i`.
    pub seed_base: u64,
    pub success_mode: SuccessMode,
    /// Record full histories for the first this many episodes.
    pub record_episodes: usize,
}

impl EvalSetup {
    pub fn new(
        env: EnvConfig,
        policies: Vec<PolicyParams>,
        episodes: usize,
        seed_base: u64,
    ) -> Self {
        Self {
            env,
            policies,
            episodes,
            seed_base,
            success_mode: SuccessMode::PerEpisode,
            record_episodes: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.episodes == 0 {
            return Err(EvalError::InvalidConfig(
                "episodes must be at least 1".into(),
            ));
        }
        if self.env.lap_target.is_none() {
            return Err(EvalError::InvalidConfig(
                "evaluation needs a lap target".into(),
            ));
        }
        if self.policies.len() != self.env.num_agents {
            return Err(EvalError::InvalidConfig(format!(
                "{} policies for {} agents",
                self.policies.len(),
                self.env.num_agents
            )));
        }
        let need = self.env.obs_dim();
        if let Some(p) = self.policies.iter().find(|p| p.obs_dim < need) {
            return Err(EvalError::InvalidConfig(format!(
                "policy expects {} observation entries, environment produces {need}",
                p.obs_dim
            )));
        }
        self.env
            .validate()
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: samples.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub num_agents: usize,
    pub success_mode: SuccessMode,
    /// Percent of all episodes (or agent runs in per-agent mode).
    pub success_rate: f64,
    /// Per-run mean lap time over successful runs; `None` prints as N/A.
    pub lap_time: Option<Stat>,
    /// Agent mean velocity over successful runs.
    pub velocity: Option<Stat>,
    /// Agent mean velocity over every run, successful or not.
    pub velocity_all: Stat,
    pub mean_gates_passed: f64,
}

/// Aggregate episode results. Depends on nothing but its arguments.
pub fn summarize(results: &[EpisodeResult], mode: SuccessMode) -> MetricsSummary {
    let runs: Vec<(&AgentResult, bool)> = results
        .iter()
        .flat_map(|e| {
            e.agents.iter().map(move |a| {
                let ok = match mode {
                    SuccessMode::PerEpisode => e.success,
                    SuccessMode::PerAgent => a.success,
                };
                (a, ok)
            })
        })
        .collect();
    let success_rate = match mode {
        SuccessMode::PerEpisode if !results.is_empty() => {
            100.0 * results.iter().filter(|e| e.success).count() as f64 / results.len() as f64
        }
        SuccessMode::PerAgent if !runs.is_empty() => {
            100.0 * runs.iter().filter(|r| r.1).count() as f64 / runs.len() as f64
        }
        _ => 0.0,
    };
    let lap_times: Vec<f64> = runs
        .iter()
        .filter(|(a, ok)| *ok && !a.lap_times.is_empty())
        .map(|(a, _)| a.lap_times.iter().sum::<f64>() / a.lap_times.len() as f64)
        .collect();
    let velocities: Vec<f64> = runs
        .iter()
        .filter(|r| r.1)
        .map(|(a, _)| a.mean_velocity)
        .collect();
    let all: Vec<f64> = runs.iter().map(|(a, _)| a.mean_velocity).collect();
    let gates =
        runs.iter().map(|(a, _)| a.gates_passed as f64).sum::<f64>() / runs.len().max(1) as f64;
    MetricsSummary {
        episodes: results.len(),
        num_agents: results.first().map_or(0, |e| e.agents.len()),
        success_mode: mode,
        success_rate,
        lap_time: Stat::of(&lap_times),
        velocity: Stat::of(&velocities),
        velocity_all: Stat::of(&all).unwrap_or(Stat {
            mean: 0.0,
            std: 0.0,
            count: 0,
        }),
        mean_gates_passed: gates,
    }
}

/// Play one episode with deterministic (mean) actions.
pub fn run_episode(
    env_config: &EnvConfig,
    policies: &[PolicyParams],
    episode: usize,
    seed: u64,
    record: bool,
) -> Result<(EpisodeResult, Option<EpisodeHistory>), EvalError> {
    let fail = |message: String| EvalError::Episode { episode, message };
    let lap_target = env_config.lap_target.unwrap_or(u32::MAX);
    let mut env = RacingEnv::new(env_config.clone()).map_err(|e| fail(e.to_string()))?;
    let width = policies.iter().map(|p| p.obs_dim).max().unwrap_or(0);
    let mut obs = pad_observations(env.reset(seed), width);
    let n = env.num_agents();
    let mut collided = vec![false; n];
    let mut history = record.then(|| EpisodeHistory::start(&env, episode));

    loop {
        let racing = env.racing_mask();
        let actions = policies
            .iter()
            .zip(&obs)
            .map(|(p, o)| forward(p, &o[..p.obs_dim]).map(|out| out.action_mean))
            .collect::<Result<Vec<_>, _>>()?;
        let out = env.step(&actions).map_err(|e| fail(e.to_string()))?;
        for ev in &out.events {
            if let EventKind::Collision { other, .. } = ev.kind {
                collided[ev.agent] = true;
                collided[other] = true;
            }
        }
        if let Some(h) = history.as_mut() {
            h.push_step(&env, &racing, &out.events);
        }
        if out.episode_over {
            break;
        }
        obs = pad_observations(
            out.agents.into_iter().map(|a| a.observation).collect(),
            width,
        );
    }

    let progress = env.progress();
    let statuses = env.statuses();
    let agents: Vec<AgentResult> = env
        .flight_stats()
        .into_iter()
        .enumerate()
        .map(|(i, (path_length, flight_time))| {
            let termination = match statuses[i] {
                AgentStatus::Terminated(c) => Some(c),
                _ => None,
            };
            AgentResult {
                agent: i,
                mean_velocity: if flight_time > 0.0 {
                    path_length / flight_time
                } else {
                    0.0
                },
                path_length,
                flight_time,
                lap_times: progress[i].lap_times.clone(),
                laps_completed: progress[i].laps_completed,
                gates_passed: progress[i].gates_passed_total,
                collided: collided[i],
                termination,
                success: progress[i].laps_completed >= lap_target
                    && termination != Some(TerminationCause::Collision),
            }
        })
        .collect();
    let success = agents.iter().all(|a| a.success);
    let result = EpisodeResult {
        episode,
        seed,
        agents,
        success,
        duration: env.sim_time(),
    };
    Ok((result, history))
}

/// Evaluation output: results in episode order plus recorded histories.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub results: Vec<EpisodeResult>,
    pub summary: MetricsSummary,
    pub histories: Vec<EpisodeHistory>,
}

pub fn evaluate(setup: &EvalSetup) -> Result<Evaluation, EvalError> {
    setup.validate()?;
    let outputs = (0..setup.episodes)
        .into_par_iter()
        .map(|i| {
            run_episode(
                &setup.env,
                &setup.policies,
                i,
                setup.seed_base.wrapping_add(i as u64),
                i < setup.record_episodes,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut results = Vec::with_capacity(outputs.len());
    let mut histories = Vec::new();
    for (r, h) in outputs {
        results.push(r);
        histories.extend(h);
    }
    let summary = summarize(&results, setup.success_mode);
    Ok(Evaluation {
        results,
        summary,
        histories,
    })
}

/// Resolve a file config into an evaluation and run it.
pub fn run_evaluation(cfg: &FileConfig) -> Result<Evaluation, EvalError> {
    evaluate(&cfg.eval_setup()?)
}

fn fmt_opt(s: Option<Stat>) -> [String; 2] {
    match s {
        Some(s) => [format!("{:.4}", s.mean), format!("{:.4}", s.std)],
        None => ["N/A".into(), "N/A".into()],
    }
}

pub const METRICS_HEADER: [&str; 11] = [
    "label",
    "num_agents",
    "episodes",
    "success_rate_pct",
    "lap_time_mean",
    "lap_time_std",
    "velocity_mean",
    "velocity_std",
    "velocity_all_mean",
    "velocity_all_std",
    "mean_gates_passed",
];

pub fn metrics_row(label: &str, s: &MetricsSummary) -> Vec<String> {
    let [lt, lts] = fmt_opt(s.lap_time);
    let [v, vs] = fmt_opt(s.velocity);
    vec![
        label.to_string(),
        s.num_agents.to_string(),
        s.episodes.to_string(),
        format!("{:.1}", s.success_rate),
        lt,
        lts,
        v,
        vs,
        format!("{:.4}", s.velocity_all.mean),
        format!("{:.4}", s.velocity_all.std),
        format!("{:.2}", s.mean_gates_passed),
    ]
}

fn csv_err(path: &std::path::Path) -> impl Fn(csv::Error) -> EvalError + '_ {
    move |e| EvalError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Metrics table with a header row.
pub fn write_metrics_csv(
    path: &std::path::Path,
    rows: &[(String, MetricsSummary)],
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(METRICS_HEADER).map_err(csv_err(path))?;
    for (label, s) in rows {
        w.write_record(metrics_row(label, s))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One row per agent per episode.
pub fn write_episodes_csv(
    path: &std::path::Path,
    results: &[EpisodeResult],
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record([
        "episode",
        "seed",
        "agent",
        "mean_velocity",
        "laps_completed",
        "gates_passed",
        "lap_times",
        "collided",
        "termination",
        "agent_success",
        "episode_success",
        "duration",
    ])
    .map_err(csv_err(path))?;
    for e in results {
        for a in &e.agents {
            let laps: Vec<String> = a.lap_times.iter().map(|t| format!("{t:.4}")).collect();
            let termination = a
                .termination
                .map(|c| {
                    serde_json::to_value(c)
                        .expect("enum")
                        .as_str()
                        .unwrap_or_default()
                        .to_string()
                })
                .unwrap_or_default();
            w.write_record([
                e.episode.to_string(),
                e.seed.to_string(),
                a.agent.to_string(),
                format!("{:.6}", a.mean_velocity),
                a.laps_completed.to_string(),
                a.gates_passed.to_string(),
                laps.join(";"),
                a.collided.to_string(),
                termination,
                a.success.to_string(),
                e.success.to_string(),
                format!("{:.2}", e.duration),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Plain-text metrics table for the terminal.
pub fn format_metrics_table(rows: &[(String, MetricsSummary)]) -> String {
    let mut cells: Vec<Vec<String>> = vec![METRICS_HEADER.iter().map(|s| s.to_string()).collect()];
    cells.extend(rows.iter().map(|(l, s)| metrics_row(l, s)));
    let widths: Vec<usize> = (0..METRICS_HEADER.len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &cells {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Paths of the files an evaluation run writes.
pub fn output_paths(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    (dir.join("metrics.csv"), dir.join("episodes.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CurriculumStage;
    use crate::track::Track;

    fn ring(n: usize) -> EnvConfig {
        let mut c = EnvConfig::new(
            Track::builtin("ring").unwrap(),
            n,
            CurriculumStage::final_stage(),
        );
        c.lap_target = Some(2);
        c.max_steps = 200;
        c
    }

    fn agent(v: f64, laps: Vec<f64>, success: bool) -> AgentResult {
        AgentResult {
            agent: 0,
            mean_velocity: v,
            path_length: v * 10.0,
            flight_time: 10.0,
            laps_completed: laps.len() as u32,
            lap_times: laps,
            gates_passed: 10,
            collided: false,
            termination: None,
            success,
        }
    }

    fn episode(agents: Vec<AgentResult>) -> EpisodeResult {
        let success = agents.iter().all(|a| a.success);
        EpisodeResult {
            episode: 0,
            seed: 0,
            agents,
            success,
            duration: 20.0,
        }
    }

    #[test]
    fn statistics_use_successful_episodes_only() {
        let rs = vec![
            episode(vec![
                agent(4.0, vec![10.0, 12.0], true),
                agent(2.0, vec![14.0, 16.0], true),
            ]),
            episode(vec![
                agent(3.0, vec![11.0, 13.0], true),
                agent(1.0, vec![], false),
            ]),
        ];
        let s = summarize(&rs, SuccessMode::PerEpisode);
        assert_eq!(s.success_rate, 50.0);
        let v = s.velocity.unwrap();
        assert_eq!((v.mean, v.std, v.count), (3.0, 1.0, 2));
        let lt = s.lap_time.unwrap();
        assert_eq!((lt.mean, lt.std), (13.0, 2.0));
        assert_eq!(s.velocity_all.mean, 2.5);

        let a = summarize(&rs, SuccessMode::PerAgent);
        assert_eq!(a.success_rate, 75.0);
        assert_eq!(a.velocity.unwrap().mean, 3.0);
    }

    #[test]
    fn no_successes_report_na() {
        let rs = vec![episode(vec![agent(0.0, vec![], false)])];
        let s = summarize(&rs, SuccessMode::PerEpisode);
        assert_eq!(s.success_rate, 0.0);
        assert!(s.lap_time.is_none() && s.velocity.is_none());
        let row = metrics_row("vanilla", &s);
        assert_eq!(row[4], "N/A");
        assert_eq!(row[6], "N/A");
    }

    #[test]
    fn single_episode_has_zero_std() {
        let s = summarize(
            &[episode(vec![agent(3.5, vec![9.0, 9.5], true)])],
            SuccessMode::PerEpisode,
        );
        assert_eq!(s.velocity.unwrap().std, 0.0);
        assert_eq!(s.lap_time.unwrap().std, 0.0);
    }

    #[test]
    fn zero_action_policy_never_succeeds() {
        let env = ring(2);
        let p = PolicyParams::zeros(env.obs_dim(), &[8]);
        let ev = evaluate(&EvalSetup::new(env, vec![p.clone(), p], 3, 10)).unwrap();
        assert_eq!(ev.summary.success_rate, 0.0);
        assert!(ev.summary.lap_time.is_none());
        assert!(ev
            .results
            .iter()
            .all(|e| e.agents.iter().all(|a| a.lap_times.is_empty())));
        let seeds: Vec<u64> = ev.results.iter().map(|e| e.seed).collect();
        assert_eq!(seeds, vec![10, 11, 12]);
        assert_eq!(summarize(&ev.results, SuccessMode::PerEpisode), ev.summary);
    }

    #[test]
    fn evaluation_is_deterministic_and_ordered() {
        let env = ring(2);
        let p = PolicyParams::init(env.obs_dim(), &[8], 4);
        let setup = EvalSetup::new(env, vec![p.clone(), p], 4, 0);
        let a = evaluate(&setup).unwrap();
        let b = evaluate(&setup).unwrap();
        assert_eq!(a.results, b.results);
        assert!(a.results.iter().enumerate().all(|(i, e)| e.episode == i));
        assert!(a
            .results
            .iter()
            .flat_map(|e| &e.agents)
            .all(|r| r.mean_velocity >= 0.0));
    }

    #[test]
    fn setup_validation() {
        let env = ring(2);
        let p = PolicyParams::init(env.obs_dim(), &[8], 4);
        assert!(
            EvalSetup::new(env.clone(), vec![p.clone(), p.clone()], 0, 0)
                .validate()
                .is_err()
        );
        assert!(EvalSetup::new(env.clone(), vec![p.clone()], 1, 0)
            .validate()
            .is_err());
        let narrow = PolicyParams::init(env.obs_dim() - 1, &[8], 4);
        assert!(
            EvalSetup::new(env.clone(), vec![narrow.clone(), narrow], 1, 0)
                .validate()
                .is_err()
        );
        // wider networks take zero-padded observations
        let wide = PolicyParams::init(env.obs_dim() + 8, &[8], 4);
        assert!(evaluate(&EvalSetup::new(env, vec![wide.clone(), wide], 1, 0)).is_ok());
    }

    #[test]
    fn csv_outputs_have_headers() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![episode(vec![agent(3.0, vec![10.0], true)])];
        let s = summarize(&rs, SuccessMode::PerEpisode);
        let (m, e) = output_paths(dir.path());
        write_metrics_csv(&m, &[("ring".into(), s.clone())]).unwrap();
        write_episodes_csv(&e, &rs).unwrap();
        let text = std::fs::read_to_string(&m).unwrap();
        assert!(text.starts_with("label,num_agents,episodes,success_rate_pct"));
        assert_eq!(text.lines().count(), 2);
        assert_eq!(std::fs::read_to_string(&e).unwrap().lines().count(), 2);
        assert!(format_metrics_table(&[("ring".into(), s)]).contains("100.0"));
    }
}
