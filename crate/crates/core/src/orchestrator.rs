//! Curriculum schedule and iterative self-play against frozen opponents.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControllerGains;
use crate::dynamics::DroneParams;
use crate::env::{CurriculumStage, EnvConfig, RacingEnv, RewardExtensions, RewardWeights};
use crate::nn::{forward, load_checkpoint, save_checkpoint, NnError, PolicyParams};
use crate::ppo::{PpoConfig, PpoError, PpoTrainer, RolloutCollector, TrainingRecord};
use crate::seeding::{derive_seed, stream};
use crate::track::Track;

/// Consecutive non-finite updates tolerated before a run is aborted.
const MAX_CONSECUTIVE_FAULTS: u32 = 5;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("win rate of an empty result list")]
    EmptyResults,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training aborted after {failures} consecutive non-finite updates in phase {phase}")]
    Unrecoverable { phase: usize, failures: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Self-play against frozen opponents inside every curriculum stage.
    CurriculumSelfplay,
    /// Single-agent curriculum, then one self-play phase at final-stage
    /// parameters.
    SingleAgentThenSelfplay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfPlayConfig {
    /// Timesteps between evaluations, `T_eval`.
    pub eval_interval: u64,
    /// Evaluation episodes `M`; the same count serves as `n_eval` in the win rate.
    pub eval_episodes: usize,
    /// Win rate `τ` at which opponents are synchronized.
    pub win_threshold: f64,
    pub num_agents: usize,
    pub mode: TrainingMode,
    /// Budget of the self-play phase in single-agent-then-self-play mode.
    pub selfplay_budget: u64,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        Self {
            eval_interval: 100_000,
            eval_episodes: 20,
            win_threshold: 0.6,
            num_agents: 4,
            mode: TrainingMode::SingleAgentThenSelfplay,
            selfplay_budget: 10_000_000,
        }
    }
}

impl SelfPlayConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(m.into()));
        if self.eval_interval == 0 {
            return bad("selfplay.eval_interval must be positive");
        }
        if self.eval_episodes == 0 {
            return bad("selfplay.eval_episodes must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.win_threshold) {
            return bad("selfplay.win_threshold must lie in [0, 1]");
        }
        if self.num_agents == 0 {
            return bad("selfplay.num_agents must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub stages: Vec<CurriculumStage>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            stages: (1..=5)
                .map(|k| CurriculumStage::builtin(k).expect("built-in stage"))
                .collect(),
        }
    }
}

impl CurriculumSchedule {
    /// Built-in stages `1..=budgets.len()` with the given budgets.
    pub fn scaled(budgets: &[u64]) -> Self {
        Self {
            stages: budgets
                .iter()
                .enumerate()
                .map(|(k, &b)| {
                    CurriculumStage::builtin(k as u32 + 1)
                        .expect("at most five stages")
                        .with_budget(b)
                })
                .collect(),
        }
    }

    /// Final stage only, with the whole budget.
    pub fn vanilla(total_budget: u64) -> Self {
        Self {
            stages: vec![CurriculumStage::final_stage().with_budget(total_budget)],
        }
    }

    pub fn total_budget(&self) -> u64 {
        self.stages.iter().map(|s| s.timestep_budget).sum()
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.stages.is_empty() {
            return Err(OrchestratorError::InvalidConfig(
                "schedule has no stages".into(),
            ));
        }
        if !self.stages.windows(2).all(|w| w[0].index < w[1].index) {
            return Err(OrchestratorError::InvalidConfig(
                "stage indices must be strictly increasing".into(),
            ));
        }
        for s in &self.stages {
            s.validate().map_err(OrchestratorError::InvalidConfig)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub active_progress: u32,
    pub opponent_progress: Vec<u32>,
    /// The episode hit an environment fault; scored as a loss.
    pub faulted: bool,
}

impl MatchResult {
    /// Strictly ahead of every opponent. Ties lose.
    pub fn active_won(&self) -> bool {
        !self.faulted
            && self
                .opponent_progress
                .iter()
                .all(|&p| self.active_progress > p)
    }
}

pub fn win_rate(results: &[MatchResult]) -> Result<f64, OrchestratorError> {
    if results.is_empty() {
        return Err(OrchestratorError::EmptyResults);
    }
    let wins = results.iter().filter(|r| r.active_won()).count();
    Ok(wins as f64 / results.len() as f64)
}

/// Play `episodes` evaluation episodes with mean actions; agent 0 is the
/// active policy. Episode `i` uses seed `derive_seed(seed, EVALUATION, i)`.
pub fn evaluate_active(
    active: &PolicyParams,
    opponents: &[PolicyParams],
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Vec<MatchResult> {
    let mut config = env.clone();
    config.num_agents = opponents.len() + 1;
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let policies: Vec<&PolicyParams> = std::iter::once(active).chain(opponents).collect();
            match play_episode(
                &policies,
                &config,
                derive_seed(seed, stream::EVALUATION, i as u64),
            ) {
                Ok(env) => {
                    let progress: Vec<u32> = env
                        .progress()
                        .iter()
                        .map(|p| p.gates_passed_total)
                        .collect();
                    MatchResult {
                        active_progress: progress[0],
                        opponent_progress: progress[1..].to_vec(),
                        faulted: false,
                    }
                }
                Err(_) => MatchResult {
                    active_progress: 0,
                    opponent_progress: vec![0; opponents.len()],
                    faulted: true,
                },
            }
        })
        .collect()
}

/// Run one deterministic episode to completion and return the final env.
pub fn play_episode(
    policies: &[&PolicyParams],
    config: &EnvConfig,
    seed: u64,
) -> Result<RacingEnv, OrchestratorError> {
    let mut env = RacingEnv::new(config.clone())
        .map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?;
    let mut obs = env.reset(seed);
    loop {
        let actions = policies
            .iter()
            .zip(&obs)
            .map(|(p, o)| Ok(forward(p, o)?.action_mean))
            .collect::<Result<Vec<_>, NnError>>()?;
        let out = env
            .step(&actions)
            .map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?;
        if out.episode_over {
            return Ok(env);
        }
        obs = out.agents.into_iter().map(|a| a.observation).collect();
    }
}

/// Source of evaluation results, replaceable for testing the sync logic.
pub trait MatchEvaluator {
    fn evaluate(
        &mut self,
        active: &PolicyParams,
        opponents: &[PolicyParams],
        env: &EnvConfig,
        episodes: usize,
        seed: u64,
    ) -> Vec<MatchResult>;
}

/// Evaluates by playing episodes in the racing environment.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnvEvaluator;

impl MatchEvaluator for EnvEvaluator {
    fn evaluate(
        &mut self,
        active: &PolicyParams,
        opponents: &[PolicyParams],
        env: &EnvConfig,
        episodes: usize,
        seed: u64,
    ) -> Vec<MatchResult> {
        evaluate_active(active, opponents, env, episodes, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub index: usize,
    pub stage: CurriculumStage,
    pub num_agents: usize,
    pub budget: u64,
    /// Name used for the phase-end checkpoint.
    pub label: String,
}

impl Phase {
    pub fn selfplay(&self) -> bool {
        self.num_agents > 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub seed: u64,
    pub track: Track,
    pub schedule: CurriculumSchedule,
    pub selfplay: SelfPlayConfig,
    pub ppo: PpoConfig,
    pub rewards: RewardWeights,
    pub extensions: RewardExtensions,
    pub paper_strict: bool,
    pub drone: DroneParams,
    /// Controller gains; derived from `drone` when absent.
    pub gains: Option<ControllerGains>,
    /// Write the resume state every this many timesteps within a phase.
    pub checkpoint_interval: u64,
    /// Stop once this many timesteps have been trained in total.
    pub stop_after: Option<u64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            track: Track::builtin("ring").expect("built-in ring"),
            schedule: CurriculumSchedule::default(),
            selfplay: SelfPlayConfig::default(),
            ppo: PpoConfig::default(),
            rewards: RewardWeights::default(),
            extensions: RewardExtensions::default(),
            paper_strict: false,
            drone: DroneParams::default(),
            gains: None,
            checkpoint_interval: 100_000,
            stop_after: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        self.schedule.validate()?;
        self.selfplay.validate()?;
        self.ppo.validate()?;
        if self.checkpoint_interval == 0 {
            return Err(OrchestratorError::InvalidConfig(
                "checkpoint_interval must be positive".into(),
            ));
        }
        for phase in self.phases() {
            self.env_config(&phase)
                .validate()
                .map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    pub fn phases(&self) -> Vec<Phase> {
        let n = self.selfplay.num_agents;
        let mut phases: Vec<Phase> = self
            .schedule
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| Phase {
                index: i,
                stage: s.clone(),
                num_agents: match self.selfplay.mode {
                    TrainingMode::CurriculumSelfplay => n,
                    TrainingMode::SingleAgentThenSelfplay => 1,
                },
                budget: s.timestep_budget,
                label: format!("stage_{}", s.index),
            })
            .collect();
        if self.selfplay.mode == TrainingMode::SingleAgentThenSelfplay
            && n > 1
            && self.selfplay.selfplay_budget > 0
        {
            phases.push(Phase {
                index: phases.len(),
                stage: CurriculumStage::final_stage(),
                num_agents: n,
                budget: self.selfplay.selfplay_budget,
                label: "selfplay".into(),
            });
        }
        phases
    }

    pub fn env_config(&self, phase: &Phase) -> EnvConfig {
        let mut c = EnvConfig::new(self.track.clone(), phase.num_agents, phase.stage.clone());
        c.weights = self.rewards.clone();
        c.extensions = self.extensions.clone();
        c.paper_strict = self.paper_strict;
        c.gains = self
            .gains
            .clone()
            .unwrap_or_else(|| ControllerGains::for_params(&self.drone));
        c.drone = self.drone.clone();
        c
    }

    pub fn obs_dim(&self) -> usize {
        crate::env::observation_dim(self.track.num_gates(), self.selfplay.num_agents)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEvent {
    pub phase: usize,
    pub stage: u32,
    pub timestep: u64,
    pub phase_timestep: u64,
    pub win_rate: f64,
    pub synced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryEvent {
    pub phase: usize,
    pub timestep: u64,
    pub learning_rate: f64,
    pub consecutive_failures: u32,
}

/// Context handed to [`TrainingHooks::on_update`].
pub struct UpdateContext<'a> {
    pub phase: &'a Phase,
    pub timestep: u64,
    pub phase_timestep: u64,
    pub active: &'a PolicyParams,
    pub opponents: &'a [PolicyParams],
    pub record: &'a TrainingRecord,
}

/// Observation points inside the training loop.
pub trait TrainingHooks {
    fn on_phase_start(&mut self, _phase: &Phase, _active: &PolicyParams) {}
    fn on_update(&mut self, _ctx: &UpdateContext) {}
    fn on_sync(&mut self, _event: &SyncEvent, _active: &PolicyParams, _opponents: &[PolicyParams]) {
    }
    fn on_phase_end(&mut self, _phase: &Phase, _active: &PolicyParams) {}
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoHooks;

impl TrainingHooks for NoHooks {}

/// Where a run stands, written alongside the parameter checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub phase: usize,
    pub phase_timestep: u64,
    pub timestep: u64,
    pub learning_rate: f64,
    pub num_opponents: usize,
    pub completed: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub final_params: PolicyParams,
    /// Active parameters at the end of each phase, by phase label.
    pub phase_params: Vec<(String, PolicyParams)>,
    pub sync_events: Vec<SyncEvent>,
    pub recoveries: Vec<RecoveryEvent>,
    pub records: Vec<TrainingRecord>,
    pub timesteps: u64,
    /// Stopped by `stop_after` before the schedule finished.
    pub interrupted: bool,
}

/// Output files of a run directory.
pub struct RunFiles {
    dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path) -> Result<Self, OrchestratorError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn append_line<T: Serialize>(&self, name: &str, value: &T) -> Result<(), OrchestratorError> {
        let path = self.path(name);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let line = serde_json::to_string(value).expect("record serializes");
        writeln!(f, "{line}").map_err(io_err(&path))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), OrchestratorError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("state serializes");
        fs::write(&path, text).map_err(io_err(&path))
    }
}

pub const STATS_FILE: &str = "training_stats.jsonl";
pub const SYNC_FILE: &str = "sync_events.jsonl";
pub const RECOVERY_FILE: &str = "recoveries.jsonl";
pub const RESUME_FILE: &str = "resume.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

struct RunState {
    phase: usize,
    phase_timestep: u64,
    timestep: u64,
    learning_rate: f64,
    active: PolicyParams,
    opponents: Vec<PolicyParams>,
}

fn save_resume(files: &RunFiles, s: &RunState, completed: bool) -> Result<(), OrchestratorError> {
    save_checkpoint(&s.active, &files.path("resume_active.ckpt"))?;
    for (i, o) in s.opponents.iter().enumerate() {
        save_checkpoint(o, &files.path(&format!("resume_opponent_{i}.ckpt")))?;
    }
    files.write_json(
        RESUME_FILE,
        &ResumeState {
            phase: s.phase,
            phase_timestep: s.phase_timestep,
            timestep: s.timestep,
            learning_rate: s.learning_rate,
            num_opponents: s.opponents.len(),
            completed,
        },
    )
}

/// Load the resume state of a run directory written by [`run_training`].
pub fn load_resume(
    dir: &Path,
) -> Result<(ResumeState, PolicyParams, Vec<PolicyParams>), OrchestratorError> {
    let path = dir.join(RESUME_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let state: ResumeState = serde_json::from_str(&text)
        .map_err(|e| OrchestratorError::InvalidConfig(format!("{}: {e}", path.display())))?;
    let active = load_checkpoint(&dir.join("resume_active.ckpt"))?;
    let opponents = (0..state.num_opponents)
        .map(|i| load_checkpoint(&dir.join(format!("resume_opponent_{i}.ckpt"))))
        .collect::<Result<_, _>>()?;
    Ok((state, active, opponents))
}

/// Run the schedule from the start, or from `out_dir`'s resume state when
/// `resume` is set.
pub fn run_training(
    config: &TrainingConfig,
    out_dir: Option<&Path>,
    resume: bool,
    evaluator: &mut dyn MatchEvaluator,
    hooks: &mut dyn TrainingHooks,
) -> Result<TrainingOutcome, OrchestratorError> {
    config.validate()?;
    let files = out_dir.map(RunFiles::new).transpose()?;
    if let (Some(f), false) = (&files, resume) {
        for name in [STATS_FILE, SYNC_FILE, RECOVERY_FILE] {
            let path = f.path(name);
            if path.exists() {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
    }
    let phases = config.phases();
    let obs_dim = config.obs_dim();
    let n_max = config.selfplay.num_agents;

    let mut state = if resume {
        let dir = out_dir.ok_or_else(|| {
            OrchestratorError::InvalidConfig("resume needs a run directory".into())
        })?;
        let (r, active, opponents) = load_resume(dir)?;
        if active.obs_dim != obs_dim {
            return Err(OrchestratorError::InvalidConfig(
                "resume checkpoint does not match the config".into(),
            ));
        }
        RunState {
            phase: r.phase,
            phase_timestep: r.phase_timestep,
            timestep: r.timestep,
            learning_rate: r.learning_rate,
            active,
            opponents,
        }
    } else {
        let active = PolicyParams::init(
            obs_dim,
            &config.ppo.hidden_sizes,
            derive_seed(config.seed, stream::POLICY_INIT, 0),
        );
        RunState {
            phase: 0,
            phase_timestep: 0,
            timestep: 0,
            learning_rate: config.ppo.learning_rate,
            // initial sync: every opponent starts as a copy of the active policy
            opponents: vec![active.clone(); n_max - 1],
            active,
        }
    };

    let mut outcome = TrainingOutcome {
        final_params: state.active.clone(),
        phase_params: Vec::new(),
        sync_events: Vec::new(),
        recoveries: Vec::new(),
        records: Vec::new(),
        timesteps: state.timestep,
        interrupted: false,
    };

    while state.phase < phases.len() {
        let phase = &phases[state.phase];
        let env_config = config.env_config(phase);
        // padding so single-agent phases share the network input size
        let padded = PaddedEnvConfig::new(env_config.clone(), obs_dim);
        let collector_seed = derive_seed(
            config.seed,
            stream::ROLLOUT_ENV,
            ((state.phase as u64) << 48) | state.phase_timestep,
        );
        let envs = (0..config.ppo.num_envs)
            .map(|_| padded.build())
            .collect::<Result<Vec<_>, _>>()?;
        let mut collector = RolloutCollector::new(envs, collector_seed)?;
        let ppo = PpoConfig {
            learning_rate: state.learning_rate,
            ..config.ppo.clone()
        };
        let mut trainer = PpoTrainer::new(state.active.clone(), ppo, collector_seed)?;
        let opponents_for_phase = |s: &RunState| s.opponents[..phase.num_agents - 1].to_vec();
        hooks.on_phase_start(phase, &state.active);

        let mut failures = 0u32;
        while state.phase_timestep < phase.budget {
            if let Some(limit) = config.stop_after {
                if state.timestep >= limit {
                    if let Some(f) = &files {
                        save_resume(f, &state, false)?;
                    }
                    outcome.final_params = state.active.clone();
                    outcome.timesteps = state.timestep;
                    outcome.interrupted = true;
                    return Ok(outcome);
                }
            }
            let opponents = opponents_for_phase(&state);
            let mut buffer = collector.collect(&trainer.params, &opponents, config.ppo.horizon)?;
            let steps = buffer.len() as u64;
            let stats = match trainer.update(&mut buffer) {
                Ok(stats) => {
                    failures = 0;
                    stats
                }
                Err(PpoError::NonFiniteLoss) => {
                    failures += 1;
                    state.learning_rate *= 0.5;
                    trainer.params = state.active.clone();
                    trainer.adam = crate::ppo::Adam::new(state.active.flat.len());
                    trainer.config.learning_rate = state.learning_rate;
                    let event = RecoveryEvent {
                        phase: phase.index,
                        timestep: state.timestep,
                        learning_rate: state.learning_rate,
                        consecutive_failures: failures,
                    };
                    if let Some(f) = &files {
                        f.append_line(RECOVERY_FILE, &event)?;
                    }
                    outcome.recoveries.push(event);
                    if failures >= MAX_CONSECUTIVE_FAULTS {
                        if let Some(f) = &files {
                            save_resume(f, &state, false)?;
                        }
                        return Err(OrchestratorError::Unrecoverable {
                            phase: phase.index,
                            failures,
                        });
                    }
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            state.active = trainer.params.clone();
            let before = state.phase_timestep;
            state.phase_timestep += steps;
            state.timestep += steps;

            let record = TrainingRecord::new(
                state.timestep,
                phase.stage.index,
                &stats,
                &collector.drain_episodes(),
            );
            if let Some(f) = &files {
                f.append_line(STATS_FILE, &record)?;
            }
            hooks.on_update(&UpdateContext {
                phase,
                timestep: state.timestep,
                phase_timestep: state.phase_timestep,
                active: &state.active,
                opponents: &opponents,
                record: &record,
            });
            outcome.records.push(record);

            let interval = config.selfplay.eval_interval;
            if phase.selfplay() && state.phase_timestep / interval > before / interval {
                let opponents = opponents_for_phase(&state);
                let results = evaluator.evaluate(
                    &state.active,
                    &opponents,
                    &env_config,
                    config.selfplay.eval_episodes,
                    config.seed,
                );
                let w = win_rate(&results)?;
                let synced = w >= config.selfplay.win_threshold;
                if synced {
                    for o in state.opponents.iter_mut() {
                        o.flat.clone_from(&state.active.flat);
                    }
                }
                let event = SyncEvent {
                    phase: phase.index,
                    stage: phase.stage.index,
                    timestep: state.timestep,
                    phase_timestep: state.phase_timestep,
                    win_rate: w,
                    synced,
                };
                if let Some(f) = &files {
                    f.append_line(SYNC_FILE, &event)?;
                    if synced {
                        let k = outcome.sync_events.iter().filter(|e| e.synced).count();
                        save_checkpoint(&state.active, &f.path(&format!("sync_{k}.ckpt")))?;
                    }
                }
                hooks.on_sync(&event, &state.active, &opponents_for_phase(&state));
                outcome.sync_events.push(event);
            }
            if let Some(f) = &files {
                let ci = config.checkpoint_interval;
                if state.phase_timestep / ci > before / ci {
                    save_resume(f, &state, false)?;
                }
            }
        }

        if let Some(f) = &files {
            save_checkpoint(&state.active, &f.path(&format!("{}.ckpt", phase.label)))?;
        }
        hooks.on_phase_end(phase, &state.active);
        outcome
            .phase_params
            .push((phase.label.clone(), state.active.clone()));
        state.phase += 1;
        state.phase_timestep = 0;
        if let Some(f) = &files {
            save_resume(f, &state, state.phase == phases.len())?;
        }
    }

    if let Some(f) = &files {
        save_checkpoint(&state.active, &f.path(FINAL_CHECKPOINT))?;
    }
    outcome.final_params = state.active;
    outcome.timesteps = state.timestep;
    Ok(outcome)
}

/// Final-stage-only schedule with the budget of `config.schedule`.
pub fn vanilla_config(config: &TrainingConfig) -> TrainingConfig {
    TrainingConfig {
        schedule: CurriculumSchedule::vanilla(config.schedule.total_budget()),
        ..config.clone()
    }
}

pub fn run_vanilla_baseline(
    config: &TrainingConfig,
    out_dir: Option<&Path>,
    evaluator: &mut dyn MatchEvaluator,
    hooks: &mut dyn TrainingHooks,
) -> Result<TrainingOutcome, OrchestratorError> {
    run_training(&vanilla_config(config), out_dir, false, evaluator, hooks)
}

/// Racing environment whose observations are zero-padded to a fixed width,
/// so a network sized for `n` agents also runs single-agent phases.
pub struct PaddedEnv {
    inner: RacingEnv,
    width: usize,
}

struct PaddedEnvConfig {
    config: EnvConfig,
    width: usize,
}

impl PaddedEnvConfig {
    fn new(config: EnvConfig, width: usize) -> Self {
        Self { config, width }
    }

    fn build(&self) -> Result<PaddedEnv, OrchestratorError> {
        PaddedEnv::new(self.config.clone(), self.width)
    }
}

impl PaddedEnv {
    pub fn new(config: EnvConfig, width: usize) -> Result<Self, OrchestratorError> {
        if config.obs_dim() > width {
            return Err(OrchestratorError::InvalidConfig(format!(
                "observation width {} exceeds network input {width}",
                config.obs_dim()
            )));
        }
        let inner =
            RacingEnv::new(config).map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?;
        Ok(Self { inner, width })
    }

    pub fn inner(&self) -> &RacingEnv {
        &self.inner
    }

    fn pad(&self, obs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        pad_observations(obs, self.width)
    }
}

/// Zero-pad each observation to `width` entries.
pub fn pad_observations(obs: Vec<Vec<f64>>, width: usize) -> Vec<Vec<f64>> {
    obs.into_iter()
        .map(|mut o| {
            o.resize(width, 0.0);
            o
        })
        .collect()
}

impl crate::ppo::Environment for PaddedEnv {
    fn obs_dim(&self) -> usize {
        self.width
    }

    fn num_agents(&self) -> usize {
        self.inner.num_agents()
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let obs = self.inner.reset(seed);
        self.pad(obs)
    }

    fn step(
        &mut self,
        actions: &[crate::env::Action],
    ) -> Result<crate::ppo::MultiAgentStep, String> {
        let mut step = crate::ppo::Environment::step(&mut self.inner, actions)?;
        step.observations = self.pad(std::mem::take(&mut step.observations));
        Ok(step)
    }
}
