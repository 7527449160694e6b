use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EvalError, EvalSetup, SuccessMode};
use crate::control::ControllerGains;
use crate::dynamics::DroneParams;
use crate::env::{CurriculumStage, EnvConfig, RewardExtensions, RewardWeights};
use crate::nn::load_checkpoint;
use crate::orchestrator::{CurriculumSchedule, SelfPlayConfig, TrainingConfig};
use crate::ppo::PpoConfig;
use crate::track::Track;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    /// `ring` or `figure_eight`; ignored when `file` is set.
    pub builtin: String,
    pub file: Option<PathBuf>,
}

impl Default for TrackSection {
    fn default() -> Self {
        Self {
            builtin: "ring".into(),
            file: None,
        }
    }
}

impl TrackSection {
    pub fn resolve(&self) -> Result<Track, ConfigError> {
        match &self.file {
            Some(path) => Track::load(path).map_err(|e| invalid("track.file", e)),
            None => Track::builtin(&self.builtin).ok_or_else(|| {
                invalid("track.builtin", format!("unknown track `{}`", self.builtin))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSection {
    /// Budgets for the first `budgets.len()` built-in stages.
    pub budgets: Option<Vec<u64>>,
    /// Fully custom stages; takes precedence over `budgets`.
    pub stages: Option<Vec<CurriculumStage>>,
}

impl CurriculumSection {
    pub fn schedule(&self) -> Result<CurriculumSchedule, ConfigError> {
        if let Some(stages) = &self.stages {
            return Ok(CurriculumSchedule {
                stages: stages.clone(),
            });
        }
        match &self.budgets {
            Some(b) if b.is_empty() || b.len() > 5 => {
                Err(invalid("curriculum.budgets", "expected 1 to 5 budgets"))
            }
            Some(b) => Ok(CurriculumSchedule::scaled(b)),
            None => Ok(CurriculumSchedule::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub checkpoint_interval: u64,
    pub stop_after: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            checkpoint_interval: 100_000,
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// One checkpoint shared by all agents, or one per agent.
    pub checkpoints: Vec<PathBuf>,
    pub episodes: usize,
    pub num_agents: usize,
    /// Built-in stage whose environment parameters apply.
    pub stage: u32,
    pub lap_target: u32,
    pub max_steps: usize,
    pub success_mode: SuccessMode,
    /// Export trajectories of the first this many episodes.
    pub export_trajectories: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            episodes: 100,
            num_agents: 4,
            stage: 5,
            lap_target: 2,
            max_steps: 1200,
            success_mode: SuccessMode::PerEpisode,
            export_trajectories: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    /// One checkpoint per stage, in stage order.
    pub checkpoints: Vec<PathBuf>,
    /// Stage index of each checkpoint; defaults to 1, 2, ...
    pub stages: Option<Vec<u32>>,
    pub agent_counts: Vec<usize>,
    pub episodes: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            stages: None,
            agent_counts: vec![2, 3, 4],
            episodes: 100,
        }
    }
}

impl AblationSection {
    pub fn stage_indices(&self) -> Vec<u32> {
        self.stages
            .clone()
            .unwrap_or_else(|| (1..=self.checkpoints.len() as u32).collect())
    }
}

/// Everything a CLI run reads, one TOML table per typed config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct FileConfig {
    pub seed: u64,
    pub paper_strict: bool,
    pub out_dir: Option<PathBuf>,
    pub track: TrackSection,
    pub drone: DroneParams,
    pub controller: Option<ControllerGains>,
    pub rewards: RewardWeights,
    pub extensions: RewardExtensions,
    pub ppo: PpoConfig,
    pub curriculum: CurriculumSection,
    pub selfplay: SelfPlayConfig,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub ablate: AblationSection,
}


impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.into(),
            message: e.to_string().trim_end().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// TOML text of the fully resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn training_config(&self) -> Result<TrainingConfig, ConfigError> {
        let c = TrainingConfig {
            seed: self.seed,
            track: self.track.resolve()?,
            schedule: self.curriculum.schedule()?,
            selfplay: self.selfplay.clone(),
            ppo: self.ppo.clone(),
            rewards: self.rewards.clone(),
            extensions: self.extensions.clone(),
            paper_strict: self.paper_strict,
            drone: self.drone.clone(),
            gains: self.controller.clone(),
            checkpoint_interval: self.train.checkpoint_interval,
            stop_after: self.train.stop_after,
        };
        self.validate_training(&c)?;
        Ok(c)
    }

    fn validate_training(&self, c: &TrainingConfig) -> Result<(), ConfigError> {
        self.ppo.validate().map_err(|e| invalid("ppo", e))?;
        self.selfplay
            .validate()
            .map_err(|e| invalid("selfplay", e))?;
        c.schedule
            .validate()
            .map_err(|e| invalid("curriculum", e))?;
        self.rewards.validate().map_err(|e| invalid("rewards", e))?;
        self.drone.validate().map_err(|e| invalid("drone", e))?;
        if let Some(g) = &self.controller {
            g.validate().map_err(|e| invalid("controller", e))?;
        }
        if self.train.checkpoint_interval == 0 {
            return Err(invalid("train.checkpoint_interval", "must be positive"));
        }
        Ok(())
    }

    /// Environment for evaluation with `n` agents at built-in stage `stage`.
    pub fn eval_env(&self, n: usize, stage: u32) -> Result<EnvConfig, ConfigError> {
        let stage = CurriculumStage::builtin(stage)
            .ok_or_else(|| invalid("evaluate.stage", format!("no built-in stage {stage}")))?;
        let mut env = EnvConfig::new(self.track.resolve()?, n, stage);
        env.weights = self.rewards.clone();
        env.extensions = self.extensions.clone();
        env.paper_strict = self.paper_strict;
        env.drone = self.drone.clone();
        env.gains = self
            .controller
            .clone()
            .unwrap_or_else(|| ControllerGains::for_params(&self.drone));
        env.lap_target = Some(self.evaluate.lap_target);
        env.max_steps = self.evaluate.max_steps;
        env.validate().map_err(|e| invalid("evaluate", e))?;
        Ok(env)
    }

    pub fn eval_setup(&self) -> Result<EvalSetup, EvalError> {
        let e = &self.evaluate;
        let cfg_err = |c: ConfigError| EvalError::InvalidConfig(c.to_string());
        if e.episodes == 0 {
            return Err(cfg_err(invalid("evaluate.episodes", "must be at least 1")));
        }
        let n = e.num_agents;
        let policies = match e.checkpoints.len() {
            0 => {
                return Err(cfg_err(invalid(
                    "evaluate.checkpoints",
                    "no checkpoint given",
                )))
            }
            1 => vec![load_checkpoint(&e.checkpoints[0])?; n],
            k if k == n => e
                .checkpoints
                .iter()
                .map(|p| load_checkpoint(p))
                .collect::<Result<_, _>>()?,
            k => {
                return Err(cfg_err(invalid(
                    "evaluate.checkpoints",
                    format!("{k} checkpoints for {n} agents; give 1 or {n}"),
                )))
            }
        };
        let mut setup = EvalSetup::new(
            self.eval_env(n, e.stage).map_err(cfg_err)?,
            policies,
            e.episodes,
            self.seed,
        );
        setup.success_mode = e.success_mode;
        setup.record_episodes = e.export_trajectories;
        setup.validate()?;
        Ok(setup)
    }
}
