//! Multi-agent racing environment.
//!
//! Each environment step holds the policy's reference velocity for
//! `substeps` controller/physics ticks, then scores gate passage, progress and
//! inter-drone interaction for every agent still racing.

mod observation;
mod reward;
mod stage;

pub use observation::{
    build_observation, observation_dim, unit_towards, NormalizationConfig, BASE_OBS_DIM,
};
pub use reward::{
    reward_alignment, reward_collision, reward_overtake, reward_progress, reward_proximity,
    reward_speed, total_reward, RewardComponents, RewardExtensions, RewardWeights,
};
pub use stage::CurriculumStage;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{track_velocity, ControllerGains, ControllerState};
use crate::dynamics::{self, DroneParams, DroneState};
use crate::track::{check_gate_passage, update_progress, ProgressState, Track};

pub type Action = [f64; 3];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub track: Track,
    pub num_agents: usize,
    pub stage: CurriculumStage,
    pub weights: RewardWeights,
    pub extensions: RewardExtensions,
    /// Drop every reward term outside the six-term weighted sum.
    pub paper_strict: bool,
    /// Defaults to [`NormalizationConfig::for_track`].
    pub normalization: Option<NormalizationConfig>,
    pub drone: DroneParams,
    pub gains: ControllerGains,
    pub policy_dt: f64,
    pub substeps: usize,
    pub max_steps: usize,
    /// Upper bound on the reference velocity magnitude, m/s.
    pub v_cap: f64,
    pub spawn_distance: f64,
    pub spawn_radius: f64,
    pub bounds_margin: f64,
    /// Agents stop racing after this many laps.
    pub lap_target: Option<u32>,
}

impl EnvConfig {
    pub fn new(track: Track, num_agents: usize, stage: CurriculumStage) -> Self {
        let drone = DroneParams::default();
        Self {
            track,
            num_agents,
            stage,
            weights: RewardWeights::default(),
            extensions: RewardExtensions::default(),
            paper_strict: false,
            normalization: None,
            gains: ControllerGains::for_params(&drone),
            drone,
            policy_dt: 0.05,
            substeps: 5,
            max_steps: 1200,
            v_cap: 12.0,
            spawn_distance: 1.5,
            spawn_radius: 1.0,
            bounds_margin: 2.0,
            lap_target: None,
        }
    }

    pub fn normalization(&self) -> NormalizationConfig {
        self.normalization
            .unwrap_or_else(|| NormalizationConfig::for_track(&self.track))
    }

    pub fn effective_extensions(&self) -> RewardExtensions {
        if self.paper_strict {
            RewardExtensions::strict()
        } else {
            self.extensions.clone()
        }
    }

    pub fn obs_dim(&self) -> usize {
        observation_dim(self.track.num_gates(), self.num_agents)
    }

    pub fn physics_dt(&self) -> f64 {
        self.policy_dt / self.substeps as f64
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if self.num_agents == 0 {
            return bad("num_agents must be at least 1".into());
        }
        if !(self.policy_dt > 0.0) || self.substeps == 0 || self.max_steps == 0 {
            return bad("timing parameters must be positive".into());
        }
        if !(self.v_cap > 0.0) {
            return bad("v_cap must be positive".into());
        }
        if !(self.spawn_radius > 0.0 && self.spawn_distance >= 0.0) {
            return bad("spawn geometry must be positive".into());
        }
        self.track
            .validate()
            .map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
        self.stage.validate().map_err(EnvError::InvalidConfig)?;
        self.weights.validate().map_err(EnvError::InvalidConfig)?;
        self.normalization()
            .validate()
            .map_err(EnvError::InvalidConfig)?;
        self.drone
            .validate()
            .map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
        self.gains.validate().map_err(EnvError::InvalidConfig)?;
        Ok(())
    }
}

/// Reference velocity from a raw action: current velocity plus the clipped,
/// agility-scaled action integrated over `dt`, limited to `v_cap` in norm.
pub fn apply_action(
    a_raw: &Action,
    state: &DroneState,
    stage: &CurriculumStage,
    dt: f64,
    v_cap: f64,
) -> Vector3<f64> {
    let a = Vector3::new(
        a_raw[0].clamp(-1.0, 1.0),
        a_raw[1].clamp(-1.0, 1.0),
        a_raw[2].clamp(-1.0, 1.0),
    );
    let v = state.velocity + (stage.agility * a) * dt;
    let n = v.norm();
    if n > v_cap {
        v * (v_cap / n)
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Collision,
    OutOfBounds,
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Racing,
    Finished,
    Terminated(TerminationCause),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    GatePass { gate: usize, lap_completed: bool },
    Overtake { opponent: usize },
    Collision { other: usize, penalized: bool },
    OutOfBounds,
    Termination { cause: TerminationCause },
    Finish { laps: u32 },
    Fault { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub time: f64,
    pub agent: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub components: RewardComponents,
    /// The agent stopped racing this step: collision, bounds, fault or finish.
    pub terminated: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub agents: Vec<AgentStep>,
    pub events: Vec<Event>,
    /// No agent is racing any more, or the step limit was hit.
    pub episode_over: bool,
}

#[derive(Debug, Clone)]
struct AgentRuntime {
    state: DroneState,
    controller: ControllerState,
    progress: ProgressState,
    status: AgentStatus,
    prev_distance: f64,
    path_length: f64,
    flight_time: f64,
}

#[derive(Debug, Clone)]
pub struct RacingEnv {
    config: EnvConfig,
    norm: NormalizationConfig,
    extensions: RewardExtensions,
    bounds: (Vector3<f64>, Vector3<f64>),
    agents: Vec<AgentRuntime>,
    step_count: usize,
    seed: u64,
}

impl RacingEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let norm = config.normalization();
        let extensions = config.effective_extensions();
        let bounds = config.track.bounds(config.bounds_margin);
        let mut env = Self {
            config,
            norm,
            extensions,
            bounds,
            agents: Vec::new(),
            step_count: 0,
            seed: 0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn num_agents(&self) -> usize {
        self.config.num_agents
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn sim_time(&self) -> f64 {
        self.step_count as f64 * self.config.policy_dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn states(&self) -> Vec<DroneState> {
        self.agents.iter().map(|a| a.state).collect()
    }

    pub fn progress(&self) -> Vec<ProgressState> {
        self.agents.iter().map(|a| a.progress.clone()).collect()
    }

    pub fn statuses(&self) -> Vec<AgentStatus> {
        self.agents.iter().map(|a| a.status).collect()
    }

    /// Path length flown and time spent racing, per agent.
    pub fn flight_stats(&self) -> Vec<(f64, f64)> {
        self.agents
            .iter()
            .map(|a| (a.path_length, a.flight_time))
            .collect()
    }

    pub fn racing_mask(&self) -> Vec<bool> {
        self.agents
            .iter()
            .map(|a| a.status == AgentStatus::Racing)
            .collect()
    }

    /// Spawn positions for `seed`: lateral slots across a disc behind gate 0,
    /// shuffled per episode, with a small jitter.
    pub fn spawn_positions(config: &EnvConfig, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gate = &config.track.gates[0];
        let center = gate.center - gate.normal() * config.spawn_distance;
        let n = config.num_agents;
        let span = 0.75 * config.spawn_radius;
        let mut slots: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    0.0
                } else {
                    -span + 2.0 * span * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        slots.shuffle(&mut rng);
        let jitter = 0.1 * config.spawn_radius;
        slots
            .into_iter()
            .map(|lat| {
                let dl: f64 = rng.random_range(-jitter..jitter);
                let df: f64 = rng.random_range(-jitter..jitter);
                let dz: f64 = rng.random_range(-jitter..jitter);
                center + gate.lateral() * (lat + dl) + gate.normal() * df + Vector3::z() * dz
            })
            .collect()
    }

    pub fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.seed = seed;
        self.step_count = 0;
        let gate0 = self.config.track.gates[0].center;
        self.agents = Self::spawn_positions(&self.config, seed)
            .into_iter()
            .map(|p| AgentRuntime {
                state: DroneState::at_rest(p),
                controller: ControllerState::default(),
                progress: ProgressState::default(),
                status: AgentStatus::Racing,
                prev_distance: (gate0 - p).norm(),
                path_length: 0.0,
                flight_time: 0.0,
            })
            .collect();
        self.observations()
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        let states = self.states();
        let progress = self.progress();
        let racing = self.racing_mask();
        (0..self.agents.len())
            .map(|i| {
                build_observation(
                    i,
                    &states,
                    &racing,
                    &self.config.track,
                    &progress,
                    &self.norm,
                )
            })
            .collect()
    }

    fn out_of_bounds(&self, p: &Vector3<f64>) -> bool {
        let (lo, hi) = &self.bounds;
        (0..3).any(|k| p[k] < lo[k] || p[k] > hi[k])
    }

    /// Advance every racing agent by one policy step. Actions for agents that
    /// are no longer racing are ignored.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome, EnvError> {
        let n = self.agents.len();
        if actions.len() != n {
            return Err(EnvError::ActionCount {
                expected: n,
                got: actions.len(),
            });
        }
        let cfg = &self.config;
        let dt = cfg.policy_dt;
        let h = cfg.physics_dt();
        let mut events = Vec::new();

        let was_racing = self.racing_mask();
        let prev_pos: Vec<Vector3<f64>> = self.agents.iter().map(|a| a.state.position).collect();
        let prev_vel: Vec<Vector3<f64>> = self.agents.iter().map(|a| a.state.velocity).collect();

        self.step_count += 1;
        let step = self.step_count;
        let time = self.sim_time();

        for (i, agent) in self.agents.iter_mut().enumerate() {
            if !was_racing[i] {
                continue;
            }
            let v_ref = apply_action(&actions[i], &agent.state, &cfg.stage, dt, cfg.v_cap);
            let mut fault = None;
            for _ in 0..cfg.substeps {
                let (cmd, ctl) = track_velocity(
                    &v_ref,
                    &agent.state,
                    &agent.controller,
                    &cfg.gains,
                    &cfg.drone,
                    h,
                );
                agent.controller = ctl;
                match dynamics::step(&agent.state, &cmd, &cfg.drone, h) {
                    Ok(s) => agent.state = s,
                    Err(e) => {
                        fault = Some(e.to_string());
                        break;
                    }
                }
            }
            if let Some(message) = fault {
                agent.status = AgentStatus::Terminated(TerminationCause::Fault);
                events.push(Event {
                    step,
                    time,
                    agent: i,
                    kind: EventKind::Fault { message },
                });
                events.push(Event {
                    step,
                    time,
                    agent: i,
                    kind: EventKind::Termination {
                        cause: TerminationCause::Fault,
                    },
                });
                continue;
            }
            agent.path_length += (agent.state.position - prev_pos[i]).norm();
            agent.flight_time += dt;
        }

        // racing for the scoring phase: started the step racing and did not fault
        let scoring: Vec<bool> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| was_racing[i] && a.status == AgentStatus::Racing)
            .collect();
        let pos_now: Vec<Vector3<f64>> = self.agents.iter().map(|a| a.state.position).collect();
        let vel_now: Vec<Vector3<f64>> = self.agents.iter().map(|a| a.state.velocity).collect();
        let track = &self.config.track;
        let num_gates = track.num_gates();
        let stage = &self.config.stage;
        let weights = &self.config.weights;

        let mut components = vec![RewardComponents::default(); n];
        let mut rewards = vec![0.0; n];
        let mut terminated = vec![false; n];
        for i in 0..n {
            if !scoring[i] {
                continue;
            }
            let agent = &self.agents[i];
            let gate = &track.gates[agent.progress.next_gate_index];
            let passed = check_gate_passage(&prev_pos[i], &pos_now[i], gate, stage.gate_tolerance);
            let progress = update_progress(&agent.progress, passed, time, num_gates);
            if passed {
                events.push(Event {
                    step,
                    time,
                    agent: i,
                    kind: EventKind::GatePass {
                        gate: agent.progress.next_gate_index,
                        lap_completed: progress.laps_completed > agent.progress.laps_completed,
                    },
                });
            }
            let target = track.gates[progress.next_gate_index].center;
            let d_now = (target - pos_now[i]).norm();
            let u = unit_towards(&pos_now[i], &target);

            let (over, overtaken) = reward_overtake(
                i, &pos_now, &prev_pos, &vel_now, &prev_vel, &scoring, weights,
            );
            for j in overtaken {
                events.push(Event {
                    step,
                    time,
                    agent: i,
                    kind: EventKind::Overtake { opponent: j },
                });
            }
            let coll = reward_collision(i, &pos_now, &scoring, weights);
            if coll > 0.0 {
                for j in 0..n {
                    if j != i
                        && scoring[j]
                        && (pos_now[i] - pos_now[j]).norm() < weights.collision_radius
                    {
                        events.push(Event {
                            step,
                            time,
                            agent: i,
                            kind: EventKind::Collision {
                                other: j,
                                penalized: stage.collisions_enabled,
                            },
                        });
                    }
                }
            }
            let oob = self.out_of_bounds(&pos_now[i]);
            if oob {
                events.push(Event {
                    step,
                    time,
                    agent: i,
                    kind: EventKind::OutOfBounds,
                });
            }
            let c = RewardComponents {
                prox: reward_proximity(d_now, &self.norm, weights),
                prog: reward_progress(agent.prev_distance, d_now, passed, weights),
                align: reward_alignment(&vel_now[i], &u, weights),
                speed: reward_speed(vel_now[i].norm(), stage),
                over,
                coll,
                gates_passed: passed as u32,
                out_of_bounds: oob,
            };
            rewards[i] = total_reward(&c, weights, stage, &self.extensions);
            components[i] = c;

            let agent = &mut self.agents[i];
            agent.prev_distance = d_now;
            agent.progress = progress;
            if stage.collision_terminal && (coll > 0.0 || oob) {
                let cause = if coll > 0.0 {
                    TerminationCause::Collision
                } else {
                    TerminationCause::OutOfBounds
                };
                agent.status = AgentStatus::Terminated(cause);
                terminated[i] = true;
                events.push(Event {
                    step,
                    time,
                    agent: i,
                    kind: EventKind::Termination { cause },
                });
            } else if let Some(target) = self.config.lap_target {
                if agent.progress.laps_completed >= target {
                    agent.status = AgentStatus::Finished;
                    terminated[i] = true;
                    events.push(Event {
                        step,
                        time,
                        agent: i,
                        kind: EventKind::Finish { laps: target },
                    });
                }
            }
        }
        for i in 0..n {
            if was_racing[i] && !scoring[i] {
                terminated[i] = true;
            }
        }

        let hit_limit = self.step_count >= self.config.max_steps;
        let any_racing = self.agents.iter().any(|a| a.status == AgentStatus::Racing);
        let observations = self.observations();
        let agents = observations
            .into_iter()
            .enumerate()
            .map(|(i, observation)| AgentStep {
                observation,
                reward: rewards[i],
                components: components[i],
                terminated: terminated[i],
                truncated: hit_limit && !terminated[i] && was_racing[i],
            })
            .collect();
        Ok(StepOutcome {
            agents,
            events,
            episode_over: hit_limit || !any_racing,
        })
    }
}
