use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PpoError, RolloutBuffer};
use crate::env::{Action, RacingEnv};
use crate::nn::{forward, forward_batch, gaussian_log_prob, sample_action, PolicyParams};
use crate::seeding::{derive_seed, stream};

/// Per-agent result of one environment step. Agent 0 is the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAgentStep {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn num_agents(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[Action]) -> Result<MultiAgentStep, String>;
}

impl Environment for RacingEnv {
    fn obs_dim(&self) -> usize {
        RacingEnv::obs_dim(self)
    }

    fn num_agents(&self) -> usize {
        RacingEnv::num_agents(self)
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        RacingEnv::reset(self, seed)
    }

    fn step(&mut self, actions: &[Action]) -> Result<MultiAgentStep, String> {
        let out = RacingEnv::step(self, actions).map_err(|e| e.to_string())?;
        let mut step = MultiAgentStep {
            observations: Vec::with_capacity(out.agents.len()),
            rewards: Vec::with_capacity(out.agents.len()),
            terminated: Vec::with_capacity(out.agents.len()),
            truncated: Vec::with_capacity(out.agents.len()),
        };
        for a in out.agents {
            step.observations.push(a.observation);
            step.rewards.push(a.reward);
            step.terminated.push(a.terminated);
            step.truncated.push(a.truncated);
        }
        Ok(step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub reward: f64,
    pub length: usize,
}

/// Steps a set of environments with the active policy in slot 0 and frozen
/// opponents in the remaining slots, auto-resetting finished episodes.
pub struct RolloutCollector<E> {
    envs: Vec<E>,
    obs: Vec<Vec<Vec<f64>>>,
    seed: u64,
    rng: ChaCha8Rng,
    episodes_started: Vec<u64>,
    episode_reward: Vec<f64>,
    episode_length: Vec<usize>,
    completed: Vec<EpisodeStats>,
    faults: Vec<String>,
    steps: u64,
}

impl<E: Environment> RolloutCollector<E> {
    pub fn new(mut envs: Vec<E>, seed: u64) -> Result<Self, PpoError> {
        if envs.is_empty() {
            return Err(PpoError::InvalidConfig(
                "at least one environment is required".into(),
            ));
        }
        let obs = envs
            .iter_mut()
            .enumerate()
            .map(|(e, env)| env.reset(Self::episode_seed(seed, e, 0)))
            .collect();
        let n = envs.len();
        Ok(Self {
            envs,
            obs,
            seed,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::ROLLOUT_SAMPLING, 0)),
            episodes_started: vec![1; n],
            episode_reward: vec![0.0; n],
            episode_length: vec![0; n],
            completed: Vec::new(),
            faults: Vec::new(),
            steps: 0,
        })
    }

    fn episode_seed(seed: u64, env: usize, episode: u64) -> u64 {
        derive_seed(seed, stream::ROLLOUT_ENV, ((env as u64) << 40) | episode)
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.envs[0].obs_dim()
    }

    pub fn num_agents(&self) -> usize {
        self.envs[0].num_agents()
    }

    pub fn envs(&self) -> &[E] {
        &self.envs
    }

    /// Transitions collected so far, summed over environments.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Episode statistics completed since the last call.
    pub fn drain_episodes(&mut self) -> Vec<EpisodeStats> {
        std::mem::take(&mut self.completed)
    }

    pub fn drain_faults(&mut self) -> Vec<String> {
        std::mem::take(&mut self.faults)
    }

    fn sample_slot(
        &mut self,
        params: &PolicyParams,
        slot: usize,
    ) -> Result<(Vec<Action>, Vec<f64>, Vec<f64>), PpoError> {
        let dim = params.obs_dim;
        let mut rows = Vec::with_capacity(self.envs.len() * dim);
        for o in &self.obs {
            rows.extend_from_slice(&o[slot]);
        }
        let batch = Array2::from_shape_vec((self.envs.len(), dim), rows)
            .map_err(|e| PpoError::LengthMismatch(e.to_string()))?;
        let cache = forward_batch(params, batch)?;
        let mut actions = Vec::with_capacity(self.envs.len());
        let mut logps = Vec::with_capacity(self.envs.len());
        for e in 0..self.envs.len() {
            let out = cache.output(e, params);
            let a = sample_action(&out, &mut self.rng);
            logps.push(gaussian_log_prob(&out.action_mean, &out.action_log_std, &a));
            actions.push(a);
        }
        Ok((actions, logps, cache.values.to_vec()))
    }

    /// Collect `horizon` steps from every environment. The returned buffer has
    /// its bootstrap values set but is not yet finalized.
    pub fn collect(
        &mut self,
        active: &PolicyParams,
        opponents: &[PolicyParams],
        horizon: usize,
    ) -> Result<RolloutBuffer, PpoError> {
        let n_agents = self.num_agents();
        if opponents.len() + 1 != n_agents {
            return Err(PpoError::InvalidConfig(format!(
                "{} opponents supplied for {} agents",
                opponents.len(),
                n_agents
            )));
        }
        let n_envs = self.envs.len();
        let mut buffer = RolloutBuffer::new(horizon, n_envs, self.obs_dim());
        for _ in 0..horizon {
            let (active_actions, logps, values) = self.sample_slot(active, 0)?;
            let mut joint: Vec<Vec<Action>> = active_actions.iter().map(|a| vec![*a]).collect();
            for (k, opp) in opponents.iter().enumerate() {
                let (acts, _, _) = self.sample_slot(opp, k + 1)?;
                for (j, a) in joint.iter_mut().zip(acts) {
                    j.push(a);
                }
            }
            let results: Vec<Result<MultiAgentStep, String>> = self
                .envs
                .par_iter_mut()
                .zip(joint.par_iter())
                .map(|(env, acts)| env.step(acts))
                .collect();
            self.steps += n_envs as u64;
            for (e, result) in results.into_iter().enumerate() {
                let obs = std::mem::take(&mut self.obs[e][0]);
                let (reward, done, trunc_value, next) = match result {
                    Ok(step) => {
                        let truncated = step.truncated[0] && !step.terminated[0];
                        let trunc_value = if truncated {
                            forward(active, &step.observations[0])?.value
                        } else {
                            0.0
                        };
                        let done = step.terminated[0] || step.truncated[0];
                        (step.rewards[0], done, trunc_value, Some(step.observations))
                    }
                    Err(message) => {
                        self.faults.push(message);
                        (0.0, true, 0.0, None)
                    }
                };
                buffer.push(
                    &obs,
                    &active_actions[e],
                    logps[e],
                    values[e],
                    reward,
                    done,
                    trunc_value,
                )?;
                self.episode_reward[e] += reward;
                self.episode_length[e] += 1;
                if done {
                    self.completed.push(EpisodeStats {
                        reward: self.episode_reward[e],
                        length: self.episode_length[e],
                    });
                    self.episode_reward[e] = 0.0;
                    self.episode_length[e] = 0;
                    let seed = Self::episode_seed(self.seed, e, self.episodes_started[e]);
                    self.episodes_started[e] += 1;
                    self.obs[e] = self.envs[e].reset(seed);
                } else if let Some(next) = next {
                    self.obs[e] = next;
                }
            }
        }
        let rows: Vec<f64> = self.obs.iter().flat_map(|o| o[0].iter().copied()).collect();
        let batch = Array2::from_shape_vec((n_envs, active.obs_dim), rows)
            .map_err(|e| PpoError::LengthMismatch(e.to_string()))?;
        let last_values = forward_batch(active, batch)?.values.to_vec();
        buffer.last_values = last_values;
        Ok(buffer)
    }
}
