use super::{compute_gae, PpoError};
use crate::nn::ACTION_DIM;

/// Active-agent transitions from `num_envs` parallel environments, stored
/// time-major: row `t * num_envs + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub horizon: usize,
    pub num_envs: usize,
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// The episode ended after this step, by termination or truncation.
    pub dones: Vec<bool>,
    /// Value of the final observation for truncated steps, 0 otherwise.
    pub truncation_values: Vec<f64>,
    /// Value of the observation following the last step, per env.
    pub last_values: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn new(horizon: usize, num_envs: usize, obs_dim: usize) -> Self {
        let cap = horizon * num_envs;
        Self {
            horizon,
            num_envs,
            obs_dim,
            obs: Vec::with_capacity(cap * obs_dim),
            actions: Vec::with_capacity(cap * ACTION_DIM),
            log_probs: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            truncation_values: Vec::with_capacity(cap),
            last_values: Vec::new(),
            advantages: None,
            returns: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.horizon * self.num_envs
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: &[f64],
        action: &[f64; 3],
        log_prob: f64,
        value: f64,
        reward: f64,
        done: bool,
        truncation_value: f64,
    ) -> Result<(), PpoError> {
        if self.is_full() {
            return Err(PpoError::LengthMismatch("rollout buffer is full".into()));
        }
        if obs.len() != self.obs_dim {
            return Err(PpoError::LengthMismatch(format!(
                "observation has {} entries, buffer expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        self.obs.extend_from_slice(obs);
        self.actions.extend_from_slice(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
        self.truncation_values.push(truncation_value);
        Ok(())
    }

    pub fn action(&self, i: usize) -> [f64; 3] {
        let a = &self.actions[ACTION_DIM * i..ACTION_DIM * (i + 1)];
        [a[0], a[1], a[2]]
    }

    /// Run GAE per environment, bootstrapping from `last_values`. Truncated
    /// steps are bootstrapped with `γ·V(final observation)` folded into the
    /// reward.
    pub fn finalize(&mut self, gamma: f64, lambda: f64) -> Result<(), PpoError> {
        self.finalize_scaled(gamma, lambda, 1.0)
    }

    /// [`finalize`](Self::finalize) with rewards multiplied by `reward_scale`.
    pub fn finalize_scaled(
        &mut self,
        gamma: f64,
        lambda: f64,
        reward_scale: f64,
    ) -> Result<(), PpoError> {
        let last_values = &self.last_values;
        if !self.is_full() || last_values.len() != self.num_envs {
            return Err(PpoError::LengthMismatch(format!(
                "finalize needs a full buffer and {} bootstrap values",
                self.num_envs
            )));
        }
        let (n, t_len) = (self.num_envs, self.horizon);
        let mut advantages = vec![0.0; self.len()];
        let mut returns = vec![0.0; self.len()];
        for e in 0..n {
            let idx: Vec<usize> = (0..t_len).map(|t| t * n + e).collect();
            let rewards: Vec<f64> = idx
                .iter()
                .map(|&i| reward_scale * self.rewards[i] + gamma * self.truncation_values[i])
                .collect();
            let mut values: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            values.push(last_values[e]);
            let dones: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda)?;
            for (k, &i) in idx.iter().enumerate() {
                advantages[i] = adv[k];
                returns[i] = ret[k];
            }
        }
        self.advantages = Some(advantages);
        self.returns = Some(returns);
        Ok(())
    }
}
