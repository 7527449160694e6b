//! Proximal policy optimization for the active agent.

mod buffer;
mod gae;
mod optim;
mod pointmass;
mod rollout;

pub use buffer::RolloutBuffer;
pub use gae::compute_gae;
pub use optim::Adam;
pub use pointmass::{PointMassEnv, POINT_MASS_OBS_DIM};
pub use rollout::{Environment, EpisodeStats, MultiAgentStep, RolloutCollector};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    backward_batch, forward_batch, gaussian_entropy, gaussian_log_prob, NnError, PolicyParams,
};
use crate::seeding::{derive_seed, stream};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("rollout buffer has not been finalized")]
    NotFinalized,
    #[error("non-finite loss or gradient")]
    NonFiniteLoss,
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    /// Steps per environment per update.
    pub horizon: usize,
    pub num_envs: usize,
    pub minibatch_size: usize,
    pub epochs_per_update: usize,
    pub clip_ratio: f64,
    pub gae_lambda: f64,
    pub discount_gamma: f64,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_timesteps: u64,
    pub hidden_sizes: Vec<usize>,
    pub normalize_advantages: bool,
    /// Multiplier on rewards before advantage estimation.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            horizon: 2048,
            num_envs: 8,
            minibatch_size: 512,
            epochs_per_update: 10,
            clip_ratio: 0.2,
            gae_lambda: 0.95,
            discount_gamma: 0.99,
            learning_rate: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.003,
            max_grad_norm: 0.5,
            total_timesteps: 1_000_000,
            hidden_sizes: vec![128, 128],
            normalize_advantages: true,
            reward_scale: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.into()));
        if self.horizon == 0
            || self.num_envs == 0
            || self.minibatch_size == 0
            || self.epochs_per_update == 0
        {
            return bad("horizon, num_envs, minibatch_size and epochs_per_update must be positive");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if !(self.discount_gamma > 0.0 && self.discount_gamma <= 1.0) {
            return bad("discount_gamma must lie in (0, 1]");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda must lie in (0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate must be non-negative and max_grad_norm positive");
        }
        if !(self.reward_scale > 0.0) {
            return bad("reward_scale must be positive");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes must be non-empty and positive");
        }
        Ok(())
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.horizon * self.num_envs) as u64
    }
}

/// Averages over all minibatches of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// KL estimate over the first epoch only.
    pub first_epoch_kl: f64,
    pub minibatches: usize,
}

/// Clipped-surrogate update over a finalized buffer. Works on copies of the
/// parameters and optimizer state, so on error both inputs remain valid.
pub fn ppo_update(
    params: &PolicyParams,
    adam: &Adam,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(PolicyParams, Adam, UpdateStats), PpoError> {
    let advantages = buffer.advantages.as_ref().ok_or(PpoError::NotFinalized)?;
    let returns = buffer.returns.as_ref().ok_or(PpoError::NotFinalized)?;
    let n = buffer.len();
    if buffer.obs_dim != params.obs_dim {
        return Err(PpoError::LengthMismatch(format!(
            "buffer observations have {} entries, network expects {}",
            buffer.obs_dim, params.obs_dim
        )));
    }
    let obs_all = Array2::from_shape_vec((n, buffer.obs_dim), buffer.obs.clone())
        .map_err(|e| PpoError::LengthMismatch(e.to_string()))?;
    let act_all = Array2::from_shape_vec((n, 3), buffer.actions.clone())
        .map_err(|e| PpoError::LengthMismatch(e.to_string()))?;

    let mut p = params.clone();
    let mut opt = adam.clone();
    let mut stats = UpdateStats::default();
    let mut first_epoch_kl = (0.0, 0usize);
    let mut idx: Vec<usize> = (0..n).collect();
    let (clip, vc, ec) = (config.clip_ratio, config.value_coef, config.entropy_coef);

    for epoch in 0..config.epochs_per_update {
        idx.shuffle(rng);
        for chunk in idx.chunks(config.minibatch_size) {
            let b = chunk.len() as f64;
            let cache = forward_batch(&p, obs_all.select(Axis(0), chunk))?;
            let acts = act_all.select(Axis(0), chunk);
            let log_std = p.log_std();

            let mut adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            if config.normalize_advantages {
                let mean = adv.iter().sum::<f64>() / b;
                let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / b;
                let std = var.sqrt().max(1e-8);
                for a in &mut adv {
                    *a = (*a - mean) / std;
                }
            }

            let mut c_logp = vec![0.0; chunk.len()];
            let mut c_value = vec![0.0; chunk.len()];
            let (mut pl, mut vl, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0usize);
            for (j, &i) in chunk.iter().enumerate() {
                let mean = [
                    cache.means[(j, 0)],
                    cache.means[(j, 1)],
                    cache.means[(j, 2)],
                ];
                let action = [acts[(j, 0)], acts[(j, 1)], acts[(j, 2)]];
                let log_ratio = gaussian_log_prob(&mean, &log_std, &action) - buffer.log_probs[i];
                let ratio = log_ratio.exp();
                let unclipped = ratio * adv[j];
                let clipped_term = ratio.clamp(1.0 - clip, 1.0 + clip) * adv[j];
                if unclipped <= clipped_term {
                    pl -= unclipped;
                    c_logp[j] = -unclipped / b;
                } else {
                    pl -= clipped_term;
                }
                if (ratio - 1.0).abs() > clip {
                    clipped += 1;
                }
                let err = cache.values[j] - returns[i];
                vl += err * err;
                c_value[j] = vc * 2.0 * err / b;
                kl += (ratio - 1.0) - log_ratio;
            }
            let entropy = gaussian_entropy(&log_std);
            let loss = pl / b + vc * vl / b - ec * entropy;
            if !loss.is_finite() {
                return Err(PpoError::NonFiniteLoss);
            }
            let mut grad = backward_batch(&p, &cache, acts.view(), &c_logp, &c_value, -ec)?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(PpoError::NonFiniteLoss);
            }
            if norm > config.max_grad_norm {
                let s = config.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            opt.step(&mut p.flat, &grad, config.learning_rate);

            stats.policy_loss += pl / b;
            stats.value_loss += vl / b;
            stats.entropy += entropy;
            stats.approx_kl += kl / b;
            stats.clip_fraction += clipped as f64 / b;
            stats.grad_norm += norm;
            stats.minibatches += 1;
            if epoch == 0 {
                first_epoch_kl.0 += kl / b;
                first_epoch_kl.1 += 1;
            }
        }
    }
    if !p.flat.iter().all(|x| x.is_finite()) {
        return Err(PpoError::NonFiniteLoss);
    }
    let m = stats.minibatches.max(1) as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    stats.grad_norm /= m;
    stats.first_epoch_kl = first_epoch_kl.0 / first_epoch_kl.1.max(1) as f64;
    Ok((p, opt, stats))
}

/// Parameters, optimizer state and minibatch generator of one learner.
#[derive(Debug, Clone)]
pub struct PpoTrainer {
    pub params: PolicyParams,
    pub adam: Adam,
    pub config: PpoConfig,
    rng: ChaCha8Rng,
}

impl PpoTrainer {
    pub fn new(params: PolicyParams, config: PpoConfig, seed: u64) -> Result<Self, PpoError> {
        config.validate()?;
        params.validate()?;
        Ok(Self {
            adam: Adam::new(params.flat.len()),
            params,
            config,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::MINIBATCH, 0)),
        })
    }

    /// Finalize `buffer` and update in place. Parameters are left untouched
    /// on error.
    pub fn update(&mut self, buffer: &mut RolloutBuffer) -> Result<UpdateStats, PpoError> {
        buffer.finalize_scaled(
            self.config.discount_gamma,
            self.config.gae_lambda,
            self.config.reward_scale,
        )?;
        let (p, adam, stats) = ppo_update(
            &self.params,
            &self.adam,
            buffer,
            &self.config,
            &mut self.rng,
        )?;
        self.params = p;
        self.adam = adam;
        Ok(stats)
    }
}

/// One line of the training stats stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub timestep: u64,
    pub stage: u32,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub mean_episode_reward: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub episodes: usize,
}

impl TrainingRecord {
    pub fn new(timestep: u64, stage: u32, stats: &UpdateStats, episodes: &[EpisodeStats]) -> Self {
        let k = episodes.len();
        let mean = |f: &dyn Fn(&EpisodeStats) -> f64| {
            (k > 0).then(|| episodes.iter().map(f).sum::<f64>() / k as f64)
        };
        Self {
            timestep,
            stage,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
            mean_episode_reward: mean(&|e| e.reward),
            mean_episode_length: mean(&|e| e.length as f64),
            episodes: k,
        }
    }
}

/// Train a single-agent learner for `timesteps` transitions.
pub fn train_single_agent<E: Environment>(
    collector: &mut RolloutCollector<E>,
    trainer: &mut PpoTrainer,
    timesteps: u64,
    mut on_update: impl FnMut(&TrainingRecord),
) -> Result<(), PpoError> {
    let start = collector.steps();
    while collector.steps() - start < timesteps {
        let mut buffer = collector.collect(&trainer.params, &[], trainer.config.horizon)?;
        let stats = trainer.update(&mut buffer)?;
        let episodes = collector.drain_episodes();
        on_update(&TrainingRecord::new(
            collector.steps() - start,
            0,
            &stats,
            &episodes,
        ));
    }
    Ok(())
}
