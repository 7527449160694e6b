//! Point mass that must match a target velocity: a small continuous-control
//! task for checking that the learner learns.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, MultiAgentStep};
use crate::env::Action;

pub const POINT_MASS_OBS_DIM: usize = 9;

#[derive(Debug, Clone)]
pub struct PointMassEnv {
    pub max_steps: usize,
    pub dt: f64,
    /// Acceleration at full action, m/s².
    pub accel: f64,
    velocity: Vector3<f64>,
    target: Vector3<f64>,
    steps: usize,
}

impl Default for PointMassEnv {
    fn default() -> Self {
        Self {
            max_steps: 50,
            dt: 0.1,
            accel: 2.0,
            velocity: Vector3::zeros(),
            target: Vector3::zeros(),
            steps: 0,
        }
    }
}

impl PointMassEnv {
    pub fn with_max_steps(max_steps: usize) -> Self {
        Self {
            max_steps,
            ..Self::default()
        }
    }

    fn observation(&self) -> Vec<f64> {
        let err = self.target - self.velocity;
        self.velocity
            .iter()
            .chain(self.target.iter())
            .chain(err.iter())
            .copied()
            .collect()
    }

    /// Proportional controller that saturates at full action.
    pub fn oracle_action(obs: &[f64], accel: f64, dt: f64) -> Action {
        let gain = 1.0 / (accel * dt);
        [
            (obs[6] * gain).clamp(-1.0, 1.0),
            (obs[7] * gain).clamp(-1.0, 1.0),
            (obs[8] * gain).clamp(-1.0, 1.0),
        ]
    }
}

impl Environment for PointMassEnv {
    fn obs_dim(&self) -> usize {
        POINT_MASS_OBS_DIM
    }

    fn num_agents(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        self.velocity = draw();
        self.target = draw();
        self.steps = 0;
        vec![self.observation()]
    }

    fn step(&mut self, actions: &[Action]) -> Result<MultiAgentStep, String> {
        let a = actions.first().ok_or("missing action")?;
        let a = Vector3::new(a[0], a[1], a[2]).map(|x| x.clamp(-1.0, 1.0));
        self.velocity += a * (self.accel * self.dt);
        self.steps += 1;
        let reward = -(self.target - self.velocity).norm();
        Ok(MultiAgentStep {
            observations: vec![self.observation()],
            rewards: vec![reward],
            terminated: vec![false],
            truncated: vec![self.steps >= self.max_steps],
        })
    }
}
