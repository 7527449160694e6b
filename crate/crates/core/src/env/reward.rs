//! Reward terms and their weighted combination.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::observation::NormalizationConfig;
use super::stage::CurriculumStage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub w_prox: f64,
    pub w_prog: f64,
    pub w_align: f64,
    pub w_speed: f64,
    /// Shape `a` of the proximity term.
    pub prox_shape: f64,
    /// Scale `β` of the progress term, 1/m.
    pub prog_scale: f64,
    /// Speed below which alignment is not scored, m/s.
    pub align_eps: f64,
    /// Per-event overtake bonus `r_over`.
    pub overtake_bonus: f64,
    /// Inter-drone collision radius `δ`, m.
    pub collision_radius: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_prox: 1.0,
            w_prog: 1.0,
            w_align: 0.1,
            w_speed: 0.05,
            prox_shape: 2.0,
            prog_scale: 10.0,
            align_eps: 0.1,
            overtake_bonus: 1.0,
            collision_radius: 0.3,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("prox_shape", self.prox_shape),
            ("prog_scale", self.prog_scale),
            ("align_eps", self.align_eps),
            ("collision_radius", self.collision_radius),
        ] {
            if !(v > 0.0) {
                return Err(format!("rewards.{name} must be positive"));
            }
        }
        for (name, v) in [
            ("w_prox", self.w_prox),
            ("w_prog", self.w_prog),
            ("w_align", self.w_align),
            ("w_speed", self.w_speed),
            ("overtake_bonus", self.overtake_bonus),
        ] {
            if !(v >= 0.0) {
                return Err(format!("rewards.{name} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Shaping terms outside the six-term weighted sum. Both are disabled in
/// paper-strict mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardExtensions {
    pub gate_pass_bonus: f64,
    /// Charge the stage collision penalty for leaving the track bounds.
    pub boundary_penalty: bool,
}

impl Default for RewardExtensions {
    fn default() -> Self {
        Self {
            gate_pass_bonus: 1.0,
            boundary_penalty: true,
        }
    }
}

impl RewardExtensions {
    pub fn strict() -> Self {
        Self {
            gate_pass_bonus: 0.0,
            boundary_penalty: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub prox: f64,
    pub prog: f64,
    pub align: f64,
    pub speed: f64,
    pub over: f64,
    pub coll: f64,
    pub gates_passed: u32,
    pub out_of_bounds: bool,
}

pub fn reward_proximity(d: f64, norm: &NormalizationConfig, weights: &RewardWeights) -> f64 {
    let x = (d / norm.d_max).clamp(0.0, 1.0);
    let a = weights.prox_shape;
    let floor = (-a).exp();
    2.0 * ((-a * x).exp() - floor) / (1.0 - floor) - 1.0
}

/// Zero on the step where the target gate changed, since the two distances
/// refer to different gates.
pub fn reward_progress(
    d_prev: f64,
    d_now: f64,
    gate_switched: bool,
    weights: &RewardWeights,
) -> f64 {
    if gate_switched {
        0.0
    } else {
        weights.prog_scale * (d_prev - d_now)
    }
}

pub fn reward_alignment(v: &Vector3<f64>, u_gate: &Vector3<f64>, weights: &RewardWeights) -> f64 {
    let speed = v.norm();
    let u = u_gate.norm();
    if speed > weights.align_eps && u > 0.0 {
        let cos = (v.dot(u_gate) / (speed * u)).clamp(-1.0, 1.0);
        1.0 - cos
    } else {
        0.0
    }
}

pub fn reward_speed(v_mag: f64, stage: &CurriculumStage) -> f64 {
    if v_mag <= stage.v_min {
        v_mag - stage.v_min
    } else {
        stage.v_min - v_mag
    }
}

/// Overtake sum for `agent`: `r_over` for every opponent `j` whose projection
/// `(x_j - x_i)·v̂_i` flips from negative to positive between the two steps.
/// Each projection uses the agent's velocity at the same timestamp. Returns
/// the value and the opponents that triggered it.
pub fn reward_overtake(
    agent: usize,
    positions_now: &[Vector3<f64>],
    positions_prev: &[Vector3<f64>],
    velocities_now: &[Vector3<f64>],
    velocities_prev: &[Vector3<f64>],
    racing: &[bool],
    weights: &RewardWeights,
) -> (f64, Vec<usize>) {
    let eps = weights.align_eps;
    let (v_now, v_prev) = (velocities_now[agent], velocities_prev[agent]);
    if v_now.norm() <= eps || v_prev.norm() <= eps {
        return (0.0, Vec::new());
    }
    let (h_now, h_prev) = (v_now.normalize(), v_prev.normalize());
    let mut passed = Vec::new();
    for j in 0..positions_now.len() {
        if j == agent || !racing[j] {
            continue;
        }
        let before = (positions_prev[j] - positions_prev[agent]).dot(&h_prev);
        let after = (positions_now[j] - positions_now[agent]).dot(&h_now);
        if before < 0.0 && after > 0.0 {
            passed.push(j);
        }
    }
    (weights.overtake_bonus * passed.len() as f64, passed)
}

/// 1 if any other racing drone is strictly closer than the collision radius.
pub fn reward_collision(
    agent: usize,
    positions: &[Vector3<f64>],
    racing: &[bool],
    weights: &RewardWeights,
) -> f64 {
    let hit = positions.iter().enumerate().any(|(j, p)| {
        j != agent && racing[j] && (positions[agent] - p).norm() < weights.collision_radius
    });
    if hit {
        1.0
    } else {
        0.0
    }
}

pub fn total_reward(
    c: &RewardComponents,
    weights: &RewardWeights,
    stage: &CurriculumStage,
    ext: &RewardExtensions,
) -> f64 {
    let mut r = weights.w_prox * c.prox + weights.w_prog * c.prog - weights.w_align * c.align
        + weights.w_speed * c.speed
        + stage.overtake_weight * c.over;
    if stage.collisions_enabled {
        r -= stage.collision_weight * c.coll;
        if ext.boundary_penalty && c.out_of_bounds {
            r -= stage.collision_weight;
        }
    }
    r + ext.gate_pass_bonus * c.gates_passed as f64
}
