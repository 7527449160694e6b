use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::DroneState;
use crate::track::{ProgressState, Track};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationConfig {
    pub d_max: f64,
    pub v_max: f64,
}

impl NormalizationConfig {
    /// `d_max` = track diameter + 2 m, `v_max` = 12 m/s.
    pub fn for_track(track: &Track) -> Self {
        Self {
            d_max: track.diameter() + 2.0,
            v_max: 12.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.d_max > 0.0 && self.v_max > 0.0) {
            return Err("normalization factors must be positive".into());
        }
        Ok(())
    }
}

/// Number of entries that do not depend on the gate or agent count.
pub const BASE_OBS_DIM: usize = 13;

pub fn observation_dim(num_gates: usize, num_agents: usize) -> usize {
    BASE_OBS_DIM + num_gates + 4 * num_agents.saturating_sub(1)
}

/// Unit vector from `from` towards `to`, or zero when they coincide.
pub fn unit_towards(from: &Vector3<f64>, to: &Vector3<f64>) -> Vector3<f64> {
    let d = to - from;
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vector3::zeros()
    }
}

/// Flat observation for `agent`. Layout: gate-relative position (3), gate
/// distance (1), velocity (3), velocity towards the gate (1), one-hot target
/// gate (G), position (3), sin/cos of yaw error (2), then per opponent sorted
/// by distance: relative position (3) followed by all distances (n-1).
///
/// Opponents with `racing[j] == false` are placed after the live ones with a
/// zero relative position and a distance of 1.
pub fn build_observation(
    agent: usize,
    states: &[DroneState],
    racing: &[bool],
    track: &Track,
    progress: &[ProgressState],
    norm: &NormalizationConfig,
) -> Vec<f64> {
    let n = states.len();
    let g = track.num_gates();
    let mut obs = Vec::with_capacity(observation_dim(g, n));
    let me = &states[agent];
    let gate = &track.gates[progress[agent].next_gate_index];
    let rel = gate.center - me.position;
    let dist = rel.norm();

    obs.extend(rel.iter().map(|x| (x / norm.d_max).clamp(-1.0, 1.0)));
    obs.push((dist / norm.d_max).clamp(0.0, 1.0));
    obs.extend(me.velocity.iter().map(|v| v / norm.v_max));
    let u = unit_towards(&me.position, &gate.center);
    obs.push(me.velocity.dot(&u) / norm.v_max);
    obs.extend((0..g).map(|k| {
        if k == progress[agent].next_gate_index {
            1.0
        } else {
            0.0
        }
    }));
    obs.extend(me.position.iter().map(|x| x / norm.d_max));
    let dyaw = gate.yaw - me.yaw();
    obs.push(dyaw.sin());
    obs.push(dyaw.cos());

    let mut others: Vec<(usize, f64)> = (0..n)
        .filter(|&j| j != agent && racing[j])
        .map(|j| (j, (states[j].position - me.position).norm()))
        .collect();
    // stable sort keeps index order on ties
    others.sort_by(|a, b| a.1.total_cmp(&b.1));
    let dead = (0..n).filter(|&j| j != agent && !racing[j]).count();

    let mut dists = Vec::with_capacity(n.saturating_sub(1));
    for &(j, d) in &others {
        let r = states[j].position - me.position;
        obs.extend(r.iter().map(|x| (x / norm.d_max).clamp(-1.0, 1.0)));
        dists.push((d / norm.d_max).clamp(0.0, 1.0));
    }
    for _ in 0..dead {
        obs.extend([0.0; 3]);
        dists.push(1.0);
    }
    obs.extend(dists);
    obs
}
