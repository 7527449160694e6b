//! Two-loop PD cascade: reference velocity → desired acceleration → thrust and
//! body torque.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlCommand, DroneParams, DroneState};

/// Roll and pitch targets are clipped to this magnitude (rad).
pub const MAX_TILT: f64 = 0.9;

/// Attitude gains are expressed per unit inertia: torque = J·(kp·e − kd·ω).
const ATT_P_PER_INERTIA: f64 = 100.0;
const ATT_D_PER_INERTIA: f64 = 14.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub vel_p: Vector3<f64>,
    pub vel_d: Vector3<f64>,
    pub pos_p: Vector3<f64>,
    pub pos_d: Vector3<f64>,
    pub att_p: Vector3<f64>,
    pub att_d: Vector3<f64>,
}

impl ControllerGains {
    /// Default gains with the attitude loop scaled by the vehicle inertia.
    pub fn for_params(params: &DroneParams) -> Self {
        let j = params.inertia_diagonal();
        Self {
            vel_p: Vector3::repeat(3.0),
            vel_d: Vector3::repeat(0.3),
            pos_p: Vector3::repeat(1.0),
            pos_d: Vector3::repeat(0.1),
            att_p: j * ATT_P_PER_INERTIA,
            att_d: j * ATT_D_PER_INERTIA,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let nonneg = [
            ("vel_p", &self.vel_p),
            ("vel_d", &self.vel_d),
            ("pos_p", &self.pos_p),
            ("pos_d", &self.pos_d),
        ];
        for (name, v) in nonneg {
            if !v.iter().all(|g| *g >= 0.0 && g.is_finite()) {
                return Err(format!("{name} gains must be non-negative"));
            }
        }
        for (name, v) in [("att_p", &self.att_p), ("att_d", &self.att_d)] {
            if !v.iter().all(|g| *g > 0.0 && g.is_finite()) {
                return Err(format!("{name} gains must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self::for_params(&DroneParams::default())
    }
}

/// Memory carried between controller calls for the finite-difference derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub prev_velocity_error: Vector3<f64>,
    pub initialized: bool,
}

/// Velocity PD law. The derivative term is zero on the first call.
pub fn outer_loop(
    v_ref: &Vector3<f64>,
    state: &DroneState,
    ctl: &ControllerState,
    gains: &ControllerGains,
    dt: f64,
) -> (Vector3<f64>, ControllerState) {
    debug_assert!(dt > 0.0);
    let err = v_ref - state.velocity;
    let err_rate = if ctl.initialized {
        (err - ctl.prev_velocity_error) / dt
    } else {
        Vector3::zeros()
    };
    let a_des = gains.vel_p.component_mul(&err) + gains.vel_d.component_mul(&err_rate);
    (
        a_des,
        ControllerState {
            prev_velocity_error: err,
            initialized: true,
        },
    )
}

/// Attitude targets produced by the inner loop, exposed for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoopOutput {
    pub command: ControlCommand,
    pub accel_cmd: Vector3<f64>,
    /// `[roll, pitch, yaw]` targets before clipping.
    pub raw_attitude_target: Vector3<f64>,
    pub attitude_target: Vector3<f64>,
}

pub fn inner_loop_detailed(
    a_des: &Vector3<f64>,
    state: &DroneState,
    gains: &ControllerGains,
    params: &DroneParams,
) -> InnerLoopOutput {
    let g = params.gravity;
    let a_cmd = gains.pos_p.component_mul(a_des) - gains.pos_d.component_mul(&state.velocity);
    let thrust = params.mass * g + params.mass * a_cmd.z;
    let raw = Vector3::new(-a_cmd.y / g, a_cmd.x / g, 0.0);
    let target = Vector3::new(
        raw.x.clamp(-MAX_TILT, MAX_TILT),
        raw.y.clamp(-MAX_TILT, MAX_TILT),
        0.0,
    );
    let torque = gains.att_p.component_mul(&(target - state.euler))
        - gains.att_d.component_mul(&state.body_rates);
    let command = ControlCommand { thrust, torque }.clamped(params);
    InnerLoopOutput {
        command,
        accel_cmd: a_cmd,
        raw_attitude_target: raw,
        attitude_target: target,
    }
}

pub fn inner_loop(
    a_des: &Vector3<f64>,
    state: &DroneState,
    gains: &ControllerGains,
    params: &DroneParams,
) -> ControlCommand {
    inner_loop_detailed(a_des, state, gains, params).command
}

/// Full cascade; the only controller entry point used by the environment.
pub fn track_velocity(
    v_ref: &Vector3<f64>,
    state: &DroneState,
    ctl: &ControllerState,
    gains: &ControllerGains,
    params: &DroneParams,
    dt: f64,
) -> (ControlCommand, ControllerState) {
    let (a_des, next) = outer_loop(v_ref, state, ctl, gains, dt);
    (inner_loop(&a_des, state, gains, params), next)
}
