//! Rigid-body quadrotor dynamics.
//!
//! The vehicle is described by world-frame position and velocity, Z-Y-X Euler
//! angles `[roll, pitch, yaw]` and body rates `[p, q, r]`. Inputs are collective
//! thrust along body +z and a body torque; rotor-level allocation is not modeled.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pitch must stay this far away from ±π/2 for the Euler-rate map to be used.
pub const GIMBAL_GUARD: f64 = 0.1;

/// Default physics step in seconds.
pub const PHYSICS_DT: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("singular attitude: pitch {pitch} rad is within the gimbal guard")]
    SingularAttitude { pitch: f64 },
    #[error("integration produced a non-finite state")]
    NonFiniteState,
    #[error("invalid drone parameters: {0}")]
    InvalidParams(String),
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroneParams {
    pub mass: f64,
    /// Inertia tensor, kg·m².
    pub inertia: Matrix3<f64>,
    pub gravity: f64,
    pub arm_length: f64,
    pub max_thrust: f64,
    /// Per-axis torque limit, N·m.
    pub max_torque: f64,
}

impl Default for DroneParams {
    fn default() -> Self {
        let mass = 1.0;
        let gravity = 9.81;
        Self {
            mass,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.01, 0.01, 0.02)),
            gravity,
            arm_length: 0.15,
            max_thrust: 4.0 * mass * gravity,
            max_torque: 0.2,
        }
    }
}

impl DroneParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: &str| Err(DynamicsError::InvalidParams(msg.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if !(self.gravity > 0.0) {
            return bad("gravity must be positive");
        }
        if !((self.inertia - self.inertia.transpose()).abs().max() <= 1e-12) {
            return bad("inertia must be symmetric");
        }
        if self.inertia.cholesky().is_none() {
            return bad("inertia must be positive definite");
        }
        if !(self.max_thrust > self.mass * self.gravity) {
            return bad("max_thrust must exceed hover thrust");
        }
        if !(self.max_torque > 0.0) {
            return bad("max_torque must be positive");
        }
        if !(self.arm_length > 0.0) {
            return bad("arm_length must be positive");
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn inertia_diagonal(&self) -> Vector3<f64> {
        self.inertia.diagonal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DroneState {
    pub position: Vector3<f64>,
    /// `[roll, pitch, yaw]`, radians.
    pub euler: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub body_rates: Vector3<f64>,
}

impl DroneState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.position, self.euler, self.velocity, self.body_rates]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn yaw(&self) -> f64 {
        self.euler.z
    }

    fn add_scaled(&self, d: &DroneState, h: f64) -> DroneState {
        DroneState {
            position: self.position + d.position * h,
            euler: self.euler + d.euler * h,
            velocity: self.velocity + d.velocity * h,
            body_rates: self.body_rates + d.body_rates * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ControlCommand {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl ControlCommand {
    pub fn hover(params: &DroneParams) -> Self {
        Self {
            thrust: params.hover_thrust(),
            torque: Vector3::zeros(),
        }
    }

    /// Clip thrust to `[0, max_thrust]` and each torque axis to `±max_torque`.
    pub fn clamped(&self, params: &DroneParams) -> Self {
        let lim = params.max_torque;
        Self {
            thrust: self.thrust.clamp(0.0, params.max_thrust),
            torque: self.torque.map(|t| t.clamp(-lim, lim)),
        }
    }
}

/// Body-to-world rotation for Z-Y-X Euler angles, `R = Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rotation_world_from_body(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sr, cr) = euler.x.sin_cos();
    let (sp, cp) = euler.y.sin_cos();
    let (sy, cy) = euler.z.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Matrix mapping body rates to Z-Y-X Euler-angle rates.
pub fn euler_rate_map(euler: &Vector3<f64>) -> Result<Matrix3<f64>, DynamicsError> {
    let pitch = euler.y;
    if !pitch.is_finite() || pitch.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_GUARD {
        return Err(DynamicsError::SingularAttitude { pitch });
    }
    let (sr, cr) = euler.x.sin_cos();
    let cp = pitch.cos();
    let tp = pitch.tan();
    Ok(Matrix3::new(
        1.0,
        sr * tp,
        cr * tp,
        0.0,
        cr,
        -sr,
        0.0,
        sr / cp,
        cr / cp,
    ))
}

/// Time derivative of the state. The returned value uses the `DroneState`
/// layout with per-second units in every block.
pub fn state_derivative(
    state: &DroneState,
    cmd: &ControlCommand,
    params: &DroneParams,
) -> Result<DroneState, DynamicsError> {
    let rates = euler_rate_map(&state.euler)?;
    let rot = rotation_world_from_body(&state.euler);
    let gravity = Vector3::new(0.0, 0.0, -params.gravity);
    let thrust_body = Vector3::new(0.0, 0.0, cmd.thrust);
    let omega = state.body_rates;
    let j_omega = params.inertia * omega;
    let inv_inertia = params
        .inertia
        .try_inverse()
        .ok_or_else(|| DynamicsError::InvalidParams("inertia is not invertible".into()))?;
    Ok(DroneState {
        position: state.velocity,
        euler: rates * omega,
        velocity: gravity + rot * thrust_body / params.mass,
        body_rates: inv_inertia * (cmd.torque - omega.cross(&j_omega)),
    })
}

/// One RK4 step with the command held constant over `dt`.
pub fn step(
    state: &DroneState,
    cmd: &ControlCommand,
    params: &DroneParams,
    dt: f64,
) -> Result<DroneState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidTimeStep(dt));
    }
    let cmd = cmd.clamped(params);
    let k1 = state_derivative(state, &cmd, params)?;
    let k2 = state_derivative(&state.add_scaled(&k1, 0.5 * dt), &cmd, params)?;
    let k3 = state_derivative(&state.add_scaled(&k2, 0.5 * dt), &cmd, params)?;
    let k4 = state_derivative(&state.add_scaled(&k3, dt), &cmd, params)?;
    let next = DroneState {
        position: state.position
            + (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position) * (dt / 6.0),
        euler: state.euler + (k1.euler + 2.0 * k2.euler + 2.0 * k3.euler + k4.euler) * (dt / 6.0),
        velocity: state.velocity
            + (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity) * (dt / 6.0),
        body_rates: state.body_rates
            + (k1.body_rates + 2.0 * k2.body_rates + 2.0 * k3.body_rates + k4.body_rates)
                * (dt / 6.0),
    };
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(next)
}
