//! Per-wheel velocity loop: a PID controller producing a normalized duty and
//! a first-order motor plant that turns duty into wheel speed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the accumulated error (rad).
    pub integral_limit: f64,
    /// Bound on |duty|, itself at most 1.
    pub output_limit: f64,
}

impl Default for PidGains {
    /// PI tuned against the default plant: `ki/kp` cancels the 0.1 s motor
    /// pole, `kp·ω_max = 1.75` gives a ~57 ms closed-loop time constant.
    fn default() -> Self {
        Self {
            kp: 0.1,
            ki: 1.0,
            kd: 0.0,
            integral_limit: 1.0,
            output_limit: 1.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams {
                    field,
                    reason: "gains must be finite and >= 0",
                });
            }
        }
        if !(self.integral_limit.is_finite() && self.integral_limit > 0.0) {
            return Err(Error::InvalidParams {
                field: "integral_limit",
                reason: "must be finite and > 0",
            });
        }
        if !(self.output_limit > 0.0 && self.output_limit <= 1.0) {
            return Err(Error::InvalidParams {
                field: "output_limit",
                reason: "must be in (0, 1]",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotorState {
    pub wheel_speed_radps: f64,
    /// Normalized PWM duty in [-1, 1].
    pub duty: f64,
    pub integral_term: f64,
    /// Last measurement seen by the PID, for the derivative term.
    pub last_measured_radps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Discretization {
    /// Zero-order-hold solution of the lag; exact for any step.
    #[default]
    Exact,
    /// Forward Euler; unstable for `dt > 2τ`.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MotorPlantParams {
    pub time_constant_s: f64,
    pub max_wheel_speed_radps: f64,
    pub discretization: Discretization,
}

impl Default for MotorPlantParams {
    fn default() -> Self {
        Self {
            time_constant_s: 0.1,
            max_wheel_speed_radps: 17.5,
            discretization: Discretization::Exact,
        }
    }
}

/// One positional PID update; derivative acts on the measurement.
///
/// The integral is clamped to `integral_limit` and frozen while the output
/// is saturated in the direction the error pushes.
pub fn pid_step(
    state: MotorState,
    setpoint_radps: f64,
    measured_radps: f64,
    dt: f64,
    gains: &PidGains,
) -> MotorState {
    let limit = gains.output_limit.min(1.0);
    let error = setpoint_radps - measured_radps;
    let derivative = match state.last_measured_radps {
        Some(prev) if dt > 0.0 => -(measured_radps - prev) / dt,
        _ => 0.0,
    };
    let clamp_i = |i: f64| i.clamp(-gains.integral_limit, gains.integral_limit);
    let candidate = clamp_i(state.integral_term + error * dt);
    let raw = gains.kp * error + gains.ki * candidate + gains.kd * derivative;
    let integral = if raw.abs() > limit && raw.signum() == error.signum() {
        clamp_i(state.integral_term)
    } else {
        candidate
    };
    let output = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    MotorState {
        duty: output.clamp(-limit, limit),
        integral_term: integral,
        last_measured_radps: Some(measured_radps),
        ..state
    }
}

/// Result of advancing the plant: the new state and the wheel angle swept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStep {
    pub state: MotorState,
    pub rotation_rad: f64,
}

/// Advances the first-order lag `τ·ω' = duty·ω_max − ω` by `dt`.
pub fn advance_plant(state: MotorState, duty: f64, dt: f64, plant: &MotorPlantParams) -> PlantStep {
    let duty = duty.clamp(-1.0, 1.0);
    let target = duty * plant.max_wheel_speed_radps;
    let w0 = state.wheel_speed_radps;
    let tau = plant.time_constant_s;
    let (w1, rotation) = match plant.discretization {
        Discretization::Exact => {
            let decay = libm::exp(-dt / tau);
            let w1 = target + (w0 - target) * decay;
            (w1, target * dt + (w0 - target) * tau * (1.0 - decay))
        }
        Discretization::Euler => {
            let w1 = w0 + dt / tau * (target - w0);
            (w1, 0.5 * (w0 + w1) * dt)
        }
    };
    PlantStep {
        state: MotorState {
            wheel_speed_radps: w1,
            duty,
            ..state
        },
        rotation_rad: rotation,
    }
}

pub fn motor_plant_step(
    state: MotorState,
    duty: f64,
    dt: f64,
    plant: &MotorPlantParams,
) -> MotorState {
    advance_plant(state, duty, dt, plant).state
}
