//! Kinematic single-track (bicycle) model of the car.
//!
//! Steering sign convention: positive steering turns the car to the right
//! (clockwise in the world frame), matching the servo and overlay
//! conventions used everywhere else in the stack. The world frame itself is
//! right-handed with heading measured counter-clockwise from +x.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_STEP_DT_S: f64 = 0.1;

/// Angles below this magnitude are treated as driving straight.
pub const STRAIGHT_EPS_RAD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub wheelbase_m: f64,
    pub max_wheel_angle_rad: f64,
    pub max_speed_mps: f64,
    pub motor_time_constant_s: f64,
    pub length_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
    pub mass_kg: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase_m: 0.20,
            max_wheel_angle_rad: 30f64.to_radians(),
            max_speed_mps: 3.0,
            motor_time_constant_s: 0.5,
            length_mm: 300.0,
            width_mm: 200.0,
            height_mm: 300.0,
            mass_kg: 1.15,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParam(format!("vehicle: {msg}")));
        if !(self.wheelbase_m > 0.0) {
            return bad("wheelbase_m must be > 0");
        }
        if !(self.max_wheel_angle_rad > 0.0 && self.max_wheel_angle_rad < PI / 2.0) {
            return bad("max_wheel_angle_rad must lie in (0, pi/2)");
        }
        if !(self.max_speed_mps > 0.0) {
            return bad("max_speed_mps must be > 0");
        }
        if !(self.motor_time_constant_s > 0.0) {
            return bad("motor_time_constant_s must be > 0");
        }
        let positive = [self.length_mm, self.width_mm, self.height_mm, self.mass_kg];
        if !positive.iter().all(|&v| v > 0.0) {
            return bad("dimensions and mass must be > 0");
        }
        Ok(())
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x_m: f64,
    pub y_m: f64,
    pub heading_rad: f64,
    pub speed_mps: f64,
}

impl VehicleState {
    pub fn new(x_m: f64, y_m: f64, heading_rad: f64, speed_mps: f64) -> Self {
        Self {
            x_m,
            y_m,
            heading_rad: wrap_angle(heading_rad),
            speed_mps,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x_m, self.y_m]
    }
}

/// Normalized driver command. Both fields are clamped to [-1, 1] on
/// construction; NaN becomes 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ControlInput {
    steering: f64,
    throttle: f64,
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-1.0, 1.0)
    }
}

impl ControlInput {
    pub fn new(steering: f64, throttle: f64) -> Self {
        Self {
            steering: clamp_unit(steering),
            throttle: clamp_unit(throttle),
        }
    }

    pub fn steering(&self) -> f64 {
        self.steering
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }
}

impl<'de> Deserialize<'de> for ControlInput {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            steering: f64,
            throttle: f64,
        }
        let raw = Raw::deserialize(d)?;
        Ok(ControlInput::new(raw.steering, raw.throttle))
    }
}

/// Signed wheel angle; positive is a right turn.
pub fn steering_to_wheel_angle(input: ControlInput, params: &VehicleParams) -> f64 {
    input.steering * params.max_wheel_angle_rad
}

/// Radius of the circle traced by the rear axle, or `None` when the wheels
/// are (numerically) straight. The sign follows the wheel angle.
pub fn turning_radius(wheel_angle_rad: f64, params: &VehicleParams) -> Option<f64> {
    if wheel_angle_rad.abs() < STRAIGHT_EPS_RAD {
        None
    } else {
        Some(params.wheelbase_m / wheel_angle_rad.tan())
    }
}

/// Advances the state by one explicit-Euler step of `dt_s` seconds.
///
/// Position and heading integrate the speed held at the start of the step;
/// speed then relaxes toward `throttle * max_speed` through the exact
/// discretization of a first-order lag, which cannot overshoot.
pub fn step(
    state: &VehicleState,
    input: ControlInput,
    params: &VehicleParams,
    dt_s: f64,
) -> Result<VehicleState> {
    if !(dt_s > 0.0 && dt_s <= MAX_STEP_DT_S) {
        return Err(Error::InvalidParam(format!(
            "dt must lie in (0, {MAX_STEP_DT_S}] s, got {dt_s}"
        )));
    }
    let vmax = params.max_speed_mps;
    let v = state.speed_mps.clamp(-vmax, vmax);
    let delta = steering_to_wheel_angle(input, params);
    let (sin_h, cos_h) = state.heading_rad.sin_cos();

    let x = state.x_m + v * cos_h * dt_s;
    let y = state.y_m + v * sin_h * dt_s;
    // Positive wheel angle turns clockwise.
    let heading = wrap_angle(state.heading_rad - v / params.wheelbase_m * delta.tan() * dt_s);

    let target = input.throttle * vmax;
    let decay = (-dt_s / params.motor_time_constant_s).exp();
    let speed = (target + (v - target) * decay).clamp(-vmax, vmax);

    Ok(VehicleState {
        x_m: x,
        y_m: y,
        heading_rad: heading,
        speed_mps: speed,
    })
}

/// One violated FIRA body-dimension bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub dimension: &'static str,
    pub value_mm: f64,
    pub limit_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceReport {
    pub violations: Vec<Violation>,
}

impl ComplianceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const FIRA_MAX_LENGTH_MM: f64 = 300.0;
pub const FIRA_MAX_WIDTH_MM: f64 = 200.0;
pub const FIRA_MAX_HEIGHT_MM: f64 = 300.0;

pub fn check_fira_constraints(params: &VehicleParams) -> ComplianceReport {
    let bounds = [
        ("length", params.length_mm, FIRA_MAX_LENGTH_MM),
        ("width", params.width_mm, FIRA_MAX_WIDTH_MM),
        ("height", params.height_mm, FIRA_MAX_HEIGHT_MM),
    ];
    let violations = bounds
        .into_iter()
        .filter(|&(_, value, limit)| !(value <= limit))
        .map(|(dimension, value_mm, limit_mm)| Violation {
            dimension,
            value_mm,
            limit_mm,
        })
        .collect();
    ComplianceReport { violations }
}
