//! Normalized commands to 12-bit PWM duty ticks for a PCA9685-style driver:
//! one servo channel for steering and an H-bridge enable channel for the
//! drive motors.
//!
//! Quantization rounds half away from zero everywhere (`f64::round`).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::ControlInput;

pub const PWM_CHANNELS: u8 = 16;
pub const DUTY_MAX: u16 = 4095;
const DUTY_STEPS: f64 = 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoConfig {
    pub pwm_frequency_hz: f64,
    pub min_pulse_us: f64,
    pub center_pulse_us: f64,
    pub max_pulse_us: f64,
    pub channel: u8,
    /// Channel driving the H-bridge enable (speed) input.
    pub motor_channel: u8,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            pwm_frequency_hz: 50.0,
            min_pulse_us: 1000.0,
            center_pulse_us: 1500.0,
            max_pulse_us: 2000.0,
            channel: 0,
            motor_channel: 1,
        }
    }
}

impl ServoConfig {
    pub fn period_us(&self) -> f64 {
        1e6 / self.pwm_frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(format!("servo: {m}")));
        if !(self.pwm_frequency_hz > 0.0 && self.pwm_frequency_hz.is_finite()) {
            return bad(format!("pwm_frequency_hz must be > 0, got {}", self.pwm_frequency_hz));
        }
        if !(self.min_pulse_us < self.center_pulse_us && self.center_pulse_us < self.max_pulse_us) {
            return bad("pulses must satisfy min < center < max".into());
        }
        if self.min_pulse_us < 0.0 || self.max_pulse_us > self.period_us() {
            return bad("pulse range must fit within the PWM period".into());
        }
        if self.channel >= PWM_CHANNELS || self.motor_channel >= PWM_CHANNELS {
            return bad(format!("channels must be < {PWM_CHANNELS}"));
        }
        if self.channel == self.motor_channel {
            return Err(Error::ChannelCollision(self.channel));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
    Brake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HBridgeCommand {
    pub direction: Direction,
    pub duty_ticks: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PwmCommand {
    pub channel: u8,
    pub duty_ticks: u16,
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-1.0, 1.0)
    }
}

/// Piecewise-linear pulse width: negative steering interpolates min..center,
/// positive interpolates center..max. Rounded to the nearest microsecond.
pub fn steering_to_pulse_us(steering: f64, cfg: &ServoConfig) -> f64 {
    let s = clamp_unit(steering);
    let pulse = if s <= 0.0 {
        cfg.center_pulse_us + s * (cfg.center_pulse_us - cfg.min_pulse_us)
    } else {
        cfg.center_pulse_us + s * (cfg.max_pulse_us - cfg.center_pulse_us)
    };
    pulse.round()
}

pub fn pulse_to_duty_ticks(pulse_us: f64, cfg: &ServoConfig) -> Result<u16> {
    let period = cfg.period_us();
    if pulse_us > period {
        return Err(Error::PulseExceedsPeriod {
            pulse_us,
            period_us: period,
        });
    }
    let ticks = (pulse_us / period * DUTY_STEPS).round();
    Ok(ticks.clamp(0.0, DUTY_MAX as f64) as u16)
}

pub fn throttle_to_hbridge(throttle: f64) -> HBridgeCommand {
    let t = clamp_unit(throttle);
    let direction = if t > 0.0 {
        Direction::Forward
    } else if t < 0.0 {
        Direction::Reverse
    } else {
        Direction::Brake
    };
    let duty_ticks = (t.abs() * DUTY_MAX as f64).round() as u16;
    HBridgeCommand {
        direction,
        duty_ticks,
    }
}

/// The two PCA9685 writes for one command: servo first, then motor enable.
pub fn control_to_bus_writes(input: ControlInput, servo: &ServoConfig, motor_channel: u8) -> Result<[PwmCommand; 2]> {
    if servo.channel == motor_channel {
        return Err(Error::ChannelCollision(motor_channel));
    }
    if servo.channel >= PWM_CHANNELS || motor_channel >= PWM_CHANNELS {
        return Err(Error::InvalidParam(format!("channels must be < {PWM_CHANNELS}")));
    }
    let servo_ticks = pulse_to_duty_ticks(steering_to_pulse_us(input.steering(), servo), servo)?;
    let motor = throttle_to_hbridge(input.throttle());
    Ok([
        PwmCommand {
            channel: servo.channel,
            duty_ticks: servo_ticks,
        },
        PwmCommand {
            channel: motor_channel,
            duty_ticks: motor.duty_ticks,
        },
    ])
}

/// Stand-in for the I2C bus: records every write in order.
#[derive(Debug, Default, Clone)]
pub struct MockBus {
    writes: Vec<PwmCommand>,
}

impl MockBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, cmd: PwmCommand) {
        self.writes.push(cmd);
    }

    pub fn apply(&mut self, input: ControlInput, servo: &ServoConfig) -> Result<()> {
        for cmd in control_to_bus_writes(input, servo, servo.motor_channel)? {
            self.write(cmd);
        }
        Ok(())
    }

    pub fn writes(&self) -> &[PwmCommand] {
        &self.writes
    }

    /// One JSON object per write: `{"channel":0,"duty_ticks":307}`.
    pub fn dump_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for w in &self.writes {
            serde_json::to_writer(&mut out, w)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
