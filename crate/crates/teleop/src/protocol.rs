//! Wire format of the `pilotstack.v1` WebSocket subprotocol.
//!
//! Every message is a JSON text frame whose `"type"` field names the variant.

use base64::Engine;
use serde::{Deserialize, Serialize};

use pilotstack::autopilot::MovementVector;
use pilotstack::camera::CameraFrame;
use pilotstack::dataset::encode_ppm;
use pilotstack::vehicle::VehicleState;

pub const SUBPROTOCOL: &str = "pilotstack.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveMode {
    Human,
    Autopilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl From<&VehicleState> for StateSnapshot {
    fn from(s: &VehicleState) -> Self {
        Self {
            x: s.x_m,
            y: s.y_m,
            heading: s.heading_rad,
            speed: s.speed_mps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Sender does not hold the driver role.
    Role,
    /// Command sent while the autopilot is driving.
    Mode,
    /// Request cannot be served (no model loaded, session I/O failure).
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum TeleopMessage {
    Frame {
        seq: u64,
        width: usize,
        height: usize,
        /// Always `"ppm"`: binary P6, base64 encoded in `jpeg_or_ppm`.
        encoding: String,
        jpeg_or_ppm: String,
        state: StateSnapshot,
        overlay: Option<MovementVector>,
    },
    Command {
        steering: f64,
        throttle: f64,
    },
    RecordToggle {
        on: bool,
    },
    ModeSwitch {
        mode: DriveMode,
    },
    Status {
        recording: bool,
        mode: DriveMode,
        session_id: Option<String>,
        records_written: usize,
        /// Whether this connection holds the driver role.
        driver: bool,
    },
    /// Reply to an applied Command: the clamped values and the state after
    /// the simulation step that used them.
    Ack {
        step: u64,
        steering: f64,
        throttle: f64,
        state: StateSnapshot,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl TeleopMessage {
    pub fn frame(seq: u64, frame: &CameraFrame, state: &VehicleState, overlay: Option<MovementVector>) -> Self {
        TeleopMessage::Frame {
            seq,
            width: frame.width(),
            height: frame.height(),
            encoding: "ppm".into(),
            jpeg_or_ppm: base64::engine::general_purpose::STANDARD.encode(encode_ppm(frame)),
            state: state.into(),
            overlay,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        TeleopMessage::Error {
            code,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Decodes the image of a Frame message.
    pub fn decode_frame(&self) -> Option<CameraFrame> {
        match self {
            TeleopMessage::Frame { jpeg_or_ppm, .. } => {
                let bytes = base64::engine::general_purpose::STANDARD.decode(jpeg_or_ppm).ok()?;
                pilotstack::dataset::decode_ppm(&bytes).ok()
            }
            _ => None,
        }
    }
}
