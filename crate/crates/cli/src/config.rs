//! The `pilotstack.toml` application config.
//!
//! Every section is optional and falls back to the library defaults, so an
//! empty file is a valid config. Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pilotstack::actuation::ServoConfig;
use pilotstack::autopilot::PilotConfig;
use pilotstack::camera::CameraModel;
use pilotstack::eval::SynthConfig;
use pilotstack::nn::TrainConfig;
use pilotstack::track::{Track, TrackSpec};
use pilotstack::vehicle::VehicleParams;

use crate::CliError;

/// Value of `track` that selects the built-in oval.
pub const DEFAULT_TRACK: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    /// `"default"` or a path to a track JSON file, relative to the working
    /// directory.
    pub track: String,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
    pub servo: ServoConfig,
    pub pilot: PilotConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            track: DEFAULT_TRACK.into(),
            vehicle: VehicleParams::default(),
            camera: CameraModel::default(),
            servo: ServoConfig::default(),
            pilot: PilotConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text, path)
    }

    /// Loads `path`, or the defaults when no config was given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.vehicle.validate()?;
        self.camera.validate()?;
        self.servo.validate()?;
        self.pilot.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    pub fn track_path(&self) -> Option<PathBuf> {
        (self.track != DEFAULT_TRACK).then(|| PathBuf::from(&self.track))
    }

    pub fn load_track(&self) -> Result<Track, CliError> {
        match self.track_path() {
            None => Ok(Track::default_track()),
            Some(path) => Ok(Track::new(TrackSpec::load(&path)?)?),
        }
    }
}
