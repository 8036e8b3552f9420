//! The simulation core of the service: one world, one vehicle, any number
//! of viewers and at most one driver. Fully synchronous; the network layer
//! feeds it events and ships out what it returns.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pilotstack::autopilot::{movement_vector, predict, PilotConfig};
use pilotstack::camera::{render_camera_frame, CameraModel};
use pilotstack::dataset::{SessionConfig, SessionWriter};
use pilotstack::nn::ModelParams;
use pilotstack::track::Track;
use pilotstack::vehicle::{step, ControlInput, VehicleParams, VehicleState};

use crate::protocol::{DriveMode, ErrorCode, TeleopMessage};
use crate::{Result, TeleopError};

pub type ConnId = u64;

/// Send a Status to every connection this often while recording, so the
/// record counter stays live.
const STATUS_EVERY_TICKS: u64 = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    To(ConnId, TeleopMessage),
    Broadcast(TeleopMessage),
}

pub struct SimConfig {
    pub track: Track,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
    pub pilot: PilotConfig,
    /// Enables autopilot mode.
    pub model: Option<ModelParams<f32>>,
    /// Recording sessions are created here as `session-NNN`.
    pub data_dir: PathBuf,
    pub start: VehicleState,
}

struct Recording {
    id: String,
    writer: SessionWriter,
}

pub struct Sim {
    cfg: SimConfig,
    state: VehicleState,
    step: u64,
    seq: u64,
    mode: DriveMode,
    command: ControlInput,
    pending_acks: Vec<ConnId>,
    connections: BTreeSet<ConnId>,
    driver: Option<ConnId>,
    recording: Option<Recording>,
    records_written: usize,
    last_session: Option<String>,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.vehicle.validate()?;
        cfg.camera.validate()?;
        cfg.pilot.validate()?;
        // A loaded model means the autopilot drives from the start.
        let mode = if cfg.model.is_some() { DriveMode::Autopilot } else { DriveMode::Human };
        Ok(Self {
            state: cfg.start,
            cfg,
            step: 0,
            seq: 0,
            mode,
            command: ControlInput::default(),
            pending_acks: Vec::new(),
            connections: BTreeSet::new(),
            driver: None,
            recording: None,
            records_written: 0,
            last_session: None,
        })
    }

    pub fn state(&self) -> VehicleState {
        self.state
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn mode(&self) -> DriveMode {
        self.mode
    }

    pub fn driver(&self) -> Option<ConnId> {
        self.driver
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    /// Directory of the current or most recent recording session.
    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.cfg.data_dir.join(id)
    }

    pub fn last_session(&self) -> Option<&str> {
        self.last_session.as_deref()
    }

    fn status_for(&self, id: ConnId) -> TeleopMessage {
        TeleopMessage::Status {
            recording: self.recording.is_some(),
            mode: self.mode,
            session_id: self.recording.as_ref().map(|r| r.id.clone()).or_else(|| self.last_session.clone()),
            records_written: self.records_written,
            driver: self.driver == Some(id),
        }
    }

    fn status_all(&self) -> Vec<Outgoing> {
        self.connections.iter().map(|&c| Outgoing::To(c, self.status_for(c))).collect()
    }

    /// Registers a connection. The first connection with no driver present
    /// becomes the driver.
    pub fn connect(&mut self, id: ConnId) -> Vec<Outgoing> {
        self.connections.insert(id);
        if self.driver.is_none() {
            self.driver = Some(id);
        }
        vec![Outgoing::To(id, self.status_for(id))]
    }

    /// Drops a connection; if it was the driver, the role passes to the
    /// longest-connected remaining client.
    pub fn disconnect(&mut self, id: ConnId) -> Vec<Outgoing> {
        self.connections.remove(&id);
        self.pending_acks.retain(|&c| c != id);
        if self.driver == Some(id) {
            self.driver = self.connections.first().copied();
            self.command = ControlInput::default();
            if let Some(d) = self.driver {
                return vec![Outgoing::To(d, self.status_for(d))];
            }
        }
        Vec::new()
    }

    /// Applies one client message. Server-to-client variants are rejected
    /// by the caller before they get here.
    pub fn handle(&mut self, id: ConnId, msg: TeleopMessage) -> Vec<Outgoing> {
        let is_driver = self.driver == Some(id);
        let reject = |code, text: &str| vec![Outgoing::To(id, TeleopMessage::error(code, text))];
        match msg {
            TeleopMessage::Command { steering, throttle } => {
                if !is_driver {
                    return reject(ErrorCode::Role, "only the driver connection may send commands");
                }
                if self.mode == DriveMode::Autopilot {
                    return reject(ErrorCode::Mode, "commands are ignored while the autopilot drives");
                }
                self.command = ControlInput::new(steering, throttle);
                self.pending_acks.push(id);
                Vec::new()
            }
            TeleopMessage::RecordToggle { on } => {
                if !is_driver {
                    return reject(ErrorCode::Role, "only the driver connection may toggle recording");
                }
                if on && self.recording.is_none() {
                    if let Err(e) = self.start_recording() {
                        return reject(ErrorCode::Unavailable, &format!("cannot start recording: {e}"));
                    }
                } else if !on {
                    if let Err(e) = self.stop_recording() {
                        return reject(ErrorCode::Unavailable, &format!("cannot finish recording: {e}"));
                    }
                }
                self.status_all()
            }
            TeleopMessage::ModeSwitch { mode } => {
                if !is_driver {
                    return reject(ErrorCode::Role, "only the driver connection may switch modes");
                }
                if mode == DriveMode::Autopilot && self.cfg.model.is_none() {
                    return reject(ErrorCode::Unavailable, "no autopilot model loaded");
                }
                self.mode = mode;
                self.command = ControlInput::default();
                self.status_all()
            }
            other => reject(
                ErrorCode::Mode,
                &format!("unexpected client message {:?}", std::mem::discriminant(&other)),
            ),
        }
    }

    fn start_recording(&mut self) -> Result<()> {
        let mut n = 0;
        let id = loop {
            let id = format!("session-{n:03}");
            if !self.cfg.data_dir.join(&id).exists() {
                break id;
            }
            n += 1;
        };
        let mut session = SessionConfig::new(self.cfg.camera.image_width_px, self.cfg.camera.image_height_px, "teleop");
        session.record_rate_hz = self.cfg.pilot.loop_rate_hz;
        let writer = SessionWriter::create(&self.cfg.data_dir.join(&id), session)?;
        log::info!("recording to {}", writer.dir().display());
        self.records_written = 0;
        self.recording = Some(Recording { id, writer });
        Ok(())
    }

    /// Closes the open session, if any.
    pub fn stop_recording(&mut self) -> Result<()> {
        if let Some(rec) = self.recording.take() {
            let manifest = rec.writer.close()?;
            log::info!("closed {} with {} records", rec.id, manifest.record_count);
            self.last_session = Some(rec.id);
        }
        Ok(())
    }

    /// Advances one simulation step: render, choose the command, record,
    /// integrate, then publish the frame and acknowledgements.
    pub fn tick(&mut self) -> Result<Vec<Outgoing>> {
        let frame = render_camera_frame(&self.cfg.track, &self.state, &self.cfg.camera);
        let cmd = match (self.mode, &self.cfg.model) {
            (DriveMode::Autopilot, Some(model)) => predict(model, &frame, &self.cfg.pilot)?,
            _ => self.command,
        };
        let mut out = Vec::new();
        if let Some(rec) = &mut self.recording {
            let ts_ms = (self.step as f64 * self.cfg.pilot.dt_s() * 1000.0).round() as u64;
            match rec.writer.append(&frame, cmd, ts_ms) {
                Ok(_) => self.records_written += 1,
                Err(e) => {
                    log::error!("recording failed, stopping: {e}");
                    self.recording = None;
                    if let Some(d) = self.driver {
                        out.push(Outgoing::To(d, TeleopMessage::error(ErrorCode::Unavailable, format!("recording stopped: {e}"))));
                    }
                    out.extend(self.status_all());
                }
            }
        }
        let next = step(&self.state, cmd, &self.cfg.vehicle, self.cfg.pilot.dt_s())?;
        let overlay = movement_vector(cmd, &self.cfg.camera);
        out.push(Outgoing::Broadcast(TeleopMessage::frame(self.seq, &frame, &self.state, Some(overlay))));
        for id in self.pending_acks.drain(..) {
            out.push(Outgoing::To(
                id,
                TeleopMessage::Ack {
                    step: self.step,
                    steering: cmd.steering(),
                    throttle: cmd.throttle(),
                    state: (&next).into(),
                },
            ));
        }
        self.seq += 1;
        self.step += 1;
        self.state = next;
        if self.recording.is_some() && self.step.is_multiple_of(STATUS_EVERY_TICKS) {
            out.extend(self.status_all());
        }
        Ok(out)
    }
}

impl Drop for Sim {
    fn drop(&mut self) {
        if let Err(e) = self.stop_recording() {
            log::error!("{e}");
        }
    }
}

impl From<pilotstack::Error> for TeleopError {
    fn from(e: pilotstack::Error) -> Self {
        TeleopError::Sim(e)
    }
}
