//! Lap scoring, the scripted pure-pursuit expert and dataset synthesis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autopilot::{Driver, TraceEntry};
use crate::camera::{render_camera_frame, CameraFrame, CameraModel};
use crate::dataset::{SessionConfig, SessionWriter};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::track::{Point, Track};
use crate::vehicle::{step, wrap_angle, ControlInput, VehicleParams, VehicleState};

pub const DEFAULT_LOOKAHEAD_M: f64 = 0.6;
pub const CRUISE_THROTTLE: f64 = 0.4;
/// Throttle is divided by `1 + CURVE_SLOWDOWN · |κ|`.
pub const CURVE_SLOWDOWN: f64 = 0.1;

/// Where the vehicle is relative to the centerline, with arc progress
/// unwrapped across the start line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub arc_progress_m: f64,
    pub lateral_m: f64,
}

/// Accumulates signed arc progress from a starting point.
///
/// Consecutive projections are differenced with the jump folded into
/// `(-L/2, L/2]`, so crossing the start line counts as forward progress.
#[derive(Debug, Clone)]
pub struct ProgressTracker<'a> {
    track: &'a Track,
    last_arc: f64,
    progress: f64,
}

impl<'a> ProgressTracker<'a> {
    pub fn new(track: &'a Track, start: Point) -> Self {
        Self {
            track,
            last_arc: track.project(start).arc_m,
            progress: 0.0,
        }
    }

    pub fn update(&mut self, p: Point) -> Observation {
        let proj = self.track.project(p);
        let len = self.track.centerline_length();
        let mut d = (proj.arc_m - self.last_arc).rem_euclid(len);
        if d > len / 2.0 {
            d -= len;
        }
        self.progress += d;
        self.last_arc = proj.arc_m;
        Observation {
            arc_progress_m: self.progress,
            lateral_m: proj.lateral_m,
        }
    }

    pub fn progress_m(&self) -> f64 {
        self.progress
    }
}

/// Pure pursuit toward the centerline point `lookahead_m` ahead (by arc) of
/// the vehicle's projection.
pub fn expert_controller(
    state: &VehicleState,
    track: &Track,
    lookahead_m: f64,
    params: &VehicleParams,
) -> Result<ControlInput> {
    let proj = track.project(state.position());
    let limit = 2.0 * track.lane_width_m();
    if proj.lateral_m.abs() > limit {
        return Err(Error::TooFarFromTrack {
            offset_m: proj.lateral_m.abs(),
            limit_m: limit,
        });
    }
    let (target, _) = track.point_at(proj.arc_m + lookahead_m);
    let (dx, dy) = (target[0] - state.x_m, target[1] - state.y_m);
    let (sin_h, cos_h) = state.heading_rad.sin_cos();
    let left = -sin_h * dx + cos_h * dy;
    let dist2 = dx * dx + dy * dy;
    let curvature = if dist2 > 1e-12 { 2.0 * left / dist2 } else { 0.0 };
    // Positive curvature bends left; positive steering turns right.
    let wheel = (curvature * params.wheelbase_m).atan();
    let steering = -wheel / params.max_wheel_angle_rad;
    let throttle = CRUISE_THROTTLE / (1.0 + CURVE_SLOWDOWN * curvature.abs());
    Ok(ControlInput::new(steering, throttle))
}

/// The expert as a drive-loop driver.
pub struct ExpertDriver<'a> {
    pub track: &'a Track,
    pub params: VehicleParams,
    pub lookahead_m: f64,
}

impl Driver for ExpertDriver<'_> {
    fn needs_frame(&self) -> bool {
        false
    }

    fn command(&mut self, state: &VehicleState, _frame: Option<&CameraFrame>) -> Result<ControlInput> {
        expert_controller(state, self.track, self.lookahead_m, &self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LapMetrics {
    pub completed: bool,
    pub lap_time_s: f64,
    pub distance_m: f64,
    pub avg_speed_mps: f64,
    pub offtrack_events: usize,
    pub max_lateral_offset_m: f64,
}

/// Scores a trace sampled every `dt_s` seconds.
///
/// The lap ends where cumulative progress first reaches the centerline
/// length, interpolated linearly between samples; everything after that is
/// ignored. Off-track events count entries into `|offset| > lane/2`, once per
/// contiguous excursion.
pub fn score_episode(trace: &[TraceEntry], track: &Track, dt_s: f64) -> LapMetrics {
    let Some(first) = trace.first() else {
        return LapMetrics {
            completed: false,
            lap_time_s: 0.0,
            distance_m: 0.0,
            avg_speed_mps: 0.0,
            offtrack_events: 0,
            max_lateral_offset_m: 0.0,
        };
    };
    let len = track.centerline_length();
    let half_lane = track.lane_width_m() / 2.0;
    let mut tracker = ProgressTracker::new(track, [first.x, first.y]);
    let mut prev = 0.0;
    let mut events = 0;
    let mut off = false;
    let mut max_lat: f64 = 0.0;
    let mut end: Option<f64> = None;

    for (k, e) in trace.iter().enumerate() {
        let obs = tracker.update([e.x, e.y]);
        max_lat = max_lat.max(obs.lateral_m.abs());
        let now_off = obs.lateral_m.abs() > half_lane;
        if now_off && !off {
            events += 1;
        }
        off = now_off;
        if k > 0 && obs.arc_progress_m >= len {
            let frac = (len - prev) / (obs.arc_progress_m - prev);
            end = Some((k - 1) as f64 + frac);
            break;
        }
        prev = obs.arc_progress_m;
    }
    let (completed, lap_time_s, distance_m) = match end {
        Some(steps) => (true, steps * dt_s, len),
        None => (false, (trace.len() - 1) as f64 * dt_s, tracker.progress_m()),
    };
    LapMetrics {
        completed,
        lap_time_s,
        distance_m,
        avg_speed_mps: if lap_time_s > 0.0 { distance_m / lap_time_s } else { 0.0 },
        offtrack_events: events,
        max_lateral_offset_m: max_lat,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Uniform steering noise amplitude added to the executed command.
    pub noise_level: f64,
    pub lookahead_m: f64,
    pub record_rate_hz: f64,
    /// Steps per episode before restarting from a fresh random pose.
    pub episode_steps: usize,
    /// Start pose randomization: lateral offset and heading error bounds.
    pub start_lateral_m: f64,
    pub start_heading_rad: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 1500,
            seed: 0,
            noise_level: 0.1,
            lookahead_m: DEFAULT_LOOKAHEAD_M,
            record_rate_hz: 20.0,
            episode_steps: 300,
            start_lateral_m: 0.1,
            start_heading_rad: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(format!("synth: {m}")));
        if self.n_samples < 1 {
            return bad("n_samples must be >= 1".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level <= 1.0) {
            return bad(format!("noise_level must be in [0, 1], got {}", self.noise_level));
        }
        if !(self.lookahead_m > 0.0) {
            return bad(format!("lookahead_m must be > 0, got {}", self.lookahead_m));
        }
        if !(self.record_rate_hz >= 10.0 && self.record_rate_hz.is_finite()) {
            return bad(format!("record_rate_hz must be >= 10, got {}", self.record_rate_hz));
        }
        if self.episode_steps < 1 {
            return bad("episode_steps must be >= 1".into());
        }
        if !(self.start_lateral_m >= 0.0 && self.start_heading_rad >= 0.0) {
            return bad("start randomization bounds must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SynthReport {
    pub records: usize,
    pub episodes: usize,
    /// Episodes cut short because the vehicle left the track.
    pub restarts: usize,
}

/// Drives the expert around `track` and records `cfg.n_samples` frames.
///
/// Labels are the expert's clean commands; the vehicle executes them with
/// seeded uniform steering noise so the data includes recoveries from the
/// drift the noise causes. Each episode starts from a random pose near the
/// centerline and runs for `episode_steps` or until the vehicle leaves the
/// lane, then the next episode starts from the next sub-seed.
pub fn synthesize_dataset(
    track: &Track,
    vehicle: &VehicleParams,
    camera: &CameraModel,
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<SynthReport> {
    cfg.validate()?;
    vehicle.validate()?;
    camera.validate()?;
    let mut session = SessionConfig::new(camera.image_width_px, camera.image_height_px, "synthetic");
    session.record_rate_hz = cfg.record_rate_hz;
    let mut writer = SessionWriter::create(out_dir, session)?;
    let dt = 1.0 / cfg.record_rate_hz;
    let len = track.centerline_length();
    let half_lane = track.lane_width_m() / 2.0;
    let mut report = SynthReport {
        records: 0,
        episodes: 0,
        restarts: 0,
    };

    while report.records < cfg.n_samples {
        let mut rng = Rng::derived(cfg.seed, &[0x5EED, report.episodes as u64]);
        report.episodes += 1;
        let arc = rng.uniform(0.0, len);
        let (p, t) = track.point_at(arc);
        let lat = rng.uniform(-cfg.start_lateral_m, cfg.start_lateral_m);
        let heading = t[1].atan2(t[0]) + rng.uniform(-cfg.start_heading_rad, cfg.start_heading_rad);
        let speed = rng.uniform(0.0, CRUISE_THROTTLE * vehicle.max_speed_mps);
        let mut state = VehicleState::new(p[0] - t[1] * lat, p[1] + t[0] * lat, wrap_angle(heading), speed);

        for _ in 0..cfg.episode_steps {
            if report.records >= cfg.n_samples {
                break;
            }
            if track.project(state.position()).lateral_m.abs() > half_lane {
                log::info!("synth: episode {} left the track, restarting", report.episodes - 1);
                report.restarts += 1;
                break;
            }
            let label = expert_controller(&state, track, cfg.lookahead_m, vehicle)?;
            let frame = render_camera_frame(track, &state, camera);
            let ts_ms = (report.records as f64 * dt * 1000.0).round() as u64;
            writer.append(&frame, label, ts_ms)?;
            report.records += 1;
            let noise = rng.uniform(-cfg.noise_level, cfg.noise_level);
            let executed = ControlInput::new(label.steering() + noise, label.throttle());
            state = step(&state, executed, vehicle, dt)?;
        }
    }
    writer.close()?;
    Ok(report)
}
