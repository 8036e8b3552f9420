//! Perceive, predict, act: frame preprocessing, model inference, the
//! movement-vector overlay and the fixed-step drive loop.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{render_camera_frame, CameraFrame, CameraModel};
use crate::error::{Error, Result};
use crate::eval::ProgressTracker;
use crate::nn::layers::Mode;
use crate::nn::model::{model_forward, ModelParams};
use crate::nn::tensor::Tensor;
use crate::rng::Rng;
use crate::track::Track;
use crate::vehicle::{step, ControlInput, VehicleParams, VehicleState};

pub const MAX_STEERING_TRIM: f64 = 0.2;
/// Overlay sweep at full steering.
pub const OVERLAY_MAX_ANGLE_RAD: f64 = std::f64::consts::FRAC_PI_4;
/// Overlay length at full throttle, as a fraction of frame height.
pub const OVERLAY_LENGTH_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PilotConfig {
    pub loop_rate_hz: f64,
    pub throttle_scale: f64,
    pub steering_trim: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            loop_rate_hz: 20.0,
            throttle_scale: 1.0,
            steering_trim: 0.0,
        }
    }
}

impl PilotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loop_rate_hz > 0.0 && self.loop_rate_hz.is_finite()) {
            return Err(Error::InvalidParam(format!("pilot: loop_rate_hz must be > 0, got {}", self.loop_rate_hz)));
        }
        if !(self.throttle_scale > 0.0 && self.throttle_scale <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "pilot: throttle_scale must be in (0, 1], got {}",
                self.throttle_scale
            )));
        }
        if !(self.steering_trim.abs() <= MAX_STEERING_TRIM) {
            return Err(Error::InvalidParam(format!(
                "pilot: steering_trim must be within ±{MAX_STEERING_TRIM}, got {}",
                self.steering_trim
            )));
        }
        Ok(())
    }

    pub fn dt_s(&self) -> f64 {
        1.0 / self.loop_rate_hz
    }
}

/// Resizes `frame` to `height`×`width` (bilinear, corners aligned) and
/// scales bytes to [0, 1]. Output shape is `(height, width, 3)`.
pub fn preprocess_to(frame: &CameraFrame, height: usize, width: usize) -> Result<Tensor<f32>> {
    let (sw, sh) = (frame.width(), frame.height());
    if sw == 0 || sh == 0 || height == 0 || width == 0 {
        return Err(Error::Shape(format!("cannot preprocess {sw}x{sh} frame to {width}x{height}")));
    }
    let src = frame.pixels();
    if (sw, sh) == (width, height) {
        // Same arithmetic as the training pipeline, so inference on a
        // recorded frame sees bit-identical input.
        let data = src.iter().map(|&b| b as f32 / 255.0).collect();
        return Tensor::from_vec(&[height, width, 3], data);
    }
    let scale = |d: usize, s: usize| if d > 1 { (s - 1) as f64 / (d - 1) as f64 } else { 0.0 };
    let (ry, rx) = (scale(height, sh), scale(width, sw));
    let mut data = Vec::with_capacity(height * width * 3);
    for r in 0..height {
        let fy = r as f64 * ry;
        let y0 = (fy.floor() as usize).min(sh - 1);
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for c in 0..width {
            let fx = c as f64 * rx;
            let x0 = (fx.floor() as usize).min(sw - 1);
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            for ch in 0..3 {
                let at = |y: usize, x: usize| src[(y * sw + x) * 3 + ch] as f64;
                let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                let bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                data.push(((top * (1.0 - wy) + bot * wy) / 255.0) as f32);
            }
        }
    }
    Tensor::from_vec(&[height, width, 3], data)
}

/// [`preprocess_to`] at the default 160×120 network input.
pub fn preprocess(frame: &CameraFrame) -> Result<Tensor<f32>> {
    preprocess_to(frame, 120, 160)
}

/// Raw (unclamped) head outputs for one frame.
pub fn predict_raw(params: &ModelParams<f32>, frame: &CameraFrame) -> Result<(f64, f64)> {
    let [h, w, _] = params.arch.input_shape();
    let x = preprocess_to(frame, h, w)?.reshape(&[1, h, w, 3])?;
    // Inference mode never draws from the generator.
    let (out, _) = model_forward(params, &x, Mode::Infer, &mut Rng::new(0))?;
    Ok((out.steering.data()[0] as f64, out.throttle.data()[0] as f64))
}

/// Turns raw head outputs into a command: clamp, add trim, re-clamp, scale
/// throttle.
pub fn postprocess(raw_steering: f64, raw_throttle: f64, cfg: &PilotConfig) -> ControlInput {
    let s = raw_steering.clamp(-1.0, 1.0) + cfg.steering_trim;
    let t = raw_throttle.clamp(-1.0, 1.0) * cfg.throttle_scale;
    ControlInput::new(s, t)
}

pub fn predict(params: &ModelParams<f32>, frame: &CameraFrame, cfg: &PilotConfig) -> Result<ControlInput> {
    let (s, t) = predict_raw(params, frame)?;
    Ok(postprocess(s, t, cfg))
}

/// Overlay arrow in pixel coordinates (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovementVector {
    pub origin_px: [f64; 2],
    pub endpoint_px: [f64; 2],
}

impl MovementVector {
    pub fn length_px(&self) -> f64 {
        (self.endpoint_px[0] - self.origin_px[0]).hypot(self.endpoint_px[1] - self.origin_px[1])
    }
}

/// Arrow from the bottom-center pixel, tilted right of vertical by
/// `steering × 45°`, of length `0.4 · height · |throttle|`, shortened if it
/// would leave the frame.
pub fn movement_vector(input: ControlInput, camera: &CameraModel) -> MovementVector {
    let (w, h) = (camera.image_width_px as f64, camera.image_height_px as f64);
    let origin = [(w / 2.0).min(w - 1.0).max(0.0), (h - 1.0).max(0.0)];
    let len = OVERLAY_LENGTH_FRACTION * h * input.throttle().abs();
    let angle = input.steering() * OVERLAY_MAX_ANGLE_RAD;
    let (dx, dy) = (len * angle.sin(), -len * angle.cos());
    // Largest fraction of the arrow that stays in [0, w-1] x [0, h-1].
    let mut f: f64 = 1.0;
    let limit = |o: f64, d: f64, hi: f64| {
        if d > 0.0 {
            ((hi - o) / d).max(0.0)
        } else if d < 0.0 {
            (o / -d).max(0.0)
        } else {
            f64::INFINITY
        }
    };
    f = f.min(limit(origin[0], dx, w - 1.0)).min(limit(origin[1], dy, h - 1.0));
    MovementVector {
        origin_px: origin,
        endpoint_px: [origin[0] + f * dx, origin[1] + f * dy],
    }
}

/// Anything that can produce a command each loop step.
pub trait Driver {
    /// Whether [`Driver::command`] needs the camera frame; drivers that
    /// don't can skip rendering.
    fn needs_frame(&self) -> bool {
        true
    }

    fn command(&mut self, state: &VehicleState, frame: Option<&CameraFrame>) -> Result<ControlInput>;
}

/// The trained network as a driver.
pub struct ModelDriver<'a> {
    pub params: &'a ModelParams<f32>,
    pub config: PilotConfig,
}

impl Driver for ModelDriver<'_> {
    fn command(&mut self, _state: &VehicleState, frame: Option<&CameraFrame>) -> Result<ControlInput> {
        let frame = frame.ok_or_else(|| Error::InvalidParam("model driver needs a camera frame".into()))?;
        predict(self.params, frame, &self.config)
    }
}

/// Sim world the loop runs in.
#[derive(Debug, Clone)]
pub struct World<'a> {
    pub track: &'a Track,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopCondition {
    pub max_steps: usize,
    pub on_lap_complete: bool,
    pub on_off_track: bool,
}

impl StopCondition {
    pub fn one_lap(max_steps: usize) -> Self {
        Self {
            max_steps,
            on_lap_complete: true,
            on_off_track: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LapComplete,
    OffTrack,
    MaxSteps,
}

/// One loop step: the observed state and the command issued for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steering: f64,
    pub throttle: f64,
}

impl TraceEntry {
    pub fn state(&self) -> VehicleState {
        VehicleState::new(self.x, self.y, self.heading, self.speed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trace: Vec<TraceEntry>,
    pub stop_reason: StopReason,
    pub dt_s: f64,
}

/// Pose at the start line: first waypoint, facing along the track, at rest.
pub fn start_state(track: &Track) -> VehicleState {
    start_state_at(track, 0.0)
}

pub fn start_state_at(track: &Track, arc_m: f64) -> VehicleState {
    let (p, t) = track.point_at(arc_m);
    VehicleState::new(p[0], p[1], t[1].atan2(t[0]), 0.0)
}

/// Runs the fixed-step loop: observe, command, log, check stop, apply.
///
/// Entry `k` holds the state at `t = k·dt` and the command computed there.
/// When a lap or off-track stop triggers, the triggering state is logged
/// (with the command the driver would have issued) and the loop ends without
/// applying it, so the trace always contains the state that ended the run.
pub fn run_loop(
    world: &World<'_>,
    driver: &mut dyn Driver,
    start: VehicleState,
    cfg: &PilotConfig,
    stop: StopCondition,
) -> Result<Episode> {
    cfg.validate()?;
    let dt = cfg.dt_s();
    let mut state = start;
    let mut progress = ProgressTracker::new(world.track, start.position());
    let mut trace = Vec::with_capacity(stop.max_steps.min(1 << 16));
    let half_lane = world.track.lane_width_m() / 2.0;

    for k in 0..stop.max_steps {
        let frame = driver.needs_frame().then(|| render_camera_frame(world.track, &state, &world.camera));
        let cmd = driver.command(&state, frame.as_ref())?;
        trace.push(TraceEntry {
            step: k,
            x: state.x_m,
            y: state.y_m,
            heading: state.heading_rad,
            speed: state.speed_mps,
            steering: cmd.steering(),
            throttle: cmd.throttle(),
        });
        let obs = progress.update(state.position());
        if k > 0 && stop.on_lap_complete && obs.arc_progress_m >= world.track.centerline_length() {
            return Ok(Episode {
                trace,
                stop_reason: StopReason::LapComplete,
                dt_s: dt,
            });
        }
        if stop.on_off_track && obs.lateral_m.abs() > half_lane {
            return Ok(Episode {
                trace,
                stop_reason: StopReason::OffTrack,
                dt_s: dt,
            });
        }
        state = step(&state, cmd, &world.vehicle, dt)?;
    }
    Ok(Episode {
        trace,
        stop_reason: StopReason::MaxSteps,
        dt_s: dt,
    })
}

pub fn write_trace_jsonl<W: Write>(trace: &[TraceEntry], mut out: W) -> std::io::Result<()> {
    for e in trace {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_trace(trace: &[TraceEntry], path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let f = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    write_trace_jsonl(trace, std::io::BufWriter::new(f)).map_err(|e| Error::io(ctx(), e))
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::dataset(path, format!("trace line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::ArchitectureSpec;
    use approx::assert_relative_eq;

    #[test]
    fn preprocess_extremes() {
        let zero = preprocess(&CameraFrame::filled(160, 120, [0; 3])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let one = preprocess(&CameraFrame::filled(160, 120, [255; 3])).unwrap();
        assert!(one.data().iter().all(|&v| v == 1.0));
        assert_eq!(one.shape(), &[120, 160, 3]);
    }

    #[test]
    fn preprocess_downsize_keeps_corners() {
        let (w, h) = (320, 240);
        let px: Vec<u8> = (0..w * h * 3).map(|i| ((i * 31 + i / 7) % 256) as u8).collect();
        let frame = CameraFrame::new(w, h, px).unwrap();
        let t = preprocess(&frame).unwrap();
        assert_eq!(t.shape(), &[120, 160, 3]);
        for (r, c, sr, sc) in [(0, 0, 0, 0), (0, 159, 0, w - 1), (119, 0, h - 1, 0), (119, 159, h - 1, w - 1)] {
            let src = frame.pixel(sc, sr);
            for (ch, &v) in src.iter().enumerate() {
                let got = t.data()[(r * 160 + c) * 3 + ch];
                assert_relative_eq!(got as f64, v as f64 / 255.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn preprocess_rejects_empty() {
        assert!(preprocess(&CameraFrame::new(0, 0, vec![]).unwrap()).is_err());
    }

    #[test]
    fn zero_params_predicts_trim() {
        let params = ModelParams::zeros(&ArchitectureSpec::linear_pilot());
        let cfg = PilotConfig {
            steering_trim: 0.1,
            ..PilotConfig::default()
        };
        let cmd = predict(&params, &CameraFrame::filled(160, 120, [90; 3]), &cfg).unwrap();
        assert_eq!((cmd.steering(), cmd.throttle()), (0.1, 0.0));
    }

    #[test]
    fn postprocess_clamps_before_trim_and_scale() {
        let cfg = PilotConfig {
            steering_trim: -0.2,
            throttle_scale: 0.5,
            ..PilotConfig::default()
        };
        let c = postprocess(2.0, -3.0, &cfg);
        assert_relative_eq!(c.steering(), 0.8);
        assert_relative_eq!(c.throttle(), -0.5);
        let plain = postprocess(2.0, -3.0, &PilotConfig::default());
        assert_eq!((plain.steering(), plain.throttle()), (1.0, -1.0));
    }

    #[test]
    fn movement_vector_examples() {
        let cam = CameraModel::default();
        let v = movement_vector(ControlInput::new(0.0, 1.0), &cam);
        assert_eq!(v.origin_px, [80.0, 119.0]);
        assert_relative_eq!(v.endpoint_px[0], 80.0);
        assert_relative_eq!(v.endpoint_px[1], 119.0 - 48.0);

        let z = movement_vector(ControlInput::new(0.7, 0.0), &cam);
        assert_eq!(z.endpoint_px, z.origin_px);

        let r = movement_vector(ControlInput::new(1.0, 1.0), &cam);
        let c = 48.0 * std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(r.endpoint_px[0], 80.0 + c, epsilon = 1e-9);
        assert_relative_eq!(r.endpoint_px[1], 119.0 - c, epsilon = 1e-9);
    }

    #[test]
    fn movement_vector_clipped_on_tiny_frame() {
        let cam = CameraModel {
            image_width_px: 4,
            image_height_px: 3,
            ..CameraModel::default()
        };
        let v = movement_vector(ControlInput::new(-1.0, 1.0), &cam);
        assert!((0.0..=3.0).contains(&v.endpoint_px[0]) && (0.0..=2.0).contains(&v.endpoint_px[1]));
    }

    #[test]
    fn pilot_config_bounds() {
        PilotConfig::default().validate().unwrap();
        for bad in [
            PilotConfig { loop_rate_hz: 0.0, ..Default::default() },
            PilotConfig { throttle_scale: 0.0, ..Default::default() },
            PilotConfig { throttle_scale: 1.1, ..Default::default() },
            PilotConfig { steering_trim: 0.3, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn zero_model_stays_at_rest() {
        let track = Track::default_track();
        let params = ModelParams::zeros(&ArchitectureSpec::linear_pilot());
        let world = World {
            track: &track,
            vehicle: VehicleParams::default(),
            camera: CameraModel::default(),
        };
        let mut driver = ModelDriver {
            params: &params,
            config: PilotConfig::default(),
        };
        let start = start_state(&track);
        let ep = run_loop(&world, &mut driver, start, &PilotConfig::default(), StopCondition::one_lap(12)).unwrap();
        assert_eq!(ep.trace.len(), 12);
        assert_eq!(ep.stop_reason, StopReason::MaxSteps);
        assert!(ep.trace.iter().all(|e| e.speed == 0.0 && e.x == start.x_m && e.y == start.y_m));
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let t = vec![TraceEntry {
            step: 3,
            x: 0.1,
            y: -2.5,
            heading: 1.0 / 3.0,
            speed: 1.2,
            steering: -0.25,
            throttle: 0.4,
        }];
        let mut buf = Vec::new();
        write_trace_jsonl(&t, &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let keys: Vec<_> = serde_json::from_str::<serde_json::Value>(line.trim())
            .unwrap()
            .as_object()
            .unwrap()
            .keys()
            .cloned()
            .collect();
        assert_eq!(keys.len(), 7);
        let back: TraceEntry = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, t[0]);
    }
}
