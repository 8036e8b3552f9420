//! Synthetic forward camera: flat-ground inverse-perspective ray casting
//! against the track surface.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::Track;
use crate::vehicle::VehicleState;

/// Width of the painted band at each lane edge.
pub const LINE_BAND_M: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    pub image_width_px: usize,
    pub image_height_px: usize,
    pub horizontal_fov_rad: f64,
    pub mount_height_m: f64,
    pub pitch_down_rad: f64,
    /// Camera position ahead of the rear axle.
    pub forward_offset_m: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            image_width_px: 160,
            image_height_px: 120,
            horizontal_fov_rad: 60f64.to_radians(),
            mount_height_m: 0.12,
            pitch_down_rad: 15f64.to_radians(),
            forward_offset_m: 0.10,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.image_width_px > 0
            && self.image_height_px > 0
            && self.horizontal_fov_rad > 0.0
            && self.horizontal_fov_rad < PI
            && self.mount_height_m > 0.0
            && self.pitch_down_rad >= 0.0
            && self.pitch_down_rad < PI / 2.0
            && self.forward_offset_m.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("camera: invalid model {self:?}")))
        }
    }
}

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl CameraFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let o = (row * self.width + col) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }
}

/// Renders what the camera sees from `state`.
///
/// Each pixel's ray is intersected with the ground plane; hits are coloured
/// by their distance to the centerline, misses (rays at or above the
/// horizon) get the sky colour.
pub fn render_camera_frame(track: &Track, state: &VehicleState, camera: &CameraModel) -> CameraFrame {
    let (w, h) = (camera.image_width_px, camera.image_height_px);
    let colors = *track.colors();
    let half_lane = track.lane_width_m() / 2.0;
    let track_edge = half_lane - LINE_BAND_M;

    let (sin_h, cos_h) = state.heading_rad.sin_cos();
    let (sin_p, cos_p) = camera.pitch_down_rad.sin_cos();
    let cam = [
        state.x_m + camera.forward_offset_m * cos_h,
        state.y_m + camera.forward_offset_m * sin_h,
    ];
    // Optical axis, image-right and image-up directions in the world frame.
    let fwd = [cos_h * cos_p, sin_h * cos_p, -sin_p];
    let right = [sin_h, -cos_h, 0.0];
    let up = [cos_h * sin_p, sin_h * sin_p, cos_p];
    let focal = (w as f64 / 2.0) / (camera.horizontal_fov_rad / 2.0).tan();

    let mut pixels = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        let yn = (row as f64 + 0.5 - h as f64 / 2.0) / focal;
        let base = [fwd[0] - yn * up[0], fwd[1] - yn * up[1], fwd[2] - yn * up[2]];
        for col in 0..w {
            let xn = (col as f64 + 0.5 - w as f64 / 2.0) / focal;
            let dz = base[2];
            let rgb = if dz >= 0.0 {
                colors.sky_color
            } else {
                let t = camera.mount_height_m / -dz;
                let p = [
                    cam[0] + t * (base[0] + xn * right[0]),
                    cam[1] + t * (base[1] + xn * right[1]),
                ];
                match track.near_distance(p) {
                    Some(d) if d < track_edge => colors.track_color,
                    Some(d) if d <= half_lane => colors.line_color,
                    _ => colors.offtrack_color,
                }
            };
            pixels.extend_from_slice(&rgb);
        }
    }
    CameraFrame {
        width: w,
        height: h,
        pixels,
    }
}
