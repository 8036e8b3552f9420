//! Renders the simulated camera at a few poses on the default track and
//! writes them as PPM files.
//!
//! `cargo run --example camera_view -- [out_dir]`

use std::path::PathBuf;

use pilotstack::autopilot::start_state_at;
use pilotstack::camera::{render_camera_frame, CameraModel};
use pilotstack::dataset::encode_ppm;
use pilotstack::track::Track;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "camera_view".into()));
    std::fs::create_dir_all(&out)?;
    let track = Track::default_track();
    let camera = CameraModel::default();
    println!("track: {:.2} m centerline, {} m lane", track.centerline_length(), track.lane_width_m());
    for (i, arc) in [0.0, 3.0, 5.5, 9.5].into_iter().enumerate() {
        let state = start_state_at(&track, arc);
        let proj = track.project(state.position());
        let frame = render_camera_frame(&track, &state, &camera);
        let path = out.join(format!("view_{i}.ppm"));
        std::fs::write(&path, encode_ppm(&frame))?;
        println!(
            "arc {arc:>4.1} m -> pose ({:+.2}, {:+.2}, {:+.2} rad), lateral {:+.3} m, {}",
            state.x_m,
            state.y_m,
            state.heading_rad,
            proj.lateral_m,
            path.display()
        );
    }
    Ok(())
}
