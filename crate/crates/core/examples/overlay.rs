//! Prints the movement-vector overlay for a sweep of commands, the arrow the
//! monitor draws over the camera frame.
//!
//! `cargo run --example overlay`

use pilotstack::autopilot::movement_vector;
use pilotstack::camera::CameraModel;
use pilotstack::vehicle::ControlInput;

fn main() {
    let camera = CameraModel::default();
    println!("steering throttle  origin        endpoint        length_px");
    for (s, t) in [(0.0, 0.5), (1.0, 1.0), (-1.0, 1.0), (0.5, 0.3), (0.0, 0.0)] {
        let v = movement_vector(ControlInput::new(s, t), &camera);
        println!(
            "{s:>8.1} {t:>8.1}  ({:>5.1}, {:>5.1})  ({:>6.1}, {:>6.1})  {:>9.2}",
            v.origin_px[0],
            v.origin_px[1],
            v.endpoint_px[0],
            v.endpoint_px[1],
            v.length_px()
        );
    }
}
