//! Drives the bicycle model around a constant-steering circle and compares
//! the traced radius with `L / tan(delta)`.
//!
//! `cargo run --example kinematics`

use pilotstack::vehicle::{step, steering_to_wheel_angle, turning_radius, ControlInput, VehicleParams, VehicleState};

fn main() -> pilotstack::Result<()> {
    let params = VehicleParams::default();
    let dt = 1e-3;
    println!("steering  radius_m  traced_m  closure_err_m");
    for steering in [0.25, 0.5, 1.0] {
        let input = ControlInput::new(steering, 0.0);
        let delta = steering_to_wheel_angle(input, &params);
        let radius = turning_radius(delta, &params).expect("nonzero angle");
        // Start at speed with zero throttle and a huge time constant so the
        // speed stays constant over the circle.
        let slow_motor = VehicleParams { motor_time_constant_s: 1e12, ..params };
        let speed = 1.0;
        let mut s = VehicleState::new(0.0, 0.0, 0.0, speed);
        let steps = (2.0 * std::f64::consts::PI * radius / (speed * dt)).round() as usize;
        let (mut min_y, mut max_y) = (0.0f64, 0.0f64);
        for _ in 0..steps {
            s = step(&s, input, &slow_motor, dt)?;
            min_y = min_y.min(s.y_m);
            max_y = max_y.max(s.y_m);
        }
        let closure = s.x_m.hypot(s.y_m);
        println!("{steering:>8.2}  {radius:>8.4}  {:>8.4}  {closure:>13.5}", (max_y - min_y) / 2.0);
    }
    Ok(())
}
