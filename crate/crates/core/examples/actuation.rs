//! Maps normalized commands to PCA9685 duty ticks and H-bridge settings,
//! and logs the resulting bus writes.
//!
//! `cargo run --example actuation`

use pilotstack::actuation::{steering_to_pulse_us, throttle_to_hbridge, MockBus, ServoConfig};
use pilotstack::vehicle::ControlInput;

fn main() -> pilotstack::Result<()> {
    let servo = ServoConfig::default();
    servo.validate()?;
    println!("input   pulse_us  servo_ticks  motor  motor_ticks");
    let mut bus = MockBus::new();
    for v in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        bus.apply(ControlInput::new(v, v), &servo)?;
        let w = bus.writes();
        let (s, m) = (w[w.len() - 2], w[w.len() - 1]);
        println!(
            "{v:>5.1}  {:>8.0}  {:>11}  {:<7}{:>6}",
            steering_to_pulse_us(v, &servo),
            s.duty_ticks,
            format!("{:?}", throttle_to_hbridge(v).direction),
            m.duty_ticks
        );
    }
    println!("\nbus log:");
    bus.dump_jsonl(std::io::stdout().lock()).expect("stdout");
    Ok(())
}
