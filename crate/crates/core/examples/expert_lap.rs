//! Runs the pure-pursuit expert for one lap and prints the lap metrics.
//!
//! `cargo run --example expert_lap -- [lookahead_m]`

use pilotstack::autopilot::{run_loop, start_state, PilotConfig, StopCondition, World};
use pilotstack::camera::CameraModel;
use pilotstack::eval::{score_episode, ExpertDriver, DEFAULT_LOOKAHEAD_M};
use pilotstack::track::Track;
use pilotstack::vehicle::VehicleParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lookahead_m = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(DEFAULT_LOOKAHEAD_M);
    let track = Track::default_track();
    let world = World { track: &track, vehicle: VehicleParams::default(), camera: CameraModel::default() };
    let mut expert = ExpertDriver { track: &track, params: world.vehicle, lookahead_m };
    let pilot = PilotConfig::default();
    let ep = run_loop(&world, &mut expert, start_state(&track), &pilot, StopCondition::one_lap(2000))?;
    let m = score_episode(&ep.trace, &track, ep.dt_s);
    println!("stop: {:?} after {} steps", ep.stop_reason, ep.trace.len());
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}
