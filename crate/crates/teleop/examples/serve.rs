//! Runs the teleoperation service for a fixed time, then reports the final
//! state and any recording. Open the printed URL in a browser to drive.
//!
//! `cargo run --example serve -- [seconds] [bind_addr]`

use std::time::Duration;

use pilotstack::autopilot::{start_state, PilotConfig};
use pilotstack::camera::CameraModel;
use pilotstack::track::Track;
use pilotstack::vehicle::VehicleParams;
use pilotstack_teleop::{bind, serve, Sim, SimConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seconds: f64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(10.0);
    let addr = args.next().unwrap_or_else(|| "127.0.0.1:8887".into());
    let data = tempfile::tempdir()?;
    let track = Track::default_track();
    let start = start_state(&track);
    let sim = Sim::new(SimConfig {
        track,
        vehicle: VehicleParams::default(),
        camera: CameraModel::default(),
        pilot: PilotConfig::default(),
        model: None,
        data_dir: data.path().to_path_buf(),
        start,
    })?;
    let handle = serve(sim, 20.0, bind(&addr).await?)?;
    println!("open http://{} (ws subprotocol pilotstack.v1); stopping in {seconds} s", handle.local_addr());
    tokio::time::sleep(Duration::from_secs_f64(seconds)).await;
    let sim = handle.shutdown().await?;
    println!("simulated {} steps; final state {:?}", sim.steps(), sim.state());
    match sim.last_session() {
        Some(id) => println!("last recording: {}", sim.session_dir(id).display()),
        None => println!("nothing was recorded"),
    }
    Ok(())
}
