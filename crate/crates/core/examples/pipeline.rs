//! End-to-end: synthesize expert data, train, drive one lap with the model.
//!
//! `cargo run --release --example pipeline -- [samples] [epochs] [seed]`

use std::time::Instant;

use pilotstack::autopilot::{run_loop, start_state, ModelDriver, PilotConfig, StopCondition, World};
use pilotstack::camera::CameraModel;
use pilotstack::dataset::load_session;
use pilotstack::eval::{score_episode, synthesize_dataset, SynthConfig};
use pilotstack::nn::train::{train_with, TrainConfig};
use pilotstack::track::Track;
use pilotstack::vehicle::VehicleParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let samples = args.first().copied().unwrap_or(1500) as usize;
    let epochs = args.get(1).copied().unwrap_or(60) as usize;
    let seed = args.get(2).copied().unwrap_or(42);

    let track = Track::default_track();
    let vehicle = VehicleParams::default();
    let camera = CameraModel::default();
    let dir = tempfile::tempdir()?;
    let session = dir.path().join("session");

    let t = Instant::now();
    let synth = SynthConfig { n_samples: samples, seed, ..SynthConfig::default() };
    let report = synthesize_dataset(&track, &vehicle, &camera, &synth, &session)?;
    println!("synth: {report:?} in {:.1?}", t.elapsed());

    let data = load_session(&session)?;
    let cfg = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let t = Instant::now();
    let out = train_with(&data, &cfg, |e| {
        println!("epoch {:>2}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss);
    })?;
    println!("trained in {:.1?}, best epoch {}", t.elapsed(), out.best_epoch);

    let world = World { track: &track, vehicle, camera };
    let pilot = PilotConfig::default();
    let mut driver = ModelDriver { params: &out.params, config: pilot };
    let ep = run_loop(&world, &mut driver, start_state(&track), &pilot, StopCondition::one_lap(600))?;
    let m = score_episode(&ep.trace, &track, ep.dt_s);
    println!("stop: {:?}\n{}", ep.stop_reason, serde_json::to_string_pretty(&m)?);
    Ok(())
}
