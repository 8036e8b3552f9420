//! Records a short expert session, reloads it and shows the deterministic
//! split and batching.
//!
//! `cargo run --example dataset -- [samples] [seed]`

use pilotstack::camera::CameraModel;
use pilotstack::dataset::{iterate_batches, load_session, read_manifest, split_train_val};
use pilotstack::eval::{synthesize_dataset, SynthConfig};
use pilotstack::track::Track;
use pilotstack::vehicle::VehicleParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let samples = args.next().map(|a| a.parse()).transpose()?.unwrap_or(200);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(42);
    let dir = tempfile::tempdir()?;
    let session = dir.path().join("session");
    let cfg = SynthConfig { n_samples: samples, seed, ..SynthConfig::default() };
    let report = synthesize_dataset(&Track::default_track(), &VehicleParams::default(), &CameraModel::default(), &cfg, &session)?;
    println!("{report:?}");
    println!("manifest: {}", serde_json::to_string(&read_manifest(&session)?)?);

    let data = load_session(&session)?;
    let (train, val) = split_train_val(&data, 0.2, seed)?;
    println!("{} records -> {} train / {} val", data.len(), train.len(), val.len());
    for (k, batch) in iterate_batches(&train, 64, seed, 0).enumerate() {
        println!("epoch 0 batch {k}: {} samples, images {:?}", batch.indices.len(), batch.images.shape());
    }
    Ok(())
}
