//! Trains the pilot network on a small expert dataset, saves the
//! checkpoint and loss history, and reloads it.
//!
//! `cargo run --release --example train_small -- [samples] [epochs] [out_dir]`

use std::path::PathBuf;

use pilotstack::camera::CameraModel;
use pilotstack::dataset::load_session;
use pilotstack::eval::{synthesize_dataset, SynthConfig};
use pilotstack::nn::train::{save_history_csv, train_with, TrainConfig};
use pilotstack::nn::{load_params, save_params};
use pilotstack::track::Track;
use pilotstack::vehicle::VehicleParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let samples = args.next().map(|a| a.parse()).transpose()?.unwrap_or(300);
    let epochs = args.next().map(|a| a.parse()).transpose()?.unwrap_or(5);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "train_small".into()));
    std::fs::create_dir_all(&out)?;

    let session = out.join("session");
    if !session.exists() {
        let cfg = SynthConfig { n_samples: samples, seed: 1, ..SynthConfig::default() };
        synthesize_dataset(&Track::default_track(), &VehicleParams::default(), &CameraModel::default(), &cfg, &session)?;
    }
    let data = load_session(&session)?;
    let cfg = TrainConfig { epochs, seed: 1, ..TrainConfig::default() };
    let outcome = train_with(&data, &cfg, |e| println!("epoch {:>3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss))?;

    let ckpt = out.join("model.acpm");
    save_params(&outcome.params, &ckpt)?;
    save_history_csv(&outcome.history, &out.join("model.csv"))?;
    let back = load_params(&ckpt)?;
    assert_eq!(back, outcome.params);
    println!(
        "best epoch {}; {} parameters; {} bytes at {}",
        outcome.best_epoch,
        back.arch.param_count(),
        std::fs::metadata(&ckpt)?.len(),
        ckpt.display()
    );
    Ok(())
}
