//! Subcommand implementations. Each takes the loaded config plus its flags.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use pilotstack::autopilot::{run_loop, save_trace, start_state_at, Episode, ModelDriver, StopCondition, World};
use pilotstack::dataset::load_sessions;
use pilotstack::eval::{score_episode, synthesize_dataset, LapMetrics};
use pilotstack::nn::train::{save_history_csv, train_with};
use pilotstack::nn::{load_params, save_params, ModelParams};
use pilotstack::track::Track;
use pilotstack::vehicle::check_fira_constraints;
use pilotstack_teleop::{bind, serve, Sim, SimConfig};

use crate::{history_path, trace_path, AppConfig, AutopilotArgs, CliError, DriveArgs, EpisodeArgs, EvalArgs, SynthArgs, TrainArgs};

type Out<'a> = &'a mut dyn Write;

fn say(out: Out<'_>, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text).map_err(|e| CliError::io("writing output", e))?;
    out.write_all(b"\n").map_err(|e| CliError::io("writing output", e))
}

macro_rules! say {
    ($out:expr, $($t:tt)*) => { say($out, format_args!($($t)*)) };
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| CliError::io(format!("creating {}", p.display()), e))
        }
        _ => Ok(()),
    }
}

pub fn check(cfg: &AppConfig, out: Out<'_>) -> Result<(), CliError> {
    cfg.validate()?;
    cfg.load_track()?;
    say!(out, "config: OK")?;
    let report = check_fira_constraints(&cfg.vehicle);
    if report.passed() {
        say!(out, "FIRA constraints: PASS")?;
        return Ok(());
    }
    say!(out, "FIRA constraints: FAIL")?;
    for v in &report.violations {
        say!(out, "  {} {} mm exceeds {} mm", v.dimension, v.value_mm, v.limit_mm)?;
    }
    Err(CliError::Failed(format!("{} FIRA dimension limit(s) exceeded", report.violations.len())))
}

pub fn synth(mut cfg: AppConfig, args: &SynthArgs, out: Out<'_>) -> Result<(), CliError> {
    if let Some(n) = args.samples {
        cfg.synth.n_samples = n;
    }
    if let Some(s) = args.seed {
        cfg.synth.seed = s;
    }
    if let Some(x) = args.noise {
        cfg.synth.noise_level = x;
    }
    cfg.validate()?;
    let track = cfg.load_track()?;
    let report = synthesize_dataset(&track, &cfg.vehicle, &cfg.camera, &cfg.synth, &args.out)?;
    say!(
        out,
        "wrote {} records in {} episodes ({} off-track restarts) to {}",
        report.records,
        report.episodes,
        report.restarts,
        args.out.display()
    )
}

pub fn train(mut cfg: AppConfig, args: &TrainArgs, out: Out<'_>) -> Result<(), CliError> {
    let t = &mut cfg.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.seed = args.seed.unwrap_or(t.seed);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = args.learning_rate.unwrap_or(t.learning_rate);
    cfg.validate()?;

    let data = load_sessions(&args.data)?;
    say!(out, "training on {} records from {} session(s)", data.len(), data.sessions.len())?;
    let epochs = cfg.train.epochs;
    let outcome = train_with(&data, &cfg.train, |e| {
        let _ = writeln!(
            out,
            "epoch {:>3}/{epochs}  train {:.6}  val {:.6}",
            e.epoch, e.train_loss, e.val_loss
        );
    })?;

    ensure_parent(&args.out)?;
    save_params(&outcome.params, &args.out)?;
    let csv = history_path(&args.out);
    save_history_csv(&outcome.history, &csv)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    say!(
        out,
        "kept epoch {} (val {:.6}); wrote {} and {}",
        best.epoch,
        best.val_loss,
        args.out.display(),
        csv.display()
    )
}

fn drive_episodes(cfg: &AppConfig, track: &Track, model: &ModelParams<f32>, args: &EpisodeArgs) -> Result<Vec<Episode>, CliError> {
    if args.episodes < 1 {
        return Err(CliError::Core(pilotstack::Error::InvalidParam("--episodes must be >= 1".into())));
    }
    if !(args.max_seconds > 0.0 && args.max_seconds.is_finite()) {
        return Err(CliError::Core(pilotstack::Error::InvalidParam("--max-seconds must be > 0".into())));
    }
    let mut pilot = cfg.pilot;
    pilot.throttle_scale = args.throttle_scale.unwrap_or(pilot.throttle_scale);
    pilot.validate()?;
    let world = World {
        track,
        vehicle: cfg.vehicle,
        camera: cfg.camera,
    };
    let max_steps = (args.max_seconds * pilot.loop_rate_hz).ceil() as usize;
    let spacing = track.centerline_length() / args.episodes as f64;
    (0..args.episodes)
        .map(|k| {
            let mut driver = ModelDriver {
                params: model,
                config: pilot,
            };
            let start = start_state_at(track, k as f64 * spacing);
            Ok(run_loop(&world, &mut driver, start, &pilot, StopCondition::one_lap(max_steps))?)
        })
        .collect()
}

pub fn autopilot(cfg: AppConfig, args: &AutopilotArgs, out: Out<'_>) -> Result<(), CliError> {
    cfg.validate()?;
    let track = cfg.load_track()?;
    let model = load_params(&args.model)?;
    let episodes = drive_episodes(&cfg, &track, &model, &args.episode)?;
    ensure_parent(&args.out)?;
    for (k, ep) in episodes.iter().enumerate() {
        let path = trace_path(&args.out, k, episodes.len());
        save_trace(&ep.trace, &path)?;
        say!(
            out,
            "episode {k}: {} after {} steps -> {}",
            serde_json::to_value(ep.stop_reason).map_err(pilotstack::Error::from)?.as_str().unwrap_or("?"),
            ep.trace.len(),
            path.display()
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    episode: usize,
    #[serde(flatten)]
    metrics: LapMetrics,
}

pub fn eval(cfg: AppConfig, args: &EvalArgs, out: Out<'_>) -> Result<(), CliError> {
    cfg.validate()?;
    let track = cfg.load_track()?;
    let metrics: Vec<LapMetrics> = match (&args.trace, &args.model) {
        (Some(path), _) => {
            let trace = pilotstack::autopilot::load_trace(path)?;
            vec![score_episode(&trace, &track, cfg.pilot.dt_s())]
        }
        (None, Some(path)) => {
            let model = load_params(path)?;
            drive_episodes(&cfg, &track, &model, &args.episode)?
                .iter()
                .map(|ep| score_episode(&ep.trace, &track, ep.dt_s))
                .collect()
        }
        (None, None) => unreachable!("clap requires --trace or --model"),
    };
    let rows: Vec<EvalRow> = metrics.into_iter().enumerate().map(|(episode, metrics)| EvalRow { episode, metrics }).collect();
    let json = serde_json::to_string_pretty(&rows).map_err(pilotstack::Error::from)?;
    say!(out, "{json}")?;
    if args.json {
        return Ok(());
    }
    say!(out, "")?;
    say!(
        out,
        "{:<8} {:<9} {:>10} {:>10} {:>9} {:>8} {:>10}",
        "episode",
        "completed",
        "lap_time_s",
        "distance_m",
        "avg_mps",
        "offtrack",
        "max_lat_m"
    )?;
    for r in &rows {
        let m = &r.metrics;
        say!(
            out,
            "{:<8} {:<9} {:>10.2} {:>10.2} {:>9.3} {:>8} {:>10.3}",
            r.episode,
            if m.completed { "yes" } else { "no" },
            m.lap_time_s,
            m.distance_m,
            m.avg_speed_mps,
            m.offtrack_events,
            m.max_lateral_offset_m
        )?;
    }
    Ok(())
}

/// Counts of `values` in `bins` equal-width bins over [-1, 1].
pub fn histogram(values: impl Iterator<Item = f64>, bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for v in values {
        let b = (((v + 1.0) / 2.0) * bins as f64).floor() as isize;
        h[b.clamp(0, bins as isize - 1) as usize] += 1;
    }
    h
}

#[derive(Serialize)]
struct LabelStats {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    /// Ten equal bins over [-1, 1].
    histogram: Vec<usize>,
}

impl LabelStats {
    fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            histogram: histogram(values.iter().copied(), 10),
        }
    }
}

#[derive(Serialize)]
struct DatasetStats {
    records: usize,
    sessions: Vec<String>,
    image_width: usize,
    image_height: usize,
    steering: LabelStats,
    throttle: LabelStats,
    integrity: &'static str,
}

pub fn dataset_stats(dirs: &[PathBuf], json: bool, out: Out<'_>) -> Result<(), CliError> {
    // Loading decodes every image and checks it against the manifest.
    let data = load_sessions(dirs)?;
    let steer: Vec<f64> = data.samples.iter().map(|s| s.steering).collect();
    let thr: Vec<f64> = data.samples.iter().map(|s| s.throttle).collect();
    let stats = DatasetStats {
        records: data.len(),
        sessions: data.sessions.clone(),
        image_width: data.width,
        image_height: data.height,
        steering: LabelStats::of(&steer),
        throttle: LabelStats::of(&thr),
        integrity: "ok",
    };
    if json {
        let text = serde_json::to_string_pretty(&stats).map_err(pilotstack::Error::from)?;
        return say!(out, "{text}");
    }
    say!(out, "records: {}", stats.records)?;
    say!(out, "sessions: {}", stats.sessions.len())?;
    say!(out, "image: {}x{}", stats.image_width, stats.image_height)?;
    for (name, s) in [("steering", &stats.steering), ("throttle", &stats.throttle)] {
        say!(out, "{name}: mean {:+.3} std {:.3} range [{:+.3}, {:+.3}]", s.mean, s.std, s.min, s.max)?;
        let peak = s.histogram.iter().copied().max().unwrap_or(0).max(1);
        for (i, &c) in s.histogram.iter().enumerate() {
            let lo = -1.0 + 0.2 * i as f64;
            let bar = "#".repeat((c * 40).div_ceil(peak));
            say!(out, "  [{lo:+.1}, {:+.1}) {c:>6} {bar}", lo + 0.2)?;
        }
    }
    say!(out, "integrity: OK")
}

pub fn drive(cfg: AppConfig, args: &DriveArgs, out: Out<'_>) -> Result<(), CliError> {
    cfg.validate()?;
    let track = cfg.load_track()?;
    let model = args.model.as_deref().map(load_params).transpose()?;
    let autopilot = model.is_some();
    let start = pilotstack::autopilot::start_state(&track);
    let sim = Sim::new(SimConfig {
        track,
        vehicle: cfg.vehicle,
        camera: cfg.camera,
        pilot: cfg.pilot,
        model,
        data_dir: args.data_dir.clone(),
        start,
    })?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("starting runtime", e))?;
    let sim = rt.block_on(async {
        let listener = bind(&args.bind).await?;
        let handle = serve(sim, cfg.pilot.loop_rate_hz, listener)?;
        say!(
            out,
            "serving http://{} in {} mode; recordings go to {}; Ctrl-C stops",
            handle.local_addr(),
            if autopilot { "autopilot" } else { "human" },
            args.data_dir.display()
        )?;
        let _ = out.flush();
        tokio::signal::ctrl_c().await.map_err(|e| CliError::io("waiting for Ctrl-C", e))?;
        Ok::<Sim, CliError>(handle.shutdown().await?)
    })?;
    if let Some(id) = sim.last_session() {
        say!(out, "last session: {}", sim.session_dir(id).display())?;
    }
    Ok(())
}
