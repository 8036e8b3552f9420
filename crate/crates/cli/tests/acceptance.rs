//! Acceptance report: prints one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). It always exits 0 so the
//! report is produced in full; set `PILOTSTACK_ACCEPTANCE_STRICT=1` to exit
//! 1 when any criterion fails. The end-to-end criteria run the full 1500
//! sample, 60 epoch pipeline twice and take most of the runtime.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use pilotstack::actuation::{control_to_bus_writes, throttle_to_hbridge, Direction, ServoConfig};
use pilotstack::camera::CameraModel;
use pilotstack::dataset::{iterate_batches, load_session, read_records, split_indices, SessionConfig, SessionWriter};
use pilotstack::eval::{synthesize_dataset, SynthConfig};
use pilotstack::nn::arch::{ArchitectureSpec, LayerSpec};
use pilotstack::nn::{save_params, ModelParams, Mode};
use pilotstack::track::Track;
use pilotstack::vehicle::{check_fira_constraints, step, ControlInput, VehicleParams, VehicleState};

type Verdict = Result<String, String>;

struct Report {
    passed: usize,
    failed: usize,
}

impl Report {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Verdict) {
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        println!(
            "{} {name} [{:.1} s]: {detail}",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_oracle() -> Verdict {
    let t = Instant::now();
    let mut checks = oracles::all_gradient_checks(24, 2024);
    checks.push(oracles::full_model_gradient(Mode::Infer, oracles::FD_EPS, 20, 11));
    let elapsed = t.elapsed();
    let all = checks.iter().all(|c| c.passed() && c.instances >= 20);
    let detail = checks.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
    verdict(all && elapsed < Duration::from_secs(60), detail)
}

fn conv_oracle() -> Verdict {
    let t = Instant::now();
    let check = oracles::conv_oracle(50, 7);
    verdict(check.passed() && t.elapsed() < Duration::from_secs(60), check.to_string())
}

/// Parameter count from the layer list alone, tracking shapes by hand.
fn count_params_by_hand(layers: &[LayerSpec]) -> (usize, Vec<String>) {
    let mut shape: Vec<usize> = Vec::new();
    let mut trunk = 0;
    let mut total = 0;
    let mut chain = Vec::new();
    for l in layers {
        match *l {
            LayerSpec::Input { height, width, channels } => shape = vec![height, width, channels],
            LayerSpec::Conv { filters, kernel_h, kernel_w, stride, .. } => {
                total += (kernel_h * kernel_w * shape[2] + 1) * filters;
                shape = vec![(shape[0] - kernel_h) / stride + 1, (shape[1] - kernel_w) / stride + 1, filters];
            }
            LayerSpec::Flatten => shape = vec![shape.iter().product()],
            LayerSpec::Dense { units, .. } => {
                total += (shape[0] + 1) * units;
                shape = vec![units];
                trunk = units;
            }
            LayerSpec::OutputDense { units, .. } => {
                total += (trunk + 1) * units;
                chain.push(format!("head {units}"));
                continue;
            }
            LayerSpec::Dropout { .. } => continue,
        }
        chain.push(shape.iter().map(ToString::to_string).collect::<Vec<_>>().join("x"));
    }
    (total, chain)
}

fn shape_audit() -> Verdict {
    let arch = ArchitectureSpec::linear_pilot();
    let expected_chain = [
        "120x160x3", "58x78x24", "27x37x32", "12x17x64", "10x15x64", "8x13x64", "6656", "100", "50", "head 1", "head 1",
    ];
    let (by_hand, chain) = count_params_by_hand(arch.layers());
    if chain != expected_chain {
        return Err(format!("shape chain {chain:?}"));
    }
    if arch.flatten_width() != Some(6656) {
        return Err(format!("flatten width {:?}", arch.flatten_width()));
    }
    if arch.param_count() != by_hand {
        return Err(format!("library count {} != hand count {by_hand}", arch.param_count()));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("init.acpm");
    let params = ModelParams::<f32>::init(&arch, 1);
    save_params(&params, &path).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let payload = 4 * by_hand;
    let header = bytes.len().checked_sub(payload).ok_or("checkpoint shorter than payload")?;
    // The payload must be exactly the parameters, little-endian, in order.
    let values: Vec<f32> = params.tensors().flat_map(|t| t.data().to_vec()).collect();
    let tail_ok = values.len() == by_hand
        && bytes[header..].chunks_exact(4).zip(&values).all(|(b, v)| b == v.to_le_bytes());
    verdict(
        tail_ok && header == pilotstack::nn::checkpoint::header_len(&arch),
        format!(
            "chain {} ; flatten 6656 ; {by_hand} params by hand ; checkpoint {} bytes = {header} header + {payload} payload",
            chain.join(" -> "),
            bytes.len()
        ),
    )
}

fn kinematics() -> Verdict {
    let params = VehicleParams::default();
    let dt = 1e-3;
    // Throttle 1/3 of a 3 m/s top speed holds the vehicle at 1 m/s.
    let speed = 1.0;
    let mut details = Vec::new();
    let mut ok = true;
    for steering in [0.25, 0.5, 1.0] {
        let delta: f64 = steering * params.max_wheel_angle_rad;
        let r = params.wheelbase_m / delta.tan();
        // Positive steering turns right: from the origin heading +x the
        // circle's center is at (0, -R).
        let input = ControlInput::new(steering, 1.0 / 3.0);
        let mut s = VehicleState::new(0.0, 0.0, 0.0, speed);
        let steps = (2.0 * std::f64::consts::PI * r / (speed * dt)).round() as usize;
        let mut worst_radius: f64 = 0.0;
        for _ in 0..steps {
            s = step(&s, input, &params, dt).map_err(|e| e.to_string())?;
            worst_radius = worst_radius.max(((s.x_m).hypot(s.y_m + r) - r).abs());
        }
        let closure = s.x_m.hypot(s.y_m);
        ok &= closure < 0.01 * r && worst_radius < 0.01 * r;
        details.push(format!(
            "delta {delta:.3} rad R {r:.4} m: closure {:.3}% radius err {:.3}%",
            100.0 * closure / r,
            100.0 * worst_radius / r
        ));
    }
    verdict(ok, details.join("; "))
}

fn actuation() -> Verdict {
    // 50 Hz, 1000/1500/2000 us: ticks = round(pulse / 20000 * 4096).
    // 1000 -> 204.8, 1250 -> 256.0, 1500 -> 307.2, 1750 -> 358.4, 2000 -> 409.6.
    // Motor: round(|t| * 4095): 4095, 2047.5 -> 2048, 0.
    let expected = [
        (-1.0, 205, Direction::Reverse, 4095),
        (-0.5, 256, Direction::Reverse, 2048),
        (0.0, 307, Direction::Brake, 0),
        (0.5, 358, Direction::Forward, 2048),
        (1.0, 410, Direction::Forward, 4095),
    ];
    let servo = ServoConfig::default();
    let mut rows = Vec::new();
    for (v, servo_ticks, dir, motor_ticks) in expected {
        let writes = control_to_bus_writes(ControlInput::new(v, v), &servo, servo.motor_channel).map_err(|e| e.to_string())?;
        let hb = throttle_to_hbridge(v);
        let got = (writes[0].channel, writes[0].duty_ticks, hb.direction, writes[1].channel, writes[1].duty_ticks);
        let want = (servo.channel, servo_ticks, dir, servo.motor_channel, motor_ticks);
        if got != want {
            return Err(format!("input {v}: got {got:?}, expected {want:?}"));
        }
        rows.push(format!("{v:+}->({servo_ticks},{dir:?} {motor_ticks})"));
    }
    let quarter = throttle_to_hbridge(-0.25);
    if (quarter.direction, quarter.duty_ticks) != (Direction::Reverse, 1024) {
        return Err(format!("throttle -0.25: {quarter:?}"));
    }
    rows.push("-0.25->(Reverse 1024)".into());
    Ok(rows.join(" "))
}

fn dataset_round_trip() -> Verdict {
    let e = |e: pilotstack::Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let camera = CameraModel::default();
    let cfg = SynthConfig {
        n_samples: 1500,
        seed: 42,
        ..SynthConfig::default()
    };
    synthesize_dataset(&Track::default_track(), &VehicleParams::default(), &camera, &cfg, &a).map_err(e)?;
    let loaded = load_session(&a).map_err(e)?;
    if loaded.len() != 1500 {
        return Err(format!("{} records", loaded.len()));
    }
    let (_, records) = read_records(&a).map_err(e)?;
    let mut w = SessionWriter::create(&b, SessionConfig::new(loaded.width, loaded.height, "synthetic")).map_err(e)?;
    for (s, r) in loaded.samples.iter().zip(&records) {
        let frame = pilotstack::camera::CameraFrame::new(loaded.width, loaded.height, s.image.to_vec()).map_err(e)?;
        w.append(&frame, ControlInput::new(s.steering, s.throttle), r.ts_ms).map_err(e)?;
    }
    w.close().map_err(e)?;
    let same_file = |name: &str| std::fs::read(a.join(name)).ok() == std::fs::read(b.join(name)).ok();
    let catalog_same = same_file(pilotstack::dataset::RECORDS_FILE);
    let images_same = records.iter().all(|r| same_file(&r.image));
    let reloaded = load_session(&b).map_err(e)?;
    let samples_same = reloaded.samples == loaded.samples;

    let split1 = split_indices(1500, 0.2, 42).map_err(e)?;
    let split2 = split_indices(1500, 0.2, 42).map_err(e)?;
    let idx = |epoch| iterate_batches(&loaded, 64, 42, epoch).map(|b| b.indices).collect::<Vec<_>>();
    let batches_det = idx(0) == idx(0) && idx(1) == idx(1) && idx(0) != idx(1);
    verdict(
        catalog_same && images_same && samples_same && split1 == split2 && batches_det,
        format!(
            "1500 records; catalog identical {catalog_same}; images identical {images_same}; decoded samples identical {samples_same}; split deterministic {}; batches deterministic {batches_det}",
            split1 == split2
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pilotstack"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`pilotstack {}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

struct PipelineRun {
    dir: PathBuf,
    elapsed: Duration,
    epoch1_val: f64,
    final_val: f64,
    last_val: f64,
    metrics: serde_json::Value,
}

/// synth -> train -> autopilot -> eval through the command-line tool.
fn pipeline(dir: PathBuf) -> Result<PipelineRun, String> {
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let t = Instant::now();
    cli(&dir, &["synth", "--samples", "1500", "--seed", "42", "--out", "data"])?;
    cli(&dir, &["train", "--data", "data", "--epochs", "60", "--seed", "42", "--out", "model.acpm"])?;
    cli(&dir, &["autopilot", "--model", "model.acpm", "--episodes", "1", "--out", "trace.jsonl"])?;
    let elapsed = t.elapsed();
    let report = cli(&dir, &["eval", "--trace", "trace.jsonl", "--json"])?;
    let rows: serde_json::Value = serde_json::from_str(&report).map_err(|e| e.to_string())?;

    let csv = std::fs::read_to_string(dir.join("model.csv")).map_err(|e| e.to_string())?;
    let vals: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).and_then(|v| v.parse().ok()).ok_or(format!("bad csv line {l:?}")))
        .collect::<Result<_, _>>()?;
    if vals.len() != 60 {
        return Err(format!("{} epochs in history", vals.len()));
    }
    Ok(PipelineRun {
        dir,
        elapsed,
        epoch1_val: vals[0],
        // The returned checkpoint is the lowest-validation epoch.
        final_val: vals.iter().copied().fold(f64::INFINITY, f64::min),
        last_val: vals[59],
        metrics: rows[0].clone(),
    })
}

fn end_to_end(run: &Result<PipelineRun, String>) -> Verdict {
    let r = run.as_ref().map_err(Clone::clone)?;
    let m = &r.metrics;
    let completed = m["completed"].as_bool() == Some(true);
    let offtrack = m["offtrack_events"].as_u64().unwrap_or(u64::MAX);
    let speed = m["avg_speed_mps"].as_f64().unwrap_or(0.0);
    let ratio = r.final_val / r.epoch1_val;
    let within_budget = r.elapsed <= Duration::from_secs(45 * 60);
    verdict(
        ratio <= 0.1 && completed && offtrack == 0 && speed >= 1.0 && within_budget,
        format!(
            "val {:.5} / epoch-1 {:.5} = {:.1}% (last epoch {:.5}); lap completed {completed}, {:.2} s, avg {speed:.3} m/s, off-track {offtrack}; pipeline {:.1} min",
            r.final_val,
            r.epoch1_val,
            100.0 * ratio,
            r.last_val,
            m["lap_time_s"].as_f64().unwrap_or(f64::NAN),
            r.elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn determinism(first: &Result<PipelineRun, String>, root: &Path) -> Verdict {
    let a = first.as_ref().map_err(|e| format!("first run failed: {e}"))?;
    let b = pipeline(root.join("run2"))?;
    let same = |f: &str| -> Result<bool, String> {
        let x = std::fs::read(a.dir.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.dir.join(f)).map_err(|e| e.to_string())?;
        Ok(x == y)
    };
    let (ckpt, trace, hist) = (same("model.acpm")?, same("trace.jsonl")?, same("model.csv")?);
    verdict(
        ckpt && trace,
        format!("checkpoint identical {ckpt}; trace identical {trace}; loss history identical {hist}"),
    )
}

fn fira() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/pilotstack.toml");
    let out = cli(dir.path(), &["check", "--config", &shipped.display().to_string()])?;
    if !out.contains("FIRA constraints: PASS") {
        return Err(format!("shipped config: {out}"));
    }
    let big = VehicleParams {
        length_mm: 301.0,
        width_mm: 200.0,
        height_mm: 300.0,
        ..VehicleParams::default()
    };
    let report = check_fira_constraints(&big);
    std::fs::write(dir.path().join("big.toml"), "[vehicle]\nlength_mm = 301\nwidth_mm = 200\nheight_mm = 300\n").map_err(|e| e.to_string())?;
    let cli_fail = Command::new(env!("CARGO_BIN_EXE_pilotstack"))
        .current_dir(dir.path())
        .args(["check", "--config", "big.toml"])
        .output()
        .map_err(|e| e.to_string())?;
    let rejected = !report.passed()
        && report.violations.len() == 1
        && report.violations[0].dimension == "length"
        && cli_fail.status.code() == Some(2)
        && String::from_utf8_lossy(&cli_fail.stdout).contains("FIRA constraints: FAIL");
    verdict(rejected, format!("shipped config PASS; (301, 200, 300) rejected {rejected} (exit {:?})", cli_fail.status.code()))
}

fn main() {
    let mut report = Report { passed: 0, failed: 0 };
    report.run("gradient oracle", gradient_oracle);
    report.run("convolution oracle", conv_oracle);
    report.run("shape/parameter audit", shape_audit);
    report.run("kinematics circle closure", kinematics);
    report.run("actuation bit-exactness", actuation);
    report.run("dataset round-trip", dataset_round_trip);
    let root = tempfile::tempdir().expect("tempdir");
    let first = pipeline(root.path().join("run1"));
    report.run("end-to-end reproduction", || end_to_end(&first));
    report.run("determinism", || determinism(&first, root.path()));
    report.run("FIRA check", fira);

    println!("{} passed, {} failed", report.passed, report.failed);
    let strict = std::env::var("PILOTSTACK_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && report.failed > 0 {
        std::process::exit(1);
    }
}
