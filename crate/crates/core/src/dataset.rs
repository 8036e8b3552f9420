//! Recorded driving sessions on disk and their in-memory form.
//!
//! A session directory holds `manifest.json`, an append-only
//! `records.jsonl` catalog and one binary PPM (P6) image per record:
//!
//! ```text
//! session/
//!   manifest.json
//!   records.jsonl      {"i":0,"image":"img_000000.ppm","steering":0.1,"throttle":0.4,"ts_ms":0}
//!   img_000000.ppm
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::rng::{derive_seed, Rng};
use crate::vehicle::ControlInput;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const DEFAULT_RECORD_RATE_HZ: f64 = 20.0;
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

pub fn image_file_name(index: usize) -> String {
    format!("img_{index:06}.ppm")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub format_version: u32,
    pub image_width: usize,
    pub image_height: usize,
    pub record_rate_hz: f64,
    pub track_id: String,
    pub created_utc: String,
    pub record_count: usize,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveRecord {
    pub i: usize,
    pub image: String,
    pub steering: f64,
    pub throttle: f64,
    pub ts_ms: u64,
}

pub fn encode_ppm(frame: &CameraFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.pixels());
    out
}

/// Decodes a binary PPM with maxval 255. Header comments are skipped.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<CameraFrame, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err("not a binary PPM (missing P6 magic)".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated PPM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PPM header")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed PPM header".into());
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("unsupported PPM maxval {maxval}"));
    }
    if w == 0 || h == 0 {
        return Err("zero-sized PPM".into());
    }
    let body = &bytes[pos..];
    if body.len() != w * h * 3 {
        return Err(format!("PPM body is {} bytes, expected {}", body.len(), w * h * 3));
    }
    CameraFrame::new(w, h, body.to_vec()).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub record_rate_hz: f64,
    pub track_id: String,
    /// Overrides the creation timestamp (reproducible fixtures).
    pub created_utc: Option<String>,
}

impl SessionConfig {
    pub fn new(image_width: usize, image_height: usize, track_id: impl Into<String>) -> Self {
        Self {
            image_width,
            image_height,
            record_rate_hz: DEFAULT_RECORD_RATE_HZ,
            track_id: track_id.into(),
            created_utc: None,
        }
    }
}

fn write_manifest(dir: &Path, manifest: &SessionManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Single writer for one recording session.
#[derive(Debug)]
pub struct SessionWriter {
    dir: PathBuf,
    manifest: SessionManifest,
    records: BufWriter<File>,
    last_ts: Option<u64>,
}

impl SessionWriter {
    /// Creates a new session in `dir`, which must not already hold one.
    pub fn create(dir: &Path, cfg: SessionConfig) -> Result<Self> {
        if dir.join(MANIFEST_FILE).exists() {
            return Err(Error::dataset(dir, "a session already exists here; sessions are append-only"));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let manifest = SessionManifest {
            format_version: FORMAT_VERSION,
            image_width: cfg.image_width,
            image_height: cfg.image_height,
            record_rate_hz: cfg.record_rate_hz,
            track_id: cfg.track_id,
            created_utc: cfg
                .created_utc
                .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
            record_count: 0,
        };
        write_manifest(dir, &manifest)?;
        let path = dir.join(RECORDS_FILE);
        let file = OpenOptions::new()
            .create_new(true)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            records: BufWriter::new(file),
            last_ts: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.manifest.record_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores one frame with its labels and returns the record index.
    pub fn append(&mut self, frame: &CameraFrame, input: ControlInput, timestamp_ms: u64) -> Result<usize> {
        if (frame.width(), frame.height()) != (self.manifest.image_width, self.manifest.image_height) {
            return Err(Error::dataset(
                &self.dir,
                format!(
                    "frame is {}x{}, session records {}x{}",
                    frame.width(),
                    frame.height(),
                    self.manifest.image_width,
                    self.manifest.image_height
                ),
            ));
        }
        if self.last_ts.is_some_and(|t| timestamp_ms < t) {
            return Err(Error::dataset(&self.dir, "timestamps must be non-decreasing"));
        }
        let index = self.manifest.record_count;
        let image = image_file_name(index);
        let path = self.dir.join(&image);
        fs::write(&path, encode_ppm(frame)).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let record = DriveRecord {
            i: index,
            image,
            steering: input.steering(),
            throttle: input.throttle(),
            ts_ms: timestamp_ms,
        };
        serde_json::to_writer(&mut self.records, &record)?;
        self.records
            .write_all(b"\n")
            .map_err(|e| Error::io("appending record", e))?;
        self.manifest.record_count += 1;
        self.last_ts = Some(timestamp_ms);
        Ok(index)
    }

    /// Flushes the catalog and finalizes the manifest's record count.
    pub fn close(mut self) -> Result<SessionManifest> {
        self.records
            .flush()
            .map_err(|e| Error::io(format!("flushing {}", self.dir.display()), e))?;
        write_manifest(&self.dir, &self.manifest)?;
        Ok(self.manifest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major RGB8, `height * width * 3` bytes.
    pub image: Arc<[u8]>,
    pub steering: f64,
    pub throttle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<Sample>,
    pub sessions: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            height: self.height,
            width: self.width,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            sessions: self.sessions.clone(),
        }
    }

    /// Concatenates datasets that share an image shape.
    pub fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let mut acc = iter.next().ok_or_else(|| Error::InvalidParam("no datasets to concatenate".into()))?;
        for d in iter {
            if (d.height, d.width) != (acc.height, acc.width) {
                return Err(Error::Shape(format!(
                    "image shapes differ across sessions: {}x{} vs {}x{}",
                    acc.width, acc.height, d.width, d.height
                )));
            }
            acc.samples.extend(d.samples);
            acc.sessions.extend(d.sessions);
        }
        Ok(acc)
    }
}

pub fn read_manifest(dir: &Path) -> Result<SessionManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::dataset(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::dataset(&path, e.to_string()))
}

/// Reads the record catalog and validates labels, ordering and the
/// manifest count, without decoding images.
pub fn read_records(dir: &Path) -> Result<(SessionManifest, Vec<DriveRecord>)> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::dataset(
            dir,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let path = dir.join(RECORDS_FILE);
    let file = File::open(&path).map_err(|e| Error::dataset(&path, e.to_string()))?;
    let mut records: Vec<DriveRecord> = Vec::with_capacity(manifest.record_count);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::dataset(&path, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DriveRecord =
            serde_json::from_str(&line).map_err(|e| Error::dataset(&path, format!("line {}: {e}", lineno + 1)))?;
        for (name, v) in [("steering", rec.steering), ("throttle", rec.throttle)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::dataset(&path, format!("record {}: {name} {v} outside [-1, 1]", rec.i)));
            }
        }
        if let Some(prev) = records.last() {
            if rec.i <= prev.i {
                return Err(Error::dataset(&path, format!("record index {} not increasing", rec.i)));
            }
            if rec.ts_ms < prev.ts_ms {
                return Err(Error::dataset(&path, format!("record {}: timestamp decreases", rec.i)));
            }
        }
        if rec.image.contains(['/', '\\']) || rec.image.starts_with('.') {
            return Err(Error::dataset(&path, format!("record {}: bad image name {:?}", rec.i, rec.image)));
        }
        records.push(rec);
    }
    if records.len() != manifest.record_count {
        return Err(Error::dataset(
            dir,
            format!(
                "manifest lists {} records but {} has {}",
                manifest.record_count,
                RECORDS_FILE,
                records.len()
            ),
        ));
    }
    Ok((manifest, records))
}

/// Loads and decodes a closed session.
pub fn load_session(dir: &Path) -> Result<Dataset> {
    let (manifest, records) = read_records(dir)?;
    let mut samples = Vec::with_capacity(records.len());
    for rec in &records {
        let path = dir.join(&rec.image);
        let bytes = fs::read(&path).map_err(|e| Error::dataset(&path, e.to_string()))?;
        let frame = decode_ppm(&bytes).map_err(|m| Error::dataset(&path, m))?;
        if (frame.width(), frame.height()) != (manifest.image_width, manifest.image_height) {
            return Err(Error::dataset(
                &path,
                format!(
                    "image is {}x{}, manifest says {}x{}",
                    frame.width(),
                    frame.height(),
                    manifest.image_width,
                    manifest.image_height
                ),
            ));
        }
        samples.push(Sample {
            image: frame.into_pixels().into(),
            steering: rec.steering,
            throttle: rec.throttle,
        });
    }
    Ok(Dataset {
        height: manifest.image_height,
        width: manifest.image_width,
        samples,
        sessions: vec![dir.display().to_string()],
    })
}

/// Loads every session under `paths`. Each path is either a session
/// directory or a directory whose immediate subdirectories are sessions
/// (such as a teleop data directory); those are loaded in name order.
pub fn load_sessions(paths: &[PathBuf]) -> Result<Dataset> {
    let mut parts = Vec::new();
    for path in paths {
        if path.join(MANIFEST_FILE).is_file() {
            parts.push(load_session(path)?);
            continue;
        }
        let mut children: Vec<PathBuf> = match fs::read_dir(path) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join(MANIFEST_FILE).is_file())
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::dataset(path, "no such directory"));
            }
            Err(e) => return Err(Error::io(format!("listing {}", path.display()), e)),
        };
        if children.is_empty() {
            return Err(Error::NoRecords(path.clone()));
        }
        children.sort();
        for c in children {
            parts.push(load_session(&c)?);
        }
    }
    let data = Dataset::concat(parts)?;
    if data.is_empty() {
        return Err(Error::NoRecords(paths.first().cloned().unwrap_or_default()));
    }
    Ok(data)
}

/// Number of validation samples for a split: `ceil(n * fraction)`, capped so
/// the training side keeps at least one sample.
pub fn val_count(n: usize, val_fraction: f64) -> usize {
    let k = (n as f64 * val_fraction).ceil() as usize;
    k.min(n.saturating_sub(1))
}

/// Seeded shuffle of `0..n`; the first [`val_count`] indices go to
/// validation, the rest to training.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidParam("cannot split an empty dataset".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidParam(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    let perm = Rng::new(seed).permutation(n);
    let k = val_count(n, val_fraction);
    Ok((perm[k..].to_vec(), perm[..k].to_vec()))
}

pub fn split_train_val(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(dataset.len(), val_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

/// Sample order for one epoch, keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    Rng::new(derive_seed(seed, &[epoch as u64])).permutation(n)
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `(b, h, w, 3)` raw byte values as floats in 0..=255.
    pub images: Tensor<f32>,
    /// `(b, 2)`: steering, throttle.
    pub labels: Tensor<f32>,
}

pub fn make_batch(dataset: &Dataset, indices: &[usize]) -> Batch {
    let b = indices.len();
    let mut images = Vec::with_capacity(b * dataset.height * dataset.width * 3);
    let mut labels = Vec::with_capacity(b * 2);
    for &i in indices {
        let s = &dataset.samples[i];
        images.extend(s.image.iter().map(|&v| v as f32));
        labels.extend([s.steering as f32, s.throttle as f32]);
    }
    Batch {
        indices: indices.to_vec(),
        images: Tensor::from_vec(&[b, dataset.height, dataset.width, 3], images).expect("batch shape"),
        labels: Tensor::from_vec(&[b, 2], labels).expect("label shape"),
    }
}

/// Mini-batches for one epoch in a `(seed, epoch)`-keyed order. The final
/// short batch is included.
pub fn iterate_batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> impl Iterator<Item = Batch> + '_ {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let order = epoch_order(dataset.len(), seed, epoch);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| make_batch(dataset, &idx))
}
