//! Mini-batch training loop with best-validation-epoch selection.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{iterate_batches, make_batch, split_train_val, Batch, Dataset, DEFAULT_VAL_FRACTION};
use crate::error::{Error, Result};
use crate::nn::adam::{adam_step, AdamConfig, AdamState};
use crate::nn::arch::ArchitectureSpec;
use crate::nn::layers::{mse_dual_head_loss, Mode};
use crate::nn::model::{model_backward, model_forward, ModelParams, WeightInit};
use crate::nn::tensor::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub init: WeightInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-7,
            seed: 0,
            val_fraction: DEFAULT_VAL_FRACTION,
            init: WeightInit::GlorotUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(format!("train: {m}")));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps > 0");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams<f32>,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

/// Scales raw byte values to [0, 1].
pub fn normalize_images(raw: &Tensor<f32>) -> Tensor<f32> {
    raw.map(|v| v / 255.0)
}

fn batch_targets(batch: &Batch) -> (Vec<f32>, Vec<f32>) {
    batch.labels.data().chunks_exact(2).map(|l| (l[0], l[1])).unzip()
}

/// Mean dual-head loss over `data` in inference mode.
pub fn evaluate_loss(params: &ModelParams<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let order: Vec<usize> = (0..data.len()).collect();
    for idx in order.chunks(batch_size.max(1)) {
        let batch = make_batch(data, idx);
        let (out, _) = model_forward(params, &normalize_images(&batch.images), Mode::Infer, &mut Rng::new(0))?;
        let (ts, tt) = batch_targets(&batch);
        let (loss, _) = mse_dual_head_loss(out.steering.data(), out.throttle.data(), &ts, &tt)?;
        total += loss * idx.len() as f64;
    }
    Ok(total / data.len() as f64)
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, cfg, |_| {})
}

/// Trains the default architecture, reporting each finished epoch to
/// `on_epoch`.
pub fn train_with(dataset: &Dataset, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochLoss)) -> Result<TrainOutcome> {
    let arch = ArchitectureSpec::linear_pilot_for(dataset.height, dataset.width);
    train_arch(dataset, cfg, &arch, on_epoch)
}

pub fn train_arch(
    dataset: &Dataset,
    cfg: &TrainConfig,
    arch: &ArchitectureSpec,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::NoRecords(dataset.sessions.first().map(Into::into).unwrap_or_default()));
    }
    let (train_set, val_set) = split_train_val(dataset, cfg.val_fraction, cfg.seed)?;
    // A single sample cannot be split; validate on the training sample.
    let val_set = if val_set.is_empty() { train_set.clone() } else { val_set };

    let mut params = ModelParams::<f32>::init_with(arch, cfg.seed, cfg.init);
    let mut opt = AdamState::new(&params);
    let adam = cfg.adam();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for (bi, batch) in iterate_batches(&train_set, cfg.batch_size, cfg.seed, epoch).enumerate() {
            let mut rng = Rng::derived(cfg.seed, &[0xD80, epoch as u64, bi as u64]);
            let (out, cache) = model_forward(&params, &normalize_images(&batch.images), Mode::Train, &mut rng)?;
            let (ts, tt) = batch_targets(&batch);
            let (loss, g) = mse_dual_head_loss(out.steering.data(), out.throttle.data(), &ts, &tt)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: bi,
                    loss,
                });
            }
            sum += loss * batch.indices.len() as f64;
            let grads = model_backward(&params, &cache, &g.steering, &g.throttle)?;
            adam_step(&mut params, &grads, &mut opt, &adam);
        }
        let train_loss = sum / train_set.len() as f64;
        let val_loss = evaluate_loss(&params, &val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch + 1,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        let record = EpochLoss {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        };
        log::info!("epoch {:>3}: train {:.6} val {:.6}", record.epoch, train_loss, val_loss);
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch + 1, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

/// `epoch,train_loss,val_loss` with a header row.
pub fn write_history_csv<W: Write>(history: &[EpochLoss], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for e in history {
        writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
    }
    Ok(())
}

pub fn save_history_csv(history: &[EpochLoss], path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let f = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    write_history_csv(history, std::io::BufWriter::new(f)).map_err(|e| Error::io(ctx(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::nn::arch::{Head, LayerSpec};

    fn small_arch() -> ArchitectureSpec {
        ArchitectureSpec::new(vec![
            LayerSpec::Input { height: 6, width: 8, channels: 3 },
            LayerSpec::Conv { filters: 4, kernel_h: 3, kernel_w: 3, stride: 1, relu: true },
            LayerSpec::Dropout { rate: 0.1 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 16, relu: true },
            LayerSpec::OutputDense { units: 1, head: Head::Steering },
            LayerSpec::OutputDense { units: 1, head: Head::Throttle },
        ])
        .unwrap()
    }

    fn gradient_dataset(n: usize) -> Dataset {
        Dataset {
            height: 6,
            width: 8,
            samples: (0..n)
                .map(|i| {
                    let s = (i as f64 / n as f64) * 2.0 - 1.0;
                    let image: Vec<u8> = (0..6 * 8 * 3)
                        .map(|p| (((p / 3) % 8) as f64 * 16.0 * (1.0 + s) + 10.0) as u8)
                        .collect();
                    Sample {
                        image: image.into(),
                        steering: s * 0.8,
                        throttle: 0.4,
                    }
                })
                .collect(),
            sessions: vec!["mem".into()],
        }
    }

    #[test]
    fn loss_decreases_on_learnable_task() {
        for init in [WeightInit::GlorotUniform, WeightInit::HeUniform] {
            let cfg = TrainConfig {
                epochs: 100,
                batch_size: 8,
                seed: 5,
                init,
                ..TrainConfig::default()
            };
            let out = train_arch(&gradient_dataset(40), &cfg, &small_arch(), |_| {}).unwrap();
            let first = out.history[0].val_loss;
            let best = out.history[out.best_epoch - 1].val_loss;
            assert!(best < 0.2 * first, "{init:?}: first {first} best {best}");
            assert_eq!(out.history.len(), 100);
        }
    }

    #[test]
    fn deterministic_history() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 7,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_arch(&gradient_dataset(20), &cfg, &small_arch(), |_| {}).unwrap();
        let b = train_arch(&gradient_dataset(20), &cfg, &small_arch(), |_| {}).unwrap();
        let bits = |h: &[EpochLoss]| h.iter().map(|e| (e.train_loss.to_bits(), e.val_loss.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a.history), bits(&b.history));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 0.0,
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train_arch(&gradient_dataset(10), &cfg, &small_arch(), |_| {}).unwrap();
        assert_eq!(out.params, ModelParams::init(&small_arch(), 4));
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut d = gradient_dataset(1);
        d.samples.clear();
        assert!(matches!(train(&d, &TrainConfig::default()), Err(Error::NoRecords(_))));
    }

    #[test]
    fn history_csv_format() {
        let mut out = Vec::new();
        let h = [EpochLoss {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
        }];
        write_history_csv(&h, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_loss,val_loss\n1,0.5,0.25\n");
    }
}
