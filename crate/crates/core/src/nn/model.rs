//! Parameters, forward pass and backpropagation through an
//! [`ArchitectureSpec`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::arch::{ArchitectureSpec, LayerSpec, ParamShape};
use crate::nn::layers::{self, DropoutMask, Mode};
use crate::nn::tensor::{Real, Tensor};
use crate::rng::Rng;

/// Inputs are expected in [0, 1]; anything above this is raw pixel data.
pub const PREPROCESSED_MAX: f64 = 1.5;

/// Weight initialization for the convolutions and hidden dense layers.
///
/// Glorot-uniform is the default: with [0, 1] inputs that are not
/// zero-centered, He-uniform convolutions produce large activations, and the
/// trained network drifts far from its dropout-averaged behavior at
/// inference time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    #[default]
    GlorotUniform,
    HeUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// All learnable weights plus the architecture they belong to. Layers are
/// stored in architecture order (convolutions, hidden dense, heads).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub arch: ArchitectureSpec,
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        let layers = arch
            .param_shapes()
            .iter()
            .map(|s| LayerParams {
                weight: Tensor::zeros(&s.weight),
                bias: Tensor::zeros(&s.bias),
            })
            .collect();
        Self {
            arch: arch.clone(),
            layers,
        }
    }

    /// Default initialization: [`WeightInit::GlorotUniform`].
    pub fn init(arch: &ArchitectureSpec, seed: u64) -> Self {
        Self::init_with(arch, seed, WeightInit::default())
    }

    /// Uniform weights with the chosen scheme for conv and hidden dense
    /// layers, Glorot-uniform for the linear heads, zero biases. Fans follow
    /// the usual convention: a k×k conv from `cin` to `cout` channels has
    /// fan-in `k·k·cin` and fan-out `k·k·cout`.
    pub fn init_with(arch: &ArchitectureSpec, seed: u64, scheme: WeightInit) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = Rng::derived(seed, &[0x1417]);
        let shapes = arch.param_shapes();
        let param_layers = arch.layers().iter().filter(|l| l.has_params());
        for ((lp, shape), spec) in params.layers.iter_mut().zip(&shapes).zip(param_layers) {
            let (fan_in, fan_out) = fans(shape);
            let glorot = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let limit = match (spec, scheme) {
                (LayerSpec::OutputDense { .. }, _) | (_, WeightInit::GlorotUniform) => glorot,
                (_, WeightInit::HeUniform) => (6.0 / fan_in as f64).sqrt(),
            };
            for w in lp.weight.data_mut() {
                *w = T::lit(rng.uniform(-limit, limit));
            }
        }
        params
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let shapes = self.arch.param_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "architecture has {} parameterized layers, params have {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (i, (s, l)) in shapes.iter().zip(&self.layers).enumerate() {
            let have = ParamShape {
                weight: l.weight.shape().to_vec(),
                bias: l.bias.shape().to_vec(),
            };
            if &have != s {
                return Err(Error::Shape(format!("layer {i}: expected {s:?}, got {have:?}")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Flat views over every parameter tensor, weight before bias.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// What backprop needs from one trunk layer.
#[derive(Debug, Clone)]
enum Saved<T> {
    Conv { input: Tensor<T>, output: Tensor<T>, stride: usize, relu: bool },
    Dense { input: Tensor<T>, output: Tensor<T>, relu: bool },
    Dropout(DropoutMask),
    Flatten { input_shape: Vec<usize> },
}

fn fans(shape: &ParamShape) -> (usize, usize) {
    let w = &shape.weight;
    let out = w[w.len() - 1];
    let inp = w[w.len() - 2];
    let receptive: usize = w[..w.len() - 2].iter().product();
    (receptive * inp, receptive * out)
}

/// Activations retained by [`model_forward`] for [`model_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    saved: Vec<Saved<T>>,
    features: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ModelOutput<T> {
    /// `(b, 1)`
    pub steering: Tensor<T>,
    /// `(b, 1)`
    pub throttle: Tensor<T>,
}

/// Runs the network on a preprocessed `(b, h, w, c)` batch. `rng` drives the
/// dropout masks in training mode and is not touched in inference mode.
pub fn model_forward<T: Real>(
    params: &ModelParams<T>,
    batch: &Tensor<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(ModelOutput<T>, ForwardCache<T>)> {
    let [h, w, c] = params.arch.input_shape();
    let b = match *batch.shape() {
        [b, bh, bw, bc] if [bh, bw, bc] == [h, w, c] => b,
        ref s => return Err(Error::Shape(format!("model expects (b,{h},{w},{c}), got {s:?}"))),
    };
    let limit = T::lit(PREPROCESSED_MAX);
    if batch.data().iter().any(|&v| v > limit) {
        return Err(Error::InvalidParam(format!(
            "input values exceed {PREPROCESSED_MAX}; frames must be scaled to [0, 1]"
        )));
    }

    let mut x = batch.clone();
    let mut saved = Vec::with_capacity(params.arch.trunk().len());
    let mut weights = params.layers.iter();
    for layer in params.arch.trunk() {
        x = match *layer {
            LayerSpec::Conv { stride, relu, .. } => {
                let p = weights.next().expect("param per conv");
                let mut out = layers::conv2d_forward(&x, &p.weight, &p.bias, stride)?;
                if relu {
                    out = layers::relu_forward(&out);
                }
                saved.push(Saved::Conv {
                    input: x,
                    output: out.clone(),
                    stride,
                    relu,
                });
                out
            }
            LayerSpec::Dense { relu, .. } => {
                let p = weights.next().expect("param per dense");
                let mut out = layers::dense_forward(&x, &p.weight, &p.bias)?;
                if relu {
                    out = layers::relu_forward(&out);
                }
                saved.push(Saved::Dense {
                    input: x,
                    output: out.clone(),
                    relu,
                });
                out
            }
            LayerSpec::Dropout { rate } => {
                let (out, mask) = layers::dropout_forward(&x, rate as f64, mode, rng)?;
                saved.push(Saved::Dropout(mask));
                out
            }
            LayerSpec::Flatten => {
                let input_shape = x.shape().to_vec();
                let out = layers::flatten_forward(&x)?;
                saved.push(Saved::Flatten { input_shape });
                out
            }
            LayerSpec::Input { .. } | LayerSpec::OutputDense { .. } => unreachable!("not a trunk layer"),
        };
    }

    let mut heads = Vec::with_capacity(2);
    for p in weights {
        heads.push(layers::dense_forward(&x, &p.weight, &p.bias)?);
    }
    let [steering, throttle]: [Tensor<T>; 2] = heads
        .try_into()
        .map_err(|_| Error::Shape("model must have exactly two heads".into()))?;
    debug_assert_eq!(steering.shape(), [b, 1]);
    Ok((
        ModelOutput { steering, throttle },
        ForwardCache { saved, features: x },
    ))
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient at both heads (`b` values each).
pub fn model_backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    grad_steering: &[T],
    grad_throttle: &[T],
) -> Result<ModelParams<T>> {
    let n_heads = params.arch.heads().len();
    let n_layers = params.layers.len();
    let mut grads: Vec<Option<(Tensor<T>, Tensor<T>)>> = (0..n_layers).map(|_| None).collect();

    let b = cache.features.shape()[0];
    let mut g_features = Tensor::zeros(cache.features.shape());
    for (k, g_head) in [grad_steering, grad_throttle].into_iter().enumerate() {
        let idx = n_layers - n_heads + k;
        let p = &params.layers[idx];
        let units = p.bias.len();
        let g = Tensor::from_vec(&[b, units], g_head.to_vec())?;
        let d = layers::dense_backward(&g, &cache.features, &p.weight)?;
        for (acc, &v) in g_features.data_mut().iter_mut().zip(d.grad_input.data()) {
            *acc += v;
        }
        grads[idx] = Some((d.grad_weight, d.grad_bias));
    }

    let mut g = g_features;
    let mut pidx = n_layers - n_heads;
    for (i, s) in cache.saved.iter().enumerate().rev() {
        g = match s {
            Saved::Conv { input, output, stride, relu } => {
                pidx -= 1;
                if *relu {
                    g = layers::relu_backward(&g, output)?;
                }
                let p = &params.layers[pidx];
                let cg = layers::conv2d_backward_opt(&g, input, &p.weight, *stride, i > 0)?;
                grads[pidx] = Some((cg.grad_kernel, cg.grad_bias));
                match cg.grad_input {
                    Some(gi) => gi,
                    None => break,
                }
            }
            Saved::Dense { input, output, relu } => {
                pidx -= 1;
                if *relu {
                    g = layers::relu_backward(&g, output)?;
                }
                let d = layers::dense_backward(&g, input, &params.layers[pidx].weight)?;
                grads[pidx] = Some((d.grad_weight, d.grad_bias));
                d.grad_input
            }
            Saved::Dropout(mask) => layers::dropout_backward(&g, mask)?,
            Saved::Flatten { input_shape } => layers::flatten_backward(&g, input_shape)?,
        };
    }

    let layers = grads
        .into_iter()
        .zip(&params.layers)
        .map(|(g, p)| match g {
            Some((weight, bias)) => LayerParams { weight, bias },
            // Only reachable when the first trunk layer is not a convolution.
            None => LayerParams {
                weight: Tensor::zeros(p.weight.shape()),
                bias: Tensor::zeros(p.bias.shape()),
            },
        })
        .collect();
    Ok(ModelParams {
        arch: params.arch.clone(),
        layers,
    })
}
