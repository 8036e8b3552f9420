//! Layer primitives with explicit forward and backward passes.
//!
//! Activations are NHWC. Convolutions use valid padding and the
//! cross-correlation convention; kernels are laid out `(kh, kw, c_in, c_out)`
//! and dense weights `(in, out)`.

use crate::error::{Error, Result};
use crate::nn::tensor::{gemm, Mat, Real, Tensor};
use crate::rng::Rng;

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

/// Output extent of a valid-padding window.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub filters: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn resolve<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize) -> Result<Self> {
        let (batch, in_h, in_w, in_c) = match *input.shape() {
            [h, w, c] => (1, h, w, c),
            [b, h, w, c] => (b, h, w, c),
            ref s => return shape_err(format!("conv input must be (h,w,c) or (b,h,w,c), got {s:?}")),
        };
        let [kh, kw, kc, filters] = *kernel.shape() else {
            return shape_err(format!("conv kernel must be (kh,kw,c,f), got {:?}", kernel.shape()));
        };
        if kc != in_c {
            return shape_err(format!("kernel expects {kc} channels, input has {in_c}"));
        }
        if let Some(b) = bias {
            if b.shape() != [filters] {
                return shape_err(format!("bias shape {:?} != [{filters}]", b.shape()));
            }
        }
        if stride == 0 {
            return shape_err("stride must be >= 1".into());
        }
        if kh > in_h || kw > in_w {
            return shape_err(format!("kernel {kh}x{kw} larger than input {in_h}x{in_w}"));
        }
        Ok(Self {
            batch,
            in_h,
            in_w,
            in_c,
            kh,
            kw,
            filters,
            stride,
            out_h: conv_output_dim(in_h, kh, stride),
            out_w: conv_output_dim(in_w, kw, stride),
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.in_c
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    fn out_shape(&self, rank3: bool) -> Vec<usize> {
        if rank3 {
            vec![self.out_h, self.out_w, self.filters]
        } else {
            vec![self.batch, self.out_h, self.out_w, self.filters]
        }
    }

    /// Gathers every receptive field of one sample into `col`
    /// (`positions x patch_len`).
    fn im2col<T: Real>(&self, sample: &[T], col: &mut [T]) {
        let row_len = self.kw * self.in_c;
        let plen = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let dst = &mut col[(oy * self.out_w + ox) * plen..][..plen];
                for ky in 0..self.kh {
                    let src = ((oy * self.stride + ky) * self.in_w + ox * self.stride) * self.in_c;
                    dst[ky * row_len..][..row_len].copy_from_slice(&sample[src..src + row_len]);
                }
            }
        }
    }

    /// Scatter-adds patch gradients back onto one sample's input gradient.
    fn col2im<T: Real>(&self, col: &[T], grad: &mut [T]) {
        let row_len = self.kw * self.in_c;
        let plen = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let src = &col[(oy * self.out_w + ox) * plen..][..plen];
                for ky in 0..self.kh {
                    let dst = ((oy * self.stride + ky) * self.in_w + ox * self.stride) * self.in_c;
                    for (g, &v) in grad[dst..dst + row_len].iter_mut().zip(&src[ky * row_len..][..row_len]) {
                        *g += v;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = ConvGeometry::resolve(input, kernel, Some(bias), stride)?;
    let (p, plen, f) = (g.positions(), g.patch_len(), g.filters);
    let mut out = vec![T::zero(); g.batch * p * f];
    let mut col = vec![T::zero(); p * plen];
    for (sample, dst) in input.data().chunks_exact(g.in_len()).zip(out.chunks_exact_mut(p * f)) {
        g.im2col(sample, &mut col);
        for row in dst.chunks_exact_mut(f) {
            row.copy_from_slice(bias.data());
        }
        gemm(Mat::new(&col, p, plen), Mat::new(kernel.data(), plen, f), T::one(), dst);
    }
    Tensor::from_vec(&g.out_shape(input.shape().len() == 3), out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_input: Option<Tensor<T>>,
    pub grad_kernel: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
) -> Result<ConvGrads<T>> {
    conv2d_backward_opt(grad_out, input, kernel, stride, true)
}

/// As [`conv2d_backward`]; `want_input` = false skips the input gradient
/// (first layer).
pub fn conv2d_backward_opt<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::resolve(input, kernel, None, stride)?;
    let rank3 = input.shape().len() == 3;
    if grad_out.shape() != g.out_shape(rank3) {
        return shape_err(format!(
            "conv grad_out {:?} != forward output {:?}",
            grad_out.shape(),
            g.out_shape(rank3)
        ));
    }
    let (p, plen, f) = (g.positions(), g.patch_len(), g.filters);
    let mut grad_kernel = vec![T::zero(); plen * f];
    let mut grad_bias = vec![T::zero(); f];
    let mut grad_input = if want_input {
        vec![T::zero(); input.len()]
    } else {
        Vec::new()
    };
    let mut col = vec![T::zero(); p * plen];
    let mut dcol = if want_input { vec![T::zero(); p * plen] } else { Vec::new() };

    for (n, (sample, gout)) in input
        .data()
        .chunks_exact(g.in_len())
        .zip(grad_out.data().chunks_exact(p * f))
        .enumerate()
    {
        for row in gout.chunks_exact(f) {
            for (b, &v) in grad_bias.iter_mut().zip(row) {
                *b += v;
            }
        }
        g.im2col(sample, &mut col);
        gemm(Mat::new(&col, p, plen).t(), Mat::new(gout, p, f), T::one(), &mut grad_kernel);
        if want_input {
            gemm(Mat::new(gout, p, f), Mat::new(kernel.data(), plen, f).t(), T::zero(), &mut dcol);
            g.col2im(&dcol, &mut grad_input[n * g.in_len()..][..g.in_len()]);
        }
    }
    Ok(ConvGrads {
        grad_input: if want_input {
            Some(Tensor::from_vec(input.shape(), grad_input)?)
        } else {
            None
        },
        grad_kernel: Tensor::from_vec(kernel.shape(), grad_kernel)?,
        grad_bias: Tensor::from_vec(&[f], grad_bias)?,
    })
}

fn dense_dims<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [fan_in, fan_out] = *weight.shape() else {
        return shape_err(format!("dense weight must be (in,out), got {:?}", weight.shape()));
    };
    let batch = match *input.shape() {
        [n] if n == fan_in => 1,
        [b, n] if n == fan_in => b,
        ref s => return shape_err(format!("dense input {s:?} incompatible with weight ({fan_in},{fan_out})")),
    };
    Ok((batch, fan_in, fan_out))
}

/// `y = x W + b` for each row of `x`.
pub fn dense_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fan_in, fan_out) = dense_dims(input, weight)?;
    if bias.shape() != [fan_out] {
        return shape_err(format!("dense bias {:?} != [{fan_out}]", bias.shape()));
    }
    let mut out: Vec<T> = bias.data().iter().copied().cycle().take(batch * fan_out).collect();
    gemm(Mat::new(input.data(), batch, fan_in), Mat::new(weight.data(), fan_in, fan_out), T::one(), &mut out);
    let shape = if input.shape().len() == 1 {
        vec![fan_out]
    } else {
        vec![batch, fan_out]
    };
    Tensor::from_vec(&shape, out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>, weight: &Tensor<T>) -> Result<DenseGrads<T>> {
    let (batch, fan_in, fan_out) = dense_dims(input, weight)?;
    if grad_out.len() != batch * fan_out {
        return shape_err(format!("dense grad_out {:?} != ({batch},{fan_out})", grad_out.shape()));
    }
    let mut gw = vec![T::zero(); fan_in * fan_out];
    gemm(
        Mat::new(input.data(), batch, fan_in).t(),
        Mat::new(grad_out.data(), batch, fan_out),
        T::zero(),
        &mut gw,
    );
    let mut gx = vec![T::zero(); batch * fan_in];
    gemm(
        Mat::new(grad_out.data(), batch, fan_out),
        Mat::new(weight.data(), fan_in, fan_out).t(),
        T::zero(),
        &mut gx,
    );
    let mut gb = vec![T::zero(); fan_out];
    for row in grad_out.data().chunks_exact(fan_out) {
        for (b, &v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok(DenseGrads {
        grad_input: Tensor::from_vec(input.shape(), gx)?,
        grad_weight: Tensor::from_vec(weight.shape(), gw)?,
        grad_bias: Tensor::from_vec(&[fan_out], gb)?,
    })
}

pub fn relu_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient only where the forward input was strictly positive.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return shape_err(format!("relu grad {:?} != input {:?}", grad_out.shape(), input.shape()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// `(b, ...)` to `(b, prod(...))`.
pub fn flatten_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let b = *input.shape().first().ok_or_else(|| Error::Shape("flatten of scalar".into()))?;
    let rest = input.len() / b;
    input.clone().reshape(&[b, rest])
}

pub fn flatten_backward<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    grad_out.clone().reshape(input_shape)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Keep-mask of an inverted-dropout pass; empty in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub rate: f64,
}

impl DropoutMask {
    pub fn kept_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            1.0
        } else {
            self.keep.iter().filter(|&&k| k).count() as f64 / self.keep.len() as f64
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("dropout rate must be in [0, 1), got {rate}")))
    }
}

/// Inverted dropout. In training mode each unit is kept when a uniform draw
/// from `rng` is `>= rate`; kept units are scaled by `1 / (1 - rate)`.
pub fn dropout_forward<T: Real>(input: &Tensor<T>, rate: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, DropoutMask)> {
    check_rate(rate)?;
    if mode == Mode::Infer {
        return Ok((input.clone(), DropoutMask { keep: Vec::new(), rate }));
    }
    let scale = T::lit(1.0 / (1.0 - rate));
    let keep: Vec<bool> = (0..input.len()).map(|_| rng.next_f64() >= rate).collect();
    let data = input
        .data()
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v * scale } else { T::zero() })
        .collect();
    Ok((Tensor::from_vec(input.shape(), data)?, DropoutMask { keep, rate }))
}

pub fn dropout_backward<T: Real>(grad_out: &Tensor<T>, mask: &DropoutMask) -> Result<Tensor<T>> {
    if mask.keep.is_empty() {
        return Ok(grad_out.clone());
    }
    if mask.keep.len() != grad_out.len() {
        return shape_err(format!("dropout mask {} != grad {}", mask.keep.len(), grad_out.len()));
    }
    let scale = T::lit(1.0 / (1.0 - mask.rate));
    let data = grad_out
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&g, &k)| if k { g * scale } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

#[derive(Debug, Clone)]
pub struct LossGrads<T> {
    pub steering: Vec<T>,
    pub throttle: Vec<T>,
}

/// `0.5 * (mean((ps - ts)^2) + mean((pt - tt)^2))` with its gradient with
/// respect to both prediction vectors. The loss is accumulated in `f64`.
pub fn mse_dual_head_loss<T: Real>(
    pred_steering: &[T],
    pred_throttle: &[T],
    target_steering: &[T],
    target_throttle: &[T],
) -> Result<(f64, LossGrads<T>)> {
    let b = pred_steering.len();
    if b == 0 || [pred_throttle.len(), target_steering.len(), target_throttle.len()] != [b, b, b] {
        return shape_err(format!(
            "loss batch sizes differ: {b}, {}, {}, {}",
            pred_throttle.len(),
            target_steering.len(),
            target_throttle.len()
        ));
    }
    let inv_b = 1.0 / b as f64;
    let head = |pred: &[T], target: &[T]| -> (f64, Vec<T>) {
        let mut sum = 0.0;
        let grads = pred
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let e = p.to_f64().unwrap() - t.to_f64().unwrap();
                sum += e * e;
                T::lit(e * inv_b)
            })
            .collect();
        (sum * inv_b, grads)
    };
    let (ls, gs) = head(pred_steering, target_steering);
    let (lt, gt) = head(pred_throttle, target_throttle);
    Ok((0.5 * (ls + lt), LossGrads { steering: gs, throttle: gt }))
}
