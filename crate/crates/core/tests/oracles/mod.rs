//! Independent reference checks shared by the integration tests and the
//! acceptance runner. Everything here runs in f64 and uses only the public
//! API plus naive loops.
#![allow(dead_code)]

use pilotstack::nn::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward, dropout_forward,
    flatten_backward, flatten_forward, mse_dual_head_loss, relu_backward, relu_forward, Mode,
};
use pilotstack::nn::arch::{ArchitectureSpec, Head, LayerSpec};
use pilotstack::nn::model::{model_backward, model_forward, ModelParams, WeightInit};
use pilotstack::nn::Tensor;
use pilotstack::rng::Rng;

pub const FD_EPS: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-4;
pub const CONV_TOL: f64 = 1e-6;
/// The loss is quadratic, so central differences are exact up to rounding.
pub const LOSS_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst < self.tol
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} instances, worst {:.3e} (tol {:.0e})", self.name, self.instances, self.worst, self.tol)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Values bounded away from zero so central differences never straddle the
/// ReLU kink.
fn rand_away_from_zero(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform(gap, 1.0);
            if rng.next_u64() & 1 == 0 { m } else { -m }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn dot(a: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    a.data().iter().zip(w.data()).map(|(x, y)| x * y).sum()
}

/// Compares `analytic` against central differences of `f` around `x`.
fn fd_compare(x: &Tensor<f64>, analytic: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_EPS;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_EPS;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * FD_EPS)));
    }
    worst
}

fn small(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

pub fn grad_conv(instances: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = Rng::derived(seed, &[1, i as u64]);
        let (kh, kw, s) = (small(&mut rng, 1, 3), small(&mut rng, 1, 3), small(&mut rng, 1, 2));
        let (h, w) = (kh + small(&mut rng, 0, 4), kw + small(&mut rng, 0, 4));
        let (b, c, f) = (small(&mut rng, 1, 2), small(&mut rng, 1, 3), small(&mut rng, 1, 3));
        let x = rand_tensor(&mut rng, &[b, h, w, c]);
        let k = rand_tensor(&mut rng, &[kh, kw, c, f]);
        let bias = rand_tensor(&mut rng, &[f]);
        let y = conv2d_forward(&x, &k, &bias, s).unwrap();
        let up = rand_tensor(&mut rng, y.shape());
        let g = conv2d_backward(&up, &x, &k, s).unwrap();
        let loss = |x: &Tensor<f64>, k: &Tensor<f64>, bias: &Tensor<f64>| dot(&conv2d_forward(x, k, bias, s).unwrap(), &up);
        worst = worst
            .max(fd_compare(&x, g.grad_input.as_ref().unwrap(), |p| loss(p, &k, &bias)))
            .max(fd_compare(&k, &g.grad_kernel, |p| loss(&x, p, &bias)))
            .max(fd_compare(&bias, &g.grad_bias, |p| loss(&x, &k, p)));
    }
    Check { name: "conv2d", instances, worst, tol: GRAD_TOL }
}

pub fn grad_dense(instances: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = Rng::derived(seed, &[2, i as u64]);
        let (b, n_in, n_out) = (small(&mut rng, 1, 4), small(&mut rng, 1, 7), small(&mut rng, 1, 5));
        let x = rand_tensor(&mut rng, &[b, n_in]);
        let wt = rand_tensor(&mut rng, &[n_in, n_out]);
        let bias = rand_tensor(&mut rng, &[n_out]);
        let up = rand_tensor(&mut rng, &[b, n_out]);
        let g = dense_backward(&up, &x, &wt).unwrap();
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, bb: &Tensor<f64>| dot(&dense_forward(x, w, bb).unwrap(), &up);
        worst = worst
            .max(fd_compare(&x, &g.grad_input, |p| loss(p, &wt, &bias)))
            .max(fd_compare(&wt, &g.grad_weight, |p| loss(&x, p, &bias)))
            .max(fd_compare(&bias, &g.grad_bias, |p| loss(&x, &wt, p)));
    }
    Check { name: "dense", instances, worst, tol: GRAD_TOL }
}

pub fn grad_relu(instances: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = Rng::derived(seed, &[3, i as u64]);
        let shape = [small(&mut rng, 1, 3), small(&mut rng, 1, 5), small(&mut rng, 1, 4)];
        let x = rand_away_from_zero(&mut rng, &shape, 10.0 * FD_EPS);
        let up = rand_tensor(&mut rng, &shape);
        let g = relu_backward(&up, &x).unwrap();
        worst = worst.max(fd_compare(&x, &g, |p| dot(&relu_forward(p), &up)));
    }
    Check { name: "relu", instances, worst, tol: GRAD_TOL }
}

pub fn grad_flatten(instances: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = Rng::derived(seed, &[4, i as u64]);
        let shape = [small(&mut rng, 1, 3), small(&mut rng, 1, 4), small(&mut rng, 1, 4), small(&mut rng, 1, 3)];
        let x = rand_tensor(&mut rng, &shape);
        let flat = flatten_forward(&x).unwrap();
        let up = rand_tensor(&mut rng, flat.shape());
        let g = flatten_backward(&up, &shape).unwrap();
        worst = worst.max(fd_compare(&x, &g, |p| dot(&flatten_forward(p).unwrap(), &up)));
    }
    Check { name: "flatten", instances, worst, tol: GRAD_TOL }
}

/// Inference-mode dropout (identity), plus a fixed training mask replayed
/// from the same seed on every evaluation.
pub fn grad_dropout(instances: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = Rng::derived(seed, &[5, i as u64]);
        let shape = [small(&mut rng, 1, 4), small(&mut rng, 1, 8)];
        let rate = rng.uniform(0.0, 0.8);
        let x = rand_tensor(&mut rng, &shape);
        let up = rand_tensor(&mut rng, &shape);
        for (mode, key) in [(Mode::Infer, 0u64), (Mode::Train, 1)] {
            let mask_rng = || Rng::derived(seed, &[55, i as u64, key]);
            let (_, mask) = dropout_forward(&x, rate, mode, &mut mask_rng()).unwrap();
            let g = dropout_backward(&up, &mask).unwrap();
            worst = worst.max(fd_compare(&x, &g, |p| dot(&dropout_forward(p, rate, mode, &mut mask_rng()).unwrap().0, &up)));
        }
    }
    Check { name: "dropout", instances, worst, tol: GRAD_TOL }
}

pub fn grad_loss(instances: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = Rng::derived(seed, &[6, i as u64]);
        let b = small(&mut rng, 1, 8);
        let ps = rand_tensor(&mut rng, &[b]);
        let pt = rand_tensor(&mut rng, &[b]);
        let ts: Vec<f64> = (0..b).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let tt: Vec<f64> = (0..b).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, g) = mse_dual_head_loss(ps.data(), pt.data(), &ts, &tt).unwrap();
        let gs = Tensor::from_vec(&[b], g.steering).unwrap();
        let gt = Tensor::from_vec(&[b], g.throttle).unwrap();
        worst = worst
            .max(fd_compare(&ps, &gs, |p| mse_dual_head_loss(p.data(), pt.data(), &ts, &tt).unwrap().0))
            .max(fd_compare(&pt, &gt, |p| mse_dual_head_loss(ps.data(), p.data(), &ts, &tt).unwrap().0));
    }
    Check { name: "dual-head loss", instances, worst, tol: LOSS_GRAD_TOL }
}

pub fn all_gradient_checks(instances: usize, seed: u64) -> Vec<Check> {
    vec![
        grad_conv(instances, seed),
        grad_dense(instances, seed),
        grad_relu(instances, seed),
        grad_flatten(instances, seed),
        grad_dropout(instances, seed),
        grad_loss(instances, seed),
    ]
}

/// Textbook valid-padding convolution over NHWC input and (kh,kw,c,f)
/// kernels.
pub fn direct_conv(x: &[f64], xs: [usize; 4], k: &[f64], ks: [usize; 4], bias: &[f64], stride: usize) -> Vec<f64> {
    let [b, h, w, c] = xs;
    let [kh, kw, _, f] = ks;
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![0.0; b * oh * ow * f];
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..f {
                    let mut acc = bias[o];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            for ci in 0..c {
                                let xi = ((n * h + oy * stride + dy) * w + ox * stride + dx) * c + ci;
                                let ki = ((dy * kw + dx) * c + ci) * f + o;
                                acc += x[xi] * k[ki];
                            }
                        }
                    }
                    out[((n * oh + oy) * ow + ox) * f + o] = acc;
                }
            }
        }
    }
    out
}

/// conv2d_forward against [`direct_conv`] on random shapes and strides.
pub fn conv_oracle(shapes: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..shapes {
        let mut rng = Rng::derived(seed, &[7, i as u64]);
        let (kh, kw, s) = (small(&mut rng, 1, 5), small(&mut rng, 1, 5), small(&mut rng, 1, 3));
        let (h, w) = (kh + small(&mut rng, 0, 12), kw + small(&mut rng, 0, 12));
        let (b, c, f) = (small(&mut rng, 1, 3), small(&mut rng, 1, 4), small(&mut rng, 1, 6));
        let x = rand_tensor(&mut rng, &[b, h, w, c]);
        let k = rand_tensor(&mut rng, &[kh, kw, c, f]);
        let bias = rand_tensor(&mut rng, &[f]);
        let reference = direct_conv(x.data(), [b, h, w, c], k.data(), [kh, kw, c, f], bias.data(), s);
        // Alternate the batched and single-image entry points.
        let got = if b == 1 && i % 2 == 0 {
            let x3 = x.clone().reshape(&[h, w, c]).unwrap();
            conv2d_forward(&x3, &k, &bias, s).unwrap()
        } else {
            conv2d_forward(&x, &k, &bias, s).unwrap()
        };
        assert_eq!(got.len(), reference.len(), "shape mismatch on instance {i}");
        for (a, r) in got.data().iter().zip(&reference) {
            worst = worst.max((a - r).abs());
        }
    }
    Check { name: "conv2d vs direct loops", instances: shapes, worst, tol: CONV_TOL }
}

/// Small network with every layer type, for whole-model checks.
pub fn tiny_arch() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        LayerSpec::Input { height: 7, width: 6, channels: 3 },
        LayerSpec::Conv { filters: 3, kernel_h: 3, kernel_w: 2, stride: 2, relu: true },
        LayerSpec::Dropout { rate: 0.25 },
        LayerSpec::Conv { filters: 2, kernel_h: 2, kernel_w: 2, stride: 1, relu: true },
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 5, relu: true },
        LayerSpec::Dropout { rate: 0.1 },
        LayerSpec::OutputDense { units: 1, head: Head::Steering },
        LayerSpec::OutputDense { units: 1, head: Head::Throttle },
    ])
    .unwrap()
}

/// Backpropagation through the composed model against central differences
/// of the dual-head loss with respect to every parameter. In train mode the
/// dropout masks are replayed from the same seed for every evaluation.
/// `eps` is the difference step; pass [`FD_EPS`] unless a smaller step is
/// needed to stay clear of ReLU kinks.
pub fn full_model_gradient(mode: Mode, eps: f64, instances: usize, seed: u64) -> Check {
    let arch = tiny_arch();
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = Rng::derived(seed, &[7, inst as u64]);
        // He-uniform weights keep pre-activations larger than the step.
        let mut params = ModelParams::<f32>::init_with(&arch, rng.next_u64(), WeightInit::HeUniform).cast::<f64>();
        // Zero biases put every unit with an all-zero input exactly on the
        // ReLU kink; move them off it.
        for layer in &mut params.layers {
            for v in layer.bias.data_mut() {
                *v = rng.uniform(0.05, 0.2);
            }
        }
        let x = Tensor::from_vec(&[3, 7, 6, 3], (0..3 * 7 * 6 * 3).map(|_| rng.next_f64()).collect()).unwrap();
        let ts: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let tt: Vec<f64> = (0..3).map(|_| rng.uniform(0.0, 1.0)).collect();
        let mask_seed = rng.next_u64();
        let loss = |p: &ModelParams<f64>| {
            let (out, _) = model_forward(p, &x, mode, &mut Rng::new(mask_seed)).unwrap();
            mse_dual_head_loss(out.steering.data(), out.throttle.data(), &ts, &tt).unwrap().0
        };
        let (out, cache) = model_forward(&params, &x, mode, &mut Rng::new(mask_seed)).unwrap();
        let (_, g) = mse_dual_head_loss(out.steering.data(), out.throttle.data(), &ts, &tt).unwrap();
        let grads = model_backward(&params, &cache, &g.steering, &g.throttle).unwrap();

        let mut probe = params.clone();
        for t in 0..params.tensors().count() {
            let len = params.tensors().nth(t).unwrap().len();
            for i in 0..len {
                let orig = probe.tensors().nth(t).unwrap().data()[i];
                probe.tensors_mut().nth(t).unwrap().data_mut()[i] = orig + eps;
                let up = loss(&probe);
                probe.tensors_mut().nth(t).unwrap().data_mut()[i] = orig - eps;
                let down = loss(&probe);
                probe.tensors_mut().nth(t).unwrap().data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max(rel_err(grads.tensors().nth(t).unwrap().data()[i], numeric));
            }
        }
    }
    let name = match mode {
        Mode::Train => "full model (train, fixed masks)",
        Mode::Infer => "full model (infer)",
    };
    Check { name, instances, worst, tol: GRAD_TOL }
}
