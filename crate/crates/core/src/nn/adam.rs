//! Adam with bias correction.

use crate::nn::model::ModelParams;
use crate::nn::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// First and second moment estimates, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || params.tensors().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One in-place update. The step counter is incremented before the bias
/// corrections are computed, so the first call uses `t = 1`.
pub fn adam_step<T: Real>(params: &mut ModelParams<T>, grads: &ModelParams<T>, state: &mut AdamState<T>, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let step_size = T::lit(cfg.learning_rate / bc1);
    let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
    let eps = T::lit(cfg.eps);

    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        debug_assert_eq!(p.shape(), g.shape());
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p -= step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{ArchitectureSpec, Head, LayerSpec};

    fn scalar_arch() -> ArchitectureSpec {
        ArchitectureSpec::new(vec![
            LayerSpec::Input { height: 1, width: 1, channels: 1 },
            LayerSpec::Flatten,
            LayerSpec::OutputDense { units: 1, head: Head::Steering },
            LayerSpec::OutputDense { units: 1, head: Head::Throttle },
        ])
        .unwrap()
    }

    #[test]
    fn zero_grad_keeps_params() {
        let arch = scalar_arch();
        let mut p = ModelParams::<f64>::init(&arch, 1);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        st.m[0].data_mut()[0] = 0.0;
        adam_step(&mut p, &ModelParams::zeros(&arch), &mut st, &AdamConfig::default());
        assert_eq!(p, before);

        // Moments decay geometrically when gradients vanish.
        st.m[0].data_mut()[0] = 1.0;
        st.v[0].data_mut()[0] = 1.0;
        adam_step(&mut p, &ModelParams::zeros(&arch), &mut st, &AdamConfig::default());
        assert!((st.m[0].data()[0] - 0.9).abs() < 1e-15);
        assert!((st.v[0].data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let arch = scalar_arch();
        let mut p = ModelParams::<f64>::zeros(&arch);
        let mut g = ModelParams::<f64>::zeros(&arch);
        g.layers[0].weight.data_mut()[0] = 1.0;
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &g, &mut st, &cfg);
        // m_hat = v_hat = 1, so the update is lr / (1 + eps).
        let w = p.layers[0].weight.data()[0];
        assert!((w + 0.1).abs() < 1e-7, "{w}");
        assert_eq!(p.layers[1].weight.data()[0], 0.0);
    }

    #[test]
    fn deterministic() {
        let arch = scalar_arch();
        let p0 = ModelParams::<f32>::init(&arch, 3);
        let g = ModelParams::<f32>::init(&arch, 4);
        let run = || {
            let mut p = p0.clone();
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &g, &mut st, &AdamConfig::default());
            adam_step(&mut p, &g, &mut st, &AdamConfig::default());
            (p, st)
        };
        assert_eq!(run(), run());
    }
}
