//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, kept in f64.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Adam {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update in place. A non-finite gradient skips the step
    /// entirely, leaving parameters and moments untouched; returns whether
    /// the step was applied.
    pub fn step<T: Scalar>(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> bool {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if !grads.iter().all(Tensor::is_finite) {
            log::warn!(
                "non-finite gradient at optimizer step {}; update skipped",
                self.step + 1
            );
            return false;
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(j, (&w, &g))| {
                    let g = g.as_f64();
                    m[j] = b1 * m[j] + (1.0 - b1) * g;
                    v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                    let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    T::from_f64(w.as_f64() - update)
                })
                .collect();
            *p = Tensor::from_vec(p.shape().clone(), data).expect("same shape");
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Tensor<f64>> {
        vec![Tensor::from_vec([3], vec![0.5, -1.0, 2.0]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(opt.step(&mut p, &[Tensor::zeros([3]).unwrap()]));
        assert_eq!(p, params());
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let mut p = params();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let g = Tensor::from_vec([3], vec![0.3, -4.0, 1e-3]).unwrap();
        opt.step(&mut p, std::slice::from_ref(&g));
        for ((after, before), g) in p[0].data().iter().zip(params()[0].data()).zip(g.data()) {
            let expected = -1e-3 * g.signum();
            // |g| / (|g| + eps) differs from 1 by at most eps / |g|
            assert!((after - before - expected).abs() < 1e-3 * 1e-8 / g.abs() + 1e-15);
        }
    }

    #[test]
    fn deterministic() {
        let g = vec![Tensor::from_vec([3], vec![0.1, 0.2, -0.3]).unwrap()];
        let run = || {
            let mut p = params();
            let mut opt = Adam::new(AdamConfig::default(), &p);
            opt.step(&mut p, &g);
            opt.step(&mut p, &g);
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = params();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(!opt.step(
            &mut p,
            &[Tensor::from_vec([3], vec![f64::NAN, 0.0, 0.0]).unwrap()]
        ));
        assert_eq!(p, params());
        assert_eq!(opt.steps(), 0);
    }
}
