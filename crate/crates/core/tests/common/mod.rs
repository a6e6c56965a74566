//! Shared helpers for the integration suites.
#![allow(dead_code)]

pub mod oracle;

use odeformer::field::{FieldConfig, FieldParams, FieldWeights};
use odeformer::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(dims: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(
        dims,
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Initialized weights with random (non-zero) biases, so bias paths are
/// exercised too.
pub fn random_params(cfg: &FieldConfig, seed: u64) -> FieldParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let base = FieldParams::<f64>::init(cfg, seed).unwrap();
    let flat = base
        .flatten()
        .into_iter()
        .map(|t| {
            if t.rank() == 1 {
                random_tensor(t.dims(), 0.2, &mut rng)
            } else {
                t
            }
        })
        .collect::<Vec<_>>();
    FieldParams::from_flat(flat).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A random field evaluation point for the oracle comparisons.
#[derive(Debug, Clone)]
pub struct Case {
    pub cfg: FieldConfig,
    pub params: FieldParams<f64>,
    pub m: Tensor<f64>,
    pub z: Tensor<f64>,
    pub t: f64,
}

pub fn case() -> impl proptest::strategy::Strategy<Value = Case> {
    use proptest::prelude::*;
    (
        1usize..4,
        1usize..5,
        1usize..3,
        1usize..4,
        2usize..7,
        2usize..7,
        any::<u64>(),
        0.0..=1.0f64,
    )
        .prop_map(|(s, r, h, d, c_m, c_z, seed, t)| {
            let mut cfg = FieldConfig::new(c_m, c_z, h, d).unwrap();
            cfg.opm_rank = 3;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Case {
                cfg,
                params: random_params(&cfg, seed),
                m: random_tensor(&[s, r, c_m], 1.0, &mut rng),
                z: random_tensor(&[r, r, c_z], 1.0, &mut rng),
                t,
            }
        })
}

/// Run `f` with the case's parameters and inputs as constants on a no-grad tape.
pub fn with_tape<R>(
    c: &Case,
    f: impl FnOnce(&Tape<f64>, &FieldWeights<Var<f64>>, Var<f64>, Var<f64>) -> R,
) -> R {
    let tape = Tape::no_grad();
    let w = c.params.map(|p| tape.constant(p.clone()));
    let m = tape.constant(c.m.clone());
    let z = tape.constant(c.z.clone());
    f(&tape, &w, m, z)
}
