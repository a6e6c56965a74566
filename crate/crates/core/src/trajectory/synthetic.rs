//! Teacher-generated trajectories standing in for recorded Evoformer runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Checkpoint, FormatError, Trajectory, BLOCKS};
use crate::field::{EvoformerField, FieldConfig, FieldParams};
use crate::integrate::{rk4_integrate, SolveError, SolverConfig};
use crate::tensor::Tensor;

/// Standard deviation of the random initial `m` and `z`.
pub const INIT_STD: f64 = 0.5;

/// Shape of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub count: usize,
    pub s: usize,
    pub r: usize,
    pub config: FieldConfig,
    /// Blocks between recorded checkpoints. Block 48 is always recorded.
    pub stride: u32,
}

impl SyntheticSpec {
    pub fn blocks(&self) -> Vec<u32> {
        let mut blocks: Vec<u32> = (0..=BLOCKS).step_by(self.stride.max(1) as usize).collect();
        if blocks.last() != Some(&BLOCKS) {
            blocks.push(BLOCKS);
        }
        blocks
    }

    /// The frozen teacher whose flow generates every trajectory.
    pub fn teacher(&self) -> Result<FieldParams<f32>, SolveError> {
        Ok(FieldParams::init(&self.config, self.seed)?)
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor<f32> {
    let dist = Normal::new(0.0f32, INIT_STD as f32).expect("positive std");
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| dist.sample(rng)).collect()).expect("positive extents")
}

/// Draw random inputs, integrate them through the teacher with 48 RK4 steps
/// and record every `stride`-th block.
///
/// Protein `i` draws from its own ChaCha stream, so a dataset is a prefix of
/// any larger dataset with the same seed.
pub fn gen_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<Trajectory>, SolveError> {
    if spec.stride == 0 || spec.stride > BLOCKS {
        return Err(SolveError::Config(format!(
            "stride must lie in 1..={BLOCKS}, got {}",
            spec.stride
        )));
    }
    if spec.s == 0 || spec.r == 0 {
        return Err(SolveError::Config(format!(
            "S and R must be positive, got {} and {}",
            spec.s, spec.r
        )));
    }
    let field = EvoformerField::new(spec.config, spec.teacher()?)?;
    let blocks = spec.blocks();
    let solver = SolverConfig::rk4(BLOCKS as usize)
        .with_checkpoints(blocks.iter().map(|&b| b as f64 / BLOCKS as f64).collect());
    let (c_m, c_z) = (spec.config.c_m, spec.config.c_z);

    (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let m = normal_tensor(&mut rng, [spec.s, spec.r, c_m]);
            let z = normal_tensor(&mut rng, [spec.r, spec.r, c_z]);
            let sol = rk4_integrate(&field, &[m, z], &solver)?;
            let checkpoints = blocks
                .iter()
                .zip(sol.checkpoints)
                .map(|(&b, (_, mut state))| {
                    let z = state.pop().expect("two tensors");
                    let m = state.pop().expect("two tensors");
                    Checkpoint::new(b, m, z)
                })
                .collect();
            Trajectory::new(format!("syn{}_{i:04}", spec.seed), checkpoints)
                .map_err(|e: FormatError| SolveError::Config(e.to_string()))
        })
        .collect()
}
