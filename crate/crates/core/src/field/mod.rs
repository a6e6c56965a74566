//! The gated Evoformer vector field and its learned parameters.
//!
//! One evaluation runs a full pass of simplified Evoformer updates (row
//! attention with pair bias, column attention, MSA transition, outer product
//! mean, triangle multiplicative update, pair transition), then returns the
//! residual difference scaled by the time-dependent gates `sigma_m(t)` and
//! `sigma_z(t)`.

mod ops;
pub mod params_io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::VectorField;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

pub use ops::{
    msa_column_attention, msa_row_attention_pair_bias, msa_transition, outer_product_mean,
    pair_transition, time_embedding, triangle_update, vector_field,
};

/// Rank of the outer-product-mean projections.
pub const OPM_RANK: usize = 32;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("depth t = {0} lies outside [0, 1]")]
    Domain(f64),
    #[error("invalid field config: {0}")]
    Config(String),
    #[error("parameter set does not match the config: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// MSA channels.
    pub c_m: usize,
    /// Pair channels.
    pub c_z: usize,
    pub heads: usize,
    pub head_dim: usize,
    #[serde(default = "default_opm_rank")]
    pub opm_rank: usize,
}

fn default_opm_rank() -> usize {
    OPM_RANK
}

impl Default for FieldConfig {
    /// Hidden width 64 on both streams, split as 4 heads of 16.
    fn default() -> Self {
        FieldConfig {
            c_m: 64,
            c_z: 64,
            heads: 4,
            head_dim: 16,
            opm_rank: OPM_RANK,
        }
    }
}

impl FieldConfig {
    pub fn new(c_m: usize, c_z: usize, heads: usize, head_dim: usize) -> Result<Self, FieldError> {
        let cfg = FieldConfig {
            c_m,
            c_z,
            heads,
            head_dim,
            opm_rank: OPM_RANK,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `heads * head_dim`.
    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let fields = [
            ("c_m", self.c_m),
            ("c_z", self.c_z),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("opm_rank", self.opm_rank),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(FieldError::Config(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }

    /// (fan_in, fan_out) of every linear layer, in [`FieldWeights::LABELS`] order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let (cm, cz, h, hd, r) = (self.c_m, self.c_z, self.heads, self.hidden(), self.opm_rank);
        vec![
            (cm, 3 * hd),
            (cm, hd),
            (hd, cm),
            (cz, h),
            (cm, hd),
            (cm, hd),
            (hd, cm),
            (cm, 4 * cm),
            (4 * cm, cm),
            (cm, r),
            (cm, r),
            (r, cz),
            (cz, hd),
            (cz, hd),
            (cz, cz),
            (hd, cz),
            (cz, 4 * cz),
            (4 * cz, cz),
            (1, self.head_dim),
            (self.head_dim, 2),
        ]
    }
}

/// Weight and bias of one linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

macro_rules! field_layers {
    ($($field:ident => $label:literal),* $(,)?) => {
        /// Every learned weight of the field, generic over the leaf type so
        /// the same layout serves plain tensors and tape variables.
        #[derive(Debug, Clone, PartialEq)]
        pub struct FieldWeights<P> {
            $(pub $field: Linear<P>,)*
        }

        impl<P> FieldWeights<P> {
            pub const LABELS: &'static [&'static str] = &[$($label),*];

            pub fn layers(&self) -> Vec<&Linear<P>> {
                vec![$(&self.$field),*]
            }

            pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> FieldWeights<Q> {
                FieldWeights {
                    $($field: Linear {
                        weight: f(&self.$field.weight),
                        bias: f(&self.$field.bias),
                    },)*
                }
            }

            /// Rebuild from `weight, bias` pairs in label order.
            pub fn from_flat(flat: impl IntoIterator<Item = P>) -> Option<Self> {
                let mut it = flat.into_iter();
                let out = FieldWeights {
                    $($field: Linear { weight: it.next()?, bias: it.next()? },)*
                };
                it.next().is_none().then_some(out)
            }
        }
    };
}

field_layers! {
    row_qkv => "row_attention.qkv",
    row_gate => "row_attention.gate",
    row_out => "row_attention.out",
    pair_bias => "pair_bias",
    col_proj => "column_attention.proj",
    col_gate => "column_attention.gate",
    col_out => "column_attention.out",
    msa_1 => "msa_transition.1",
    msa_2 => "msa_transition.2",
    opm_a => "outer_product_mean.a",
    opm_b => "outer_product_mean.b",
    opm_out => "outer_product_mean.out",
    tri_a => "triangle_update.a",
    tri_b => "triangle_update.b",
    tri_gate => "triangle_update.gate",
    tri_out => "triangle_update.out",
    pair_1 => "pair_transition.1",
    pair_2 => "pair_transition.2",
    time_1 => "time_embedding.1",
    time_2 => "time_embedding.2",
}

impl<P: Clone> FieldWeights<P> {
    /// `weight, bias` pairs in label order.
    pub fn flatten(&self) -> Vec<P> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    /// Tensor names matching [`flatten`](Self::flatten).
    pub fn tensor_names() -> Vec<String> {
        Self::LABELS
            .iter()
            .flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")])
            .collect()
    }

    /// Indices in [`flatten`](Self::flatten) order of the layers whose
    /// output feeds a residual update directly.
    pub fn output_projection_indices() -> Vec<usize> {
        const OUT: [&str; 6] = [
            "row_attention.out",
            "column_attention.out",
            "msa_transition.2",
            "outer_product_mean.out",
            "triangle_update.out",
            "pair_transition.2",
        ];
        Self::LABELS
            .iter()
            .enumerate()
            .filter(|(_, l)| OUT.contains(l))
            .flat_map(|(i, _)| [2 * i, 2 * i + 1])
            .collect()
    }
}

pub type FieldParams<T> = FieldWeights<Tensor<T>>;

impl<T: Scalar> FieldWeights<Tensor<T>> {
    /// Weights uniform in `±sqrt(1 / fan_in)`, zero biases, deterministic per seed.
    pub fn init(config: &FieldConfig, seed: u64) -> Result<Self, FieldError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            let bound = (1.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                .collect();
            flat.push(Tensor::from_vec([fan_in, fan_out], w)?);
            flat.push(Tensor::zeros([fan_out])?);
        }
        Ok(Self::from_flat(flat).expect("layer_dims matches the layer list"))
    }

    pub fn zeros(config: &FieldConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let mut flat = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            flat.push(Tensor::zeros([fan_in, fan_out])?);
            flat.push(Tensor::zeros([fan_out])?);
        }
        Ok(Self::from_flat(flat).expect("layer_dims matches the layer list"))
    }

    /// Zero every output projection and its bias, making the field vanish.
    pub fn with_zero_output_projections(&self) -> Self {
        let zeroed = Self::output_projection_indices();
        let flat = self
            .flatten()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                if zeroed.contains(&i) {
                    t.zeros_like()
                } else {
                    t
                }
            })
            .collect::<Vec<_>>();
        Self::from_flat(flat).expect("same layout")
    }

    pub fn cast<U: Scalar>(&self) -> FieldWeights<Tensor<U>> {
        self.map(Tensor::cast)
    }

    /// Check every tensor against the shapes implied by `config`.
    pub fn check_shapes(&self, config: &FieldConfig) -> Result<(), FieldError> {
        for ((label, layer), (fan_in, fan_out)) in Self::LABELS
            .iter()
            .zip(self.layers())
            .zip(config.layer_dims())
        {
            if layer.weight.dims() != [fan_in, fan_out] || layer.bias.dims() != [fan_out] {
                return Err(FieldError::Params(format!(
                    "{label}: expected weight [{fan_in}, {fan_out}] and bias [{fan_out}], got {} and {}",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.flatten().iter().map(Tensor::numel).sum()
    }
}

/// The Evoformer vector field with a fixed parameter set.
#[derive(Debug, Clone)]
pub struct EvoformerField<T> {
    config: FieldConfig,
    params: FieldParams<T>,
}

impl<T: Scalar> EvoformerField<T> {
    pub fn new(config: FieldConfig, params: FieldParams<T>) -> Result<Self, FieldError> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(EvoformerField { config, params })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn params(&self) -> &FieldParams<T> {
        &self.params
    }

    /// `(dm/dt, dz/dt)` without recording gradients.
    pub fn evaluate(
        &self,
        m: &Tensor<T>,
        z: &Tensor<T>,
        t: f64,
    ) -> Result<(Tensor<T>, Tensor<T>), FieldError> {
        let tape = Tape::no_grad();
        let w = self.params.map(|p| tape.constant(p.clone()));
        let (dm, dz) = vector_field(
            &tape,
            &w,
            &self.config,
            &tape.constant(m.clone()),
            &tape.constant(z.clone()),
            t,
        )?;
        Ok((dm.into_value(), dz.into_value()))
    }

    /// `(sigma_m(t), sigma_z(t))`.
    pub fn gates(&self, t: f64) -> Result<(T, T), FieldError> {
        let tape = Tape::no_grad();
        let w = self.params.map(|p| tape.constant(p.clone()));
        let (sm, sz) = time_embedding(&tape, &w, t)?;
        Ok((sm.value().item(), sz.value().item()))
    }
}

impl<T: Scalar> VectorField<T> for EvoformerField<T> {
    fn parameters(&self) -> Vec<Tensor<T>> {
        self.params.flatten()
    }

    fn eval(
        &self,
        tape: &Tape<T>,
        params: &[Var<T>],
        state: &[Var<T>],
        t: f64,
    ) -> Result<Vec<Var<T>>, FieldError> {
        let w = FieldWeights::from_flat(params.iter().cloned()).ok_or_else(|| {
            FieldError::Params(format!(
                "expected {} tensors",
                2 * FieldWeights::<()>::LABELS.len()
            ))
        })?;
        let [m, z] = state else {
            return Err(FieldError::Shape(format!(
                "state must be (m, z), got {} tensors",
                state.len()
            )));
        };
        let (dm, dz) = vector_field(tape, &w, &self.config, m, z, t)?;
        Ok(vec![dm, dz])
    }
}
