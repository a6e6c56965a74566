//! Continuous-depth Evoformer.
//!
//! The 48 stacked Evoformer blocks are replaced by one learned vector field
//! `f(m, z, t)` over the MSA representation `m` (S x R x c_m) and the pair
//! representation `z` (R x R x c_z), integrated over depth `t` in `[0, 1]`.
//!
//! - [`tensor`]: dense tensors and a reverse-mode tape.
//! - [`field`]: the gated Evoformer vector field and its parameters.
//! - [`integrate`]: RK4 and Dormand-Prince solvers, backprop-through-solver
//!   and adjoint gradients.
//! - [`trajectory`]: the EVOT checkpoint container and synthetic teacher data.
//! - [`train`]: checkpoint and endpoint supervision, Adam, early stopping.
//! - [`bench`]: runtime scaling benchmark with polynomial least-squares fits.

pub mod bench;
pub mod field;
pub mod gradcheck;
pub mod integrate;
pub mod tensor;
pub mod train;
pub mod trajectory;

pub use field::{EvoformerField, FieldConfig, FieldParams};
pub use integrate::{Method, OdeSolution, SolverConfig, VectorField};
pub use tensor::{Scalar, Shape, Tape, Tensor, TensorError, Var};
