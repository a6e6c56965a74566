//! Small analytic fields with closed-form solutions, used to test the solvers
//! and by the demo.

use super::VectorField;
use crate::field::FieldError;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// `ds/dt = 0` for any state layout.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl<T: Scalar> VectorField<T> for ZeroField {
    fn parameters(&self) -> Vec<Tensor<T>> {
        Vec::new()
    }

    fn eval(
        &self,
        tape: &Tape<T>,
        _: &[Var<T>],
        state: &[Var<T>],
        _: f64,
    ) -> Result<Vec<Var<T>>, FieldError> {
        Ok(state
            .iter()
            .map(|s| tape.constant(s.value().zeros_like()))
            .collect())
    }
}

/// `ds/dt = s M` for a single row-vector state `s` of shape `[1, n]`.
///
/// With `n = 1` and `M = [[theta]]` this is exponential growth or decay,
/// `s(t) = s0 * exp(theta * t)`.
#[derive(Debug, Clone)]
pub struct LinearField<T> {
    matrix: Tensor<T>,
}

impl<T: Scalar> LinearField<T> {
    pub fn new(matrix: Tensor<T>) -> Result<Self, FieldError> {
        match matrix.dims() {
            [a, b] if a == b => Ok(LinearField { matrix }),
            _ => Err(FieldError::Shape(format!(
                "linear field needs a square matrix, got {}",
                matrix.shape()
            ))),
        }
    }

    pub fn scalar(theta: T) -> Self {
        LinearField {
            matrix: Tensor::from_vec([1, 1], vec![theta]).expect("1x1"),
        }
    }

    /// Rotation by angular speed `omega` in the plane, optionally damped.
    pub fn rotation(omega: T, damping: T) -> Self {
        LinearField {
            matrix: Tensor::from_vec([2, 2], vec![-damping, -omega, omega, -damping]).expect("2x2"),
        }
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }
}

impl<T: Scalar> VectorField<T> for LinearField<T> {
    fn parameters(&self) -> Vec<Tensor<T>> {
        vec![self.matrix.clone()]
    }

    fn eval(
        &self,
        tape: &Tape<T>,
        params: &[Var<T>],
        state: &[Var<T>],
        _: f64,
    ) -> Result<Vec<Var<T>>, FieldError> {
        let [s] = state else {
            return Err(FieldError::Shape(format!(
                "linear field takes one state tensor, got {}",
                state.len()
            )));
        };
        Ok(vec![tape.matmul(s, &params[0])?])
    }
}
