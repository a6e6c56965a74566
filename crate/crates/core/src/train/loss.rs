//! Mean-squared trajectory losses, on the tape for training and plain for
//! reporting.

use crate::integrate::SolveError;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Supervised state at one depth.
#[derive(Debug, Clone)]
pub struct Target<T> {
    pub time: f64,
    pub m: Tensor<T>,
    pub z: Tensor<T>,
}

/// Times closer than this are the same checkpoint.
const TIME_MATCH: f64 = 1e-9;

fn mse_var<T: Scalar>(
    tape: &Tape<T>,
    pred: &Var<T>,
    target: &Tensor<T>,
) -> Result<Var<T>, SolveError> {
    if pred.shape() != target.shape() {
        return Err(SolveError::Loss(format!(
            "prediction {} vs target {}",
            pred.shape(),
            target.shape()
        )));
    }
    let diff = tape.sub(pred, &tape.constant(target.clone()))?;
    let sq = tape.mul(&diff, &diff)?;
    Ok(tape.mean(&sq)?)
}

/// MSE over `m` plus MSE over `z`, equally weighted.
pub fn loss_endpoint<T: Scalar>(
    tape: &Tape<T>,
    pred: &[Var<T>],
    target_m: &Tensor<T>,
    target_z: &Tensor<T>,
) -> Result<Var<T>, SolveError> {
    let [m, z] = pred else {
        return Err(SolveError::Loss(format!(
            "expected (m, z), got {} tensors",
            pred.len()
        )));
    };
    let lm = mse_var(tape, m, target_m)?;
    let lz = mse_var(tape, z, target_z)?;
    Ok(tape.add(&lm, &lz)?)
}

/// Mean of [`loss_endpoint`] over every supervised checkpoint after `t = 0`.
///
/// `checkpoints` and `targets` must list the same times in the same order.
pub fn loss_multi_checkpoint<T: Scalar>(
    tape: &Tape<T>,
    checkpoints: &[(f64, Vec<Var<T>>)],
    targets: &[Target<T>],
) -> Result<Var<T>, SolveError> {
    if checkpoints.len() != targets.len() {
        return Err(SolveError::Loss(format!(
            "{} solution checkpoints for {} targets",
            checkpoints.len(),
            targets.len()
        )));
    }
    let mut total: Option<Var<T>> = None;
    let mut n = 0usize;
    for ((t, state), target) in checkpoints.iter().zip(targets) {
        if (t - target.time).abs() > TIME_MATCH {
            return Err(SolveError::Loss(format!(
                "solution time {t} does not match target time {}",
                target.time
            )));
        }
        if *t == 0.0 {
            continue;
        }
        let l = loss_endpoint(tape, state, &target.m, &target.z)?;
        total = Some(match total {
            Some(acc) => tape.add(&acc, &l)?,
            None => l,
        });
        n += 1;
    }
    let total =
        total.ok_or_else(|| SolveError::Loss("no supervised checkpoint after t = 0".into()))?;
    Ok(tape.scale(&total, T::one() / T::from_f64(n as f64))?)
}

/// [`loss_endpoint`] without a tape, accumulated in f64.
pub fn endpoint_mse<T: Scalar>(
    pred: (&Tensor<T>, &Tensor<T>),
    target: (&Tensor<T>, &Tensor<T>),
) -> Result<f64, SolveError> {
    let mse = |a: &Tensor<T>, b: &Tensor<T>| -> Result<f64, SolveError> {
        if a.shape() != b.shape() {
            return Err(SolveError::Loss(format!(
                "prediction {} vs target {}",
                a.shape(),
                b.shape()
            )));
        }
        let sum: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| {
                let d = x.as_f64() - y.as_f64();
                d * d
            })
            .sum();
        Ok(sum / a.numel() as f64)
    };
    Ok(mse(pred.0, target.0)? + mse(pred.1, target.1)?)
}
