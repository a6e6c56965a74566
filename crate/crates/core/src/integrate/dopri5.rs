//! Dormand-Prince 5(4) with basic step-size control.

use super::{
    eval_field, OdeSolution, SolveError, SolverConfig, SolverStats, VectorField, MIN_STEP,
};
use crate::tensor::{Scalar, Tape, Tensor, Var};

const SAFETY: f64 = 0.9;
const FACTOR_MIN: f64 = 0.2;
const FACTOR_MAX: f64 = 5.0;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

type State<T> = Vec<Tensor<T>>;

fn combine<T: Scalar>(
    base: &[Tensor<T>],
    h: f64,
    coefs: &[f64],
    ks: &[State<T>],
) -> Result<State<T>, SolveError> {
    base.iter()
        .enumerate()
        .map(|(i, b)| {
            let mut acc = b.clone();
            for (c, k) in coefs.iter().zip(ks) {
                if *c != 0.0 {
                    acc = acc.axpy(T::from_f64(h * c), &k[i])?;
                }
            }
            Ok(acc)
        })
        .collect()
}

/// RMS over all elements of `err_i / (atol + rtol * max(|y0_i|, |y1_i|))`.
fn error_norm<T: Scalar>(
    err: &[Tensor<T>],
    y0: &[Tensor<T>],
    y1: &[Tensor<T>],
    rtol: f64,
    atol: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((e, a), b) in err.iter().zip(y0).zip(y1) {
        for ((e, a), b) in e.data().iter().zip(a.data()).zip(b.data()) {
            let scale = atol + rtol * a.as_f64().abs().max(b.as_f64().abs());
            let r = e.as_f64() / scale;
            sum += r * r;
        }
        n += e.numel();
    }
    (sum / n.max(1) as f64).sqrt()
}

/// Adaptive Dormand-Prince integration over `[0, 1]`.
///
/// Steps are shortened to land exactly on each checkpoint time.
pub fn dopri5_integrate<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    state0: &[Tensor<T>],
    config: &SolverConfig,
) -> Result<OdeSolution<T>, SolveError> {
    config.validate()?;
    let tape = Tape::no_grad();
    let params: Vec<Var<T>> = field
        .parameters()
        .into_iter()
        .map(|p| tape.constant(p))
        .collect();
    let mut stats = SolverStats::default();
    let mut f = |state: &[Tensor<T>], t: f64| -> Result<State<T>, SolveError> {
        stats.field_evals += 1;
        let vars: Vec<Var<T>> = state.iter().map(|s| tape.constant(s.clone())).collect();
        Ok(eval_field(field, &tape, &params, &vars, t)?
            .into_iter()
            .map(Var::into_value)
            .collect())
    };

    let mut targets: Vec<f64> = config.checkpoint_times.clone();
    if targets.last() != Some(&1.0) {
        targets.push(1.0);
    }
    let reported = config.checkpoint_times.len();

    let mut t = 0.0f64;
    let mut y: State<T> = state0.to_vec();
    let mut checkpoints = Vec::with_capacity(reported);
    let mut h = config.initial_step;
    let mut k1 = f(&y, t)?;

    for (idx, &target) in targets.iter().enumerate() {
        while t < target {
            let step = h.min(target - t);
            if step < MIN_STEP {
                return Err(SolveError::StepUnderflow { t, h: step });
            }
            let mut ks: Vec<State<T>> = vec![k1.clone()];
            let mut y_new = Vec::new();
            for s in 1..7 {
                let ys = combine(&y, step, A[s], &ks)?;
                let t_stage = if s >= 5 { t + step } else { t + C[s] * step };
                ks.push(f(&ys, t_stage.min(1.0))?);
                // the last stage is evaluated at the fifth-order solution
                y_new = ys;
            }
            let err = combine(
                &y.iter().map(Tensor::zeros_like).collect::<Vec<_>>(),
                step,
                &E,
                &ks,
            )?;
            let norm = error_norm(&err, &y, &y_new, config.rtol, config.atol);
            let finite = norm.is_finite() && y_new.iter().all(Tensor::is_finite);

            if finite && norm <= 1.0 {
                t = if step == target - t { target } else { t + step };
                y = y_new;
                k1 = ks.pop().expect("seven stages");
                stats.accepted_steps += 1;
                let factor = if norm == 0.0 {
                    FACTOR_MAX
                } else {
                    (SAFETY * norm.powf(-0.2)).clamp(FACTOR_MIN, FACTOR_MAX)
                };
                // a step clipped to a checkpoint does not shrink the next one
                h = h.max(step) * factor;
            } else {
                stats.rejected_steps += 1;
                h = if finite {
                    step * (SAFETY * norm.powf(-0.2)).clamp(FACTOR_MIN, FACTOR_MAX)
                } else {
                    step * FACTOR_MIN
                };
                if h < MIN_STEP {
                    return Err(if finite {
                        SolveError::StepUnderflow { t, h }
                    } else {
                        SolveError::Divergence { t }
                    });
                }
            }
        }
        if idx < reported {
            checkpoints.push((target, y.clone()));
        }
    }
    Ok(OdeSolution {
        final_state: y,
        checkpoints,
        stats,
    })
}
