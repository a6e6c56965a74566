//! ODE solvers over depth `t` in `[0, 1]`.
//!
//! States are lists of tensors (a small pytree), so the Evoformer field and
//! the scalar analytic fields share every solver and both gradient paths.

mod adjoint;
mod dopri5;
pub mod fields;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldError;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

pub use adjoint::adjoint_backward;
pub use dopri5::dopri5_integrate;

/// Default RK4 step count: 48 field evaluations, one per replaced block.
pub const DEFAULT_STEPS: usize = 12;

/// Smallest step the adaptive solver will take.
pub const MIN_STEP: f64 = 1e-10;

/// A time-dependent vector field over a list-of-tensors state.
pub trait VectorField<T: Scalar> {
    /// Learned parameters in a fixed order.
    fn parameters(&self) -> Vec<Tensor<T>>;

    /// `ds/dt` at `(state, t)`, evaluated on `tape` with `params` standing
    /// in for [`parameters`](Self::parameters).
    fn eval(
        &self,
        tape: &Tape<T>,
        params: &[Var<T>],
        state: &[Var<T>],
        t: f64,
    ) -> Result<Vec<Var<T>>, FieldError>;
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("state became non-finite at t = {t}")]
    Divergence { t: f64 },
    #[error("step size {h:e} fell below {MIN_STEP:e} at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("loss: {0}")]
    Loss(String),
}

impl From<TensorError> for SolveError {
    fn from(e: TensorError) -> Self {
        SolveError::Field(FieldError::Tensor(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Dopri5,
}

/// Solver choice and controls. The integration span is always `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: Method,
    /// Uniform RK4 steps.
    pub steps: usize,
    pub rtol: f64,
    pub atol: f64,
    /// First trial step of the adaptive solver.
    pub initial_step: f64,
    /// Sorted times in `[0, 1]` at which to report the state.
    pub checkpoint_times: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Rk4,
            steps: DEFAULT_STEPS,
            rtol: 1e-6,
            atol: 1e-8,
            initial_step: 1.0 / 50.0,
            checkpoint_times: Vec::new(),
        }
    }
}

impl SolverConfig {
    pub fn rk4(steps: usize) -> Self {
        SolverConfig {
            steps,
            ..Self::default()
        }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        SolverConfig {
            method: Method::Dopri5,
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn with_checkpoints(mut self, times: Vec<f64>) -> Self {
        self.checkpoint_times = times;
        self
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |msg: String| Err(SolveError::Config(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() && self.atol.is_finite()) {
            return bad(format!(
                "tolerances must be positive, got rtol={} atol={}",
                self.rtol, self.atol
            ));
        }
        if !(self.initial_step > 0.0 && self.initial_step <= 1.0) {
            return bad(format!(
                "initial_step must lie in (0, 1], got {}",
                self.initial_step
            ));
        }
        if let Some(t) = self
            .checkpoint_times
            .iter()
            .find(|t| !(0.0..=1.0).contains(*t))
        {
            return bad(format!("checkpoint time {t} outside [0, 1]"));
        }
        if self.checkpoint_times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoint times must be strictly increasing".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub field_evals: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Endpoint state plus the state at every requested checkpoint time.
#[derive(Debug, Clone)]
pub struct OdeSolution<T> {
    pub final_state: Vec<Tensor<T>>,
    pub checkpoints: Vec<(f64, Vec<Tensor<T>>)>,
    pub stats: SolverStats,
}

/// Solution variables on a tape, handed to loss functions.
#[derive(Debug, Clone)]
pub struct TrajectoryVars<T> {
    pub final_state: Vec<Var<T>>,
    pub checkpoints: Vec<(f64, Vec<Var<T>>)>,
}

/// Loss value with gradients for every parameter and initial-state tensor.
#[derive(Debug, Clone)]
pub struct GradientResult<T> {
    pub loss: T,
    pub param_grads: Vec<Tensor<T>>,
    pub state_grads: Vec<Tensor<T>>,
    pub solution: OdeSolution<T>,
}

/// Node of the RK4 time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GridNode {
    pub t: f64,
    pub checkpoint: Option<usize>,
}

/// Uniform grid `j / steps`, with checkpoint times snapped onto grid points
/// they coincide with and otherwise inserted, splitting the containing step.
pub(crate) fn time_grid(steps: usize, checkpoints: &[f64]) -> Vec<GridNode> {
    let h = 1.0 / steps as f64;
    let mut nodes: Vec<GridNode> = (0..=steps)
        .map(|j| GridNode {
            t: j as f64 / steps as f64,
            checkpoint: None,
        })
        .collect();
    for (k, &c) in checkpoints.iter().enumerate() {
        let j = (c * steps as f64).round() as usize;
        if (nodes_grid_time(j, steps) - c).abs() <= 1e-6 * h {
            let at = nodes
                .iter()
                .position(|n| n.t == nodes_grid_time(j, steps))
                .expect("grid point");
            nodes[at].checkpoint = Some(k);
        } else {
            let at = nodes.iter().position(|n| n.t > c).expect("c < 1");
            nodes.insert(
                at,
                GridNode {
                    t: c,
                    checkpoint: Some(k),
                },
            );
        }
    }
    nodes
}

fn nodes_grid_time(j: usize, steps: usize) -> f64 {
    j as f64 / steps as f64
}

fn all_finite<T: Scalar>(state: &[Var<T>]) -> bool {
    state.iter().all(|v| v.value().is_finite())
}

fn eval_field<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    tape: &Tape<T>,
    params: &[Var<T>],
    state: &[Var<T>],
    t: f64,
) -> Result<Vec<Var<T>>, SolveError> {
    let out = field.eval(tape, params, state, t)?;
    if out.len() != state.len() || out.iter().zip(state).any(|(o, s)| o.shape() != s.shape()) {
        return Err(
            FieldError::Shape("field output does not match the state layout".into()).into(),
        );
    }
    Ok(out)
}

fn axpy_vars<T: Scalar>(
    tape: &Tape<T>,
    base: &[Var<T>],
    terms: &[(f64, &[Var<T>])],
) -> Result<Vec<Var<T>>, SolveError> {
    base.iter()
        .enumerate()
        .map(|(i, b)| {
            let mut acc = b.clone();
            for (coef, k) in terms {
                let scaled = tape.scale(&k[i], T::from_f64(*coef))?;
                acc = tape.add(&acc, &scaled)?;
            }
            Ok(acc)
        })
        .collect()
}

/// One classical RK4 step from `t0` to `t1`.
pub(crate) fn rk4_step<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    tape: &Tape<T>,
    params: &[Var<T>],
    state: &[Var<T>],
    t0: f64,
    t1: f64,
) -> Result<Vec<Var<T>>, SolveError> {
    let h = t1 - t0;
    let tm = 0.5 * (t0 + t1);
    let k1 = eval_field(field, tape, params, state, t0)?;
    let s2 = axpy_vars(tape, state, &[(0.5 * h, &k1)])?;
    let k2 = eval_field(field, tape, params, &s2, tm)?;
    let s3 = axpy_vars(tape, state, &[(0.5 * h, &k2)])?;
    let k3 = eval_field(field, tape, params, &s3, tm)?;
    let s4 = axpy_vars(tape, state, &[(h, &k3)])?;
    let k4 = eval_field(field, tape, params, &s4, t1)?;
    axpy_vars(
        tape,
        state,
        &[
            (h / 6.0, &k1),
            (h / 3.0, &k2),
            (h / 3.0, &k3),
            (h / 6.0, &k4),
        ],
    )
}

/// RK4 over `[0, 1]` with every operation recorded on `tape` (when it is
/// recording).
pub(crate) fn rk4_on_tape<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    tape: &Tape<T>,
    params: &[Var<T>],
    state0: Vec<Var<T>>,
    config: &SolverConfig,
) -> Result<(TrajectoryVars<T>, SolverStats), SolveError> {
    config.validate()?;
    let grid = time_grid(config.steps, &config.checkpoint_times);
    let mut state = state0;
    let mut checkpoints = Vec::with_capacity(config.checkpoint_times.len());
    let mut stats = SolverStats::default();
    for (i, node) in grid.iter().enumerate() {
        if node.checkpoint.is_some() {
            checkpoints.push((node.t, state.clone()));
        }
        let Some(next) = grid.get(i + 1) else { break };
        state = rk4_step(field, tape, params, &state, node.t, next.t)?;
        stats.field_evals += 4;
        stats.accepted_steps += 1;
        if !all_finite(&state) {
            return Err(SolveError::Divergence { t: next.t });
        }
    }
    Ok((
        TrajectoryVars {
            final_state: state,
            checkpoints,
        },
        stats,
    ))
}

fn values<T: Scalar>(vars: &[Var<T>]) -> Vec<Tensor<T>> {
    vars.iter().map(|v| v.value().clone()).collect()
}

fn solution_from_vars<T: Scalar>(traj: &TrajectoryVars<T>, stats: SolverStats) -> OdeSolution<T> {
    OdeSolution {
        final_state: values(&traj.final_state),
        checkpoints: traj
            .checkpoints
            .iter()
            .map(|(t, s)| (*t, values(s)))
            .collect(),
        stats,
    }
}

/// Fixed-step classical RK4 with uniform step `1 / steps`.
pub fn rk4_integrate<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    state0: &[Tensor<T>],
    config: &SolverConfig,
) -> Result<OdeSolution<T>, SolveError> {
    let tape = Tape::no_grad();
    let params: Vec<Var<T>> = field
        .parameters()
        .into_iter()
        .map(|p| tape.constant(p))
        .collect();
    let state = state0.iter().map(|s| tape.constant(s.clone())).collect();
    let (traj, stats) = rk4_on_tape(field, &tape, &params, state, config)?;
    Ok(solution_from_vars(&traj, stats))
}

/// Integrate with the method named in `config`.
pub fn integrate<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    state0: &[Tensor<T>],
    config: &SolverConfig,
) -> Result<OdeSolution<T>, SolveError> {
    match config.method {
        Method::Rk4 => rk4_integrate(field, state0, config),
        Method::Dopri5 => dopri5_integrate(field, state0, config),
    }
}

/// Gradients by recording every solver stage on one tape. Memory grows
/// linearly with the step count.
pub fn backprop_through_solver<T, F, L>(
    field: &F,
    state0: &[Tensor<T>],
    config: &SolverConfig,
    loss_fn: L,
) -> Result<GradientResult<T>, SolveError>
where
    T: Scalar,
    F: VectorField<T> + ?Sized,
    L: Fn(&Tape<T>, &TrajectoryVars<T>) -> Result<Var<T>, SolveError>,
{
    if config.method != Method::Rk4 {
        return Err(SolveError::Config(
            "backprop through the solver needs rk4".into(),
        ));
    }
    let tape = Tape::new();
    let params: Vec<Var<T>> = field
        .parameters()
        .into_iter()
        .map(|p| tape.leaf(p))
        .collect();
    let state: Vec<Var<T>> = state0.iter().map(|s| tape.leaf(s.clone())).collect();
    let (traj, stats) = rk4_on_tape(field, &tape, &params, state.clone(), config)?;
    let loss = loss_fn(&tape, &traj)?;
    let solution = solution_from_vars(&traj, stats);
    drop(traj);
    let loss_value = loss.value().item();
    let grads = tape.backward(&loss)?;
    Ok(GradientResult {
        loss: loss_value,
        param_grads: params.iter().map(|p| grads.get_or_zeros(p)).collect(),
        state_grads: state.iter().map(|s| grads.get_or_zeros(s)).collect(),
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::fields::{LinearField, ZeroField};
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec([1, 1], vec![v]).unwrap()
    }

    #[test]
    fn grid_snaps_and_splits() {
        let g = time_grid(4, &[0.25, 0.3, 1.0]);
        let ts: Vec<f64> = g.iter().map(|n| n.t).collect();
        assert_eq!(ts, vec![0.0, 0.25, 0.3, 0.5, 0.75, 1.0]);
        assert_eq!(g[1].checkpoint, Some(0));
        assert_eq!(g[2].checkpoint, Some(1));
        assert_eq!(g[5].checkpoint, Some(2));
        // block times stored as f32 still land on the grid
        let g = time_grid(12, &[(8.0f32 / 48.0) as f64]);
        assert_eq!(g.len(), 13);
        assert_eq!(g[2].checkpoint, Some(0));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::rk4(0).validate().is_err());
        assert!(SolverConfig::dopri5(0.0, 1e-6).validate().is_err());
        assert!(SolverConfig::rk4(2)
            .with_checkpoints(vec![0.5, 0.5])
            .validate()
            .is_err());
        assert!(SolverConfig::rk4(2)
            .with_checkpoints(vec![1.5])
            .validate()
            .is_err());
        let json = serde_json::to_string(&SolverConfig::default()).unwrap();
        assert!(json.contains("\"rk4\""));
    }

    #[test]
    fn zero_field_is_identity() {
        let s0 = vec![scalar(0.7), Tensor::from_vec([2], vec![1.0, -2.0]).unwrap()];
        let sol = rk4_integrate(
            &ZeroField,
            &s0,
            &SolverConfig::rk4(5).with_checkpoints(vec![0.5]),
        )
        .unwrap();
        assert_eq!(sol.final_state, s0);
        assert_eq!(sol.checkpoints[0].1, s0);
        assert_eq!(sol.stats.field_evals, 4 * 6);
    }

    #[test]
    fn one_step_growth_hand_value() {
        let f = LinearField::scalar(1.0);
        let sol = rk4_integrate(&f, &[scalar(1.0)], &SolverConfig::rk4(1)).unwrap();
        assert!((sol.final_state[0].item() - 65.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn fourth_order_convergence() {
        let f = LinearField::scalar(-1.0);
        let err = |n| {
            let sol = rk4_integrate(&f, &[scalar(1.0)], &SolverConfig::rk4(n)).unwrap();
            (sol.final_state[0].item() - (-1.0f64).exp()).abs()
        };
        let ratio = err(8) / err(16);
        assert!((13.0..=19.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn checkpoints_on_grid_do_not_change_the_endpoint() {
        let f = LinearField::scalar(-0.8);
        let plain = rk4_integrate(&f, &[scalar(1.3)], &SolverConfig::rk4(12)).unwrap();
        let cfg = SolverConfig::rk4(12)
            .with_checkpoints((1..=6).map(|b| b as f64 * 8.0 / 48.0).collect());
        let split = rk4_integrate(&f, &[scalar(1.3)], &cfg).unwrap();
        assert_eq!(plain.final_state, split.final_state);
        assert_eq!(split.checkpoints.len(), 6);
    }

    #[test]
    fn backprop_scalar_derivative() {
        let f = LinearField::scalar(0.0);
        let res =
            backprop_through_solver(&f, &[scalar(1.0)], &SolverConfig::rk4(16), |tape, traj| {
                Ok(tape.sum(&traj.final_state[0])?)
            })
            .unwrap();
        assert!((res.param_grads[0].item() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn backprop_zero_field_state_grad_is_ones() {
        let s0 = vec![Tensor::from_vec([3], vec![0.1, 0.2, 0.3]).unwrap()];
        let res = backprop_through_solver(&ZeroField, &s0, &SolverConfig::rk4(4), |tape, traj| {
            Ok(tape.sum(&traj.final_state[0])?)
        })
        .unwrap();
        assert_eq!(res.state_grads[0].to_vec(), vec![1.0; 3]);
    }

    #[test]
    fn divergence_reports_time() {
        let f = LinearField::scalar(1e80);
        let err = rk4_integrate(&f, &[scalar(1.0)], &SolverConfig::rk4(2)).unwrap_err();
        assert!(
            matches!(err, SolveError::Divergence { t } if t == 0.5),
            "{err}"
        );
    }

    #[test]
    fn rk4_is_deterministic() {
        let f =
            LinearField::new(Tensor::from_vec([2, 2], vec![0.1, -1.0, 1.0, 0.2]).unwrap()).unwrap();
        let s0 = [Tensor::from_vec([1, 2], vec![1.0, 0.5]).unwrap()];
        let a = rk4_integrate(&f, &s0, &SolverConfig::rk4(7)).unwrap();
        let b = rk4_integrate(&f, &s0, &SolverConfig::rk4(7)).unwrap();
        assert_eq!(a.final_state, b.final_state);
    }
}
