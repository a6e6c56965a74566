//! Central finite-difference checks of tape gradients, and the self-check
//! suite behind `odeformer gradcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::field::{EvoformerField, FieldConfig, FieldParams};
use crate::integrate::{
    adjoint_backward, backprop_through_solver, rk4_integrate, rk4_on_tape, SolveError,
    SolverConfig, TrajectoryVars, VectorField,
};
use crate::tensor::{OpKind, Tape, Tensor, TensorError, Var};

/// Relative error denominator floor.
const REL_FLOOR: f64 = 1e-12;

/// Relative discrepancy `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Max relative error between tape gradients of `f` and central differences
/// with step `h`, over every element of every input in `point`.
pub fn grad_check<F, E>(f: F, point: &[Tensor<f64>], h: f64) -> Result<f64, E>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>, E>,
    E: From<TensorError>,
{
    check(f, point, h, None)
}

/// [`grad_check`] with the backward rule of `fault` deliberately corrupted.
pub fn grad_check_with_fault<F, E>(
    f: F,
    point: &[Tensor<f64>],
    h: f64,
    fault: OpKind,
) -> Result<f64, E>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>, E>,
    E: From<TensorError>,
{
    check(f, point, h, Some(fault))
}

fn check<F, E>(f: F, point: &[Tensor<f64>], h: f64, fault: Option<OpKind>) -> Result<f64, E>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>, E>,
    E: From<TensorError>,
{
    let tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    let leaves: Vec<Var<f64>> = point.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&tape, &leaves)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|v| grads.get_or_zeros(v)).collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64, E> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<f64>> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut worst: f64 = 0.0;
    let mut inputs: Vec<Tensor<f64>> = point.to_vec();
    for (which, base) in point.iter().enumerate() {
        for i in 0..base.numel() {
            let mut data = base.to_vec();
            data[i] = base.data()[i] + h;
            inputs[which] = Tensor::from_vec(base.shape().clone(), data.clone())?;
            let plus = eval(&inputs)?;
            data[i] = base.data()[i] - h;
            inputs[which] = Tensor::from_vec(base.shape().clone(), data)?;
            let minus = eval(&inputs)?;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic[which].data()[i], numeric));
        }
        inputs[which] = base.clone();
    }
    Ok(worst)
}

/// Outcome of one suite section.
#[derive(Debug, Clone, Serialize)]
pub struct Section {
    pub name: &'static str,
    pub threshold: f64,
    /// Per-item maximum errors.
    pub items: Vec<(String, f64)>,
    pub passed: bool,
}

impl Section {
    pub fn max_error(&self) -> f64 {
        self.items.iter().map(|i| i.1).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub sections: Vec<Section>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.sections.iter().all(|s| s.passed)
    }
}

const OP_THRESHOLD: f64 = 1e-6;
const SOLVER_THRESHOLD: f64 = 1e-6;
const ADJOINT_THRESHOLD_16: f64 = 1e-3;
const ADJOINT_THRESHOLD_64: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(
        dims,
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("positive extents")
}

/// `sum(w * op(x))` with random weights, so every input has an O(1) gradient.
fn op_section(rng: &mut ChaCha8Rng, fault: Option<OpKind>) -> Result<Section, TensorError> {
    type Op = fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>, TensorError>;
    let ops: [(&str, &[&[usize]], Op); 11] = [
        ("matmul", &[&[3, 4], &[4, 2]], |t, v| t.matmul(&v[0], &v[1])),
        ("batched matmul", &[&[2, 3, 4], &[2, 4, 3]], |t, v| {
            t.matmul(&v[0], &v[1])
        }),
        ("broadcast mul", &[&[2, 3, 4], &[3, 4]], |t, v| {
            t.mul(&v[0], &v[1])
        }),
        ("broadcast add", &[&[2, 3, 4], &[4]], |t, v| {
            t.add(&v[0], &v[1])
        }),
        ("softmax", &[&[3, 5]], |t, v| t.softmax(&v[0], 1)),
        ("layer norm", &[&[2, 3, 6]], |t, v| t.layer_norm(&v[0], 2)),
        ("relu", &[&[4, 5]], |t, v| t.relu(&v[0])),
        ("sigmoid", &[&[4, 5]], |t, v| t.sigmoid(&v[0])),
        ("silu", &[&[4, 5]], |t, v| t.silu(&v[0])),
        ("permute", &[&[2, 3, 4]], |t, v| {
            t.permute(&v[0], &[2, 0, 1])
        }),
        ("mean axis", &[&[2, 3, 4]], |t, v| t.mean_axis(&v[0], 1)),
    ];
    let mut items = Vec::with_capacity(ops.len());
    for (name, dims, op) in ops {
        let point: Vec<Tensor<f64>> = dims.iter().map(|d| uniform(rng, d, 1.0)).collect();
        let out_dims = {
            let tape = Tape::no_grad();
            let vars: Vec<Var<f64>> = point.iter().map(|p| tape.constant(p.clone())).collect();
            op(&tape, &vars)?.dims().to_vec()
        };
        let weights = uniform(rng, &out_dims, 1.0);
        let f = |tape: &Tape<f64>, v: &[Var<f64>]| {
            let y = op(tape, v)?;
            tape.sum(&tape.mul(&y, &tape.constant(weights.clone()))?)
        };
        let err = match fault {
            Some(kind) => grad_check_with_fault(f, &point, 1e-6, kind)?,
            None => grad_check(f, &point, 1e-6)?,
        };
        items.push((name.to_string(), err));
    }
    let passed = items.iter().all(|i| i.1 <= OP_THRESHOLD);
    Ok(Section {
        name: "op-level finite differences",
        threshold: OP_THRESHOLD,
        items,
        passed,
    })
}

struct Instance {
    field: EvoformerField<f64>,
    state: Vec<Tensor<f64>>,
    target: Vec<Tensor<f64>>,
}

fn instance(rng: &mut ChaCha8Rng, seed: u64) -> Result<Instance, SolveError> {
    let cfg = FieldConfig::new(8, 8, 2, 4)?;
    let base = FieldParams::<f64>::init(&cfg, seed)?;
    // init biases are zero; randomize them so their paths are exercised
    let flat = base
        .flatten()
        .into_iter()
        .map(|t| {
            if t.rank() == 1 {
                uniform(rng, t.dims(), 0.2)
            } else {
                t
            }
        })
        .collect::<Vec<_>>();
    let field = EvoformerField::new(cfg, FieldParams::from_flat(flat).expect("same layout"))?;
    let state = vec![uniform(rng, &[2, 3, 8], 1.0), uniform(rng, &[3, 3, 8], 1.0)];
    let target = vec![uniform(rng, &[2, 3, 8], 1.0), uniform(rng, &[3, 3, 8], 1.0)];
    Ok(Instance {
        field,
        state,
        target,
    })
}

fn endpoint_loss<'a>(
    target: &'a [Tensor<f64>],
) -> impl Fn(&Tape<f64>, &TrajectoryVars<f64>) -> Result<Var<f64>, SolveError> + 'a {
    move |tape, traj| crate::train::loss_endpoint(tape, &traj.final_state, &target[0], &target[1])
}

fn loss_value(
    inst: &Instance,
    params: &[Tensor<f64>],
    state: &[Tensor<f64>],
    solver: &SolverConfig,
) -> Result<f64, SolveError> {
    let field = EvoformerField::new(
        *inst.field.config(),
        FieldParams::from_flat(params.iter().cloned()).expect("same layout"),
    )?;
    let sol = rk4_integrate(&field, state, solver)?;
    crate::train::endpoint_mse(
        (&sol.final_state[0], &sol.final_state[1]),
        (&inst.target[0], &inst.target[1]),
    )
}

/// Directional derivatives along random unit directions in the joint
/// (parameter, initial state) space against central differences. A
/// per-entry comparison at this step size is limited by difference-quotient
/// roundoff on small entries; the directional form is not.
fn solver_section(
    inst: &Instance,
    rng: &mut ChaCha8Rng,
    fault: Option<OpKind>,
) -> Result<Section, SolveError> {
    let solver = SolverConfig::rk4(8);
    let tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    let params: Vec<Var<f64>> = inst
        .field
        .parameters()
        .into_iter()
        .map(|p| tape.leaf(p))
        .collect();
    let state: Vec<Var<f64>> = inst.state.iter().map(|s| tape.leaf(s.clone())).collect();
    let (traj, _) = rk4_on_tape(&inst.field, &tape, &params, state.clone(), &solver)?;
    let loss = endpoint_loss(&inst.target)(&tape, &traj)?;
    let grads = tape.backward(&loss)?;
    let leaves: Vec<&Var<f64>> = params.iter().chain(&state).collect();
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|v| grads.get_or_zeros(v)).collect();
    let base: Vec<Tensor<f64>> = leaves.iter().map(|v| v.value().clone()).collect();
    let n_params = params.len();

    let h = 1e-5;
    let mut items = Vec::new();
    for k in 0..4 {
        let dir: Vec<Tensor<f64>> = base.iter().map(|b| uniform(rng, b.dims(), 1.0)).collect();
        let norm = dir.iter().map(|d| d.sq_norm()).sum::<f64>().sqrt();
        let dir: Vec<Tensor<f64>> = dir.iter().map(|d| d.scale(1.0 / norm)).collect();
        let shifted = |sign: f64| -> Result<f64, SolveError> {
            let moved: Vec<Tensor<f64>> = base
                .iter()
                .zip(&dir)
                .map(|(b, d)| b.axpy(sign * h, d))
                .collect::<Result<_, _>>()?;
            loss_value(inst, &moved[..n_params], &moved[n_params..], &solver)
        };
        let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
        let projected: f64 = analytic
            .iter()
            .zip(&dir)
            .map(|(g, d)| {
                g.data()
                    .iter()
                    .zip(d.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum();
        items.push((format!("direction {k}"), relative_error(projected, numeric)));
    }
    let passed = items.iter().all(|i| i.1 <= SOLVER_THRESHOLD);
    Ok(Section {
        name: "backprop through rk4 vs finite differences",
        threshold: SOLVER_THRESHOLD,
        items,
        passed,
    })
}

fn adjoint_section(inst: &Instance) -> Result<Section, SolveError> {
    let mut items = Vec::new();
    for steps in [8, 16, 32, 64] {
        let solver = SolverConfig::rk4(steps);
        let bp = backprop_through_solver(
            &inst.field,
            &inst.state,
            &solver,
            endpoint_loss(&inst.target),
        )?;
        let adj = adjoint_backward(
            &inst.field,
            &inst.state,
            &solver,
            endpoint_loss(&inst.target),
        )?;
        let (mut num, mut den) = (0.0, 0.0);
        for (a, b) in adj
            .param_grads
            .iter()
            .chain(&adj.state_grads)
            .zip(bp.param_grads.iter().chain(&bp.state_grads))
        {
            num += a.sub(b)?.sq_norm();
            den += b.sq_norm();
        }
        items.push((
            format!("{steps} steps"),
            (num / den.max(f64::MIN_POSITIVE)).sqrt(),
        ));
    }
    let monotone = items.windows(2).all(|w| w[1].1 < w[0].1);
    let passed =
        monotone && items[1].1 <= ADJOINT_THRESHOLD_16 && items[3].1 <= ADJOINT_THRESHOLD_64;
    Ok(Section {
        name: "adjoint vs backprop (relative norm, monotone in steps)",
        threshold: ADJOINT_THRESHOLD_64,
        items,
        passed,
    })
}

/// Run all three sections on a tiny field (S=2, R=3, c=8, H=2, d=4) in f64.
///
/// `fault` corrupts one backward rule in the op-level and solver sections,
/// which must then fail.
pub fn run_suite(seed: u64, fault: Option<OpKind>) -> Result<SuiteReport, SolveError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = op_section(&mut rng, fault)?;
    let inst = instance(&mut rng, seed)?;
    let solver = solver_section(&inst, &mut rng, fault)?;
    let adjoint = adjoint_section(&inst)?;
    Ok(SuiteReport {
        sections: vec![ops, solver, adjoint],
    })
}
