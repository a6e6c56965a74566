use odeformer::field::{FieldConfig, FieldParams};
use odeformer::gradcheck::relative_error;
use odeformer::integrate::fields::{LinearField, ZeroField};
use odeformer::integrate::{
    adjoint_backward, backprop_through_solver, dopri5_integrate, integrate, rk4_integrate,
    SolveError, TrajectoryVars,
};
use odeformer::tensor::alloc;
use odeformer::{EvoformerField, SolverConfig, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec([1, v.len()], v.to_vec()).unwrap()
}

fn sum_endpoint(tape: &Tape<f64>, traj: &TrajectoryVars<f64>) -> Result<Var<f64>, SolveError> {
    Ok(tape.sum(&traj.final_state[0])?)
}

fn sq_endpoint(tape: &Tape<f64>, traj: &TrajectoryVars<f64>) -> Result<Var<f64>, SolveError> {
    let s = &traj.final_state[0];
    Ok(tape.sum(&tape.mul(s, s)?)?)
}

fn evoformer(seed: u64) -> (EvoformerField<f64>, [Tensor<f64>; 2]) {
    let cfg = FieldConfig::new(4, 4, 2, 2).unwrap();
    let field = EvoformerField::new(cfg, FieldParams::init(&cfg, seed).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut draw = |dims: [usize; 3]| {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let state = [draw([2, 3, 4]), draw([3, 3, 4])];
    (field, state)
}

#[test]
fn rk4_matches_rotation_closed_form() {
    let (omega, damping) = (2.0, 0.3);
    let field = LinearField::rotation(omega, damping);
    let sol = rk4_integrate(&field, &[row(&[1.0, 0.0])], &SolverConfig::rk4(64)).unwrap();
    let decay = (-damping).exp();
    let got = sol.final_state[0].data();
    // s M with M = [[-d, -w], [w, -d]] turns (1, 0) clockwise
    let want = [decay * omega.cos(), -decay * omega.sin()];
    assert!(
        (got[0] - want[0]).abs() < 1e-7 && (got[1] - want[1]).abs() < 1e-7,
        "{got:?} vs {want:?}"
    );
}

#[test]
fn dopri5_matches_rotation_and_counts_evaluations() {
    let field = LinearField::rotation(3.0, 0.0);
    let sol = dopri5_integrate(
        &field,
        &[row(&[1.0, 0.0])],
        &SolverConfig::dopri5(1e-9, 1e-12),
    )
    .unwrap();
    let got = sol.final_state[0].data();
    assert!((got[0] - 3.0f64.cos()).abs() < 1e-7);
    assert!((got[1] + 3.0f64.sin()).abs() < 1e-7);
    // FSAL: six new evaluations per attempted step plus the first stage
    let attempts = sol.stats.accepted_steps + sol.stats.rejected_steps;
    assert_eq!(sol.stats.field_evals, 1 + 6 * attempts);
}

#[test]
fn zero_field_is_identity_for_both_solvers() {
    let s0 = [row(&[0.5, -1.5, 2.0])];
    for config in [SolverConfig::rk4(7), SolverConfig::dopri5(1e-6, 1e-9)] {
        let sol = integrate(&ZeroField, &s0, &config.with_checkpoints(vec![0.25, 0.5])).unwrap();
        assert_eq!(sol.final_state, s0);
        for (_, state) in &sol.checkpoints {
            assert_eq!(state, &s0);
        }
    }
}

#[test]
fn rk4_is_bit_deterministic() {
    let (field, state) = evoformer(3);
    let config = SolverConfig::rk4(12).with_checkpoints(vec![1.0 / 3.0]);
    let a = rk4_integrate(&field, &state, &config).unwrap();
    let b = rk4_integrate(&field, &state, &config).unwrap();
    for (x, y) in a
        .final_state
        .iter()
        .chain(&a.checkpoints[0].1)
        .zip(b.final_state.iter().chain(&b.checkpoints[0].1))
    {
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
    }
}

#[test]
fn checkpoints_on_the_grid_do_not_change_the_endpoint() {
    let (field, state) = evoformer(4);
    let plain = rk4_integrate(&field, &state, &SolverConfig::rk4(12)).unwrap();
    let grid: Vec<f64> = (1..12).map(|k| k as f64 / 12.0).collect();
    let with = rk4_integrate(
        &field,
        &state,
        &SolverConfig::rk4(12).with_checkpoints(grid),
    )
    .unwrap();
    assert_eq!(plain.final_state, with.final_state);
    assert_eq!(plain.stats.field_evals, with.stats.field_evals);
    // off-grid checkpoints split a step: four more evaluations
    let split = rk4_integrate(
        &field,
        &state,
        &SolverConfig::rk4(12).with_checkpoints(vec![0.1]),
    )
    .unwrap();
    assert_eq!(split.stats.field_evals, plain.stats.field_evals + 4);
}

#[test]
fn backprop_scalar_derivative_matches_exponential() {
    for theta in [0.0, 0.5, -1.0] {
        let g = backprop_through_solver(
            &LinearField::scalar(theta),
            &[row(&[1.0])],
            &SolverConfig::rk4(16),
            sum_endpoint,
        )
        .unwrap();
        assert!((g.param_grads[0].item() - theta.exp()).abs() < 1e-4);
        assert!((g.state_grads[0].item() - theta.exp()).abs() < 1e-4);
    }
}

#[test]
fn backprop_matches_finite_differences_of_the_discrete_solve() {
    let base = LinearField::rotation(1.3, 0.2);
    let s0 = row(&[0.4, -0.9]);
    let config = SolverConfig::rk4(5).with_checkpoints(vec![0.3]);
    let loss = |tape: &Tape<f64>, traj: &TrajectoryVars<f64>| -> Result<Var<f64>, SolveError> {
        let mid = &traj.checkpoints[0].1[0];
        let end = sq_endpoint(tape, traj)?;
        Ok(tape.add(&end, &tape.sum(mid)?)?)
    };
    let g = backprop_through_solver(&base, std::slice::from_ref(&s0), &config, loss).unwrap();
    let value = |m: &Tensor<f64>, s: &Tensor<f64>| {
        let sol = rk4_integrate(
            &LinearField::new(m.clone()).unwrap(),
            std::slice::from_ref(s),
            &config,
        )
        .unwrap();
        sol.final_state[0].sq_norm() + sol.checkpoints[0].1[0].sum()
    };
    let h = 1e-6;
    let m = base.matrix();
    for i in 0..4 {
        let bump = |d: f64| {
            let mut v = m.to_vec();
            v[i] += d;
            Tensor::from_vec([2, 2], v).unwrap()
        };
        let numeric = (value(&bump(h), &s0) - value(&bump(-h), &s0)) / (2.0 * h);
        assert!(relative_error(g.param_grads[0].data()[i], numeric) < 1e-6);
    }
    for i in 0..2 {
        let bump = |d: f64| {
            let mut v = s0.to_vec();
            v[i] += d;
            row(&v)
        };
        let numeric = (value(m, &bump(h)) - value(m, &bump(-h))) / (2.0 * h);
        assert!(relative_error(g.state_grads[0].data()[i], numeric) < 1e-6);
    }
}

#[test]
fn adjoint_error_shrinks_with_steps() {
    let (field, state) = evoformer(5);
    let loss = |tape: &Tape<f64>, traj: &TrajectoryVars<f64>| -> Result<Var<f64>, SolveError> {
        let a = tape.sum(&tape.mul(&traj.final_state[0], &traj.final_state[0])?)?;
        Ok(tape.add(&a, &tape.mean(&traj.final_state[1])?)?)
    };
    let mut previous = f64::INFINITY;
    for steps in [8, 16, 32, 64] {
        let config = SolverConfig::rk4(steps);
        let bp = backprop_through_solver(&field, &state, &config, loss).unwrap();
        let adj = adjoint_backward(&field, &state, &config, loss).unwrap();
        assert_eq!(bp.loss, adj.loss);
        let (mut num, mut den) = (0.0, 0.0);
        for (a, b) in adj
            .param_grads
            .iter()
            .chain(&adj.state_grads)
            .zip(bp.param_grads.iter().chain(&bp.state_grads))
        {
            num += a.sub(b).unwrap().sq_norm();
            den += b.sq_norm();
        }
        let err = (num / den).sqrt();
        assert!(
            err < previous,
            "steps {steps}: {err:.3e} after {previous:.3e}"
        );
        previous = err;
    }
    assert!(previous < 1e-6);
}

#[test]
fn adjoint_peak_memory_does_not_grow_with_steps() {
    let (field, state) = evoformer(6);
    let peak = |steps: usize| {
        let base = alloc::live_buffers();
        alloc::reset_peak();
        adjoint_backward(&field, &state, &SolverConfig::rk4(steps), sum_endpoint_pair).unwrap();
        alloc::peak_buffers() - base
    };
    let backprop_peak = |steps: usize| {
        let base = alloc::live_buffers();
        alloc::reset_peak();
        backprop_through_solver(&field, &state, &SolverConfig::rk4(steps), sum_endpoint_pair)
            .unwrap();
        alloc::peak_buffers() - base
    };
    let (a8, a64) = (peak(8), peak(64));
    assert!(
        (a64 as f64 - a8 as f64).abs() <= 0.05 * a8 as f64,
        "{a8} vs {a64}"
    );
    // the contrast case grows roughly linearly
    assert!(backprop_peak(64) > 4 * backprop_peak(8));
}

fn sum_endpoint_pair(tape: &Tape<f64>, traj: &TrajectoryVars<f64>) -> Result<Var<f64>, SolveError> {
    Ok(tape.add(
        &tape.sum(&traj.final_state[0])?,
        &tape.sum(&traj.final_state[1])?,
    )?)
}

#[test]
fn divergence_reports_a_time() {
    match rk4_integrate(
        &LinearField::scalar(1e80),
        &[row(&[1.0])],
        &SolverConfig::rk4(4),
    ) {
        Err(SolveError::Divergence { t }) => assert!((0.0..=1.0).contains(&t)),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(dopri5_integrate(
        &LinearField::scalar(1e80),
        &[row(&[1.0])],
        &SolverConfig::dopri5(1e-6, 1e-9)
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rk4_halving_ratio_near_sixteen(lambda in -1.0..-0.2f64, n in prop::sample::select(vec![4usize, 8, 16])) {
        let err = |steps: usize| {
            let sol = rk4_integrate(&LinearField::scalar(lambda), &[row(&[1.0])], &SolverConfig::rk4(steps)).unwrap();
            (sol.final_state[0].item() - lambda.exp()).abs()
        };
        let ratio = err(n) / err(2 * n);
        prop_assert!((13.0..=19.0).contains(&ratio), "ratio {}", ratio);
    }

    #[test]
    fn dopri5_meets_tolerance_on_decay(lambda in -3.0..0.0f64, rtol in prop::sample::select(vec![1e-4, 1e-6, 1e-8])) {
        let sol = dopri5_integrate(&LinearField::scalar(lambda), &[row(&[1.0])], &SolverConfig::dopri5(rtol, rtol)).unwrap();
        prop_assert!((sol.final_state[0].item() - lambda.exp()).abs() <= 100.0 * rtol);
    }
}
