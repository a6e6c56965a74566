use odeformer::field::{FieldConfig, FieldParams};
use odeformer::integrate::{backprop_through_solver, SolveError, TrajectoryVars};
use odeformer::train::{
    self, loss_endpoint, loss_multi_checkpoint, Adam, AdamConfig, Phase, Target, TrainConfig,
};
use odeformer::trajectory::{gen_synthetic_dataset, SyntheticSpec, Trajectory, BLOCKS};
use odeformer::{EvoformerField, SolverConfig, Tape, Tensor, Var};

fn dataset(count: usize, s: usize, r: usize, cfg: FieldConfig) -> Vec<Trajectory> {
    gen_synthetic_dataset(&SyntheticSpec {
        seed: 7,
        count,
        s,
        r,
        config: cfg,
        stride: 8,
    })
    .unwrap()
}

fn targets(t: &Trajectory) -> Vec<Target<f32>> {
    t.checkpoints
        .iter()
        .filter(|c| c.block_index > 0)
        .map(|c| Target {
            time: c.block_index as f64 / BLOCKS as f64,
            m: c.m.clone(),
            z: c.z.clone(),
        })
        .collect()
}

fn state0(t: &Trajectory) -> Vec<Tensor<f32>> {
    vec![t.checkpoints[0].m.clone(), t.checkpoints[0].z.clone()]
}

/// Multi-checkpoint loss and gradients of one protein.
fn step(field: &EvoformerField<f32>, t: &Trajectory) -> (f32, Vec<Tensor<f32>>) {
    let tg = targets(t);
    let solver = SolverConfig::default().with_checkpoints(tg.iter().map(|x| x.time).collect());
    let g = backprop_through_solver(
        field,
        &state0(t),
        &solver,
        |tape: &Tape<f32>, traj: &TrajectoryVars<f32>| {
            loss_multi_checkpoint(tape, &traj.checkpoints, &tg)
        },
    )
    .unwrap();
    (g.loss, g.param_grads)
}

/// Threshold from a pilot run of exactly this setup, which measured 19% of
/// the initial loss.
#[test]
fn fifty_steps_cut_the_training_loss() {
    let cfg = FieldConfig::new(16, 16, 2, 8).unwrap();
    let data = dataset(8, 4, 16, cfg);
    let mut flat = FieldParams::<f32>::init(&cfg, 1234).unwrap().flatten();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        &flat,
    );
    let field_of = |flat: &[Tensor<f32>]| {
        EvoformerField::new(cfg, FieldParams::from_flat(flat.iter().cloned()).unwrap()).unwrap()
    };
    let mean_loss = |field: &EvoformerField<f32>| {
        data.iter().map(|t| step(field, t).0 as f64).sum::<f64>() / data.len() as f64
    };

    let before = mean_loss(&field_of(&flat));
    for k in 0..50 {
        let (_, grads) = step(&field_of(&flat), &data[k % data.len()]);
        assert!(adam.step(&mut flat, &grads));
    }
    let after = mean_loss(&field_of(&flat));
    assert!(after <= 0.2 * before, "{before:e} -> {after:e}");
}

#[test]
fn endpoint_gradient_reaches_almost_every_tensor() {
    let cfg = FieldConfig::new(8, 8, 2, 4).unwrap();
    let data = dataset(3, 3, 5, cfg);
    for (seed, t) in data.iter().enumerate() {
        let params = FieldParams::<f32>::init(&cfg, 100 + seed as u64).unwrap();
        let end = t.checkpoint(BLOCKS).unwrap();
        let g = backprop_through_solver(
            &EvoformerField::new(cfg, params).unwrap(),
            &state0(t),
            &SolverConfig::default(),
            |tape: &Tape<f32>, traj: &TrajectoryVars<f32>| -> Result<Var<f32>, SolveError> {
                loss_endpoint(tape, &traj.final_state, &end.m, &end.z)
            },
        )
        .unwrap();
        let live = g.param_grads.iter().filter(|t| t.max_abs() > 0.0).count();
        let dead: Vec<String> = g
            .param_grads
            .iter()
            .zip(FieldParams::<f32>::tensor_names())
            .filter(|(t, _)| t.max_abs() == 0.0)
            .map(|(_, n)| n)
            .collect();
        assert!(
            live as f64 >= 0.95 * g.param_grads.len() as f64,
            "zero gradients: {dead:?}"
        );
    }
}

#[test]
fn evaluation_agrees_with_the_training_loop() {
    let cfg = FieldConfig::new(8, 8, 2, 4).unwrap();
    let data = dataset(4, 2, 4, cfg);
    let init = FieldParams::<f32>::init(&cfg, 3).unwrap();
    let config = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let out = train::train_main(&cfg, &init, &data[..3], &data[3..], &config).unwrap();
    let eval = train::evaluate(&cfg, &init, &data[3..], &config.solver).unwrap();
    assert!((eval.mean - out.initial_val_loss).abs() <= 1e-12 * eval.mean);
    assert_eq!(eval.per_protein.len(), 1);
    assert_eq!(eval.per_protein[0].0, data[3].id);
    // evaluation leaves the parameters untouched and is repeatable
    assert_eq!(
        train::evaluate(&cfg, &init, &data[3..], &config.solver).unwrap(),
        eval
    );
    assert!(train::evaluate(&cfg, &init, &[], &config.solver).is_err());
}

#[test]
fn runs_are_reproducible_and_never_return_worse_parameters() {
    let cfg = FieldConfig::new(8, 8, 2, 4).unwrap();
    let data = dataset(5, 2, 4, cfg);
    let init = FieldParams::<f32>::init(&cfg, 9).unwrap();
    let config = TrainConfig {
        max_epochs: 4,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train::train_preliminary(&cfg, &init, &data[..4], &data[4..], &config).unwrap();
    let b = train::train_preliminary(&cfg, &init, &data[..4], &data[4..], &config).unwrap();
    assert_eq!(a.params, b.params);
    let losses = |o: &train::TrainOutcome| {
        o.metrics
            .iter()
            .map(|m| (m.epoch, m.split, m.loss.to_bits(), m.field_evals))
            .collect::<Vec<_>>()
    };
    assert_eq!(losses(&a), losses(&b));

    let best_seen = a
        .metrics
        .iter()
        .filter(|m| m.split == train::Split::Val)
        .map(|m| m.loss)
        .fold(a.initial_val_loss, f64::min);
    assert_eq!(a.best_val_loss, best_seen);
    let config = TrainConfig {
        phase: Phase::Preliminary,
        ..config
    };
    let rescored = train::train_preliminary(
        &cfg,
        &a.params,
        &data[..4],
        &data[4..],
        &TrainConfig {
            max_epochs: 0,
            ..config
        },
    )
    .unwrap();
    assert!((rescored.initial_val_loss - best_seen).abs() <= 1e-12 * best_seen);
}

#[test]
fn adjoint_training_tracks_backprop_training() {
    let cfg = FieldConfig::new(8, 8, 2, 4).unwrap();
    let data = dataset(3, 2, 3, cfg);
    let init = FieldParams::<f32>::init(&cfg, 5).unwrap();
    let run = |gradient| {
        let config = TrainConfig {
            max_epochs: 2,
            gradient,
            ..TrainConfig::default()
        };
        train::train_main(&cfg, &init, &data[..2], &data[2..], &config).unwrap()
    };
    let (bp, adj) = (
        run(train::GradientMethod::Backprop),
        run(train::GradientMethod::Adjoint),
    );
    for (x, y) in bp.metrics.iter().zip(&adj.metrics) {
        assert!(
            (x.loss - y.loss).abs() <= 1e-3 * x.loss,
            "{} vs {}",
            x.loss,
            y.loss
        );
    }
}
