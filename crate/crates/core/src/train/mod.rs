//! Two-phase trajectory fitting: multi-checkpoint supervision, then endpoint
//! supervision with early stopping on the validation loss.

mod adam;
mod loss;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{EvoformerField, FieldConfig, FieldParams};
use crate::integrate::{
    adjoint_backward, backprop_through_solver, integrate, GradientResult, SolveError, SolverConfig,
};
use crate::trajectory::{Trajectory, BLOCKS};

pub use adam::{Adam, AdamConfig};
pub use loss::{endpoint_mse, loss_endpoint, loss_multi_checkpoint, Target};

/// Epoch cap of the multi-checkpoint phase.
pub const PRELIMINARY_EPOCH_CAP: usize = 20;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Preliminary,
    Main,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Preliminary => "preliminary",
            Phase::Main => "main",
        })
    }
}

/// How parameter gradients are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMethod {
    Backprop,
    Adjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub solver: SolverConfig,
    pub gradient: GradientMethod,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            phase: Phase::Main,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            max_epochs: PRELIMINARY_EPOCH_CAP,
            patience: 5,
            min_rel_improvement: 1e-4,
            solver: SolverConfig::default(),
            gradient: GradientMethod::Backprop,
            seed: 0,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.min_rel_improvement >= 0.0) {
            return bad(format!(
                "min_rel_improvement must be non-negative, got {}",
                self.min_rel_improvement
            ));
        }
        if self.phase == Phase::Preliminary && self.max_epochs > PRELIMINARY_EPOCH_CAP {
            return bad(format!(
                "the preliminary phase is capped at {PRELIMINARY_EPOCH_CAP} epochs, got {}",
                self.max_epochs
            ));
        }
        self.solver.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Stops after `patience` consecutive epochs without a relative improvement
/// of at least `min_rel` over the best loss seen.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_rel: f64,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_rel: f64, baseline: f64) -> Self {
        EarlyStopping {
            patience,
            min_rel,
            best: baseline,
            stale: 0,
        }
    }

    /// Record an epoch's loss; returns whether it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best * (1.0 - self.min_rel) {
            self.best = loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// 80/10/10 assignment by rank of `sha256(id)`. Independent of input order.
pub fn assign_splits<S: AsRef<str>>(ids: &[S]) -> Vec<Split> {
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_cached_key(|&i| Sha256::digest(ids[i].as_ref().as_bytes()).to_vec());
    let n_train = (0.8 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub wall_ms: u64,
    pub field_evals: usize,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,wall_ms,field_evals";

pub fn write_metrics_csv(mut out: impl Write, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:e},{},{}",
            r.epoch, r.split, r.loss, r.wall_ms, r.field_evals
        )?;
    }
    Ok(())
}

/// Result of one training phase.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the initial ones if no epoch
    /// improved).
    pub params: FieldParams<f32>,
    pub metrics: Vec<MetricRow>,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    /// 0 when the initial parameters were never beaten.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub skipped_steps: usize,
}

/// Per-protein endpoint losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_protein: Vec<(String, f64)>,
    pub mean: f64,
    pub field_evals: usize,
}

fn check_shapes(traj: &Trajectory, config: &FieldConfig) -> Result<(), TrainError> {
    if traj.c_m != config.c_m || traj.c_z != config.c_z {
        return Err(TrainError::Data(format!(
            "{}: channels ({}, {}) do not match the field ({}, {})",
            traj.id, traj.c_m, traj.c_z, config.c_m, config.c_z
        )));
    }
    Ok(())
}

fn initial_state(traj: &Trajectory) -> Result<Vec<crate::Tensor<f32>>, TrainError> {
    let c = traj
        .checkpoint(0)
        .ok_or_else(|| TrainError::Data(format!("{}: no block-0 checkpoint", traj.id)))?;
    Ok(vec![c.m.clone(), c.z.clone()])
}

fn endpoint(traj: &Trajectory) -> Result<&crate::trajectory::Checkpoint, TrainError> {
    traj.checkpoint(BLOCKS)
        .ok_or_else(|| TrainError::Data(format!("{}: no block-{BLOCKS} checkpoint", traj.id)))
}

/// Supervised checkpoints of a trajectory for `phase`, excluding block 0.
fn targets(traj: &Trajectory, phase: Phase) -> Result<Vec<Target<f32>>, TrainError> {
    endpoint(traj)?;
    let picked: Vec<Target<f32>> = traj
        .checkpoints
        .iter()
        .filter(|c| c.block_index > 0 && (phase == Phase::Preliminary || c.block_index == BLOCKS))
        .map(|c| Target {
            time: c.block_index as f64 / BLOCKS as f64,
            m: c.m.clone(),
            z: c.z.clone(),
        })
        .collect();
    if phase == Phase::Preliminary && picked.len() < 2 {
        return Err(TrainError::Data(format!(
            "{}: the preliminary phase needs intermediate checkpoints, found blocks {:?}",
            traj.id,
            traj.blocks()
        )));
    }
    Ok(picked)
}

fn solver_for(config: &TrainConfig, targets: &[Target<f32>]) -> SolverConfig {
    let mut solver = config.solver.clone();
    solver.checkpoint_times = match config.phase {
        Phase::Preliminary => targets.iter().map(|t| t.time).collect(),
        Phase::Main => Vec::new(),
    };
    solver
}

/// Loss and gradients for one protein.
fn protein_step(
    field: &EvoformerField<f32>,
    traj: &Trajectory,
    config: &TrainConfig,
) -> Result<GradientResult<f32>, TrainError> {
    let state0 = initial_state(traj)?;
    let targets = targets(traj, config.phase)?;
    let solver = solver_for(config, &targets);
    let phase = config.phase;
    let loss_fn =
        |tape: &crate::Tape<f32>, traj: &crate::integrate::TrajectoryVars<f32>| match phase {
            Phase::Main => {
                let end = targets.last().expect("endpoint target");
                loss_endpoint(tape, &traj.final_state, &end.m, &end.z)
            }
            Phase::Preliminary => loss_multi_checkpoint(tape, &traj.checkpoints, &targets),
        };
    Ok(match config.gradient {
        GradientMethod::Backprop => backprop_through_solver(field, &state0, &solver, loss_fn)?,
        GradientMethod::Adjoint => adjoint_backward(field, &state0, &solver, loss_fn)?,
    })
}

/// The phase loss of one protein without gradients, in f64.
fn protein_loss(
    field: &EvoformerField<f32>,
    traj: &Trajectory,
    config: &TrainConfig,
) -> Result<(f64, usize), TrainError> {
    let state0 = initial_state(traj)?;
    let targets = targets(traj, config.phase)?;
    let solver = solver_for(config, &targets);
    let sol = integrate(field, &state0, &solver)?;
    let loss = match config.phase {
        Phase::Main => {
            let end = targets.last().expect("endpoint target");
            endpoint_mse((&sol.final_state[0], &sol.final_state[1]), (&end.m, &end.z))?
        }
        Phase::Preliminary => {
            let mut total = 0.0;
            for ((_, s), t) in sol.checkpoints.iter().zip(&targets) {
                total += endpoint_mse((&s[0], &s[1]), (&t.m, &t.z))?;
            }
            total / targets.len() as f64
        }
    };
    Ok((loss, sol.stats.field_evals))
}

fn mean_loss(
    field: &EvoformerField<f32>,
    data: &[Trajectory],
    config: &TrainConfig,
) -> Result<(f64, usize), TrainError> {
    let mut total = 0.0;
    let mut evals = 0;
    for t in data {
        let (l, e) = protein_loss(field, t, config)?;
        total += l;
        evals += e;
    }
    Ok((total / data.len() as f64, evals))
}

/// Endpoint MSE of every protein under `params`, integrated with `solver`.
pub fn evaluate(
    config: &FieldConfig,
    params: &FieldParams<f32>,
    data: &[Trajectory],
    solver: &SolverConfig,
) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Data("nothing to evaluate".into()));
    }
    let field = EvoformerField::new(*config, params.clone()).map_err(SolveError::from)?;
    let mut solver = solver.clone();
    solver.checkpoint_times.clear();
    let mut per_protein = Vec::with_capacity(data.len());
    let mut field_evals = 0;
    for traj in data {
        check_shapes(traj, config)?;
        let end = endpoint(traj)?;
        let sol = integrate(&field, &initial_state(traj)?, &solver)?;
        field_evals += sol.stats.field_evals;
        let l = endpoint_mse((&sol.final_state[0], &sol.final_state[1]), (&end.m, &end.z))?;
        per_protein.push((traj.id.clone(), l));
    }
    let mean = per_protein.iter().map(|(_, l)| l).sum::<f64>() / per_protein.len() as f64;
    Ok(Evaluation {
        per_protein,
        mean,
        field_evals,
    })
}

/// Run one phase of training from `init`.
///
/// Each epoch visits the training proteins in a seeded random order, one
/// optimizer step per protein, then scores the validation set with the
/// phase's loss. The returned parameters are those of the best validation
/// epoch.
pub fn train(
    field_config: &FieldConfig,
    init: &FieldParams<f32>,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Data("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(TrainError::Data("empty validation set".into()));
    }
    for t in train_set.iter().chain(val_set) {
        check_shapes(t, field_config)?;
        targets(t, config.phase)?;
    }
    let mut field = EvoformerField::new(*field_config, init.clone()).map_err(SolveError::from)?;
    let (initial_val_loss, _) = mean_loss(&field, val_set, config)?;
    log::info!(
        "{} phase: initial validation loss {initial_val_loss:e}",
        config.phase
    );

    let mut outcome = TrainOutcome {
        params: init.clone(),
        metrics: Vec::new(),
        initial_val_loss,
        best_val_loss: initial_val_loss,
        best_epoch: 0,
        epochs_run: 0,
        skipped_steps: 0,
    };
    let mut stopper = EarlyStopping::new(
        config.patience,
        config.min_rel_improvement,
        initial_val_loss,
    );
    let mut flat = init.flatten();
    let mut adam = Adam::new(config.adam(), &flat);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut total, mut evals) = (0.0, 0);
        for &i in &order {
            let res = protein_step(&field, &train_set[i], config)?;
            total += res.loss as f64;
            evals += res.solution.stats.field_evals;
            if !adam.step(&mut flat, &res.param_grads) {
                outcome.skipped_steps += 1;
            }
            let params = FieldParams::from_flat(flat.iter().cloned()).expect("same layout");
            field = EvoformerField::new(*field_config, params).map_err(SolveError::from)?;
        }
        outcome.metrics.push(MetricRow {
            epoch,
            split: Split::Train,
            loss: total / train_set.len() as f64,
            wall_ms: start.elapsed().as_millis() as u64,
            field_evals: evals,
        });

        let start = Instant::now();
        let (val, val_evals) = mean_loss(&field, val_set, config)?;
        outcome.metrics.push(MetricRow {
            epoch,
            split: Split::Val,
            loss: val,
            wall_ms: start.elapsed().as_millis() as u64,
            field_evals: val_evals,
        });
        outcome.epochs_run = epoch;
        log::info!(
            "{} epoch {epoch}: train {:e} val {val:e}",
            config.phase,
            total / train_set.len() as f64
        );

        stopper.observe(val);
        if val < outcome.best_val_loss {
            outcome.params = field.params().clone();
            outcome.best_val_loss = val;
            outcome.best_epoch = epoch;
        }
        if stopper.should_stop() {
            log::info!("{} phase: stopping after {epoch} epochs", config.phase);
            break;
        }
    }
    Ok(outcome)
}

/// Multi-checkpoint phase. `config.phase` is overridden.
pub fn train_preliminary(
    field_config: &FieldConfig,
    init: &FieldParams<f32>,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let config = TrainConfig {
        phase: Phase::Preliminary,
        ..config.clone()
    };
    train(field_config, init, train_set, val_set, &config)
}

/// Endpoint phase. `config.phase` is overridden.
pub fn train_main(
    field_config: &FieldConfig,
    init: &FieldParams<f32>,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let config = TrainConfig {
        phase: Phase::Main,
        ..config.clone()
    };
    train(field_config, init, train_set, val_set, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{gen_synthetic_dataset, SyntheticSpec};

    fn tiny_data(stride: u32, count: usize) -> (SyntheticSpec, Vec<Trajectory>) {
        let spec = SyntheticSpec {
            seed: 2,
            count,
            s: 2,
            r: 3,
            config: FieldConfig::new(4, 4, 2, 2).unwrap(),
            stride,
        };
        let data = gen_synthetic_dataset(&spec).unwrap();
        (spec, data)
    }

    #[test]
    fn early_stopping_constant_loss_stops_after_patience() {
        let mut s = EarlyStopping::new(5, 1e-4, 1.0);
        let mut epochs = 0;
        while !s.should_stop() {
            s.observe(1.0);
            epochs += 1;
        }
        assert_eq!(epochs, 5);
    }

    #[test]
    fn early_stopping_keeps_going_while_improving() {
        let mut s = EarlyStopping::new(2, 1e-4, 1.0);
        for i in 1..50 {
            assert!(s.observe(1.0 / (i as f64 + 1.0)));
            assert!(!s.should_stop());
        }
        // an improvement below the relative threshold counts as stale
        let best = s.best();
        assert!(!s.observe(best * (1.0 - 1e-6)));
    }

    #[test]
    fn splits_are_deterministic_and_proportional() {
        let ids: Vec<String> = (0..100).map(|i| format!("p{i}")).collect();
        let a = assign_splits(&ids);
        let mut rev = ids.clone();
        rev.reverse();
        let mut b = assign_splits(&rev);
        b.reverse();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|s| **s == Split::Train).count(), 80);
        assert_eq!(a.iter().filter(|s| **s == Split::Val).count(), 10);
        assert_eq!(assign_splits::<&str>(&[]), vec![]);
    }

    #[test]
    fn config_json_roundtrip_and_validation() {
        let cfg = TrainConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
        let prelim = TrainConfig {
            phase: Phase::Preliminary,
            max_epochs: 21,
            ..cfg.clone()
        };
        assert!(prelim.validate().is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (spec, data) = tiny_data(8, 3);
        let init = FieldParams::init(&spec.config, 99).unwrap();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_preliminary(&spec.config, &init, &data[..2], &data[2..], &cfg).unwrap();
        assert_eq!(out.params, init);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn teacher_is_already_optimal() {
        let (spec, data) = tiny_data(8, 3);
        let teacher = spec.teacher().unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            solver: SolverConfig::rk4(48),
            ..TrainConfig::default()
        };
        let out = train_preliminary(&spec.config, &teacher, &data[..2], &data[2..], &cfg).unwrap();
        assert!(out.initial_val_loss < 1e-10, "{}", out.initial_val_loss);
        assert!(out.metrics[0].loss < 1e-10);
    }

    #[test]
    fn preliminary_needs_intermediate_checkpoints() {
        let (spec, data) = tiny_data(48, 2);
        let init = FieldParams::init(&spec.config, 1).unwrap();
        let err = train_preliminary(
            &spec.config,
            &init,
            &data[..1],
            &data[1..],
            &TrainConfig::default(),
        );
        assert!(matches!(err, Err(TrainError::Data(_))));
        assert!(matches!(
            train_main(
                &spec.config,
                &init,
                &data[..1],
                &[],
                &TrainConfig::default()
            ),
            Err(TrainError::Data(_))
        ));
    }

    #[test]
    fn best_params_never_worse_than_best_epoch() {
        let (spec, data) = tiny_data(16, 4);
        let init = FieldParams::init(&spec.config, 7).unwrap();
        let cfg = TrainConfig {
            max_epochs: 4,
            learning_rate: 5e-2,
            ..TrainConfig::default()
        };
        let out = train_main(&spec.config, &init, &data[..3], &data[3..], &cfg).unwrap();
        assert_eq!(out.metrics.len(), 8);
        let best_row = out
            .metrics
            .iter()
            .filter(|r| r.split == Split::Val)
            .map(|r| r.loss)
            .fold(out.initial_val_loss, f64::min);
        let eval = evaluate(&spec.config, &out.params, &data[3..], &cfg.solver).unwrap();
        assert!((eval.mean - best_row).abs() <= 1e-12 * best_row.max(1.0));
    }

    #[test]
    fn training_is_deterministic() {
        let (spec, data) = tiny_data(16, 3);
        let init = FieldParams::init(&spec.config, 3).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let a = train_main(&spec.config, &init, &data[..2], &data[2..], &cfg).unwrap();
        let b = train_main(&spec.config, &init, &data[..2], &data[2..], &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let losses = |o: &TrainOutcome| o.metrics.iter().map(|r| r.loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
    }

    #[test]
    fn adjoint_and_backprop_training_agree_closely() {
        let (spec, data) = tiny_data(16, 3);
        let init = FieldParams::init(&spec.config, 3).unwrap();
        let field = EvoformerField::new(spec.config, init).unwrap();
        let cfg = TrainConfig::default();
        let bp = protein_step(&field, &data[0], &cfg).unwrap();
        let adj = protein_step(
            &field,
            &data[0],
            &TrainConfig {
                gradient: GradientMethod::Adjoint,
                ..cfg
            },
        )
        .unwrap();
        let num: f64 = bp
            .param_grads
            .iter()
            .zip(&adj.param_grads)
            .map(|(a, b)| a.sub(b).unwrap().sq_norm() as f64)
            .sum();
        let den: f64 = bp.param_grads.iter().map(|a| a.sq_norm() as f64).sum();
        assert!((num / den).sqrt() < 1e-2, "{}", (num / den).sqrt());
    }

    #[test]
    fn metrics_csv_layout() {
        let mut buf = Vec::new();
        let row = MetricRow {
            epoch: 1,
            split: Split::Val,
            loss: 0.5,
            wall_ms: 12,
            field_evals: 96,
        };
        write_metrics_csv(&mut buf, &[row]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,split,loss,wall_ms,field_evals\n1,val,5e-1,12,96\n"
        );
    }
}
