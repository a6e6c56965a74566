use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use odeformer::bench::{self, BenchmarkConfig};
use odeformer::field::params_io::{load_params, save_params};
use odeformer::gradcheck::run_suite;
use odeformer::integrate::{integrate, Method};
use odeformer::tensor::OpKind;
use odeformer::train::{
    assign_splits, endpoint_mse, train_main, train_preliminary, write_metrics_csv, Split,
    TrainConfig, TrainOutcome, PRELIMINARY_EPOCH_CAP,
};
use odeformer::trajectory::{
    gen_synthetic_dataset, read_trajectory, write_trajectory, Checkpoint, SyntheticSpec,
    Trajectory, BLOCKS,
};
use odeformer::{EvoformerField, FieldConfig, FieldParams, SolverConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::{
    BenchmarkArgs, Cli, FieldArgs, GenDataArgs, GradcheckArgs, InferArgs, MethodArg, PhaseArg,
    Precision, TrainArgs,
};

/// Longest sequence the training data may carry.
pub const MAX_RESIDUES: usize = 350;
pub const MANIFEST: &str = "manifest.json";
pub const TEACHER: &str = "teacher.evop";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub s: usize,
    pub r: usize,
    pub stride: u32,
    pub config: FieldConfig,
    pub teacher: String,
    pub proteins: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub split: Split,
}

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C, CliError> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn field_config(base: FieldConfig, args: &FieldArgs) -> Result<FieldConfig, CliError> {
    let cfg = FieldConfig {
        c_m: args.c_m.unwrap_or(base.c_m),
        c_z: args.c_z.unwrap_or(base.c_z),
        heads: args.heads.unwrap_or(base.heads),
        head_dim: args.head_dim.unwrap_or(base.head_dim),
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn gen_data(cli: &Cli, args: &GenDataArgs) -> Result<(), CliError> {
    if args.residues > MAX_RESIDUES {
        return Err(CliError::Usage(format!(
            "--residues is capped at {MAX_RESIDUES}, got {}",
            args.residues
        )));
    }
    let config = field_config(load_config(cli.config.as_deref())?, &args.field)?;
    let spec = SyntheticSpec {
        seed: cli.seed.unwrap_or(0),
        count: args.count,
        s: args.sequences,
        r: args.residues,
        config,
        stride: args.stride,
    };
    let data = gen_synthetic_dataset(&spec)?;
    create_dir(&args.out)?;
    let ids: Vec<&str> = data.iter().map(|t| t.id.as_str()).collect();
    let splits = assign_splits(&ids);
    let mut proteins = Vec::with_capacity(data.len());
    for (traj, split) in data.iter().zip(splits) {
        let file = format!("{}.evot", traj.id);
        write_trajectory(args.out.join(&file), traj)?;
        proteins.push(ManifestEntry {
            id: traj.id.clone(),
            file,
            split,
        });
    }
    save_params(args.out.join(TEACHER), &config, &spec.teacher()?)?;
    let manifest = Manifest {
        seed: spec.seed,
        count: spec.count,
        s: spec.s,
        r: spec.r,
        stride: spec.stride,
        config,
        teacher: TEACHER.into(),
        proteins,
    };
    write_json(&args.out.join(MANIFEST), &manifest)?;
    println!(
        "wrote {} trajectories with blocks {:?} to {}",
        data.len(),
        spec.blocks(),
        args.out.display()
    );
    Ok(())
}

fn load_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Trajectory>, CliError> {
    let mut out = Vec::new();
    for entry in manifest.proteins.iter().filter(|p| p.split == split) {
        let traj = read_trajectory(dir.join(&entry.file))?;
        if traj.r > MAX_RESIDUES {
            return Err(CliError::Data(format!(
                "{}: {} residues exceed the cap of {MAX_RESIDUES}",
                entry.file, traj.r
            )));
        }
        out.push(traj);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct PhaseSummary {
    phase: &'static str,
    initial_val_loss: f64,
    best_val_loss: f64,
    best_epoch: usize,
    epochs_run: usize,
    skipped_steps: usize,
    metrics: String,
    params: String,
}

fn finish_phase(
    out: &Path,
    name: &'static str,
    config: &FieldConfig,
    outcome: &TrainOutcome,
) -> Result<PhaseSummary, CliError> {
    let metrics = format!("metrics_{name}.csv");
    let file = fs::File::create(out.join(&metrics))
        .map_err(|e| CliError::Io(format!("{metrics}: {e}")))?;
    write_metrics_csv(BufWriter::new(file), &outcome.metrics)?;
    let params = format!("params_{name}.evop");
    save_params(out.join(&params), config, &outcome.params)?;
    println!(
        "{name}: val loss {:.6e} -> {:.6e} (best epoch {} of {})",
        outcome.initial_val_loss, outcome.best_val_loss, outcome.best_epoch, outcome.epochs_run
    );
    Ok(PhaseSummary {
        phase: name,
        initial_val_loss: outcome.initial_val_loss,
        best_val_loss: outcome.best_val_loss,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.epochs_run,
        skipped_steps: outcome.skipped_steps,
        metrics,
        params,
    })
}

pub fn train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let mut config: TrainConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = args.max_epochs {
        config.max_epochs = n;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }

    let manifest_path = args.data.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
    let train_set = load_split(&args.data, &manifest, Split::Train)?;
    let val_set = load_split(&args.data, &manifest, Split::Val)?;

    let (field_cfg, init) = match &args.init {
        Some(path) => {
            let (cfg, params) = load_params(path)?;
            if cfg.c_m != manifest.config.c_m || cfg.c_z != manifest.config.c_z {
                return Err(CliError::Data(format!(
                    "{}: channels ({}, {}) do not match the dataset ({}, {})",
                    path.display(),
                    cfg.c_m,
                    cfg.c_z,
                    manifest.config.c_m,
                    manifest.config.c_z
                )));
            }
            (cfg, params)
        }
        None => {
            let cfg = FieldConfig {
                heads: args.heads.unwrap_or(manifest.config.heads),
                head_dim: args.head_dim.unwrap_or(manifest.config.head_dim),
                ..manifest.config
            };
            cfg.validate()?;
            let params = FieldParams::init(&cfg, config.seed)?;
            (cfg, params)
        }
    };

    create_dir(&args.out)?;
    let mut summaries = Vec::new();
    let mut params = init;
    if matches!(args.phase, PhaseArg::Preliminary | PhaseArg::Both) {
        let prelim = TrainConfig {
            max_epochs: config.max_epochs.min(PRELIMINARY_EPOCH_CAP),
            ..config.clone()
        };
        let outcome = train_preliminary(&field_cfg, &params, &train_set, &val_set, &prelim)?;
        summaries.push(finish_phase(
            &args.out,
            "preliminary",
            &field_cfg,
            &outcome,
        )?);
        params = outcome.params;
    }
    if matches!(args.phase, PhaseArg::Main | PhaseArg::Both) {
        let outcome = train_main(&field_cfg, &params, &train_set, &val_set, &config)?;
        summaries.push(finish_phase(&args.out, "main", &field_cfg, &outcome)?);
        params = outcome.params;
    }
    save_params(args.out.join("params.evop"), &field_cfg, &params)?;
    write_json(
        &args.out.join("summary.json"),
        &serde_json::json!({
            "config": field_cfg,
            "train": config,
            "train_proteins": train_set.len(),
            "val_proteins": val_set.len(),
            "phases": summaries,
            "params": "params.evop",
        }),
    )?;
    Ok(())
}

fn solver_config(cli: &Cli, args: &InferArgs) -> Result<SolverConfig, CliError> {
    let mut solver: SolverConfig = load_config(cli.config.as_deref())?;
    if let Some(m) = args.method {
        solver.method = match m {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Dopri5 => Method::Dopri5,
        };
    }
    if let Some(n) = args.steps {
        solver.steps = n;
    }
    if let Some(r) = args.rtol {
        solver.rtol = r;
    }
    if let Some(a) = args.atol {
        solver.atol = a;
    }
    solver.checkpoint_times.clear();
    solver.validate()?;
    Ok(solver)
}

pub fn infer(cli: &Cli, args: &InferArgs) -> Result<(), CliError> {
    let solver = solver_config(cli, args)?;
    let (config, params) = load_params(&args.params)?;
    let input = read_trajectory(&args.input)?;
    if input.c_m != config.c_m || input.c_z != config.c_z {
        return Err(CliError::Data(format!(
            "{}: channels ({}, {}) do not match the parameters ({}, {})",
            args.input.display(),
            input.c_m,
            input.c_z,
            config.c_m,
            config.c_z
        )));
    }
    let start = input.checkpoint(0).ok_or_else(|| {
        CliError::Data(format!("{}: no block 0 checkpoint", args.input.display()))
    })?;
    let field = EvoformerField::new(config, params)?;
    let sol = integrate(&field, &[start.m.clone(), start.z.clone()], &solver)?;
    let [m, z] = <[_; 2]>::try_from(sol.final_state)
        .map_err(|_| CliError::Data("solver returned a malformed state".into()))?;

    if let Some(end) = input.checkpoint(BLOCKS) {
        let mse = endpoint_mse((&m, &z), (&end.m, &end.z))?;
        println!("endpoint_mse {mse:.6e}");
    }
    let out = Trajectory::new(
        input.id.clone(),
        vec![start.clone(), Checkpoint::new(BLOCKS, m, z)],
    )?;
    write_trajectory(&args.out, &out)?;
    println!(
        "wrote {} ({} field evaluations, {} accepted, {} rejected steps)",
        args.out.display(),
        sol.stats.field_evals,
        sol.stats.accepted_steps,
        sol.stats.rejected_steps
    );
    Ok(())
}

pub fn gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<(), CliError> {
    if args.precision != Precision::F64 {
        return Err(CliError::Usage(
            "gradient checks need --precision f64".into(),
        ));
    }
    let fault = args.corrupt.then_some(OpKind::Sigmoid);
    let report = run_suite(cli.seed.unwrap_or(0), fault)?;
    for section in &report.sections {
        println!(
            "{} {}: max relative error {:.3e} (threshold {:.0e})",
            if section.passed { "PASS" } else { "FAIL" },
            section.name,
            section.max_error(),
            section.threshold
        );
        for (item, err) in &section.items {
            println!("    {item}: {err:.3e}");
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check("gradient check failed".into()))
    }
}

pub fn benchmark(cli: &Cli, args: &BenchmarkArgs) -> Result<(), CliError> {
    let mut config: BenchmarkConfig = load_config(cli.config.as_deref())?;
    if let Some(r) = &args.residues {
        config.residues = r.clone();
    }
    if let Some(s) = args.sequences {
        config.sequences = s;
    }
    if let Some(n) = args.repeats {
        config.repeats = n;
    }
    if let Some(n) = args.steps {
        config.solver_steps = n;
    }
    if let Some(n) = args.threads {
        config.threads = n;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.field = field_config(config.field, &args.field)?;

    let report = bench::run_benchmark(&config)?;
    create_dir(&args.out)?;
    let csv: PathBuf = args.out.join("benchmark.csv");
    let file =
        fs::File::create(&csv).map_err(|e| CliError::Io(format!("{}: {e}", csv.display())))?;
    bench::write_csv(BufWriter::new(file), &report)?;
    write_json(&args.out.join("benchmark.json"), &report)?;

    println!("{}", report.environment);
    for row in &report.rows {
        println!(
            "R = {:4}  S = {:3}  {:.4} s",
            row.residues, row.sequences, row.wall_seconds
        );
    }
    for fit in [
        &report.fits.linear,
        &report.fits.quadratic,
        &report.fits.cubic,
    ]
    .into_iter()
    .flatten()
    {
        println!(
            "degree {} fit {:?} (R^2 = {:.4})",
            fit.degree, fit.coefficients, fit.r_squared
        );
    }
    Ok(())
}
