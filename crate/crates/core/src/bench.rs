//! Runtime against residue count, with least-squares polynomial fits.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{EvoformerField, FieldConfig, FieldParams};
use crate::integrate::{rk4_integrate, SolveError, SolverConfig};
use crate::tensor::Tensor;

/// Published linear fit of seconds against residues, shown for comparison.
pub const REFERENCE_LINEAR_FIT: [f64; 2] = [0.004625, 3.64];
/// Published quadratic fit, highest power first.
pub const REFERENCE_QUADRATIC_FIT: [f64; 3] = [0.000641, -0.0497, 15.83];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("fit of degree {degree} needs at least {} points, got {points}", degree + 1)]
    TooFewPoints { degree: usize, points: usize },
    #[error("least-squares system is rank deficient")]
    RankDeficient,
    #[error("xs and ys differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid benchmark config: {0}")]
    Config(String),
}

/// Polynomial `c[0] x^d + c[1] x^(d-1) + ... + c[d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub degree: usize,
    /// Highest power first.
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Ordinary least squares by Householder QR on the column-equilibrated
/// Vandermonde matrix.
pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit, BenchError> {
    if xs.len() != ys.len() {
        return Err(BenchError::Length(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < degree + 1 {
        return Err(BenchError::TooFewPoints { degree, points: n });
    }
    let cols = degree + 1;
    let mut a = DMatrix::from_fn(n, cols, |i, j| xs[i].powi((degree - j) as i32));
    let mut scale = vec![1.0; cols];
    for (j, s) in scale.iter_mut().enumerate() {
        let norm = a.column(j).amax();
        if norm > 0.0 {
            *s = norm;
            a.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    let b = DVector::from_column_slice(ys);
    let qr = a.qr();
    let qtb = qr.q().transpose() * &b;
    let r = qr.r();
    if (0..cols).any(|i| r[(i, i)].abs() < 1e-12 * r[(0, 0)].abs().max(f64::MIN_POSITIVE)) {
        return Err(BenchError::RankDeficient);
    }
    let sol = r
        .solve_upper_triangular(&qtb)
        .ok_or(BenchError::RankDeficient)?;
    let coefficients: Vec<f64> = sol.iter().zip(&scale).map(|(c, s)| c / s).collect();

    let mut fit = PolyFit {
        degree,
        coefficients,
        r_squared: 0.0,
    };
    let mean = ys.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - fit.eval(*x)).powi(2))
        .sum();
    fit.r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub residues: Vec<usize>,
    pub sequences: usize,
    pub repeats: usize,
    pub field: FieldConfig,
    pub solver_steps: usize,
    pub seed: u64,
    /// Matrix-product worker threads during timing; 1 is single-threaded.
    pub threads: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            residues: vec![32, 64, 128, 256, 512],
            sequences: 64,
            repeats: 3,
            field: FieldConfig::default(),
            solver_steps: crate::integrate::DEFAULT_STEPS,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub residues: usize,
    pub sequences: usize,
    /// Median over the timed repeats.
    pub wall_seconds: f64,
    pub repeat_seconds: Vec<f64>,
    pub field_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    pub linear: Option<PolyFit>,
    pub quadratic: Option<PolyFit>,
    pub cubic: Option<PolyFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub fits: Fits,
    /// Reference values from the original GPU runs; not comparable across
    /// hardware.
    pub reference_linear_fit: [f64; 2],
    pub reference_quadratic_fit: [f64; 3],
    pub environment: String,
}

pub fn environment_note(config: &BenchmarkConfig) -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threading = match config.threads {
        0 | 1 => "single-threaded".to_string(),
        n => format!("{n} matmul threads,"),
    };
    format!(
        "{}-{}, {cpus} logical cpus available, {threading} f32 forward rk4 with {} steps, warmup excluded, median of {}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        config.solver_steps,
        config.repeats
    )
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fit every model the points can support.
pub fn fit_all(xs: &[f64], ys: &[f64]) -> Fits {
    let fit = |d| fit_polynomial(xs, ys, d).ok();
    Fits {
        linear: fit(1),
        quadratic: fit(2),
        cubic: fit(3),
    }
}

/// Time the forward integration at each residue count. One untimed warmup
/// precedes the timed repeats at every size.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport, BenchError> {
    if config.repeats == 0 || config.sequences == 0 || config.residues.contains(&0) {
        return Err(BenchError::Config(
            "repeats, sequences and residues must be positive".into(),
        ));
    }
    let previous = crate::tensor::threads();
    crate::tensor::set_threads(config.threads);
    let result = timed_runs(config);
    crate::tensor::set_threads(previous);
    let rows = result?;
    let xs: Vec<f64> = rows.iter().map(|r| r.residues as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.wall_seconds).collect();
    Ok(BenchmarkReport {
        fits: fit_all(&xs, &ys),
        rows,
        reference_linear_fit: REFERENCE_LINEAR_FIT,
        reference_quadratic_fit: REFERENCE_QUADRATIC_FIT,
        environment: environment_note(config),
    })
}

fn timed_runs(config: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>, BenchError> {
    let params = FieldParams::<f32>::init(&config.field, config.seed).map_err(SolveError::from)?;
    let field = EvoformerField::new(config.field, params).map_err(SolveError::from)?;
    let solver = SolverConfig::rk4(config.solver_steps);
    let mut residues = config.residues.clone();
    residues.sort_unstable();
    residues.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dist = Normal::new(0.0f32, 0.5).expect("positive std");
    let mut rows = Vec::with_capacity(residues.len());
    for &r in &residues {
        let mut draw = |dims: [usize; 3]| {
            let n = dims.iter().product();
            Tensor::from_vec(dims, (0..n).map(|_| dist.sample(&mut rng)).collect())
                .expect("positive extents")
        };
        let state = [
            draw([config.sequences, r, config.field.c_m]),
            draw([r, r, config.field.c_z]),
        ];
        let warm = rk4_integrate(&field, &state, &solver)?;
        let mut times = Vec::with_capacity(config.repeats);
        for _ in 0..config.repeats {
            let start = Instant::now();
            rk4_integrate(&field, &state, &solver)?;
            times.push(start.elapsed().as_secs_f64());
        }
        log::info!("R = {r}: median {:.4} s", median(&times));
        rows.push(BenchmarkRow {
            residues: r,
            sequences: config.sequences,
            wall_seconds: median(&times),
            repeat_seconds: times,
            field_evals: warm.stats.field_evals,
        });
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "residues,sequences,median_seconds,field_evals";

pub fn write_csv(mut out: impl Write, report: &BenchmarkReport) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{:.6},{}",
            r.residues, r.sequences, r.wall_seconds, r.field_evals
        )?;
    }
    Ok(())
}
