//! Browser demo: solver comparison on a damped rotation, the learned depth
//! gates, and a small Evoformer flow. Every entry point returns JSON so the
//! page can stay plain JavaScript.

use odeformer::integrate::fields::LinearField;
use odeformer::integrate::{integrate, SolveError};
use odeformer::{EvoformerField, FieldConfig, FieldParams, SolverConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Intervals of the exact and adaptive curves.
const SAMPLES: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct SolverTrace {
    pub times: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub field_evals: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Euclidean distance to the exact endpoint.
    pub endpoint_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RotationDemo {
    pub times: Vec<f64>,
    pub exact: Vec<[f64; 2]>,
    pub rk4: SolverTrace,
    pub dopri5: SolverTrace,
}

/// Closed form of `ds/dt = s M` with `M = [[-d, -w], [w, -d]]` from `(1, 0)`.
pub fn exact_rotation(omega: f64, damping: f64, t: f64) -> [f64; 2] {
    let decay = (-damping * t).exp();
    [decay * (omega * t).cos(), -decay * (omega * t).sin()]
}

/// Solve once without sampling for the reported statistics, then again with
/// `interior` checkpoint times for the plotted curve.
fn trace(
    field: &LinearField<f64>,
    solver: SolverConfig,
    interior: Vec<f64>,
    exact_end: [f64; 2],
) -> Result<SolverTrace, SolveError> {
    let start = Tensor::from_vec([1, 2], vec![1.0, 0.0])?;
    let xy = |t: &Tensor<f64>| [t.data()[0], t.data()[1]];
    let plain = integrate(field, std::slice::from_ref(&start), &solver)?;
    let sampled = integrate(
        field,
        std::slice::from_ref(&start),
        &solver.with_checkpoints(interior),
    )?;
    let mut times = vec![0.0];
    let mut points = vec![xy(&start)];
    for (t, s) in &sampled.checkpoints {
        times.push(*t);
        points.push(xy(&s[0]));
    }
    times.push(1.0);
    points.push(xy(&sampled.final_state[0]));
    let end = xy(&plain.final_state[0]);
    Ok(SolverTrace {
        times,
        points,
        field_evals: plain.stats.field_evals,
        accepted_steps: plain.stats.accepted_steps,
        rejected_steps: plain.stats.rejected_steps,
        endpoint_error: (end[0] - exact_end[0]).hypot(end[1] - exact_end[1]),
    })
}

/// RK4 with `steps` uniform steps, drawn at its own grid nodes, and DOPRI5 at
/// relative tolerance `rtol`, against the exact damped rotation.
pub fn rotation_demo(
    omega: f64,
    damping: f64,
    steps: usize,
    rtol: f64,
) -> Result<RotationDemo, SolveError> {
    let field = LinearField::rotation(omega, damping);
    let times: Vec<f64> = (0..=SAMPLES).map(|i| i as f64 / SAMPLES as f64).collect();
    let exact: Vec<[f64; 2]> = times
        .iter()
        .map(|&t| exact_rotation(omega, damping, t))
        .collect();
    let end = exact[SAMPLES];
    let grid = (1..steps.max(1)).map(|i| i as f64 / steps as f64).collect();
    Ok(RotationDemo {
        rk4: trace(&field, SolverConfig::rk4(steps), grid, end)?,
        dopri5: trace(
            &field,
            SolverConfig::dopri5(rtol, rtol * 1e-2),
            times[1..SAMPLES].to_vec(),
            end,
        )?,
        times,
        exact,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GateCurves {
    pub times: Vec<f64>,
    pub msa: Vec<f64>,
    pub pair: Vec<f64>,
}

fn small_config() -> FieldConfig {
    FieldConfig::new(8, 8, 2, 4).expect("valid config")
}

/// Depth gates of a freshly initialized field with time-MLP weights scaled
/// by `sharpness`, so the page can show gates from flat to step-like.
pub fn gate_curves(seed: u64, sharpness: f64, samples: usize) -> Result<GateCurves, SolveError> {
    let cfg = small_config();
    let mut params = FieldParams::<f64>::init(&cfg, seed)?;
    for t in [&mut params.time_1.weight, &mut params.time_2.weight] {
        *t = t.map(|x| x * sharpness);
    }
    let field = EvoformerField::new(cfg, params)?;
    let n = samples.max(2);
    let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut msa = Vec::with_capacity(n);
    let mut pair = Vec::with_capacity(n);
    for &t in &times {
        let (gm, gz) = field.gates(t)?;
        msa.push(gm);
        pair.push(gz);
    }
    Ok(GateCurves { times, msa, pair })
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowDemo {
    pub residues: usize,
    pub times: Vec<f64>,
    /// RMS of `m` at each time.
    pub msa_rms: Vec<f64>,
    /// RMS of `z` at each time.
    pub pair_rms: Vec<f64>,
    /// Channel-mean of the final `z`, row-major `R x R`.
    pub pair_map: Vec<f64>,
    pub field_evals: usize,
}

fn rms(t: &Tensor<f64>) -> f64 {
    (t.sq_norm() / t.numel() as f64).sqrt()
}

/// Integrate a random protein of `residues` residues and 4 sequences through
/// a seeded width-8 field.
pub fn flow_demo(residues: usize, steps: usize, seed: u64) -> Result<FlowDemo, SolveError> {
    let cfg = small_config();
    let field = EvoformerField::new(cfg, FieldParams::<f64>::init(&cfg, seed)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut draw = |dims: [usize; 3]| -> Result<Tensor<f64>, SolveError> {
        let n = dims.iter().product();
        Ok(Tensor::from_vec(
            dims,
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?)
    };
    let state = [
        draw([4, residues, cfg.c_m])?,
        draw([residues, residues, cfg.c_z])?,
    ];
    let times: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0).collect();
    let sol = integrate(
        &field,
        &state,
        &SolverConfig::rk4(steps).with_checkpoints(times.clone()),
    )?;

    let mut all_times = vec![0.0];
    let mut msa_rms = vec![rms(&state[0])];
    let mut pair_rms = vec![rms(&state[1])];
    for (t, s) in &sol.checkpoints {
        all_times.push(*t);
        msa_rms.push(rms(&s[0]));
        pair_rms.push(rms(&s[1]));
    }
    let z = sol.final_state[1].data();
    let pair_map = z
        .chunks(cfg.c_z)
        .map(|c| c.iter().sum::<f64>() / cfg.c_z as f64)
        .collect();
    Ok(FlowDemo {
        residues,
        times: all_times,
        msa_rms,
        pair_rms,
        pair_map,
        field_evals: sol.stats.field_evals,
    })
}

fn to_js<T: Serialize>(r: Result<T, SolveError>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = rotationDemo)]
pub fn rotation_demo_js(
    omega: f64,
    damping: f64,
    steps: usize,
    rtol: f64,
) -> Result<String, JsError> {
    to_js(rotation_demo(omega, damping, steps, rtol))
}

#[wasm_bindgen(js_name = gateCurves)]
pub fn gate_curves_js(seed: u32, sharpness: f64) -> Result<String, JsError> {
    to_js(gate_curves(seed as u64, sharpness, 101))
}

#[wasm_bindgen(js_name = flowDemo)]
pub fn flow_demo_js(residues: usize, steps: usize, seed: u32) -> Result<String, JsError> {
    if !(1..=48).contains(&residues) {
        return Err(JsError::new("residues must lie in 1..=48"));
    }
    to_js(flow_demo(residues, steps, seed as u64))
}
