//! Straight-loop reference implementations of the field, written against
//! flat row-major arrays with no shared code from the library.

use odeformer::field::{FieldConfig, FieldParams, Linear};
use odeformer::Tensor;

const EPS: f64 = 1e-5;

type P = FieldParams<f64>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `x W + b` for one row vector.
fn linear(x: &[f64], l: &Linear<Tensor<f64>>) -> Vec<f64> {
    let (fan_in, fan_out) = (l.weight.dims()[0], l.weight.dims()[1]);
    assert_eq!(x.len(), fan_in);
    let w = l.weight.data();
    let mut out = l.bias.to_vec();
    for o in 0..fan_out {
        for i in 0..fan_in {
            out[o] += x[i] * w[i * fan_out + o];
        }
    }
    out
}

fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + EPS).sqrt()).collect()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Rows of a rank-3 tensor: `rows[a][b]` is the trailing-axis vector.
fn rows(t: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let d = t.dims();
    let data = t.data();
    (0..d[0])
        .map(|a| {
            (0..d[1])
                .map(|b| data[(a * d[1] + b) * d[2]..(a * d[1] + b + 1) * d[2]].to_vec())
                .collect()
        })
        .collect()
}

fn tensor(r: Vec<Vec<Vec<f64>>>) -> Tensor<f64> {
    let (a, b, c) = (r.len(), r[0].len(), r[0][0].len());
    Tensor::from_vec([a, b, c], r.into_iter().flatten().flatten().collect()).unwrap()
}

fn map_rows(x: &[Vec<Vec<f64>>], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<Vec<f64>>> {
    x.iter().map(|r| r.iter().map(|v| f(v)).collect()).collect()
}

pub fn time_embedding(p: &P, t: f64) -> (f64, f64) {
    let h: Vec<f64> = linear(&[t], &p.time_1).into_iter().map(silu).collect();
    let u = linear(&h, &p.time_2);
    (sigmoid(u[0]), sigmoid(u[1]))
}

pub fn row_attention(p: &P, cfg: &FieldConfig, m: &Tensor<f64>, z: &Tensor<f64>) -> Tensor<f64> {
    let (h, d) = (cfg.heads, cfg.head_dim);
    let hd = h * d;
    let mln = map_rows(&rows(m), layer_norm);
    let zln = map_rows(&rows(z), layer_norm);
    let (s_n, r_n) = (mln.len(), mln[0].len());
    let qkv = map_rows(&mln, |x| linear(x, &p.row_qkv));
    let bias = map_rows(&zln, |x| linear(x, &p.pair_bias));
    let mut out = vec![vec![vec![]; r_n]; s_n];
    for s in 0..s_n {
        for i in 0..r_n {
            let mut o = vec![0.0; hd];
            for head in 0..h {
                let mut logits = vec![0.0; r_n];
                for j in 0..r_n {
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += qkv[s][i][head * d + c] * qkv[s][j][hd + head * d + c];
                    }
                    logits[j] = dot / (d as f64).sqrt() + bias[i][j][head];
                }
                let alpha = softmax(&logits);
                for c in 0..d {
                    for j in 0..r_n {
                        o[head * d + c] += alpha[j] * qkv[s][j][2 * hd + head * d + c];
                    }
                }
            }
            let g = linear(&mln[s][i], &p.row_gate);
            let gated: Vec<f64> = o.iter().zip(&g).map(|(o, g)| sigmoid(*g) * o).collect();
            out[s][i] = linear(&gated, &p.row_out);
        }
    }
    tensor(out)
}

pub fn column_attention(p: &P, cfg: &FieldConfig, m: &Tensor<f64>) -> Tensor<f64> {
    let hd = cfg.heads * cfg.head_dim;
    let mln = map_rows(&rows(m), layer_norm);
    let (s_n, r_n) = (mln.len(), mln[0].len());
    let u = map_rows(&mln, |x| linear(x, &p.col_proj));
    let mut out = vec![vec![vec![]; r_n]; s_n];
    for r in 0..r_n {
        for s in 0..s_n {
            let logits: Vec<f64> = (0..s_n)
                .map(|t| (0..hd).map(|c| u[s][r][c] * u[t][r][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let alpha = softmax(&logits);
            let mut v = vec![0.0; hd];
            for t in 0..s_n {
                for c in 0..hd {
                    v[c] += alpha[t] * u[t][r][c];
                }
            }
            let g = linear(&mln[s][r], &p.col_gate);
            let gated: Vec<f64> = v.iter().zip(&g).map(|(v, g)| sigmoid(*g) * v).collect();
            out[s][r] = linear(&gated, &p.col_out);
        }
    }
    tensor(out)
}

fn transition(
    x: &Tensor<f64>,
    first: &Linear<Tensor<f64>>,
    second: &Linear<Tensor<f64>>,
) -> Tensor<f64> {
    tensor(map_rows(&rows(x), |v| {
        let h: Vec<f64> = linear(&layer_norm(v), first)
            .into_iter()
            .map(relu)
            .collect();
        linear(&h, second)
    }))
}

pub fn msa_transition(p: &P, m: &Tensor<f64>) -> Tensor<f64> {
    transition(m, &p.msa_1, &p.msa_2)
}

pub fn pair_transition(p: &P, z: &Tensor<f64>) -> Tensor<f64> {
    transition(z, &p.pair_1, &p.pair_2)
}

pub fn outer_product_mean(p: &P, m: &Tensor<f64>) -> Tensor<f64> {
    let mln = map_rows(&rows(m), layer_norm);
    let (s_n, r_n) = (mln.len(), mln[0].len());
    let a = map_rows(&mln, |x| linear(x, &p.opm_a));
    let b = map_rows(&mln, |x| linear(x, &p.opm_b));
    let rank = a[0][0].len();
    let mut out = vec![vec![vec![]; r_n]; r_n];
    for i in 0..r_n {
        for j in 0..r_n {
            let mut mean = vec![0.0; rank];
            for s in 0..s_n {
                for c in 0..rank {
                    mean[c] += a[s][i][c] * b[s][j][c];
                }
            }
            for v in &mut mean {
                *v /= s_n as f64;
            }
            out[i][j] = linear(&mean, &p.opm_out);
        }
    }
    tensor(out)
}

pub fn triangle_update(p: &P, z: &Tensor<f64>) -> Tensor<f64> {
    let zln = map_rows(&rows(z), layer_norm);
    let r_n = zln.len();
    let sig = |l: &Linear<Tensor<f64>>| {
        map_rows(&zln, |x| linear(x, l).into_iter().map(sigmoid).collect())
    };
    let (a, b, g) = (sig(&p.tri_a), sig(&p.tri_b), sig(&p.tri_gate));
    let hd = a[0][0].len();
    let mut out = vec![vec![vec![]; r_n]; r_n];
    for i in 0..r_n {
        for j in 0..r_n {
            let mut t = vec![0.0; hd];
            for k in 0..r_n {
                for c in 0..hd {
                    t[c] += a[i][k][c] * b[k][j][c];
                }
            }
            let proj = linear(&layer_norm(&t), &p.tri_out);
            out[i][j] = proj.iter().zip(&g[i][j]).map(|(x, g)| g * x).collect();
        }
    }
    tensor(out)
}

fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_vec(
        a.shape().clone(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
    .unwrap()
}

fn gated_diff(new: &Tensor<f64>, old: &Tensor<f64>, sigma: f64) -> Tensor<f64> {
    Tensor::from_vec(
        old.shape().clone(),
        new.data()
            .iter()
            .zip(old.data())
            .map(|(n, o)| sigma * (n - o))
            .collect(),
    )
    .unwrap()
}

pub fn vector_field(
    p: &P,
    cfg: &FieldConfig,
    m_in: &Tensor<f64>,
    z_in: &Tensor<f64>,
    t: f64,
) -> (Tensor<f64>, Tensor<f64>) {
    let (sm, sz) = time_embedding(p, t);
    let m = add(m_in, &row_attention(p, cfg, m_in, z_in));
    let m = add(&m, &column_attention(p, cfg, &m));
    let m = add(&m, &msa_transition(p, &m));
    let z = add(z_in, &outer_product_mean(p, &m));
    let z = add(&z, &triangle_update(p, &z));
    let z = add(&z, &pair_transition(p, &z));
    (gated_diff(&m, m_in, sm), gated_diff(&z, z_in, sz))
}
