//! The field's submodules, written against the tape so that the same code
//! evaluates plainly (on a no-grad tape) or records for differentiation.
//!
//! Every submodule returns its update only; [`vector_field`] accumulates the
//! residuals.

use super::{FieldConfig, FieldError, FieldWeights};
use crate::tensor::{Scalar, Tape, Tensor, Var};

type W<T> = FieldWeights<Var<T>>;
type Out<T> = Result<Var<T>, FieldError>;

fn check_msa(m: &Var<impl Scalar>, cfg: &FieldConfig) -> Result<(usize, usize), FieldError> {
    match m.dims() {
        &[s, r, c] if c == cfg.c_m => Ok((s, r)),
        _ => Err(FieldError::Shape(format!(
            "MSA representation must be [S, R, {}], got {}",
            cfg.c_m,
            m.shape()
        ))),
    }
}

fn check_pair(z: &Var<impl Scalar>, cfg: &FieldConfig) -> Result<usize, FieldError> {
    match z.dims() {
        &[r1, r2, c] if r1 == r2 && c == cfg.c_z => Ok(r1),
        _ => Err(FieldError::Shape(format!(
            "pair representation must be [R, R, {}], got {}",
            cfg.c_z,
            z.shape()
        ))),
    }
}

/// `(sigma_m, sigma_z)`, each a `[1, 1]` variable in (0, 1).
pub fn time_embedding<T: Scalar>(
    tape: &Tape<T>,
    w: &W<T>,
    t: f64,
) -> Result<(Var<T>, Var<T>), FieldError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(FieldError::Domain(t));
    }
    let t = tape.constant(Tensor::from_vec([1, 1], vec![T::from_f64(t)])?);
    let hidden = tape.linear(&t, &w.time_1.weight, &w.time_1.bias)?;
    let hidden = tape.silu(&hidden)?;
    let u = tape.linear(&hidden, &w.time_2.weight, &w.time_2.bias)?;
    let gates = tape.sigmoid(&u)?;
    Ok((tape.narrow(&gates, 1, 0, 1)?, tape.narrow(&gates, 1, 1, 1)?))
}

/// Multi-head attention over residues within each sequence, with an additive
/// per-head bias projected from the pair representation.
pub fn msa_row_attention_pair_bias<T: Scalar>(
    tape: &Tape<T>,
    w: &W<T>,
    cfg: &FieldConfig,
    m: &Var<T>,
    z: &Var<T>,
) -> Out<T> {
    let (s, r) = check_msa(m, cfg)?;
    if check_pair(z, cfg)? != r {
        return Err(FieldError::Shape(format!(
            "residue count differs between m {} and z {}",
            m.shape(),
            z.shape()
        )));
    }
    let (h, d, hd) = (cfg.heads, cfg.head_dim, cfg.hidden());

    let m_ln = tape.layer_norm(m, 2)?;
    let z_ln = tape.layer_norm(z, 2)?;
    let qkv = tape.linear(&m_ln, &w.row_qkv.weight, &w.row_qkv.bias)?;
    let heads = |i: usize| -> Out<T> {
        let x = tape.narrow(&qkv, 2, i * hd, hd)?;
        let x = tape.reshape(&x, [s, r, h, d])?;
        Ok(tape.permute(&x, &[0, 2, 1, 3])?) // [S, H, R, d]
    };
    let (q, k, v) = (heads(0)?, heads(1)?, heads(2)?);

    let kt = tape.permute(&k, &[0, 1, 3, 2])?;
    let logits = tape.matmul(&q, &kt)?;
    let logits = tape.scale(&logits, T::from_f64(1.0 / (d as f64).sqrt()))?;
    let bias = tape.linear(&z_ln, &w.pair_bias.weight, &w.pair_bias.bias)?; // [R, R, H]
    let bias = tape.permute(&bias, &[2, 0, 1])?; // [H, R, R], broadcast over S
    let logits = tape.add(&logits, &bias)?;
    let alpha = tape.softmax(&logits, 3)?;

    let o = tape.matmul(&alpha, &v)?;
    let o = tape.permute(&o, &[0, 2, 1, 3])?;
    let o = tape.reshape(&o, [s, r, hd])?;
    let gate = tape.linear(&m_ln, &w.row_gate.weight, &w.row_gate.bias)?;
    let gate = tape.sigmoid(&gate)?;
    let gated = tape.mul(&gate, &o)?;
    Ok(tape.linear(&gated, &w.row_out.weight, &w.row_out.bias)?)
}

/// Single-score-space attention over sequences within each residue column.
/// The projection `U` serves as query, key and value.
pub fn msa_column_attention<T: Scalar>(
    tape: &Tape<T>,
    w: &W<T>,
    cfg: &FieldConfig,
    m: &Var<T>,
) -> Out<T> {
    check_msa(m, cfg)?;
    let m_ln = tape.layer_norm(m, 2)?;
    let u = tape.linear(&m_ln, &w.col_proj.weight, &w.col_proj.bias)?;
    let gate = tape.linear(&m_ln, &w.col_gate.weight, &w.col_gate.bias)?;
    let gate = tape.sigmoid(&gate)?;

    let ut = tape.permute(&u, &[1, 0, 2])?; // [R, S, Hd]
    let utt = tape.permute(&ut, &[0, 2, 1])?;
    let logits = tape.matmul(&ut, &utt)?;
    let logits = tape.scale(&logits, T::from_f64(1.0 / (cfg.hidden() as f64).sqrt()))?;
    let alpha = tape.softmax(&logits, 2)?;
    let v = tape.matmul(&alpha, &ut)?;
    let v = tape.permute(&v, &[1, 0, 2])?;

    let gated = tape.mul(&gate, &v)?;
    Ok(tape.linear(&gated, &w.col_out.weight, &w.col_out.bias)?)
}

fn transition<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    first: &super::Linear<Var<T>>,
    second: &super::Linear<Var<T>>,
) -> Out<T> {
    let x_ln = tape.layer_norm(x, 2)?;
    let hidden = tape.linear(&x_ln, &first.weight, &first.bias)?;
    let hidden = tape.relu(&hidden)?;
    Ok(tape.linear(&hidden, &second.weight, &second.bias)?)
}

pub fn msa_transition<T: Scalar>(
    tape: &Tape<T>,
    w: &W<T>,
    cfg: &FieldConfig,
    m: &Var<T>,
) -> Out<T> {
    check_msa(m, cfg)?;
    transition(tape, m, &w.msa_1, &w.msa_2)
}

/// Sequence-averaged elementwise product of low-rank projections, sent to
/// the pair stream.
pub fn outer_product_mean<T: Scalar>(
    tape: &Tape<T>,
    w: &W<T>,
    cfg: &FieldConfig,
    m: &Var<T>,
) -> Out<T> {
    let (s, _) = check_msa(m, cfg)?;
    let m_ln = tape.layer_norm(m, 2)?;
    let a = tape.linear(&m_ln, &w.opm_a.weight, &w.opm_a.bias)?;
    let b = tape.linear(&m_ln, &w.opm_b.weight, &w.opm_b.bias)?;
    // mean_s a[s,i,c] b[s,j,c] as a batched product over channels
    let at = tape.permute(&a, &[2, 1, 0])?; // [C, R, S]
    let bt = tape.permute(&b, &[2, 0, 1])?; // [C, S, R]
    let outer = tape.matmul(&at, &bt)?;
    let outer = tape.scale(&outer, T::from_f64(1.0 / s as f64))?;
    let outer = tape.permute(&outer, &[1, 2, 0])?; // [R, R, C]
    Ok(tape.linear(&outer, &w.opm_out.weight, &w.opm_out.bias)?)
}

/// Symmetric multiplicative triangle update: `T_ij = sum_k A_ik * B_kj`.
pub fn triangle_update<T: Scalar>(
    tape: &Tape<T>,
    w: &W<T>,
    cfg: &FieldConfig,
    z: &Var<T>,
) -> Out<T> {
    check_pair(z, cfg)?;
    let z_ln = tape.layer_norm(z, 2)?;
    let a = tape.linear(&z_ln, &w.tri_a.weight, &w.tri_a.bias)?;
    let a = tape.sigmoid(&a)?;
    let b = tape.linear(&z_ln, &w.tri_b.weight, &w.tri_b.bias)?;
    let b = tape.sigmoid(&b)?;
    let g = tape.linear(&z_ln, &w.tri_gate.weight, &w.tri_gate.bias)?;
    let g = tape.sigmoid(&g)?;

    let at = tape.permute(&a, &[2, 0, 1])?; // [Hd, i, k]
    let bt = tape.permute(&b, &[2, 0, 1])?; // [Hd, k, j]
    let tri = tape.matmul(&at, &bt)?;
    let tri = tape.permute(&tri, &[1, 2, 0])?; // [i, j, Hd]
    let tri = tape.layer_norm(&tri, 2)?;
    let out = tape.linear(&tri, &w.tri_out.weight, &w.tri_out.bias)?;
    Ok(tape.mul(&g, &out)?)
}

pub fn pair_transition<T: Scalar>(
    tape: &Tape<T>,
    w: &W<T>,
    cfg: &FieldConfig,
    z: &Var<T>,
) -> Out<T> {
    check_pair(z, cfg)?;
    transition(tape, z, &w.pair_1, &w.pair_2)
}

/// `(dm/dt, dz/dt)` at depth `t`.
///
/// The six updates are applied in order with residual accumulation; the
/// result is the gated difference between the updated and the input states.
pub fn vector_field<T: Scalar>(
    tape: &Tape<T>,
    w: &W<T>,
    cfg: &FieldConfig,
    m_in: &Var<T>,
    z_in: &Var<T>,
    t: f64,
) -> Result<(Var<T>, Var<T>), FieldError> {
    let (sigma_m, sigma_z) = time_embedding(tape, w, t)?;

    let m = tape.add(
        m_in,
        &msa_row_attention_pair_bias(tape, w, cfg, m_in, z_in)?,
    )?;
    let m = tape.add(&m, &msa_column_attention(tape, w, cfg, &m)?)?;
    let m = tape.add(&m, &msa_transition(tape, w, cfg, &m)?)?;
    let z = tape.add(z_in, &outer_product_mean(tape, w, cfg, &m)?)?;
    let z = tape.add(&z, &triangle_update(tape, w, cfg, &z)?)?;
    let z = tape.add(&z, &pair_transition(tape, w, cfg, &z)?)?;

    let dm = tape.sub(&m, m_in)?;
    let dm = tape.mul(&sigma_m, &dm)?;
    let dz = tape.sub(&z, z_in)?;
    let dz = tape.mul(&sigma_z, &dz)?;
    Ok((dm, dz))
}
