//! Forward and backward kernels on raw buffers.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Result, Scalar, Shape, Tensor, TensorError};

/// Walk every element of an `out`-shaped index space, handing the closure the
/// flat output index and the matching offsets into two strided inputs.
pub(super) fn for_each2(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (step_a, step_b) = (sa[rank - 1], sb[rank - 1]);
    let n_outer: usize = out[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    for _ in 0..n_outer {
        for j in 0..inner {
            f(o, oa + j * step_a, ob + j * step_b);
            o += 1;
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub(super) fn zip_broadcast<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok(Tensor::from_parts(a.shape().clone(), data));
    }
    let out = a.shape().broadcast(b.shape(), op)?;
    let sa = a.shape().broadcast_strides(&out);
    let sb = b.shape().broadcast_strides(&out);
    let (da, db) = (a.data(), b.data());
    let mut data = Vec::with_capacity(out.numel());
    for_each2(out.dims(), &sa, &sb, |_, ia, ib| {
        data.push(f(da[ia], db[ib]))
    });
    Ok(Tensor::from_parts(out, data))
}

pub(super) fn sum_to_shape<T: Scalar>(g: &Tensor<T>, target: &Shape) -> Result<Tensor<T>> {
    if g.shape() == target {
        return Ok(g.clone());
    }
    let mismatch = || TensorError::ShapeMismatch {
        op: "sum_to_shape",
        lhs: g.shape().clone(),
        rhs: target.clone(),
    };
    if target.rank() > g.rank() || target.broadcast(g.shape(), "sum_to_shape")? != *g.shape() {
        return Err(mismatch());
    }
    let st = target.broadcast_strides(g.shape());
    let sg = g.shape().strides();
    let src = g.data();
    let mut acc = vec![T::zero(); target.numel()];
    for_each2(g.dims(), &sg, &st, |_, ig, it| acc[it] = acc[it] + src[ig]);
    Ok(Tensor::from_parts(target.clone(), acc))
}

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Products with fewer multiply-adds than this stay on the calling thread.
const PARALLEL_MIN_WORK: usize = 1 << 18;

/// Worker threads used by matrix products in this process. 1 (the default)
/// keeps everything on the calling thread. Results do not depend on it.
pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// One `rows x k` by `k x n` product; offsets are in elements.
struct Gemm {
    rows: usize,
    a: usize,
    b: usize,
    c: usize,
}

#[derive(Clone, Copy)]
struct Buffers<T> {
    a: *const T,
    b: *const T,
    c: *mut T,
}

// SAFETY: workers only write disjoint output regions and read the inputs.
unsafe impl<T: Send> Send for Buffers<T> {}
unsafe impl<T: Sync> Sync for Buffers<T> {}

impl<T> Buffers<T> {
    fn a(&self) -> *const T {
        self.a
    }
    fn b(&self) -> *const T {
        self.b
    }
    fn c(&self) -> *mut T {
        self.c
    }
}

fn last_two(t: &Tensor<impl Scalar>) -> (usize, usize) {
    let d = t.dims();
    (d[d.len() - 2], d[d.len() - 1])
}

/// Batched product `op(a) op(b)` where `op` optionally transposes the
/// trailing two axes. Batch axes broadcast.
pub(super) fn matmul<T: Scalar>(
    a: &Tensor<T>,
    trans_a: bool,
    b: &Tensor<T>,
    trans_b: bool,
) -> Result<Tensor<T>> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().clone(),
        rhs: b.shape().clone(),
    };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch());
    }
    let (ar, ac) = last_two(a);
    let (br, bc) = last_two(b);
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(mismatch());
    }
    let batch_a = Shape::from(&a.dims()[..a.rank() - 2]);
    let batch_b = Shape::from(&b.dims()[..b.rank() - 2]);
    let batch = batch_a
        .broadcast(&batch_b, "matmul")
        .map_err(|_| mismatch())?;
    let (rsa, csa) = if trans_a { (1, ac) } else { (ac, 1) };
    let (rsb, csb) = if trans_b { (1, bc) } else { (bc, 1) };

    let mut out_dims = batch.dims().to_vec();
    out_dims.extend([m, n]);
    let mut out = vec![T::zero(); batch.numel() * m * n];
    let workers = threads();
    let parallel = workers > 1 && batch.numel() * m * k * n >= PARALLEL_MIN_WORK;

    let mut jobs = Vec::new();
    if batch_b.rank() == 0 && !trans_a {
        // rows of every batch of `a` are contiguous: one large product,
        // split into row blocks when running in parallel
        let rows = batch.numel() * m;
        let parts = if parallel {
            workers.min(rows).max(1)
        } else {
            1
        };
        for p in 0..parts {
            let (r0, r1) = (rows * p / parts, rows * (p + 1) / parts);
            if r1 > r0 {
                jobs.push(Gemm {
                    rows: r1 - r0,
                    a: r0 * ac,
                    b: 0,
                    c: r0 * n,
                });
            }
        }
    } else {
        let sa = batch_a.broadcast_strides(&batch);
        let sb = batch_b.broadcast_strides(&batch);
        let (mat_a, mat_b, mat_c) = (ar * ac, br * bc, m * n);
        for_each2(batch.dims(), &sa, &sb, |o, ia, ib| {
            jobs.push(Gemm {
                rows: m,
                a: ia * mat_a,
                b: ib * mat_b,
                c: o * mat_c,
            })
        });
    }

    let ptrs = Buffers {
        a: a.data().as_ptr(),
        b: b.data().as_ptr(),
        c: out.as_mut_ptr(),
    };
    let run = |batch: &[Gemm]| {
        for j in batch {
            // SAFETY: every job addresses whole matrices inside the buffers
            // of a, b and out, and no two jobs share an output region.
            unsafe {
                T::gemm(
                    j.rows,
                    k,
                    n,
                    ptrs.a().add(j.a),
                    rsa as isize,
                    csa as isize,
                    ptrs.b().add(j.b),
                    rsb as isize,
                    csb as isize,
                    ptrs.c().add(j.c),
                    n as isize,
                    1,
                );
            }
        }
    };
    if parallel && jobs.len() > 1 {
        let per = jobs.len().div_ceil(workers);
        let run = &run;
        std::thread::scope(|s| {
            for chunk in jobs.chunks(per) {
                s.spawn(move || run(chunk));
            }
        });
    } else {
        run(&jobs);
    }
    Ok(Tensor::from_parts(Shape::from(out_dims), out))
}

pub(super) fn check_permutation(rank: usize, axes: &[usize]) -> Result<()> {
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(TensorError::Permutation(axes.to_vec()));
    }
    for &ax in axes {
        if ax >= rank || seen[ax] {
            return Err(TensorError::Permutation(axes.to_vec()));
        }
        seen[ax] = true;
    }
    Ok(())
}

pub(super) fn permute<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    check_permutation(x.rank(), axes)?;
    let strides = x.shape().strides();
    let dims: Vec<usize> = axes.iter().map(|&a| x.dims()[a]).collect();
    let ps: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let src = x.data();
    let mut data = Vec::with_capacity(x.numel());
    for_each2(&dims, &ps, &ps, |_, i, _| data.push(src[i]));
    Ok(Tensor::from_parts(Shape::from(dims), data))
}

pub(super) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(super) fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    x.shape().check_axis(axis, "softmax")?;
    if !x.is_finite() {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let (outer, n, inner) = x.shape().split_at_axis(axis);
    let mut y = x.to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..n {
                max = max.max(y[base + j * inner]);
            }
            let mut sum = T::zero();
            for j in 0..n {
                let e = (y[base + j * inner] - max).exp();
                y[base + j * inner] = e;
                sum = sum + e;
            }
            for j in 0..n {
                y[base + j * inner] = y[base + j * inner] / sum;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().clone(), y))
}

pub(super) fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = y.shape().split_at_axis(axis);
    let (yv, g) = (y.data(), dy.data());
    let mut dx = vec![T::zero(); y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let dot: T = (0..n)
                .map(|j| g[base + j * inner] * yv[base + j * inner])
                .sum();
            for j in 0..n {
                let at = base + j * inner;
                dx[at] = yv[at] * (g[at] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().clone(), dx)
}

/// Normalize each slice along `axis` to zero mean and unit population
/// variance. Returns the output and the per-slice `1/sqrt(var + eps)`.
pub(super) fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>)> {
    x.shape().check_axis(axis, "layer_norm")?;
    let (outer, n, inner) = x.shape().split_at_axis(axis);
    let nf = T::from_f64(n as f64);
    let src = x.data();
    let mut y = vec![T::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mean = (0..n).map(|j| src[base + j * inner]).sum::<T>() / nf;
            let var = (0..n)
                .map(|j| {
                    let d = src[base + j * inner] - mean;
                    d * d
                })
                .sum::<T>()
                / nf;
            let r = T::one() / (var + eps).sqrt();
            for j in 0..n {
                y[base + j * inner] = (src[base + j * inner] - mean) * r;
            }
            inv_std.push(r);
        }
    }
    Ok((Tensor::from_parts(x.shape().clone(), y), inv_std))
}

pub(super) fn layer_norm_backward<T: Scalar>(
    y: &Tensor<T>,
    inv_std: &[T],
    dy: &Tensor<T>,
    axis: usize,
) -> Tensor<T> {
    let (outer, n, inner) = y.shape().split_at_axis(axis);
    let nf = T::from_f64(n as f64);
    let (yv, g) = (y.data(), dy.data());
    let mut dx = vec![T::zero(); y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let r = inv_std[o * inner + i];
            let mean_g = (0..n).map(|j| g[base + j * inner]).sum::<T>() / nf;
            let mean_gy = (0..n)
                .map(|j| g[base + j * inner] * yv[base + j * inner])
                .sum::<T>()
                / nf;
            for j in 0..n {
                let at = base + j * inner;
                dx[at] = r * (g[at] - mean_g - yv[at] * mean_gy);
            }
        }
    }
    Tensor::from_parts(y.shape().clone(), dx)
}

fn without_axis(shape: &Shape, axis: usize) -> Shape {
    let mut dims = shape.dims().to_vec();
    dims.remove(axis);
    Shape::from(dims)
}

pub(super) fn mean_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    x.shape().check_axis(axis, "mean_axis")?;
    let (outer, n, inner) = x.shape().split_at_axis(axis);
    let nf = T::from_f64(n as f64);
    let src = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..n {
            let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
    }
    for v in &mut out {
        *v = *v / nf;
    }
    Ok(Tensor::from_parts(without_axis(x.shape(), axis), out))
}

pub(super) fn mean_axis_backward<T: Scalar>(
    dy: &Tensor<T>,
    in_shape: &Shape,
    axis: usize,
) -> Tensor<T> {
    let (outer, n, inner) = in_shape.split_at_axis(axis);
    let nf = T::from_f64(n as f64);
    let g = dy.data();
    let mut dx = Vec::with_capacity(in_shape.numel());
    for o in 0..outer {
        for _ in 0..n {
            dx.extend(g[o * inner..(o + 1) * inner].iter().map(|&v| v / nf));
        }
    }
    Tensor::from_parts(in_shape.clone(), dx)
}

pub(super) fn narrow<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    x.shape().check_axis(axis, "narrow")?;
    let (outer, n, inner) = x.shape().split_at_axis(axis);
    if len == 0 || start + len > n {
        return Err(TensorError::Narrow {
            start,
            len,
            extent: n,
        });
    }
    let src = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let from = (o * n + start) * inner;
        out.extend_from_slice(&src[from..from + len * inner]);
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = len;
    Ok(Tensor::from_parts(Shape::from(dims), out))
}

pub(super) fn narrow_backward<T: Scalar>(
    dy: &Tensor<T>,
    in_shape: &Shape,
    axis: usize,
    start: usize,
) -> Tensor<T> {
    let (outer, n, inner) = in_shape.split_at_axis(axis);
    let len = dy.dims()[axis];
    let g = dy.data();
    let mut dx = vec![T::zero(); in_shape.numel()];
    for o in 0..outer {
        let to = (o * n + start) * inner;
        dx[to..to + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(in_shape.clone(), dx)
}
