//! Dense row-major tensors and the reverse-mode tape built on top of them.
//!
//! [`Tensor`] is an immutable value: cloning shares the buffer, and every
//! operation allocates a fresh result. Differentiation is handled by
//! [`Tape`], which records operations on [`Var`] handles and replays their
//! backward rules in reverse order.

pub mod alloc;
mod kernels;
mod tape;

use std::fmt;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::Float;
use thiserror::Error;

pub use kernels::{set_threads, threads};
pub use tape::{Gradients, OpKind, Tape, Var};

/// Epsilon used by every layer normalization in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Floating-point element type: `f32` for training and inference, `f64` for
/// gradient and solver-order checks.
pub trait Scalar:
    Float + Default + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C = alpha * A B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices of
    /// the given extents; `C` must not alias `A` or `B`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: axis {axis} out of range for shape {shape}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Shape,
    },
    #[error("{len} elements do not fill shape {shape}")]
    DataLength { len: usize, shape: Shape },
    #[error("shape {0} has a zero extent")]
    EmptyExtent(Shape),
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("tape was already consumed by a backward pass")]
    TapeConsumed,
    #[error("tape is not recording")]
    NotRecording,
    #[error("variable was recorded on a different tape")]
    ForeignVar,
    #[error("{0:?} is not a permutation of the axes")]
    Permutation(Vec<usize>),
    #[error("narrow [{start}, {start}+{len}) exceeds extent {extent}")]
    Narrow {
        start: usize,
        len: usize,
        extent: usize,
    },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Tensor extents, outermost first.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    /// Broadcast two shapes by trailing-axis alignment with size-1 expansion.
    pub fn broadcast(&self, other: &Shape, op: &'static str) -> Result<Shape> {
        let rank = self.rank().max(other.rank());
        let mut out = vec![0; rank];
        for (i, slot) in out.iter_mut().enumerate() {
            let a = self.dim_from_end(rank - 1 - i);
            let b = other.dim_from_end(rank - 1 - i);
            *slot = match (a, b) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => {
                    return Err(TensorError::ShapeMismatch {
                        op,
                        lhs: self.clone(),
                        rhs: other.clone(),
                    })
                }
            };
        }
        Ok(Shape(out))
    }

    fn dim_from_end(&self, i: usize) -> usize {
        if i < self.0.len() {
            self.0[self.0.len() - 1 - i]
        } else {
            1
        }
    }

    /// Strides of `self` viewed as broadcast into `out` (zero on expanded axes).
    pub(crate) fn broadcast_strides(&self, out: &Shape) -> Vec<usize> {
        let own = self.strides();
        let offset = out.rank() - self.rank();
        (0..out.rank())
            .map(|i| {
                if i < offset || self.0[i - offset] == 1 {
                    0
                } else {
                    own[i - offset]
                }
            })
            .collect()
    }

    /// Split around `axis` into (outer, extent, inner) element counts.
    pub(crate) fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.0[..axis].iter().product();
        let inner = self.0[axis + 1..].iter().product();
        (outer, self.0[axis], inner)
    }

    pub(crate) fn check_axis(&self, axis: usize, op: &'static str) -> Result<()> {
        if axis < self.rank() {
            Ok(())
        } else {
            Err(TensorError::Axis {
                op,
                axis,
                shape: self.clone(),
            })
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(v: [usize; N]) -> Self {
        Shape(v.to_vec())
    }
}

struct Buffer<T>(Vec<T>);

impl<T> Buffer<T> {
    fn new(data: Vec<T>) -> Self {
        alloc::on_alloc();
        Buffer(data)
    }
}

impl<T> Drop for Buffer<T> {
    fn drop(&mut self) {
        alloc::on_free();
    }
}

/// Dense row-major array. Cheap to clone; never mutated after construction.
#[derive(Clone)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Buffer<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.dims().contains(&0) {
            return Err(TensorError::EmptyExtent(shape));
        }
        if shape.numel() != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            shape,
            data: Arc::new(Buffer::new(data)),
        }
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Result<Self> {
        let shape = shape.into();
        let n = shape.numel();
        Self::from_vec(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn zeros_like(&self) -> Self {
        Self::from_parts(self.shape.clone(), vec![T::zero(); self.numel()])
    }

    /// Rank-0 tensor.
    pub fn scalar(value: T) -> Self {
        Self::from_parts(Shape::default(), vec![value])
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.0.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data.0
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.0.clone()
    }

    /// Element at a full multi-index. Panics on a bad index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.rank(), "index rank");
        let offset: usize = index
            .iter()
            .zip(self.shape.strides())
            .zip(self.dims())
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {i} out of bounds for extent {d}");
                i * s
            })
            .sum();
        self.data.0[offset]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.numel(),
            1,
            "item() on a tensor with {} elements",
            self.numel()
        );
        self.data.0[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data()
                .iter()
                .map(|v| U::from_f64(v.as_f64()))
                .collect(),
        )
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(
            self.shape.clone(),
            self.data().iter().map(|&v| f(v)).collect(),
        )
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.numel() || shape.dims().contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data().iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data().iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data().iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// `self + alpha * other` for equal shapes.
    pub fn axpy(&self, alpha: T, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "axpy")?;
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data()
                .iter()
                .zip(other.data())
                .map(|(&a, &b)| a + alpha * b)
                .collect(),
        ))
    }

    pub(crate) fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            })
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        kernels::zip_broadcast(self, other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        kernels::zip_broadcast(self, other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        kernels::zip_broadcast(self, other, "mul", |a, b| a * b)
    }

    /// Batched matrix product over the trailing two axes.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        kernels::matmul(self, false, other, false)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        kernels::permute(self, axes)
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        kernels::softmax(self, axis)
    }

    pub fn layer_norm(&self, axis: usize) -> Result<Self> {
        kernels::layer_norm(self, axis, T::from_f64(LAYER_NORM_EPS)).map(|(y, _)| y)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        kernels::mean_axis(self, axis)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        kernels::narrow(self, axis, start, len)
    }

    /// Sum a broadcast result back down to `target` (the adjoint of broadcasting).
    pub fn sum_to_shape(&self, target: &Shape) -> Result<Self> {
        kernels::sum_to_shape(self, target)
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor<{}>{} ", std::any::type_name::<T>(), self.shape)?;
        let data = &self.data.0[..];
        if data.len() <= SHOWN {
            write!(f, "{data:?}")
        } else {
            write!(f, "{:?}..", &data[..SHOWN])
        }
    }
}

impl<T: PartialEq> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data.0 == other.data.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_lengths_and_empty_extents() {
        assert!(matches!(
            Tensor::<f32>::from_vec([2, 2], vec![0.0; 3]),
            Err(TensorError::DataLength { .. })
        ));
        assert!(matches!(
            Tensor::<f32>::zeros([2, 0]),
            Err(TensorError::EmptyExtent(_))
        ));
    }

    #[test]
    fn broadcast_rule() {
        let a = Shape::from([4, 1, 3]);
        let b = Shape::from([2, 1]);
        assert_eq!(a.broadcast(&b, "t").unwrap(), Shape::from([4, 2, 3]));
        assert!(Shape::from([2, 3])
            .broadcast(&Shape::from([4]), "t")
            .is_err());
    }

    #[test]
    fn broadcast_add_bias() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[3], &[10., 20., 30.]);
        assert_eq!(
            x.add(&b).unwrap().to_vec(),
            vec![11., 22., 33., 14., 25., 36.]
        );
        let col = t(&[2, 1], &[1., 2.]);
        assert_eq!(
            x.mul(&col).unwrap().to_vec(),
            vec![1., 2., 3., 8., 10., 12.]
        );
    }

    #[test]
    fn matmul_examples() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let v = t(&[2, 1], &[5., 6.]);
        assert_eq!(eye.matmul(&v).unwrap().to_vec(), vec![5., 6.]);

        let z = Tensor::<f64>::zeros([2, 3]).unwrap();
        let any = t(&[3, 4], &(0..12).map(f64::from).collect::<Vec<_>>());
        let out = z.matmul(&any).unwrap();
        assert_eq!(out.dims(), &[2, 4]);
        assert!(out.data().iter().all(|&x| x == 0.0));

        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(a.matmul(&v).unwrap().to_vec(), vec![17., 39.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]).unwrap();
        let b = Tensor::<f32>::zeros([2, 3]).unwrap();
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = t(&[3], &[0., 0., 0.]).softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(t(&[1], &[7.]).softmax(0).unwrap().to_vec(), vec![1.0]);
        let s = t(&[3], &[1., 2., 3.]).softmax(0).unwrap();
        // exp/sum evaluated directly
        let e: Vec<f64> = [1f64, 2., 3.].iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        for (v, ei) in s.data().iter().zip(&e) {
            assert!((v - ei / z).abs() < 1e-15);
        }
        assert!((s.data()[0] - 0.0900).abs() < 1e-4);
        assert!((s.data()[1] - 0.2447).abs() < 1e-4);
        assert!((s.data()[2] - 0.6652).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = t(&[2], &[0., f64::NAN]);
        assert!(matches!(x.softmax(0), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn layer_norm_examples() {
        let y = t(&[3], &[5., 5., 5.]).layer_norm(0).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
        let y = t(&[2], &[1., -1.]).layer_norm(0).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-4 && (y.data()[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn mean_axis_examples() {
        let x = t(&[1, 3], &[1., 2., 3.]);
        let m = x.mean_axis(0).unwrap();
        assert_eq!(m.dims(), &[3]);
        assert_eq!(m.to_vec(), vec![1., 2., 3.]);
        assert_eq!(t(&[2], &[2., 4.]).mean_axis(0).unwrap().to_vec(), vec![3.]);
    }

    #[test]
    fn permute_and_narrow() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let p = x.permute(&[1, 0]).unwrap();
        assert_eq!(p.dims(), &[3, 2]);
        assert_eq!(p.to_vec(), vec![1., 4., 2., 5., 3., 6.]);
        assert!(x.permute(&[0, 0]).is_err());
        let n = x.narrow(1, 1, 2).unwrap();
        assert_eq!(n.to_vec(), vec![2., 3., 5., 6.]);
        assert!(x.narrow(1, 2, 2).is_err());
    }

    #[test]
    fn sum_to_shape_reduces_broadcast_axes() {
        let g = Tensor::<f64>::ones([4, 2, 3]).unwrap();
        let r = g.sum_to_shape(&Shape::from([2, 1])).unwrap();
        assert_eq!(r.to_vec(), vec![12., 12.]);
    }

    #[test]
    fn buffers_are_counted() {
        let before = alloc::live_buffers();
        let a = Tensor::<f32>::zeros([3]).unwrap();
        let b = a.clone();
        assert_eq!(alloc::live_buffers(), before + 1);
        drop(a);
        drop(b);
        assert_eq!(alloc::live_buffers(), before);
    }
}
