use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{Result, Scalar, Shape, Tensor, TensorError, LAYER_NORM_EPS};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Differentiable operation kinds, used to address a backward rule for
/// fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Permute,
    Reshape,
    Narrow,
    Softmax,
    LayerNorm,
    Relu,
    Sigmoid,
    Silu,
    MeanAxis,
    Sum,
}

enum Rule<T> {
    Leaf,
    Add {
        a: Option<usize>,
        b: Option<usize>,
        sa: Shape,
        sb: Shape,
    },
    Sub {
        a: Option<usize>,
        b: Option<usize>,
        sa: Shape,
        sb: Shape,
    },
    Mul {
        a: Option<(usize, Tensor<T>)>,
        b: Option<(usize, Tensor<T>)>,
        sa: Shape,
        sb: Shape,
    },
    Scale {
        x: usize,
        factor: T,
    },
    MatMul {
        a: Option<(usize, Tensor<T>)>,
        b: Option<(usize, Tensor<T>)>,
        sa: Shape,
        sb: Shape,
    },
    Permute {
        x: usize,
        axes: Vec<usize>,
    },
    Reshape {
        x: usize,
        shape: Shape,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
        shape: Shape,
    },
    Softmax {
        x: usize,
        axis: usize,
        y: Tensor<T>,
    },
    LayerNorm {
        x: usize,
        axis: usize,
        y: Tensor<T>,
        inv_std: Vec<T>,
    },
    Relu {
        x: usize,
        input: Tensor<T>,
    },
    Sigmoid {
        x: usize,
        y: Tensor<T>,
    },
    Silu {
        x: usize,
        input: Tensor<T>,
    },
    MeanAxis {
        x: usize,
        axis: usize,
        shape: Shape,
    },
    Sum {
        x: usize,
        shape: Shape,
    },
}

impl<T> Rule<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Rule::Leaf => return None,
            Rule::Add { .. } => OpKind::Add,
            Rule::Sub { .. } => OpKind::Sub,
            Rule::Mul { .. } => OpKind::Mul,
            Rule::Scale { .. } => OpKind::Scale,
            Rule::MatMul { .. } => OpKind::MatMul,
            Rule::Permute { .. } => OpKind::Permute,
            Rule::Reshape { .. } => OpKind::Reshape,
            Rule::Narrow { .. } => OpKind::Narrow,
            Rule::Softmax { .. } => OpKind::Softmax,
            Rule::LayerNorm { .. } => OpKind::LayerNorm,
            Rule::Relu { .. } => OpKind::Relu,
            Rule::Sigmoid { .. } => OpKind::Sigmoid,
            Rule::Silu { .. } => OpKind::Silu,
            Rule::MeanAxis { .. } => OpKind::MeanAxis,
            Rule::Sum { .. } => OpKind::Sum,
        })
    }
}

struct State<T> {
    rules: Vec<Rule<T>>,
    shapes: Vec<Shape>,
    consumed: bool,
    fault: Option<OpKind>,
}

/// Records one differentiable computation.
///
/// Operations take `&self`; a tape is single-threaded and is consumed by
/// its first [`backward`](Tape::backward) or [`vjp`](Tape::vjp). A tape
/// built with [`Tape::no_grad`] records nothing and only evaluates.
pub struct Tape<T> {
    id: u64,
    recording: bool,
    state: RefCell<State<T>>,
}

/// A value produced on a tape, optionally attached to a graph node.
#[derive(Clone)]
pub struct Var<T> {
    value: Tensor<T>,
    node: Option<usize>,
    tape: u64,
}

impl<T: std::fmt::Debug> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("value", &self.value)
            .field("node", &self.node)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn into_value(self) -> Tensor<T> {
        self.value
    }

    pub fn shape(&self) -> &Shape {
        self.value.shape()
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }
}

/// Gradients of every leaf reached by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    tape: u64,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`, or `None` if it is not a leaf on this tape or no
    /// path reaches it.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        match var.node {
            Some(id) if var.tape == self.tape => self.grads.get(id).and_then(Option::as_ref),
            _ => None,
        }
    }

    /// Gradient for `var`, with zeros standing in for an unreached leaf.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| var.value.zeros_like())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that evaluates without recording anything.
    pub fn no_grad() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(recording: bool) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording,
            state: RefCell::new(State {
                rules: Vec::new(),
                shapes: Vec::new(),
                consumed: false,
                fault: None,
            }),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.state.borrow().rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Corrupt the backward rule of `kind` on this tape (its input gradients
    /// are scaled by 1.5). Used to prove that gradient checks can fail.
    pub fn inject_fault(&self, kind: OpKind) {
        self.state.borrow_mut().fault = Some(kind);
    }

    /// A differentiable input. On a non-recording tape this is a constant.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let node = if self.recording {
            Some(self.push_node(value.shape().clone(), Rule::Leaf))
        } else {
            None
        };
        Var {
            value,
            node,
            tape: self.id,
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            value,
            node: None,
            tape: self.id,
        }
    }

    fn push_node(&self, shape: Shape, rule: Rule<T>) -> usize {
        let mut st = self.state.borrow_mut();
        st.rules.push(rule);
        st.shapes.push(shape);
        st.rules.len() - 1
    }

    fn node_of(&self, v: &Var<T>) -> Result<Option<usize>> {
        match v.node {
            Some(_) if v.tape != self.id => Err(TensorError::ForeignVar),
            n => Ok(n),
        }
    }

    fn check_open(&self) -> Result<()> {
        if self.state.borrow().consumed {
            Err(TensorError::TapeConsumed)
        } else {
            Ok(())
        }
    }

    fn emit(&self, value: Tensor<T>, rule: Option<Rule<T>>) -> Var<T> {
        let node = match rule {
            Some(rule) if self.recording => Some(self.push_node(value.shape().clone(), rule)),
            _ => None,
        };
        Var {
            value,
            node,
            tape: self.id,
        }
    }

    fn unary(
        &self,
        x: &Var<T>,
        value: Tensor<T>,
        rule: impl FnOnce(usize) -> Rule<T>,
    ) -> Result<Var<T>> {
        let node = self.node_of(x)?;
        Ok(self.emit(value, node.map(rule)))
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.check_open()?;
        let (na, nb) = (self.node_of(a)?, self.node_of(b)?);
        let value = a.value.add(&b.value)?;
        let rule = (na.is_some() || nb.is_some()).then(|| Rule::Add {
            a: na,
            b: nb,
            sa: a.shape().clone(),
            sb: b.shape().clone(),
        });
        Ok(self.emit(value, rule))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.check_open()?;
        let (na, nb) = (self.node_of(a)?, self.node_of(b)?);
        let value = a.value.sub(&b.value)?;
        let rule = (na.is_some() || nb.is_some()).then(|| Rule::Sub {
            a: na,
            b: nb,
            sa: a.shape().clone(),
            sb: b.shape().clone(),
        });
        Ok(self.emit(value, rule))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.check_open()?;
        let (na, nb) = (self.node_of(a)?, self.node_of(b)?);
        let value = a.value.mul(&b.value)?;
        let rule = (na.is_some() || nb.is_some()).then(|| Rule::Mul {
            a: na.map(|id| (id, b.value.clone())),
            b: nb.map(|id| (id, a.value.clone())),
            sa: a.shape().clone(),
            sb: b.shape().clone(),
        });
        Ok(self.emit(value, rule))
    }

    /// Multiply by a constant.
    pub fn scale(&self, x: &Var<T>, factor: T) -> Result<Var<T>> {
        self.check_open()?;
        self.unary(x, x.value.scale(factor), |x| Rule::Scale { x, factor })
    }

    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.check_open()?;
        let (na, nb) = (self.node_of(a)?, self.node_of(b)?);
        let value = a.value.matmul(&b.value)?;
        let rule = (na.is_some() || nb.is_some()).then(|| Rule::MatMul {
            a: na.map(|id| (id, b.value.clone())),
            b: nb.map(|id| (id, a.value.clone())),
            sa: a.shape().clone(),
            sb: b.shape().clone(),
        });
        Ok(self.emit(value, rule))
    }

    /// `x W + b` over the last axis of `x`.
    pub fn linear(&self, x: &Var<T>, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let xw = self.matmul(x, weight)?;
        self.add(&xw, bias)
    }

    pub fn permute(&self, x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        self.check_open()?;
        let value = x.value.permute(axes)?;
        self.unary(x, value, |x| Rule::Permute {
            x,
            axes: axes.to_vec(),
        })
    }

    pub fn reshape(&self, x: &Var<T>, shape: impl Into<Shape>) -> Result<Var<T>> {
        self.check_open()?;
        let value = x.value.reshape(shape)?;
        self.unary(x, value, |id| Rule::Reshape {
            x: id,
            shape: x.shape().clone(),
        })
    }

    pub fn narrow(&self, x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        self.check_open()?;
        let value = x.value.narrow(axis, start, len)?;
        self.unary(x, value, |id| Rule::Narrow {
            x: id,
            axis,
            start,
            shape: x.shape().clone(),
        })
    }

    pub fn softmax(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        self.check_open()?;
        let y = x.value.softmax(axis)?;
        self.unary(x, y.clone(), |x| Rule::Softmax { x, axis, y })
    }

    /// Layer normalization along `axis` without affine parameters.
    pub fn layer_norm(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        self.check_open()?;
        let (y, inv_std) = kernels::layer_norm(&x.value, axis, T::from_f64(LAYER_NORM_EPS))?;
        self.unary(x, y.clone(), |x| Rule::LayerNorm {
            x,
            axis,
            y,
            inv_std,
        })
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check_open()?;
        let y = x.value.map(|v| v.max(T::zero()));
        self.unary(x, y, |id| Rule::Relu {
            x: id,
            input: x.value.clone(),
        })
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check_open()?;
        let y = x.value.map(sigmoid);
        self.unary(x, y.clone(), |x| Rule::Sigmoid { x, y })
    }

    pub fn silu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check_open()?;
        let y = x.value.map(|v| v * sigmoid(v));
        self.unary(x, y, |id| Rule::Silu {
            x: id,
            input: x.value.clone(),
        })
    }

    pub fn mean_axis(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        self.check_open()?;
        let value = x.value.mean_axis(axis)?;
        self.unary(x, value, |id| Rule::MeanAxis {
            x: id,
            axis,
            shape: x.shape().clone(),
        })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check_open()?;
        let value = Tensor::scalar(x.value.sum());
        self.unary(x, value, |id| Rule::Sum {
            x: id,
            shape: x.shape().clone(),
        })
    }

    /// Mean of all elements as a rank-0 tensor.
    pub fn mean(&self, x: &Var<T>) -> Result<Var<T>> {
        let s = self.sum(x)?;
        self.scale(&s, T::one() / T::from_f64(x.value.numel() as f64))
    }

    /// Reverse sweep from a single-element loss.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape().clone()));
        }
        let seed = Tensor::full(loss.shape().clone(), T::one())?;
        self.vjp(&[(loss, seed)])
    }

    /// Vector-Jacobian product: reverse sweep seeded with a cotangent for
    /// each output.
    pub fn vjp(&self, seeds: &[(&Var<T>, Tensor<T>)]) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(TensorError::NotRecording);
        }
        let (rules, shapes, fault) = {
            let mut st = self.state.borrow_mut();
            if st.consumed {
                return Err(TensorError::TapeConsumed);
            }
            st.consumed = true;
            (
                std::mem::take(&mut st.rules),
                std::mem::take(&mut st.shapes),
                st.fault,
            )
        };
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; rules.len()];
        for (var, cot) in seeds {
            let Some(id) = self.node_of(var)? else {
                continue;
            };
            if *cot.shape() != shapes[id] {
                return Err(TensorError::ShapeMismatch {
                    op: "vjp",
                    lhs: shapes[id].clone(),
                    rhs: cot.shape().clone(),
                });
            }
            accumulate(&mut grads, id, cot.clone())?;
        }
        for (id, rule) in rules.into_iter().enumerate().rev() {
            if matches!(rule, Rule::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let factor = match (fault, rule.kind()) {
                (Some(f), Some(k)) if f == k => Some(T::from_f64(1.5)),
                _ => None,
            };
            for (input, grad) in propagate(rule, &g)? {
                let grad = match factor {
                    Some(f) => grad.scale(f),
                    None => grad,
                };
                accumulate(&mut grads, input, grad)?;
            }
        }
        Ok(Gradients {
            grads,
            tape: self.id,
        })
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) -> Result<()> {
    grads[id] = Some(match grads[id].take() {
        Some(prev) => prev.add(&g)?,
        None => g,
    });
    Ok(())
}

/// Apply one backward rule, returning (input node, gradient contribution).
fn propagate<T: Scalar>(rule: Rule<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
    let mut out = Vec::with_capacity(2);
    match rule {
        Rule::Leaf => {}
        Rule::Add { a, b, sa, sb } => {
            if let Some(a) = a {
                out.push((a, g.sum_to_shape(&sa)?));
            }
            if let Some(b) = b {
                out.push((b, g.sum_to_shape(&sb)?));
            }
        }
        Rule::Sub { a, b, sa, sb } => {
            if let Some(a) = a {
                out.push((a, g.sum_to_shape(&sa)?));
            }
            if let Some(b) = b {
                out.push((b, g.sum_to_shape(&sb)?.scale(-T::one())));
            }
        }
        Rule::Mul { a, b, sa, sb } => {
            if let Some((a, other)) = a {
                out.push((a, g.mul(&other)?.sum_to_shape(&sa)?));
            }
            if let Some((b, other)) = b {
                out.push((b, g.mul(&other)?.sum_to_shape(&sb)?));
            }
        }
        Rule::Scale { x, factor } => out.push((x, g.scale(factor))),
        Rule::MatMul { a, b, sa, sb } => {
            if let Some((a, bv)) = a {
                let ga = kernels::matmul(g, false, &bv, true)?;
                out.push((a, ga.sum_to_shape(&sa)?));
            }
            if let Some((b, av)) = b {
                let gb = if sb.rank() == 2 {
                    // unbatched weight: fold every leading axis into rows
                    let (k, n) = (sb.dims()[0], sb.dims()[1]);
                    let rows = av.numel() / k;
                    let a2 = av.reshape([rows, k])?;
                    let g2 = g.reshape([rows, n])?;
                    kernels::matmul(&a2, true, &g2, false)?
                } else {
                    kernels::matmul(&av, true, g, false)?.sum_to_shape(&sb)?
                };
                out.push((b, gb));
            }
        }
        Rule::Permute { x, axes } => {
            out.push((x, g.permute(&kernels::inverse_permutation(&axes))?));
        }
        Rule::Reshape { x, shape } => out.push((x, g.reshape(shape)?)),
        Rule::Narrow {
            x,
            axis,
            start,
            shape,
        } => out.push((x, kernels::narrow_backward(g, &shape, axis, start))),
        Rule::Softmax { x, axis, y } => out.push((x, kernels::softmax_backward(&y, g, axis))),
        Rule::LayerNorm {
            x,
            axis,
            y,
            inv_std,
        } => out.push((x, kernels::layer_norm_backward(&y, &inv_std, g, axis))),
        Rule::Relu { x, input } => {
            let data = g
                .data()
                .iter()
                .zip(input.data())
                .map(|(&gv, &iv)| if iv > T::zero() { gv } else { T::zero() })
                .collect();
            out.push((x, Tensor::from_parts(g.shape().clone(), data)));
        }
        Rule::Sigmoid { x, y } => {
            let data = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                .collect();
            out.push((x, Tensor::from_parts(g.shape().clone(), data)));
        }
        Rule::Silu { x, input } => {
            let data = g
                .data()
                .iter()
                .zip(input.data())
                .map(|(&gv, &iv)| {
                    let s = sigmoid(iv);
                    gv * s * (T::one() + iv * (T::one() - s))
                })
                .collect();
            out.push((x, Tensor::from_parts(g.shape().clone(), data)));
        }
        Rule::MeanAxis { x, axis, shape } => {
            out.push((x, kernels::mean_axis_backward(g, &shape, axis)));
        }
        Rule::Sum { x, shape } => out.push((x, Tensor::full(shape, g.item())?)),
    }
    Ok(out)
}
