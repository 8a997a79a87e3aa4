//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every traced operation in execution order, so the
//! node list is already topologically sorted. Leaves registered with
//! [`Tape::param`] carry a parameter id; [`Tape::backward`] returns
//! gradients for those ids only.
//!
//! A tape belongs to one thread. Batch training builds one tape per image
//! and sums the per-image parameter gradients afterwards.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A fused operation defined outside this module (the loss functions).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradients w.r.t. each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d(Var, Var, Var),
    Relu(Var),
    Sigmoid(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    L2Normalize(Var),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(op, inputs) => write!(f, "Custom({}, {inputs:?})", op.name()),
            Op::Leaf => write!(f, "Leaf"),
            Op::MatMul(a, b) => write!(f, "MatMul({a:?}, {b:?})"),
            Op::Conv2d(a, b, c) => write!(f, "Conv2d({a:?}, {b:?}, {c:?})"),
            Op::Relu(a) => write!(f, "Relu({a:?})"),
            Op::Sigmoid(a) => write!(f, "Sigmoid({a:?})"),
            Op::AvgPool2(a) => write!(f, "AvgPool2({a:?})"),
            Op::GlobalAvgPool(a) => write!(f, "GlobalAvgPool({a:?})"),
            Op::L2Normalize(a) => write!(f, "L2Normalize({a:?})"),
            Op::Reshape(a) => write!(f, "Reshape({a:?})"),
            Op::Add(a, b) => write!(f, "Add({a:?}, {b:?})"),
            Op::Mul(a, b) => write!(f, "Mul({a:?}, {b:?})"),
            Op::Scale(a, s) => write!(f, "Scale({a:?}, {s})"),
            Op::Sum(a) => write!(f, "Sum({a:?})"),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<usize>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients keyed by parameter id.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_param.keys().copied()
    }

    pub fn into_map(self) -> BTreeMap<usize, Tensor> {
        self.by_param
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input. Never receives a gradient in [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable input identified by `id`.
    pub fn param(&mut self, id: usize, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let out = tensor::conv2d(self.value(input), self.value(kernels), self.value(bias))?;
        Ok(self.push(out, Op::Conv2d(input, kernels, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = tensor::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = tensor::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = tensor::avg_pool2(self.value(x))?;
        Ok(self.push(out, Op::AvgPool2(x)))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = tensor::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvgPool(x)))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let out = tensor::l2_normalize(self.value(x));
        self.push(out, Op::L2Normalize(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = elementwise("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = elementwise("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let src = self.value(x);
        let out = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v * factor).collect())
            .expect("shape preserved");
        self.push(out, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        Ok(self.push(out, Op::Custom(op, inputs.to_vec())))
    }

    /// Gradients of a scalar `loss` w.r.t. every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let seed = Tensor::full(self.value(loss).shape(), 1.0);
        self.backward_from(loss, seed)
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) to the parameters.
    pub fn backward_from(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        self.value(output).check_same_shape("backward seed", &seed)?;
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut emit = |v: Var, t: Tensor| accumulate(&mut grads, v, t);
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = tensor::matmul_backward(self.value(*a), self.value(*b), &g);
                    emit(*a, ga);
                    emit(*b, gb);
                }
                Op::Conv2d(x, k, b) => {
                    let (gx, gk, gb) = tensor::conv2d_backward(self.value(*x), self.value(*k), &g);
                    emit(*x, gx);
                    emit(*k, gk);
                    emit(*b, gb);
                }
                Op::Relu(x) => {
                    let src = self.value(*x);
                    let data = src
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    emit(*x, with_shape(src, data));
                }
                Op::Sigmoid(x) => {
                    let data = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&s, &gv)| gv * s * (1.0 - s))
                        .collect();
                    emit(*x, with_shape(self.value(*x), data));
                }
                Op::AvgPool2(x) => {
                    emit(*x, tensor::avg_pool2_backward(self.value(*x).shape(), &g));
                }
                Op::GlobalAvgPool(x) => {
                    let src = self.value(*x);
                    let plane = src.shape()[1] * src.shape()[2];
                    let data = g
                        .data()
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv / plane as f64, plane))
                        .collect();
                    emit(*x, with_shape(src, data));
                }
                Op::L2Normalize(x) => {
                    let src = self.value(*x);
                    let norm = tensor::l2_norm(src);
                    let data = if norm > tensor::NORM_EPS {
                        let y = node.value.data();
                        let dot: f64 = y.iter().zip(g.data()).map(|(a, b)| a * b).sum();
                        y.iter().zip(g.data()).map(|(yv, gv)| (gv - yv * dot) / norm).collect()
                    } else {
                        g.data().iter().map(|gv| gv / tensor::NORM_EPS).collect()
                    };
                    emit(*x, with_shape(src, data));
                }
                Op::Reshape(x) => {
                    emit(*x, with_shape(self.value(*x), g.into_data()));
                }
                Op::Add(a, b) => {
                    emit(*a, with_shape(self.value(*a), g.data().to_vec()));
                    emit(*b, with_shape(self.value(*b), g.into_data()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                    let gb = g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect();
                    emit(*a, with_shape(av, ga));
                    emit(*b, with_shape(bv, gb));
                }
                Op::Scale(x, factor) => {
                    let data = g.data().iter().map(|v| v * factor).collect();
                    emit(*x, with_shape(self.value(*x), data));
                }
                Op::Sum(x) => {
                    let src = self.value(*x);
                    emit(*x, Tensor::full(src.shape(), g.item()));
                }
                Op::Custom(op, inputs) => {
                    let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let input_grads = op.backward(&values, &node.value, &g);
                    for (v, t) in inputs.iter().zip(input_grads) {
                        emit(*v, t);
                    }
                }
            }
        }

        let by_param = self
            .nodes
            .iter()
            .enumerate()
            .take(output.0 + 1)
            .filter_map(|(i, n)| n.param.map(|id| (i, id)))
            .filter_map(|(i, id)| grads[i].take().map(|g| (id, g)))
            .collect();
        Ok(Gradients { by_param })
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |x: &Var| &values[x.0];
            let out = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::MatMul(a, b) => tensor::matmul(v(a), v(b))?,
                Op::Conv2d(x, k, b) => tensor::conv2d(v(x), v(k), v(b))?,
                Op::Relu(x) => tensor::relu(v(x)),
                Op::Sigmoid(x) => tensor::sigmoid(v(x)),
                Op::AvgPool2(x) => tensor::avg_pool2(v(x))?,
                Op::GlobalAvgPool(x) => tensor::global_avg_pool(v(x))?,
                Op::L2Normalize(x) => tensor::l2_normalize(v(x)),
                Op::Reshape(x) => v(x).reshape(node.value.shape())?,
                Op::Add(a, b) => elementwise("add", v(a), v(b), |x, y| x + y)?,
                Op::Mul(a, b) => elementwise("mul", v(a), v(b), |x, y| x * y)?,
                Op::Scale(x, f) => with_shape(v(x), v(x).data().iter().map(|e| e * f).collect()),
                Op::Sum(x) => Tensor::scalar(v(x).sum()),
                Op::Custom(op, inputs) => {
                    let ins: Vec<&Tensor> = inputs.iter().map(v).collect();
                    op.forward(&ins)?
                }
            };
            values.push(out);
        }
        Ok(values)
    }

    /// Recorded value of every node, in recording order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }
}

fn with_shape(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("gradient shaped like its input")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(t),
    }
}

fn elementwise(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    a.check_same_shape(op, b)?;
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}
