//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Every operation appends a node whose inputs already exist on the tape, so
//! node order is a valid topological order and [`Graph::backward`] is a single
//! reverse sweep.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Reduce {
        kind: Reduce,
        input: Var,
        axes: Vec<usize>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Select(Var, usize),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        softmax: Vec<T>,
    },
}

/// Names of every differentiable op, in the order gradient checks visit them.
pub const OP_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "matmul",
    "transpose",
    "reshape",
    "select",
    "dense",
    "conv2d",
    "maxpool2",
    "upsample2",
    "cross_entropy",
];

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary(Unary::Relu, _) => "relu",
            Op::Unary(Unary::Sigmoid, _) => "sigmoid",
            Op::Unary(Unary::Exp, _) => "exp",
            Op::Unary(Unary::Log, _) => "log",
            Op::Unary(Unary::Square, _) => "square",
            Op::Binary(Binary::Add, ..) => "add",
            Op::Binary(Binary::Sub, ..) => "sub",
            Op::Binary(Binary::Mul, ..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Reduce {
                kind: Reduce::Sum, ..
            } => "sum",
            Op::Reduce {
                kind: Reduce::Mean, ..
            } => "mean",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Select(..) => "select",
            Op::Dense { .. } => "dense",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Upsample2(..) => "upsample2",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    fault: Option<String>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` when `v` did not
    /// participate.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros for non-participating nodes.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every input element, the flat index of the output element it
/// reduces into.
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).collect();
    let out_shape: Vec<usize> = kept.iter().map(|&d| shape[d]).collect();
    let out_strides = strides(&out_shape);
    let mut map = Vec::with_capacity(numel(shape));
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..numel(shape) {
        let o = kept
            .iter()
            .zip(&out_strides)
            .map(|(&d, &s)| idx[d] * s)
            .sum();
        map.push(o);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (map, out_shape)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Deliberately corrupts the backward rule of the named operation by a
    /// 1% scale error. Only used to prove that gradient checks can fail.
    pub fn inject_fault(&mut self, op: &str) {
        self.fault = Some(op.to_string());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if kind == Unary::Log {
            if let Some(bad) = xv.data().iter().find(|v| **v <= T::zero()) {
                return Err(TensorError::NumericDomain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        let out = match kind {
            Unary::Relu => xv.map(|v| if v > T::zero() { v } else { T::zero() }),
            Unary::Sigmoid => xv.map(sigmoid),
            Unary::Exp => xv.map(|v| v.exp()),
            Unary::Log => xv.map(|v| v.ln()),
            Unary::Square => xv.map(|v| v * v),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Unary(kind, x), out, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        same_shape(name, av, bv)?;
        let f = match kind {
            Binary::Add => |x: T, y: T| x + y,
            Binary::Sub => |x: T, y: T| x - y,
            Binary::Mul => |x: T, y: T| x * y,
        };
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Binary(kind, a, b), out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// `factor · x`.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64(factor);
        let out = self.value(x).map(|v| v * f);
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Scale(x, f), out, rg))
    }

    /// `x + offset`, elementwise.
    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var> {
        let o = T::from_f64(offset);
        let out = self.value(x).map(|v| v + o);
        let rg = self.rg(&[x]);
        Ok(self.push(Op::AddScalar(x), out, rg))
    }

    /// Reduces over `axes`; an empty axis list reduces over everything and
    /// yields a scalar.
    pub fn reduce(&mut self, kind: Reduce, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut axes: Vec<usize> = if axes.is_empty() {
            (0..shape.len()).collect()
        } else {
            axes.to_vec()
        };
        axes.sort_unstable();
        axes.dedup();
        if let Some(bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(TensorError::dim(
                "reduce",
                format!("axis {bad} invalid for shape {shape:?}"),
            ));
        }
        let (map, out_shape) = reduction_map(&shape, &axes);
        let mut out = vec![T::zero(); numel(&out_shape)];
        for (&o, &v) in map.iter().zip(self.value(x).data()) {
            out[o] = out[o] + v;
        }
        if kind == Reduce::Mean {
            let count = T::from_f64((numel(&shape) / out.len()) as f64);
            out.iter_mut().for_each(|v| *v = *v / count);
        }
        let out = Tensor::new(&out_shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Reduce { kind, input: x, axes }, out, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, x, &[])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, x, &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(TensorError::dim(
                "matmul",
                format!("{:?} · {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, av.data(), (k as isize, 1), bv.data(), (n as isize, 1), &mut out, false);
        let out = Tensor::new(&[m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(TensorError::dim("transpose", format!("rank {}", xv.rank())));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv.data()[i * c + j];
            }
        }
        let out = Tensor::new(&[c, r], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Transpose(x), out, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Reshape(x), out, rg))
    }

    /// Slice `index` along the leading axis.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let out = self.value(x).select(index)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Select(x, index), out, rg))
    }

    /// `input[N,D] · weight[D,K] + bias[K]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(input), self.value(weight), self.value(bias));
        if xv.rank() != 2
            || wv.rank() != 2
            || bv.rank() != 1
            || xv.shape()[1] != wv.shape()[0]
            || wv.shape()[1] != bv.shape()[0]
        {
            return Err(TensorError::dim(
                "dense",
                format!("{:?} · {:?} + {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let (n, d, k) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
        let mut out: Vec<T> = (0..n).flat_map(|_| bv.data().iter().copied()).collect();
        T::gemm(n, d, k, xv.data(), (d as isize, 1), wv.data(), (k as isize, 1), &mut out, true);
        let out = Tensor::new(&[n, k], out)?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(Op::Dense { input, weight, bias }, out, rg))
    }

    /// Cross-correlation of `input[N,C,H,W]` with `kernel[F,C,kH,kW]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if xs.len() != 4 || ks.len() != 4 || bs.len() != 1 {
            return Err(TensorError::dim(
                "conv2d",
                format!("input {xs:?}, kernel {ks:?}, bias {bs:?}"),
            ));
        }
        if ks[1] != xs[1] {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel expects {} channels, input has {}", ks[1], xs[1]),
            ));
        }
        if bs[0] != ks[0] {
            return Err(TensorError::dim(
                "conv2d",
                format!("bias length {} for {} filters", bs[0], ks[0]),
            ));
        }
        if stride == 0 {
            return Err(TensorError::dim("conv2d", "stride must be positive"));
        }
        if ks[2] > xs[2] + 2 * padding || ks[3] > xs[3] + 2 * padding {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel {}x{} larger than padded input", ks[2], ks[3]),
            ));
        }
        let geom = ConvGeometry {
            batch: xs[0],
            in_channels: xs[1],
            height: xs[2],
            width: xs[3],
            filters: ks[0],
            kernel_h: ks[2],
            kernel_w: ks[3],
            stride,
            padding,
            out_h: (xs[2] + 2 * padding - ks[2]) / stride + 1,
            out_w: (xs[3] + 2 * padding - ks[3]) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let out = Tensor::new(&[geom.batch, geom.filters, geom.out_h, geom.out_w], out)?;
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            out,
            rg,
        ))
    }

    /// Disjoint 2×2 max pooling of `[N,C,H,W]`.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(TensorError::dim(
                "maxpool2",
                format!("needs [N,C,H,W] with even H and W, got {s:?}"),
            ));
        }
        let (out, argmax) =
            kernels::maxpool2_forward(s[0] * s[1], s[2], s[3], self.value(input).data());
        let out = Tensor::new(&[s[0], s[1], s[2] / 2, s[3] / 2], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(Op::MaxPool2 { input, argmax }, out, rg))
    }

    /// Distance of the recorded evaluation point to the nearest place where a
    /// relu or max-pool is not differentiable: the smallest `|x|` fed to a
    /// relu and the smallest nonzero gap between the two largest values of a
    /// pooling window. Exact window ties are skipped, since continuous inputs
    /// only tie where a relu has flattened them to zero. `+inf` when neither
    /// op was used.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Unary(Unary::Relu, x) => {
                    for v in self.value(*x).data() {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                Op::MaxPool2 { input, .. } => {
                    let s = self.shape(*input);
                    let (h, w) = (s[2], s[3]);
                    let data = self.value(*input).data();
                    for plane in data.chunks(h * w) {
                        for oy in 0..h / 2 {
                            for ox in 0..w / 2 {
                                let mut win = [0.0f64; 4];
                                for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                                    win[k] = plane[(2 * oy + dy) * w + 2 * ox + dx].as_f64();
                                }
                                win.sort_by(|a, b| b.total_cmp(a));
                                let gap = win[0] - win[1];
                                if gap > 0.0 {
                                    margin = margin.min(gap);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Nearest-neighbour 2× upsampling of `[N,C,H,W]`.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(TensorError::dim("upsample2", format!("needs [N,C,H,W], got {s:?}")));
        }
        let out = kernels::upsample2_forward(s[0] * s[1], s[2], s[3], self.value(input).data());
        let out = Tensor::new(&[s[0], s[1], 2 * s[2], 2 * s[3]], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(Op::Upsample2(input), out, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, using the
    /// log-sum-exp shift for stability.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(TensorError::dim(
                "cross_entropy",
                format!("logits {:?} for {} labels", lv.shape(), labels.len()),
            ));
        }
        let (n, k) = (lv.shape()[0], lv.shape()[1]);
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::Contract(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut softmax = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = &lv.data()[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            total = total + (lse - row[label]);
            for j in 0..k {
                softmax[i * k + j] = (row[j] - m).exp() / z;
            }
        }
        let out = Tensor::scalar(total / T::from_f64(n as f64));
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                softmax,
            },
            out,
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// across every use of a node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut contribs = self.node_backward(node, &g);
            if self.fault.as_deref() == Some(node.op.name()) {
                let f = T::from_f64(1.01);
                for (_, c) in contribs.iter_mut() {
                    c.iter_mut().for_each(|v| *v = *v * f);
                }
            }
            for (v, c) in contribs {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a = *a + *b),
                    slot => *slot = Some(c),
                }
            }
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&shapes)
            .zip(&self.nodes)
            .map(|((g, s), n)| match g {
                Some(g) if n.requires_grad => Some(Tensor::new(s, g).expect("gradient shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Unary(kind, x) => {
                let xv = val(*x);
                let y = node.value.data();
                let d: Vec<T> = match kind {
                    Unary::Relu => xv
                        .iter()
                        .zip(g)
                        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                    Unary::Sigmoid => y
                        .iter()
                        .zip(g)
                        .map(|(&y, &g)| g * y * (T::one() - y))
                        .collect(),
                    Unary::Exp => y.iter().zip(g).map(|(&y, &g)| g * y).collect(),
                    Unary::Log => xv.iter().zip(g).map(|(&x, &g)| g / x).collect(),
                    Unary::Square => {
                        let two = T::from_f64(2.0);
                        xv.iter().zip(g).map(|(&x, &g)| two * x * g).collect()
                    }
                };
                vec![(*x, d)]
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add => vec![(*a, g.to_vec()), (*b, g.to_vec())],
                Binary::Sub => vec![(*a, g.to_vec()), (*b, g.iter().map(|&v| -v).collect())],
                Binary::Mul => {
                    let (av, bv) = (val(*a), val(*b));
                    vec![
                        (*a, g.iter().zip(bv).map(|(&g, &b)| g * b).collect()),
                        (*b, g.iter().zip(av).map(|(&g, &a)| g * a).collect()),
                    ]
                }
            },
            Op::Scale(x, f) => vec![(*x, g.iter().map(|&v| v * *f).collect())],
            Op::AddScalar(x) => vec![(*x, g.to_vec())],
            Op::Reduce { kind, input, axes } => {
                let shape = self.nodes[input.0].value.shape();
                let (map, _) = reduction_map(shape, axes);
                let mut d: Vec<T> = map.iter().map(|&o| g[o]).collect();
                if *kind == Reduce::Mean {
                    let count = T::from_f64((numel(shape) / g.len()) as f64);
                    d.iter_mut().for_each(|v| *v = *v / count);
                }
                vec![(*input, d)]
            }
            Op::MatMul(a, b) => {
                let (ash, bsh) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (ash[0], ash[1], bsh[1]);
                let mut out = Vec::new();
                if self.wants(*a) {
                    // dA[M,K] = dC[M,N] · Bᵀ[N,K]
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, (n as isize, 1), val(*b), (1, n as isize), &mut da, false);
                    out.push((*a, da));
                }
                if self.wants(*b) {
                    // dB[K,N] = Aᵀ[K,M] · dC[M,N]
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, val(*a), (1, k as isize), g, (n as isize, 1), &mut db, false);
                    out.push((*b, db));
                }
                out
            }
            Op::Transpose(x) => {
                let s = self.nodes[x.0].value.shape();
                let (r, c) = (s[0], s[1]);
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                vec![(*x, d)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Select(x, index) => {
                let total = self.nodes[x.0].value.len();
                let mut d = vec![T::zero(); total];
                d[index * g.len()..(index + 1) * g.len()].copy_from_slice(g);
                vec![(*x, d)]
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let ws = self.nodes[weight.0].value.shape();
                let (d, k) = (ws[0], ws[1]);
                let n = g.len() / k;
                let mut out = Vec::new();
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * d];
                    T::gemm(n, k, d, g, (k as isize, 1), val(*weight), (1, k as isize), &mut dx, false);
                    out.push((*input, dx));
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); d * k];
                    T::gemm(d, n, k, val(*input), (1, d as isize), g, (k as isize, 1), &mut dw, false);
                    out.push((*weight, dw));
                }
                if self.wants(*bias) {
                    let mut db = vec![T::zero(); k];
                    for row in g.chunks(k) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    out.push((*bias, db));
                }
                out
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (dx, dk, db) = kernels::conv2d_backward(
                    geom,
                    val(*input),
                    val(*kernel),
                    g,
                    (self.wants(*input), self.wants(*kernel), self.wants(*bias)),
                );
                [(*input, dx), (*kernel, dk), (*bias, db)]
                    .into_iter()
                    .filter_map(|(v, d)| d.map(|d| (v, d)))
                    .collect()
            }
            Op::MaxPool2 { input, argmax } => {
                let mut d = vec![T::zero(); self.nodes[input.0].value.len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    d[src] = d[src] + gv;
                }
                vec![(*input, d)]
            }
            Op::Upsample2(x) => {
                let s = self.nodes[x.0].value.shape();
                vec![(*x, kernels::upsample2_backward(s[0] * s[1], s[2], s[3], g))]
            }
            Op::CrossEntropy {
                logits,
                labels,
                softmax,
            } => {
                let n = labels.len();
                let k = softmax.len() / n;
                let scale = g[0] / T::from_f64(n as f64);
                let mut d: Vec<T> = softmax.iter().map(|&p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] = d[i * k + l] - scale;
                }
                vec![(*logits, d)]
            }
        }
    }
}
