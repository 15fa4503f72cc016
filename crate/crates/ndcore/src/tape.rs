//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its forward value and enough context
//! to propagate gradients. [`Tape::backward_with`] walks the tape in reverse,
//! accumulating gradients into the leaves that asked for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NdError, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Scale of the self-normalizing exponential linear unit.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// Negative-branch coefficient of the self-normalizing exponential linear unit.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub stride: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            stride: 1,
            bias: true,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Number of input samples covered by one output sample.
    pub fn extent(&self) -> usize {
        (self.kernel_size - 1) * self.dilation + 1
    }

    pub fn out_len(&self, in_len: usize) -> Option<usize> {
        if self.kernel_size == 0 || self.dilation == 0 {
            return None;
        }
        kernels::conv_out_len(in_len, self.kernel_size, self.dilation, self.stride)
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.out_channels, self.in_channels, self.kernel_size]
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_size == 0
            || self.dilation == 0
            || self.stride == 0
        {
            return Err(NdError::invalid(
                "conv1d",
                format!("all sizes must be positive: {self:?}"),
            ));
        }
        Ok(())
    }
}

/// How gradients pass through gated non-linearities during the backward sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BackwardMode {
    #[default]
    Plain,
    /// At every SELU, pass gradient only where the forward pre-activation is
    /// positive and the incoming gradient is positive.
    Guided,
}

enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Selu {
        x: Var,
    },
    AlphaDropout {
        x: Var,
        keep: Vec<bool>,
        a: T,
    },
    AvgPool {
        x: Var,
        rows: usize,
        len: usize,
        window: usize,
        stride: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        in_f: usize,
        out_f: usize,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Cosine {
        u: Var,
        v: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    AddScalar {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Transpose {
        x: Var,
    },
    AddN {
        xs: Vec<Var>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> NdError {
    NdError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn take_or_zeros<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> Tensor<T> {
    grads[v.0].take().unwrap_or_else(|| Tensor::zeros(shape))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Dilated, strided 1-D cross-correlation over `[C, L]` or `[N, C, L]` input.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        spec.validate()?;
        let xs = self.shape(x).to_vec();
        let (batch, c, l) = match xs.as_slice() {
            [c, l] => (1, *c, *l),
            [n, c, l] => (*n, *c, *l),
            _ => return Err(shape_err("conv1d", &xs, &[spec.in_channels, 0])),
        };
        let ws = self.shape(w).to_vec();
        if c != spec.in_channels || ws != spec.weight_shape() {
            return Err(shape_err("conv1d", &xs, &ws));
        }
        if let Some(b) = b {
            if self.shape(b) != [spec.out_channels] {
                return Err(shape_err("conv1d", self.shape(b), &[spec.out_channels]));
            }
        }
        let out_len = spec.out_len(l).ok_or_else(|| {
            NdError::invalid(
                "conv1d",
                format!("kernel extent {} exceeds input length {l}", spec.extent()),
            )
        })?;
        let geom = ConvGeom {
            batch,
            in_channels: c,
            out_channels: spec.out_channels,
            in_len: l,
            out_len,
            kernel: spec.kernel_size,
            dilation: spec.dilation,
            stride: spec.stride,
        };
        let mut y = vec![T::zero(); batch * spec.out_channels * out_len];
        kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut y,
        );
        let shape: Vec<usize> = if xs.len() == 2 {
            vec![spec.out_channels, out_len]
        } else {
            vec![batch, spec.out_channels, out_len]
        };
        let value = Tensor::from_vec(&shape, y)?.check_finite("conv1d")?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv1d { x, w, b, geom }, rg))
    }

    pub fn selu(&mut self, x: Var) -> Result<Var> {
        let lambda = T::from_f64c(SELU_LAMBDA);
        let la = T::from_f64c(SELU_LAMBDA * SELU_ALPHA);
        let value = self
            .value(x)
            .map(|v| {
                if v > T::zero() {
                    lambda * v
                } else {
                    la * (v.exp() - T::one())
                }
            })
            .check_finite("selu")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Selu { x }, rg))
    }

    /// Alpha dropout: dropped units take the SELU negative saturation value and
    /// an affine correction keeps zero mean / unit variance inputs normalized.
    pub fn alpha_dropout(&mut self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NdError::invalid(
                "alpha_dropout",
                format!("p must lie in [0, 1), got {p}"),
            ));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let sat = -SELU_LAMBDA * SELU_ALPHA;
        let q = 1.0 - p;
        let a = 1.0 / (q * (1.0 + p * sat * sat)).sqrt();
        let b = -a * p * sat;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xv = self.value(x);
        let keep: Vec<bool> = (0..xv.len()).map(|_| rng.random::<f64>() >= p).collect();
        let (at, bt, st) = (T::from_f64c(a), T::from_f64c(b), T::from_f64c(sat));
        let data = xv
            .data()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| at * if k { v } else { st } + bt)
            .collect();
        let value = Tensor::from_vec(xv.shape(), data)?.check_finite("alpha_dropout")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::AlphaDropout { x, keep, a: at }, rg))
    }

    fn pool_dims(&self, x: Var, window: usize, stride: usize, op: &'static str) -> Result<(usize, usize, Vec<usize>)> {
        let xs = self.shape(x).to_vec();
        let len = *xs.last().ok_or_else(|| NdError::invalid(op, "scalar input"))?;
        if window == 0 || stride == 0 {
            return Err(NdError::invalid(op, "window and stride must be positive"));
        }
        if window > len {
            return Err(NdError::invalid(op, format!("window {window} exceeds length {len}")));
        }
        let rows = xs[..xs.len() - 1].iter().product();
        let mut out = xs.clone();
        *out.last_mut().unwrap() = (len - window) / stride + 1;
        Ok((rows, len, out))
    }

    pub fn avg_pool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (rows, len, shape) = self.pool_dims(x, window, stride, "avg_pool1d")?;
        let y = kernels::avg_pool_forward(self.value(x).data(), rows, len, window, stride);
        let value = Tensor::from_vec(&shape, y)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::AvgPool {
                x,
                rows,
                len,
                window,
                stride,
            },
            rg,
        ))
    }

    pub fn max_pool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (rows, len, shape) = self.pool_dims(x, window, stride, "max_pool1d")?;
        let (y, argmax) = kernels::max_pool_forward(self.value(x).data(), rows, len, window, stride);
        let value = Tensor::from_vec(&shape, y)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// `y = x W^T + b` for `x` of shape `[in]` or `[N, in]`, `W` of shape `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (rows, in_f) = match xs.as_slice() {
            [i] => (1, *i),
            [n, i] => (*n, *i),
            _ => return Err(shape_err("linear", &xs, &ws)),
        };
        if ws.len() != 2 || ws[1] != in_f {
            return Err(shape_err("linear", &xs, &ws));
        }
        let out_f = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [out_f] {
                return Err(shape_err("linear", self.shape(b), &[out_f]));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut y = vec![T::zero(); rows * out_f];
        for r in 0..rows {
            let xr = &xv[r * in_f..(r + 1) * in_f];
            for o in 0..out_f {
                let wr = &wv[o * in_f..(o + 1) * in_f];
                let mut acc = xr.iter().zip(wr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                if let Some(b) = b {
                    acc = acc + self.value(b).data()[o];
                }
                y[r * out_f + o] = acc;
            }
        }
        let shape = if xs.len() == 1 { vec![out_f] } else { vec![rows, out_f] };
        let value = Tensor::from_vec(&shape, y)?.check_finite("linear")?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            Op::Linear {
                x,
                w,
                b,
                rows,
                in_f,
                out_f,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy over rows of `[N, C]` (or a single `[C]` row).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        let (rows, classes) = match ls.as_slice() {
            [c] => (1, *c),
            [n, c] => (*n, *c),
            _ => return Err(shape_err("softmax_cross_entropy", &ls, &[labels.len()])),
        };
        if labels.len() != rows || labels.iter().any(|&l| l >= classes) {
            return Err(shape_err("softmax_cross_entropy", &ls, &[labels.len()]));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * classes];
        let mut loss = T::zero();
        for r in 0..rows {
            let row = &lv[r * classes..(r + 1) * classes];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss = loss + (lse - row[labels[r]]);
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - lse).exp();
            }
        }
        loss = loss / T::from_usize(rows).unwrap();
        let value = Tensor::scalar(loss).check_finite("softmax_cross_entropy")?;
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Cosine similarity of two equally sized tensors (flattened).
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let (uv, vv) = (self.value(u), self.value(v));
        if uv.len() != vv.len() {
            return Err(shape_err("cosine", uv.shape(), vv.shape()));
        }
        let (nu, nv) = (uv.norm(), vv.norm());
        if nu == T::zero() || nv == T::zero() {
            return Err(NdError::DegenerateEmbedding);
        }
        let c = uv.dot(vv) / (nu * nv);
        let value = Tensor::scalar(c).check_finite("cosine")?;
        let rg = self.rg(u) || self.rg(v);
        Ok(self.push(value, Op::Cosine { u, v }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.shape(), data)?.check_finite(op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let ct = T::from_f64c(c);
        let value = self.value(x).map(|v| v * ct).check_finite("scale")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Scale { x, c: ct }, rg))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let ct = T::from_f64c(c);
        let value = self.value(x).map(|v| v + ct).check_finite("add_scalar")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::AddScalar { x }, rg))
    }

    /// `max(x, 0)` element-wise; the gradient at exactly zero is taken as zero.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        Ok(self.push(value, Op::Relu { x }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum()).check_finite("sum")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Sum { x }, rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(NdError::invalid("mean", "empty tensor"));
        }
        let value = Tensor::scalar(xv.sum() / T::from_usize(xv.len()).unwrap()).check_finite("mean")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mean { x }, rg))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| NdError::invalid("add_n", "no inputs"))?;
        let mut acc = self.value(first).clone();
        for &x in &xs[1..] {
            acc.add_assign(self.value(x))?;
        }
        let value = acc.check_finite("add_n")?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(value, Op::AddN { xs: xs.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose2()?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Transpose { x }, rg))
    }

    /// Gradient of a scalar node with respect to every leaf that requires it.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let v = self.value(root);
        if v.len() != 1 {
            return Err(NdError::invalid(
                "backward",
                format!("root must be scalar, got {:?}", v.shape()),
            ));
        }
        self.backward_with(vec![(root, Tensor::full(v.shape(), T::one()))], BackwardMode::Plain)
    }

    /// Reverse sweep seeded with explicit output gradients.
    pub fn backward_with(&self, seeds: Vec<(Var, Tensor<T>)>, mode: BackwardMode) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for (v, g) in seeds {
            if g.shape() != self.shape(v) {
                return Err(shape_err("backward", g.shape(), self.shape(v)));
            }
            top = top.max(v.0 + 1);
            accumulate(&mut grads, v, g);
        }
        for i in (0..top).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, mode)?;
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        mode: BackwardMode,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut dx = self.rg(*x).then(|| take_or_zeros(grads, *x, xv.shape()));
                let mut dw = self.rg(*w).then(|| take_or_zeros(grads, *w, wv.shape()));
                let mut db = b
                    .filter(|b| self.rg(*b))
                    .map(|b| take_or_zeros(grads, b, self.shape(b)));
                kernels::conv1d_backward(
                    geom,
                    xv.data(),
                    wv.data(),
                    g.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    grads[w.0] = Some(dw);
                }
                if let (Some(db), Some(b)) = (db, b) {
                    grads[b.0] = Some(db);
                }
            }
            Op::Selu { x } => {
                let lambda = T::from_f64c(SELU_LAMBDA);
                let la = T::from_f64c(SELU_LAMBDA * SELU_ALPHA);
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| match mode {
                        BackwardMode::Plain => {
                            if v > T::zero() {
                                d * lambda
                            } else {
                                d * la * v.exp()
                            }
                        }
                        BackwardMode::Guided => {
                            if v > T::zero() && d > T::zero() {
                                d * lambda
                            } else {
                                T::zero()
                            }
                        }
                    })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), data)?);
            }
            Op::AlphaDropout { x, keep, a } => {
                let data = g
                    .data()
                    .iter()
                    .zip(keep)
                    .map(|(&d, &k)| if k { d * *a } else { T::zero() })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(g.shape(), data)?);
            }
            Op::AvgPool {
                x,
                rows,
                len,
                window,
                stride,
            } => {
                let mut dx = take_or_zeros(grads, *x, self.shape(*x));
                kernels::avg_pool_backward(g.data(), *rows, *len, *window, *stride, dx.data_mut());
                grads[x.0] = Some(dx);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = take_or_zeros(grads, *x, self.shape(*x));
                let d = dx.data_mut();
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    d[i] = d[i] + gv;
                }
                grads[x.0] = Some(dx);
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                in_f,
                out_f,
            } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let gd = g.data();
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); rows * in_f];
                    for r in 0..*rows {
                        for o in 0..*out_f {
                            let go = gd[r * out_f + o];
                            for i in 0..*in_f {
                                dx[r * in_f + i] = dx[r * in_f + i] + go * wv[o * in_f + i];
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx)?);
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); out_f * in_f];
                    for r in 0..*rows {
                        for o in 0..*out_f {
                            let go = gd[r * out_f + o];
                            for i in 0..*in_f {
                                dw[o * in_f + i] = dw[o * in_f + i] + go * xv[r * in_f + i];
                            }
                        }
                    }
                    accumulate(grads, *w, Tensor::from_vec(self.shape(*w), dw)?);
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    let mut db = vec![T::zero(); *out_f];
                    for r in 0..*rows {
                        for o in 0..*out_f {
                            db[o] = db[o] + gd[r * out_f + o];
                        }
                    }
                    accumulate(grads, b, Tensor::vector(db));
                }
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let rows = labels.len();
                let classes = probs.len() / rows;
                let scale = g.item() / T::from_usize(rows).unwrap();
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * classes + l] = d[r * classes + l] - scale;
                }
                accumulate(grads, *logits, Tensor::from_vec(self.shape(*logits), d)?);
            }
            Op::Cosine { u, v } => {
                let (uv, vv) = (self.value(*u), self.value(*v));
                let (nu, nv) = (uv.norm(), vv.norm());
                let c = node.value.item();
                let gs = g.item();
                let inv = T::one() / (nu * nv);
                if self.rg(*u) {
                    let k = c / (nu * nu);
                    let d = uv
                        .data()
                        .iter()
                        .zip(vv.data())
                        .map(|(&a, &b)| gs * (b * inv - a * k))
                        .collect();
                    accumulate(grads, *u, Tensor::from_vec(uv.shape(), d)?);
                }
                if self.rg(*v) {
                    let k = c / (nv * nv);
                    let d = vv
                        .data()
                        .iter()
                        .zip(uv.data())
                        .map(|(&b, &a)| gs * (a * inv - b * k))
                        .collect();
                    accumulate(grads, *v, Tensor::from_vec(vv.shape(), d)?);
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&d, &y)| d * y).collect();
                    accumulate(grads, *a, Tensor::from_vec(g.shape(), d)?);
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&d, &x)| d * x).collect();
                    accumulate(grads, *b, Tensor::from_vec(g.shape(), d)?);
                }
            }
            Op::Scale { x, c } => accumulate(grads, *x, g.map(|v| v * *c)),
            Op::AddScalar { x } => accumulate(grads, *x, g),
            Op::Relu { x } => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(g.shape(), d)?);
            }
            Op::Sum { x } => accumulate(grads, *x, Tensor::full(self.shape(*x), g.item())),
            Op::Mean { x } => {
                let n = T::from_usize(self.value(*x).len()).unwrap();
                accumulate(grads, *x, Tensor::full(self.shape(*x), g.item() / n));
            }
            Op::AddN { xs } => {
                for &x in xs {
                    if self.rg(x) {
                        accumulate(grads, x, g.clone());
                    }
                }
            }
            Op::Reshape { x } => accumulate(grads, *x, g.reshape(self.shape(*x))?),
            Op::Transpose { x } => accumulate(grads, *x, g.transpose2()?),
        }
        Ok(())
    }
}

/// Cosine similarity of two plain vectors.
pub fn cosine<T: Real>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(shape_err("cosine", &[u.len()], &[v.len()]));
    }
    let dot = u.iter().zip(v).fold(T::zero(), |a, (&x, &y)| a + x * y);
    let nu = u.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
    let nv = v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
    if nu == T::zero() || nv == T::zero() {
        return Err(NdError::DegenerateEmbedding);
    }
    Ok((dot / (nu * nv)).max(-T::one()).min(T::one()))
}
