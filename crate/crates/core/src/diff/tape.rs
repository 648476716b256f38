//! Reverse-mode differentiation tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the reverse pass is a plain reverse walk. Parameter
//! tensors are borrowed, not copied, into the tape.

use rand::Rng;

use super::params::ParamSet;
use super::scalar::{axpy, dot, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Zero padding applied by [`Tape::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    /// Output length `ceil(len / stride)`, padding split as evenly as
    /// possible with the extra sample on the right.
    Same,
}

impl Padding {
    /// `(left, right)` padding for an input of length `len`.
    pub fn amounts(self, len: usize, kernel: usize, stride: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let out = len.div_ceil(stride);
                let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(len);
                (total / 2, total - total / 2)
            }
        }
    }

    pub fn output_len(self, len: usize, kernel: usize, stride: usize) -> Option<usize> {
        let (l, r) = self.amounts(len, kernel, stride);
        let padded = len + l + r;
        (stride > 0 && kernel > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
    }
}

enum Value<'a, T> {
    Borrowed(&'a Tensor<T>),
    Owned(Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Borrowed(t) => t,
            Value::Owned(t) => t,
        }
    }
}

enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad_left: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Softmax {
        x: Var,
    },
    CrossEntropy {
        p: Var,
        target: Vec<T>,
        floor: T,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive applications.
pub struct Tape<'a, T> {
    nodes: Vec<Node<'a, T>>,
    checked: bool,
    track_kinks: bool,
    kinks: u64,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: false,
            track_kinks: false,
            kinks: FNV_OFFSET,
        }
    }

    /// Every op verifies its output is finite.
    pub fn checked(mut self) -> Self {
        self.checked = true;
        self
    }

    /// Records the activation pattern of every ReLU and max-pool so that a
    /// gradient checker can tell when a perturbation crossed a kink.
    pub fn tracking_kinks(mut self) -> Self {
        self.track_kinks = true;
        self
    }

    /// Hash of all ReLU on/off states and max-pool winners seen so far.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    fn push(&mut self, value: Value<'a, T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.checked && !value.get().all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn mix(&mut self, bit: u64) {
        self.kinks = (self.kinks ^ bit).wrapping_mul(FNV_PRIME);
    }

    /// Differentiable leaf borrowed from the caller.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned differentiable leaf.
    pub fn param_owned(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds every tensor of a parameter set as a leaf, in order.
    pub fn bind(&mut self, params: &'a ParamSet<T>) -> Vec<Var> {
        params.tensors().iter().map(|t| self.param(t)).collect()
    }

    /// 1-D convolution (cross-correlation) of `x: [c_in, len]` with
    /// `w: [c_out, c_in, k]` plus bias `b: [c_out]`, giving `[c_out, len_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 || ws[1] != xs[0] || bs[0] != ws[0] {
            return Err(Error::shape(
                "conv1d",
                format!("input {xs:?}, kernel {ws:?}, bias {bs:?}"),
            ));
        }
        let (c_in, len) = (xs[0], xs[1]);
        let (c_out, k) = (ws[0], ws[2]);
        let lo = padding.output_len(len, k, stride).ok_or_else(|| {
            Error::shape(
                "conv1d",
                format!("input length {len} too short for kernel {k} (stride {stride})"),
            )
        })?;
        let (pl, _) = padding.amounts(len, k, stride);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = vec![T::ZERO; c_out * lo];
        for o in 0..c_out {
            let row = &mut out[o * lo..(o + 1) * lo];
            row.fill(bd[o]);
            for c in 0..c_in {
                let wk = &wd[(o * c_in + c) * k..][..k];
                let xr = &xd[c * len..][..len];
                for (t, acc) in row.iter_mut().enumerate() {
                    let (j0, j1, s) = window(t, stride, pl, k, len);
                    if j1 > j0 {
                        *acc += dot(&wk[j0..j1], &xr[s..s + (j1 - j0)]);
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let out = Tensor::new(vec![c_out, lo], out)?;
        self.push(
            Value::Owned(out),
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad_left: pl,
            },
            rg,
            "conv1d",
        )
    }

    /// Max pooling over the last axis of `x: [c, len]`.
    pub fn maxpool1d(&mut self, x: Var, window_len: usize, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() != 2 || window_len == 0 || stride == 0 || xs[1] < window_len {
            return Err(Error::shape(
                "maxpool1d",
                format!("input {xs:?}, window {window_len}, stride {stride}"),
            ));
        }
        let (c, len) = (xs[0], xs[1]);
        let lo = (len - window_len) / stride + 1;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * lo);
        let mut argmax = Vec::with_capacity(c * lo);
        for ch in 0..c {
            let xr = &xd[ch * len..][..len];
            for t in 0..lo {
                let s = t * stride;
                let mut best = s;
                for i in s + 1..s + window_len {
                    if xr[i] > xr[best] {
                        best = i;
                    }
                }
                out.push(xr[best]);
                argmax.push((ch * len + best) as u32);
            }
        }
        if self.track_kinks {
            for &a in &argmax {
                self.mix(a as u64);
            }
        }
        let rg = self.rg(x);
        let out = Tensor::new(vec![c, lo], out)?;
        self.push(Value::Owned(out), Op::MaxPool { x, argmax }, rg, "maxpool1d")
    }

    /// Affine map `W x + b` of a vector `x: [n_in]`, `W: [n_out, n_in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || bs[0] != ws[0] {
            return Err(Error::shape(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let n_in = xs[0];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let out: Vec<T> = self
            .value(b)
            .data()
            .iter()
            .enumerate()
            .map(|(o, &bo)| bo + dot(&wd[o * n_in..][..n_in], xd))
            .collect();
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Value::Owned(Tensor::vector(out)), Op::Dense { x, w, b }, rg, "dense")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let shape = src.shape().to_vec();
        let out: Vec<T> = src
            .data()
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        if self.track_kinks {
            let bits: Vec<u64> = self.value(x).data().iter().map(|&v| (v > T::ZERO) as u64).collect();
            for b in bits {
                self.mix(b);
            }
        }
        let rg = self.rg(x);
        self.push(Value::Owned(Tensor::new(shape, out)?), Op::Relu { x }, rg, "relu")
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. Identity when
    /// `train` is false or `p` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::shape("dropout", format!("rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let src = self.value(x);
        let shape = src.shape().to_vec();
        let mask: Vec<T> = (0..src.len())
            .map(|_| if rng.random::<f64>() < p { T::ZERO } else { keep })
            .collect();
        let out: Vec<T> = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.rg(x);
        self.push(
            Value::Owned(Tensor::new(shape, out)?),
            Op::Dropout { x, mask },
            rg,
            "dropout",
        )
    }

    /// Softmax of a vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.shape().len() != 1 || src.is_empty() {
            return Err(Error::shape("softmax", format!("input {:?}", src.shape())));
        }
        let out = softmax_values(src.data());
        let rg = self.rg(x);
        self.push(Value::Owned(Tensor::vector(out)), Op::Softmax { x }, rg, "softmax")
    }

    /// `-sum_c target_c * ln(max(p_c, floor))`. Clamped entries get zero gradient.
    pub fn cross_entropy(&mut self, p: Var, target: &[T], floor: T) -> Result<Var> {
        let src = self.value(p);
        if src.shape().len() != 1 || src.len() != target.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("probabilities {:?}, target length {}", src.shape(), target.len()),
            ));
        }
        let mut loss = T::ZERO;
        for (&pc, &tc) in src.data().iter().zip(target) {
            if tc != T::ZERO {
                loss -= tc * clamp_floor(pc, floor).ln();
            }
        }
        let rg = self.rg(p);
        self.push(
            Value::Owned(Tensor::scalar(loss)),
            Op::CrossEntropy {
                p,
                target: target.to_vec(),
                floor,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Concatenates tensors into one flat vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Value::Owned(Tensor::vector(out)),
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
            "concat",
        )
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, vec![n])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push(Value::Owned(t), Op::Reshape { x }, rg, "reshape")
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(t), Op::Mul { a, b }, rg, "mul")
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(t), Op::Add { a, b }, rg, "add")
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Value::Owned(Tensor::scalar(s)), Op::Sum { x }, rg, "sum")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let src = self.value(x);
        let out: Vec<T> = src.data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(x);
        self.push(Value::Owned(t), Op::Scale { x, c }, rg, "scale")
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("an empty tape (no forward pass recorded)"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Backward("a variable that does not belong to this tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shape = self.value(loss).shape().to_vec();
        grads[loss.0] = Some(Tensor::new(shape, vec![T::ONE])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(&node.op, node.value.get(), &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad_left,
            } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let (c_in, len) = (xt.shape()[0], xt.shape()[1]);
                let (c_out, k) = (wt.shape()[0], wt.shape()[2]);
                let lo = out.shape()[1];
                let (xd, wd) = (xt.data(), wt.data());
                if self.rg(*b) {
                    let gb = grad_slot(grads, *b, self.value(*b));
                    for (o, gbo) in gb.iter_mut().enumerate() {
                        *gbo += gd[o * lo..(o + 1) * lo].iter().copied().sum::<T>();
                    }
                }
                if self.rg(*w) {
                    let gw = grad_slot(grads, *w, wt);
                    for o in 0..c_out {
                        let grow = &gd[o * lo..(o + 1) * lo];
                        for c in 0..c_in {
                            let gwk = &mut gw[(o * c_in + c) * k..][..k];
                            let xr = &xd[c * len..][..len];
                            for (t, &gt) in grow.iter().enumerate() {
                                if gt == T::ZERO {
                                    continue;
                                }
                                let (j0, j1, s) = window(t, *stride, *pad_left, k, len);
                                if j1 > j0 {
                                    axpy(gt, &xr[s..s + (j1 - j0)], &mut gwk[j0..j1]);
                                }
                            }
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, xt);
                    for o in 0..c_out {
                        let grow = &gd[o * lo..(o + 1) * lo];
                        for c in 0..c_in {
                            let wk = &wd[(o * c_in + c) * k..][..k];
                            let gxr = &mut gx[c * len..][..len];
                            for (t, &gt) in grow.iter().enumerate() {
                                if gt == T::ZERO {
                                    continue;
                                }
                                let (j0, j1, s) = window(t, *stride, *pad_left, k, len);
                                if j1 > j0 {
                                    axpy(gt, &wk[j0..j1], &mut gxr[s..s + (j1 - j0)]);
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, self.value(*x));
                    for (&a, &gv) in argmax.iter().zip(gd) {
                        gx[a as usize] += gv;
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let n_in = xt.len();
                if self.rg(*b) {
                    let gb = grad_slot(grads, *b, self.value(*b));
                    for (a, &v) in gb.iter_mut().zip(gd) {
                        *a += v;
                    }
                }
                if self.rg(*w) {
                    let gw = grad_slot(grads, *w, wt);
                    for (o, &go) in gd.iter().enumerate() {
                        if go != T::ZERO {
                            axpy(go, xt.data(), &mut gw[o * n_in..][..n_in]);
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, xt);
                    for (o, &go) in gd.iter().enumerate() {
                        if go != T::ZERO {
                            axpy(go, &wt.data()[o * n_in..][..n_in], gx);
                        }
                    }
                }
            }
            Op::Relu { x } => {
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, self.value(*x));
                    for ((a, &o), &gv) in gx.iter_mut().zip(out.data()).zip(gd) {
                        if o > T::ZERO {
                            *a += gv;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, self.value(*x));
                    for ((a, &m), &gv) in gx.iter_mut().zip(mask).zip(gd) {
                        *a += m * gv;
                    }
                }
            }
            Op::Softmax { x } => {
                if self.rg(*x) {
                    let y = out.data();
                    let inner: T = y.iter().zip(gd).map(|(&yi, &gi)| yi * gi).sum();
                    let gx = grad_slot(grads, *x, self.value(*x));
                    for ((a, &yi), &gi) in gx.iter_mut().zip(y).zip(gd) {
                        *a += yi * (gi - inner);
                    }
                }
            }
            Op::CrossEntropy { p, target, floor } => {
                if self.rg(*p) {
                    let pt = self.value(*p);
                    let g0 = gd[0];
                    let gp = grad_slot(grads, *p, pt);
                    for ((a, &pc), &tc) in gp.iter_mut().zip(pt.data()).zip(target) {
                        if tc != T::ZERO && pc > *floor {
                            *a -= g0 * tc / pc;
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &part in parts {
                    let n = self.value(part).len();
                    if self.rg(part) {
                        let gp = grad_slot(grads, part, self.value(part));
                        for (a, &v) in gp.iter_mut().zip(&gd[off..off + n]) {
                            *a += v;
                        }
                    }
                    off += n;
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, self.value(*x));
                    for (a, &v) in gx.iter_mut().zip(gd) {
                        *a += v;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let ga = grad_slot(grads, *a, ta);
                    for ((s, &bv), &gv) in ga.iter_mut().zip(tb.data()).zip(gd) {
                        *s += bv * gv;
                    }
                }
                if self.rg(*b) {
                    let gb = grad_slot(grads, *b, tb);
                    for ((s, &av), &gv) in gb.iter_mut().zip(ta.data()).zip(gd) {
                        *s += av * gv;
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        let gv = grad_slot(grads, v, self.value(v));
                        for (s, &x) in gv.iter_mut().zip(gd) {
                            *s += x;
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, self.value(*x));
                    for s in gx.iter_mut() {
                        *s += gd[0];
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, self.value(*x));
                    for (s, &v) in gx.iter_mut().zip(gd) {
                        *s += *c * v;
                    }
                }
            }
        }
    }
}

/// Kernel taps `j0..j1` that overlap the input for output position `t`, and
/// the input index of tap `j0`.
#[inline]
fn window(t: usize, stride: usize, pad_left: usize, k: usize, len: usize) -> (usize, usize, usize) {
    let start = (t * stride) as isize - pad_left as isize;
    let j0 = (-start).max(0) as usize;
    let j1 = ((len as isize - start).min(k as isize)).max(0) as usize;
    let s = (start + j0 as isize).max(0) as usize;
    (j0.min(j1), j1, s)
}

fn grad_slot<'g, T: Scalar>(grads: &'g mut [Option<Tensor<T>>], v: Var, like: &Tensor<T>) -> &'g mut [T] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(like.shape()))
        .data_mut()
}

#[inline]
fn clamp_floor<T: Scalar>(p: T, floor: T) -> T {
    if p > floor {
        p
    } else {
        floor
    }
}

pub(crate) fn softmax_values<T: Scalar>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(x[0], |a, b| if b > a { b } else { a });
    let e: Vec<T> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when the loss does not
    /// depend on it.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Gradients for leaves bound with [`Tape::bind`], in parameter order.
    pub fn collect(&mut self, vars: &[Var], params: &ParamSet<T>) -> Vec<Tensor<T>> {
        vars.iter()
            .zip(params.tensors())
            .map(|(&v, t)| self.take_or_zeros(v, t))
            .collect()
    }
}
