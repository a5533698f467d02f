//! Primitive catalogue: forward on the tape plus the matching backward rule.

use super::{Node, Op, Tape, Unary, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn apply_unary<S: Scalar>(kind: Unary, x: S) -> S {
    match kind {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Ln => x.ln(),
        Unary::Sqrt => x.sqrt(),
        Unary::Square => x * x,
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => S::one() / (S::one() + (-x).exp()),
        Unary::Relu => {
            if x > S::zero() {
                x
            } else {
                S::zero()
            }
        }
        Unary::Gelu => S::of(gelu(x.as_f64())),
        Unary::Selu => {
            let l = S::of(SELU_LAMBDA);
            if x > S::zero() {
                l * x
            } else {
                l * S::of(SELU_ALPHA) * (x.exp() - S::one())
            }
        }
    }
}

/// d(out)/d(in) given input `x` and output `y`.
fn unary_derivative<S: Scalar>(kind: Unary, x: S, y: S) -> S {
    match kind {
        Unary::Neg => -S::one(),
        Unary::Exp => y,
        Unary::Ln => S::one() / x,
        Unary::Sqrt => S::of(0.5) / y,
        Unary::Square => S::of(2.0) * x,
        Unary::Tanh => S::one() - y * y,
        Unary::Sigmoid => y * (S::one() - y),
        Unary::Relu => {
            if x > S::zero() {
                S::one()
            } else {
                S::zero()
            }
        }
        Unary::Gelu => S::of(gelu_grad(x.as_f64())),
        Unary::Selu => {
            if x > S::zero() {
                S::of(SELU_LAMBDA)
            } else {
                y + S::of(SELU_LAMBDA * SELU_ALPHA)
            }
        }
    }
}

fn softmax_rows<S: Scalar>(x: &Tensor<S>, log: bool) -> Tensor<S> {
    let d = *x.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let sum: S = row.iter().map(|&v| (v - m).exp()).sum();
        if log {
            let lse = m + sum.ln();
            out.extend(row.iter().map(|&v| v - lse));
        } else {
            out.extend(row.iter().map(|&v| (v - m).exp() / sum));
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

fn conv1d_out_len(len: usize, k: usize, padding: usize) -> Option<usize> {
    (len + 2 * padding).checked_sub(k).map(|v| v + 1)
}

/// `cols[lo, ci*k + kk] = x[ci, lo + kk - p]` for one batch element.
fn im2col<S: Scalar>(
    x: &[S],
    cin: usize,
    len: usize,
    k: usize,
    padding: usize,
    lout: usize,
) -> Vec<S> {
    let ck = cin * k;
    let mut cols = vec![S::zero(); lout * ck];
    for ci in 0..cin {
        let xrow = &x[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let col = ci * k + kk;
            for lo in 0..lout {
                let src = lo + kk;
                if src >= padding && src - padding < len {
                    cols[lo * ck + col] = xrow[src - padding];
                }
            }
        }
    }
    cols
}

impl<S: Scalar> Tape<S> {
    fn unary_op(&self, x: Var, kind: Unary) -> Var {
        let rg = self.requires_grad(x);
        let y = self.value(x).map(|v| apply_unary(kind, v));
        self.push(y, Op::Unary(x, kind), rg)
    }

    fn binary_op(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        let y = {
            let (va, vb) = (self.value(a), self.value(b));
            tensor::broadcast_binary(name, &va, &vb, f)?
        };
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(y, op, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_op("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&self, x: Var, c: S) -> Var {
        let y = self.value(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push(y, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&self, x: Var, c: S) -> Var {
        let y = self.value(x).map(|v| v + c);
        let rg = self.requires_grad(x);
        self.push(y, Op::AddScalar(x), rg)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Neg)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Exp)
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Ln)
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Sqrt)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Square)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Tanh)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Sigmoid)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Relu)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Gelu)
    }

    pub fn selu(&self, x: Var) -> Var {
        self.unary_op(x, Unary::Selu)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let y = {
            let (va, vb) = (self.value(a), self.value(b));
            tensor::matmul(&va, &vb)?
        };
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(y, Op::MatMul(a, b), rg))
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm
                .iter()
                .all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape("permute", &shape, perm));
        }
        let y = tensor::permute(&self.value(x), perm);
        let rg = self.requires_grad(x);
        Ok(self.push(y, Op::Permute(x, perm.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        let n = self.shape(x).len();
        if n < 2 {
            return Err(Error::shape("transpose", &self.shape(x), &[]));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let y = {
            let vals: Vec<_> = xs.iter().map(|&v| self.value(v)).collect();
            let first = vals[0].shape();
            if axis >= first.len() {
                return Err(Error::invalid(
                    "concat",
                    format!("axis {axis} out of range for {first:?}"),
                ));
            }
            for v in &vals[1..] {
                let s = v.shape();
                let compatible = s.len() == first.len()
                    && s.iter()
                        .zip(first)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::shape("concat", first, s));
                }
            }
            let refs: Vec<&Tensor<S>> = vals.iter().map(|r| &**r).collect();
            tensor::concat(&refs, axis)
        };
        let rg = self.any_requires_grad(xs);
        Ok(self.push(y, Op::Concat(xs.to_vec(), axis), rg))
    }

    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let y = tensor::slice_axis(&self.value(x), axis, start, len);
        let rg = self.requires_grad(x);
        Ok(self.push(y, Op::Slice(x, axis, start), rg))
    }

    /// Splits `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// Sum over `axes`. With `keepdim` the reduced axes stay as size 1.
    pub fn sum_axes(&self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let shape = self.shape(x);
        if axes.iter().any(|&a| a >= shape.len()) {
            return Err(Error::invalid(
                "sum",
                format!("axes {axes:?} out of range for {shape:?}"),
            ));
        }
        let mut kept = shape.clone();
        for &a in axes {
            kept[a] = 1;
        }
        let y = tensor::reduce_to_shape(&self.value(x), &kept);
        let rg = self.requires_grad(x);
        let s = self.push(y, Op::SumTo(x), rg);
        if keepdim {
            return Ok(s);
        }
        let squeezed: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        self.reshape(s, &squeezed)
    }

    pub fn mean_axes(&self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let shape = self.shape(x);
        let count: usize = axes
            .iter()
            .map(|&a| shape.get(a).copied().unwrap_or(1))
            .product();
        let s = self.sum_axes(x, axes, keepdim)?;
        Ok(self.scale(s, S::one() / S::of(count as f64)))
    }

    /// Sum of every element, shape `[]`.
    pub fn sum_all(&self, x: Var) -> Result<Var> {
        let n = self.shape(x).len();
        let axes: Vec<usize> = (0..n).collect();
        self.sum_axes(x, &axes, false)
    }

    pub fn mean_all(&self, x: Var) -> Result<Var> {
        let count = self.value(x).len();
        let s = self.sum_all(x)?;
        Ok(self.scale(s, S::one() / S::of(count as f64)))
    }

    pub fn softmax(&self, x: Var) -> Var {
        let y = softmax_rows(&self.value(x), false);
        let rg = self.requires_grad(x);
        self.push(y, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&self, x: Var) -> Var {
        let y = softmax_rows(&self.value(x), true);
        let rg = self.requires_grad(x);
        self.push(y, Op::LogSoftmax(x), rg)
    }

    /// `(x - mean) / sqrt(var + eps)` over the last axis (population variance).
    pub fn normalize_last(&self, x: Var, eps: f64) -> Var {
        let (y, inv) = {
            let xv = self.value(x);
            let d = *xv.shape().last().unwrap_or(&1);
            let dn = S::of(d as f64);
            let mut out = Vec::with_capacity(xv.len());
            let mut inv = Vec::with_capacity(xv.len() / d);
            for row in xv.data().chunks(d) {
                let mean = row.iter().copied().sum::<S>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
                let is = S::one() / (var + S::of(eps)).sqrt();
                out.extend(row.iter().map(|&v| (v - mean) * is));
                inv.push(is);
            }
            (Tensor::from_parts(xv.shape().to_vec(), out), inv)
        };
        let rg = self.requires_grad(x);
        self.push(y, Op::Normalize(x, inv), rg)
    }

    /// Cross-correlation, stride 1, zero padding. `x: [B, C_in, L]`,
    /// `w: [C_out, C_in, K]` → `[B, C_out, L + 2p − K + 1]`.
    pub fn conv1d(&self, x: Var, w: Var, padding: usize) -> Result<Var> {
        let y = {
            let (xv, wv) = (self.value(x), self.value(w));
            let (xs, ws) = (xv.shape(), wv.shape());
            if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
                return Err(Error::shape("conv1d", xs, ws));
            }
            let (b, cin, len) = (xs[0], xs[1], xs[2]);
            let (cout, k) = (ws[0], ws[2]);
            let lout = conv1d_out_len(len, k, padding).ok_or_else(|| {
                Error::invalid("conv1d", format!("length {len} shorter than kernel {k}"))
            })?;
            let ck = cin * k;
            let mut out = vec![S::zero(); b * cout * lout];
            for bi in 0..b {
                let cols = im2col(
                    &xv.data()[bi * cin * len..(bi + 1) * cin * len],
                    cin,
                    len,
                    k,
                    padding,
                    lout,
                );
                // out[bi] (cout×lout) = W (cout×ck) · colsᵀ (ck×lout)
                S::gemm(
                    cout,
                    ck,
                    lout,
                    S::one(),
                    wv.data(),
                    ck as isize,
                    1,
                    &cols,
                    1,
                    ck as isize,
                    S::zero(),
                    &mut out[bi * cout * lout..(bi + 1) * cout * lout],
                    lout as isize,
                    1,
                );
            }
            Tensor::from_parts(vec![b, cout, lout], out)
        };
        let rg = self.any_requires_grad(&[x, w]);
        Ok(self.push(y, Op::Conv1d { x, w, padding }, rg))
    }

    /// Windowed maximum over the last axis of `[B, C, L]`.
    pub fn max_pool1d(&self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (y, argmax) = {
            let xv = self.value(x);
            let xs = xv.shape();
            if xs.len() != 3 || kernel == 0 || stride == 0 || xs[2] < kernel {
                return Err(Error::invalid(
                    "max_pool1d",
                    format!("kernel {kernel}, stride {stride} on input {xs:?}"),
                ));
            }
            let (rows, len) = (xs[0] * xs[1], xs[2]);
            let lout = (len - kernel) / stride + 1;
            let mut out = Vec::with_capacity(rows * lout);
            let mut arg = Vec::with_capacity(rows * lout);
            for r in 0..rows {
                let row = &xv.data()[r * len..(r + 1) * len];
                for o in 0..lout {
                    let s = o * stride;
                    let mut best = s;
                    for i in s + 1..s + kernel {
                        if row[i] > row[best] {
                            best = i;
                        }
                    }
                    out.push(row[best]);
                    arg.push(r * len + best);
                }
            }
            (Tensor::from_parts(vec![xs[0], xs[1], lout], out), arg)
        };
        let rg = self.requires_grad(x);
        Ok(self.push(y, Op::MaxPool1d { x, argmax }, rg))
    }

    /// Sum of the elementwise product, shape `[]`.
    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum_all(p)
    }
}

/// Input gradients for `node` given the gradient `g` of its output.
pub(super) fn backward_rule<S: Scalar>(
    nodes: &[Node<S>],
    node: &Node<S>,
    g: &Tensor<S>,
    need: &[bool],
) -> Vec<Option<Tensor<S>>> {
    let val = |v: &Var| &nodes[v.0].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            need[0].then(|| tensor::reduce_to_shape(g, val(a).shape())),
            need[1].then(|| tensor::reduce_to_shape(g, val(b).shape())),
        ],
        Op::Sub(a, b) => vec![
            need[0].then(|| tensor::reduce_to_shape(g, val(a).shape())),
            need[1].then(|| tensor::reduce_to_shape(&g.map(|v| -v), val(b).shape())),
        ],
        Op::Mul(a, b) => {
            let (va, vb) = (val(a), val(b));
            vec![
                need[0].then(|| {
                    let full = tensor::broadcast_binary("mul", g, vb, |x, y| x * y)
                        .expect("shapes checked in forward");
                    tensor::reduce_to_shape(&full, va.shape())
                }),
                need[1].then(|| {
                    let full = tensor::broadcast_binary("mul", g, va, |x, y| x * y)
                        .expect("shapes checked in forward");
                    tensor::reduce_to_shape(&full, vb.shape())
                }),
            ]
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(a), val(b));
            vec![
                need[0].then(|| {
                    let full = tensor::broadcast_binary("div", g, vb, |x, y| x / y)
                        .expect("shapes checked in forward");
                    tensor::reduce_to_shape(&full, va.shape())
                }),
                need[1].then(|| {
                    // d(a/b)/db = -y / b
                    let gy =
                        tensor::broadcast_binary("div", g, y, |x, y| x * y).expect("same shape");
                    let full = tensor::broadcast_binary("div", &gy, vb, |x, y| -x / y)
                        .expect("shapes checked in forward");
                    tensor::reduce_to_shape(&full, vb.shape())
                }),
            ]
        }
        Op::Scale(_, c) => vec![Some(g.map(|v| v * *c))],
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Unary(x, kind) => {
            let xv = val(x);
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(y.data())
                .map(|((&gi, &xi), &yi)| gi * unary_derivative(*kind, xi, yi))
                .collect();
            vec![Some(Tensor::from_parts(xv.shape().to_vec(), data))]
        }
        Op::MatMul(a, b) => {
            let (da, db) = tensor::matmul_backward(val(a), val(b), g, need[0], need[1]);
            vec![da, db]
        }
        Op::Permute(_, perm) => vec![Some(tensor::permute(g, &tensor::inverse_permutation(perm)))],
        Op::Reshape(x) => vec![Some(g.reshape(val(x).shape()).expect("same element count"))],
        Op::Concat(xs, axis) => {
            let mut start = 0;
            xs.iter()
                .zip(need)
                .map(|(x, &n)| {
                    let len = val(x).shape()[*axis];
                    let part = n.then(|| tensor::slice_axis(g, *axis, start, len));
                    start += len;
                    part
                })
                .collect()
        }
        Op::Slice(x, axis, start) => {
            let mut acc = Tensor::zeros(val(x).shape());
            tensor::scatter_slice_add(&mut acc, g, *axis, *start);
            vec![Some(acc)]
        }
        Op::SumTo(x) => vec![Some(tensor::broadcast_to(g, val(x).shape()))],
        Op::Softmax(_) => {
            let d = *y.shape().last().unwrap_or(&1);
            let mut out = Vec::with_capacity(y.len());
            for (gr, yr) in g.data().chunks(d).zip(y.data().chunks(d)) {
                let s: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                out.extend(gr.iter().zip(yr).map(|(&a, &b)| b * (a - s)));
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        }
        Op::LogSoftmax(_) => {
            let d = *y.shape().last().unwrap_or(&1);
            let mut out = Vec::with_capacity(y.len());
            for (gr, yr) in g.data().chunks(d).zip(y.data().chunks(d)) {
                let s: S = gr.iter().copied().sum();
                out.extend(gr.iter().zip(yr).map(|(&a, &b)| a - b.exp() * s));
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        }
        Op::Normalize(_, inv) => {
            let d = *y.shape().last().unwrap_or(&1);
            let dn = S::of(d as f64);
            let mut out = Vec::with_capacity(y.len());
            for ((gr, yr), &is) in g.data().chunks(d).zip(y.data().chunks(d)).zip(inv) {
                let sg: S = gr.iter().copied().sum();
                let sgy: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                out.extend(
                    gr.iter()
                        .zip(yr)
                        .map(|(&a, &b)| is / dn * (dn * a - sg - b * sgy)),
                );
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        }
        Op::Conv1d { x, w, padding } => {
            let (xv, wv) = (val(x), val(w));
            let (b, cin, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let (cout, k) = (wv.shape()[0], wv.shape()[2]);
            let lout = y.shape()[2];
            let ck = cin * k;
            let mut dx = need[0].then(|| vec![S::zero(); xv.len()]);
            let mut dw = need[1].then(|| vec![S::zero(); wv.len()]);
            for bi in 0..b {
                let gb = &g.data()[bi * cout * lout..(bi + 1) * cout * lout];
                if let Some(dw) = dw.as_mut() {
                    let cols = im2col(
                        &xv.data()[bi * cin * len..(bi + 1) * cin * len],
                        cin,
                        len,
                        k,
                        *padding,
                        lout,
                    );
                    // dW (cout×ck) += gb (cout×lout) · cols (lout×ck)
                    S::gemm(
                        cout,
                        lout,
                        ck,
                        S::one(),
                        gb,
                        lout as isize,
                        1,
                        &cols,
                        ck as isize,
                        1,
                        S::one(),
                        dw,
                        ck as isize,
                        1,
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    // dcols (lout×ck) = gbᵀ (lout×cout) · W (cout×ck)
                    let mut dcols = vec![S::zero(); lout * ck];
                    S::gemm(
                        lout,
                        cout,
                        ck,
                        S::one(),
                        gb,
                        1,
                        lout as isize,
                        wv.data(),
                        ck as isize,
                        1,
                        S::zero(),
                        &mut dcols,
                        ck as isize,
                        1,
                    );
                    let dxb = &mut dx[bi * cin * len..(bi + 1) * cin * len];
                    for ci in 0..cin {
                        for kk in 0..k {
                            let col = ci * k + kk;
                            for lo in 0..lout {
                                let src = lo + kk;
                                if src >= *padding && src - padding < len {
                                    dxb[ci * len + src - padding] += dcols[lo * ck + col];
                                }
                            }
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::from_parts(xv.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
            ]
        }
        Op::MaxPool1d { x, argmax } => {
            let xv = val(x);
            let mut dx = vec![S::zero(); xv.len()];
            for (&i, &gi) in argmax.iter().zip(g.data()) {
                dx[i] += gi;
            }
            vec![Some(Tensor::from_parts(xv.shape().to_vec(), dx))]
        }
    }
}
