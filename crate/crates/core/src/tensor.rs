//! Dense row-major n-dimensional arrays and the raw kernels the tape is
//! built on.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array. `data.len()` always equals the product of `shape`.
///
/// An empty shape denotes a scalar holding one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(
                "tensor",
                format!("zero-sized dimension in {shape:?}"),
            ));
        }
        if numel(shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "shape {shape:?} needs {} values, got {}",
                    numel(shape),
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds from `f64` values, rounding to the element type.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| S::of(x)).collect())
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Tensor::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Tensor::from_parts(Vec::new(), vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                S::of(z * std)
            })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| S::of(rng.random_range(lo..hi)))
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable access for tensors that are not (yet) on a tape.
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|x| T::of(x.as_f64())).collect(),
        )
    }

    /// Single element by multi-index.
    pub fn at(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let st = strides(&self.shape);
        let off: usize = index.iter().zip(&st).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    /// The value of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&x| f(x)).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

// ---------------------------------------------------------------------------
// Broadcasting

/// Numpy-style broadcast of two shapes (aligned on the right).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n {
            a[i + a.len() - n]
        } else {
            1
        };
        let db = if i + b.len() >= n {
            b[i + b.len() - n]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out_shape`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let lead = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                st[i - lead]
            }
        })
        .collect()
}

/// Calls `f(out_index, in_offset)` for every element of `out_shape`.
fn for_each_strided(out_shape: &[usize], in_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(out_shape);
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for o in 0..n {
        f(o, off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += in_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= in_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

fn is_plain_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Elementwise binary op with broadcasting.
pub(crate) fn broadcast_binary<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    let out_shape =
        broadcast_shape(&a.shape, &b.shape).ok_or_else(|| Error::shape(op, &a.shape, &b.shape))?;
    if out_shape == a.shape && is_plain_suffix(&b.shape, &a.shape) {
        let m = b.data.len();
        let data = a
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data[i % m]))
            .collect();
        return Ok(Tensor::from_parts(out_shape, data));
    }
    if out_shape == b.shape && is_plain_suffix(&a.shape, &b.shape) {
        let m = a.data.len();
        let data = b
            .data
            .iter()
            .enumerate()
            .map(|(i, &y)| f(a.data[i % m], y))
            .collect();
        return Ok(Tensor::from_parts(out_shape, data));
    }
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let mut av = Vec::with_capacity(numel(&out_shape));
    for_each_strided(&out_shape, &sa, |_, off| av.push(a.data[off]));
    let mut data = av;
    let mut k = 0;
    for_each_strided(&out_shape, &sb, |_, off| {
        data[k] = f(data[k], b.data[off]);
        k += 1;
    });
    Ok(Tensor::from_parts(out_shape, data))
}

/// Expands `t` to `shape` (which must be a broadcast of `t.shape`).
pub(crate) fn broadcast_to<S: Scalar>(t: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if t.shape == shape {
        return t.clone();
    }
    let st = broadcast_strides(&t.shape, shape);
    let mut data = Vec::with_capacity(numel(shape));
    for_each_strided(shape, &st, |_, off| data.push(t.data[off]));
    Tensor::from_parts(shape.to_vec(), data)
}

/// Sums `grad` (of a broadcast shape) back down to `shape`.
pub(crate) fn reduce_to_shape<S: Scalar>(grad: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if grad.shape == shape {
        return grad.clone();
    }
    let mut out = vec![S::zero(); numel(shape)];
    if is_plain_suffix(shape, &grad.shape) {
        let m = out.len();
        for (i, &g) in grad.data.iter().enumerate() {
            out[i % m] += g;
        }
    } else {
        let st = broadcast_strides(shape, &grad.shape);
        for_each_strided(&grad.shape, &st, |o, off| out[off] += grad.data[o]);
    }
    Tensor::from_parts(shape.to_vec(), out)
}

// ---------------------------------------------------------------------------
// Layout kernels

pub(crate) fn permute<S: Scalar>(t: &Tensor<S>, perm: &[usize]) -> Tensor<S> {
    let in_st = strides(&t.shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape[p]).collect();
    let st: Vec<usize> = perm.iter().map(|&p| in_st[p]).collect();
    let mut data = Vec::with_capacity(t.data.len());
    for_each_strided(&out_shape, &st, |_, off| data.push(t.data[off]));
    Tensor::from_parts(out_shape, data)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `(outer, inner)` extents around `axis`.
pub(crate) fn split_extents(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

pub(crate) fn concat<S: Scalar>(parts: &[&Tensor<S>], axis: usize) -> Tensor<S> {
    let mut out_shape = parts[0].shape.clone();
    out_shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
    let (outer, inner) = split_extents(&out_shape, axis);
    let mut data = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::from_parts(out_shape, data)
}

pub(crate) fn slice_axis<S: Scalar>(
    t: &Tensor<S>,
    axis: usize,
    start: usize,
    len: usize,
) -> Tensor<S> {
    let mut out_shape = t.shape.clone();
    out_shape[axis] = len;
    let (outer, inner) = split_extents(&t.shape, axis);
    let full = t.shape[axis] * inner;
    let mut data = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        let base = o * full + start * inner;
        data.extend_from_slice(&t.data[base..base + len * inner]);
    }
    Tensor::from_parts(out_shape, data)
}

/// Adds `g` into the `[start, start+len)` window of `axis` in `acc`.
pub(crate) fn scatter_slice_add<S: Scalar>(
    acc: &mut Tensor<S>,
    g: &Tensor<S>,
    axis: usize,
    start: usize,
) {
    let len = g.shape[axis];
    let (outer, inner) = split_extents(&acc.shape, axis);
    let full = acc.shape[axis] * inner;
    let chunk = len * inner;
    for o in 0..outer {
        let base = o * full + start * inner;
        for (a, &b) in acc.data[base..base + chunk]
            .iter_mut()
            .zip(&g.data[o * chunk..(o + 1) * chunk])
        {
            *a += b;
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix multiply

/// Batched product. `a: [.., m, k]`; `b: [k, n]` (shared) or `[.., k, n]`
/// with batch dims identical to `a`.
pub(crate) fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.ndim() < 2 || b.ndim() < 2 {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let (m, k) = (a.shape[a.ndim() - 2], a.shape[a.ndim() - 1]);
    let (kb, n) = (b.shape[b.ndim() - 2], b.shape[b.ndim() - 1]);
    if k != kb {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let mut out_shape = a.shape[..a.ndim() - 1].to_vec();
    out_shape.push(n);
    if b.ndim() == 2 {
        let rows = numel(&a.shape[..a.ndim() - 1]);
        let mut c = vec![S::zero(); rows * n];
        S::gemm(
            rows,
            k,
            n,
            S::one(),
            &a.data,
            k as isize,
            1,
            &b.data,
            n as isize,
            1,
            S::zero(),
            &mut c,
            n as isize,
            1,
        );
        return Ok(Tensor::from_parts(out_shape, c));
    }
    if a.shape[..a.ndim() - 2] != b.shape[..b.ndim() - 2] {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let batch = numel(&a.shape[..a.ndim() - 2]);
    let mut c = vec![S::zero(); batch * m * n];
    for i in 0..batch {
        S::gemm(
            m,
            k,
            n,
            S::one(),
            &a.data[i * m * k..(i + 1) * m * k],
            k as isize,
            1,
            &b.data[i * k * n..(i + 1) * k * n],
            n as isize,
            1,
            S::zero(),
            &mut c[i * m * n..(i + 1) * m * n],
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(out_shape, c))
}

/// Gradients of `c = a·b` given `dc`.
pub(crate) fn matmul_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    dc: &Tensor<S>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<S>>, Option<Tensor<S>>) {
    let (m, k) = (a.shape[a.ndim() - 2], a.shape[a.ndim() - 1]);
    let n = b.shape[b.ndim() - 1];
    if b.ndim() == 2 {
        let rows = numel(&a.shape[..a.ndim() - 1]);
        let da = need_a.then(|| {
            // da = dc · bᵀ
            let mut g = vec![S::zero(); rows * k];
            S::gemm(
                rows,
                n,
                k,
                S::one(),
                &dc.data,
                n as isize,
                1,
                &b.data,
                1,
                n as isize,
                S::zero(),
                &mut g,
                k as isize,
                1,
            );
            Tensor::from_parts(a.shape.clone(), g)
        });
        let db = need_b.then(|| {
            // db = aᵀ · dc
            let mut g = vec![S::zero(); k * n];
            S::gemm(
                k,
                rows,
                n,
                S::one(),
                &a.data,
                1,
                k as isize,
                &dc.data,
                n as isize,
                1,
                S::zero(),
                &mut g,
                n as isize,
                1,
            );
            Tensor::from_parts(b.shape.clone(), g)
        });
        return (da, db);
    }
    let batch = numel(&a.shape[..a.ndim() - 2]);
    let da = need_a.then(|| {
        let mut g = vec![S::zero(); batch * m * k];
        for i in 0..batch {
            S::gemm(
                m,
                n,
                k,
                S::one(),
                &dc.data[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
                &b.data[i * k * n..(i + 1) * k * n],
                1,
                n as isize,
                S::zero(),
                &mut g[i * m * k..(i + 1) * m * k],
                k as isize,
                1,
            );
        }
        Tensor::from_parts(a.shape.clone(), g)
    });
    let db = need_b.then(|| {
        let mut g = vec![S::zero(); batch * k * n];
        for i in 0..batch {
            S::gemm(
                k,
                m,
                n,
                S::one(),
                &a.data[i * m * k..(i + 1) * m * k],
                1,
                k as isize,
                &dc.data[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
                S::zero(),
                &mut g[i * k * n..(i + 1) * k * n],
                n as isize,
                1,
            );
        }
        Tensor::from_parts(b.shape.clone(), g)
    });
    (da, db)
}
