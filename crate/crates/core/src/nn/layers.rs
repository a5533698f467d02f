use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::params::{Ctx, ParamGroup, ParamId, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Gelu,
    Selu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<S: Scalar>(self, ctx: &Ctx<'_, S>, x: Var) -> Var {
        match self {
            Activation::Gelu => ctx.tape.gelu(x),
            Activation::Selu => ctx.tape.selu(x),
            Activation::Relu => ctx.tape.relu(x),
            Activation::Tanh => ctx.tape.tanh(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "GELU",
            Activation::Selu => "SELU",
            Activation::Relu => "ReLU",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Activation::Gelu),
            "selu" => Ok(Activation::Selu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err("one of GELU, SELU, ReLU, tanh".into()),
        }
    }
}

/// Static description of a layer; enough to validate it and count its
/// parameters without building it.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        d_in: usize,
        d_out: usize,
        bias: bool,
    },
    Conv1d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        padding: usize,
        bias: bool,
    },
    MaxPool1d {
        kernel: usize,
        stride: usize,
    },
    LayerNorm {
        d: usize,
    },
    Dropout {
        p: f64,
    },
    Activation(Activation),
    PositionalEncoding {
        d: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            LayerSpec::Dense { d_in, d_out, .. } if d_in == 0 || d_out == 0 => {
                bad(format!("dense widths must be positive, got {d_in}→{d_out}"))
            }
            LayerSpec::Conv1d {
                c_in,
                c_out,
                kernel,
                ..
            } if c_in == 0 || c_out == 0 || kernel == 0 => bad(format!(
                "conv1d needs positive channels and kernel, got {c_in}→{c_out}, k={kernel}"
            )),
            LayerSpec::MaxPool1d { kernel, stride } if kernel == 0 || stride == 0 => bad(format!(
                "maxpool1d needs positive kernel and stride, got {kernel}/{stride}"
            )),
            LayerSpec::LayerNorm { d: 0 } => bad("layernorm width must be positive".into()),
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => {
                bad(format!("dropout probability must lie in [0, 1), got {p}"))
            }
            LayerSpec::PositionalEncoding { d } if d == 0 || d % 2 == 1 => {
                bad(format!("positional encoding width must be even, got {d}"))
            }
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { d_in, d_out, bias } => d_in * d_out + if bias { d_out } else { 0 },
            LayerSpec::Conv1d {
                c_in,
                c_out,
                kernel,
                bias,
                ..
            } => kernel * c_in * c_out + if bias { c_out } else { 0 },
            LayerSpec::LayerNorm { d } => 2 * d,
            LayerSpec::MaxPool1d { .. }
            | LayerSpec::Dropout { .. }
            | LayerSpec::Activation(_)
            | LayerSpec::PositionalEncoding { .. } => 0,
        }
    }
}

/// Weight init `U(−1/√fan_in, 1/√fan_in)`, drawn in f64 so both precisions
/// see the same numbers for the same seed.
pub(crate) fn init_uniform<S: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            group,
            init_uniform(&[d_in, d_out], d_in, rng),
        );
        let bias = bias.then(|| {
            store.register(
                format!("{name}.bias"),
                group,
                init_uniform(&[d_out], d_in, rng),
            )
        });
        Dense {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Dense {
            d_in: self.d_in,
            d_out: self.d_out,
            bias: self.bias.is_some(),
        }
    }

    /// `y = xW + b` over the last axis.
    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x);
        if shape.last() != Some(&self.d_in) {
            return Err(Error::shape("dense", &shape, &[self.d_in, self.d_out]));
        }
        let y = ctx.tape.matmul(x, ctx.param(self.weight))?;
        match self.bias {
            Some(b) => ctx.tape.add(y, ctx.param(b)),
            None => Ok(y),
        }
    }
}

/// 1-D convolution over `[B, C_in, L]`, stride 1.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_in = c_in * kernel;
        let weight = store.register(
            format!("{name}.weight"),
            group,
            init_uniform(&[c_out, c_in, kernel], fan_in, rng),
        );
        let bias = bias.then(|| {
            store.register(
                format!("{name}.bias"),
                group,
                init_uniform(&[c_out], fan_in, rng),
            )
        });
        Conv1d {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            padding,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Conv1d {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: self.kernel,
            padding: self.padding,
            bias: self.bias.is_some(),
        }
    }

    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        let y = ctx.tape.conv1d(x, ctx.param(self.weight), self.padding)?;
        match self.bias {
            Some(b) => {
                let b = ctx.tape.reshape(ctx.param(b), &[self.c_out, 1])?;
                ctx.tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    /// Applies the convolution along time to a `[B, T, C_in]` sequence.
    pub fn forward_sequence<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        let xt = ctx.tape.permute(x, &[0, 2, 1])?;
        let y = self.forward(ctx, xt)?;
        ctx.tape.permute(y, &[0, 2, 1])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaxPool1d {
    pub kernel: usize,
    pub stride: usize,
}

impl MaxPool1d {
    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        ctx.tape.max_pool1d(x, self.kernel, self.stride)
    }
}

/// Normalization over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub d: usize,
}

impl LayerNorm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        d: usize,
    ) -> Self {
        let gamma = store.register(format!("{name}.gamma"), group, Tensor::ones(&[d]));
        let beta = store.register(format!("{name}.beta"), group, Tensor::zeros(&[d]));
        LayerNorm { gamma, beta, d }
    }

    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x);
        if shape.last() != Some(&self.d) {
            return Err(Error::shape("layernorm", &shape, &[self.d]));
        }
        let n = ctx.tape.normalize_last(x, LAYER_NORM_EPS);
        let y = ctx.tape.mul(n, ctx.param(self.gamma))?;
        ctx.tape.add(y, ctx.param(self.beta))
    }
}

/// Inverted dropout: survivors are scaled by `1/(1−p)` during training,
/// identity in evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        if !ctx.training() || self.p == 0.0 {
            return Ok(x);
        }
        let shape = ctx.tape.shape(x);
        let keep = S::of(1.0 / (1.0 - self.p));
        let mask = ctx.with_rng(|rng| {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    if rng.random::<f64>() < self.p {
                        S::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            Tensor::new(&shape, data)
        })?;
        let m = ctx.tape.constant(mask)?;
        ctx.tape.mul(x, m)
    }
}

/// Fixed sinusoidal table: `PE[t, 2i] = sin(t / 10000^(2i/d))`,
/// `PE[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn positional_encoding<S: Scalar>(len: usize, d: usize) -> Result<Tensor<S>> {
    if d == 0 || d % 2 == 1 {
        return Err(Error::invalid(
            "positional_encoding",
            format!("width must be even, got {d}"),
        ));
    }
    if len == 0 {
        return Err(Error::invalid(
            "positional_encoding",
            "length must be at least 1",
        ));
    }
    let mut data = Vec::with_capacity(len * d);
    for t in 0..len {
        for i in 0..d / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data.push(S::of(angle.sin()));
            data.push(S::of(angle.cos()));
        }
    }
    Tensor::new(&[len, d], data)
}

/// Adds the positional table to a `[B, T, d]` sequence.
pub fn add_positional_encoding<S: Scalar>(ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
    let shape = ctx.tape.shape(x);
    if shape.len() != 3 {
        return Err(Error::shape("positional_encoding", &shape, &[]));
    }
    let pe = ctx
        .tape
        .constant(positional_encoding(shape[1], shape[2])?)?;
    ctx.tape.add(x, pe)
}
