use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{init_uniform, Ctx, Dropout, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Unidirectional,
    Bidirectional,
}

impl Direction {
    pub fn passes(self) -> usize {
        match self {
            Direction::Unidirectional => 1,
            Direction::Bidirectional => 2,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Unidirectional => "unidirectional",
            Direction::Bidirectional => "bidirectional",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unidirectional" | "uni" => Ok(Direction::Unidirectional),
            "bidirectional" | "bi" => Ok(Direction::Bidirectional),
            _ => Err("one of unidirectional, bidirectional".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmSpec {
    pub n_layers: usize,
    pub d_hidden: usize,
    pub direction: Direction,
    /// Applied between stacked layers during training.
    pub dropout: f64,
}

impl LstmSpec {
    pub fn output_width(&self) -> usize {
        self.d_hidden * self.direction.passes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_hidden == 0 {
            return Err(Error::Config(format!(
                "lstm needs n_layers ≥ 1 and d_hidden ≥ 1, got {} and {}",
                self.n_layers, self.d_hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "lstm dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// `4·((d_in + h)·h + h)` per layer and direction (one bias per gate).
    pub fn param_count(&self, d_in: usize) -> usize {
        let h = self.d_hidden;
        let mut total = 0;
        let mut width = d_in;
        for _ in 0..self.n_layers {
            total += self.direction.passes() * 4 * ((width + h) * h + h);
            width = self.output_width();
        }
        total
    }
}

/// One direction of one LSTM layer. Gate order along the `4h` axis is
/// input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl LstmCell {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_hidden: usize,
    ) -> Self {
        let g = ParamGroup::Sequence;
        let h4 = 4 * d_hidden;
        LstmCell {
            w_input: store.register(
                format!("{name}.w_input"),
                g,
                init_uniform(&[d_in, h4], d_hidden, rng),
            ),
            w_hidden: store.register(
                format!("{name}.w_hidden"),
                g,
                init_uniform(&[d_hidden, h4], d_hidden, rng),
            ),
            bias: store.register(
                format!("{name}.bias"),
                g,
                init_uniform(&[h4], d_hidden, rng),
            ),
            d_in,
            d_hidden,
        }
    }

    /// Input projection `x·W_in + b` for a whole `[B, T, d_in]` sequence.
    fn project_inputs<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        let p = ctx.tape.matmul(x, ctx.param(self.w_input))?;
        ctx.tape.add(p, ctx.param(self.bias))
    }

    /// Recurrence given the projected input `[B, 4h]` of one timestep.
    fn recur<S: Scalar>(
        &self,
        ctx: &Ctx<'_, S>,
        projected: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let t = ctx.tape;
        let rec = t.matmul(h, ctx.param(self.w_hidden))?;
        let gates = t.add(projected, rec)?;
        let d = self.d_hidden;
        let parts = t.split(gates, 1, &[d, d, d, d])?;
        let i = t.sigmoid(parts[0]);
        let f = t.sigmoid(parts[1]);
        let g = t.tanh(parts[2]);
        let o = t.sigmoid(parts[3]);
        let c_next = t.add(t.mul(f, c)?, t.mul(i, g)?)?;
        let h_next = t.mul(o, t.tanh(c_next))?;
        Ok((h_next, c_next))
    }

    /// One step on `x_t: [B, d_in]` from state `(h, c)`, each `[B, h]`.
    pub fn step<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let shape = ctx.tape.shape(x);
        if shape.len() != 2 || shape[1] != self.d_in {
            return Err(Error::shape("lstm_step", &shape, &[self.d_in]));
        }
        let p = self.project_inputs(ctx, x)?;
        self.recur(ctx, p, h, c)
    }

    /// Runs over `[B, T, d_in]` from zero state; `reverse` processes time
    /// backwards. Output is `[B, T, h]` in original time order.
    pub fn run<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var, reverse: bool) -> Result<Var> {
        let t = ctx.tape;
        let shape = t.shape(x);
        let (b, steps) = (shape[0], shape[1]);
        let proj = self.project_inputs(ctx, x)?;
        let zeros = t.constant(Tensor::zeros(&[b, self.d_hidden]))?;
        let (mut h, mut c) = (zeros, zeros);
        let mut outputs = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for s in order {
            let p = t.slice(proj, 1, s, 1)?;
            let p = t.reshape(p, &[b, 4 * self.d_hidden])?;
            (h, c) = self.recur(ctx, p, h, c)?;
            outputs[s] = t.reshape(h, &[b, 1, self.d_hidden])?;
        }
        t.concat(&outputs, 1)
    }
}

/// Stacked uni- or bidirectional LSTM over `[B, T, d_in]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub spec: LstmSpec,
    pub d_in: usize,
    pub layers: Vec<Vec<LstmCell>>,
}

impl Lstm {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        spec: LstmSpec,
        d_in: usize,
    ) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.n_layers);
        let mut width = d_in;
        for l in 0..spec.n_layers {
            let cells = (0..spec.direction.passes())
                .map(|dir| {
                    let tag = if dir == 0 { "fwd" } else { "bwd" };
                    LstmCell::new(
                        store,
                        rng,
                        &format!("{name}.layer{l}.{tag}"),
                        width,
                        spec.d_hidden,
                    )
                })
                .collect();
            layers.push(cells);
            width = spec.output_width();
        }
        Ok(Lstm { spec, d_in, layers })
    }

    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x);
        if shape.len() != 3 || shape[2] != self.d_in {
            return Err(Error::shape("lstm", &shape, &[self.d_in]));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, cells) in self.layers.iter().enumerate() {
            let outs = cells
                .iter()
                .enumerate()
                .map(|(dir, cell)| cell.run(ctx, h, dir == 1))
                .collect::<Result<Vec<_>>>()?;
            h = if outs.len() == 1 {
                outs[0]
            } else {
                ctx.tape.concat(&outs, 2)?
            };
            if l < last {
                h = Dropout {
                    p: self.spec.dropout,
                }
                .forward(ctx, h)?;
            }
        }
        Ok(h)
    }
}
