#![allow(dead_code)]

use avfusion::losses::{self, AffectClass, LossWeights};
use avfusion::nn::{
    Activation, Conv1d, Ctx, Dense, Dropout, LayerNorm, MaxPool1d, ParamGroup, ParamStore,
};
use avfusion::sequence::{
    scaled_dot_product_attention, AttentionSpec, CrossModalBlock, Direction, EncoderLayer,
    EncoderStack, Lstm, LstmCell, LstmSpec, MultiHeadAttention,
};
use avfusion::{grad_check, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const TRIALS: u64 = 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces any output to a scalar with fixed pseudo-random weights so that
/// no gradient direction cancels out.
pub fn probe<S: avfusion::Scalar>(tape: &Tape<S>, y: Var) -> Result<Var> {
    let w = Tensor::randn(&tape.shape(y), 1.0, &mut rng(0xC0FFEE));
    let w = tape.constant(w)?;
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

/// Checks a module against finite differences with respect to its inputs
/// and every parameter in `store`. `train_seed` runs in training mode with
/// that dropout stream.
///
/// Attention key biases are held fixed: softmax is invariant to the shift
/// they add to every score of a query, so their exact gradient is zero and
/// the relative error would only measure rounding noise. The sequence unit
/// tests assert that zero directly.
pub fn check_module<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    train_seed: Option<u64>,
    f: F,
) -> Result<f64>
where
    F: Fn(&Ctx<'_, f64>, &[Var]) -> Result<Var>,
{
    let n = inputs.len();
    let mut all = inputs.to_vec();
    let ids: Vec<_> = store
        .ids()
        .filter(|&id| !store.get(id).name.ends_with("key.bias"))
        .collect();
    all.extend(ids.iter().map(|&id| store.get(id).value.clone()));
    let report = grad_check(
        |tape, vars| {
            let ctx = match train_seed {
                Some(seed) => Ctx::train(tape, store, true, seed),
                None => Ctx::eval(tape, store),
            };
            for (id, &v) in ids.iter().zip(&vars[n..]) {
                ctx.bind(*id, v)?;
            }
            let y = f(&ctx, &vars[..n])?;
            probe(tape, y)
        },
        &all,
        EPS,
    )?;
    Ok(report.max_relative_error)
}

pub fn check_fn<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check(
        |tape, vars| {
            let y = f(tape, vars)?;
            probe(tape, y)
        },
        inputs,
        EPS,
    )?;
    Ok(report.max_relative_error)
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, r)
}

fn positive(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 0.5, 2.0, r)
}

fn attention_spec(
    d_model: usize,
    n_heads: usize,
    n_layers: usize,
    activation: Activation,
) -> AttentionSpec {
    AttentionSpec {
        d_model,
        n_heads,
        d_feedforward: 16,
        n_layers,
        dropout: 0.1,
        activation,
    }
}

pub type Case = fn(u64) -> Result<f64>;

pub fn elementwise(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [
        randn(&[3, 4], &mut r),
        randn(&[4], &mut r),
        positive(&[3, 1], &mut r),
    ];
    check_fn(&inputs, |t, v| {
        let a = t.add(v[0], v[1])?;
        let b = t.mul(a, v[2])?;
        let c = t.div(b, v[2])?;
        let c = t.div(c, t.add_scalar(t.square(v[1]), 1.0))?;
        let d = t.sub(c, v[1])?;
        let e = t.add(t.scale(d, 0.7), t.neg(t.exp(t.scale(v[0], 0.3))))?;
        let f = t.add(t.ln(v[2]), t.sqrt(v[2]))?;
        t.add(e, f)
    })
}

pub fn activations(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [randn(&[5, 6], &mut r)];
    check_fn(&inputs, |t, v| {
        let x = v[0];
        let parts = [t.tanh(x), t.sigmoid(x), t.relu(x), t.gelu(x), t.selu(x)];
        t.concat(&parts, 1)
    })
}

pub fn matmul(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [
        randn(&[2, 3, 4], &mut r),
        randn(&[4, 5], &mut r),
        randn(&[2, 5, 3], &mut r),
    ];
    check_fn(&inputs, |t, v| {
        let a = t.matmul(v[0], v[1])?;
        t.matmul(a, v[2])
    })
}

pub fn reshaping(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [randn(&[2, 3, 4], &mut r), randn(&[2, 3, 2], &mut r)];
    check_fn(&inputs, |t, v| {
        let p = t.permute(v[0], &[2, 0, 1])?;
        let p = t.reshape(p, &[4, 6])?;
        let p = t.transpose(p)?;
        let p = t.reshape(p, &[2, 3, 4])?;
        let c = t.concat(&[p, v[1]], 2)?;
        let s = t.slice(c, 2, 1, 4)?;
        let parts = t.split(s, 1, &[1, 2])?;
        t.mul(t.sum_axes(parts[1], &[1], true)?, parts[0])
    })
}

pub fn reductions(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [randn(&[2, 3, 4], &mut r), randn(&[6], &mut r)];
    check_fn(&inputs, |t, v| {
        let a = t.sum_axes(v[0], &[0, 2], false)?;
        let b = t.mean_axes(v[0], &[1], false)?;
        let b = t.reshape(b, &[8])?;
        let c = t.mean_all(v[0])?;
        let d = t.dot(v[1], v[1])?;
        let ab = t.concat(&[a, b], 0)?;
        t.add(t.mul(ab, c)?, d)
    })
}

pub fn softmax(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [randn(&[3, 5], &mut r)];
    check_fn(&inputs, |t, v| {
        t.concat(&[t.softmax(v[0]), t.log_softmax(v[0])], 1)
    })
}

pub fn normalize(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [randn(&[3, 6], &mut r)];
    check_fn(&inputs, |t, v| Ok(t.normalize_last(v[0], 1e-5)))
}

pub fn max_pool(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [randn(&[2, 3, 9], &mut r)];
    check_fn(&inputs, |t, v| t.max_pool1d(v[0], 2, 2))
}

pub fn dense(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let layer = Dense::new(
        &mut store,
        &mut r,
        "dense",
        ParamGroup::Sequence,
        5,
        3,
        true,
    );
    let x = randn(&[2, 4, 5], &mut r);
    check_module(&store, &[x], None, |ctx, v| layer.forward(ctx, v[0]))
}

pub fn conv1d(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let layer = Conv1d::new(
        &mut store,
        &mut r,
        "conv",
        ParamGroup::Encoder,
        3,
        4,
        3,
        1,
        true,
    );
    let x = randn(&[2, 3, 7], &mut r);
    check_module(&store, &[x], None, |ctx, v| {
        let y = layer.forward(ctx, v[0])?;
        MaxPool1d {
            kernel: 2,
            stride: 2,
        }
        .forward(ctx, y)
    })
}

pub fn layer_norm(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let layer = LayerNorm::new(&mut store, "ln", ParamGroup::Sequence, 6);
    // move away from the identity initialisation
    store
        .iter_mut()
        .for_each(|p| p.value = Tensor::randn(p.value.shape(), 1.0, &mut r));
    let x = randn(&[2, 3, 6], &mut r);
    check_module(&store, &[x], None, |ctx, v| layer.forward(ctx, v[0]))
}

pub fn dropout(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let store = ParamStore::new();
    let x = randn(&[4, 8], &mut r);
    check_module(&store, &[x], Some(seed), |ctx, v| {
        let y = Dropout { p: 0.3 }.forward(ctx, v[0])?;
        Ok(ctx.tape.tanh(y))
    })
}

pub fn lstm_step(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, &mut r, "cell", 3, 4);
    let inputs = [
        randn(&[2, 3], &mut r),
        randn(&[2, 4], &mut r),
        randn(&[2, 4], &mut r),
    ];
    check_module(&store, &inputs, None, |ctx, v| {
        let (h, c) = cell.step(ctx, v[0], v[1], v[2])?;
        ctx.tape.concat(&[h, c], 1)
    })
}

fn lstm(seed: u64, direction: Direction) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let spec = LstmSpec {
        n_layers: 2,
        d_hidden: 4,
        direction,
        dropout: 0.0,
    };
    let net = Lstm::new(&mut store, &mut r, "lstm", spec, 3)?;
    let x = randn(&[3, 4, 3], &mut r);
    check_module(&store, &[x], None, |ctx, v| net.forward(ctx, v[0]))
}

pub fn lstm_unidirectional(seed: u64) -> Result<f64> {
    lstm(seed, Direction::Unidirectional)
}

pub fn lstm_bidirectional(seed: u64) -> Result<f64> {
    lstm(seed, Direction::Bidirectional)
}

pub fn attention(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [
        randn(&[2, 4, 3], &mut r),
        randn(&[2, 5, 3], &mut r),
        randn(&[2, 5, 2], &mut r),
    ];
    check_fn(&inputs, |t, v| {
        let (o, w) = scaled_dot_product_attention(t, v[0], v[1], v[2])?;
        let w = t.reshape(w, &[2, 4, 5])?;
        t.concat(&[o, w], 2)
    })
}

pub fn multi_head_attention(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, &mut r, "mha", 8, 2)?;
    let inputs = [randn(&[2, 4, 8], &mut r), randn(&[2, 3, 8], &mut r)];
    check_module(&store, &inputs, None, |ctx, v| {
        Ok(mha.forward(ctx, v[0], v[1], v[1])?.0)
    })
}

pub fn encoder_layer(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let layer = EncoderLayer::new(
        &mut store,
        &mut r,
        "enc",
        &attention_spec(8, 2, 1, Activation::Selu),
    )?;
    let x = randn(&[2, 4, 8], &mut r);
    check_module(&store, &[x], Some(seed), |ctx, v| {
        Ok(layer.forward(ctx, v[0])?.0)
    })
}

pub fn encoder_stack(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let stack = EncoderStack::new(
        &mut store,
        &mut r,
        "enc",
        &attention_spec(8, 2, 2, Activation::Gelu),
    )?;
    let x = randn(&[2, 4, 8], &mut r);
    check_module(&store, &[x], None, |ctx, v| {
        let x = avfusion::nn::add_positional_encoding(ctx, v[0])?;
        stack.forward(ctx, x)
    })
}

pub fn cross_modal_block(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let block = CrossModalBlock::new(
        &mut store,
        &mut r,
        "cma",
        &attention_spec(8, 2, 1, Activation::Gelu),
    )?;
    let inputs = [randn(&[2, 4, 8], &mut r), randn(&[2, 3, 8], &mut r)];
    check_module(&store, &inputs, Some(seed), |ctx, v| {
        Ok(block.forward(ctx, v[0], v[1])?.0)
    })
}

pub fn ccc_loss(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [randn(&[8, 2], &mut r), randn(&[8, 2], &mut r)];
    check_fn(&inputs, |t, v| Ok(losses::ccc_loss(t, v[0], v[1])?.0))
}

pub fn mse_loss(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let inputs = [randn(&[2, 4, 2], &mut r), randn(&[2, 4, 2], &mut r)];
    check_fn(&inputs, |t, v| losses::mse_loss(t, v[0], v[1]))
}

fn random_classes(r: &mut ChaCha8Rng, n: usize) -> Vec<AffectClass> {
    (0..n)
        .map(|_| AffectClass::from_index(r.random_range(0..losses::N_CLASSES)).unwrap())
        .collect()
}

fn random_weights(r: &mut ChaCha8Rng) -> Vec<f64> {
    let hist: Vec<usize> = (0..losses::N_CLASSES)
        .map(|_| r.random_range(0..20))
        .collect();
    losses::class_weights(&hist).unwrap()
}

pub fn weighted_cross_entropy(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let classes = random_classes(&mut r, 6);
    let weights = random_weights(&mut r);
    let inputs = [randn(&[2, 3, 24], &mut r)];
    check_fn(&inputs, |t, v| {
        losses::weighted_cross_entropy(t, v[0], &classes, &weights)
    })
}

pub fn total_loss(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let weights = random_weights(&mut r);
    let lw = LossWeights {
        lambda_mse: r.random_range(0.0..1.0),
        lambda_ce: r.random_range(0.0..1.0),
    };
    let target = Tensor::uniform(&[2, 4, 2], -1.0, 1.0, &mut r);
    let inputs = [randn(&[2, 4, 2], &mut r), randn(&[2, 4, 24], &mut r)];
    check_fn(&inputs, |t, v| {
        let y = t.constant(target.clone())?;
        let va = t.tanh(v[0]);
        Ok(losses::total_loss(t, va, y, v[1], &weights, lw)?.total)
    })
}

pub const GRADIENT_CASES: &[(&str, Case)] = &[
    ("elementwise", elementwise),
    ("activations", activations),
    ("matmul", matmul),
    ("reshaping", reshaping),
    ("reductions", reductions),
    ("softmax", softmax),
    ("normalize", normalize),
    ("max_pool", max_pool),
    ("dense", dense),
    ("conv1d", conv1d),
    ("layer_norm", layer_norm),
    ("dropout", dropout),
    ("lstm_step", lstm_step),
    ("lstm_unidirectional", lstm_unidirectional),
    ("lstm_bidirectional", lstm_bidirectional),
    ("attention", attention),
    ("multi_head_attention", multi_head_attention),
    ("encoder_layer", encoder_layer),
    ("encoder_stack", encoder_stack),
    ("cross_modal_block", cross_modal_block),
    ("ccc_loss", ccc_loss),
    ("mse_loss", mse_loss),
    ("weighted_cross_entropy", weighted_cross_entropy),
    ("total_loss", total_loss),
];

/// Worst error of a case over `TRIALS` seeds.
pub fn worst_error(case: Case) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..TRIALS {
        worst = worst.max(case(seed)?);
    }
    Ok(worst)
}

pub fn random_pair(r: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let x = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let y = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    (x, y)
}
