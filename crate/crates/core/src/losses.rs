//! Training objective, label discretization and the CCC metric.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const N_RINGS: usize = 3;
pub const N_SECTORS: usize = 8;
pub const N_CLASSES: usize = N_RINGS * N_SECTORS;

/// Concordance correlation coefficient with population statistics.
///
/// When both series are constant with equal means the denominator is zero;
/// the value is then defined as 0 and `degenerate` is set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ccc {
    pub value: f64,
    pub degenerate: bool,
}

pub fn ccc(x: &[f64], y: &[f64]) -> Result<Ccc> {
    if x.len() != y.len() {
        return Err(Error::shape("ccc", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Err(Error::invalid(
            "ccc",
            format!("need at least 2 samples, got {}", x.len()),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let denom = sxx / n + syy / n + (mx - my) * (mx - my);
    if denom == 0.0 {
        return Ok(Ccc {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Ccc {
        value: 2.0 * (sxy / n) / denom,
        degenerate: false,
    })
}

/// `1 − CCC` per affect dimension over the flattened leading axes of
/// `[.., 2]` predictions and targets, averaged over the two dimensions.
/// Also reports whether any dimension was degenerate.
pub fn ccc_loss<S: Scalar>(tape: &Tape<S>, pred: Var, target: Var) -> Result<(Var, bool)> {
    let (ps, ts) = (tape.shape(pred), tape.shape(target));
    if ps != ts || ps.last() != Some(&2) {
        return Err(Error::shape("ccc_loss", &ps, &ts));
    }
    let m = ps.iter().product::<usize>() / 2;
    if m < 2 {
        return Err(Error::invalid(
            "ccc_loss",
            format!("need at least 2 samples, got {m}"),
        ));
    }
    let x = tape.reshape(pred, &[m, 2])?;
    let y = tape.reshape(target, &[m, 2])?;
    let mx = tape.mean_axes(x, &[0], true)?;
    let my = tape.mean_axes(y, &[0], true)?;
    let xc = tape.sub(x, mx)?;
    let yc = tape.sub(y, my)?;
    let cov = tape.mean_axes(tape.mul(xc, yc)?, &[0], true)?;
    let vx = tape.mean_axes(tape.square(xc), &[0], true)?;
    let vy = tape.mean_axes(tape.square(yc), &[0], true)?;
    let shift = tape.square(tape.sub(mx, my)?);
    let denom = tape.add(tape.add(vx, vy)?, shift)?;
    // degenerate dimensions: cov is 0 there too, so a unit denominator
    // yields CCC 0
    let guard: Vec<S> = tape
        .value(denom)
        .data()
        .iter()
        .map(|&d| if d == S::zero() { S::one() } else { S::zero() })
        .collect();
    let degenerate = guard.iter().any(|&g| g == S::one());
    let denom = tape.add(denom, tape.constant(Tensor::new(&[1, 2], guard)?)?)?;
    let c = tape.div(tape.scale(cov, S::of(2.0)), denom)?;
    let loss = tape.add_scalar(tape.neg(tape.mean_all(c)?), S::one());
    Ok((loss, degenerate))
}

/// Mean of squared differences over all elements.
pub fn mse_loss<S: Scalar>(tape: &Tape<S>, pred: Var, target: Var) -> Result<Var> {
    let (ps, ts) = (tape.shape(pred), tape.shape(target));
    if ps != ts {
        return Err(Error::shape("mse_loss", &ps, &ts));
    }
    tape.mean_all(tape.square(tape.sub(pred, target)?))
}

/// One of 24 polar cells: `index = ring·8 + sector`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AffectClass {
    pub index: usize,
}

impl AffectClass {
    pub fn new(ring: usize, sector: usize) -> Result<Self> {
        if ring >= N_RINGS || sector >= N_SECTORS {
            return Err(Error::invalid(
                "affect_class",
                format!("ring {ring}, sector {sector} out of range"),
            ));
        }
        Ok(AffectClass {
            index: ring * N_SECTORS + sector,
        })
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= N_CLASSES {
            return Err(Error::invalid(
                "affect_class",
                format!("index {index} out of range"),
            ));
        }
        Ok(AffectClass { index })
    }

    pub fn ring(self) -> usize {
        self.index / N_SECTORS
    }

    pub fn sector(self) -> usize {
        self.index % N_SECTORS
    }
}

/// Maps a (valence, arousal) pair to its polar cell. Rings split
/// `r ∈ [0, √2]` into three equal left-closed intervals (the last one also
/// closed at √2); sectors have width π/4 starting at θ = 0 on the positive
/// valence axis, with θ(0, 0) = 0.
pub fn discretize_va(valence: f64, arousal: f64) -> Result<AffectClass> {
    for (name, v) in [("valence", valence), ("arousal", arousal)] {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::invalid(
                "discretize_va",
                format!("{name} {v} outside [-1, 1]"),
            ));
        }
    }
    let r = valence.hypot(arousal);
    let width = SQRT_2 / N_RINGS as f64;
    let ring = ((r / width).floor() as usize).min(N_RINGS - 1);
    let mut theta = if r == 0.0 {
        0.0
    } else {
        arousal.atan2(valence)
    };
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    let sector = ((theta / (PI / 4.0)).floor() as usize).min(N_SECTORS - 1);
    AffectClass::new(ring, sector)
}

/// Inverse-frequency weights with mean 1. Classes absent from the
/// histogram receive the largest weight among present classes.
pub fn class_weights(histogram: &[usize]) -> Result<Vec<f64>> {
    let total: usize = histogram.iter().sum();
    if total == 0 || histogram.is_empty() {
        return Err(Error::invalid("class_weights", "histogram is empty"));
    }
    let raw: Vec<Option<f64>> = histogram
        .iter()
        .map(|&c| (c > 0).then(|| total as f64 / c as f64))
        .collect();
    let max = raw.iter().flatten().cloned().fold(0.0, f64::max);
    let filled: Vec<f64> = raw.iter().map(|w| w.unwrap_or(max)).collect();
    let mean = filled.iter().sum::<f64>() / filled.len() as f64;
    Ok(filled.iter().map(|w| w / mean).collect())
}

/// Class histogram of a label list.
pub fn class_histogram(classes: &[AffectClass]) -> Vec<usize> {
    let mut h = vec![0; N_CLASSES];
    for c in classes {
        h[c.index] += 1;
    }
    h
}

/// `Σ wᵢ·(−log softmax(logitsᵢ)[cᵢ]) / Σ wᵢ` with `wᵢ = weights[cᵢ]`, so
/// uniform weights reproduce plain cross-entropy.
pub fn weighted_cross_entropy<S: Scalar>(
    tape: &Tape<S>,
    logits: Var,
    classes: &[AffectClass],
    weights: &[f64],
) -> Result<Var> {
    let shape = tape.shape(logits);
    let k = *shape.last().unwrap_or(&0);
    let n = shape.iter().product::<usize>() / k.max(1);
    if k != weights.len() || n != classes.len() {
        return Err(Error::shape(
            "weighted_cross_entropy",
            &shape,
            &[classes.len(), weights.len()],
        ));
    }
    if !tape.value(logits).is_finite() {
        return Err(Error::NonFinite {
            op: "weighted_cross_entropy",
        });
    }
    if let Some(c) = classes.iter().find(|c| c.index >= k) {
        return Err(Error::invalid(
            "weighted_cross_entropy",
            format!("class {} out of range", c.index),
        ));
    }
    let applied: f64 = classes.iter().map(|c| weights[c.index]).sum();
    if applied <= 0.0 {
        return Err(Error::invalid(
            "weighted_cross_entropy",
            "applied weights sum to zero",
        ));
    }
    let mut select = vec![S::zero(); n * k];
    for (i, c) in classes.iter().enumerate() {
        select[i * k + c.index] = S::of(weights[c.index] / applied);
    }
    let x = tape.reshape(logits, &[n, k])?;
    let logp = tape.log_softmax(x);
    let picked = tape.mul(logp, tape.constant(Tensor::new(&[n, k], select)?)?)?;
    Ok(tape.neg(tape.sum_all(picked)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_mse: f64,
    pub lambda_ce: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("lambda_mse", self.lambda_mse),
            ("lambda_ce", self.lambda_ce),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::ConfigValue {
                    key: k.into(),
                    expected: "a nonnegative number".into(),
                    got: v.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// The composite loss and its unweighted components.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ccc: Var,
    pub mse: Var,
    pub ce: Var,
    pub degenerate: bool,
}

/// Ground-truth classes of a `[.., 2]` label tensor.
pub fn classes_of<S: Scalar>(labels: &Tensor<S>) -> Result<Vec<AffectClass>> {
    labels
        .data()
        .chunks(2)
        .map(|va| discretize_va(va[0].as_f64(), va[1].as_f64()))
        .collect()
}

/// `L = L_ccc + λ_mse·L_mse + λ_ce·L_ce`; target classes come from
/// discretizing the labels.
pub fn total_loss<S: Scalar>(
    tape: &Tape<S>,
    pred: Var,
    target: Var,
    logits: Var,
    class_weights: &[f64],
    weights: LossWeights,
) -> Result<LossTerms> {
    let classes = classes_of(&tape.value(target))?;
    let (ccc, degenerate) = ccc_loss(tape, pred, target)?;
    let mse = mse_loss(tape, pred, target)?;
    let ce = weighted_cross_entropy(tape, logits, &classes, class_weights)?;
    let total = tape.add(ccc, tape.scale(mse, S::of(weights.lambda_mse)))?;
    let total = tape.add(total, tape.scale(ce, S::of(weights.lambda_ce)))?;
    Ok(LossTerms {
        total,
        ccc,
        mse,
        ce,
        degenerate,
    })
}

/// Validation metric: CCC per dimension and their average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ccc_valence: f64,
    pub ccc_arousal: f64,
    pub average: f64,
}

impl Evaluation {
    fn from_pair(v: f64, a: f64) -> Self {
        Evaluation {
            ccc_valence: v,
            ccc_arousal: a,
            average: (v + a) / 2.0,
        }
    }
}

/// CCC over globally concatenated frames. `predictions` and `labels` hold
/// (valence, arousal) pairs.
pub fn evaluate(predictions: &[[f64; 2]], labels: &[[f64; 2]]) -> Result<Evaluation> {
    if predictions.is_empty() {
        return Err(Error::invalid("evaluate", "empty split"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "evaluate",
            &[predictions.len()],
            &[labels.len()],
        ));
    }
    let col = |s: &[[f64; 2]], d: usize| s.iter().map(|p| p[d]).collect::<Vec<_>>();
    let v = ccc(&col(predictions, 0), &col(labels, 0))?.value;
    let a = ccc(&col(predictions, 1), &col(labels, 1))?.value;
    Ok(Evaluation::from_pair(v, a))
}

/// Per-frame `[valence, arousal]` values of one video.
pub type Series = Vec<[f64; 2]>;

/// Alternative scheme: CCC per video, then the mean over videos.
pub fn evaluate_per_video(videos: &[(Series, Series)]) -> Result<Evaluation> {
    if videos.is_empty() {
        return Err(Error::invalid("evaluate", "empty split"));
    }
    let (mut v, mut a) = (0.0, 0.0);
    for (p, l) in videos {
        let e = evaluate(p, l)?;
        v += e.ccc_valence;
        a += e.ccc_arousal;
    }
    let n = videos.len() as f64;
    Ok(Evaluation::from_pair(v / n, a / n))
}
