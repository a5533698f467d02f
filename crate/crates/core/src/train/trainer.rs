use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, cosine_warm_restart_lr, AdamW, AdamWConfig};
use crate::autodiff::Tape;
use crate::data::{
    corpus_windows, make_batch, AudioData, Augment, Batch, Corpus, Split, Window, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::fusion::{save_checkpoint, AudioSource, Model, VisualSource};
use crate::losses::{
    class_histogram, class_weights, discretize_va, evaluate, evaluate_per_video, total_loss,
    Evaluation, LossWeights, Series,
};
use crate::nn::{Ctx, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub batch_size: usize,
    /// Warm-restart period in optimizer steps.
    pub scheduler_period: u64,
    pub lr_min: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation CCC.
    pub patience: Option<usize>,
    pub seed: u64,
    pub dilation: usize,
    pub window: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Standard deviation of the Gaussian noise added to training audio.
    pub audio_noise: f64,
    /// Stop as soon as validation average CCC reaches this value.
    pub target_ccc: Option<f64>,
    /// Average CCC per video instead of over all frames.
    pub per_video_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            loss: LossWeights {
                lambda_mse: 0.0,
                lambda_ce: 0.0,
            },
            batch_size: 64,
            scheduler_period: 200,
            lr_min: 0.0,
            max_epochs: 50,
            patience: Some(10),
            seed: 0,
            dilation: 4,
            window: DEFAULT_WINDOW,
            clip_norm: Some(5.0),
            audio_noise: 0.0,
            target_ccc: None,
            per_video_eval: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |k: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{k} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.learning_rate) {
            return Err(Error::Config(format!(
                "lr_min must lie in [0, learning_rate], got {}",
                self.lr_min
            )));
        }
        self.loss.validate()?;
        for (k, v) in [
            ("batch_size", self.batch_size),
            ("dilation", self.dilation),
            ("window", self.window),
            ("scheduler_period", self.scheduler_period as usize),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        if let Some(c) = self.clip_norm {
            positive("clip_norm", c)?;
        }
        if !(self.audio_noise >= 0.0 && self.audio_noise.is_finite()) {
            return Err(Error::Config(format!(
                "audio_noise must be >= 0, got {}",
                self.audio_noise
            )));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Batch means of the total loss and its unweighted components.
    pub loss: f64,
    pub ccc_loss: f64,
    pub mse: f64,
    pub ce: f64,
    pub grad_norm: f64,
    pub degenerate_batches: usize,
    /// Learning rate used at each step of the epoch.
    pub lr: Vec<f64>,
    pub validation: Evaluation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: Evaluation,
    pub stop: StopReason,
}

impl History {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

fn check_inputs<S: Scalar>(model: &Model<S>, corpus: &Corpus) -> Result<()> {
    let cfg = &model.config;
    let Some(v) = corpus.videos.first() else {
        return Ok(());
    };
    if cfg.modality.uses_visual() && v.visual.width != cfg.visual_source.input_width() {
        let expected = match cfg.visual_source {
            VisualSource::Precomputed => "precomputed visual features".to_string(),
            VisualSource::Stub {
                height,
                width,
                channels,
            } => format!("{height}x{width}x{channels} image stubs"),
        };
        return Err(Error::Corpus(format!(
            "{} expects {expected} of width {}, corpus has width {}",
            cfg.name(),
            cfg.visual_source.input_width(),
            v.visual.width
        )));
    }
    if cfg.modality.uses_audio() {
        match (&v.audio, cfg.audio_source) {
            (AudioData::Features(m), AudioSource::Features)
                if m.width == cfg.audio_source.input_width() => {}
            (AudioData::Waveform(_), AudioSource::Raw) => {}
            (AudioData::Features(m), AudioSource::Features) => {
                return Err(Error::Corpus(format!(
                    "audio features have width {}, model expects {}",
                    m.width,
                    cfg.audio_source.input_width()
                )))
            }
            (AudioData::Features(_), AudioSource::Raw) => {
                return Err(Error::Corpus(
                    "raw audio model needs a corpus with waveforms".into(),
                ))
            }
            (AudioData::Waveform(_), AudioSource::Features) => {
                return Err(Error::Corpus(
                    "corpus holds waveforms, model expects audio features".into(),
                ))
            }
        }
    }
    Ok(())
}

fn inputs<S: Scalar>(
    ctx: &Ctx<'_, S>,
    model: &Model<S>,
    batch: &Batch<S>,
) -> Result<(Option<crate::Var>, Option<crate::Var>)> {
    let m = model.config.modality;
    let v = if m.uses_visual() {
        Some(ctx.tape.constant(batch.visual.clone())?)
    } else {
        None
    };
    let a = if m.uses_audio() {
        Some(ctx.tape.constant(batch.audio.clone())?)
    } else {
        None
    };
    Ok((v, a))
}

/// Predictions for every windowed frame of `split` (consecutive windows of
/// length `window`), grouped by video.
pub fn predict_split<S: Scalar>(
    model: &Model<S>,
    corpus: &Corpus,
    split: Split,
    window: usize,
    batch_size: usize,
) -> Result<Vec<(Series, Series)>> {
    if !corpus.has_split(split) {
        return Err(Error::Corpus(format!("no videos in the {split} split")));
    }
    check_inputs(model, corpus)?;
    let windows = corpus_windows(corpus, split, window, 1);
    if windows.is_empty() {
        return Err(Error::Corpus(format!(
            "the {split} split has no complete window of {window} frames"
        )));
    }
    let mut per_video: Vec<(usize, Series, Series)> = Vec::new();
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let batch: Batch<S> = make_batch::<S, ChaCha8Rng>(corpus, &refs, None)?;
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &model.store);
        let (v, a) = inputs(&ctx, model, &batch)?;
        let out = model.forward(&ctx, v, a)?;
        let pred = tape.value(out.va).to_f64_vec();
        let labels = batch.labels.to_f64_vec();
        for (wi, w) in chunk.iter().enumerate() {
            if per_video.last().is_none_or(|p| p.0 != w.video) {
                per_video.push((w.video, Vec::new(), Vec::new()));
            }
            let slot = per_video.last_mut().expect("pushed above");
            for k in 0..window {
                let o = (wi * window + k) * 2;
                slot.1.push([pred[o], pred[o + 1]]);
                slot.2.push([labels[o], labels[o + 1]]);
            }
        }
    }
    Ok(per_video.into_iter().map(|(_, p, l)| (p, l)).collect())
}

/// Validation metric of `model` on `split`.
pub fn evaluate_model<S: Scalar>(
    model: &Model<S>,
    corpus: &Corpus,
    split: Split,
    window: usize,
    batch_size: usize,
    per_video: bool,
) -> Result<Evaluation> {
    let groups = predict_split(model, corpus, split, window, batch_size)?;
    if per_video {
        evaluate_per_video(&groups)
    } else {
        let (p, l): (Vec<_>, Vec<_>) = groups.into_iter().unzip();
        evaluate(&p.concat(), &l.concat())
    }
}

/// Named parameter values, in registry order.
type Snapshot<S> = Vec<(String, Tensor<S>)>;

/// Resumable training loop with best-epoch tracking.
pub struct Trainer<'c, S: Scalar> {
    pub model: Model<S>,
    pub config: TrainConfig,
    corpus: &'c Corpus,
    optimizer: AdamW<S>,
    rng: ChaCha8Rng,
    windows: Vec<Window>,
    class_weights: Vec<f64>,
    epochs: Vec<EpochRecord>,
    best: Option<(usize, Evaluation, Snapshot<S>)>,
    stop: Option<StopReason>,
    pending: Vec<Vec<usize>>,
    acc: EpochAcc,
}

#[derive(Default)]
struct EpochAcc {
    steps: usize,
    loss: f64,
    parts: [f64; 3],
    norm: f64,
    degenerate: usize,
    lr: Vec<f64>,
}

impl<'c, S: Scalar> Trainer<'c, S> {
    pub fn new(model: Model<S>, corpus: &'c Corpus, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_inputs(&model, corpus)?;
        for split in [Split::Train, Split::Validation] {
            if !corpus.has_split(split) {
                return Err(Error::Corpus(format!("no videos in the {split} split")));
            }
        }
        let windows = corpus_windows(corpus, Split::Train, config.window, config.dilation);
        if windows.is_empty() {
            return Err(Error::Corpus(format!(
                "the train split has no complete window of {} frames",
                config.window
            )));
        }
        let classes = windows
            .iter()
            .flat_map(|w| {
                let v = &corpus.videos[w.video];
                w.frames
                    .iter()
                    .map(move |&f| (v.labels[f].valence as f64, v.labels[f].arousal as f64))
            })
            .map(|(v, a)| discretize_va(v, a))
            .collect::<Result<Vec<_>>>()?;
        let class_weights = class_weights(&class_histogram(&classes))?;
        let optimizer = AdamW::new(&model.store, AdamWConfig::default());
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            config,
            corpus,
            optimizer,
            windows,
            class_weights,
            epochs: Vec::new(),
            best: None,
            stop: None,
            pending: Vec::new(),
            acc: EpochAcc::default(),
        })
    }

    /// Optimizer steps taken so far.
    pub fn steps_done(&self) -> u64 {
        self.optimizer.step
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs.len()
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.epochs
    }

    pub fn stopped(&self) -> Option<StopReason> {
        self.stop
    }

    /// Best validation result so far as `(epoch, evaluation)`.
    pub fn best(&self) -> Option<(usize, Evaluation)> {
        self.best.as_ref().map(|(e, ev, _)| (*e, *ev))
    }

    fn train_step(
        &mut self,
        batch: &Batch<S>,
        step_seed: u64,
    ) -> Result<(f64, [f64; 3], f64, bool)> {
        let end_to_end = self.model.config.end_to_end;
        let tape = Tape::new();
        let (terms, grads) = {
            let ctx = Ctx::train(&tape, &self.model.store, end_to_end, step_seed);
            let (v, a) = inputs(&ctx, &self.model, batch)?;
            let out = self.model.forward(&ctx, v, a)?;
            let target = tape.constant(batch.labels.clone())?;
            let terms = total_loss(
                &tape,
                out.va,
                target,
                out.logits,
                &self.class_weights,
                self.config.loss,
            )?;
            let total = tape.value(terms.total).item().as_f64();
            if !total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at step {}",
                    self.optimizer.step + 1
                )));
            }
            tape.backward(terms.total)?;
            (terms, ctx.into_grads())
        };
        let parts = [terms.ccc, terms.mse, terms.ce].map(|v| tape.value(v).item().as_f64());
        let total = tape.value(terms.total).item().as_f64();
        let lr = self.current_lr();
        let store = &mut self.model.store;
        store.zero_grad();
        store.add_grads(&grads);
        let norm = match self.config.clip_norm {
            Some(c) => clip_grad_norm(store, c),
            None => super::optim::grad_norm(store),
        };
        self.optimizer
            .step(store, lr, self.config.weight_decay, end_to_end)?;
        Ok((total, parts, norm, terms.degenerate))
    }

    fn current_lr(&self) -> f64 {
        cosine_warm_restart_lr(
            self.optimizer.step,
            self.config.learning_rate,
            self.config.lr_min,
            self.config.scheduler_period,
        )
    }

    /// Runs one optimizer step on the next batch of the current epoch,
    /// reshuffling when a new epoch starts. Returns the step's total loss.
    pub fn step(&mut self) -> Result<f64> {
        if self.pending.is_empty() {
            let mut order: Vec<usize> = (0..self.windows.len()).collect();
            order.shuffle(&mut self.rng);
            self.pending = order
                .chunks(self.config.batch_size)
                .rev()
                .map(<[usize]>::to_vec)
                .collect();
            self.acc = EpochAcc::default();
        }
        let idx = self.pending.pop().expect("refilled above");
        let refs: Vec<&Window> = idx.iter().map(|&i| &self.windows[i]).collect();
        let noise_seed = self.rng.next_u64();
        let step_seed = self.rng.next_u64();
        let batch: Batch<S> = if self.config.audio_noise > 0.0 {
            let mut nrng = ChaCha8Rng::seed_from_u64(noise_seed);
            make_batch(
                self.corpus,
                &refs,
                Some(Augment {
                    sigma: self.config.audio_noise as f32,
                    rng: &mut nrng,
                }),
            )?
        } else {
            make_batch::<S, ChaCha8Rng>(self.corpus, &refs, None)?
        };
        self.acc.lr.push(self.current_lr());
        let (l, p, n, d) = self.train_step(&batch, step_seed)?;
        let acc = &mut self.acc;
        acc.steps += 1;
        acc.loss += l;
        acc.norm += n;
        for (sum, v) in acc.parts.iter_mut().zip(p) {
            *sum += v;
        }
        acc.degenerate += d as usize;
        Ok(l)
    }

    /// Finishes the current epoch and runs the validation pass after it.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        self.step()?;
        while !self.pending.is_empty() {
            self.step()?;
        }
        let EpochAcc {
            steps,
            loss,
            parts,
            norm,
            degenerate,
            lr: lrs,
        } = std::mem::take(&mut self.acc);
        let validation = evaluate_model(
            &self.model,
            self.corpus,
            Split::Validation,
            self.config.window,
            self.config.batch_size,
            self.config.per_video_eval,
        )?;
        let epoch = self.epochs.len() + 1;
        let k = steps as f64;
        self.epochs.push(EpochRecord {
            epoch,
            steps,
            loss: loss / k,
            ccc_loss: parts[0] / k,
            mse: parts[1] / k,
            ce: parts[2] / k,
            grad_norm: norm / k,
            degenerate_batches: degenerate,
            lr: lrs,
            validation,
        });
        if self
            .best
            .as_ref()
            .is_none_or(|b| validation.average > b.1.average)
        {
            let values = self
                .model
                .store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect();
            self.best = Some((epoch, validation, values));
        }
        let best_epoch = self.best.as_ref().map_or(epoch, |b| b.0);
        self.stop = if self
            .config
            .target_ccc
            .is_some_and(|t| validation.average >= t)
        {
            Some(StopReason::Target)
        } else if self
            .config
            .patience
            .is_some_and(|p| epoch - best_epoch >= p)
        {
            Some(StopReason::Patience)
        } else if epoch >= self.config.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        Ok(self.epochs.last().expect("pushed above"))
    }

    /// Trains until a stopping rule fires.
    pub fn fit(&mut self) -> Result<History> {
        while self.stop.is_none() {
            self.run_epoch()?;
        }
        self.history()
    }

    pub fn history(&self) -> Result<History> {
        let (best_epoch, best, _) = self
            .best
            .as_ref()
            .ok_or_else(|| Error::Training("no epoch has completed".into()))?;
        Ok(History {
            epochs: self.epochs.clone(),
            best_epoch: *best_epoch,
            best: *best,
            stop: self.stop.unwrap_or(StopReason::MaxEpochs),
        })
    }

    /// Parameter values of the best epoch.
    pub fn best_store(&self) -> Result<ParamStore<S>> {
        let (_, _, values) = self
            .best
            .as_ref()
            .ok_or_else(|| Error::Training("no epoch has completed".into()))?;
        let mut store = self.model.store.clone();
        store.load_values(values)?;
        Ok(store)
    }

    /// The model with its best-epoch weights.
    pub fn into_best_model(self) -> Result<Model<S>> {
        let store = self.best_store()?;
        let mut model = self.model;
        model.store = store;
        Ok(model)
    }

    pub fn save_best(&self, path: &Path, config_text: &str) -> Result<()> {
        save_checkpoint(path, config_text, &self.best_store()?)
    }
}
