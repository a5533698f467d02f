//! Model zoo: encoders, front-end projections, sequence cores and output
//! heads for the audio, visual and audiovisual variants.

mod checkpoint;
mod encoders;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoders::{
    AudioEncoder, StubVisualEncoder, AUDIO_CHANNELS, AUDIO_KERNEL, AUDIO_POOL, AUDIO_WIDTH,
    CLIP_SAMPLES, STUB_CHANNELS, VISUAL_WIDTH,
};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{
    add_positional_encoding, Activation, Conv1d, Ctx, Dense, Dropout, LayerSpec, ParamGroup,
    ParamStore,
};
use crate::scalar::Scalar;
use crate::sequence::{
    AttentionSpec, CrossModalSpec, CrossModalStack, EncoderStack, Lstm, LstmSpec,
};

pub use crate::losses::N_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Rnn,
    Sa,
    Cma,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Rnn, Arch::Sa, Arch::Cma];
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Rnn => "rnn",
            Arch::Sa => "sa",
            Arch::Cma => "cma",
        })
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(Arch::Rnn),
            "sa" => Ok(Arch::Sa),
            "cma" => Ok(Arch::Cma),
            _ => Err("one of rnn, sa, cma".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Audio,
    Visual,
    Audiovisual,
}

impl Modality {
    pub fn uses_audio(self) -> bool {
        self != Modality::Visual
    }

    pub fn uses_visual(self) -> bool {
        self != Modality::Audio
    }

    /// Short prefix used in model names ("Aud", "Vis", "AV").
    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Audio => "Aud",
            Modality::Visual => "Vis",
            Modality::Audiovisual => "AV",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
            Modality::Audiovisual => "audiovisual",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "audio" | "aud" => Ok(Modality::Audio),
            "visual" | "vis" => Ok(Modality::Visual),
            "audiovisual" | "av" => Ok(Modality::Audiovisual),
            _ => Err("one of audio, visual, audiovisual".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrontEnd {
    Dense,
    /// Convolution along time with odd kernel and same padding.
    Conv1d {
        kernel: usize,
    },
}

impl fmt::Display for FrontEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrontEnd::Dense => f.write_str("dense"),
            FrontEnd::Conv1d { kernel } => write!(f, "conv1d({kernel})"),
        }
    }
}

impl FromStr for FrontEnd {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let expected = || "dense or conv1d(k) with odd k".to_string();
        let s = s.trim().to_ascii_lowercase();
        if s == "dense" {
            return Ok(FrontEnd::Dense);
        }
        let k = s
            .strip_prefix("conv1d(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|k| k.trim().parse::<usize>().ok())
            .ok_or_else(expected)?;
        if k % 2 == 0 {
            return Err(expected());
        }
        Ok(FrontEnd::Conv1d { kernel: k })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VisualSource {
    /// 512-d embeddings read from feature files.
    Precomputed,
    /// Tiny `height × width × channels` images through [`StubVisualEncoder`].
    Stub {
        height: usize,
        width: usize,
        channels: usize,
    },
}

impl VisualSource {
    pub fn input_width(self) -> usize {
        match self {
            VisualSource::Precomputed => VISUAL_WIDTH,
            VisualSource::Stub {
                height,
                width,
                channels,
            } => height * width * channels,
        }
    }
}

impl fmt::Display for VisualSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VisualSource::Precomputed => f.write_str("precomputed"),
            VisualSource::Stub {
                height,
                width,
                channels,
            } => write!(f, "stub({height}x{width}x{channels})"),
        }
    }
}

impl FromStr for VisualSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let expected = || "precomputed or stub(HxWxC) with H, W ≤ 32".to_string();
        let s = s.trim().to_ascii_lowercase();
        if s == "precomputed" {
            return Ok(VisualSource::Precomputed);
        }
        let dims: Vec<usize> = s
            .strip_prefix("stub(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(expected)?
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| expected())?;
        match dims[..] {
            [height, width, channels] => Ok(VisualSource::Stub {
                height,
                width,
                channels,
            }),
            _ => Err(expected()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AudioSource {
    /// 128-d embeddings read from feature files.
    Features,
    /// 8000-sample waveform clips through [`AudioEncoder`].
    Raw,
}

impl AudioSource {
    pub fn input_width(self) -> usize {
        match self {
            AudioSource::Features => AUDIO_WIDTH,
            AudioSource::Raw => CLIP_SAMPLES,
        }
    }
}

impl fmt::Display for AudioSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AudioSource::Features => "features",
            AudioSource::Raw => "raw",
        })
    }
}

impl FromStr for AudioSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "features" => Ok(AudioSource::Features),
            "raw" => Ok(AudioSource::Raw),
            _ => Err("one of features, raw".into()),
        }
    }
}

/// Sequence core together with its architecture-specific settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Core {
    Rnn(LstmSpec),
    Sa(AttentionSpec),
    Cma(CrossModalSpec),
}

impl Core {
    pub fn arch(&self) -> Arch {
        match self {
            Core::Rnn(_) => Arch::Rnn,
            Core::Sa(_) => Arch::Sa,
            Core::Cma(_) => Arch::Cma,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub modality: Modality,
    pub core: Core,
    pub front_end: FrontEnd,
    pub front_end_bias: bool,
    pub d_model: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub visual_source: VisualSource,
    pub audio_source: AudioSource,
    /// Train the encoders jointly with the sequence model.
    pub end_to_end: bool,
}

/// Parameter totals. `sequence` covers front-ends, the sequence core and
/// the heads; `total` adds the encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParameterCount {
    pub sequence: usize,
    pub total: usize,
}

impl ModelConfig {
    pub fn arch(&self) -> Arch {
        self.core.arch()
    }

    /// Model name in the "AV-SA" style.
    pub fn name(&self) -> String {
        format!(
            "{}-{}",
            self.modality.prefix(),
            self.arch().to_string().to_ascii_uppercase()
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::Config("d_model must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if let FrontEnd::Conv1d { kernel } = self.front_end {
            if kernel % 2 == 0 {
                return Err(Error::Config(format!(
                    "front-end kernel must be odd, got {kernel}"
                )));
            }
        }
        if let VisualSource::Stub {
            height,
            width,
            channels,
        } = self.visual_source
        {
            if !(1..=32).contains(&height)
                || !(1..=32).contains(&width)
                || channels == 0
                || height * width < 2
            {
                return Err(Error::Config(format!(
                    "stub images must be at most 32x32 with at least two pixels, got {height}x{width}x{channels}"
                )));
            }
        }
        let concat = self.modality == Modality::Audiovisual && self.arch() != Arch::Cma;
        if concat && self.d_model % 2 == 1 {
            return Err(Error::Config(format!(
                "audiovisual concatenation splits d_model in halves, got odd {}",
                self.d_model
            )));
        }
        match &self.core {
            Core::Rnn(spec) => spec.validate(),
            Core::Sa(spec) => {
                spec.validate()?;
                self.check_width(spec)
            }
            Core::Cma(spec) => {
                if self.modality != Modality::Audiovisual {
                    return Err(Error::Config(format!(
                        "cross-modal attention needs modality audiovisual, got {}",
                        self.modality
                    )));
                }
                spec.validate()?;
                self.check_width(&spec.attention)
            }
        }
    }

    fn check_width(&self, spec: &AttentionSpec) -> Result<()> {
        if spec.d_model != self.d_model {
            return Err(Error::Config(format!(
                "attention d_model {} differs from model d_model {}",
                spec.d_model, self.d_model
            )));
        }
        if spec.d_model % 2 == 1 {
            return Err(Error::Config(format!(
                "positional encoding needs an even d_model, got {}",
                spec.d_model
            )));
        }
        Ok(())
    }

    /// Width of each modality's front-end output.
    fn projection_width(&self) -> usize {
        match (self.modality, self.arch()) {
            (Modality::Audiovisual, Arch::Rnn | Arch::Sa) => self.d_model / 2,
            _ => self.d_model,
        }
    }

    fn front_end_spec(&self, d_in: usize) -> LayerSpec {
        let d_out = self.projection_width();
        match self.front_end {
            FrontEnd::Dense => LayerSpec::Dense {
                d_in,
                d_out,
                bias: self.front_end_bias,
            },
            FrontEnd::Conv1d { kernel } => LayerSpec::Conv1d {
                c_in: d_in,
                c_out: d_out,
                kernel,
                padding: kernel / 2,
                bias: self.front_end_bias,
            },
        }
    }

    /// Width of the sequence core's output, which the heads consume.
    pub fn trunk_width(&self) -> usize {
        match &self.core {
            Core::Rnn(spec) => spec.output_width(),
            Core::Sa(_) | Core::Cma(_) => self.d_model,
        }
    }

    /// Closed-form parameter count from the layer formulas.
    pub fn analytic_parameter_count(&self) -> ParameterCount {
        let mut sequence = 0;
        let mut encoders = 0;
        if self.modality.uses_visual() {
            sequence += self.front_end_spec(VISUAL_WIDTH).param_count();
            if let VisualSource::Stub { channels, .. } = self.visual_source {
                encoders += StubVisualEncoder::layer_specs(channels)
                    .iter()
                    .map(LayerSpec::param_count)
                    .sum::<usize>();
            }
        }
        if self.modality.uses_audio() {
            sequence += self.front_end_spec(AUDIO_WIDTH).param_count();
            if self.audio_source == AudioSource::Raw {
                encoders += AudioEncoder::param_count();
            }
        }
        sequence += match &self.core {
            Core::Rnn(spec) => spec.param_count(self.d_model),
            Core::Sa(spec) => spec.n_layers * spec.encoder_layer_param_count(),
            Core::Cma(spec) => {
                let merge = LayerSpec::Dense {
                    d_in: 2 * self.d_model,
                    d_out: self.d_model,
                    bias: true,
                };
                (spec.n_layers_v_to_a + spec.n_layers_a_to_v) * spec.block_param_count()
                    + merge.param_count()
                    + spec.attention.n_layers * spec.attention.encoder_layer_param_count()
            }
        };
        let w = self.trunk_width();
        sequence += (w * 2 + 2) + (w * N_CLASSES + N_CLASSES);
        ParameterCount {
            sequence,
            total: sequence + encoders,
        }
    }
}

#[derive(Clone, Debug)]
enum Projection {
    Dense(Dense),
    Conv(Conv1d),
}

impl Projection {
    fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        match self {
            Projection::Dense(d) => d.forward(ctx, x),
            Projection::Conv(c) => c.forward_sequence(ctx, x),
        }
    }
}

#[derive(Clone, Debug)]
enum CoreNet {
    Rnn(Lstm),
    Sa(EncoderStack),
    Cma {
        v_to_a: CrossModalStack,
        a_to_v: CrossModalStack,
        merge: Dense,
        stack: EncoderStack,
    },
}

/// Per-timestep outputs: `va` in `[−1, 1]` with shape `[B, T, 2]`, and
/// unnormalized class logits `[B, T, 24]`.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub va: Var,
    pub logits: Var,
}

/// A built model: configuration, parameter registry and layer handles.
#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    audio_encoder: Option<AudioEncoder>,
    visual_encoder: Option<StubVisualEncoder>,
    visual_front: Option<Projection>,
    audio_front: Option<Projection>,
    core: CoreNet,
    regression_head: Dense,
    class_head: Dense,
}

fn projection<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    spec: LayerSpec,
) -> Projection {
    let g = ParamGroup::Sequence;
    match spec {
        LayerSpec::Dense { d_in, d_out, bias } => {
            Projection::Dense(Dense::new(store, rng, name, g, d_in, d_out, bias))
        }
        LayerSpec::Conv1d {
            c_in,
            c_out,
            kernel,
            padding,
            bias,
        } => Projection::Conv(Conv1d::new(
            store, rng, name, g, c_in, c_out, kernel, padding, bias,
        )),
        _ => unreachable!("front ends are dense or conv1d"),
    }
}

/// Builds a model with parameters initialized from `seed`.
pub fn build_model<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let s = &mut store;
    let r = &mut rng;

    let mut visual_encoder = None;
    let mut visual_front = None;
    if config.modality.uses_visual() {
        if let VisualSource::Stub {
            height,
            width,
            channels,
        } = config.visual_source
        {
            visual_encoder = Some(StubVisualEncoder::new(
                s,
                r,
                "visual_encoder",
                height,
                width,
                channels,
                config.activation,
            ));
        }
        visual_front = Some(projection(
            s,
            r,
            "visual_front",
            config.front_end_spec(VISUAL_WIDTH),
        ));
    }
    let mut audio_encoder = None;
    let mut audio_front = None;
    if config.modality.uses_audio() {
        if config.audio_source == AudioSource::Raw {
            audio_encoder = Some(AudioEncoder::new(s, r, "audio_encoder"));
        }
        audio_front = Some(projection(
            s,
            r,
            "audio_front",
            config.front_end_spec(AUDIO_WIDTH),
        ));
    }

    let core = match &config.core {
        Core::Rnn(spec) => CoreNet::Rnn(Lstm::new(s, r, "lstm", *spec, config.d_model)?),
        Core::Sa(spec) => CoreNet::Sa(EncoderStack::new(s, r, "encoder", spec)?),
        Core::Cma(spec) => CoreNet::Cma {
            v_to_a: CrossModalStack::new(s, r, "v_to_a", &spec.attention, spec.n_layers_v_to_a)?,
            a_to_v: CrossModalStack::new(s, r, "a_to_v", &spec.attention, spec.n_layers_a_to_v)?,
            merge: Dense::new(
                s,
                r,
                "merge",
                ParamGroup::Sequence,
                2 * config.d_model,
                config.d_model,
                true,
            ),
            stack: EncoderStack::new(s, r, "encoder", &spec.attention)?,
        },
    };
    let w = config.trunk_width();
    let regression_head = Dense::new(s, r, "head.va", ParamGroup::Sequence, w, 2, true);
    let class_head = Dense::new(s, r, "head.class", ParamGroup::Sequence, w, N_CLASSES, true);

    Ok(Model {
        config: config.clone(),
        store,
        audio_encoder,
        visual_encoder,
        visual_front,
        audio_front,
        core,
        regression_head,
        class_head,
    })
}

impl<S: Scalar> Model<S> {
    /// Parameter totals enumerated from the registry.
    pub fn count_parameters(&self) -> ParameterCount {
        ParameterCount {
            sequence: self.store.count(Some(ParamGroup::Sequence)),
            total: self.store.count(None),
        }
    }

    /// Front-end projection → activation → dropout.
    fn project(&self, ctx: &Ctx<'_, S>, front: &Projection, x: Var) -> Result<Var> {
        let y = front.forward(ctx, x)?;
        let y = self.config.activation.apply(ctx, y);
        Dropout {
            p: self.config.dropout,
        }
        .forward(ctx, y)
    }

    fn check_input(
        &self,
        ctx: &Ctx<'_, S>,
        x: Var,
        width: usize,
        what: &'static str,
    ) -> Result<()> {
        let shape = ctx.tape.shape(x);
        if shape.len() != 3 || shape[2] != width {
            return Err(Error::shape(what, &shape, &[width]));
        }
        Ok(())
    }

    /// Runs the model on `[B, T, ·]` inputs. `visual` and `audio` must be
    /// present exactly when the modality uses them, with widths given by
    /// [`VisualSource::input_width`] and [`AudioSource::input_width`].
    pub fn forward(
        &self,
        ctx: &Ctx<'_, S>,
        visual: Option<Var>,
        audio: Option<Var>,
    ) -> Result<ModelOutput> {
        let t = ctx.tape;
        let cfg = &self.config;
        let visual = match (cfg.modality.uses_visual(), visual) {
            (true, Some(v)) => {
                self.check_input(ctx, v, cfg.visual_source.input_width(), "visual input")?;
                let v = match &self.visual_encoder {
                    Some(enc) => enc.forward(ctx, v)?,
                    None => v,
                };
                let front = self.visual_front.as_ref().expect("visual front-end");
                Some(self.project(ctx, front, v)?)
            }
            (true, None) => {
                return Err(Error::invalid(
                    "model_forward",
                    format!("{} needs visual input", cfg.name()),
                ))
            }
            (false, _) => None,
        };
        let audio = match (cfg.modality.uses_audio(), audio) {
            (true, Some(a)) => {
                self.check_input(ctx, a, cfg.audio_source.input_width(), "audio input")?;
                let a = match &self.audio_encoder {
                    Some(enc) => enc.forward(ctx, a)?,
                    None => a,
                };
                let front = self.audio_front.as_ref().expect("audio front-end");
                Some(self.project(ctx, front, a)?)
            }
            (true, None) => {
                return Err(Error::invalid(
                    "model_forward",
                    format!("{} needs audio input", cfg.name()),
                ))
            }
            (false, _) => None,
        };
        if let (Some(v), Some(a)) = (visual, audio) {
            let (vs, as_) = (t.shape(v), t.shape(a));
            if vs[..2] != as_[..2] {
                return Err(Error::shape("model_forward", &vs, &as_));
            }
        }

        let trunk = match &self.core {
            CoreNet::Rnn(lstm) => lstm.forward(ctx, fuse(ctx, visual, audio)?)?,
            CoreNet::Sa(stack) => {
                let x = add_positional_encoding(ctx, fuse(ctx, visual, audio)?)?;
                stack.forward(ctx, x)?
            }
            CoreNet::Cma {
                v_to_a,
                a_to_v,
                merge,
                stack,
            } => {
                let (v, a) = (visual.expect("visual"), audio.expect("audio"));
                let v = add_positional_encoding(ctx, v)?;
                let a = add_positional_encoding(ctx, a)?;
                let audio_target = v_to_a.forward(ctx, a, v)?;
                let visual_target = a_to_v.forward(ctx, v, a)?;
                let fused = t.concat(&[visual_target, audio_target], 2)?;
                stack.forward(ctx, merge.forward(ctx, fused)?)?
            }
        };
        let va = t.tanh(self.regression_head.forward(ctx, trunk)?);
        let logits = self.class_head.forward(ctx, trunk)?;
        Ok(ModelOutput { va, logits })
    }
}

/// Concatenation fusion in (visual, audio) order.
fn fuse<S: Scalar>(ctx: &Ctx<'_, S>, visual: Option<Var>, audio: Option<Var>) -> Result<Var> {
    match (visual, audio) {
        (Some(v), Some(a)) => ctx.tape.concat(&[v, a], 2),
        (Some(x), None) | (None, Some(x)) => Ok(x),
        (None, None) => Err(Error::invalid("model_forward", "no modality present")),
    }
}
