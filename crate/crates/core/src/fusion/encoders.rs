use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Activation, Conv1d, Ctx, Dense, LayerSpec, MaxPool1d, ParamGroup, ParamStore};
use crate::scalar::Scalar;

/// Samples per audio clip: 0.5 s at 16 kHz.
pub const CLIP_SAMPLES: usize = 8000;
/// Width of the audio embedding.
pub const AUDIO_WIDTH: usize = 128;
/// Width of the visual embedding.
pub const VISUAL_WIDTH: usize = 512;

/// Output channels of the four audio blocks.
pub const AUDIO_CHANNELS: [usize; 4] = [64, 64, 128, 128];
pub const AUDIO_KERNEL: usize = 3;
/// Pool size and stride after every audio block.
pub const AUDIO_POOL: usize = 2;

/// 1-D CNN over raw waveform clips: four blocks of
/// conv(k=3, same padding) → ReLU → maxpool(2, 2), then global average
/// pooling over time. Applied independently to every timestep.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    pub blocks: Vec<Conv1d>,
    pub pool: MaxPool1d,
}

impl AudioEncoder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
    ) -> Self {
        let mut c_in = 1;
        let blocks = AUDIO_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c_out)| {
                let conv = Conv1d::new(
                    store,
                    rng,
                    &format!("{name}.block{i}"),
                    ParamGroup::Encoder,
                    c_in,
                    c_out,
                    AUDIO_KERNEL,
                    AUDIO_KERNEL / 2,
                    true,
                );
                c_in = c_out;
                conv
            })
            .collect();
        AudioEncoder {
            blocks,
            pool: MaxPool1d {
                kernel: AUDIO_POOL,
                stride: AUDIO_POOL,
            },
        }
    }

    pub fn layer_specs() -> Vec<LayerSpec> {
        let mut c_in = 1;
        AUDIO_CHANNELS
            .iter()
            .map(|&c_out| {
                let s = LayerSpec::Conv1d {
                    c_in,
                    c_out,
                    kernel: AUDIO_KERNEL,
                    padding: AUDIO_KERNEL / 2,
                    bias: true,
                };
                c_in = c_out;
                s
            })
            .collect()
    }

    pub fn param_count() -> usize {
        Self::layer_specs().iter().map(LayerSpec::param_count).sum()
    }

    /// `[B, T, 8000]` → `[B, T, 128]`.
    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, clips: Var) -> Result<Var> {
        let t = ctx.tape;
        let shape = t.shape(clips);
        if shape.len() != 3 || shape[2] != CLIP_SAMPLES {
            return Err(Error::shape("audio_encoder", &shape, &[CLIP_SAMPLES]));
        }
        let (b, steps) = (shape[0], shape[1]);
        let mut x = t.reshape(clips, &[b * steps, 1, CLIP_SAMPLES])?;
        for conv in &self.blocks {
            x = conv.forward(ctx, x)?;
            x = t.relu(x);
            x = self.pool.forward(ctx, x)?;
        }
        let pooled = t.mean_axes(x, &[2], false)?;
        t.reshape(pooled, &[b, steps, AUDIO_WIDTH])
    }
}

/// Small trainable visual encoder for tiny images, used in place of a
/// pretrained face network. Pixels are raster-scanned into a sequence of
/// `c`-channel samples: conv(c→16, k=3) → act → maxpool(2, 2) →
/// conv(16→32, k=3) → act → global average → dense(32→512).
#[derive(Clone, Debug)]
pub struct StubVisualEncoder {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub pool: MaxPool1d,
    pub project: Dense,
    pub activation: Activation,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

pub const STUB_CHANNELS: [usize; 2] = [16, 32];

impl StubVisualEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        height: usize,
        width: usize,
        channels: usize,
        activation: Activation,
    ) -> Self {
        let g = ParamGroup::Encoder;
        let [c1, c2] = STUB_CHANNELS;
        StubVisualEncoder {
            conv1: Conv1d::new(
                store,
                rng,
                &format!("{name}.conv1"),
                g,
                channels,
                c1,
                3,
                1,
                true,
            ),
            conv2: Conv1d::new(store, rng, &format!("{name}.conv2"), g, c1, c2, 3, 1, true),
            pool: MaxPool1d {
                kernel: 2,
                stride: 2,
            },
            project: Dense::new(
                store,
                rng,
                &format!("{name}.project"),
                g,
                c2,
                VISUAL_WIDTH,
                true,
            ),
            activation,
            height,
            width,
            channels,
        }
    }

    pub fn layer_specs(channels: usize) -> Vec<LayerSpec> {
        let [c1, c2] = STUB_CHANNELS;
        vec![
            LayerSpec::Conv1d {
                c_in: channels,
                c_out: c1,
                kernel: 3,
                padding: 1,
                bias: true,
            },
            LayerSpec::Conv1d {
                c_in: c1,
                c_out: c2,
                kernel: 3,
                padding: 1,
                bias: true,
            },
            LayerSpec::Dense {
                d_in: c2,
                d_out: VISUAL_WIDTH,
                bias: true,
            },
        ]
    }

    pub fn input_width(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// `[B, T, h·w·c]` (row-major, channels last) → `[B, T, 512]`.
    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, images: Var) -> Result<Var> {
        let t = ctx.tape;
        let shape = t.shape(images);
        if shape.len() != 3 || shape[2] != self.input_width() {
            return Err(Error::shape(
                "stub_visual_encoder",
                &shape,
                &[self.input_width()],
            ));
        }
        let (b, steps) = (shape[0], shape[1]);
        let x = t.reshape(
            images,
            &[b * steps, self.height * self.width, self.channels],
        )?;
        let x = t.permute(x, &[0, 2, 1])?;
        let x = self.activation.apply(ctx, self.conv1.forward(ctx, x)?);
        let x = self.pool.forward(ctx, x)?;
        let x = self.activation.apply(ctx, self.conv2.forward(ctx, x)?);
        let x = t.mean_axes(x, &[2], false)?;
        let x = self.project.forward(ctx, x)?;
        t.reshape(x, &[b, steps, VISUAL_WIDTH])
    }
}
