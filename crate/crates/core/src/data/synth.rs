//! Synthetic audiovisual corpus with known latent structure.
//!
//! Each video has two independent smooth latents `z1`, `z2` in [-1, 1].
//! Visual features see `z1`, audio sees `z2`, and the labels are
//! `valence = (z1 + z2) / 2`, `arousal = (z1 - z2) / 2`. Either modality alone
//! explains half of each label's variance.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::audio::{quantize_pcm, write_wav, SAMPLE_RATE};
use super::corpus::{
    AudioData, Corpus, CorpusManifest, Label, ManifestEntry, Split, Video, DEFAULT_FPS,
};
use super::format::{write_features, FrameMatrix};
use crate::error::{Error, Result};

/// Number of nuisance latents mixed into each modality.
pub const DISTRACTORS: usize = 4;

const CARRIER_HZ: f64 = 440.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthAudio {
    Features,
    Waveform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_videos: usize,
    pub frames: usize,
    pub d_visual: usize,
    pub d_audio: usize,
    /// Moving-average width in frames.
    pub smoothness: usize,
    /// Standard deviation of the observation noise added to features.
    pub noise: f64,
    pub audio: SynthAudio,
    /// Probability that a frame is marked invalid.
    pub invalid_rate: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_videos: 50,
            frames: 480,
            d_visual: 512,
            d_audio: 128,
            smoothness: 15,
            noise: 0.1,
            audio: SynthAudio::Features,
            invalid_rate: 0.02,
            validation_fraction: 0.2,
            test_fraction: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_videos", self.n_videos),
            ("frames", self.frames),
            ("d_visual", self.d_visual),
            ("smoothness", self.smoothness),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.audio == SynthAudio::Features && self.d_audio == 0 {
            return Err(Error::Config("d_audio must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        if !(0.0..1.0).contains(&self.invalid_rate) {
            return Err(Error::Config(format!(
                "invalid_rate must be in [0, 1), got {}",
                self.invalid_rate
            )));
        }
        let (v, t) = (self.validation_fraction, self.test_fraction);
        if !(v >= 0.0 && t >= 0.0 && v + t <= 1.0) {
            return Err(Error::Config(format!(
                "split fractions {v} and {t} must be >= 0 and sum to at most 1"
            )));
        }
        Ok(())
    }

    fn split_of(&self, i: usize) -> Split {
        let n = self.n_videos as f64;
        let n_train = (n * (1.0 - self.validation_fraction - self.test_fraction)).round() as usize;
        let n_val = (n * self.validation_fraction).round() as usize;
        if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

/// Generated corpus plus the per-video latents `[z1, z2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub latents: Vec<[Vec<f64>; 2]>,
}

fn smooth_latent<R: Rng>(rng: &mut R, frames: usize, width: usize) -> Vec<f64> {
    let noise: Vec<f64> = (0..frames + width - 1)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let mut z: Vec<f64> = noise
        .windows(width)
        .map(|w| w.iter().sum::<f64>() / width as f64)
        .collect();
    let peak = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        z.iter_mut().for_each(|v| *v /= peak);
    }
    z
}

fn mixing<R: Rng>(rng: &mut R, width: usize) -> Vec<f64> {
    let scale = 1.0 / ((1 + DISTRACTORS) as f64).sqrt();
    (0..width * (1 + DISTRACTORS))
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Features `W · [z, d_1..d_K] + noise`, one row per frame.
fn observe<R: Rng>(
    rng: &mut R,
    w: &[f64],
    width: usize,
    sources: &[Vec<f64>],
    noise: f64,
) -> Result<FrameMatrix> {
    let frames = sources[0].len();
    let mut data = Vec::with_capacity(frames * width);
    for f in 0..frames {
        for j in 0..width {
            let row = &w[j * sources.len()..(j + 1) * sources.len()];
            let clean: f64 = row.iter().zip(sources).map(|(a, s)| a * s[f]).sum();
            let eps: f64 = rng.sample(StandardNormal);
            data.push((clean + noise * eps) as f32);
        }
    }
    FrameMatrix::new(frames, width, data)
}

/// Amplitude-modulated carrier whose envelope follows `z`, plus a second
/// tone driven by a distractor.
fn waveform<R: Rng>(rng: &mut R, z: &[f64], distractor: &[f64], noise: f64) -> Vec<f32> {
    let n = ((z.len() as f64 / DEFAULT_FPS) * SAMPLE_RATE as f64).round() as usize;
    let lerp = |sig: &[f64], t: f64| {
        let x = (t * DEFAULT_FPS).min((sig.len() - 1) as f64);
        let i = x.floor() as usize;
        let j = (i + 1).min(sig.len() - 1);
        sig[i] + (x - i as f64) * (sig[j] - sig[i])
    };
    (0..n)
        .map(|k| {
            let t = k as f64 / SAMPLE_RATE as f64;
            let main =
                0.4 * (1.0 + 0.8 * lerp(z, t)) * (std::f64::consts::TAU * CARRIER_HZ * t).sin();
            let side = 0.1
                * (1.0 + 0.8 * lerp(distractor, t))
                * (std::f64::consts::TAU * 2.3 * CARRIER_HZ * t).sin();
            let eps: f64 = rng.sample(StandardNormal);
            quantize_pcm((0.5 * (main + side) + 0.05 * noise * eps) as f32)
        })
        .collect()
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w_visual = mixing(&mut rng, cfg.d_visual);
    let w_audio = mixing(&mut rng, cfg.d_audio);
    let mut videos = Vec::with_capacity(cfg.n_videos);
    let mut latents = Vec::with_capacity(cfg.n_videos);
    for i in 0..cfg.n_videos {
        let mut latent = || smooth_latent(&mut rng, cfg.frames, cfg.smoothness);
        let z1 = latent();
        let z2 = latent();
        let vis_sources: Vec<Vec<f64>> = std::iter::once(z1.clone())
            .chain((0..DISTRACTORS).map(|_| smooth_latent(&mut rng, cfg.frames, cfg.smoothness)))
            .collect();
        let aud_sources: Vec<Vec<f64>> = std::iter::once(z2.clone())
            .chain((0..DISTRACTORS).map(|_| smooth_latent(&mut rng, cfg.frames, cfg.smoothness)))
            .collect();
        let visual = observe(&mut rng, &w_visual, cfg.d_visual, &vis_sources, cfg.noise)?;
        let audio = match cfg.audio {
            SynthAudio::Features => AudioData::Features(observe(
                &mut rng,
                &w_audio,
                cfg.d_audio,
                &aud_sources,
                cfg.noise,
            )?),
            SynthAudio::Waveform => {
                AudioData::Waveform(waveform(&mut rng, &z2, &aud_sources[1], cfg.noise))
            }
        };
        let labels = (0..cfg.frames)
            .map(|f| {
                if rng.random::<f64>() < cfg.invalid_rate {
                    Label {
                        valence: 0.0,
                        arousal: 0.0,
                        valid: false,
                    }
                } else {
                    Label {
                        valence: ((z1[f] + z2[f]) / 2.0) as f32,
                        arousal: ((z1[f] - z2[f]) / 2.0) as f32,
                        valid: true,
                    }
                }
            })
            .collect();
        videos.push(Video {
            id: format!("vid{i:03}"),
            fps: DEFAULT_FPS,
            split: cfg.split_of(i),
            visual,
            audio,
            labels,
        });
        latents.push([z1, z2]);
    }
    Ok(SynthCorpus {
        corpus: Corpus { videos },
        latents,
    })
}

/// Writes `manifest.tsv` and the `visual/`, `audio/` and `labels/` files.
/// Output is a pure function of the corpus.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    for sub in ["visual", "audio", "labels"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = CorpusManifest::default();
    for v in &corpus.videos {
        let visual = format!("visual/{}.avfs", v.id);
        let labels = format!("labels/{}.avfs", v.id);
        write_features(&dir.join(&visual), &v.visual)?;
        let audio = match &v.audio {
            AudioData::Features(m) => {
                let p = format!("audio/{}.avfs", v.id);
                write_features(&dir.join(&p), m)?;
                p
            }
            AudioData::Waveform(s) => {
                let p = format!("audio/{}.wav", v.id);
                write_wav(&dir.join(&p), s)?;
                p
            }
        };
        let rows: Vec<f32> = v
            .labels
            .iter()
            .flat_map(|l| [l.valence, l.arousal, if l.valid { 1.0 } else { 0.0 }])
            .collect();
        write_features(
            &dir.join(&labels),
            &FrameMatrix::new(v.labels.len(), 3, rows)?,
        )?;
        manifest.entries.push(ManifestEntry {
            id: v.id.clone(),
            fps: v.fps,
            visual: visual.into(),
            audio: audio.into(),
            labels: labels.into(),
            split: v.split,
        });
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))
}
