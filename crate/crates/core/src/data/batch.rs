use rand::Rng;

use super::audio::{augment_audio, extract_audio_clip, SAMPLE_RATE};
use super::corpus::{AudioData, Corpus};
use super::windows::Window;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stacked windows: `visual [B,T,Dv]`, `audio [B,T,Da]` (Da = 8000 for raw
/// clips), `labels [B,T,2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<S: Scalar> {
    pub visual: Tensor<S>,
    pub audio: Tensor<S>,
    pub labels: Tensor<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn size(&self) -> usize {
        self.labels.shape()[0]
    }
}

/// Gaussian noise added to the audio input of training batches.
pub struct Augment<'a, R: Rng + ?Sized> {
    pub sigma: f32,
    pub rng: &'a mut R,
}

pub fn make_batch<S: Scalar, R: Rng + ?Sized>(
    corpus: &Corpus,
    windows: &[&Window],
    mut augment: Option<Augment<'_, R>>,
) -> Result<Batch<S>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::invalid("make_batch", "no windows"))?;
    let t = first.frames.len();
    let video0 = &corpus.videos[first.video];
    let dv = video0.visual.width;
    let da = match &video0.audio {
        AudioData::Features(m) => m.width,
        AudioData::Waveform(_) => crate::fusion::CLIP_SAMPLES,
    };
    let b = windows.len();
    let mut visual = Vec::with_capacity(b * t * dv);
    let mut audio = Vec::with_capacity(b * t * da);
    let mut labels = Vec::with_capacity(b * t * 2);
    for w in windows {
        if w.frames.len() != t {
            return Err(Error::invalid(
                "make_batch",
                format!("windows differ in length ({} vs {t})", w.frames.len()),
            ));
        }
        let video = &corpus.videos[w.video];
        for &f in &w.frames {
            let label = video.labels[f];
            if !label.valid {
                return Err(Error::Corpus(format!("{}: frame {f} is invalid", video.id)));
            }
            visual.extend(video.visual.row(f).iter().map(|&x| S::of(x as f64)));
            let mut a = match &video.audio {
                AudioData::Features(m) => m.row(f).to_vec(),
                AudioData::Waveform(s) => extract_audio_clip(s, SAMPLE_RATE, video.timestamp(f))?,
            };
            if a.len() != da {
                return Err(Error::Corpus(format!(
                    "{}: audio width {} differs from {da}",
                    video.id,
                    a.len()
                )));
            }
            if let Some(aug) = augment.as_mut() {
                augment_audio(&mut a, aug.sigma, aug.rng)?;
            }
            audio.extend(a.iter().map(|&x| S::of(x as f64)));
            labels.push(S::of(label.valence as f64));
            labels.push(S::of(label.arousal as f64));
        }
    }
    Ok(Batch {
        visual: Tensor::new(&[b, t, dv], visual)?,
        audio: Tensor::new(&[b, t, da], audio)?,
        labels: Tensor::new(&[b, t, 2], labels)?,
    })
}
