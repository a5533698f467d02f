use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fusion::CLIP_SAMPLES;

pub const SAMPLE_RATE: u32 = 16_000;

/// Reads a 16 kHz mono 16-bit PCM file as samples in [-1, 1).
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE || spec.bits_per_sample != 16 {
        return Err(Error::format(
            path,
            format!(
                "expected 16 kHz mono 16-bit PCM, found {} Hz, {} channel(s), {} bits",
                spec.sample_rate, spec.channels, spec.bits_per_sample
            ),
        ));
    }
    reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| v as f32 / 32768.0)
                .map_err(|e| wav_error(path, e))
        })
        .collect()
}

pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Rounds to the 16-bit grid so that a write/read round trip is exact.
pub fn quantize_pcm(s: f32) -> f32 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0
}

/// Half-second clip centred on `timestamp` (seconds). Samples outside the
/// waveform are zero.
pub fn extract_audio_clip(waveform: &[f32], sample_rate: u32, timestamp: f64) -> Result<Vec<f32>> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(
            "extract_audio_clip",
            format!("sample rate must be {SAMPLE_RATE} Hz, got {sample_rate}"),
        ));
    }
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(Error::invalid(
            "extract_audio_clip",
            format!("bad timestamp {timestamp}"),
        ));
    }
    let centre = (timestamp * sample_rate as f64).round() as i64;
    let start = centre - (CLIP_SAMPLES / 2) as i64;
    Ok((0..CLIP_SAMPLES as i64)
        .map(|k| {
            let i = start + k;
            if i >= 0 && (i as usize) < waveform.len() {
                waveform[i as usize]
            } else {
                0.0
            }
        })
        .collect())
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma`.
pub fn augment_audio<R: Rng + ?Sized>(clip: &mut [f32], sigma: f32, rng: &mut R) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(
            "augment_audio",
            format!("sigma must be non-negative, got {sigma}"),
        ));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal =
        Normal::new(0.0f32, sigma).map_err(|e| Error::invalid("augment_audio", e.to_string()))?;
    for s in clip {
        *s += normal.sample(rng);
    }
    Ok(())
}
