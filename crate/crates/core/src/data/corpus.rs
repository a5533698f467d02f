use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::audio::{read_wav, SAMPLE_RATE};
use super::format::{read_features, FrameMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err("one of train, validation, test".into()),
        }
    }
}

/// One manifest line: `id  fps  visual  audio  labels  split`, tab separated.
/// Paths are relative to the manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub fps: f64,
    pub visual: PathBuf,
    pub audio: PathBuf,
    pub labels: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::format(path, format!("line {}: {msg}", n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(format!(
                    "expected 6 tab-separated fields, found {}",
                    f.len()
                )));
            }
            let fps: f64 = f[1]
                .parse()
                .ok()
                .filter(|v: &f64| *v > 0.0 && v.is_finite())
                .ok_or_else(|| bad(format!("fps must be a positive number, got {:?}", f[1])))?;
            let split = f[5]
                .parse()
                .map_err(|e: String| bad(format!("split: {e}")))?;
            if entries.iter().any(|e| e.id == f[0]) {
                return Err(bad(format!("duplicate id {}", f[0])));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                fps,
                visual: f[2].into(),
                audio: f[3].into(),
                labels: f[4].into(),
                split,
            });
        }
        Ok(CorpusManifest { entries })
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# id\tfps\tvisual\taudio\tlabels\tsplit\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.fps,
                e.visual.display(),
                e.audio.display(),
                e.labels.display(),
                e.split
            ));
        }
        out
    }
}

/// Per-frame label. Invalid frames carry no usable values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Label {
    pub valence: f32,
    pub arousal: f32,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AudioData {
    /// One embedding row per frame.
    Features(FrameMatrix),
    /// 16 kHz mono waveform of the whole video.
    Waveform(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub fps: f64,
    pub split: Split,
    pub visual: FrameMatrix,
    pub audio: AudioData,
    pub labels: Vec<Label>,
}

impl Video {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    /// Indices of frames marked valid.
    pub fn valid_frames(&self) -> Vec<usize> {
        (0..self.frames())
            .filter(|&i| self.labels[i].valid)
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub videos: Vec<Video>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &Video)> {
        self.videos
            .iter()
            .enumerate()
            .filter(move |(_, v)| v.split == split)
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.split(split).next().is_some()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_labels(path: &Path) -> Result<Vec<Label>> {
    let m = read_features(path)?;
    if m.width != 3 {
        return Err(Error::format(
            path,
            format!("label files have width 3, found {}", m.width),
        ));
    }
    (0..m.frames)
        .map(|i| {
            let r = m.row(i);
            let valid = match r[2] {
                0.0 => false,
                1.0 => true,
                v => {
                    return Err(Error::format(
                        path,
                        format!("frame {i}: valid flag must be 0 or 1, got {v}"),
                    ))
                }
            };
            if valid && !(r[0].abs() <= 1.0 && r[1].abs() <= 1.0) {
                return Err(Error::format(
                    path,
                    format!("frame {i}: label ({}, {}) outside [-1, 1]", r[0], r[1]),
                ));
            }
            Ok(Label {
                valence: r[0],
                arousal: r[1],
                valid,
            })
        })
        .collect()
}

fn load_video(base: &Path, e: &ManifestEntry) -> Result<Video> {
    let visual_path = resolve(base, &e.visual);
    let audio_path = resolve(base, &e.audio);
    let label_path = resolve(base, &e.labels);
    let labels = read_labels(&label_path)?;
    let visual = read_features(&visual_path)?;
    let n = labels.len();
    if visual.frames != n {
        return Err(Error::format(
            &visual_path,
            format!("{} frames but the label file has {n}", visual.frames),
        ));
    }
    let is_wav = audio_path
        .extension()
        .is_some_and(|x| x.eq_ignore_ascii_case("wav"));
    let audio = if is_wav {
        let samples = read_wav(&audio_path)?;
        let needed = ((n as f64 / e.fps) * SAMPLE_RATE as f64).floor() as usize;
        let one_frame = (SAMPLE_RATE as f64 / e.fps).ceil() as usize;
        if samples.len() + one_frame < needed {
            return Err(Error::format(
                &audio_path,
                format!(
                    "{} samples do not cover {n} frames at {} fps",
                    samples.len(),
                    e.fps
                ),
            ));
        }
        AudioData::Waveform(samples)
    } else {
        let m = read_features(&audio_path)?;
        if m.frames != n {
            return Err(Error::format(
                &audio_path,
                format!("{} frames but the label file has {n}", m.frames),
            ));
        }
        AudioData::Features(m)
    };
    Ok(Video {
        id: e.id.clone(),
        fps: e.fps,
        split: e.split,
        visual,
        audio,
        labels,
    })
}

/// Loads every video listed in the manifest.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = CorpusManifest::parse(&text, manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let videos = manifest
        .entries
        .iter()
        .map(|e| load_video(base, e))
        .collect::<Result<Vec<_>>>()?;
    let widths = |f: fn(&Video) -> Option<usize>| {
        let mut w: Vec<usize> = videos.iter().filter_map(f).collect();
        w.dedup();
        w.len() <= 1
    };
    if !widths(|v| Some(v.visual.width)) {
        return Err(Error::Corpus(
            "visual feature widths differ between videos".into(),
        ));
    }
    if !widths(|v| match &v.audio {
        AudioData::Features(m) => Some(m.width),
        AudioData::Waveform(_) => Some(0),
    }) {
        return Err(Error::Corpus(
            "audio inputs differ in kind or width between videos".into(),
        ));
    }
    Ok(Corpus { videos })
}
