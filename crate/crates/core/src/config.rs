//! Flat `key = value` run configuration and the shipped presets.
//!
//! ```text
//! # E2E-AV-SA
//! arch = sa
//! n_layers = 3
//! d_model = 64
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::{Arch, AudioSource, Core, FrontEnd, Modality, ModelConfig, VisualSource};
use crate::losses::LossWeights;
use crate::nn::Activation;
use crate::sequence::{AttentionSpec, CrossModalSpec, Direction, LstmSpec};
use crate::train::TrainConfig;

/// Every accepted key, in rendering order.
pub const KEYS: &[&str] = &[
    "arch",
    "modality",
    "n_layers",
    "d_model",
    "activation",
    "dropout",
    "learning_rate",
    "weight_decay",
    "lambda_mse",
    "lambda_ce",
    "d_feedforward",
    "n_heads",
    "n_layers_v_to_a",
    "n_layers_a_to_v",
    "context_aggregation",
    "d_hidden",
    "front_end",
    "front_end_bias",
    "visual_source",
    "audio_source",
    "end_to_end",
    "batch_size",
    "scheduler_period",
    "lr_min",
    "max_epochs",
    "patience",
    "seed",
    "dilation",
    "window",
    "clip_norm",
    "audio_noise",
    "target_ccc",
    "per_video_eval",
];

const ATTENTION_KEYS: &[&str] = &["d_feedforward", "n_heads"];
const CMA_KEYS: &[&str] = &["n_layers_v_to_a", "n_layers_a_to_v"];
const RNN_KEYS: &[&str] = &["context_aggregation", "d_hidden"];

pub const PRESETS: &[(&str, &str)] = &[
    ("e2e-av-rnn", include_str!("../presets/e2e-av-rnn.conf")),
    ("e2e-av-sa", include_str!("../presets/e2e-av-sa.conf")),
    ("e2e-av-cma", include_str!("../presets/e2e-av-cma.conf")),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

struct Fields<'a> {
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn get<T: FromStr>(&self, key: &str, expected: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| bad(key, expected, raw)),
        }
    }

    /// Like `get` but for enums whose parse error already names the domain.
    fn choice<T: FromStr<Err = String>>(&self, key: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|e: String| bad(key, &e, raw)),
        }
    }

    fn ranged<T: FromStr + PartialOrd + Display + Copy>(
        &self,
        key: &str,
        lo: T,
        hi: Option<T>,
        default: T,
    ) -> Result<T> {
        let expected = match hi {
            Some(h) => format!("a number in [{lo}, {h}]"),
            None => format!("a number >= {lo}"),
        };
        let v: T = self.get(key, &expected, default)?;
        if v < lo || hi.is_some_and(|h| v > h) {
            return Err(bad(key, &expected, &v.to_string()));
        }
        Ok(v)
    }

    fn optional<T: FromStr + PartialOrd + Display + Copy>(
        &self,
        key: &str,
        lo: T,
        default: Option<T>,
    ) -> Result<Option<T>> {
        match self.map.get(key) {
            Some(raw) if raw.eq_ignore_ascii_case("none") => Ok(None),
            Some(_) => self.ranged(key, lo, None, lo).map(Some),
            None => Ok(default),
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        let expected = "an integer >= 1";
        let v: usize = self.get(key, expected, default)?;
        if v == 0 {
            return Err(bad(key, expected, "0"));
        }
        Ok(v)
    }
}

fn bad(key: &str, expected: &str, got: &str) -> Error {
    Error::ConfigValue {
        key: key.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got `{line}`",
                    n + 1
                ))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(bad(k, "a known key (see the preset files)", v));
            }
            if map.insert(k, v).is_some() {
                return Err(Error::Config(format!(
                    "line {}: key `{k}` given twice",
                    n + 1
                )));
            }
        }
        let f = Fields { map };

        let arch: Arch = f.choice("arch", Arch::Sa)?;
        let unused: Vec<&&str> = match arch {
            Arch::Rnn => ATTENTION_KEYS.iter().chain(CMA_KEYS).collect(),
            Arch::Sa => RNN_KEYS.iter().chain(CMA_KEYS).collect(),
            Arch::Cma => RNN_KEYS.iter().collect(),
        };
        if let Some(k) = unused.into_iter().find(|k| f.map.contains_key(**k)) {
            return Err(Error::Config(format!(
                "key `{k}` does not apply to {arch} models"
            )));
        }
        let modality = f.choice("modality", Modality::Audiovisual)?;
        let n_layers = f.count("n_layers", 1)?;
        let d_model = f.count("d_model", 64)?;
        let activation: Activation = f.choice("activation", Activation::Gelu)?;
        let dropout = f.get("dropout", "a number in [0, 1)", 0.1f64)?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(bad("dropout", "a number in [0, 1)", &dropout.to_string()));
        }
        let attention = |n_layers| -> Result<AttentionSpec> {
            Ok(AttentionSpec {
                d_model,
                n_heads: f.count("n_heads", 4)?,
                d_feedforward: f.count("d_feedforward", 256)?,
                n_layers,
                dropout,
                activation,
            })
        };
        let core = match arch {
            Arch::Rnn => Core::Rnn(LstmSpec {
                n_layers,
                d_hidden: f.count("d_hidden", 64)?,
                direction: f.choice("context_aggregation", Direction::Unidirectional)?,
                dropout,
            }),
            Arch::Sa => Core::Sa(attention(n_layers)?),
            Arch::Cma => Core::Cma(CrossModalSpec {
                n_layers_v_to_a: f.count("n_layers_v_to_a", 1)?,
                n_layers_a_to_v: f.count("n_layers_a_to_v", 1)?,
                attention: attention(n_layers)?,
            }),
        };
        let model = ModelConfig {
            modality,
            core,
            front_end: f.choice("front_end", FrontEnd::Dense)?,
            front_end_bias: f.get("front_end_bias", "true or false", true)?,
            d_model,
            dropout,
            activation,
            visual_source: f.choice("visual_source", VisualSource::Precomputed)?,
            audio_source: f.choice("audio_source", AudioSource::Features)?,
            end_to_end: f.get("end_to_end", "true or false", false)?,
        };
        model.validate()?;

        let d = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: f.get("learning_rate", "a positive number", d.learning_rate)?,
            weight_decay: f.ranged("weight_decay", 0.0, None, d.weight_decay)?,
            loss: LossWeights {
                lambda_mse: f.ranged("lambda_mse", 0.0, None, d.loss.lambda_mse)?,
                lambda_ce: f.ranged("lambda_ce", 0.0, None, d.loss.lambda_ce)?,
            },
            batch_size: f.count("batch_size", d.batch_size)?,
            scheduler_period: f.count("scheduler_period", d.scheduler_period as usize)? as u64,
            lr_min: f.ranged("lr_min", 0.0, None, d.lr_min)?,
            max_epochs: f.count("max_epochs", d.max_epochs)?,
            patience: match f.map.get("patience") {
                Some(raw) if raw.eq_ignore_ascii_case("none") => None,
                Some(_) => Some(f.count("patience", 1)?),
                None => d.patience,
            },
            seed: f.get("seed", "an unsigned integer", d.seed)?,
            dilation: f.count("dilation", d.dilation)?,
            window: f.count("window", d.window)?,
            clip_norm: f.optional("clip_norm", f64::MIN_POSITIVE, d.clip_norm)?,
            audio_noise: f.ranged("audio_noise", 0.0, None, d.audio_noise)?,
            target_ccc: f.optional("target_ccc", -1.0, d.target_ccc)?,
            per_video_eval: f.get("per_video_eval", "true or false", d.per_video_eval)?,
        };
        if !(train.learning_rate > 0.0 && train.learning_rate.is_finite()) {
            return Err(bad(
                "learning_rate",
                "a positive number",
                &train.learning_rate.to_string(),
            ));
        }
        train.validate()?;
        Ok(RunConfig { model, train })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            bad("preset", &format!("one of {}", names.join(", ")), name)
        })?;
        Self::parse(text)
    }

    /// Renders every key that applies to the architecture; parsing the
    /// result gives back an equal config.
    pub fn render(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut lines: Vec<(&str, String)> = vec![
            ("arch", m.arch().to_string()),
            ("modality", m.modality.to_string()),
        ];
        match &m.core {
            Core::Rnn(s) => lines.push(("n_layers", s.n_layers.to_string())),
            Core::Sa(a) => lines.push(("n_layers", a.n_layers.to_string())),
            Core::Cma(c) => lines.push(("n_layers", c.attention.n_layers.to_string())),
        }
        lines.extend([
            ("d_model", m.d_model.to_string()),
            ("activation", m.activation.to_string()),
            ("dropout", m.dropout.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("lambda_mse", t.loss.lambda_mse.to_string()),
            ("lambda_ce", t.loss.lambda_ce.to_string()),
        ]);
        match &m.core {
            Core::Rnn(s) => lines.extend([
                ("context_aggregation", s.direction.to_string()),
                ("d_hidden", s.d_hidden.to_string()),
            ]),
            Core::Sa(a) => lines.extend([
                ("d_feedforward", a.d_feedforward.to_string()),
                ("n_heads", a.n_heads.to_string()),
            ]),
            Core::Cma(c) => lines.extend([
                ("d_feedforward", c.attention.d_feedforward.to_string()),
                ("n_heads", c.attention.n_heads.to_string()),
                ("n_layers_v_to_a", c.n_layers_v_to_a.to_string()),
                ("n_layers_a_to_v", c.n_layers_a_to_v.to_string()),
            ]),
        }
        lines.extend([
            ("front_end", m.front_end.to_string()),
            ("front_end_bias", m.front_end_bias.to_string()),
            ("visual_source", m.visual_source.to_string()),
            ("audio_source", m.audio_source.to_string()),
            ("end_to_end", m.end_to_end.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("scheduler_period", t.scheduler_period.to_string()),
            ("lr_min", t.lr_min.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("patience", opt(t.patience.map(|p| p.to_string()))),
            ("seed", t.seed.to_string()),
            ("dilation", t.dilation.to_string()),
            ("window", t.window.to_string()),
            ("clip_norm", opt(t.clip_norm.map(|c| c.to_string()))),
            ("audio_noise", t.audio_noise.to_string()),
            ("target_ccc", opt(t.target_ccc.map(|c| c.to_string()))),
            ("per_video_eval", t.per_video_eval.to_string()),
        ]);
        let mut out = format!("# {}\n", m.name());
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
