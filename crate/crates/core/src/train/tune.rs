//! Hyperparameter search with asynchronous successive halving.

use std::sync::Mutex;

use rand::distr::{Distribution, Uniform};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trainer::{TrainConfig, Trainer};
use crate::config::RunConfig;
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::fusion::{
    build_model, Arch, AudioSource, Core, FrontEnd, Modality, ModelConfig, VisualSource,
};
use crate::losses::LossWeights;
use crate::nn::Activation;
use crate::sequence::{AttentionSpec, CrossModalSpec, Direction, LstmSpec};

pub const N_LAYERS: (usize, usize) = (1, 5);
pub const D_MODEL: [usize; 3] = [64, 128, 256];
pub const ACTIVATIONS: [Activation; 2] = [Activation::Gelu, Activation::Selu];
pub const DROPOUT: (f64, f64) = (0.1, 0.6);
pub const LEARNING_RATE: (f64, f64) = (1e-5, 1e-2);
pub const WEIGHT_DECAY: (f64, f64) = (1e-3, 1e-1);
pub const LAMBDA: (f64, f64) = (0.0, 1.0);
pub const D_FEEDFORWARD: [usize; 3] = [64, 128, 256];
pub const N_HEADS: [usize; 3] = [2, 4, 8];
pub const DIRECTIONS: [Direction; 2] = [Direction::Unidirectional, Direction::Bidirectional];
pub const D_HIDDEN: [usize; 3] = [64, 128, 256];

/// The searched domain for one architecture. Fields outside the domain
/// (batch size, schedule, window, …) are copied from `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub arch: Arch,
    pub modality: Modality,
    pub base: TrainConfig,
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

fn out_of_domain(key: &str, domain: &str, got: impl ToString) -> Error {
    Error::ConfigValue {
        key: key.into(),
        expected: domain.into(),
        got: got.to_string(),
    }
}

impl SearchSpace {
    pub fn new(arch: Arch, modality: Modality, base: TrainConfig) -> Self {
        SearchSpace {
            arch,
            modality,
            base,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RunConfig {
        let layers = Uniform::new_inclusive(N_LAYERS.0, N_LAYERS.1).expect("valid range");
        let n_layers = layers.sample(rng);
        let d_model = *D_MODEL.choose(rng).expect("non-empty");
        let activation = *ACTIVATIONS.choose(rng).expect("non-empty");
        let dropout = rng.random_range(DROPOUT.0..=DROPOUT.1);
        let learning_rate = log_uniform(rng, LEARNING_RATE);
        let weight_decay = log_uniform(rng, WEIGHT_DECAY);
        let lambda_mse = rng.random_range(LAMBDA.0..=LAMBDA.1);
        let lambda_ce = rng.random_range(LAMBDA.0..=LAMBDA.1);
        let mut attention = || AttentionSpec {
            d_model,
            n_heads: *N_HEADS.choose(rng).expect("non-empty"),
            d_feedforward: *D_FEEDFORWARD.choose(rng).expect("non-empty"),
            n_layers,
            dropout,
            activation,
        };
        let core = match self.arch {
            Arch::Rnn => Core::Rnn(LstmSpec {
                n_layers,
                direction: *DIRECTIONS.choose(rng).expect("non-empty"),
                d_hidden: *D_HIDDEN.choose(rng).expect("non-empty"),
                dropout,
            }),
            Arch::Sa => Core::Sa(attention()),
            Arch::Cma => {
                let attention = attention();
                Core::Cma(CrossModalSpec {
                    n_layers_v_to_a: layers.sample(rng),
                    n_layers_a_to_v: layers.sample(rng),
                    attention,
                })
            }
        };
        let seed = rng.random::<u64>();
        RunConfig {
            model: ModelConfig {
                modality: self.modality,
                core,
                front_end: FrontEnd::Dense,
                front_end_bias: true,
                d_model,
                dropout,
                activation,
                visual_source: VisualSource::Precomputed,
                audio_source: AudioSource::Features,
                end_to_end: false,
            },
            train: TrainConfig {
                learning_rate,
                weight_decay,
                loss: LossWeights {
                    lambda_mse,
                    lambda_ce,
                },
                seed,
                ..self.base.clone()
            },
        }
    }

    /// Checks a config against the searched domain.
    pub fn check(&self, rc: &RunConfig) -> Result<()> {
        let m = &rc.model;
        let t = &rc.train;
        if m.arch() != self.arch {
            return Err(out_of_domain("arch", &self.arch.to_string(), m.arch()));
        }
        let within = |k: &str, v: f64, (lo, hi): (f64, f64)| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(out_of_domain(k, &format!("[{lo}, {hi}]"), v))
            }
        };
        let member = |k: &str, v: usize, set: &[usize]| {
            if set.contains(&v) {
                Ok(())
            } else {
                Err(out_of_domain(k, &format!("one of {set:?}"), v))
            }
        };
        let layers =
            |k: &str, v: usize| within(k, v as f64, (N_LAYERS.0 as f64, N_LAYERS.1 as f64));
        member("d_model", m.d_model, &D_MODEL)?;
        if !ACTIVATIONS.contains(&m.activation) {
            return Err(out_of_domain("activation", "GELU or SELU", m.activation));
        }
        within("dropout", m.dropout, DROPOUT)?;
        within("learning_rate", t.learning_rate, LEARNING_RATE)?;
        within("weight_decay", t.weight_decay, WEIGHT_DECAY)?;
        within("lambda_mse", t.loss.lambda_mse, LAMBDA)?;
        within("lambda_ce", t.loss.lambda_ce, LAMBDA)?;
        let attention = |a: &AttentionSpec| -> Result<()> {
            layers("n_layers", a.n_layers)?;
            member("d_feedforward", a.d_feedforward, &D_FEEDFORWARD)?;
            member("n_heads", a.n_heads, &N_HEADS)
        };
        match &m.core {
            Core::Rnn(s) => {
                layers("n_layers", s.n_layers)?;
                member("d_hidden", s.d_hidden, &D_HIDDEN)?;
            }
            Core::Sa(a) => attention(a)?,
            Core::Cma(c) => {
                attention(&c.attention)?;
                layers("n_layers_v_to_a", c.n_layers_v_to_a)?;
                layers("n_layers_a_to_v", c.n_layers_a_to_v)?;
            }
        }
        m.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AshaConfig {
    pub n_trials: usize,
    pub max_budget: usize,
    pub grace: usize,
    pub reduction: usize,
    pub parallelism: usize,
    pub seed: u64,
}

impl AshaConfig {
    /// Budgets (in epochs) at which trials are compared: `grace·ηᵏ` up to
    /// and including the maximum budget.
    pub fn rungs(&self) -> Result<Vec<usize>> {
        if self.grace == 0 {
            return Err(out_of_domain("grace", "an integer >= 1", self.grace));
        }
        if self.reduction < 2 {
            return Err(out_of_domain(
                "reduction",
                "an integer >= 2",
                self.reduction,
            ));
        }
        if self.max_budget < self.grace {
            return Err(out_of_domain(
                "budget",
                &format!("an integer >= grace ({})", self.grace),
                self.max_budget,
            ));
        }
        if self.parallelism == 0 {
            return Err(out_of_domain("parallelism", "an integer >= 1", 0));
        }
        let mut rungs = vec![self.grace];
        while let Some(next) = rungs.last().and_then(|r| r.checked_mul(self.reduction)) {
            if next > self.max_budget {
                break;
            }
            rungs.push(next);
        }
        if *rungs.last().expect("non-empty") != self.max_budget {
            rungs.push(self.max_budget);
        }
        Ok(rungs)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Completed,
    HaltedByAsha,
    Failed,
}

impl std::fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrialStatus::Completed => "completed",
            TrialStatus::HaltedByAsha => "halted-by-asha",
            TrialStatus::Failed => "failed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub id: usize,
    pub config: RunConfig,
    /// Best validation average CCC at each rung the trial reached.
    pub rung_ccc: Vec<f64>,
    pub best_ccc: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub status: TrialStatus,
    pub error: Option<String>,
}

struct Slot<'c> {
    trainer: Option<Trainer<'c, f32>>,
    rung_ccc: Vec<f64>,
    busy: bool,
    error: Option<String>,
}

struct Board<'c> {
    slots: Vec<Slot<'c>>,
    started: usize,
    /// `(ccc, trial)` results recorded at each rung.
    results: Vec<Vec<(f64, usize)>>,
    promoted: Vec<Vec<usize>>,
}

struct Job {
    trial: usize,
    rung: usize,
}

impl Board<'_> {
    fn next_job(&mut self, eta: usize, n_trials: usize) -> Option<Job> {
        let n_rungs = self.results.len();
        for k in (0..n_rungs.saturating_sub(1)).rev() {
            let mut ranked = self.results[k].clone();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let top = ranked.len() / eta;
            if let Some(&(_, id)) = ranked[..top]
                .iter()
                .find(|(_, id)| !self.promoted[k].contains(id) && !self.slots[*id].busy)
            {
                self.promoted[k].push(id);
                self.slots[id].busy = true;
                return Some(Job {
                    trial: id,
                    rung: k + 1,
                });
            }
        }
        if self.started < n_trials {
            let id = self.started;
            self.started += 1;
            self.slots[id].busy = true;
            return Some(Job { trial: id, rung: 0 });
        }
        None
    }
}

/// Runs the search and returns every trial, best first.
pub fn tune(space: &SearchSpace, asha: &AshaConfig, corpus: &Corpus) -> Result<Vec<TrialResult>> {
    let rungs = asha.rungs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(asha.seed);
    let configs: Vec<RunConfig> = (0..asha.n_trials)
        .map(|_| {
            let mut rc = space.sample(&mut rng);
            rc.train.max_epochs = asha.max_budget;
            rc.train.patience = None;
            rc.train.target_ccc = None;
            rc
        })
        .collect();
    let board = Mutex::new(Board {
        slots: (0..asha.n_trials)
            .map(|_| Slot {
                trainer: None,
                rung_ccc: Vec::new(),
                busy: false,
                error: None,
            })
            .collect(),
        started: 0,
        results: vec![Vec::new(); rungs.len()],
        promoted: vec![Vec::new(); rungs.len()],
    });

    let worker = || loop {
        let job = board
            .lock()
            .expect("board lock")
            .next_job(asha.reduction, asha.n_trials);
        let Some(Job { trial, rung }) = job else {
            return;
        };
        let taken = board.lock().expect("board lock").slots[trial]
            .trainer
            .take();
        let outcome = (|| -> Result<(Trainer<'_, f32>, f64)> {
            let mut trainer = match taken {
                Some(t) => t,
                None => {
                    let rc = &configs[trial];
                    Trainer::new(
                        build_model(&rc.model, rc.train.seed)?,
                        corpus,
                        rc.train.clone(),
                    )?
                }
            };
            while trainer.epochs_done() < rungs[rung] {
                trainer.run_epoch()?;
            }
            let best = trainer
                .best()
                .map(|b| b.1.average)
                .unwrap_or(f64::NEG_INFINITY);
            Ok((trainer, best))
        })();
        let mut b = board.lock().expect("board lock");
        let slot = &mut b.slots[trial];
        slot.busy = false;
        match outcome {
            Ok((trainer, ccc)) => {
                slot.trainer = Some(trainer);
                slot.rung_ccc.push(ccc);
                b.results[rung].push((ccc, trial));
            }
            Err(e) => slot.error = Some(e.to_string()),
        }
    };
    if asha.parallelism == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..asha.parallelism {
                s.spawn(worker);
            }
        });
    }

    let board = board.into_inner().expect("board lock");
    let mut out: Vec<TrialResult> = board
        .slots
        .into_iter()
        .zip(configs)
        .enumerate()
        .map(|(id, (slot, config))| {
            let (best_epoch, best_ccc, epochs) = match &slot.trainer {
                Some(t) => {
                    let (e, ev) = t.best().expect("at least one epoch per rung");
                    (e, ev.average, t.epochs_done())
                }
                None => (0, f64::NAN, 0),
            };
            let status = if slot.error.is_some() {
                TrialStatus::Failed
            } else if slot.rung_ccc.len() == rungs.len() {
                TrialStatus::Completed
            } else {
                TrialStatus::HaltedByAsha
            };
            TrialResult {
                id,
                config,
                rung_ccc: slot.rung_ccc,
                best_ccc,
                best_epoch,
                epochs,
                status,
                error: slot.error,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        let key = |t: &TrialResult| {
            if t.best_ccc.is_nan() {
                f64::NEG_INFINITY
            } else {
                t.best_ccc
            }
        };
        key(b).total_cmp(&key(a)).then(a.id.cmp(&b.id))
    });
    Ok(out)
}

/// Tab-separated trials table: id, status, epochs, one column per rung,
/// best CCC, then the searched hyperparameters.
pub fn trials_table(trials: &[TrialResult], rungs: &[usize]) -> String {
    let fields = |rc: &RunConfig| -> Vec<(String, String)> {
        rc.render()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .filter(|(k, _)| SEARCHED_KEYS.contains(k))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    };
    let mut header = vec!["id".to_string(), "status".into(), "epochs".into()];
    header.extend(rungs.iter().map(|r| format!("rung_{r}")));
    header.push("best_ccc".into());
    if let Some(t) = trials.first() {
        header.extend(fields(&t.config).into_iter().map(|(k, _)| k));
    }
    let mut out = header.join("\t") + "\n";
    for t in trials {
        let mut row = vec![t.id.to_string(), t.status.to_string(), t.epochs.to_string()];
        row.extend(
            (0..rungs.len()).map(|k| t.rung_ccc.get(k).map_or("-".into(), |c| format!("{c:.4}"))),
        );
        row.push(if t.best_ccc.is_nan() {
            "-".into()
        } else {
            format!("{:.4}", t.best_ccc)
        });
        row.extend(fields(&t.config).into_iter().map(|(_, v)| v));
        out.push_str(&(row.join("\t") + "\n"));
    }
    out
}

/// Keys drawn by [`SearchSpace::sample`].
pub const SEARCHED_KEYS: &[&str] = &[
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
    "seed",
];
