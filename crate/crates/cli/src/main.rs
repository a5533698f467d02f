use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use avfusion::config::RunConfig;
use avfusion::data::{
    load_corpus, synth_generate, write_corpus, Corpus, Split, SynthAudio, SynthConfig,
};
use avfusion::fusion::{build_model, load_checkpoint, Arch, Modality};
use avfusion::report::{render_table, RunReport};
use avfusion::train::{
    evaluate_model, trials_table, tune, AshaConfig, SearchSpace, TrainConfig, Trainer, TrialStatus,
};
use avfusion::Error;

const DATA_ENV: &str = "AVFUSION_DATA";

#[derive(Parser)]
#[command(
    name = "avfusion",
    version,
    about = "Audiovisual valence/arousal fusion models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AudioKind {
    Features,
    Raw,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (manifest, features, labels).
    GenerateData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        videos: usize,
        #[arg(long, default_value_t = 480)]
        frames: usize,
        /// Moving-average width of the latent trajectories, in frames.
        #[arg(long, default_value_t = 15)]
        smoothness: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, value_enum, default_value_t = AudioKind::Features)]
        audio: AudioKind,
    },
    /// Train one model and write config, history, checkpoint and report.
    Train {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Corpus manifest, or a directory containing manifest.tsv.
        #[arg(long, env = DATA_ENV)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a saved checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = DATA_ENV)]
        data: PathBuf,
        #[arg(long, default_value = "validation")]
        split: Split,
        /// Print the scores as JSON instead of a table row.
        #[arg(long)]
        json: bool,
    },
    /// Hyperparameter search with successive halving.
    Tune {
        #[arg(long)]
        arch: Arch,
        #[arg(long, default_value = "av")]
        modality: Modality,
        #[arg(long, default_value_t = 16)]
        trials: usize,
        #[arg(long, default_value_t = 16)]
        budget: usize,
        #[arg(long, default_value_t = 1)]
        grace: usize,
        #[arg(long, default_value_t = 4)]
        reduction: usize,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// How many of the best configs to print.
        #[arg(long, default_value_t = 3)]
        top: usize,
        #[arg(long, env = DATA_ENV)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run directories into one comparison table.
    Report {
        #[arg(long, num_args = 0..)]
        runs: Vec<PathBuf>,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Training(_)
            | Error::NonFinite { .. }
            | Error::NotScalar(_)
            | Error::Detached => 2,
            Error::ShapeMismatch { .. } | Error::InvalidArgument { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn user(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        msg: msg.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData {
            seed,
            out,
            videos,
            frames,
            smoothness,
            noise,
            audio,
        } => generate_data(seed, &out, videos, frames, smoothness, noise, audio),
        Command::Train {
            config,
            preset,
            data,
            out,
            seed,
        } => train(config.as_deref(), preset.as_deref(), &data, &out, seed),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            json,
        } => evaluate(&checkpoint, &data, split, json),
        Command::Tune {
            arch,
            modality,
            trials,
            budget,
            grace,
            reduction,
            parallelism,
            seed,
            top,
            data,
            out,
        } => {
            let asha = AshaConfig {
                n_trials: trials,
                max_budget: budget,
                grace,
                reduction,
                parallelism,
                seed,
            };
            run_tune(arch, modality, &asha, top, &data, &out)
        }
        Command::Report { runs } => report(&runs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| user(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn open_corpus(data: &Path) -> CliResult<Corpus> {
    let manifest = if data.is_dir() {
        data.join("manifest.tsv")
    } else {
        data.to_path_buf()
    };
    Ok(load_corpus(&manifest)?)
}

fn generate_data(
    seed: u64,
    out: &Path,
    videos: usize,
    frames: usize,
    smoothness: usize,
    noise: f64,
    audio: AudioKind,
) -> CliResult {
    create_dir(out)?;
    if videos == 0 {
        eprintln!("warning: --videos 0 writes an empty corpus");
        write_corpus(out, &Corpus::default())?;
        return Ok(());
    }
    let cfg = SynthConfig {
        seed,
        n_videos: videos,
        frames,
        smoothness,
        noise,
        audio: match audio {
            AudioKind::Features => SynthAudio::Features,
            AudioKind::Raw => SynthAudio::Waveform,
        },
        ..SynthConfig::default()
    };
    let synth = synth_generate(&cfg)?;
    write_corpus(out, &synth.corpus)?;
    let count = |s| synth.corpus.split(s).count();
    println!(
        "wrote {} videos ({} train, {} validation) to {}",
        videos,
        count(Split::Train),
        count(Split::Validation),
        out.display()
    );
    Ok(())
}

fn train(
    config: Option<&Path>,
    preset: Option<&str>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
) -> CliResult {
    let mut rc = match (config, preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => return Err(user("one of --config or --preset is required")),
    };
    if let Some(s) = seed {
        rc.train.seed = s;
    }
    let corpus = open_corpus(data)?;
    create_dir(out)?;
    let config_text = rc.render();
    write_file(&out.join("config.txt"), &config_text)?;

    let model = build_model::<f32>(&rc.model, rc.train.seed)?;
    let parameters = model.count_parameters();
    let mut trainer = Trainer::new(model, &corpus, rc.train.clone())?;
    while trainer.stopped().is_none() {
        let rec = trainer.run_epoch()?;
        eprintln!(
            "epoch {:>3}  loss {:.4}  val ccc {:.4} (v {:.4}, a {:.4})",
            rec.epoch,
            rec.loss,
            rec.validation.average,
            rec.validation.ccc_valence,
            rec.validation.ccc_arousal
        );
    }
    let history = trainer.history()?;
    history.write_jsonl(&out.join("history.jsonl"))?;
    trainer.save_best(&out.join("checkpoint.avck"), &config_text)?;

    let run_id = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let report = RunReport {
        run_id,
        method: rc.model.name(),
        arch: rc.model.arch().to_string(),
        evaluation: history.best,
        parameters,
        best_epoch: history.best_epoch,
        epochs: history.epochs.len(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| user(e.to_string()))?;
    write_file(&out.join("report.json"), &json)?;
    let table = render_table(std::slice::from_ref(&report));
    write_file(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn evaluate(checkpoint: &Path, data: &Path, split: Split, json: bool) -> CliResult {
    let ckpt = load_checkpoint(checkpoint)?;
    let rc = RunConfig::parse(&ckpt.config_text)?;
    let mut model = build_model::<f32>(&rc.model, 0)?;
    ckpt.restore(&mut model.store)?;
    let corpus = open_corpus(data)?;
    if !corpus.has_split(split) {
        return Err(user(format!(
            "unsupported split: the corpus has no {split} videos"
        )));
    }
    let t: &TrainConfig = &rc.train;
    let evaluation = evaluate_model(
        &model,
        &corpus,
        split,
        t.window,
        t.batch_size,
        t.per_video_eval,
    )?;
    if json {
        println!(
            "{}",
            serde_json::to_string(&evaluation).map_err(|e| user(e.to_string()))?
        );
        return Ok(());
    }
    let report = RunReport {
        run_id: checkpoint.display().to_string(),
        method: rc.model.name(),
        arch: rc.model.arch().to_string(),
        evaluation,
        parameters: model.count_parameters(),
        best_epoch: 0,
        epochs: 0,
    };
    print!("{}", render_table(&[report]));
    Ok(())
}

fn run_tune(
    arch: Arch,
    modality: Modality,
    asha: &AshaConfig,
    top: usize,
    data: &Path,
    out: &Path,
) -> CliResult {
    let rungs = asha.rungs()?;
    let corpus = open_corpus(data)?;
    create_dir(out)?;
    let space = SearchSpace::new(arch, modality, TrainConfig::default());
    let trials = tune(&space, asha, &corpus)?;
    write_file(&out.join("trials.tsv"), &trials_table(&trials, &rungs))?;

    let halted = trials
        .iter()
        .filter(|t| t.status == TrialStatus::HaltedByAsha)
        .count();
    let failed = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Failed)
        .count();
    eprintln!("{} trials, {halted} halted, {failed} failed", trials.len());
    let ranked: Vec<_> = trials
        .iter()
        .filter(|t| t.status != TrialStatus::Failed)
        .collect();
    let Some(best) = ranked.first() else {
        return Err(Failure {
            code: 2,
            msg: "every trial failed".into(),
        });
    };
    write_file(&out.join("best.conf"), &best.config.render())?;
    for t in ranked.iter().take(top) {
        println!(
            "# trial {}  best ccc {:.4} at epoch {}",
            t.id, t.best_ccc, t.best_epoch
        );
        println!("{}", t.config.render());
    }
    Ok(())
}

fn read_report(dir: &Path) -> Result<RunReport, String> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let report: RunReport =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if report.arch().is_none() {
        return Err(format!(
            "{}: unknown architecture `{}`",
            path.display(),
            report.arch
        ));
    }
    Ok(report)
}

fn report(dirs: &[PathBuf]) -> CliResult {
    let mut runs: Vec<RunReport> = Vec::new();
    for dir in dirs {
        match read_report(dir) {
            Ok(r) => {
                if let Some(i) = runs.iter().position(|o| o.run_id == r.run_id) {
                    eprintln!(
                        "warning: duplicate run id `{}`, keeping {}",
                        r.run_id,
                        dir.display()
                    );
                    runs.remove(i);
                }
                runs.push(r);
            }
            Err(msg) => eprintln!("warning: skipping {msg}"),
        }
    }
    print!("{}", render_table(&runs));
    Ok(())
}
