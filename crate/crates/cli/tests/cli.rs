use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avfusion::config::RunConfig;
use avfusion::losses::Evaluation;
use avfusion::report::RunReport;

fn avfusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avfusion"))
        .args(args)
        .env_remove("AVFUSION_DATA")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn generate(dir: &Path, videos: usize, frames: usize) {
    let o = avfusion(&[
        "generate-data",
        "--out",
        s(dir),
        "--videos",
        &videos.to_string(),
        "--frames",
        &frames.to_string(),
        "--seed",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

const SMALL_RNN: &str = "arch = rnn\nd_model = 16\nd_hidden = 16\nbatch_size = 8\nmax_epochs = 2\nlearning_rate = 0.003\n";

fn train_small(root: &Path, data: &Path, name: &str) -> PathBuf {
    let conf = root.join("small.conf");
    fs::write(&conf, SMALL_RNN).unwrap();
    let out = root.join("runs").join(name);
    let o = avfusion(&[
        "train",
        "--config",
        s(&conf),
        "--data",
        s(data),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, 6, 48);
    generate(&b, 6, 48);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() > 6 * 3);
    assert_eq!(fa, fb);
}

#[test]
fn generate_data_defaults_split_forty_ten() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = avfusion(&["generate-data", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("50 videos (40 train, 10 validation)"),
        "{}",
        stdout(&o)
    );
    let corpus = avfusion::data::load_corpus(&out.join("manifest.tsv")).unwrap();
    assert!(corpus.videos.iter().all(|v| v.frames() == 480));
}

#[test]
fn zero_videos_writes_empty_corpus_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    let o = avfusion(&["generate-data", "--out", s(&out), "--videos", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    let corpus = avfusion::data::load_corpus(&out.join("manifest.tsv")).unwrap();
    assert!(corpus.videos.is_empty());
}

#[test]
fn generate_data_unwritable_output_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = avfusion(&[
        "generate-data",
        "--out",
        s(&blocker.join("sub")),
        "--videos",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_then_evaluate_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 8, 64);
    let run = train_small(tmp.path(), &data, "rnn");
    for f in [
        "config.txt",
        "history.jsonl",
        "checkpoint.avck",
        "report.json",
        "report.txt",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let echo = RunConfig::parse(&fs::read_to_string(run.join("config.txt")).unwrap()).unwrap();
    assert_eq!(echo.train.max_epochs, 2);
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let report: RunReport =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.run_id, "rnn");
    assert_eq!(report.method, "AV-RNN");
    assert!(
        report.parameters.sequence > 0 && report.parameters.total >= report.parameters.sequence
    );
    let txt = fs::read_to_string(run.join("report.txt")).unwrap();
    assert!(txt.contains("P_sequence") && txt.contains("P_total"));

    let ckpt = run.join("checkpoint.avck");
    let o = avfusion(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e: Evaluation = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(
        (e.average - report.evaluation.average).abs() < 1e-6,
        "{e:?} vs {:?}",
        report.evaluation
    );
    assert!((e.ccc_valence - report.evaluation.ccc_valence).abs() < 1e-6);
    assert!((e.ccc_arousal - report.evaluation.ccc_arousal).abs() < 1e-6);

    let o = avfusion(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    assert!(o.status.success());
    let table = stdout(&o);
    let header = table.lines().next().unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(&cols[..4], ["Method", "Valence", "Arousal", "Avg."]);
    assert!(table.contains("AV-RNN"));

    let o = avfusion(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--split",
        "test",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unsupported split"), "{}", stderr(&o));
}

#[test]
fn data_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 6, 96);
    let conf = tmp.path().join("small.conf");
    fs::write(&conf, SMALL_RNN.replace("max_epochs = 2", "max_epochs = 1")).unwrap();
    let out = tmp.path().join("env-run");
    let o = Command::new(env!("CARGO_BIN_EXE_avfusion"))
        .args(["train", "--config", s(&conf), "--out", s(&out)])
        .env("AVFUSION_DATA", &data)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("report.json").is_file());
}

#[test]
fn evaluate_rejects_mismatched_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 6, 96);
    let run = train_small(tmp.path(), &data, "r");
    let ckpt = run.join("checkpoint.avck");
    let bytes = fs::read(&ckpt).unwrap();
    let text = String::from_utf8_lossy(&bytes);
    assert!(text.contains("d_hidden = 16"));
    // Same length so the layout stays intact; only the declared width changes.
    let patched = text.replace("d_hidden = 16", "d_hidden = 32");
    let mut out = bytes.clone();
    let at = text.find("d_hidden = 16").unwrap();
    out[at..at + 13].copy_from_slice(&patched.as_bytes()[at..at + 13]);
    fs::write(&ckpt, out).unwrap();
    let o = avfusion(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_label_file_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 6, 96);
    let victim = data.join("labels").join("vid002.avfs");
    fs::remove_file(&victim).unwrap();
    let o = avfusion(&[
        "train",
        "--preset",
        "e2e-av-rnn",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("vid002.avfs"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 4, 32);
    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "arch = rnn\nn_heads = 4\n").unwrap();
    let out = tmp.path().join("o");
    let o = avfusion(&[
        "train",
        "--config",
        s(&conf),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_heads"));

    let o = avfusion(&[
        "train",
        "--preset",
        "e2e-av-gru",
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("e2e-av-sa"));
}

#[test]
fn training_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 6, 96);
    let conf = tmp.path().join("hot.conf");
    let text =
        SMALL_RNN.replace("learning_rate = 0.003", "learning_rate = 1e300") + "clip_norm = none\n";
    fs::write(&conf, text).unwrap();
    let o = avfusion(&[
        "train",
        "--config",
        s(&conf),
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn tune(data: &Path, out: &Path, parallelism: usize) -> Output {
    avfusion(&[
        "tune",
        "--arch",
        "rnn",
        "--trials",
        "4",
        "--grace",
        "1",
        "--reduction",
        "4",
        "--budget",
        "16",
        "--parallelism",
        &parallelism.to_string(),
        "--seed",
        "9",
        "--data",
        s(data),
        "--out",
        s(out),
    ])
}

/// Trial rows reduced to their configuration columns.
fn sampled_configs(table: &str) -> Vec<String> {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let first_key = header.iter().position(|h| *h == "best_ccc").unwrap() + 1;
    let mut rows: Vec<String> = lines
        .map(|l| {
            let cells: Vec<&str> = l.split('\t').collect();
            format!("{}\t{}", cells[0], cells[first_key..].join("\t"))
        })
        .collect();
    rows.sort();
    rows
}

#[test]
fn tune_writes_rungs_and_reusable_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 6, 96);
    let out1 = tmp.path().join("t1");
    let o = tune(&data, &out1, 1);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out1.join("trials.tsv")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.contains("rung_1\trung_4\trung_16"), "{header}");
    assert_eq!(table.lines().count(), 5);
    assert!(table.contains("halted-by-asha"));

    let best = RunConfig::load(&out1.join("best.conf")).unwrap();
    assert_eq!(best.model.arch(), avfusion::fusion::Arch::Rnn);
    assert!(stdout(&o).contains("arch = rnn"));

    let out2 = tmp.path().join("t2");
    let o = tune(&data, &out2, 2);
    assert!(o.status.success(), "{}", stderr(&o));
    let table2 = fs::read_to_string(out2.join("trials.tsv")).unwrap();
    assert_eq!(sampled_configs(&table), sampled_configs(&table2));
}

#[test]
fn tune_rejects_bad_rungs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = avfusion(&[
        "tune",
        "--arch",
        "sa",
        "--reduction",
        "1",
        "--data",
        s(tmp.path()),
        "--out",
        s(&tmp.path().join("t")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("reduction"));
}

#[test]
fn report_groups_skips_and_dedups() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 6, 96);
    let run = train_small(tmp.path(), &data, "rnn");

    let twin = tmp.path().join("copy").join("rnn");
    fs::create_dir_all(&twin).unwrap();
    let mut r: RunReport =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    r.method = "AV-RNN-second".into();
    fs::write(twin.join("report.json"), serde_json::to_string(&r).unwrap()).unwrap();

    let broken = tmp.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    fs::write(broken.join("report.json"), "{ not json").unwrap();

    let o = avfusion(&["report", "--runs", s(&run), s(&broken), s(&twin)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let err = stderr(&o);
    assert!(err.contains("broken") && err.contains("duplicate"), "{err}");
    assert!(out.contains("Recurrent Models (RNNs)"));
    assert!(out.contains("AV-RNN-second"));
    assert_eq!(out.matches("AV-RNN").count(), 1, "{out}");
}

#[test]
fn report_of_nothing_is_empty_table() {
    let o = avfusion(&["report"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.starts_with("Method"));
}
