use std::collections::HashSet;
use std::fs;
use std::path::Path;

use avfusion::data::{
    augment_audio, corpus_windows, extract_audio_clip, load_corpus, make_batch, read_features,
    synth_generate, temporal_context, window_sequences, write_corpus, write_features, write_wav,
    AudioData, Augment, Batch, FrameMatrix, Split, SynthAudio, SynthConfig, Window, SAMPLE_RATE,
};
use avfusion::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> SynthConfig {
    SynthConfig {
        n_videos: 5,
        frames: 64,
        d_visual: 12,
        d_audio: 6,
        ..SynthConfig::default()
    }
}

/// Population CCC written out from the definition.
fn ccc_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    2.0 * cov / (vx + vy + (mx - my).powi(2))
}

/// Least squares with intercept via the normal equations.
fn fit(xs: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = xs[0].len() + 1;
    let mut a = vec![vec![0.0; k + 1]; k];
    for (x, &t) in xs.iter().zip(y) {
        let row: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * t;
        }
    }
    for c in 0..k {
        let p = (c..k)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        for r in 0..k {
            if r != c {
                let f = a[r][c] / a[c][c];
                let pivot = a[c].clone();
                for (x, y) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                    *x -= f * y;
                }
            }
        }
    }
    (0..k).map(|i| a[i][k] / a[i][i]).collect()
}

fn predict(w: &[f64], x: &[f64]) -> f64 {
    w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

#[test]
fn latent_oracle_separates_fusion_from_single_modality() {
    let synth = synth_generate(&SynthConfig::default()).unwrap();
    let gather = |split: Split, pick: &dyn Fn(f64, f64) -> Vec<f64>| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (vi, v) in synth.corpus.split(split) {
            let [z1, z2] = &synth.latents[vi];
            for f in v.valid_frames() {
                xs.push(pick(z1[f], z2[f]));
                ys.push([v.labels[f].valence as f64, v.labels[f].arousal as f64]);
            }
        }
        (xs, ys)
    };
    let score = |pick: &dyn Fn(f64, f64) -> Vec<f64>| {
        let (xs, ys) = gather(Split::Train, pick);
        let (vx, vy) = gather(Split::Validation, pick);
        let mut total = 0.0;
        for d in 0..2 {
            let t: Vec<f64> = ys.iter().map(|y| y[d]).collect();
            let w = fit(&xs, &t);
            let pred: Vec<f64> = vx.iter().map(|x| predict(&w, x)).collect();
            let truth: Vec<f64> = vy.iter().map(|y| y[d]).collect();
            total += ccc_oracle(&pred, &truth);
        }
        total / 2.0
    };
    let both = score(&|a, b| vec![a, b]);
    let visual = score(&|a, _| vec![a]);
    let audio = score(&|_, b| vec![b]);
    assert!(both > 0.99, "both latents {both}");
    assert!(visual <= 0.75, "z1 only {visual}");
    assert!(audio <= 0.75, "z2 only {audio}");
}

#[test]
fn synth_defaults_split_forty_ten() {
    let synth = synth_generate(&SynthConfig::default()).unwrap();
    assert_eq!(synth.corpus.split(Split::Train).count(), 40);
    assert_eq!(synth.corpus.split(Split::Validation).count(), 10);
    assert!(!synth.corpus.has_split(Split::Test));
    let v = &synth.corpus.videos[0];
    assert_eq!((v.visual.frames, v.visual.width), (480, 512));
    assert_eq!(v.id, "vid000");
    match &v.audio {
        AudioData::Features(m) => assert_eq!(m.width, 128),
        AudioData::Waveform(_) => panic!("features expected"),
    }
}

#[test]
fn synth_labels_bounded_and_deterministic() {
    let a = synth_generate(&small()).unwrap();
    let b = synth_generate(&small()).unwrap();
    assert_eq!(a, b);
    let c = synth_generate(&SynthConfig { seed: 1, ..small() }).unwrap();
    assert_ne!(a.corpus, c.corpus);
    for v in &a.corpus.videos {
        for l in v.labels.iter().filter(|l| l.valid) {
            assert!(l.valence.abs() <= 1.0 && l.arousal.abs() <= 1.0);
        }
    }
}

#[test]
fn synth_rejects_bad_config() {
    assert!(synth_generate(&SynthConfig {
        frames: 0,
        ..small()
    })
    .is_err());
    assert!(synth_generate(&SynthConfig {
        invalid_rate: 1.0,
        ..small()
    })
    .is_err());
    assert!(synth_generate(&SynthConfig {
        validation_fraction: 0.7,
        test_fraction: 0.5,
        ..small()
    })
    .is_err());
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "visual", "audio", "labels"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            out.push((
                p.strip_prefix(dir).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn corpus_round_trip_is_bitwise() {
    for audio in [SynthAudio::Features, SynthAudio::Waveform] {
        let synth = synth_generate(&SynthConfig { audio, ..small() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &synth.corpus).unwrap();
        let loaded = load_corpus(&dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(loaded, synth.corpus, "{audio:?}");
    }
}

#[test]
fn corpus_files_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_corpus(a.path(), &synth_generate(&small()).unwrap().corpus).unwrap();
    write_corpus(b.path(), &synth_generate(&small()).unwrap().corpus).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn empty_manifest_gives_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.tsv");
    fs::write(&p, "# nothing\n\n").unwrap();
    let c = load_corpus(&p).unwrap();
    assert!(c.videos.is_empty());
    assert!(corpus_windows(&c, Split::Train, 16, 4).is_empty());
}

fn one_video(dir: &Path, frames: usize) {
    let m = |w: usize| FrameMatrix::new(frames, w, vec![0.25; frames * w]).unwrap();
    fs::create_dir_all(dir).unwrap();
    write_features(&dir.join("v.avfs"), &m(4)).unwrap();
    write_features(&dir.join("a.avfs"), &m(2)).unwrap();
    let labels: Vec<f32> = (0..frames).flat_map(|_| [0.5, -0.5, 1.0]).collect();
    write_features(
        &dir.join("l.avfs"),
        &FrameMatrix::new(frames, 3, labels).unwrap(),
    )
    .unwrap();
    fs::write(
        dir.join("manifest.tsv"),
        "x\t30\tv.avfs\ta.avfs\tl.avfs\ttrain\n",
    )
    .unwrap();
}

#[test]
fn single_video_loads_all_frames() {
    let dir = tempfile::tempdir().unwrap();
    one_video(dir.path(), 64);
    let c = load_corpus(&dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(c.videos.len(), 1);
    assert_eq!(c.videos[0].frames(), 64);
    assert_eq!(c.videos[0].fps, 30.0);
}

#[test]
fn corrupted_magic_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    one_video(dir.path(), 8);
    let p = dir.path().join("v.avfs");
    let mut bytes = fs::read(&p).unwrap();
    bytes[0] = b'X';
    fs::write(&p, bytes).unwrap();
    let err = load_corpus(&dir.path().join("manifest.tsv")).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    assert!(err.to_string().contains("v.avfs"), "{err}");
    assert!(err.to_string().contains("magic"), "{err}");
}

#[test]
fn bad_version_and_truncation_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.avfs");
    write_features(&p, &FrameMatrix::new(2, 2, vec![1.0; 4]).unwrap()).unwrap();
    let good = fs::read(&p).unwrap();
    let mut bad = good.clone();
    bad[4] = 9;
    fs::write(&p, &bad).unwrap();
    assert!(read_features(&p)
        .unwrap_err()
        .to_string()
        .contains("version"));
    fs::write(&p, &good[..good.len() - 1]).unwrap();
    assert!(read_features(&p).is_err());
}

#[test]
fn missing_file_named_in_error() {
    let dir = tempfile::tempdir().unwrap();
    one_video(dir.path(), 8);
    fs::remove_file(dir.path().join("a.avfs")).unwrap();
    let err = load_corpus(&dir.path().join("manifest.tsv")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("a.avfs"), "{err}");
}

#[test]
fn frame_count_mismatch_rejected() {
    let dir = tempfile::tempdir().unwrap();
    one_video(dir.path(), 8);
    write_features(
        &dir.path().join("a.avfs"),
        &FrameMatrix::new(7, 2, vec![0.0; 14]).unwrap(),
    )
    .unwrap();
    let err = load_corpus(&dir.path().join("manifest.tsv")).unwrap_err();
    assert!(err.to_string().contains("a.avfs"), "{err}");
}

#[test]
fn labels_out_of_range_or_bad_flag_rejected() {
    let dir = tempfile::tempdir().unwrap();
    one_video(dir.path(), 2);
    let l = dir.path().join("l.avfs");
    write_features(
        &l,
        &FrameMatrix::new(2, 3, vec![0.0, 0.0, 1.0, 1.5, 0.0, 1.0]).unwrap(),
    )
    .unwrap();
    let err = load_corpus(&dir.path().join("manifest.tsv")).unwrap_err();
    assert!(err.to_string().contains("outside"), "{err}");
    // Invalid frames may hold anything.
    write_features(
        &l,
        &FrameMatrix::new(2, 3, vec![0.0, 0.0, 1.0, 7.0, 0.0, 0.0]).unwrap(),
    )
    .unwrap();
    let c = load_corpus(&dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(c.videos[0].valid_frames(), vec![0]);
    write_features(
        &l,
        &FrameMatrix::new(2, 3, vec![0.0, 0.0, 0.5, 0.0, 0.0, 1.0]).unwrap(),
    )
    .unwrap();
    assert!(load_corpus(&dir.path().join("manifest.tsv")).is_err());
}

#[test]
fn manifest_errors_report_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.tsv");
    fs::write(&p, "# header\nx\t30\tv\ta\tl\n").unwrap();
    let err = load_corpus(&p).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
    fs::write(&p, "x\t30\tv\ta\tl\tholdout\n").unwrap();
    assert!(load_corpus(&p).unwrap_err().to_string().contains("split"));
    fs::write(&p, "x\t30\tv\ta\tl\ttrain\nx\t30\tv\ta\tl\ttrain\n").unwrap();
    assert!(load_corpus(&p)
        .unwrap_err()
        .to_string()
        .contains("duplicate"));
}

#[test]
fn wav_with_wrong_rate_rejected() {
    let dir = tempfile::tempdir().unwrap();
    one_video(dir.path(), 8);
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 44_100,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(dir.path().join("a.wav"), spec).unwrap();
    for _ in 0..44_100 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    fs::write(
        dir.path().join("manifest.tsv"),
        "x\t30\tv.avfs\ta.wav\tl.avfs\ttrain\n",
    )
    .unwrap();
    let err = load_corpus(&dir.path().join("manifest.tsv"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("a.wav") && err.contains("44100"), "{err}");
}

#[test]
fn wav_round_trip_on_pcm_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.wav");
    let s: Vec<f32> = (-5..5)
        .map(|k| k as f32 / 32768.0)
        .chain([-1.0, 0.5])
        .collect();
    write_wav(&p, &s).unwrap();
    assert_eq!(avfusion::data::read_wav(&p).unwrap(), s);
}

#[test]
fn interleaved_windows_one_per_offset() {
    let valid: Vec<usize> = (0..64).collect();
    let w = window_sequences(&valid, 16, 4, Split::Train);
    assert_eq!(w.len(), 4);
    let expected: Vec<usize> = (0..16).map(|k| 1 + 4 * k).collect();
    assert_eq!(w[1], expected);
    assert_eq!(*w[1].last().unwrap(), 61);
    let mut all: Vec<usize> = w.concat();
    all.sort();
    assert_eq!(all, valid);
}

#[test]
fn validation_windows_ignore_dilation() {
    let valid: Vec<usize> = (0..64).collect();
    for split in [Split::Validation, Split::Test] {
        for n in [1, 2, 4, 7] {
            let w = window_sequences(&valid, 16, n, split);
            assert_eq!(w.len(), 4);
            for (i, win) in w.iter().enumerate() {
                assert_eq!(*win, (16 * i..16 * (i + 1)).collect::<Vec<_>>());
            }
        }
    }
}

#[test]
fn temporal_context_values() {
    assert!((temporal_context(1, 16) - 16.0 / 30.0).abs() < 1e-12);
    assert!((temporal_context(4, 16) - 2.133_333_333_333_333).abs() < 1e-9);
    assert!((temporal_context(30, 1) - 1.0).abs() < 1e-12);
}

#[test]
fn short_video_gives_no_windows() {
    assert!(window_sequences(&[0, 1, 2], 16, 1, Split::Train).is_empty());
    assert!(window_sequences(&[], 16, 4, Split::Validation).is_empty());
}

#[test]
fn audio_clip_alignment() {
    let ones = vec![1.0f32; 32_000];
    let start = extract_audio_clip(&ones, SAMPLE_RATE, 0.0).unwrap();
    assert_eq!(start.len(), 8000);
    assert!(start[..4000].iter().all(|&v| v == 0.0));
    assert!(start[4000..].iter().all(|&v| v == 1.0));
    let end = extract_audio_clip(&ones, SAMPLE_RATE, 2.0).unwrap();
    assert!(end[..4000].iter().all(|&v| v == 1.0));
    assert!(end[4000..].iter().all(|&v| v == 0.0));
    let mid = extract_audio_clip(&ones, SAMPLE_RATE, 1.0).unwrap();
    assert!(mid.iter().all(|&v| v == 1.0));
    assert!(extract_audio_clip(&ones, 44_100, 1.0).is_err());
}

#[test]
fn adjacent_frames_share_most_of_their_audio() {
    let ramp: Vec<f32> = (0..48_000).map(|i| i as f32).collect();
    let a = extract_audio_clip(&ramp, SAMPLE_RATE, 1.0).unwrap();
    let b = extract_audio_clip(&ramp, SAMPLE_RATE, 1.0 + 1.0 / 30.0).unwrap();
    let sa: HashSet<u32> = a.iter().map(|v| *v as u32).collect();
    let shared = b.iter().filter(|v| sa.contains(&(**v as u32))).count();
    let seconds = shared as f64 / SAMPLE_RATE as f64;
    assert!(
        (seconds - (0.5 - 1.0 / 30.0)).abs() <= 1.0 / SAMPLE_RATE as f64,
        "{seconds}"
    );
}

#[test]
fn augmentation_noise_is_centred() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut clip = vec![0.0f32; 100_000];
    augment_audio(&mut clip, 0.0, &mut rng).unwrap();
    assert!(clip.iter().all(|&v| v == 0.0));
    let sigma = 0.3f32;
    augment_audio(&mut clip, sigma, &mut rng).unwrap();
    let n = clip.len() as f64;
    let mean = clip.iter().map(|&v| v as f64).sum::<f64>() / n;
    assert!(mean.abs() <= 3.0 * sigma as f64 / n.sqrt(), "{mean}");
    let var = clip.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!((var.sqrt() - sigma as f64).abs() < 0.01);
    assert!(augment_audio(&mut clip, -1.0, &mut rng).is_err());
}

#[test]
fn batches_stack_windows() {
    let synth = synth_generate(&small()).unwrap();
    let windows = corpus_windows(&synth.corpus, Split::Train, 16, 2);
    let refs: Vec<&Window> = windows.iter().take(3).collect();
    let b: Batch<f64> = make_batch::<f64, ChaCha8Rng>(&synth.corpus, &refs, None).unwrap();
    assert_eq!(b.visual.shape(), &[3, 16, 12]);
    assert_eq!(b.audio.shape(), &[3, 16, 6]);
    assert_eq!(b.labels.shape(), &[3, 16, 2]);
    let w = &windows[1];
    let v = &synth.corpus.videos[w.video];
    assert_eq!(
        b.labels.at(&[1, 5, 0]),
        v.labels[w.frames[5]].valence as f64
    );
    assert_eq!(b.visual.at(&[1, 5, 3]), v.visual.row(w.frames[5])[3] as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noisy: Batch<f64> = make_batch(
        &synth.corpus,
        &refs,
        Some(Augment {
            sigma: 0.1,
            rng: &mut rng,
        }),
    )
    .unwrap();
    assert_eq!(noisy.visual, b.visual);
    assert_eq!(noisy.labels, b.labels);
    assert_ne!(noisy.audio, b.audio);
}

#[test]
fn waveform_batches_carry_clips() {
    let synth = synth_generate(&SynthConfig {
        audio: SynthAudio::Waveform,
        n_videos: 1,
        ..small()
    })
    .unwrap();
    let windows = corpus_windows(&synth.corpus, Split::Train, 4, 1);
    let refs: Vec<&Window> = windows.iter().take(2).collect();
    let b: Batch<f32> = make_batch::<f32, ChaCha8Rng>(&synth.corpus, &refs, None).unwrap();
    assert_eq!(b.audio.shape(), &[2, 4, 8000]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn training_windows_never_overlap(
        mask in proptest::collection::vec(any::<bool>(), 0..300),
        t in 1usize..20,
        n in 1usize..8,
    ) {
        let valid: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        let windows = window_sequences(&valid, t, n, Split::Train);
        let mut seen = HashSet::new();
        for w in &windows {
            prop_assert_eq!(w.len(), t);
            prop_assert!(w.windows(2).all(|p| p[0] < p[1]));
            for f in w {
                prop_assert!(mask[*f]);
                prop_assert!(seen.insert(*f));
            }
        }
        let lost: usize = (0..n).map(|o| valid.iter().skip(o).step_by(n).count() % t).sum();
        prop_assert_eq!(seen.len(), valid.len() - lost);
    }

    #[test]
    fn evaluation_windows_are_consecutive_runs(
        count in 0usize..200,
        t in 1usize..20,
        n in 1usize..8,
    ) {
        let valid: Vec<usize> = (0..count).collect();
        let windows = window_sequences(&valid, t, n, Split::Validation);
        prop_assert_eq!(windows.len(), count / t);
        for (i, w) in windows.iter().enumerate() {
            prop_assert_eq!(w[0], i * t);
            prop_assert!(w.windows(2).all(|p| p[1] == p[0] + 1));
        }
    }

    #[test]
    fn corpus_windows_stay_inside_one_video(seed in 0u64..16, n in 1usize..5) {
        let synth = synth_generate(&SynthConfig { seed, invalid_rate: 0.2, ..small() }).unwrap();
        for split in [Split::Train, Split::Validation] {
            for w in corpus_windows(&synth.corpus, split, 8, n) {
                let v = &synth.corpus.videos[w.video];
                prop_assert_eq!(v.split, split);
                prop_assert!(w.frames.iter().all(|&f| v.labels[f].valid));
                let ts: Vec<f64> = w.frames.iter().map(|&f| v.timestamp(f)).collect();
                prop_assert!(ts.windows(2).all(|p| p[0] < p[1]));
            }
        }
    }
}
