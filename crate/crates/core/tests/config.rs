use avfusion::config::{RunConfig, KEYS, PRESETS};
use avfusion::fusion::{build_model, Arch, Core, FrontEnd, Modality, ParameterCount};
use avfusion::losses::Evaluation;
use avfusion::nn::Activation;
use avfusion::report::{format_count, render_table, RunReport};
use avfusion::sequence::Direction;
use avfusion::Error;

#[test]
fn presets_transcribe_table_rows() {
    let sa = RunConfig::preset("e2e-av-sa").unwrap();
    let Core::Sa(a) = sa.model.core else {
        panic!("sa core")
    };
    assert_eq!(
        (a.n_layers, a.d_model, a.d_feedforward, a.n_heads),
        (3, 64, 256, 8)
    );
    assert_eq!(sa.model.activation, Activation::Gelu);
    assert_eq!(sa.model.dropout, 0.5);
    assert_eq!(sa.train.learning_rate, 0.002);
    assert_eq!(sa.train.weight_decay, 0.008);
    assert_eq!(
        (sa.train.loss.lambda_mse, sa.train.loss.lambda_ce),
        (0.78, 0.27)
    );

    let rnn = RunConfig::preset("e2e-av-rnn").unwrap();
    let Core::Rnn(l) = rnn.model.core else {
        panic!("rnn core")
    };
    assert_eq!(
        (l.n_layers, l.d_hidden, l.direction),
        (1, 64, Direction::Unidirectional)
    );
    assert_eq!(rnn.model.d_model, 64);
    assert_eq!(rnn.model.activation, Activation::Selu);
    assert_eq!(
        (rnn.train.learning_rate, rnn.train.weight_decay),
        (0.0002, 0.023)
    );
    assert_eq!(
        (rnn.train.loss.lambda_mse, rnn.train.loss.lambda_ce),
        (0.84, 0.88)
    );

    let cma = RunConfig::preset("e2e-av-cma").unwrap();
    let Core::Cma(c) = cma.model.core else {
        panic!("cma core")
    };
    assert_eq!(
        (
            c.attention.n_layers,
            c.attention.d_model,
            c.attention.n_heads
        ),
        (4, 256, 4)
    );
    assert_eq!((c.n_layers_v_to_a, c.n_layers_a_to_v), (3, 1));
    assert_eq!(cma.model.dropout, 0.6);
    assert_eq!(
        (cma.train.learning_rate, cma.train.weight_decay),
        (0.0001, 0.06)
    );
    assert_eq!(
        (cma.train.loss.lambda_mse, cma.train.loss.lambda_ce),
        (0.18, 0.76)
    );

    for (name, _) in PRESETS {
        let rc = RunConfig::preset(name).unwrap();
        assert_eq!(rc.model.modality, Modality::Audiovisual);
        assert!(rc.model.end_to_end);
        assert_eq!(rc.train.batch_size, 64);
        assert_eq!(rc.train.scheduler_period, 200);
    }
}

#[test]
fn preset_parameter_counts_agree() {
    for (name, _) in PRESETS {
        let rc = RunConfig::preset(name).unwrap();
        let model = build_model::<f32>(&rc.model, 0).unwrap();
        assert_eq!(
            rc.model.analytic_parameter_count(),
            model.count_parameters(),
            "{name}"
        );
    }
}

#[test]
fn unknown_preset_lists_choices() {
    let err = RunConfig::preset("e2e-av-gru").unwrap_err().to_string();
    assert!(err.contains("preset") && err.contains("e2e-av-sa"), "{err}");
}

#[test]
fn render_round_trips() {
    for (name, _) in PRESETS {
        let rc = RunConfig::preset(name).unwrap();
        assert_eq!(RunConfig::parse(&rc.render()).unwrap(), rc, "{name}");
    }
    let mut rc = RunConfig::preset("e2e-av-rnn").unwrap();
    rc.train.patience = None;
    rc.train.clip_norm = None;
    rc.train.target_ccc = Some(0.85);
    rc.model.front_end = FrontEnd::Conv1d { kernel: 5 };
    let text = rc.render();
    assert!(text.contains("patience = none"));
    assert_eq!(RunConfig::parse(&text).unwrap(), rc);
}

#[test]
fn errors_name_key_and_domain() {
    let cases = [
        ("d_model = wide", "d_model", "integer >= 1"),
        ("dropout = 1.5", "dropout", "[0, 1)"),
        ("activation = swish", "activation", "GELU"),
        ("arch = gru", "arch", "rnn, sa, cma"),
        (
            "context_aggregation = both\narch = rnn",
            "context_aggregation",
            "unidirectional",
        ),
        ("weight_decay = -1", "weight_decay", ">= 0"),
        ("end_to_end = maybe", "end_to_end", "true or false"),
        ("batch_size = 0", "batch_size", ">= 1"),
        ("learning_rate = 0", "learning_rate", "positive"),
    ];
    for (text, key, domain) in cases {
        let err = RunConfig::parse(text).unwrap_err();
        assert!(matches!(err, Error::ConfigValue { .. }), "{text}: {err}");
        let msg = err.to_string();
        assert!(msg.contains(key) && msg.contains(domain), "{text}: {msg}");
    }
}

#[test]
fn unknown_duplicate_and_irrelevant_keys_rejected() {
    let err = RunConfig::parse("n_layer = 3").unwrap_err().to_string();
    assert!(err.contains("n_layer"), "{err}");
    let err = RunConfig::parse("d_model = 64\nd_model = 128")
        .unwrap_err()
        .to_string();
    assert!(err.contains("twice"), "{err}");
    let err = RunConfig::parse("arch = rnn\nn_heads = 4")
        .unwrap_err()
        .to_string();
    assert!(err.contains("n_heads") && err.contains("rnn"), "{err}");
    let err = RunConfig::parse("arch = sa\nd_hidden = 64")
        .unwrap_err()
        .to_string();
    assert!(err.contains("d_hidden"), "{err}");
    assert!(RunConfig::parse("just words").is_err());
}

#[test]
fn model_constraints_surface_through_parse() {
    assert!(RunConfig::parse("arch = cma\nmodality = audio").is_err());
    assert!(RunConfig::parse("arch = sa\nd_model = 64\nn_heads = 3").is_err());
    assert!(RunConfig::parse("front_end = conv1d(4)").is_err());
}

#[test]
fn every_hyperparameter_field_is_a_key() {
    for k in [
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
    ] {
        assert!(KEYS.contains(&k), "{k}");
    }
}

#[test]
fn defaults_fill_missing_keys() {
    let rc = RunConfig::parse("# nothing set\n").unwrap();
    assert_eq!(rc.model.arch(), Arch::Sa);
    assert_eq!(rc.train.batch_size, 64);
    assert_eq!(rc.train.max_epochs, 50);
    assert_eq!(rc.train.patience, Some(10));
    assert_eq!(rc.train.clip_norm, Some(5.0));
}

fn run(id: &str, arch: Arch, avg: f64, params: (usize, usize)) -> RunReport {
    RunReport {
        run_id: id.into(),
        method: format!("AV-{}", arch.to_string().to_uppercase()),
        arch: arch.to_string(),
        evaluation: Evaluation {
            ccc_valence: avg - 0.01,
            ccc_arousal: avg + 0.01,
            average: avg,
        },
        parameters: ParameterCount {
            sequence: params.0,
            total: params.1,
        },
        best_epoch: 1,
        epochs: 2,
    }
}

#[test]
fn table_groups_by_architecture() {
    let runs = vec![
        run("c", Arch::Cma, 0.44, (2_400_000, 3_400_000)),
        run("a", Arch::Rnn, 0.456, (76_000, 1_100_000)),
        run("b", Arch::Sa, 0.45, (193_000, 1_200_000)),
    ];
    let t = render_table(&runs);
    let lines: Vec<&str> = t.lines().collect();
    assert!(lines[0].starts_with("Method"));
    for h in ["Valence", "Arousal", "Avg.", "P_sequence", "P_total"] {
        assert!(lines[0].contains(h));
    }
    let pos = |s: &str| t.find(s).unwrap();
    assert!(pos("Recurrent Models (RNNs)") < pos("AV-RNN"));
    assert!(pos("AV-RNN") < pos("Self-Attention (SA) Models"));
    assert!(pos("Self-Attention (SA) Models") < pos("AV-SA"));
    assert!(pos("AV-SA") < pos("Cross-Modal Attention (CMA) Models"));
    assert!(pos("Cross-Modal Attention (CMA) Models") < pos("AV-CMA"));
    assert!(t.contains("0.456") && t.contains("76 K") && t.contains("3.4 M"));
    let header_only = render_table(&[]);
    assert_eq!(header_only.lines().count(), 2);
}

#[test]
fn count_formatting() {
    assert_eq!(format_count(86_592), "87 K");
    assert_eq!(format_count(1_150_000), "1.1 M");
    assert_eq!(format_count(512), "512");
}

#[test]
fn report_json_round_trip() {
    let r = run("x", Arch::Sa, 0.5, (10, 20));
    let text = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<RunReport>(&text).unwrap(), r);
}
