//! End-to-end tests of the `dsq` binary: full workflow round trips, header
//! figures, determinism, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsq_core::features::read_feature_file;
use dsq_core::metrics::{feature_distance, DistanceKind};
use dsq_core::FeatureMatrix;

fn dsq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsq"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = dsq().args(args).output().expect("spawn dsq");
    assert!(
        out.status.success(),
        "dsq {:?} failed: {}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> (i32, String) {
    let out = dsq().args(args).output().expect("spawn dsq");
    assert!(!out.status.success(), "dsq {args:?} unexpectedly succeeded");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

fn write_synth_spec(path: &Path, noise_std: f64, n_utterances: usize) {
    fs::write(
        path,
        format!(
            "dim = 32\nframe_rate_hz = 50.0\nn_utterances = {n_utterances}\n\
             frames_per_utterance = 80\nn_speakers = 8\nn_contents = 16\n\
             speaker_offset_scale = 1.0\nspeaker_gain_spread = 0.25\n\
             prosody_dim = 4\nprosody_smoothness = 0.9\nnoise_std = {noise_std}\nseed = 5\n"
        ),
    )
    .unwrap();
}

struct Workspace {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

/// Synth + fit on a frozen ground-truth content codebook with a continuous
/// variant, then encode/decode through files: the reconstruction must be
/// tight on noise-free data.
#[test]
fn continuous_round_trip_through_the_cli() {
    let ws = Workspace::new();
    write_synth_spec(&ws.path("synth.toml"), 0.0, 40);
    run_ok(&[
        "synth",
        "--spec",
        &ws.arg("synth.toml"),
        "--out",
        &ws.arg("corpus"),
    ]);
    assert!(ws.path("corpus/labels.jsonl").is_file());
    assert!(ws.path("corpus/content_centroids.cbk").is_file());

    fs::write(
        ws.path("fit.toml"),
        format!(
            "preset = \"desk-small\"\nvariant = \"skq-sigma\"\ncontent_codebook = \"{}\"\n",
            ws.arg("corpus/content_centroids.cbk").replace('\\', "/")
        ),
    )
    .unwrap();
    run_ok(&[
        "fit",
        "--config",
        &ws.arg("fit.toml"),
        "--train",
        &ws.arg("corpus"),
        "--out",
        &ws.arg("pipeline.dsqp"),
    ]);

    run_ok(&[
        "encode",
        "--pipeline",
        &ws.arg("pipeline.dsqp"),
        "--in",
        &ws.arg("corpus/utt00003.ftr"),
        "--out",
        &ws.arg("x.dsq1"),
    ]);
    run_ok(&[
        "decode",
        "--pipeline",
        &ws.arg("pipeline.dsqp"),
        "--in",
        &ws.arg("x.dsq1"),
        "--out",
        &ws.arg("x_hat.ftr"),
    ]);
    let original: FeatureMatrix<f64> = read_feature_file(ws.path("corpus/utt00003.ftr")).unwrap();
    let decoded: FeatureMatrix<f64> = read_feature_file(ws.path("x_hat.ftr")).unwrap();
    let l2 = feature_distance(&original, &decoded, DistanceKind::L2).unwrap();
    assert!(l2 < 1e-4, "cli round-trip l2 {l2}");
}

/// The quantized workflow end to end: fit, encode two utterances, swap the
/// speaker stream, flatten prosody, evaluate, and inspect.
#[test]
fn quantized_workflow_and_eval() {
    let ws = Workspace::new();
    write_synth_spec(&ws.path("synth.toml"), 0.02, 48);
    run_ok(&[
        "synth",
        "--spec",
        &ws.arg("synth.toml"),
        "--out",
        &ws.arg("corpus"),
    ]);
    fs::write(
        ws.path("fit.toml"),
        format!(
            "preset = \"desk-small\"\nvariant = \"skq3-sigma\"\ncontent_codebook = \"{}\"\n",
            ws.arg("corpus/content_centroids.cbk").replace('\\', "/")
        ),
    )
    .unwrap();
    run_ok(&[
        "fit",
        "--config",
        &ws.arg("fit.toml"),
        "--train",
        &ws.arg("corpus"),
        "--out",
        &ws.arg("pipeline.dsqp"),
    ]);
    for (input, out) in [
        ("corpus/utt00000.ftr", "a.dsq1"),
        ("corpus/utt00001.ftr", "b.dsq1"),
    ] {
        run_ok(&[
            "encode",
            "--pipeline",
            &ws.arg("pipeline.dsqp"),
            "--in",
            &ws.arg(input),
            "--out",
            &ws.arg(out),
        ]);
    }
    run_ok(&[
        "swap-speaker",
        "--pipeline",
        &ws.arg("pipeline.dsqp"),
        "--src",
        &ws.arg("a.dsq1"),
        "--ref",
        &ws.arg("b.dsq1"),
        "--out",
        &ws.arg("swapped.dsq1"),
    ]);
    run_ok(&[
        "flatten-prosody",
        "--pipeline",
        &ws.arg("pipeline.dsqp"),
        "--in",
        &ws.arg("a.dsq1"),
        "--out",
        &ws.arg("flat.dsq1"),
        "--from",
        "mid",
    ]);
    let eval_out = run_ok(&[
        "eval",
        "--pipeline",
        &ws.arg("pipeline.dsqp"),
        "--dir",
        &ws.arg("corpus"),
        "--json",
        &ws.arg("report.json"),
    ]);
    let stdout = String::from_utf8_lossy(&eval_out.stdout).to_string();
    assert!(stdout.contains("speaker verification"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(ws.path("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["n_utterances"], 48);
    assert!(report["reconstruction"].as_array().unwrap().len() >= 4);
    assert!(report["speaker_verification"]["eer"].is_number());
    assert!(report["prosody_correlation"]["mean_best_abs_pcc"].is_number());

    let info_out = run_ok(&["info", "--in", &ws.arg("swapped.dsq1")]);
    let info = String::from_utf8_lossy(&info_out.stdout).to_string();
    assert!(info.contains("crc ok"), "{info}");
    assert!(info.contains("4 groups x 2 layers"), "{info}");
}

/// A stream packed under the full-scale preset reports the published
/// per-stream figures through `info`.
#[test]
fn info_reports_paper_preset_figures() {
    use dsq_core::bitstream::{pack, StreamKeys};
    use dsq_core::pipeline::{DisentangledCodes, ProsodyCodes, QuantizerConfig, SpeakerCodes};

    let ws = Workspace::new();
    let cfg = QuantizerConfig::paper_skq3();
    let t = 150usize;
    let codes = DisentangledCodes::<f64> {
        config_hash: cfg.hash(),
        variant: cfg.variant,
        n_frames: t,
        frame_rate_hz: cfg.frame_rate_hz,
        content: (0..t as u32).map(|i| i % 1000).collect(),
        prosody: ProsodyCodes::Quantized(vec![
            (0..t as u32).map(|i| (i * 7) % 1000).collect(),
            (0..t as u32).map(|i| (i * 13) % 1000).collect(),
        ]),
        speaker: SpeakerCodes::Quantized(
            (0..16)
                .map(|g| (0..8).map(|l| (g * 8 + l) as u32).collect())
                .collect(),
        ),
    };
    let keys = StreamKeys {
        content: 1,
        prosody: vec![2, 3],
        speaker: (0..16)
            .map(|g| (0..8).map(|l| 100 + g * 8 + l).collect())
            .collect(),
    };
    let bytes = pack(&codes, &cfg, &keys).unwrap();
    fs::write(ws.path("paper.dsq1"), &bytes).unwrap();

    let out = run_ok(&["info", "--in", &ws.arg("paper.dsq1")]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("0.50 kb/s"), "{text}");
    assert!(text.contains("1.00 kb/s"), "{text}");
    assert!(text.contains("1280 bits/u"), "{text}");
}

/// Identical inputs and seeds produce byte-identical outputs.
#[test]
fn synth_and_fit_are_deterministic() {
    let ws = Workspace::new();
    write_synth_spec(&ws.path("synth.toml"), 0.05, 24);
    run_ok(&[
        "synth",
        "--spec",
        &ws.arg("synth.toml"),
        "--out",
        &ws.arg("c1"),
    ]);
    run_ok(&[
        "synth",
        "--spec",
        &ws.arg("synth.toml"),
        "--out",
        &ws.arg("c2"),
    ]);
    let a = fs::read(ws.path("c1/utt00007.ftr")).unwrap();
    let b = fs::read(ws.path("c2/utt00007.ftr")).unwrap();
    assert_eq!(a, b);

    fs::write(ws.path("fit.toml"), "preset = \"desk-small\"\n").unwrap();
    for out in ["p1.dsqp", "p2.dsqp"] {
        run_ok(&[
            "fit",
            "--config",
            &ws.arg("fit.toml"),
            "--train",
            &ws.arg("c1"),
            "--out",
            &ws.arg(out),
            "--seed",
            "9",
        ]);
    }
    assert_eq!(
        fs::read(ws.path("p1.dsqp")).unwrap(),
        fs::read(ws.path("p2.dsqp")).unwrap()
    );
}

/// Failure modes exit with their designated codes and one-line errors.
#[test]
fn exit_codes_are_stable() {
    let ws = Workspace::new();
    write_synth_spec(&ws.path("synth.toml"), 0.02, 24);
    run_ok(&[
        "synth",
        "--spec",
        &ws.arg("synth.toml"),
        "--out",
        &ws.arg("corpus"),
    ]);
    fs::write(ws.path("fit.toml"), "preset = \"desk-small\"\n").unwrap();
    run_ok(&[
        "fit",
        "--config",
        &ws.arg("fit.toml"),
        "--train",
        &ws.arg("corpus"),
        "--out",
        &ws.arg("p1.dsqp"),
        "--seed",
        "1",
    ]);
    // A second pipeline from a different seed: same config hash, different
    // codebooks.
    run_ok(&[
        "fit",
        "--config",
        &ws.arg("fit.toml"),
        "--train",
        &ws.arg("corpus"),
        "--out",
        &ws.arg("p2.dsqp"),
        "--seed",
        "2",
    ]);
    run_ok(&[
        "encode",
        "--pipeline",
        &ws.arg("p1.dsqp"),
        "--in",
        &ws.arg("corpus/utt00000.ftr"),
        "--out",
        &ws.arg("a.dsq1"),
    ]);

    // Incompatible codebooks: exit 4.
    let (code, stderr) = run_err(&[
        "decode",
        "--pipeline",
        &ws.arg("p2.dsqp"),
        "--in",
        &ws.arg("a.dsq1"),
        "--out",
        &ws.arg("never.ftr"),
    ]);
    assert_eq!(code, 4, "{stderr}");
    assert!(stderr.starts_with("error[E_INCOMPAT]"), "{stderr}");
    assert!(!ws.path("never.ftr").exists(), "no partial output");

    // Corrupt stream: exit 3.
    let mut bytes = fs::read(ws.path("a.dsq1")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(ws.path("bad.dsq1"), &bytes).unwrap();
    let (code, stderr) = run_err(&[
        "decode",
        "--pipeline",
        &ws.arg("p1.dsqp"),
        "--in",
        &ws.arg("bad.dsq1"),
        "--out",
        &ws.arg("never.ftr"),
    ]);
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.starts_with("error[E_PARSE]"), "{stderr}");

    // Unknown TOML key: exit 3.
    fs::write(ws.path("bad.toml"), "presett = \"desk-small\"\n").unwrap();
    let (code, _) = run_err(&[
        "fit",
        "--config",
        &ws.arg("bad.toml"),
        "--train",
        &ws.arg("corpus"),
        "--out",
        &ws.arg("never.dsqp"),
    ]);
    assert_eq!(code, 3);

    // Out-of-range flatten frame: exit 2.
    let (code, stderr) = run_err(&[
        "flatten-prosody",
        "--pipeline",
        &ws.arg("p1.dsqp"),
        "--in",
        &ws.arg("a.dsq1"),
        "--out",
        &ws.arg("never.dsq1"),
        "--from",
        "10",
        "--hold",
        "5000",
    ]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.starts_with("error[E_USAGE]"), "{stderr}");

    // Infeasible codebook size: exit 5.
    fs::write(
        ws.path("huge.toml"),
        "preset = \"desk-small\"\nspeaker_codebook_size = 4096\n",
    )
    .unwrap();
    let (code, stderr) = run_err(&[
        "fit",
        "--config",
        &ws.arg("huge.toml"),
        "--train",
        &ws.arg("corpus"),
        "--out",
        &ws.arg("never.dsqp"),
    ]);
    assert_eq!(code, 5, "{stderr}");
    assert!(stderr.starts_with("error[E_INFEASIBLE]"), "{stderr}");

    // Usage error from the argument parser itself: exit 2.
    let (code, _) = run_err(&["encode", "--pipeline", &ws.arg("p1.dsqp")]);
    assert_eq!(code, 2);
}

/// DSQ_SEED steers fitting when --seed is absent.
#[test]
fn env_seed_is_honored() {
    let ws = Workspace::new();
    write_synth_spec(&ws.path("synth.toml"), 0.05, 24);
    run_ok(&[
        "synth",
        "--spec",
        &ws.arg("synth.toml"),
        "--out",
        &ws.arg("corpus"),
    ]);
    fs::write(ws.path("fit.toml"), "preset = \"desk-small\"\n").unwrap();
    let run_with_env = |out: &str, env_seed: &str| {
        let output = dsq()
            .env("DSQ_SEED", env_seed)
            .args([
                "fit",
                "--config",
                &ws.arg("fit.toml"),
                "--train",
                &ws.arg("corpus"),
                "--out",
                &ws.arg(out),
            ])
            .output()
            .unwrap();
        assert!(output.status.success());
    };
    run_with_env("e1.dsqp", "42");
    run_with_env("e2.dsqp", "42");
    run_with_env("e3.dsqp", "43");
    let e1 = fs::read(ws.path("e1.dsqp")).unwrap();
    assert_eq!(e1, fs::read(ws.path("e2.dsqp")).unwrap());
    assert_ne!(e1, fs::read(ws.path("e3.dsqp")).unwrap());
}
