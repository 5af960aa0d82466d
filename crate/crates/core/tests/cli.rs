use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use physicoupled::cli::{run, RUN_MANIFEST};
use physicoupled::grid::read_corpus;
use sha2::{Digest, Sha256};

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("physicoupled").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(out: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", s(out)];
    args.extend_from_slice(extra);
    assert_eq!(cli(&args), 0);
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(RUN_MANIFEST)).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn simulate_writes_one_directory_per_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    simulate(
        &out,
        &[
            "--h",
            "16",
            "--w",
            "16",
            "--steps",
            "40",
            "--sequences",
            "80",
            "--seed",
            "7",
        ],
    );
    let corpus = read_corpus(&out).unwrap();
    assert_eq!(corpus.len(), 80);
    assert!(corpus.iter().all(|s| s.frames() == 40 && s.height() == 16));
    let m = manifest(&out);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["outputs"].as_object().unwrap().len(), 160);
}

#[test]
fn simulate_rejects_cfl_violation() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        cli(&[
            "simulate",
            "--out",
            s(&tmp.path().join("w")),
            "--c",
            "3",
            "--dt",
            "0.5"
        ]),
        2
    );
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let flags = [
        "--h",
        "8",
        "--w",
        "8",
        "--steps",
        "30",
        "--sequences",
        "3",
        "--noise-std",
        "0.01",
        "--seed",
        "4",
    ];
    simulate(&tmp.path().join("a"), &flags);
    simulate(&tmp.path().join("b"), &flags);
    for k in 0..3 {
        let blob = |root: &str| {
            fs::read(tmp.path().join(root).join(format!("seq_{k:04}/data.f32le"))).unwrap()
        };
        assert_eq!(blob("a"), blob("b"));
    }
    let c = tmp.path().join("c");
    simulate(
        &c,
        &[
            "--h",
            "8",
            "--w",
            "8",
            "--steps",
            "30",
            "--sequences",
            "3",
            "--noise-std",
            "0.01",
            "--seed",
            "5",
        ],
    );
    assert_ne!(
        fs::read(c.join("seq_0000/data.f32le")).unwrap(),
        fs::read(tmp.path().join("a/seq_0000/data.f32le")).unwrap()
    );
}

#[test]
fn outputs_never_overwrite_existing_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    simulate(&out, &["--h", "4", "--w", "4", "--steps", "5"]);
    assert_eq!(
        cli(&[
            "simulate",
            "--out",
            s(&out),
            "--h",
            "4",
            "--w",
            "4",
            "--steps",
            "5"
        ]),
        2
    );
}

#[test]
fn manifest_hashes_match_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    simulate(
        &out,
        &["--h", "5", "--w", "5", "--steps", "6", "--dtype", "f64"],
    );
    let m = manifest(&out);
    for (file, hash) in m["outputs"].as_object().unwrap() {
        let digest = hex::encode(Sha256::digest(fs::read(out.join(file)).unwrap()));
        assert_eq!(hash.as_str().unwrap(), digest, "{file}");
    }
    assert!(m["finished_unix"].as_u64() >= m["started_unix"].as_u64());
    assert!(m["artifact"]
        .as_str()
        .unwrap()
        .starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn config_file_supplies_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.json");
    fs::write(
        &cfg,
        r#"{"h": 6, "w": 7, "steps": 9, "sequences": 2, "seed": 3}"#,
    )
    .unwrap();
    let out = tmp.path().join("w");
    assert_eq!(
        cli(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--steps",
            "11"
        ]),
        0
    );
    let corpus = read_corpus(&out).unwrap();
    assert_eq!(corpus.len(), 2);
    assert_eq!(
        (corpus[0].frames(), corpus[0].height(), corpus[0].width()),
        (11, 6, 7)
    );
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_physicoupled");
    let run_with = |name: &str, seed: &str| -> PathBuf {
        let out = tmp.path().join(name);
        let status = Command::new(bin)
            .args([
                "simulate",
                "--out",
                s(&out),
                "--h",
                "6",
                "--w",
                "6",
                "--steps",
                "8",
                "--sequences",
                "2",
            ])
            .env("PHYSICOUPLED_SEED", seed)
            .env("RUST_LOG", "off")
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let a = run_with("a", "21");
    assert_eq!(manifest(&a)["seed"], 21);
    let b = run_with("b", "22");
    assert_ne!(
        fs::read(a.join("seq_0000/data.f32le")).unwrap(),
        fs::read(b.join("seq_0000/data.f32le")).unwrap()
    );
}

#[test]
fn binary_exit_code_for_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_physicoupled"))
        .args([
            "simulate",
            "--out",
            s(&tmp.path().join("w")),
            "--c",
            "3",
            "--dt",
            "0.5",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let status = Command::new(env!("CARGO_BIN_EXE_physicoupled"))
        .args(["simulate", "--bogus"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_physics_pde_writes_unit_coefficients_and_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("w");
    simulate(&data, &["--h", "8", "--w", "8", "--steps", "30"]);
    let out = tmp.path().join("pde");
    let code = cli(&[
        "train-physics",
        "--kind",
        "pde",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--epochs",
        "4",
        "--samples",
        "64",
        "--collocation",
        "32",
        "--truth",
        "wave",
        "--log-every",
        "1",
    ]);
    assert_eq!(code, 0);
    let file: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("coefficients.json")).unwrap()).unwrap();
    let c: Vec<f64> = file["c"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(c.len(), 7);
    assert!((c.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    let err = file["err_vs"].as_f64().unwrap();
    let star = physicoupled::pde::PdeCoefficients::wave(3.0);
    assert!((err - physicoupled::pde::pde_error(&c, star.values()).unwrap()).abs() < 1e-12);
    assert_eq!(file["dictionary"][0], "u_tt");
    assert_eq!(csv_rows(&out.join("loss.csv")).len(), 4);
}

#[test]
fn train_physics_ode_single_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("w");
    simulate(
        &data,
        &["--h", "6", "--w", "6", "--steps", "12", "--sequences", "2"],
    );
    let out = tmp.path().join("ode");
    assert_eq!(
        cli(&[
            "train-physics",
            "--kind",
            "ode",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--epochs",
            "1",
            "--latent",
            "8"
        ]),
        0
    );
    let net = physicoupled::stpcnn::load_ode(&out).unwrap();
    assert_eq!(net.config.latent, 8);
    assert_eq!(csv_rows(&out.join("loss.csv")).len(), 1);
}

#[test]
fn train_physics_needs_a_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let code = cli(&[
        "train-physics",
        "--kind",
        "pde",
        "--data",
        s(&tmp.path().join("none")),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code, 2);
}

/// 4x4 corpus of 8 sequences with 81 frames and a tiny trained model.
fn trained(tmp: &Path, physics: &str) -> (PathBuf, PathBuf) {
    let data = tmp.join("w");
    if !data.exists() {
        simulate(
            &data,
            &[
                "--h",
                "4",
                "--w",
                "4",
                "--steps",
                "81",
                "--sequences",
                "8",
                "--seed",
                "2",
            ],
        );
    }
    let model = tmp.join(format!("model-{physics}"));
    let code = cli(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&model),
        "--physics",
        physics,
        "--split",
        "5,1,2",
        "--epochs",
        "1",
        "--hidden",
        "6",
        "--fusion-dim",
        "4",
        "--tn-hidden",
        "4",
        "--batch",
        "5",
    ]);
    assert_eq!(code, 0);
    (data, model)
}

#[test]
fn evaluate_reports_single_and_multi_step_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = trained(tmp.path(), "truth-wave");
    let metrics = csv_rows(&model.join("metrics.csv"));
    assert_eq!(metrics.len(), 2);
    assert_eq!(&metrics[0][1], "train");
    let out = tmp.path().join("eval");
    let code = cli(&[
        "evaluate",
        "--checkpoint",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--tf",
        "10,20,30,40",
        "--horizon-to",
        "80",
    ]);
    assert_eq!(code, 0);
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().filter(|r| &r[1] == "single").count(), 1);
    let tfs: Vec<&str> = rows
        .iter()
        .filter(|r| &r[1] == "multi")
        .map(|r| r.get(2).unwrap())
        .collect();
    assert_eq!(tfs, ["10", "20", "30", "40"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["physics"], "truth-wave");
    assert_eq!(report["sequences"], 2);
    // Frames tf ..= 80 are forecast and scored for every tf.
    assert_eq!(csv_rows(&out.join("curves.csv")).len(), 71 + 61 + 51 + 41);
}

#[test]
fn coefficient_noise_is_recorded_and_reused_by_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, _) = trained(tmp.path(), "none");
    let model = tmp.path().join("noisy");
    let train = |out: &Path, physics: &str| {
        cli(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(out),
            "--physics",
            physics,
            "--split",
            "5,1,2",
            "--epochs",
            "1",
            "--hidden",
            "6",
            "--fusion-dim",
            "4",
            "--tn-hidden",
            "4",
            "--coefficient-noise",
            "0.1",
            "--seed",
            "5",
        ])
    };
    assert_eq!(train(&model, "truth-wave"), 0);
    assert_eq!(train(&tmp.path().join("bad"), "none"), 2);
    let meta = fs::read_to_string(model.join("config.json")).unwrap();
    assert!(meta.contains("coefficient_noise"), "{meta}");
    let out = tmp.path().join("eval");
    let code = cli(&[
        "evaluate",
        "--checkpoint",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--tf",
        "2",
        "--horizon-to",
        "10",
    ]);
    assert_eq!(code, 0);
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(&rows[0][0], "stpcnn[truth-wave+0.1]");
}

#[test]
fn evaluating_training_split_needs_explicit_permission() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = trained(tmp.path(), "none");
    let args = |out: &Path, extra: &[&'static str]| {
        let mut v: Vec<String> = [
            "evaluate",
            "--checkpoint",
            s(&model),
            "--data",
            s(&data),
            "--out",
            s(out),
            "--tf",
            "2",
            "--horizon-to",
            "10",
        ]
        .iter()
        .map(|a| a.to_string())
        .collect();
        v.extend(extra.iter().map(|a| a.to_string()));
        v
    };
    let call = |v: Vec<String>| run(std::iter::once("physicoupled".to_string()).chain(v));
    assert_eq!(
        call(args(&tmp.path().join("e1"), &["--split-name", "train"])),
        2
    );
    assert_eq!(
        call(args(&tmp.path().join("e2"), &["--split-name", "all"])),
        2
    );
    assert_eq!(
        call(args(
            &tmp.path().join("e3"),
            &["--split-name", "train", "--allow-train-eval"]
        )),
        0
    );
}

#[test]
fn evaluate_rejects_a_non_forecaster_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("w");
    simulate(
        &data,
        &["--h", "4", "--w", "4", "--steps", "12", "--sequences", "3"],
    );
    let ode = tmp.path().join("ode");
    assert_eq!(
        cli(&[
            "train-physics",
            "--kind",
            "ode",
            "--data",
            s(&data),
            "--out",
            s(&ode),
            "--epochs",
            "1",
            "--latent",
            "4"
        ]),
        0
    );
    let code = cli(&[
        "evaluate",
        "--checkpoint",
        s(&ode),
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("e")),
        "--split",
        "1,1,1",
    ]);
    assert_eq!(code, 2);
}

fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(32)]).into_owned();
    let mut fields = text.split_whitespace();
    assert_eq!(fields.next(), Some("P5"));
    let w: usize = fields.next().unwrap().parse().unwrap();
    let h: usize = fields.next().unwrap().parse().unwrap();
    assert_eq!(fields.next(), Some("255"));
    let header = format!("P5\n{w} {h}\n255\n").len();
    (w, h, bytes[header..].to_vec())
}

#[test]
fn render_writes_one_pgm_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("w");
    simulate(&data, &["--h", "5", "--w", "7", "--steps", "9"]);
    let out = tmp.path().join("r");
    assert_eq!(
        cli(&[
            "render",
            "--data",
            s(&data.join("seq_0000")),
            "--out",
            s(&out),
            "--frames",
            "5"
        ]),
        0
    );
    for k in 0..5 {
        let (w, h, px) = read_pgm(&out.join(format!("frame_{k:04}.pgm")));
        assert_eq!((w, h, px.len()), (7, 5, 35));
    }
    assert!(!out.join("frame_0005.pgm").exists());
}

#[test]
fn render_zero_field_is_mid_gray_and_pairs_are_side_by_side() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = physicoupled::grid::GridSequence::new(2, 3, 4, vec![0.0; 24], 0.1).unwrap();
    physicoupled::grid::write_sequence(
        &zero,
        &tmp.path().join("z"),
        physicoupled::grid::DataType::F64,
    )
    .unwrap();
    let out = tmp.path().join("r");
    assert_eq!(
        cli(&[
            "render",
            "--data",
            s(&tmp.path().join("z")),
            "--out",
            s(&out)
        ]),
        0
    );
    let (_, _, px) = read_pgm(&out.join("frame_0000.pgm"));
    assert!(px.iter().all(|&p| p == 128));

    let ones = physicoupled::grid::GridSequence::new(2, 3, 4, vec![1.0; 24], 0.1).unwrap();
    physicoupled::grid::write_sequence(
        &ones,
        &tmp.path().join("o"),
        physicoupled::grid::DataType::F64,
    )
    .unwrap();
    let pair = tmp.path().join("p");
    assert_eq!(
        cli(&[
            "render",
            "--data",
            s(&tmp.path().join("z")),
            "--truth",
            s(&tmp.path().join("o")),
            "--out",
            s(&pair)
        ]),
        0
    );
    let (w, h, px) = read_pgm(&pair.join("frame_0001.pgm"));
    assert_eq!((w, h), (9, 3));
    assert_eq!(&px[..9], &[128, 128, 128, 128, 0, 255, 255, 255, 255]);
    let mse = csv_rows(&pair.join("mse.csv"));
    assert_eq!(mse.len(), 2);
    assert_eq!(mse[0][1].parse::<f64>().unwrap(), 1.0);
}
