use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use satl_core::data::{write_pack, DatasetIndex, LabeledImage};
use satl_core::models::Checkpoint;
use satl_tensor::Tensor;
use tempfile::TempDir;

const TINY: &str = "\
[data]
image_size = 16
[model]
stages = [[1, 4], [1, 8]]
latent_channels = 4
[source_train]
learning_rate = 1e-3
epochs = 3
batch_size = 8
[adapt]
epochs = 1
encoder_lr = 1e-6
";

fn satl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satl"))
        .args(args)
        .env_remove("SATL_SEED")
        .env_remove("SATL_FS_TRACE")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture { dir: TempDir::new().unwrap() };
        fs::write(f.path("tiny.toml"), TINY).unwrap();
        f.gen("src.satd", "source", 1);
        f.gen("tgt.satd", "shiftA", 2);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn gen(&self, name: &str, preset: &str, seed: u64) {
        let out = satl(&[
            "gen-data", "--out", &self.s(name), "--n", "40", "--size", "16",
            "--style-preset", preset, "--seed", &seed.to_string(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }

    fn train(&self, ckpt: &str, log: &str) -> Output {
        satl(&[
            "train-source", "--data", &self.s("src.satd"), "--config", &self.s("tiny.toml"),
            "--out-checkpoint", &self.s(ckpt), "--log", &self.s(log),
        ])
    }
}

#[test]
fn gen_data_is_reproducible_and_honours_seed_env() {
    let f = Fixture::new();
    f.gen("again.satd", "source", 1);
    assert_eq!(fs::read(f.path("src.satd")).unwrap(), fs::read(f.path("again.satd")).unwrap());

    let out = Command::new(env!("CARGO_BIN_EXE_satl"))
        .args(["gen-data", "--out", &f.s("env.satd"), "--n", "40", "--size", "16"])
        .env("SATL_SEED", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(f.path("src.satd")).unwrap(), fs::read(f.path("env.satd")).unwrap());
}

#[test]
fn skewed_preset_defaults_to_one_positive_in_ten() {
    let f = Fixture::new();
    let out = satl(&[
        "gen-data", "--out", &f.s("sk.satd"), "--n", "400", "--size", "16",
        "--style-preset", "skewed", "--manifest", &f.s("sk.json"),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("40 positive, 360 negative"), "{}", stdout(&out));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(f.path("sk.json")).unwrap()).unwrap();
    assert_eq!(manifest["items"].as_array().unwrap().len(), 400);
}

#[test]
fn train_source_writes_one_log_row_per_epoch() {
    let f = Fixture::new();
    let out = f.train("s.ckpt", "train.csv");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(f.path("train.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let f = Fixture::new();
    fs::write(f.path("bad.toml"), "[source_train]\nlearning_rat = 0.1\n").unwrap();
    let out = satl(&[
        "train-source", "--data", &f.s("src.satd"), "--config", &f.s("bad.toml"),
        "--out-checkpoint", &f.s("s.ckpt"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rat"), "{}", stderr(&out));
}

#[test]
fn missing_input_exits_1() {
    let f = Fixture::new();
    let out = satl(&[
        "eval", "--checkpoint", &f.s("absent.ckpt"), "--data", &f.s("src.satd"),
        "--out-metrics", &f.s("m.csv"), "--out-roc", &f.s("r.csv"),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("absent.ckpt"));
}

#[test]
fn adapt_rejects_a_config_for_another_architecture() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("s.ckpt", "train.csv")), 0);
    fs::write(f.path("wide.toml"), TINY.replace("[1, 8]", "[1, 16]")).unwrap();
    let out = satl(&[
        "adapt", "--source-checkpoint", &f.s("s.ckpt"), "--target-data", &f.s("tgt.satd"),
        "--config", &f.s("wide.toml"), "--out-checkpoint", &f.s("a.ckpt"),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn zero_epoch_adaptation_returns_the_source_encoder() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("s.ckpt", "train.csv")), 0);
    fs::write(f.path("zero.toml"), TINY.replace("epochs = 1", "epochs = 0")).unwrap();
    let out = satl(&[
        "adapt", "--source-checkpoint", &f.s("s.ckpt"), "--target-data", &f.s("tgt.satd"),
        "--config", &f.s("zero.toml"), "--out-checkpoint", &f.s("a.ckpt"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let enc = |p: &Path| -> Vec<(String, Tensor<f32>)> {
        Checkpoint::load(p)
            .unwrap()
            .blocks
            .into_iter()
            .filter(|(n, _)| n.starts_with("enc."))
            .collect()
    };
    let (src, ada) = (enc(&f.path("s.ckpt")), enc(&f.path("a.ckpt")));
    assert!(!src.is_empty());
    assert_eq!(src, ada);
}

#[test]
fn adapt_has_no_source_data_flag() {
    let help = stdout(&satl(&["adapt", "--help"]));
    assert!(help.contains("--target-data"));
    assert!(!help.contains("source-data"), "{help}");
    let out = satl(&["adapt", "--source-data", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_on_single_class_data_exits_4() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("s.ckpt", "train.csv")), 0);
    let items = (0..6)
        .map(|i| LabeledImage {
            id: format!("neg-{i}"),
            pixels: Tensor::full(&[3, 16, 16], 0.1 * i as f32),
            label: Some(0),
            cdr: None,
        })
        .collect();
    write_pack(&f.path("neg.satd"), &DatasetIndex::new("neg", items)).unwrap();
    let out = satl(&[
        "eval", "--checkpoint", &f.s("s.ckpt"), "--data", &f.s("neg.satd"),
        "--out-metrics", &f.s("m.csv"), "--out-roc", &f.s("r.csv"),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn eval_arms_match_run_direction_outputs() {
    let f = Fixture::new();
    let rd = satl(&[
        "run-direction", "--source-data", &f.s("src.satd"), "--target-data", &f.s("tgt.satd"),
        "--config", &f.s("tiny.toml"), "--out-dir", &f.s("out"), "--name", "d",
    ]);
    assert_eq!(code(&rd), 0, "{}", stderr(&rd));
    let mut listing: Vec<String> = fs::read_dir(f.path("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    listing.sort();
    assert_eq!(
        listing,
        ["adapt.csv", "adapted.ckpt", "metrics.csv", "roc.svg", "roc_w.csv", "roc_wo.csv", "source.ckpt", "train.csv"]
    );

    let (ckpt, tgt, cfg) = (f.s("out/source.ckpt"), f.s("tgt.satd"), f.s("tiny.toml"));
    let eval = |extra: &[&str], metrics: &str, roc: &str| {
        let (m, r) = (f.s(metrics), f.s(roc));
        let mut args = vec![
            "eval", "--checkpoint", &ckpt, "--data", &tgt, "--config", &cfg,
            "--direction", "d", "--out-metrics", &m, "--out-roc", &r,
        ];
        args.extend(extra);
        let out = satl(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    };
    let adapted = f.s("out/adapted.ckpt");
    eval(&[], "wo.csv", "wo_roc.csv");
    eval(&["--adapted-encoder", &adapted, "--svg", &f.s("w.svg")], "w.csv", "w_roc.csv");

    let rows = fs::read_to_string(f.path("out/metrics.csv")).unwrap();
    let rows: Vec<&str> = rows.lines().collect();
    let wo = fs::read_to_string(f.path("wo.csv")).unwrap();
    let w = fs::read_to_string(f.path("w.csv")).unwrap();
    assert_eq!(wo.lines().collect::<Vec<_>>(), [rows[0], rows[1]]);
    assert_eq!(w.lines().collect::<Vec<_>>(), [rows[0], rows[2]]);
    assert_eq!(fs::read(f.path("wo_roc.csv")).unwrap(), fs::read(f.path("out/roc_wo.csv")).unwrap());
    assert_eq!(fs::read(f.path("w_roc.csv")).unwrap(), fs::read(f.path("out/roc_w.csv")).unwrap());
    assert!(fs::read_to_string(f.path("w.svg")).unwrap().contains("<polyline"));
}

#[test]
fn directory_input_with_labels_csv_trains() {
    let f = Fixture::new();
    let dir = f.path("imgs");
    fs::create_dir(&dir).unwrap();
    let mut csv = String::from("filename,label\n");
    for i in 0..12u8 {
        let name = format!("im{i:02}.ppm");
        let mut bytes = b"P6\n16 16\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n([i * 20, 100, 255 - i * 20], 256).flatten());
        fs::write(dir.join(&name), bytes).unwrap();
        csv.push_str(&format!("{name},{}\n", i % 2));
    }
    fs::write(dir.join("labels.csv"), csv).unwrap();
    let out = satl(&[
        "train-source", "--data", &dir.to_string_lossy(), "--config", &f.s("tiny.toml"),
        "--out-checkpoint", &f.s("d.ckpt"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn gradcheck_lists_every_op_once_and_fails_on_injected_fault() {
    let out = satl(&["gradcheck", "--scope", "ops", "--seeds", "2"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    for op in satl_tensor::OP_NAMES {
        let hits = text.lines().filter(|l| l.split_whitespace().nth(1) == Some(op)).count();
        assert_eq!(hits, 1, "{op} in\n{text}");
    }
    assert_eq!(text.lines().count(), satl_tensor::OP_NAMES.len());

    let out = satl(&["gradcheck", "--scope", "ops", "--seeds", "1", "--inject-fault", "conv2d"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("conv2d"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let desk = satl_cli::RunConfig::load(&root.join("desk.toml")).unwrap();
    let published = satl_cli::RunConfig::load(&root.join("published.toml")).unwrap();
    assert_eq!(published.source.learning_rate, 1e-6);
    assert_eq!(published.source.epochs, 50);
    assert_eq!((published.adapt.encoder_lr, published.adapt.other_lr, published.adapt.epochs), (1e-7, 1e-3, 20));
    assert_eq!(desk.encoder, published.encoder);
    assert_eq!(desk.source.learning_rate, 1e-3);
}
