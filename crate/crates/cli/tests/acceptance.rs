//! End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.
//!
//! The directional comparison runs the shipped `configs/desk.toml` over four
//! synthetic directions and three seeds, so this target takes tens of minutes
//! on a single core.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use satl_core::data::{StylePreset, NEGATIVE, POSITIVE};
use satl_core::losses::{cross_entropy, gram_matrix, kl_divergence, Reduction};
use satl_core::metrics::{read_metrics_csv, roc_auc, MetricsReport};
use satl_core::models::{compose_adapted, Checkpoint, ClassifierModel, EncoderConfig, VaeModel};
use satl_tensor::{Graph, Prng, Tensor};
use tempfile::TempDir;

const SEEDS: [u64; 3] = [0, 1, 2];
const N_IMAGES: &str = "600";
const F1_DIRECTIONS_REQUIRED: usize = 3;
const MAX_ACCURACY_DROP: f64 = 0.02;
const MAX_CONTROL_CHANGE: f64 = 0.05;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const DIRECTIONS_BUDGET: Duration = Duration::from_secs(45 * 60);

const TINY: &str = "\
[data]
image_size = 16
[model]
stages = [[1, 4], [1, 8]]
latent_channels = 4
[source_train]
learning_rate = 1e-3
epochs = 2
batch_size = 8
[adapt]
epochs = 2
encoder_lr = 1e-6
";

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn satl(args: &[&str], trace: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_satl"));
    cmd.args(args).env_remove("SATL_SEED").env_remove("SATL_FS_TRACE");
    if let Some(t) = trace {
        cmd.env("SATL_FS_TRACE", t);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = satl(args, None);
    assert!(
        out.status.success(),
        "satl {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Gate {
    lines: Vec<(u32, bool, String)>,
}

impl Gate {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        let line = format!("{} criterion {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((id, pass, line));
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn gradients(gate: &mut Gate) {
    let start = Instant::now();
    let out = satl(&["gradcheck", "--scope", "all", "--seed", "0", "--seeds", "10", "--tol", "1e-4"], None);
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let checks = text.lines().count();
    let failing: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    let covers = ["cross_entropy", "kl_mean", "pixel_mean", "gram_mean", "satl_total", "classifier_cross_entropy"]
        .iter()
        .all(|c| text.lines().any(|l| l.split_whitespace().nth(1) == Some(c)));
    gate.record(
        1,
        "gradient correctness",
        out.status.success() && failing.is_empty() && covers && elapsed <= GRADCHECK_BUDGET,
        format!(
            "{checks} checks x 10 seeds at tol 1e-4, {} failing, {:.1}s",
            failing.len(),
            elapsed.as_secs_f64()
        ),
    );
}

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == POSITIVE && labels[j] == NEGATIVE {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn loss_oracles(gate: &mut Gate) {
    let start = Instant::now();
    let mut g = Graph::<f64>::new();
    let zeros = g.constant(Tensor::zeros(&[4, 2, 3, 3]));
    let kl0 = kl_divergence(&mut g, zeros, zeros, Reduction::Mean).unwrap();
    let kl0 = g.value(kl0).item().unwrap();
    let one = g.constant(Tensor::new(&[1], vec![1.0]).unwrap());
    let zero = g.constant(Tensor::new(&[1], vec![0.0]).unwrap());
    let kl1 = kl_divergence(&mut g, one, zero, Reduction::Sum).unwrap();
    let kl1 = g.value(kl1).item().unwrap();

    let logits = g.constant(Tensor::zeros(&[3, 2]));
    let ce = cross_entropy(&mut g, logits, &[0, 1, 1]).unwrap();
    let ce_err = (g.value(ce).item().unwrap() - std::f64::consts::LN_2).abs();

    let b = g.constant(Tensor::new(&[2, 1, 1], vec![1.0, 2.0]).unwrap());
    let gm = gram_matrix(&mut g, b).unwrap();
    let gram_err = g
        .value(gm)
        .data()
        .iter()
        .zip([0.5, 1.0, 1.0, 2.0])
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max);

    let mut prng = Prng::new(77);
    let mut auc_err: f64 = 0.0;
    for _ in 0..100 {
        let n = 20 + prng.below(180);
        let mut labels: Vec<u8> = (0..n).map(|_| (prng.uniform() < 0.4) as u8).collect();
        labels[0] = NEGATIVE;
        labels[1] = POSITIVE;
        // Coarse scores so that ties occur.
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| ((prng.normal() + l as f64) * 4.0).round() / 4.0)
            .collect();
        let (_, auc) = roc_auc(&scores, &labels).unwrap();
        auc_err = auc_err.max((auc - pairwise_auc(&scores, &labels)).abs());
    }
    let elapsed = start.elapsed();
    let pass = kl0 == 0.0
        && kl1 == 0.5
        && ce_err <= 1e-9
        && gram_err <= 1e-12
        && auc_err <= 1e-9
        && elapsed <= ORACLE_BUDGET;
    gate.record(
        2,
        "loss oracles",
        pass,
        format!(
            "KL(0,0)={kl0} KL(1,0)={kl1} |CE-ln2|={ce_err:.1e} gram err={gram_err:.1e} max AUC err={auc_err:.1e} over 100 instances"
        ),
    );
}

fn transplant(gate: &mut Gate, work: &Path) {
    let cfg = EncoderConfig::default();
    let source = ClassifierModel::build(&cfg, &mut Prng::new(5)).unwrap();
    let vae = VaeModel::from_encoder(&source, 32, &mut Prng::new(6)).unwrap();
    let composed = compose_adapted(&source, &vae).unwrap();
    let (c, h, w) = cfg.input_shape;
    let mut prng = Prng::new(7);
    let probe: Tensor<f32> = Tensor::new(&[64, c, h, w], (0..64 * c * h * w).map(|_| prng.uniform() as f32).collect()).unwrap();
    let a = source.forward(&probe).unwrap();
    let b = composed.forward(&probe).unwrap();
    let bit_exact = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());

    let dir = work.join("transplant");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    for (name, preset, seed) in [("src.satd", "source", "11"), ("tgt.satd", "shiftB", "12")] {
        ok(&["gen-data", "--out", &s(&dir.join(name)), "--n", "48", "--size", "16", "--style-preset", preset, "--seed", seed]);
    }
    ok(&[
        "run-direction", "--source-data", &s(&dir.join("src.satd")), "--target-data", &s(&dir.join("tgt.satd")),
        "--config", &s(&dir.join("tiny.toml")), "--out-dir", &s(&dir.join("out")),
    ]);
    let trained = ClassifierModel::from_checkpoint(&Checkpoint::load(&dir.join("out/source.ckpt")).unwrap(), None).unwrap();
    let adapted = VaeModel::from_checkpoint(&Checkpoint::load(&dir.join("out/adapted.ckpt")).unwrap(), None).unwrap();
    let final_model = compose_adapted(&trained, &adapted).unwrap();
    let head_kept = trained.head_digest() == final_model.head_digest();
    let encoder_moved = trained.encoder_digest() != final_model.encoder_digest();
    gate.record(
        3,
        "transplant identity",
        bit_exact && head_kept && encoder_moved,
        format!("64-image probe bit-exact: {bit_exact}; head digest unchanged through run-direction: {head_kept}"),
    );
}

struct Arms {
    without: MetricsReport,
    with: MetricsReport,
}

/// Adapts `ckpt` to `target` and evaluates both arms.
fn adapt_and_eval(dir: &Path, ckpt: &Path, target: &Path, seed: u64, trace: Option<&Path>) -> Arms {
    let cfg = s(&desk_config());
    let adapted = dir.join("adapted.ckpt");
    let seed = seed.to_string();
    let args = [
        "adapt", "--source-checkpoint", &s(ckpt), "--target-data", &s(target), "--config", &cfg,
        "--out-checkpoint", &s(&adapted), "--log", &s(&dir.join("adapt.csv")), "--seed", &seed,
    ];
    let out = satl(&args, trace);
    assert!(out.status.success(), "adapt failed: {}", String::from_utf8_lossy(&out.stderr));
    let eval = |extra: &[&str], name: &str| {
        let m = dir.join(format!("{name}.csv"));
        let mut args = vec![
            "eval".to_string(), "--checkpoint".into(), s(ckpt), "--data".into(), s(target), "--config".into(), cfg.clone(),
            "--out-metrics".into(), s(&m), "--out-roc".into(), s(&dir.join(format!("{name}_roc.csv"))),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        read_metrics_csv(&m).unwrap().remove(0)
    };
    Arms {
        without: eval(&[], "wo"),
        with: eval(&["--adapted-encoder", &s(&adapted)], "w"),
    }
}

fn gen(dir: &Path, name: &str, preset: StylePreset, seed: u64) -> PathBuf {
    let path = dir.join(name);
    ok(&[
        "gen-data", "--out", &s(&path), "--n", N_IMAGES, "--size", "64",
        "--style-preset", preset.name(), "--seed", &seed.to_string(),
    ]);
    path
}

fn directions(gate: &mut Gate, work: &Path) {
    let names = ["balanced->shiftA", "balanced->shiftB", "balanced->skewed", "skewed->balanced"];
    let mut runs: Vec<Vec<Arms>> = names.iter().map(|_| Vec::new()).collect();
    let mut control = Vec::new();
    let mut trace_ok = None;
    let start = Instant::now();
    for seed in SEEDS {
        let dir = work.join(format!("seed{seed}"));
        fs::create_dir_all(&dir).unwrap();
        let balanced = gen(&dir, "balanced.satd", StylePreset::Source, 1000 + seed);
        let skewed = gen(&dir, "skewed.satd", StylePreset::Skewed, 2000 + seed);
        let targets = [
            gen(&dir, "shiftA.satd", StylePreset::ShiftA, 3000 + seed),
            gen(&dir, "shiftB.satd", StylePreset::ShiftB, 4000 + seed),
            gen(&dir, "skewed_target.satd", StylePreset::Skewed, 5000 + seed),
            gen(&dir, "balanced_target.satd", StylePreset::Source, 6000 + seed),
        ];
        let matched = gen(&dir, "matched.satd", StylePreset::Source, 7000 + seed);
        let mut models = Vec::new();
        for (data, name) in [(&balanced, "balanced.ckpt"), (&skewed, "skewed.ckpt")] {
            let ckpt = dir.join(name);
            ok(&[
                "train-source", "--data", &s(data), "--config", &s(&desk_config()), "--out-checkpoint", &s(&ckpt),
                "--log", &s(&dir.join(format!("{name}.csv"))), "--seed", &seed.to_string(),
            ]);
            models.push(ckpt);
        }
        for (i, target) in targets.iter().enumerate() {
            let ckpt = if i == 3 { &models[1] } else { &models[0] };
            let run_dir = dir.join(format!("dir{i}"));
            fs::create_dir_all(&run_dir).unwrap();
            let trace = (seed == SEEDS[0] && i == 0).then(|| run_dir.join("trace.txt"));
            let arms = adapt_and_eval(&run_dir, ckpt, target, seed, trace.as_deref());
            if let Some(t) = trace {
                trace_ok = Some(source_free_trace(&t, ckpt, target, &run_dir, &balanced));
            }
            println!(
                "  seed {seed} {:<17} w/o acc {:.3} f1 {:.3} auc {:.3} | w/ acc {:.3} f1 {:.3} auc {:.3}",
                names[i], arms.without.accuracy, arms.without.f1, arms.without.auc, arms.with.accuracy, arms.with.f1, arms.with.auc
            );
            runs[i].push(arms);
        }
        let run_dir = dir.join("control");
        fs::create_dir_all(&run_dir).unwrap();
        let arms = adapt_and_eval(&run_dir, &models[0], &matched, seed, None);
        println!(
            "  seed {seed} control           w/o acc {:.3} | w/ acc {:.3}",
            arms.without.accuracy, arms.with.accuracy
        );
        control.push(arms);
    }
    let elapsed = start.elapsed();

    let mut improved = 0;
    let mut worst_drop: f64 = f64::NEG_INFINITY;
    let mut detail = Vec::new();
    for (name, arms) in names.iter().zip(&runs) {
        let f1_wo = median(arms.iter().map(|a| a.without.f1).collect());
        let f1_w = median(arms.iter().map(|a| a.with.f1).collect());
        let acc_wo = median(arms.iter().map(|a| a.without.accuracy).collect());
        let acc_w = median(arms.iter().map(|a| a.with.accuracy).collect());
        if f1_w > f1_wo {
            improved += 1;
        }
        worst_drop = worst_drop.max(acc_wo - acc_w);
        detail.push(format!("{name} F1 {f1_wo:.3}->{f1_w:.3} acc {acc_wo:.3}->{acc_w:.3}"));
    }
    gate.record(
        4,
        "directional improvement",
        improved >= F1_DIRECTIONS_REQUIRED && worst_drop <= MAX_ACCURACY_DROP && elapsed <= DIRECTIONS_BUDGET,
        format!(
            "median F1 improved in {improved}/4 (need {F1_DIRECTIONS_REQUIRED}), worst median accuracy drop {worst_drop:.3} (max {MAX_ACCURACY_DROP}), {:.0}s; {}",
            elapsed.as_secs_f64(),
            detail.join("; ")
        ),
    );

    let changes: Vec<f64> = control.iter().map(|a| (a.with.accuracy - a.without.accuracy).abs()).collect();
    let worst = changes.iter().copied().fold(0.0, f64::max);
    gate.record(
        5,
        "no-shift control",
        worst <= MAX_CONTROL_CHANGE,
        format!(
            "largest |accuracy change| over {} seeds {worst:.3} (max {MAX_CONTROL_CHANGE})",
            changes.len()
        ),
    );

    let help = ok(&["adapt", "--help"]);
    let no_flag = !help.to_lowercase().contains("source-data") && !help.contains("--data");
    let (trace_pass, trace_detail) = trace_ok.unwrap();
    gate.record(
        7,
        "source-freedom",
        no_flag && trace_pass,
        format!("adapt exposes no source-data flag: {no_flag}; {trace_detail}"),
    );
}

fn source_free_trace(trace: &Path, ckpt: &Path, target: &Path, out: &Path, source_pack: &Path) -> (bool, String) {
    let text = fs::read_to_string(trace).unwrap();
    let touched: BTreeSet<PathBuf> = text
        .lines()
        .map(|l| PathBuf::from(l.split_once('\t').unwrap().1))
        .collect();
    let allowed: BTreeSet<PathBuf> = [
        ckpt.to_path_buf(),
        target.to_path_buf(),
        desk_config(),
        out.join("adapted.ckpt"),
        out.join("adapt.csv"),
    ]
    .into_iter()
    .collect();
    let stray: Vec<&PathBuf> = touched.difference(&allowed).collect();
    let pass = stray.is_empty() && !touched.contains(source_pack) && touched.contains(ckpt) && touched.contains(target);
    (
        pass,
        format!("adapt touched {} paths, {} outside checkpoint/target/config/outputs", touched.len(), stray.len()),
    )
}

fn determinism(gate: &mut Gate, work: &Path) {
    let run = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let dir = work.join(format!("det-{tag}"));
        fs::create_dir_all(&dir).unwrap();
        let p = |n: &str| s(&dir.join(n));
        fs::write(dir.join("tiny.toml"), TINY).unwrap();
        ok(&["gen-data", "--out", &p("src.satd"), "--n", "40", "--size", "16", "--seed", "3"]);
        ok(&["gen-data", "--out", &p("tgt.satd"), "--n", "40", "--size", "16", "--seed", "4", "--style-preset", "shiftA"]);
        ok(&["train-source", "--data", &p("src.satd"), "--config", &p("tiny.toml"), "--out-checkpoint", &p("s.ckpt"), "--log", &p("train.csv")]);
        ok(&[
            "adapt", "--source-checkpoint", &p("s.ckpt"), "--target-data", &p("tgt.satd"), "--config", &p("tiny.toml"),
            "--out-checkpoint", &p("a.ckpt"), "--log", &p("adapt.csv"),
        ]);
        ok(&[
            "eval", "--checkpoint", &p("s.ckpt"), "--adapted-encoder", &p("a.ckpt"), "--data", &p("tgt.satd"),
            "--config", &p("tiny.toml"), "--out-metrics", &p("m.csv"), "--out-roc", &p("roc.csv"), "--svg", &p("roc.svg"),
        ]);
        ok(&[
            "run-direction", "--source-data", &p("src.satd"), "--target-data", &p("tgt.satd"), "--config", &p("tiny.toml"),
            "--out-dir", &p("out"), "--name", "det",
        ]);
        let mut files = Vec::new();
        for rel in [
            "src.satd", "tgt.satd", "s.ckpt", "train.csv", "a.ckpt", "adapt.csv", "m.csv", "roc.csv", "roc.svg",
            "out/source.ckpt", "out/adapted.ckpt", "out/train.csv", "out/adapt.csv", "out/metrics.csv",
            "out/roc_wo.csv", "out/roc_w.csv", "out/roc.svg",
        ] {
            files.push((rel.to_string(), fs::read(dir.join(rel)).unwrap()));
        }
        files
    };
    let first = run("a");
    let second = run("b");
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();

    let mut idempotent = true;
    for ckpt in ["s.ckpt", "a.ckpt", "out/source.ckpt", "out/adapted.ckpt"] {
        let path = work.join("det-a").join(ckpt);
        let bytes = fs::read(&path).unwrap();
        let copy = work.join("resaved.ckpt");
        Checkpoint::load(&path).unwrap().save(&copy).unwrap();
        idempotent &= fs::read(&copy).unwrap() == bytes;
    }
    gate.record(
        6,
        "determinism and persistence",
        differing.is_empty() && idempotent,
        format!(
            "{} outputs compared across two runs, differing: {differing:?}; save->load->save byte-identical: {idempotent}",
            first.len()
        ),
    );
}

#[test]
fn acceptance() {
    let work = TempDir::new().unwrap();
    let mut gate = Gate { lines: Vec::new() };
    gradients(&mut gate);
    loss_oracles(&mut gate);
    transplant(&mut gate, work.path());
    determinism(&mut gate, work.path());
    directions(&mut gate, work.path());

    gate.lines.sort_by_key(|l| l.0);
    println!();
    for (_, _, line) in &gate.lines {
        println!("{line}");
    }
    let failed: Vec<&str> = gate.lines.iter().filter(|l| !l.1).map(|l| l.2.as_str()).collect();
    assert!(failed.is_empty(), "{} criteria failed:\n{}", failed.len(), failed.join("\n"));
}
