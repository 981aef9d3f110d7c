//! Exit-code contract and printed output of every subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use more_core::monarch::InitMode;
use more_core::numerics::write_matrix;
use more_core::projection::worst_case_instance;
use more_core::{Checkpoint, DenseMatrix, MonarchAdapter, MonarchConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn more(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_more"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|t| t.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("{key} missing in {line:?}"))
}

#[test]
fn verify_core_passes() {
    let o = more(&["verify", "--suite", "core"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.contains("dense_equivalence")).unwrap();
    let worst: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(worst < 1e-10);
}

#[test]
fn verify_theory_counts_bound_checks() {
    let o = more(&["verify", "--suite", "theory"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs: usize = stdout(&o)
        .lines()
        .filter(|l| l.starts_with("theory"))
        .map(|l| l.split_whitespace().nth(3).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(runs, 300);
    assert!(stdout(&o).contains("0 violations"));
}

#[test]
fn verify_rejects_unknown_suite() {
    let o = more(&["verify", "--suite", "everything"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("possible values"));
}

#[test]
fn verify_reports_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    for p in [&a, &b] {
        assert_eq!(
            code(&more(&["verify", "--suite", "grad", "--seed", "7", "--out", s(p)])),
            0
        );
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.contains("\"seed\": 7"));
}

#[test]
fn project_worst_case_ratio() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "w.txt");
    let cfg = MonarchConfig::new(16, 4, 4).unwrap();
    write_matrix(&input, &worst_case_instance(&cfg, 3).unwrap()).unwrap();
    let ckpt = path(&dir, "p.json");
    let o = more(&[
        "project",
        "--input",
        s(&input),
        "--blocks",
        "4",
        "--block-rank",
        "4",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("ratio 0.750000000"), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("    ")).count(), 16);
    assert!(Checkpoint::load(&ckpt).unwrap().to_adapter().is_ok());
}

#[test]
fn project_realizable_input_is_fixed() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "m.txt");
    let cfg = MonarchConfig::new(12, 3, 2).unwrap();
    let a = MonarchAdapter::random_normal(cfg, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    write_matrix(&input, &a.to_dense()).unwrap();
    let o = more(&["project", "--input", s(&input), "--blocks", "3", "--block-rank", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("ratio")).unwrap().to_string();
    let ratio: f64 = line[6..].parse().unwrap();
    assert!(ratio < 1e-15);
}

#[test]
fn project_input_errors() {
    let dir = TempDir::new().unwrap();
    let odd = path(&dir, "odd.txt");
    write_matrix(&odd, &DenseMatrix::identity(15)).unwrap();
    assert_eq!(
        code(&more(&[
            "project",
            "--input",
            s(&odd),
            "--blocks",
            "4",
            "--block-rank",
            "1"
        ])),
        2
    );

    let junk = path(&dir, "junk.txt");
    std::fs::write(&junk, "2,2\n1 2\nthree 4\n").unwrap();
    assert_eq!(
        code(&more(&[
            "project",
            "--input",
            s(&junk),
            "--blocks",
            "1",
            "--block-rank",
            "1"
        ])),
        2
    );
    assert_eq!(
        code(&more(&[
            "project",
            "--input",
            "/no/such/file",
            "--blocks",
            "1",
            "--block-rank",
            "1"
        ])),
        2
    );
}

#[test]
fn train_demo_recovers_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b, ckpt) = (path(&dir, "a.csv"), path(&dir, "b.csv"), path(&dir, "c.json"));
    let demo = config("planted_monarch.json");
    let o = more(&["train", "--config", &demo, "--out", s(&a), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(field(&stdout(&o), "recovery_error") < 1e-2);
    assert_eq!(code(&more(&["train", "--config", &demo, "--out", s(&b)])), 0);

    let strip = |p: &Path| {
        let text = std::fs::read_to_string(p).unwrap();
        text.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert!(std::fs::read_to_string(&a)
        .unwrap()
        .starts_with("task,adapter,n,blocks,block_rank,params,flops"));

    let o = more(&["stats", "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("total 512"), "{out}");
    for line in out.lines().filter(|l| l.starts_with("factor_")) {
        for key in ["mean", "std", "excess_kurtosis"] {
            assert!(field(line, key).is_finite());
        }
    }
}

#[test]
fn train_errors() {
    let demo = config("planted_monarch.json");
    assert_eq!(code(&more(&["train", "--config", "/no/such/config.json"])), 2);
    assert_eq!(code(&more(&["train", "--config", &demo, "--set", "n=15"])), 2);
    assert_eq!(code(&more(&["train", "--config", &demo, "--set", "optimiser.lr=1"])), 2);
    assert_eq!(code(&more(&["train", "--config", &demo, "--set", "steps=lots"])), 2);

    let o = more(&[
        "train",
        "--config",
        &demo,
        "--set",
        "optimizer.lr=1e9",
        "--set",
        "steps=100",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("diverged at step"), "{}", stderr(&o));
}

#[test]
fn sweep_over_block_counts() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "sweep.csv");
    let o = more(&[
        "sweep",
        "--config",
        &config("sweep_blocks.json"),
        "--set",
        "base.steps=20",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 6);
    let blocks: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(blocks, ["1", "2", "4", "8", "16"]);
}

#[test]
fn sweep_skips_invalid_points() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "s.json");
    std::fs::write(
        &cfg,
        r#"{"base":{"task":{"kind":"planted_lowrank","rank":2},"n":16,
            "adapter":{"kind":"lora","rank":2},"steps":10,"batch":8,"samples":32},
            "grid":{"blocks":[2,3],"block_ranks":[2],"lora_ranks":[4]}}"#,
    )
    .unwrap();
    let o = more(&["sweep", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("skipped"));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("final_loss")).count(), 2);
    assert_eq!(code(&more(&["sweep", "--config", "/missing.json"])), 2);
}

#[test]
fn bench_prints_flop_ratio() {
    let o = more(&[
        "bench",
        "--n",
        "4096",
        "--blocks",
        "4",
        "--block-rank",
        "8",
        "--repeats",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("flop ratio 1/256"));

    let o = more(&[
        "bench",
        "--n",
        "64",
        "--blocks",
        "4",
        "--block-rank",
        "4",
        "--batch",
        "8",
        "--repeats",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("monarch") && stdout(&o).contains("dense"));

    assert_eq!(code(&more(&["bench", "--repeats", "0"])), 2);
    assert_eq!(code(&more(&["bench", "--n", "30", "--blocks", "4"])), 2);
}

#[test]
fn stats_on_zero_out_and_corrupt_checkpoints() {
    let dir = TempDir::new().unwrap();
    let cfg = MonarchConfig::new(32, 4, 2).unwrap();
    let adapter = MonarchAdapter::init(cfg, &InitMode::ZeroOut, 42).unwrap();
    let good = path(&dir, "zero.json");
    Checkpoint::from_adapter(&adapter, 42).save(&good).unwrap();
    let o = more(&["stats", "--checkpoint", s(&good)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("factor_out")).unwrap();
    assert!(line.contains(" std=0 "), "{line}");

    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&good).unwrap()).unwrap();
    doc["factor_out"].as_array_mut().unwrap().pop();
    let bad = path(&dir, "bad.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let o = more(&["stats", "--checkpoint", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("factor_out"), "{}", stderr(&o));

    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(&more(&["stats", "--checkpoint", s(&bad)])), 2);
}
