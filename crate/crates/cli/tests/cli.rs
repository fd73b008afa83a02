use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rtkg::kg::{write_entity_types, write_tuples, EntityType};
use rtkg::synthetic::{lag_tuples, LagConfig, CLOSE, OPEN};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/events_10.jsonl")
}

fn rtkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtkg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rtkg(args);
    assert!(
        out.status.success(),
        "rtkg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data rows of a TSV file (no `#` header, no column line).
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

fn tuple_lines(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .count()
}

fn write_lag_graph(dir: &Path, seed: u64) {
    let (quads, types) = lag_tuples(&LagConfig { seed, ..Default::default() }).unwrap();
    write_tuples(&dir.join("tuples.tsv"), Some("lag"), &quads).unwrap();
    let mut labels: Vec<(&String, &String)> = types.iter().collect();
    labels.sort();
    let typed: Vec<(&str, EntityType)> = labels.iter().map(|(l, t)| (l.as_str(), t.parse().unwrap())).collect();
    write_entity_types(&dir.join("entity_types.tsv"), None, typed).unwrap();
}

const SMALL: &str = "
[model]
kind = \"rt-de-rotate\"
static_dim = 8
temporal_dim = 8
relative_dim = 8

[train]
learning_rate = 0.01
dropout = 0.0
neg_time_agnostic = 8
neg_time_dependent = 8
batch_size = 16
total_steps = 40
validation_every = 20
log_every = 20
";

#[test]
fn ingest_fixture_counts() {
    let dir = tempfile::tempdir().unwrap();
    let all = dir.path().join("all");
    let subset = dir.path().join("subset");
    ok(&["ingest", "--events", s(&fixture()), "--all-relations", "--out", s(&all)]);
    ok(&["ingest", "--events", s(&fixture()), "--out", s(&subset)]);
    assert_eq!(tuple_lines(&all.join("tuples.tsv")), 16);
    // Assignment, watch and push relations are outside the default subset.
    assert_eq!(tuple_lines(&subset.join("tuples.tsv")), 10);

    let report: HashMap<String, String> = rows(&all.join("ingest_report.tsv"))
        .into_iter()
        .map(|r| (format!("{}/{}", r[0], r[1]), r[2].clone()))
        .collect();
    assert_eq!(report["events/parsed"], "10");
    assert_eq!(report["events/unmatched"], "1");
    assert_eq!(report["relation/U_AO_A_I"], "2");

    let text = std::fs::read_to_string(all.join("tuples.tsv")).unwrap();
    assert!(text.starts_with("# rtkg "));
    assert!(text.contains("epoch=2019-01-03"));
    assert!(all.join("config.resolved.toml").is_file());
}

#[test]
fn ingest_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("g");
    ok(&["ingest", "--events", s(&empty), "--out", s(&out)]);
    assert_eq!(tuple_lines(&out.join("tuples.tsv")), 0);
    let report = rows(&out.join("ingest_report.tsv"));
    assert!(report.iter().filter(|r| r[0] != "relation").all(|r| r[2] == "0"));
}

#[test]
fn ingest_missing_rules_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = rtkg(&[
        "ingest",
        "--events",
        s(&fixture()),
        "--rules",
        s(&dir.path().join("nope.tsv")),
        "--out",
        s(&dir.path().join("g")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.tsv"));
}

#[test]
fn unknown_config_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nlearnig_rate = 0.1\n").unwrap();
    let out = rtkg(&["--config", s(&cfg), "stats", "--data", s(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn sampling_split_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    std::fs::create_dir_all(&g).unwrap();
    write_lag_graph(&g, 0);

    let snow = dir.path().join("snow");
    let snow2 = dir.path().join("snow2");
    for out in [&snow, &snow2] {
        ok(&["sample-snowball", "--data", s(&g), "--out", s(out), "--sample-size", "60", "--growth-size", "3", "--initial-size", "2", "--seed", "4"]);
    }
    assert!(tuple_lines(&snow.join("entity_types.tsv")) >= 60);
    assert_eq!(
        std::fs::read(snow.join("tuples.tsv")).unwrap(),
        std::fs::read(snow2.join("tuples.tsv")).unwrap()
    );
    // The lag graph has no repositories.
    assert!(!rtkg(&["sample-temporal", "--data", s(&g), "--out", s(&dir.path().join("t"))]).status.success());

    let sp = dir.path().join("split");
    ok(&["split", "--data", s(&g), "--out", s(&sp), "--mode", "interpolated", "--ratios", "0.9,0.05,0.05", "--seed", "3"]);
    assert_eq!(
        [TRAIN, VALID, TEST].map(|f| tuple_lines(&sp.join(f))),
        [720, 40, 40]
    );
    let stats = dir.path().join("stats.tsv");
    ok(&["stats", "--data", s(&sp), "--out", s(&stats)]);
    let r = &rows(&stats)[0];
    assert_eq!(r[1], "800");
    assert_eq!(r[2], "2");
}

const TRAIN: &str = "train.tsv";
const VALID: &str = "valid.tsv";
const TEST: &str = "test.tsv";

fn temporal_split(dir: &Path, seed: u64) -> PathBuf {
    let g = dir.join("g");
    std::fs::create_dir_all(&g).unwrap();
    write_lag_graph(&g, seed);
    let sp = dir.join("split");
    ok(&["split", "--data", s(&g), "--out", s(&sp), "--mode", "extrapolated", "--ratios", "0.8,0.1,0.1"]);
    sp
}

#[test]
fn zero_step_training_then_eval_is_finite_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sp = temporal_split(dir.path(), 0);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let m = dir.path().join("m");
    ok(&["--config", s(&cfg), "train", "--data", s(&sp), "--out", s(&m), "--steps", "0"]);

    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    for e in [&e1, &e2] {
        for mode in ["extrapolated", "time-prediction"] {
            ok(&["eval", "--checkpoint", s(&m.join("model.ckpt")), "--data", s(&sp), "--mode", mode, "--out", s(e)]);
        }
    }
    for f in ["metrics-extrapolated.tsv", "ranks-extrapolated.tsv", "metrics-time-prediction.tsv"] {
        assert_eq!(std::fs::read(e1.join(f)).unwrap(), std::fs::read(e2.join(f)).unwrap(), "{f}");
    }
    let metrics = rows(&e1.join("metrics-time-prediction.tsv"));
    let mrr: f64 = metrics[0][14].parse().unwrap();
    assert!(mrr.is_finite() && mrr > 0.0 && mrr <= 1.0);

    // Zero-initialised importance matrix.
    let imp = dir.path().join("imp.tsv");
    ok(&["export-importance", "--checkpoint", s(&m.join("model.ckpt")), "--out", s(&imp)]);
    let matrix = rows(&imp);
    assert_eq!(matrix.len(), 2);
    assert!(matrix.iter().all(|r| r.len() == 3 && r[1..].iter().all(|v| v == "0")));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sp = temporal_split(dir.path(), 1);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["--config", s(&cfg), "train", "--data", s(&sp), "--out", s(out), "--seed", "5"]);
    }
    for f in ["model.ckpt", "train_log.tsv", "config.resolved.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let snapshot = std::fs::read_to_string(a.join("config.resolved.toml")).unwrap();
    assert!(snapshot.contains("seed = 5"));
}

#[test]
fn export_rejects_models_without_importance() {
    let dir = tempfile::tempdir().unwrap();
    let sp = temporal_split(dir.path(), 2);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let m = dir.path().join("m");
    ok(&["--config", s(&cfg), "train", "--data", s(&sp), "--out", s(&m), "--model", "de-rotate", "--dims", "8,8,0", "--steps", "2"]);
    let out = rtkg(&["export-importance", "--checkpoint", s(&m.join("model.ckpt")), "--out", s(&dir.path().join("x.tsv"))]);
    assert!(!out.status.success());
}

#[test]
fn close_attends_to_open_after_lag_training() {
    let dir = tempfile::tempdir().unwrap();
    let sp = temporal_split(dir.path(), 0);
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "[model]\nkind = \"rt-de-rotate\"\nstatic_dim = 16\ntemporal_dim = 16\nrelative_dim = 16\n\
         [train]\nlearning_rate = 0.01\ndropout = 0.0\nneg_time_agnostic = 8\nneg_time_dependent = 16\n\
         batch_size = 32\ntotal_steps = 3000\nlog_every = 1000\n",
    )
    .unwrap();
    let m = dir.path().join("m");
    ok(&["--config", s(&cfg), "train", "--data", s(&sp), "--out", s(&m), "--train-on-validation"]);
    let e = dir.path().join("e");
    ok(&["eval", "--checkpoint", s(&m.join("model.ckpt")), "--data", s(&sp), "--mode", "time-prediction", "--rerank", "none", "--out", s(&e)]);
    let mrr: f64 = rows(&e.join("metrics-time-prediction.tsv"))[0][14].parse().unwrap();
    assert!(mrr > 0.9, "time-prediction MRR {mrr}");

    let imp = dir.path().join("imp.tsv");
    ok(&["export-importance", "--checkpoint", s(&m.join("model.ckpt")), "--out", s(&imp)]);
    let text = std::fs::read_to_string(&imp).unwrap();
    let columns: Vec<&str> = text.lines().find(|l| l.starts_with("relation")).unwrap().split('\t').skip(1).collect();
    let close = rows(&imp).into_iter().find(|r| r[0] == CLOSE).unwrap();
    let values: Vec<f64> = close[1..].iter().map(|v| v.parse().unwrap()).collect();
    let argmax = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    assert_eq!(columns[argmax], OPEN, "close row {values:?} over {columns:?}");
}

#[test]
fn grid_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let sp = temporal_split(dir.path(), 3);
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        format!("{SMALL}\n[grid]\ndropout = [0.0]\nadversarial_temperature = [0.5, 1.0]\nmargin = [6.0]\nlearning_rate = [0.01]\nl3 = [0.0005]\ndims = [[8, 8, 8]]\n"),
    )
    .unwrap();
    let out = dir.path().join("grid");
    ok(&["--config", s(&cfg), "grid", "--data", s(&sp), "--out", s(&out), "--steps", "20", "--validation-every", "10"]);
    let table = rows(&out.join("grid.tsv"));
    assert_eq!(table.len(), 2);
    assert_eq!(table.iter().filter(|r| r.last().unwrap() == "*").count(), 1);
    assert!(out.join("best.ckpt").is_file());
}
