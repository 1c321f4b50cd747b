//! End-to-end runs of the `bbas` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bbas::boxes::load_monitor;
use bbas::store::write_store;
use bbas::synthetic::{synthetic_stores, SyntheticConfig};
use tempfile::TempDir;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let stores = synthetic_stores(&SyntheticConfig {
            train_per_class: 60,
            test_per_class: 40,
            ..Default::default()
        })
        .unwrap();
        write_store(&stores.train, dir.path().join("train")).unwrap();
        write_store(&stores.test, dir.path().join("test")).unwrap();
        write_store(&stores.ood, dir.path().join("ood")).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn bbas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbas"))
        .args(args)
        .env_remove("BBAS_THREADS")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let out = bbas(args);
    assert!(out.status.success(), "bbas {args:?} failed:\n{}", stderr(&out));
    out
}

fn fit(fx: &Fixture, out: &str, extra: &[&str]) {
    let (train, out) = (fx.arg("train"), fx.arg(out));
    let mut args = vec!["fit", "--train", &train, "--out", &out];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn fit_score_eval_pipeline() {
    let fx = Fixture::new();
    fit(&fx, "monitor.json", &[]);
    let out = ok(&[
        "score",
        "--monitor",
        &fx.arg("monitor.json"),
        "--data",
        &fx.arg("test"),
        "--out",
        &fx.arg("ind.csv"),
    ]);
    let log = stderr(&out);
    assert!(log.contains("Single anomaly score calculation"), "{log}");
    ok(&[
        "score",
        "--monitor",
        &fx.arg("monitor.json"),
        "--data",
        &fx.arg("ood"),
        "--out",
        &fx.arg("ood.csv"),
    ]);

    let csv = std::fs::read_to_string(fx.path("ind.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,predicted_class,ec,ed,agg_ec,agg_ed"));
    assert_eq!(lines.count(), 120);

    ok(&[
        "eval",
        "--ind",
        &fx.arg("ind.csv"),
        "--ood",
        &format!("shifted={}", fx.arg("ood.csv")),
        "--out",
        &fx.arg("eval.json"),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(fx.path("eval.json")).unwrap()).unwrap();
    assert_eq!(report["ood_sets"][0]["name"], "shifted");
    for v in ["ec", "ed", "agg_ec", "agg_ed"] {
        let auroc = report["ood_sets"][0]["variants"][v]["auroc"].as_f64().unwrap();
        assert!(auroc >= 0.95, "{v}: {auroc}");
        assert!(report["average"][v]["fpr95"].as_f64().is_some());
    }
}

#[test]
fn fit_logs_stage_timings() {
    let fx = Fixture::new();
    let out = ok(&["fit", "--train", &fx.arg("train"), "--out", &fx.arg("m.json")]);
    let log = stderr(&out);
    for stage in [
        "Feature loading",
        "Monitoring variables",
        "Bounding-box construction",
        "Clustering",
        "Bounding-box calculation",
    ] {
        assert!(log.contains(stage), "missing {stage}: {log}");
    }
}

#[test]
fn score_variant_subset() {
    let fx = Fixture::new();
    fit(&fx, "m.json", &[]);
    ok(&[
        "score",
        "--monitor",
        &fx.arg("m.json"),
        "--data",
        &fx.arg("test"),
        "--out",
        &fx.arg("s.csv"),
        "--variants",
        "ed",
    ]);
    let csv = std::fs::read_to_string(fx.path("s.csv")).unwrap();
    // Fixed header; unrequested variants are left empty.
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,predicted_class,ec,ed,agg_ec,agg_ed"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!((first[2], first[4], first[5]), ("", "", ""));
    assert!(first[3].parse::<f64>().is_ok());
}

#[test]
fn fixed_single_cluster() {
    let fx = Fixture::new();
    fit(&fx, "m.json", &["--clusters", "1"]);
    let m = load_monitor(fx.path("m.json")).unwrap();
    assert!(m.classes.iter().all(|c| c.len() == 1));
}

#[test]
fn flags_override_config_file() {
    let fx = Fixture::new();
    std::fs::write(
        fx.path("cfg.json"),
        r#"{"clusters": 2, "linkage": "single", "no_such_key_is_fine": null}"#,
    )
    .unwrap();
    // Unknown keys are rejected.
    let out = bbas(&[
        "fit",
        "--train",
        &fx.arg("train"),
        "--out",
        &fx.arg("m.json"),
        "--config",
        &fx.arg("cfg.json"),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    std::fs::write(fx.path("cfg.json"), r#"{"clusters": 2, "linkage": "single"}"#).unwrap();
    fit(&fx, "file.json", &["--config", &fx.arg("cfg.json")]);
    let m = load_monitor(fx.path("file.json")).unwrap();
    assert!(m.classes.iter().all(|c| c.len() == 2));
    assert_eq!(
        m.configs.clustering.algorithm,
        bbas::clustering::Algorithm::AgglomerativeSingle
    );

    fit(&fx, "flag.json", &["--config", &fx.arg("cfg.json"), "--clusters", "4"]);
    let m = load_monitor(fx.path("flag.json")).unwrap();
    assert!(m.classes.iter().all(|c| c.len() == 4));
    assert_eq!(
        m.configs.clustering.algorithm,
        bbas::clustering::Algorithm::AgglomerativeSingle
    );
}

#[test]
fn kmeans_and_layer_selection() {
    let fx = Fixture::new();
    fit(
        &fx,
        "m.json",
        &[
            "--algorithm",
            "kmeans",
            "--layers",
            "conv2",
            "--no-penultimate",
            "--seed",
            "3",
        ],
    );
    let m = load_monitor(fx.path("m.json")).unwrap();
    assert_eq!(m.width(), 24);
    assert_eq!(m.configs.clustering.metric, bbas::clustering::Metric::Euclidean);
}

#[test]
fn layout_mismatch_is_a_validation_error() {
    let fx = Fixture::new();
    fit(&fx, "m.json", &[]);
    let small = synthetic_stores(&SyntheticConfig {
        channels: 4,
        train_per_class: 2,
        test_per_class: 2,
        ..Default::default()
    })
    .unwrap();
    write_store(&small.test, fx.path("narrow")).unwrap();
    let out = bbas(&[
        "score",
        "--monitor",
        &fx.arg("m.json"),
        "--data",
        &fx.arg("narrow"),
        "--out",
        &fx.arg("s.csv"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("conv1"), "{}", stderr(&out));
    assert!(!fx.path("s.csv").exists());
}

fn drop_logits(store: &Path) {
    let manifest = store.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    let obj = m.as_object_mut().unwrap();
    obj.remove("logits_file");
    obj.remove("logits_kind");
    std::fs::write(&manifest, serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    std::fs::remove_file(store.join("logits.bin")).unwrap();
}

#[test]
fn missing_logits_names_the_file() {
    let fx = Fixture::new();
    fit(&fx, "m.json", &[]);
    drop_logits(&fx.path("test"));
    ok(&["validate-store", &fx.arg("test")]);
    let out = bbas(&[
        "score",
        "--monitor",
        &fx.arg("m.json"),
        "--data",
        &fx.arg("test"),
        "--out",
        &fx.arg("s.csv"),
        "--variants",
        "agg_ec",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("logits.bin"), "{}", stderr(&out));
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    // Usage errors count as validation failures.
    assert_eq!(bbas(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        bbas(&[
            "fit",
            "--train",
            &fx.arg("train"),
            "--out",
            &fx.arg("m.json"),
            "--epsilon",
            "-1"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(bbas(&["validate-store", &fx.arg("missing")]).status.code(), Some(2));
    assert_eq!(
        bbas(&[
            "score",
            "--monitor",
            &fx.arg("nope.json"),
            "--data",
            &fx.arg("test"),
            "--out",
            &fx.arg("s.csv")
        ])
        .status
        .code(),
        Some(2)
    );

    // Truncated data file: the manifest reads fine, the contents do not validate.
    let f = fx.path("test").join("conv1.f.bin");
    let bytes = std::fs::read(&f).unwrap();
    std::fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
    let out = bbas(&["validate-store", &fx.arg("test")]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("conv1"), "{}", stderr(&out));
}

#[test]
fn thread_count_does_not_change_scores() {
    let fx = Fixture::new();
    fit(&fx, "m.json", &[]);
    fit(&fx, "m2.json", &["--threads", "3"]);
    assert_eq!(
        std::fs::read(fx.path("m.json")).unwrap(),
        std::fs::read(fx.path("m2.json")).unwrap()
    );
    let score = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_bbas"))
            .args([
                "score",
                "--monitor",
                &fx.arg("m.json"),
                "--data",
                &fx.arg("ood"),
                "--out",
                &fx.arg(out),
            ])
            .env("BBAS_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(fx.path(out)).unwrap()
    };
    assert_eq!(score("1", "a.csv"), score("6", "b.csv"));
}

#[test]
fn two_moons_demo_small_grid() {
    let fx = Fixture::new();
    ok(&[
        "demo",
        "two-moons",
        "--out",
        &fx.arg("moons"),
        "--grid",
        "40",
        "--clusters",
        "10",
    ]);
    let grid = std::fs::read_to_string(fx.path("moons").join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 40 * 40);
    assert!(grid.starts_with("x1,x2,box_id\n"));
    let m = load_monitor(fx.path("moons").join("monitor.json")).unwrap();
    assert_eq!(m.total_boxes(), 10);
    assert_eq!(m.width(), 64);
}
