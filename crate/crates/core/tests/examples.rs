//! Every example in `examples/` runs to completion with small settings.

use bbas::geometry::{TwoMoonsConfig, WeightSource};
use bbas::synthetic::SyntheticConfig;

// Each example is compiled as a module here; `main` goes unused.
#[allow(dead_code)]
#[path = "../examples/activation_regions.rs"]
mod activation_regions;
#[allow(dead_code)]
#[path = "../examples/clustering.rs"]
mod clustering;
#[allow(dead_code)]
#[path = "../examples/conv_features.rs"]
mod conv_features;
#[allow(dead_code)]
#[path = "../examples/evaluate_scores.rs"]
mod evaluate_scores;
#[allow(dead_code)]
#[path = "../examples/exceedance_scores.rs"]
mod exceedance_scores;
#[allow(dead_code)]
#[path = "../examples/fit_and_score.rs"]
mod fit_and_score;
#[allow(dead_code)]
#[path = "../examples/incremental_update.rs"]
mod incremental_update;
#[allow(dead_code)]
#[path = "../examples/synthetic_stores.rs"]
mod synthetic_stores;
#[allow(dead_code)]
#[path = "../examples/train_two_moons.rs"]
mod train_two_moons;
#[allow(dead_code)]
#[path = "../examples/two_moons.rs"]
mod two_moons;

fn small() -> SyntheticConfig {
    SyntheticConfig {
        train_per_class: 30,
        test_per_class: 20,
        ..Default::default()
    }
}

#[test]
fn activation_regions_runs() {
    activation_regions::run_example().unwrap();
}

#[test]
fn clustering_agrees_on_separated_points() {
    let (agg, km) = clustering::run_example().unwrap();
    assert_eq!(agg, km);
}

#[test]
fn conv_features_runs() {
    conv_features::run_example().unwrap();
}

#[test]
fn evaluate_scores_hand_case() {
    let (a, fpr) = evaluate_scores::run_example().unwrap();
    assert_eq!(a, 0.75);
    assert!(fpr < 0.5);
}

#[test]
fn exceedance_scores_runs() {
    exceedance_scores::run_example().unwrap();
}

#[test]
fn fit_and_score_separates() {
    for (name, r) in fit_and_score::run_example(&small()).unwrap() {
        assert!(r.auroc >= 0.95, "{name}: {}", r.auroc);
    }
}

#[test]
fn incremental_update_covers_new_samples() {
    let (_, after) = incremental_update::run_example().unwrap();
    assert_eq!(after, 0);
}

#[test]
fn synthetic_stores_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let paths = synthetic_stores::run_example(dir.path(), &small()).unwrap();
    assert_eq!(paths.len(), 3);
    assert!(paths.iter().all(|p| p.join("manifest.json").is_file()));
}

#[test]
fn train_two_moons_reduces_loss() {
    let (_, short) = train_two_moons::run_example(10, None).unwrap();
    let (spec, long) = train_two_moons::run_example(200, None).unwrap();
    assert!(long < short);
    assert_eq!(spec.widths(), vec![2, 32, 32, 1]);
}

#[test]
fn two_moons_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TwoMoonsConfig {
        grid_resolution: 60,
        weights: WeightSource::Shipped,
        ..Default::default()
    };
    let out = two_moons::run_example(dir.path(), &cfg).unwrap();
    assert_eq!(out.grid_labels.len(), 3600);
    for f in [
        "grid.csv",
        "boundaries.csv",
        "samples.csv",
        "monitor.json",
        "weights.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}
