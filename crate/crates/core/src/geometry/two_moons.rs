//! Two-moons regression demo: activation regions and cluster-wise boxes in the plane.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lemmas::{fragment_bound_check_all, FragmentReport, Grid};
use super::mlp::{mlp_forward, DenseLayer, MlpSpec};
use crate::boxes::{fit_boxes, save_monitor, Monitor};
use crate::clustering::{
    agglomerate, pairwise_distance, Algorithm, ClusterConfig, ClusterCountRule, ClusterPartition, Linkage, Metric,
};
use crate::error::{Error, Result};
use crate::monitor_vars::{ClusterFeature, MonitorVarConfig, MonitoringMatrix};
use crate::store::{FeatureStore, LogitsKind};

const SHIPPED_WEIGHTS: &str = include_str!("../../assets/two_moons_weights.json");

/// Where the demo network comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// The pre-fitted 2-32-32-1 weights bundled with the crate.
    Shipped,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoMoonsConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub noise: f64,
    pub hidden_widths: Vec<usize>,
    pub n_clusters: usize,
    pub grid_resolution: usize,
    pub weights: WeightSource,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TwoMoonsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 500,
            noise: 0.1,
            hidden_widths: vec![32, 32],
            n_clusters: 30,
            grid_resolution: 500,
            weights: WeightSource::Shipped,
            epochs: 4000,
            learning_rate: 0.05,
        }
    }
}

/// Plane region covered by the grid outputs.
pub const GRID_X1: (f64, f64) = (-1.5, 2.5);
pub const GRID_X2: (f64, f64) = (-1.0, 1.5);

pub fn target(x: [f64; 2]) -> f64 {
    (PI * x[0]).sin() + (PI * x[1]).sin()
}

/// Two interleaving half circles with Gaussian jitter, shuffled.
pub fn two_moons_data(n: usize, noise: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let arc = |k: usize, m: usize| if m < 2 { 0.0 } else { PI * k as f64 / (m - 1) as f64 };
    let mut pts: Vec<[f64; 2]> = (0..n_outer)
        .map(|k| [arc(k, n_outer).cos(), arc(k, n_outer).sin()])
        .chain((0..n_inner).map(|k| [1.0 - arc(k, n_inner).cos(), 0.5 - arc(k, n_inner).sin()]))
        .collect();
    if noise > 0.0 {
        let jitter = Normal::new(0.0, noise).expect("positive std");
        for p in &mut pts {
            p[0] += jitter.sample(&mut rng);
            p[1] += jitter.sample(&mut rng);
        }
    }
    pts.shuffle(&mut rng);
    pts
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

/// Full-batch gradient descent on half the mean squared error.
///
/// Returns the fitted network and the final loss.
pub fn train_mlp(
    xs: &[[f64; 2]],
    ys: &[f64],
    hidden: &[usize],
    seed: u64,
    epochs: usize,
    learning_rate: f64,
) -> Result<(MlpSpec, f64)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Invalid(
            "training needs matching, non-empty inputs and targets".into(),
        ));
    }
    let n = xs.len();
    let init = MlpSpec::random(2, hidden, Some(1), seed);
    let mut weights: Vec<DMatrix<f64>> = init
        .hidden
        .iter()
        .chain(init.head.as_ref())
        .map(DenseLayer::matrix)
        .collect();
    let mut biases: Vec<DMatrix<f64>> = init
        .hidden
        .iter()
        .chain(init.head.as_ref())
        .map(|l| DMatrix::from_row_slice(1, l.outputs(), &l.bias))
        .collect();
    let x = DMatrix::from_fn(n, 2, |i, j| xs[i][j]);
    let y = DMatrix::from_column_slice(n, 1, ys);
    let depth = weights.len();
    let mut loss = f64::INFINITY;

    for _ in 0..epochs {
        // rows = samples
        let mut acts = vec![x.clone()];
        let mut pres = Vec::with_capacity(depth);
        for l in 0..depth {
            let mut z = &acts[l] * weights[l].transpose();
            for mut row in z.row_iter_mut() {
                row += &biases[l];
            }
            let a = if l + 1 < depth { relu(&z) } else { z.clone() };
            pres.push(z);
            acts.push(a);
        }
        let err = &acts[depth] - &y;
        loss = 0.5 * err.norm_squared() / n as f64;
        if !loss.is_finite() {
            return Err(Error::Invalid(
                "training diverged; use the shipped weights or a smaller learning rate".into(),
            ));
        }
        let mut delta = err / n as f64;
        for l in (0..depth).rev() {
            let grad_w = delta.transpose() * &acts[l];
            let grad_b = DMatrix::from_fn(1, delta.ncols(), |_, j| delta.column(j).sum());
            if l > 0 {
                let back = &delta * &weights[l];
                delta = back.component_mul(&pres[l - 1].map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            }
            weights[l] -= grad_w * learning_rate;
            biases[l] -= grad_b * learning_rate;
        }
    }

    let to_layer = |w: &DMatrix<f64>, b: &DMatrix<f64>| DenseLayer {
        weights: w.row_iter().map(|r| r.iter().copied().collect()).collect(),
        bias: b.iter().copied().collect(),
    };
    let mut layers: Vec<DenseLayer> = weights.iter().zip(&biases).map(|(w, b)| to_layer(w, b)).collect();
    let head = layers.pop();
    let spec = MlpSpec {
        hidden: layers,
        head,
        seed,
    };
    spec.validate()?;
    Ok((spec, loss))
}

/// The bundled pre-fitted network.
pub fn shipped_weights() -> MlpSpec {
    serde_json::from_str(SHIPPED_WEIGHTS).expect("bundled weights parse")
}

/// Names of the hidden layers in stores built by [`hidden_store`].
pub fn hidden_layer_names(spec: &MlpSpec) -> Vec<String> {
    (1..=spec.hidden.len()).map(|l| format!("h{l}")).collect()
}

/// Feature store of hidden preactivations, one vector layer per hidden layer, single class.
pub fn hidden_store(spec: &MlpSpec, xs: &[[f64; 2]]) -> Result<FeatureStore> {
    let n = xs.len();
    let forwards: Vec<_> = xs.iter().map(|x| mlp_forward(spec, x)).collect::<Result<_>>()?;
    let mut store = FeatureStore::new(n, 1);
    for (l, name) in hidden_layer_names(spec).iter().enumerate() {
        let width = spec.hidden[l].outputs();
        let data = forwards
            .iter()
            .flat_map(|f| f.preactivations[l].iter().map(|&v| v as f32))
            .collect();
        store.push_vector(name, width, data)?;
    }
    store.set_labels(vec![0; n])?;
    store.set_logits(vec![0.0; n], LogitsKind::Logits)?;
    Ok(store)
}

/// Monitoring-variable config selecting every hidden preactivation, unnormalized.
pub fn hidden_var_config(spec: &MlpSpec) -> MonitorVarConfig {
    MonitorVarConfig {
        monitored_layers: Some(Vec::new()),
        conv_features: Vec::new(),
        dense_layers: hidden_layer_names(spec),
        include_penultimate: false,
        ..Default::default()
    }
}

/// Hidden preactivations in double precision, laid out as [`hidden_store`] would.
pub fn hidden_features(spec: &MlpSpec, xs: &[[f64; 2]], var_config: &MonitorVarConfig) -> Result<MonitoringMatrix> {
    let layout = var_config.layout(hidden_store(spec, &[])?.manifest())?;
    let width = layout.width();
    let mut values = Array2::zeros((xs.len(), width));
    for (mut row, x) in values.outer_iter_mut().zip(xs) {
        let phi = mlp_forward(spec, x)?.preactivations.concat();
        row.assign(&ndarray::ArrayView1::from(&phi));
    }
    Ok(MonitoringMatrix { values, layout })
}

/// Groups of identical patterns clustered by complete-linkage Hamming distance.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternClustering {
    /// Sample indices per cluster, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    /// Number of distinct activation patterns.
    pub groups: usize,
    /// Largest complete-linkage merge height (0 when nothing merged).
    pub merge_height: f64,
}

/// Clusters samples by activation pattern: identical patterns first, then
/// complete linkage over the distinct patterns down to `n_clusters`.
pub fn cluster_patterns(psi: &Array2<f64>, n_clusters: usize) -> Result<PatternClustering> {
    let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, row) in psi.outer_iter().enumerate() {
        let key: Vec<u8> = row.iter().map(|&v| u8::from(v > 0.0)).collect();
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let representatives: Vec<usize> = groups.iter().map(|g| g[0]).collect();
    let unique = psi.select(ndarray::Axis(0), &representatives);
    let d = pairwise_distance(unique.view(), Metric::Hamming)?;
    let agg = agglomerate(&d, Linkage::Complete, n_clusters);
    let mut clusters: Vec<Vec<usize>> = agg
        .clusters
        .iter()
        .map(|c| {
            let mut members: Vec<usize> = c.iter().flat_map(|&g| groups[g].iter().copied()).collect();
            members.sort_unstable();
            members
        })
        .collect();
    clusters.sort_by_key(|c| c[0]);
    Ok(PatternClustering {
        clusters,
        groups: groups.len(),
        merge_height: agg.merges.iter().map(|m| m.height).fold(0.0, f64::max),
    })
}

/// Zero-level segment of one hidden unit inside one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    /// 1-based hidden layer index.
    pub layer: usize,
    pub unit: usize,
    pub a: [f64; 2],
    pub b: [f64; 2],
}

fn preactivation_row(spec: &MlpSpec, grid: &Grid, r: usize) -> Vec<Vec<f64>> {
    (0..grid.resolution)
        .map(|c| {
            mlp_forward(spec, &grid.point(r, c))
                .expect("2-input network")
                .preactivations
                .concat()
        })
        .collect()
}

/// Marching squares on the sign of every hidden preactivation.
pub fn relu_boundaries(spec: &MlpSpec, grid: &Grid) -> Vec<BoundarySegment> {
    if grid.resolution < 2 {
        return Vec::new();
    }
    let mut unit_layer = Vec::new();
    for (l, layer) in spec.hidden.iter().enumerate() {
        unit_layer.extend((0..layer.outputs()).map(|u| (l + 1, u)));
    }
    let mut segments: Vec<BoundarySegment> = (0..grid.resolution - 1)
        .into_par_iter()
        .flat_map_iter(|r| {
            let lo = preactivation_row(spec, grid, r);
            let hi = preactivation_row(spec, grid, r + 1);
            let mut out = Vec::new();
            for c in 0..grid.resolution - 1 {
                // corners counter-clockwise from (r, c)
                let corners = [
                    grid.point(r, c),
                    grid.point(r, c + 1),
                    grid.point(r + 1, c + 1),
                    grid.point(r + 1, c),
                ];
                for (k, &(layer, unit)) in unit_layer.iter().enumerate() {
                    let v = [lo[c][k], lo[c + 1][k], hi[c + 1][k], hi[c][k]];
                    let mut hits: Vec<[f64; 2]> = Vec::with_capacity(4);
                    for e in 0..4 {
                        let (i, j) = (e, (e + 1) % 4);
                        if (v[i] > 0.0) != (v[j] > 0.0) {
                            let t = v[i] / (v[i] - v[j]);
                            hits.push([
                                corners[i][0] + t * (corners[j][0] - corners[i][0]),
                                corners[i][1] + t * (corners[j][1] - corners[i][1]),
                            ]);
                        }
                    }
                    for pair in hits.chunks_exact(2) {
                        out.push(BoundarySegment {
                            layer,
                            unit,
                            a: pair[0],
                            b: pair[1],
                        });
                    }
                }
            }
            out
        })
        .collect();
    segments.sort_by_key(|s| (s.layer, s.unit));
    segments
}

/// Index of the first box containing each grid point's hidden features, or −1.
pub fn grid_labels(spec: &MlpSpec, monitor: &Monitor, grid: &Grid) -> Vec<i64> {
    let boxes = monitor.boxes(0);
    (0..grid.resolution)
        .into_par_iter()
        .flat_map_iter(|r| {
            (0..grid.resolution).map(move |c| {
                let phi = mlp_forward(spec, &grid.point(r, c))
                    .expect("2-input network")
                    .preactivations
                    .concat();
                boxes
                    .iter()
                    .position(|b| b.contains_unchecked(&phi))
                    .map_or(-1, |j| j as i64)
            })
        })
        .collect()
}

/// Everything the demo computes.
#[derive(Debug, Clone)]
pub struct TwoMoonsOutput {
    pub config: TwoMoonsConfig,
    pub spec: MlpSpec,
    /// Final training loss when the network was trained here.
    pub training_loss: Option<f64>,
    pub samples: Vec<[f64; 2]>,
    pub targets: Vec<f64>,
    /// Cluster (= box) index of each sample.
    pub sample_cluster: Vec<usize>,
    pub clustering: PatternClustering,
    pub monitor: Monitor,
    pub grid: Grid,
    pub grid_labels: Vec<i64>,
    pub boundaries: Vec<BoundarySegment>,
    pub fragments: Vec<FragmentReport>,
}

pub fn run_two_moons(cfg: &TwoMoonsConfig) -> Result<TwoMoonsOutput> {
    if cfg.n_samples == 0 || cfg.n_clusters == 0 || cfg.hidden_widths.is_empty() {
        return Err(Error::Config(
            "two-moons demo needs samples, clusters and at least one hidden layer".into(),
        ));
    }
    let samples = two_moons_data(cfg.n_samples, cfg.noise, cfg.seed);
    let targets: Vec<f64> = samples.iter().map(|&x| target(x)).collect();
    let (spec, training_loss) = match cfg.weights {
        WeightSource::Shipped => {
            let spec = shipped_weights();
            let shipped: Vec<usize> = spec.hidden.iter().map(DenseLayer::outputs).collect();
            if shipped != cfg.hidden_widths {
                return Err(Error::Config(format!(
                    "shipped weights have hidden widths {shipped:?}; train to use {:?}",
                    cfg.hidden_widths
                )));
            }
            (spec, None)
        }
        WeightSource::Train => {
            let (spec, loss) = train_mlp(
                &samples,
                &targets,
                &cfg.hidden_widths,
                cfg.seed,
                cfg.epochs,
                cfg.learning_rate,
            )?;
            (spec, Some(loss))
        }
    };

    let var_config = hidden_var_config(&spec);
    let phi = hidden_features(&spec, &samples, &var_config)?;
    let psi = phi.values.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let clustering = cluster_patterns(&psi, cfg.n_clusters)?;

    let mut sample_cluster = vec![0; samples.len()];
    for (c, members) in clustering.clusters.iter().enumerate() {
        for &i in members {
            sample_cluster[i] = c;
        }
    }
    let partition = ClusterPartition {
        classes: vec![clustering.clusters.clone()],
        config: ClusterConfig {
            algorithm: Algorithm::AgglomerativeComplete,
            metric: Metric::Hamming,
            count_rule: ClusterCountRule::Fixed(cfg.n_clusters),
            feature: ClusterFeature::ActivationPattern,
            seed: cfg.seed,
            ..Default::default()
        },
    };
    let monitor = fit_boxes(&phi, &partition, &var_config)?;

    let grid = Grid {
        x1: GRID_X1,
        x2: GRID_X2,
        resolution: cfg.grid_resolution,
    };
    let labels = grid_labels(&spec, &monitor, &grid);
    let boundaries = relu_boundaries(&spec, &grid);
    let fragments = fragment_bound_check_all(&spec, monitor.boxes(0), &grid)?;

    Ok(TwoMoonsOutput {
        config: cfg.clone(),
        spec,
        training_loss,
        samples,
        targets,
        sample_cluster,
        clustering,
        monitor,
        grid,
        grid_labels: labels,
        boundaries,
        fragments,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `grid.csv`, `boundaries.csv`, `samples.csv`, `monitor.json` and `weights.json`.
pub fn write_two_moons(out: &TwoMoonsOutput, dir: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut grid = String::from("x1,x2,box_id\n");
    for (p, label) in out.grid.points().zip(&out.grid_labels) {
        writeln!(grid, "{},{},{}", p[0], p[1], label).expect("string write");
    }
    write_text(&dir.join("grid.csv"), &grid)?;

    let mut bounds = String::from("layer,unit,x1a,x2a,x1b,x2b\n");
    for s in &out.boundaries {
        writeln!(
            bounds,
            "{},{},{},{},{},{}",
            s.layer, s.unit, s.a[0], s.a[1], s.b[0], s.b[1]
        )
        .expect("string write");
    }
    write_text(&dir.join("boundaries.csv"), &bounds)?;

    let mut samples = String::from("x1,x2,y,cluster\n");
    for ((p, y), c) in out.samples.iter().zip(&out.targets).zip(&out.sample_cluster) {
        writeln!(samples, "{},{},{},{}", p[0], p[1], y, c).expect("string write");
    }
    write_text(&dir.join("samples.csv"), &samples)?;

    save_monitor(&out.monitor, dir.join("monitor.json"))?;
    let weights = serde_json::to_string_pretty(&out.spec).expect("spec serializes");
    write_text(&dir.join("weights.json"), &(weights + "\n"))
}

/// Runs the demo and writes its outputs to `dir`.
pub fn two_moons_demo(cfg: &TwoMoonsConfig, dir: impl AsRef<Path>) -> Result<TwoMoonsOutput> {
    let out = run_two_moons(cfg)?;
    write_two_moons(&out, dir)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mlp::activation_pattern;

    fn small() -> TwoMoonsConfig {
        TwoMoonsConfig {
            grid_resolution: 60,
            ..Default::default()
        }
    }

    #[test]
    fn data_is_reproducible_and_sized() {
        let a = two_moons_data(101, 0.1, 3);
        assert_eq!(a.len(), 101);
        assert_eq!(a, two_moons_data(101, 0.1, 3));
        assert_ne!(a, two_moons_data(101, 0.1, 4));
        let clean = two_moons_data(4, 0.0, 0);
        assert!(clean.contains(&[1.0, 0.0]) && clean.contains(&[0.0, 0.5]));
    }

    #[test]
    fn shipped_weights_are_2_32_32_1() {
        let spec = shipped_weights();
        spec.validate().unwrap();
        assert_eq!(spec.widths(), vec![2, 32, 32, 1]);
    }

    #[test]
    fn training_reduces_the_loss() {
        let xs = two_moons_data(200, 0.1, 1);
        let ys: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
        let (_, early) = train_mlp(&xs, &ys, &[16, 16], 1, 5, 0.05).unwrap();
        let (_, late) = train_mlp(&xs, &ys, &[16, 16], 1, 500, 0.05).unwrap();
        assert!(late < early, "{late} !< {early}");
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let xs = two_moons_data(50, 0.1, 1);
        let ys: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
        assert!(train_mlp(&xs, &ys, &[8], 1, 200, 1e6).is_err());
    }

    #[test]
    fn samples_lie_in_their_own_box() {
        let out = run_two_moons(&small()).unwrap();
        assert_eq!(out.monitor.total_boxes(), 30);
        let phi = hidden_features(&out.spec, &out.samples, &hidden_var_config(&out.spec)).unwrap();
        for (i, &c) in out.sample_cluster.iter().enumerate() {
            assert!(out.monitor.boxes(0)[c].contains(phi.row(i)).unwrap());
        }
    }

    #[test]
    fn grid_labels_agree_with_box_membership() {
        let out = run_two_moons(&small()).unwrap();
        for (p, &label) in out.grid.points().zip(&out.grid_labels) {
            let phi = mlp_forward(&out.spec, &p).unwrap().preactivations.concat();
            let first = out.monitor.boxes(0).iter().position(|b| b.contains(&phi).unwrap());
            assert_eq!(first.map_or(-1, |j| j as i64), label);
        }
        assert!(out.fragments.iter().all(|f| f.passed));
    }

    #[test]
    fn clusters_respect_the_complete_linkage_height() {
        let out = run_two_moons(&small()).unwrap();
        let patterns: Vec<_> = out
            .samples
            .iter()
            .map(|x| activation_pattern(&mlp_forward(&out.spec, x).unwrap().preactivations))
            .collect();
        for c in &out.clustering.clusters {
            for &i in c {
                for &j in c {
                    let d = crate::geometry::mlp::hamming(&patterns[i], &patterns[j]) as f64;
                    assert!(d <= out.clustering.merge_height);
                }
            }
        }
        assert!(out.clustering.groups >= out.clustering.clusters.len());
    }

    #[test]
    fn boundaries_lie_on_zero_levels() {
        let spec = shipped_weights();
        let grid = Grid {
            x1: GRID_X1,
            x2: GRID_X2,
            resolution: 40,
        };
        let segs = relu_boundaries(&spec, &grid);
        assert!(!segs.is_empty());
        let step = (GRID_X1.1 - GRID_X1.0) / 39.0;
        for s in segs.iter().filter(|s| s.layer == 1) {
            // First-layer preactivations are affine, so interpolated crossings are exact.
            let w = &spec.hidden[0];
            for p in [s.a, s.b] {
                let v = w.weights[s.unit][0] * p[0] + w.weights[s.unit][1] * p[1] + w.bias[s.unit];
                assert!(v.abs() < 1e-9 * (1.0 + step), "{v}");
            }
        }
    }

    #[test]
    fn mismatched_widths_need_training() {
        let cfg = TwoMoonsConfig {
            hidden_widths: vec![8],
            ..small()
        };
        assert!(matches!(run_two_moons(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TwoMoonsConfig {
            grid_resolution: 20,
            ..Default::default()
        };
        two_moons_demo(&cfg, dir.path()).unwrap();
        for f in [
            "grid.csv",
            "boundaries.csv",
            "samples.csv",
            "monitor.json",
            "weights.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let grid = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
        assert_eq!(grid.lines().count(), 1 + 400);
        let monitor = crate::boxes::load_monitor(dir.path().join("monitor.json")).unwrap();
        assert_eq!(monitor.total_boxes(), 30);
    }
}
