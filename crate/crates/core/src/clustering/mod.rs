//! Per-class partitioning of training samples.

mod agglomerative;
mod distance;
mod kmeans;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use agglomerative::{agglomerate, Agglomeration, Linkage, Merge};
pub use distance::{pairwise_distance, CondensedDistances, Metric};
pub use kmeans::{kmeans, MAX_ITERATIONS as KMEANS_MAX_ITERATIONS};

use crate::error::{Error, Result};
use crate::monitor_vars::ClusterFeature;
use crate::scoring::class_probabilities;
use crate::store::FeatureStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    AgglomerativeSingle,
    AgglomerativeComplete,
    AgglomerativeAverage,
    Kmeans,
}

impl Algorithm {
    pub fn linkage(self) -> Option<Linkage> {
        match self {
            Algorithm::AgglomerativeSingle => Some(Linkage::Single),
            Algorithm::AgglomerativeComplete => Some(Linkage::Complete),
            Algorithm::AgglomerativeAverage => Some(Linkage::Average),
            Algorithm::Kmeans => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterCountRule {
    /// `max(1, ⌊√n⌋)` clusters for `n` retained samples.
    Sqrt,
    Fixed(usize),
}

/// Number of clusters for a class with `n_retained` samples.
pub fn cluster_count(n_retained: usize, rule: ClusterCountRule) -> usize {
    match rule {
        ClusterCountRule::Sqrt => n_retained.isqrt().max(1),
        ClusterCountRule::Fixed(k) => k.min(n_retained),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub algorithm: Algorithm,
    pub metric: Metric,
    pub count_rule: ClusterCountRule,
    pub feature: ClusterFeature,
    #[serde(default)]
    pub exclude_misclassified: bool,
    /// Drop samples whose top softmax probability is below this value.
    #[serde(default)]
    pub min_confidence: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::AgglomerativeComplete,
            metric: Metric::Manhattan,
            count_rule: ClusterCountRule::Sqrt,
            feature: ClusterFeature::ActivationFraction,
            exclude_misclassified: false,
            min_confidence: None,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count_rule == ClusterCountRule::Fixed(0) {
            return Err(Error::Config("fixed cluster count must be at least 1".into()));
        }
        if self.metric == Metric::Hamming && !self.feature.is_binary() {
            return Err(Error::Config(format!(
                "hamming metric needs a binary clustering feature, got {:?}",
                self.feature
            )));
        }
        if self.algorithm == Algorithm::Kmeans && self.metric != Metric::Euclidean {
            return Err(Error::Config("k-means requires the euclidean metric".into()));
        }
        if let Some(p) = self.min_confidence {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("min_confidence {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Clusters of training sample indices, per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    /// `classes[k][c]` lists the store indices in cluster `c` of class `k`.
    pub classes: Vec<Vec<Vec<usize>>>,
    pub config: ClusterConfig,
}

impl ClusterPartition {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn retained(&self, class: usize) -> usize {
        self.classes[class].iter().map(Vec::len).sum()
    }
}

/// Clusters the rows of `psi` into `k` groups with the configured algorithm.
pub fn cluster_rows(psi: ArrayView2<f64>, k: usize, cfg: &ClusterConfig) -> Result<Vec<Vec<usize>>> {
    match cfg.algorithm.linkage() {
        Some(linkage) => {
            let d = pairwise_distance(psi, cfg.metric)?;
            Ok(agglomerate(&d, linkage, k).clusters)
        }
        None => Ok(kmeans(psi, k, cfg.seed)),
    }
}

/// Splits the labelled training set by class, filters it, and clusters each class.
///
/// A class with no retained samples gets an empty cluster list.
pub fn partition_by_class(store: &FeatureStore, psi: ArrayView2<f64>, cfg: &ClusterConfig) -> Result<ClusterPartition> {
    cfg.validate()?;
    let labels = store
        .labels()
        .ok_or_else(|| Error::MissingArray("labels (labels.bin)".into()))?;
    if psi.nrows() != store.num_samples() {
        return Err(Error::Dimension {
            expected: store.num_samples(),
            got: psi.nrows(),
        });
    }
    let needs_logits = cfg.exclude_misclassified || cfg.min_confidence.is_some();
    if needs_logits && store.logits().is_none() {
        return Err(Error::MissingArray("logits (logits.bin)".into()));
    }
    let predictions = store.predictions();
    let confidences: Option<Vec<f64>> = match cfg.min_confidence {
        Some(_) => Some(
            (0..store.num_samples())
                .map(|i| {
                    let row = store.logits_row(i).expect("checked above");
                    class_probabilities(row, store.logits_kind()).map(|p| p.into_iter().fold(0.0, f64::max))
                })
                .collect::<Result<_>>()?,
        ),
        None => None,
    };

    let keep = |i: usize| -> bool {
        if let Some(pred) = &predictions {
            if cfg.exclude_misclassified && pred[i] != labels[i] as usize {
                return false;
            }
        }
        match (&confidences, cfg.min_confidence) {
            (Some(conf), Some(threshold)) => conf[i] >= threshold,
            _ => true,
        }
    };

    let k = store.num_classes();
    let classes = (0..k)
        .into_par_iter()
        .map(|class| {
            let retained: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] as usize == class && keep(i))
                .collect();
            if retained.is_empty() {
                log::warn!("class {class} has no retained training samples");
                return Ok(Vec::new());
            }
            let local = psi.select(Axis(0), &retained);
            let count = cluster_count(retained.len(), cfg.count_rule);
            let clusters = cluster_rows(local.view(), count, cfg)?;
            Ok(clusters
                .into_iter()
                .map(|c| c.into_iter().map(|j| retained[j]).collect())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ClusterPartition {
        classes,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::LogitsKind;
    use ndarray::Array2;

    #[test]
    fn cluster_count_rules() {
        for (n, k) in [(1, 1), (2, 1), (9, 3), (100, 10), (10_000, 100), (99, 9)] {
            assert_eq!(cluster_count(n, ClusterCountRule::Sqrt), k, "n = {n}");
        }
        assert_eq!(cluster_count(5, ClusterCountRule::Fixed(30)), 5);
        assert_eq!(cluster_count(50, ClusterCountRule::Fixed(30)), 30);
    }

    fn labelled_store(per_class: usize) -> (FeatureStore, Array2<f64>) {
        let n = 2 * per_class;
        let mut s = FeatureStore::new(n, 2);
        let labels: Vec<i32> = (0..n).map(|i| (i % 2) as i32).collect();
        let logits: Vec<f32> = labels
            .iter()
            .flat_map(|&l| if l == 0 { [2.0, 0.0] } else { [0.0, 2.0] })
            .collect();
        s.set_labels(labels).unwrap();
        s.set_logits(logits, LogitsKind::Logits).unwrap();
        let psi = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % 10) as f64 / 10.0);
        (s, psi)
    }

    #[test]
    fn nine_per_class_gives_three_clusters() {
        let (s, psi) = labelled_store(9);
        let p = partition_by_class(&s, psi.view(), &ClusterConfig::default()).unwrap();
        for class in 0..2 {
            assert_eq!(p.classes[class].len(), 3);
            assert_eq!(p.retained(class), 9);
            let mut all = p.classes[class].concat();
            all.sort_unstable();
            assert!(all.iter().all(|&i| i % 2 == class));
            all.dedup();
            assert_eq!(all.len(), 9);
        }
    }

    #[test]
    fn two_samples_give_one_cluster() {
        let (s, psi) = labelled_store(2);
        let p = partition_by_class(&s, psi.view(), &ClusterConfig::default()).unwrap();
        assert_eq!(p.classes[0].len(), 1);
    }

    #[test]
    fn exclusion_with_perfect_predictions_is_a_no_op() {
        let (s, psi) = labelled_store(9);
        let base = partition_by_class(&s, psi.view(), &ClusterConfig::default()).unwrap();
        let cfg = ClusterConfig {
            exclude_misclassified: true,
            ..Default::default()
        };
        let filtered = partition_by_class(&s, psi.view(), &cfg).unwrap();
        assert_eq!(base.classes, filtered.classes);
    }

    #[test]
    fn misclassified_samples_are_dropped_when_requested() {
        let (mut s, psi) = labelled_store(4);
        let mut logits = s.logits().unwrap().to_vec();
        logits.swap(0, 1); // sample 0 (class 0) now predicted as class 1
        s.set_logits(logits, LogitsKind::Logits).unwrap();
        let cfg = ClusterConfig {
            exclude_misclassified: true,
            ..Default::default()
        };
        let p = partition_by_class(&s, psi.view(), &cfg).unwrap();
        assert_eq!(p.retained(0), 3);
        assert!(!p.classes[0].concat().contains(&0));
    }

    #[test]
    fn empty_class_is_recorded_not_fatal() {
        let mut s = FeatureStore::new(3, 3);
        s.set_labels(vec![0, 0, 2]).unwrap();
        let psi = Array2::zeros((3, 1));
        let p = partition_by_class(&s, psi.view(), &ClusterConfig::default()).unwrap();
        assert!(p.classes[1].is_empty());
        assert_eq!(p.classes[2], vec![vec![2]]);
    }

    #[test]
    fn missing_labels_is_an_error() {
        let s = FeatureStore::new(3, 1);
        let psi = Array2::zeros((3, 1));
        assert!(matches!(
            partition_by_class(&s, psi.view(), &ClusterConfig::default()),
            Err(Error::MissingArray(_))
        ));
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let hamming_on_fractions = ClusterConfig {
            metric: Metric::Hamming,
            ..Default::default()
        };
        assert!(hamming_on_fractions.validate().is_err());
        let zero = ClusterConfig {
            count_rule: ClusterCountRule::Fixed(0),
            ..Default::default()
        };
        assert!(zero.validate().is_err());
        let kmeans_manhattan = ClusterConfig {
            algorithm: Algorithm::Kmeans,
            ..Default::default()
        };
        assert!(kmeans_manhattan.validate().is_err());
    }

    #[test]
    fn same_input_same_partition() {
        let (s, psi) = labelled_store(30);
        for algorithm in [Algorithm::AgglomerativeComplete, Algorithm::Kmeans] {
            let cfg = ClusterConfig {
                algorithm,
                metric: if algorithm == Algorithm::Kmeans {
                    Metric::Euclidean
                } else {
                    Metric::Manhattan
                },
                seed: 9,
                ..Default::default()
            };
            let a = partition_by_class(&s, psi.view(), &cfg).unwrap();
            let b = partition_by_class(&s, psi.view(), &cfg).unwrap();
            assert_eq!(a, b);
        }
    }
}
