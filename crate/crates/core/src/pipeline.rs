//! End-to-end fitting with per-stage timings.

use std::time::{Duration, Instant};

use crate::boxes::{fit_boxes, Monitor};
use crate::clustering::{partition_by_class, ClusterConfig};
use crate::error::Result;
use crate::monitor_vars::{build_clustering_matrix, build_monitoring_matrix, MonitorVarConfig};
use crate::store::FeatureStore;

/// Wall-clock cost of each fitting stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitTimings {
    /// Building φ for every training sample.
    pub monitoring_variables: Duration,
    /// Building ψ and partitioning every class.
    pub clustering: Duration,
    /// Extrema per cluster.
    pub box_calculation: Duration,
}

impl FitTimings {
    /// Clustering plus box calculation.
    pub fn construction(&self) -> Duration {
        self.clustering + self.box_calculation
    }
}

/// Fits a monitor on a labelled training store.
pub fn fit_monitor(
    store: &FeatureStore,
    var_cfg: &MonitorVarConfig,
    cluster_cfg: &ClusterConfig,
) -> Result<(Monitor, FitTimings)> {
    var_cfg.validate()?;
    cluster_cfg.validate()?;
    let mut timings = FitTimings::default();

    let t = Instant::now();
    let phi = build_monitoring_matrix(store, var_cfg)?;
    timings.monitoring_variables = t.elapsed();

    let t = Instant::now();
    let psi = build_clustering_matrix(store, cluster_cfg.feature, var_cfg)?;
    let partition = partition_by_class(store, psi.view(), cluster_cfg)?;
    timings.clustering = t.elapsed();

    let t = Instant::now();
    let monitor = fit_boxes(&phi, &partition, var_cfg)?;
    timings.box_calculation = t.elapsed();
    Ok((monitor, timings))
}
