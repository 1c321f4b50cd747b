//! Per-cluster bounding boxes and the fitted monitor.

use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterConfig, ClusterPartition};
use crate::error::{Error, Result};
use crate::monitor_vars::{Layout, MonitorVarConfig, MonitoringMatrix};

pub const MONITOR_VERSION: u32 = 1;

/// Product of closed intervals `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Number of training rows the box was fitted on.
    pub size: usize,
}

impl BoundingBox {
    /// Coordinate-wise extrema of the given rows.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut rows = rows.into_iter();
        let first = rows.next()?;
        let mut b = BoundingBox {
            lower: first.to_vec(),
            upper: first.to_vec(),
            size: 1,
        };
        for r in rows {
            b.absorb(r);
        }
        Some(b)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Widens the box to contain `v`.
    pub fn absorb(&mut self, v: &[f64]) {
        for ((lo, hi), &x) in self.lower.iter_mut().zip(&mut self.upper).zip(v) {
            if x < *lo {
                *lo = x;
            }
            if x > *hi {
                *hi = x;
            }
        }
        self.size += 1;
    }

    pub fn contains(&self, v: &[f64]) -> Result<bool> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(self.contains_unchecked(v))
    }

    #[inline]
    pub(crate) fn contains_unchecked(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&x, (&lo, &hi))| lo <= x && x <= hi)
    }

    /// True if `other` lies inside `self` in every coordinate.
    pub fn encloses(&self, other: &BoundingBox) -> bool {
        self.lower.iter().zip(&other.lower).all(|(a, b)| a <= b)
            && self.upper.iter().zip(&other.upper).all(|(a, b)| a >= b)
    }

    pub(crate) fn validate(&self, width: usize) -> Result<()> {
        if self.lower.len() != width || self.upper.len() != width {
            return Err(Error::InvalidMonitor(format!(
                "box has {}/{} bounds, layout width is {width}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidMonitor(format!("non-finite bound at coordinate {i}")));
            }
            if lo > hi {
                return Err(Error::InvalidMonitor(format!(
                    "lower bound {lo} exceeds upper bound {hi} at coordinate {i}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MonitorConfigs {
    pub monitor_vars: MonitorVarConfig,
    pub clustering: ClusterConfig,
}

/// Class-conditional union of boxes; the serializable result of fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    pub version: u32,
    #[serde(rename = "K")]
    pub num_classes: usize,
    pub layout: Layout,
    pub classes: Vec<Vec<BoundingBox>>,
    pub configs: MonitorConfigs,
}

impl Monitor {
    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn boxes(&self, class: usize) -> &[BoundingBox] {
        &self.classes[class]
    }

    pub fn total_boxes(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MONITOR_VERSION {
            return Err(Error::InvalidMonitor(format!(
                "schema version {} (expected {MONITOR_VERSION})",
                self.version
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidMonitor("monitor has no classes".into()));
        }
        if self.classes.len() != self.num_classes {
            return Err(Error::InvalidMonitor(format!(
                "K = {} but {} class entries",
                self.num_classes,
                self.classes.len()
            )));
        }
        let width = self.width();
        self.classes.iter().flatten().try_for_each(|b| b.validate(width))
    }
}

/// One box per cluster over the rows of `phi`.
pub fn fit_boxes(
    phi: &MonitoringMatrix,
    partition: &ClusterPartition,
    var_config: &MonitorVarConfig,
) -> Result<Monitor> {
    let n = phi.nrows();
    let mut classes = Vec::with_capacity(partition.num_classes());
    for (k, clusters) in partition.classes.iter().enumerate() {
        let mut boxes = Vec::with_capacity(clusters.len());
        for (c, members) in clusters.iter().enumerate() {
            if let Some(&bad) = members.iter().find(|&&i| i >= n) {
                return Err(Error::Invalid(format!(
                    "cluster {c} of class {k} references row {bad} of {n}"
                )));
            }
            let b = BoundingBox::fit(members.iter().map(|&i| phi.row(i)))
                .ok_or_else(|| Error::Invalid(format!("cluster {c} of class {k} is empty")))?;
            boxes.push(b);
        }
        classes.push(boxes);
    }
    let monitor = Monitor {
        version: MONITOR_VERSION,
        num_classes: partition.num_classes(),
        layout: phi.layout.clone(),
        classes,
        configs: MonitorConfigs {
            monitor_vars: var_config.clone(),
            clustering: partition.config.clone(),
        },
    };
    monitor.validate()?;
    Ok(monitor)
}

/// Widens the referenced boxes to cover new rows. Boxes never shrink.
pub fn update_boxes(
    monitor: &Monitor,
    phi_new: ArrayView2<f64>,
    class_assignments: &[usize],
    cluster_assignments: &[usize],
) -> Result<Monitor> {
    let rows = phi_new.nrows();
    if class_assignments.len() != rows || cluster_assignments.len() != rows {
        return Err(Error::Dimension {
            expected: rows,
            got: class_assignments.len().min(cluster_assignments.len()),
        });
    }
    if phi_new.ncols() != monitor.width() {
        return Err(Error::Dimension {
            expected: monitor.width(),
            got: phi_new.ncols(),
        });
    }
    let mut updated = monitor.clone();
    for (i, row) in phi_new.outer_iter().enumerate() {
        let (class, cluster) = (class_assignments[i], cluster_assignments[i]);
        let b = updated
            .classes
            .get_mut(class)
            .and_then(|boxes| boxes.get_mut(cluster))
            .ok_or(Error::UnknownCluster { class, cluster })?;
        b.absorb(&row.to_vec());
    }
    Ok(updated)
}

pub fn to_json(monitor: &Monitor) -> Result<String> {
    serde_json::to_string_pretty(monitor).map_err(|e| Error::Invalid(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Monitor> {
    let monitor: Monitor = serde_json::from_str(text).map_err(|e| Error::Json {
        path: "<monitor>".into(),
        message: e.to_string(),
    })?;
    monitor.validate()?;
    Ok(monitor)
}

pub fn save_monitor(monitor: &Monitor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_json(monitor)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_monitor(path: impl AsRef<Path>) -> Result<Monitor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Json { message, .. } => Error::Json {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}
