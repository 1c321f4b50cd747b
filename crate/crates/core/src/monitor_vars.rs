//! Monitoring variables and clustering features computed from stored activations.
//!
//! For a convolutional layer with preactivation tensor `A ∈ R^{C×H×W}` three
//! per-channel summaries are available:
//!
//! * activation fraction `f_c = |{(h, w) : A_c[h, w] > 0}| / (H·W)`
//! * channel minimum `m_c = min_{h,w} A_c[h, w]`
//! * channel maximum `M_c = max_{h,w} A_c[h, w]`
//!
//! The monitoring vector concatenates, in manifest layer order, `f` as is and
//! `m`, `M` divided by `‖·‖₂ + ε`, followed by the normalized penultimate
//! features. Dense (fully connected) preactivation layers enter unnormalized.

use ndarray::{Array2, ArrayView3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{FeatureStore, LayerData, LayerKind, LayerRef, Manifest};

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvFeature {
    ActivationFraction,
    ChannelMin,
    ChannelMax,
}

impl ConvFeature {
    pub const ALL: [ConvFeature; 3] = [
        ConvFeature::ActivationFraction,
        ConvFeature::ChannelMin,
        ConvFeature::ChannelMax,
    ];

    fn segment_kind(self) -> SegmentKind {
        match self {
            ConvFeature::ActivationFraction => SegmentKind::ActivationFraction,
            ConvFeature::ChannelMin => SegmentKind::ChannelMin,
            ConvFeature::ChannelMax => SegmentKind::ChannelMax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVarConfig {
    /// Convolutional layers to summarize. `None` selects every conv layer.
    #[serde(default)]
    pub monitored_layers: Option<Vec<String>>,
    #[serde(default = "default_conv_features")]
    pub conv_features: Vec<ConvFeature>,
    /// Vector layers holding dense preactivations, bounded unnormalized.
    #[serde(default)]
    pub dense_layers: Vec<String>,
    #[serde(default = "default_true")]
    pub include_penultimate: bool,
    /// Defaults to the last vector layer that is not a dense layer.
    #[serde(default)]
    pub penultimate_layer: Option<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_conv_features() -> Vec<ConvFeature> {
    ConvFeature::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for MonitorVarConfig {
    fn default() -> Self {
        Self {
            monitored_layers: None,
            conv_features: default_conv_features(),
            dense_layers: Vec::new(),
            include_penultimate: true,
            penultimate_layer: None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl MonitorVarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let conv_selected =
            !self.conv_features.is_empty() && self.monitored_layers.as_ref().is_none_or(|l| !l.is_empty());
        if !conv_selected && self.dense_layers.is_empty() && !self.include_penultimate {
            return Err(Error::Config("no monitoring feature selected".into()));
        }
        Ok(())
    }

    /// Resolves the configuration against a manifest into the φ layout.
    pub fn layout(&self, manifest: &Manifest) -> Result<Layout> {
        self.validate()?;
        for name in self.monitored_layers.iter().flatten().chain(&self.dense_layers) {
            if !manifest.layers.iter().any(|l| &l.name == name) {
                return Err(Error::UnknownLayer(name.clone()));
            }
        }

        let mut features = self.conv_features.clone();
        features.sort();
        features.dedup();

        let mut segments = Vec::new();
        for decl in &manifest.layers {
            let monitored = match &self.monitored_layers {
                Some(names) => names.contains(&decl.name),
                None => decl.kind.is_conv(),
            };
            if monitored && !features.is_empty() {
                if !decl.kind.is_conv() {
                    return Err(Error::KindMismatch {
                        layer: decl.name.clone(),
                        kind: decl.kind.as_str().into(),
                        requested: "convolutional channel summaries".into(),
                    });
                }
                for f in &features {
                    segments.push(Segment {
                        layer: decl.name.clone(),
                        kind: f.segment_kind(),
                        width: decl.channels(),
                    });
                }
            }
            if self.dense_layers.contains(&decl.name) {
                if decl.kind != LayerKind::Vector {
                    return Err(Error::KindMismatch {
                        layer: decl.name.clone(),
                        kind: decl.kind.as_str().into(),
                        requested: "dense preactivations".into(),
                    });
                }
                segments.push(Segment {
                    layer: decl.name.clone(),
                    kind: SegmentKind::Preactivation,
                    width: decl.channels(),
                });
            }
        }

        if self.include_penultimate {
            let decl = penultimate_decl(manifest, self.penultimate_layer.as_deref(), &self.dense_layers)?;
            segments.push(Segment {
                layer: decl.name.clone(),
                kind: SegmentKind::Penultimate,
                width: decl.channels(),
            });
        }
        if segments.is_empty() {
            return Err(Error::Config(
                "configuration selects no monitoring variables for this store".into(),
            ));
        }
        Ok(Layout { segments })
    }
}

fn penultimate_decl<'a>(
    manifest: &'a Manifest,
    name: Option<&str>,
    dense: &[String],
) -> Result<&'a crate::store::LayerDecl> {
    let decl = match name {
        Some(name) => manifest
            .layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))?,
        None => manifest
            .layers
            .iter()
            .rev()
            .find(|l| l.kind == LayerKind::Vector && !dense.contains(&l.name))
            .ok_or_else(|| Error::Config("penultimate features requested but the store has no vector layer".into()))?,
    };
    if decl.kind != LayerKind::Vector {
        return Err(Error::KindMismatch {
            layer: decl.name.clone(),
            kind: decl.kind.as_str().into(),
            requested: "penultimate features".into(),
        });
    }
    Ok(decl)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    ActivationFraction,
    ChannelMin,
    ChannelMax,
    Penultimate,
    Preactivation,
}

impl SegmentKind {
    pub fn is_normalized(self) -> bool {
        matches!(
            self,
            SegmentKind::ChannelMin | SegmentKind::ChannelMax | SegmentKind::Penultimate
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: String,
    pub kind: SegmentKind,
    pub width: usize,
}

/// Ordered description of the coordinates of a monitoring vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Layout {
    pub segments: Vec<Segment>,
}

impl Layout {
    pub fn width(&self) -> usize {
        self.segments.iter().map(|s| s.width).sum()
    }

    /// Human-readable description of how `other` differs from `self`.
    pub fn diff(&self, other: &Layout) -> Option<String> {
        if self == other {
            return None;
        }
        let show = |l: &Layout| {
            l.segments
                .iter()
                .map(|s| format!("{}:{:?}[{}]", s.layer, s.kind, s.width))
                .collect::<Vec<_>>()
                .join(", ")
        };
        Some(format!("expected [{}], found [{}]", show(self), show(other)))
    }
}

/// Monitoring vectors for a whole store, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoringMatrix {
    pub values: Array2<f64>,
    pub layout: Layout,
}

impl MonitoringMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values
            .row(i)
            .to_slice()
            .expect("monitoring matrix rows are contiguous")
    }
}

fn check_spatial(tensor: &ArrayView3<f32>) -> Result<()> {
    let (c, h, w) = tensor.dim();
    if h * w == 0 || c == 0 {
        return Err(Error::Invalid(format!("empty tensor of shape [{c}, {h}, {w}]")));
    }
    Ok(())
}

/// Fraction of spatial positions with strictly positive preactivation, per channel.
pub fn activation_fraction(tensor: ArrayView3<f32>) -> Result<Vec<f32>> {
    check_spatial(&tensor)?;
    let (_, h, w) = tensor.dim();
    let area = (h * w) as f64;
    Ok(tensor
        .outer_iter()
        .map(|channel| {
            let active = channel.iter().filter(|&&v| v > 0.0).count();
            (active as f64 / area) as f32
        })
        .collect())
}

/// Spatial minimum and maximum per channel.
pub fn channel_min_max(tensor: ArrayView3<f32>) -> Result<(Vec<f32>, Vec<f32>)> {
    check_spatial(&tensor)?;
    Ok(tensor
        .outer_iter()
        .map(|channel| {
            channel.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
        })
        .unzip())
}

/// `v / (‖v‖₂ + ε)`.
pub fn normalize_segment(v: &[f64], epsilon: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm + epsilon;
    v.iter().map(|x| x / scale).collect()
}

/// `(f, m, M)` for sample `i` of a conv layer, from either storage kind.
fn conv_summary_row(layer: LayerRef<'_>, i: usize) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
    let c = layer.decl.channels();
    match layer.data {
        LayerData::Summary { fraction, min, max } => {
            let r = i * c..(i + 1) * c;
            Ok((fraction[r.clone()].to_vec(), min[r.clone()].to_vec(), max[r].to_vec()))
        }
        LayerData::Dense(_) => {
            let row = layer.dense_row(i).expect("row index validated by caller");
            let (h, w) = (layer.decl.dims[1], layer.decl.dims[2]);
            let tensor = ArrayView3::from_shape((c, h, w), row).map_err(|e| Error::Invalid(e.to_string()))?;
            let f = activation_fraction(tensor)?;
            let (m, big_m) = channel_min_max(tensor)?;
            Ok((f, m, big_m))
        }
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Builds φ for every sample of `store`.
pub fn build_monitoring_matrix(store: &FeatureStore, cfg: &MonitorVarConfig) -> Result<MonitoringMatrix> {
    let layout = cfg.layout(store.manifest())?;
    let width = layout.width();
    let n = store.num_samples();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| monitoring_row(store, &layout, cfg.epsilon, i))
        .collect::<Result<_>>()?;

    let mut values = Array2::zeros((n, width));
    for (mut dst, row) in values.outer_iter_mut().zip(rows) {
        dst.as_slice_mut()
            .expect("fresh array is contiguous")
            .copy_from_slice(&row);
    }
    Ok(MonitoringMatrix { values, layout })
}

/// Per-channel `(f, m, M)` of one conv layer.
type ChannelStats = (Vec<f32>, Vec<f32>, Vec<f32>);

fn monitoring_row(store: &FeatureStore, layout: &Layout, epsilon: f64, i: usize) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(layout.width());
    // Segments of one conv layer are adjacent; reduce each layer once.
    let mut cached: Option<(&str, ChannelStats)> = None;
    for seg in &layout.segments {
        let layer = store
            .layer(&seg.layer)
            .ok_or_else(|| Error::UnknownLayer(seg.layer.clone()))?;
        match seg.kind {
            SegmentKind::ActivationFraction | SegmentKind::ChannelMin | SegmentKind::ChannelMax => {
                if cached.as_ref().is_none_or(|(name, _)| *name != seg.layer) {
                    cached = Some((seg.layer.as_str(), conv_summary_row(layer, i)?));
                }
                let (f, m, big_m) = &cached.as_ref().expect("just filled").1;
                match seg.kind {
                    SegmentKind::ActivationFraction => row.extend(widen(f)),
                    SegmentKind::ChannelMin => row.extend(normalize_segment(&widen(m), epsilon)),
                    _ => row.extend(normalize_segment(&widen(big_m), epsilon)),
                }
            }
            SegmentKind::Penultimate => {
                let z = layer.dense_row(i).expect("vector layer is dense");
                row.extend(normalize_segment(&widen(z), epsilon));
            }
            SegmentKind::Preactivation => {
                row.extend(widen(layer.dense_row(i).expect("vector layer is dense")));
            }
        }
    }
    Ok(row)
}

/// Representation used to group samples before fitting boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterFeature {
    ActivationFraction,
    ChannelMin,
    ChannelMax,
    Penultimate,
    ActivationPattern,
}

impl ClusterFeature {
    pub fn is_binary(self) -> bool {
        self == ClusterFeature::ActivationPattern
    }
}

/// Builds the clustering representation ψ for every sample.
///
/// Conv features are taken over the conv layers selected by `cfg` (channel
/// extrema normalized as in φ); `activation_pattern` thresholds the dense
/// layers of `cfg` at zero; `penultimate` is the normalized penultimate segment.
pub fn build_clustering_matrix(
    store: &FeatureStore,
    feature: ClusterFeature,
    cfg: &MonitorVarConfig,
) -> Result<Array2<f64>> {
    let manifest = store.manifest();
    let selection = match feature {
        ClusterFeature::ActivationFraction => conv_only(cfg, manifest, ConvFeature::ActivationFraction),
        ClusterFeature::ChannelMin => conv_only(cfg, manifest, ConvFeature::ChannelMin),
        ClusterFeature::ChannelMax => conv_only(cfg, manifest, ConvFeature::ChannelMax),
        ClusterFeature::Penultimate => MonitorVarConfig {
            monitored_layers: Some(Vec::new()),
            conv_features: Vec::new(),
            dense_layers: cfg.dense_layers.clone(),
            include_penultimate: true,
            ..cfg.clone()
        },
        ClusterFeature::ActivationPattern => {
            if cfg.dense_layers.is_empty() {
                return Err(Error::Config(
                    "activation_pattern clustering needs at least one dense preactivation layer".into(),
                ));
            }
            MonitorVarConfig {
                monitored_layers: Some(Vec::new()),
                conv_features: Vec::new(),
                dense_layers: cfg.dense_layers.clone(),
                include_penultimate: false,
                ..cfg.clone()
            }
        }
    };
    let layout = selection.layout(manifest)?;
    let keep: Vec<bool> = layout
        .segments
        .iter()
        .flat_map(|s| {
            let wanted = match feature {
                ClusterFeature::Penultimate => s.kind == SegmentKind::Penultimate,
                _ => true,
            };
            std::iter::repeat_n(wanted, s.width)
        })
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::Config(format!(
            "clustering feature {feature:?} selects no columns"
        )));
    }
    let phi = build_monitoring_matrix(store, &selection)?;
    let columns: Vec<usize> = keep.iter().enumerate().filter_map(|(j, &k)| k.then_some(j)).collect();
    let mut psi = phi.values.select(ndarray::Axis(1), &columns);
    if feature.is_binary() {
        psi.mapv_inplace(|v| if v > 0.0 { 1.0 } else { 0.0 });
    }
    Ok(psi)
}

fn conv_only(cfg: &MonitorVarConfig, manifest: &Manifest, feature: ConvFeature) -> MonitorVarConfig {
    let layers = cfg.monitored_layers.clone().unwrap_or_else(|| {
        manifest
            .layers
            .iter()
            .filter(|l| l.kind.is_conv())
            .map(|l| l.name.clone())
            .collect()
    });
    MonitorVarConfig {
        monitored_layers: Some(layers),
        conv_features: vec![feature],
        dense_layers: Vec::new(),
        include_penultimate: false,
        penultimate_layer: None,
        epsilon: cfg.epsilon,
    }
}

/// Replaces every `conv_raw` layer with its `conv_summary` reduction.
///
/// Scores computed from the result equal those from the raw store exactly.
pub fn summarize_conv_layers(store: &FeatureStore) -> Result<FeatureStore> {
    let n = store.num_samples();
    let mut out = FeatureStore::new(n, store.num_classes());
    for layer in store.layers() {
        match (layer.decl.kind, layer.data) {
            (LayerKind::ConvRaw, _) => {
                let c = layer.decl.channels();
                let (mut f, mut m, mut big_m) = (
                    Vec::with_capacity(n * c),
                    Vec::with_capacity(n * c),
                    Vec::with_capacity(n * c),
                );
                for i in 0..n {
                    let (fi, mi, bi) = conv_summary_row(layer, i)?;
                    f.extend(fi);
                    m.extend(mi);
                    big_m.extend(bi);
                }
                out.push_conv_summary(&layer.decl.name, c, f, m, big_m)?;
            }
            (LayerKind::ConvSummary, LayerData::Summary { fraction, min, max }) => {
                out.push_conv_summary(
                    &layer.decl.name,
                    layer.decl.channels(),
                    fraction.clone(),
                    min.clone(),
                    max.clone(),
                )?;
            }
            (_, LayerData::Dense(v)) => out.push_vector(&layer.decl.name, layer.decl.row_width(), v.clone())?,
            (kind, _) => {
                return Err(Error::Invalid(format!(
                    "layer `{}` of kind {} has mismatched storage",
                    layer.decl.name,
                    kind.as_str()
                )))
            }
        }
    }
    if let Some(labels) = store.labels() {
        out.set_labels(labels.to_vec())?;
    }
    if let Some(logits) = store.logits() {
        out.set_logits(logits.to_vec(), store.logits_kind())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn tensor(c: usize, h: usize, w: usize, v: &[f32]) -> Array3<f32> {
        Array3::from_shape_vec((c, h, w), v.to_vec()).unwrap()
    }

    #[test]
    fn fraction_counts_strictly_positive_entries() {
        let t = tensor(1, 2, 2, &[1.0, -1.0, 0.0, 2.0]);
        assert_eq!(activation_fraction(t.view()).unwrap(), vec![0.5]);
        let neg = tensor(1, 2, 2, &[-1.0; 4]);
        assert_eq!(activation_fraction(neg.view()).unwrap(), vec![0.0]);
        let pos = tensor(1, 2, 2, &[0.1; 4]);
        assert_eq!(activation_fraction(pos.view()).unwrap(), vec![1.0]);
    }

    #[test]
    fn min_max_per_channel() {
        let t = tensor(1, 2, 2, &[1.0, -1.0, 0.0, 2.0]);
        assert_eq!(channel_min_max(t.view()).unwrap(), (vec![-1.0], vec![2.0]));
        let c = tensor(1, 2, 2, &[3.0; 4]);
        assert_eq!(channel_min_max(c.view()).unwrap(), (vec![3.0], vec![3.0]));
        let single = tensor(1, 1, 1, &[5.0]);
        assert_eq!(channel_min_max(single.view()).unwrap(), (vec![5.0], vec![5.0]));
    }

    #[test]
    fn empty_spatial_extent_is_an_error() {
        let t = Array3::<f32>::zeros((2, 0, 3));
        assert!(activation_fraction(t.view()).is_err());
        assert!(channel_min_max(t.view()).is_err());
    }

    #[test]
    fn normalization_cases() {
        let v = normalize_segment(&[3.0, 4.0], DEFAULT_EPSILON);
        assert!((v[0] - 0.6).abs() < 1e-9 && (v[1] - 0.8).abs() < 1e-9);
        assert_eq!(normalize_segment(&[0.0, 0.0], DEFAULT_EPSILON), vec![0.0, 0.0]);
        assert!((normalize_segment(&[7.0], DEFAULT_EPSILON)[0] - 1.0).abs() < 1e-12);
    }

    fn two_conv_store() -> FeatureStore {
        let mut s = FeatureStore::new(3, 2);
        let a: Vec<f32> = (0..3 * 4 * 2 * 2).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let b: Vec<f32> = (0..3 * 4 * 3).map(|i| ((i * 5) % 13) as f32 - 6.5).collect();
        s.push_conv_raw("conv1", [4, 2, 2], a).unwrap();
        s.push_conv_raw("conv2", [4, 3, 1], b).unwrap();
        let z: Vec<f32> = (0..3 * 8).map(|i| (i as f32).sin()).collect();
        s.push_vector("z", 8, z).unwrap();
        s
    }

    #[test]
    fn layout_width_of_two_conv_layers_and_penultimate() {
        let s = two_conv_store();
        let phi = build_monitoring_matrix(&s, &MonitorVarConfig::default()).unwrap();
        assert_eq!(phi.layout.width(), 2 * (3 * 4) + 8);
        assert_eq!(phi.values.dim(), (3, 32));
    }

    #[test]
    fn fraction_only_layout_lies_in_unit_square() {
        let mut s = FeatureStore::new(2, 1);
        s.push_conv_raw("c", [2, 1, 2], vec![1.0, -1.0, 0.5, 0.5, -2.0, -2.0, 0.0, 3.0])
            .unwrap();
        let cfg = MonitorVarConfig {
            conv_features: vec![ConvFeature::ActivationFraction],
            include_penultimate: false,
            ..Default::default()
        };
        let phi = build_monitoring_matrix(&s, &cfg).unwrap();
        assert_eq!(phi.layout.width(), 2);
        assert_eq!(phi.row(0), &[0.5, 1.0]);
        assert_eq!(phi.row(1), &[0.0, 0.5]);
    }

    #[test]
    fn unknown_layer_and_kind_mismatch() {
        let s = two_conv_store();
        let cfg = MonitorVarConfig {
            monitored_layers: Some(vec!["nope".into()]),
            ..Default::default()
        };
        assert!(matches!(build_monitoring_matrix(&s, &cfg), Err(Error::UnknownLayer(_))));
        let cfg = MonitorVarConfig {
            monitored_layers: Some(vec!["z".into()]),
            ..Default::default()
        };
        assert!(matches!(
            build_monitoring_matrix(&s, &cfg),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn clustering_fraction_concatenates_layers() {
        let mut s = FeatureStore::new(1, 1);
        s.push_conv_raw("a", [2, 1, 1], vec![1.0, -1.0]).unwrap();
        s.push_conv_raw("b", [3, 1, 1], vec![1.0, 1.0, 0.0]).unwrap();
        let psi = build_clustering_matrix(&s, ClusterFeature::ActivationFraction, &Default::default()).unwrap();
        assert_eq!(psi.dim(), (1, 5));
        assert_eq!(psi.row(0).to_vec(), vec![1.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn activation_pattern_thresholds_strictly() {
        let mut s = FeatureStore::new(1, 1);
        s.push_vector("h", 3, vec![0.5, -0.2, 0.0]).unwrap();
        let cfg = MonitorVarConfig {
            dense_layers: vec!["h".into()],
            include_penultimate: false,
            ..Default::default()
        };
        let psi = build_clustering_matrix(&s, ClusterFeature::ActivationPattern, &cfg).unwrap();
        assert_eq!(psi.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn penultimate_clustering_is_normalized_z() {
        let mut s = FeatureStore::new(1, 1);
        s.push_vector("z", 2, vec![3.0, 4.0]).unwrap();
        let psi = build_clustering_matrix(&s, ClusterFeature::Penultimate, &Default::default()).unwrap();
        let expected = normalize_segment(&[3.0, 4.0], DEFAULT_EPSILON);
        assert_eq!(psi.row(0).to_vec(), expected);
    }

    #[test]
    fn pattern_on_conv_only_store_is_an_error() {
        let s = two_conv_store();
        assert!(build_clustering_matrix(&s, ClusterFeature::ActivationPattern, &Default::default()).is_err());
    }

    #[test]
    fn epsilon_must_be_positive() {
        let cfg = MonitorVarConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn summarized_store_has_identical_phi() {
        let raw = two_conv_store();
        let summary = summarize_conv_layers(&raw).unwrap();
        assert!(summary.layers().all(|l| l.decl.kind != LayerKind::ConvRaw));
        let cfg = MonitorVarConfig::default();
        let a = build_monitoring_matrix(&raw, &cfg).unwrap();
        let b = build_monitoring_matrix(&summary, &cfg).unwrap();
        assert_eq!(a.layout, b.layout);
        assert_eq!(a.values, b.values);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn raw_store(c: usize, h: usize, w: usize, data: Vec<f32>) -> FeatureStore {
            let mut s = FeatureStore::new(1, 1);
            s.push_conv_raw("c", [c, h, w], data).unwrap();
            s
        }

        fn conv_tensor() -> impl Strategy<Value = (usize, usize, usize, Vec<f32>)> {
            (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(c, h, w)| {
                prop::collection::vec(-5.0f32..5.0, c * h * w).prop_map(move |v| (c, h, w, v))
            })
        }

        fn phi(store: &FeatureStore) -> Vec<f64> {
            let cfg = MonitorVarConfig {
                include_penultimate: false,
                ..Default::default()
            };
            build_monitoring_matrix(store, &cfg).unwrap().row(0).to_vec()
        }

        proptest! {
            #[test]
            fn positive_scaling_leaves_phi_unchanged(
                (c, h, w, data) in conv_tensor(),
                alpha in prop::sample::select(vec![0.5f32, 2.0, 10.0]),
            ) {
                let base = phi(&raw_store(c, h, w, data.clone()));
                let scaled = phi(&raw_store(c, h, w, data.iter().map(|x| alpha * x).collect()));
                for (a, b) in base.iter().zip(&scaled) {
                    prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
                }
            }

            #[test]
            fn spatial_permutation_leaves_phi_unchanged(
                (c, h, w, data) in conv_tensor(),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let area = h * w;
                let mut perm: Vec<usize> = (0..area).collect();
                perm.shuffle(&mut rng);
                let permuted: Vec<f32> = (0..c)
                    .flat_map(|ch| perm.iter().map(move |&p| (ch, p)))
                    .map(|(ch, p)| data[ch * area + p])
                    .collect();
                prop_assert_eq!(phi(&raw_store(c, h, w, data)), phi(&raw_store(c, h, w, permuted)));
            }

            #[test]
            fn raw_and_summary_storage_agree_exactly((c, h, w, data) in conv_tensor()) {
                let raw = raw_store(c, h, w, data);
                let summary = summarize_conv_layers(&raw).unwrap();
                prop_assert_eq!(phi(&raw), phi(&summary));
            }

            #[test]
            fn fractions_lie_in_unit_interval((c, h, w, data) in conv_tensor()) {
                let v = phi(&raw_store(c, h, w, data));
                prop_assert!(v[..c].iter().all(|f| (0.0..=1.0).contains(f)));
                for seg in v[c..].chunks(c) {
                    let norm: f64 = seg.iter().map(|x| x * x).sum::<f64>().sqrt();
                    prop_assert!(norm <= 1.0 + 1e-12);
                }
            }
        }
    }
}
