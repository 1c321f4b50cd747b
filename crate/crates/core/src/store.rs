//! On-disk feature store.
//!
//! A store is a directory holding `manifest.json` plus one raw binary file per
//! array. Every float array is row-major little-endian `f32` with the sample
//! index slowest; labels are little-endian `i32`.
//!
//! ```text
//! store/
//! ├── manifest.json
//! ├── layer3.bin              # conv_raw [C,H,W] or vector [D]
//! ├── layer4.f.bin            # conv_summary: activation fractions
//! ├── layer4.m.bin            #               channel minima
//! ├── layer4.M.bin            #               channel maxima
//! ├── labels.bin
//! └── logits.bin
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_TOKEN: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.bin";
pub const LOGITS_FILE: &str = "logits.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Full preactivation tensor `[C, H, W]` of a convolutional layer.
    ConvRaw,
    /// Pre-reduced `(f, m, M)` channel summaries of a convolutional layer.
    ConvSummary,
    /// A flat feature vector `[D]`: penultimate features or dense preactivations.
    Vector,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::ConvRaw => "conv_raw",
            LayerKind::ConvSummary => "conv_summary",
            LayerKind::Vector => "vector",
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::ConvRaw | LayerKind::ConvSummary)
    }
}

/// What the optional `logits.bin` array contains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitsKind {
    #[default]
    Logits,
    Probabilities,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDecl {
    pub name: String,
    pub kind: LayerKind,
    pub dims: Vec<usize>,
    pub files: Vec<String>,
}

impl LayerDecl {
    pub fn new(name: impl Into<String>, kind: LayerKind, dims: Vec<usize>) -> Self {
        let name = name.into();
        let files = match kind {
            LayerKind::ConvSummary => vec![
                format!("{name}.f.bin"),
                format!("{name}.m.bin"),
                format!("{name}.M.bin"),
            ],
            _ => vec![format!("{name}.bin")],
        };
        Self {
            name,
            kind,
            dims,
            files,
        }
    }

    /// Number of channels (conv kinds) or feature width (vector).
    pub fn channels(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Floats per sample in each of this layer's files.
    pub fn row_width(&self) -> usize {
        match self.kind {
            LayerKind::ConvRaw => self.dims.iter().product(),
            LayerKind::ConvSummary | LayerKind::Vector => self.channels(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Manifest("empty layer name".into()));
        }
        let expected_rank = match self.kind {
            LayerKind::ConvRaw => 3,
            LayerKind::ConvSummary | LayerKind::Vector => 1,
        };
        if self.dims.len() != expected_rank {
            return Err(Error::Manifest(format!(
                "layer `{}` of kind {} needs {} dims, got {:?}",
                self.name,
                self.kind.as_str(),
                expected_rank,
                self.dims
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::Manifest(format!(
                "layer `{}` has a zero dimension: {:?}",
                self.name, self.dims
            )));
        }
        let expected_files = if self.kind == LayerKind::ConvSummary { 3 } else { 1 };
        if self.files.len() != expected_files {
            return Err(Error::Manifest(format!(
                "layer `{}` of kind {} declares {} files, expected {}",
                self.name,
                self.kind.as_str(),
                self.files.len(),
                expected_files
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub num_samples: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits_file: Option<String>,
    #[serde(default)]
    pub logits_kind: LogitsKind,
    pub dtype: String,
}

impl Manifest {
    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.dtype != DTYPE_TOKEN {
            return Err(Error::Manifest(format!(
                "unsupported dtype `{}` (expected `{DTYPE_TOKEN}`)",
                self.dtype
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Manifest("num_classes must be positive".into()));
        }
        let mut seen = HashSet::new();
        for layer in &self.layers {
            layer.validate()?;
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate layer name `{}`", layer.name)));
            }
        }
        Ok(())
    }
}

/// Per-layer arrays, each `num_samples × row_width` row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerData {
    Dense(Vec<f32>),
    Summary {
        fraction: Vec<f32>,
        min: Vec<f32>,
        max: Vec<f32>,
    },
}

impl LayerData {
    fn arrays(&self) -> Vec<&[f32]> {
        match self {
            LayerData::Dense(v) => vec![v],
            LayerData::Summary { fraction, min, max } => vec![fraction, min, max],
        }
    }
}

/// A borrowed view of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerRef<'a> {
    pub decl: &'a LayerDecl,
    pub data: &'a LayerData,
}

impl<'a> LayerRef<'a> {
    /// Row `i` of a dense (conv_raw or vector) layer.
    pub fn dense_row(&self, i: usize) -> Option<&'a [f32]> {
        let w = self.decl.row_width();
        match self.data {
            LayerData::Dense(v) => v.get(i * w..(i + 1) * w),
            LayerData::Summary { .. } => None,
        }
    }
}

/// In-memory feature store. Read-only after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    manifest: Manifest,
    layers: Vec<LayerData>,
    labels: Option<Vec<i32>>,
    logits: Option<Vec<f32>>,
}

impl FeatureStore {
    pub fn new(num_samples: usize, num_classes: usize) -> Self {
        Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                num_samples,
                num_classes,
                layers: Vec::new(),
                labels_file: None,
                logits_file: None,
                logits_kind: LogitsKind::Logits,
                dtype: DTYPE_TOKEN.to_string(),
            },
            layers: Vec::new(),
            labels: None,
            logits: None,
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn num_samples(&self) -> usize {
        self.manifest.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    /// Row-major `num_samples × num_classes`.
    pub fn logits(&self) -> Option<&[f32]> {
        self.logits.as_deref()
    }

    pub fn logits_kind(&self) -> LogitsKind {
        self.manifest.logits_kind
    }

    pub fn logits_row(&self, i: usize) -> Option<&[f32]> {
        let k = self.num_classes();
        self.logits.as_ref().and_then(|l| l.get(i * k..(i + 1) * k))
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerRef<'_>> {
        self.manifest
            .layers
            .iter()
            .zip(&self.layers)
            .map(|(decl, data)| LayerRef { decl, data })
    }

    pub fn layer(&self, name: &str) -> Option<LayerRef<'_>> {
        self.layers().find(|l| l.decl.name == name)
    }

    fn push_layer(&mut self, decl: LayerDecl, data: LayerData) -> Result<()> {
        decl.validate()?;
        if self.layer(&decl.name).is_some() {
            return Err(Error::Manifest(format!("duplicate layer name `{}`", decl.name)));
        }
        let expected = self.num_samples() * decl.row_width();
        for (array, file) in data.arrays().into_iter().zip(&decl.files) {
            if array.len() != expected {
                return Err(Error::Manifest(format!(
                    "{file}: expected {expected} floats, got {}",
                    array.len()
                )));
            }
            check_finite(file, array)?;
        }
        self.manifest.layers.push(decl);
        self.layers.push(data);
        Ok(())
    }

    pub fn push_vector(&mut self, name: &str, width: usize, data: Vec<f32>) -> Result<()> {
        let decl = LayerDecl::new(name, LayerKind::Vector, vec![width]);
        self.push_layer(decl, LayerData::Dense(data))
    }

    pub fn push_conv_raw(&mut self, name: &str, dims: [usize; 3], data: Vec<f32>) -> Result<()> {
        let decl = LayerDecl::new(name, LayerKind::ConvRaw, dims.to_vec());
        self.push_layer(decl, LayerData::Dense(data))
    }

    pub fn push_conv_summary(
        &mut self,
        name: &str,
        channels: usize,
        fraction: Vec<f32>,
        min: Vec<f32>,
        max: Vec<f32>,
    ) -> Result<()> {
        let decl = LayerDecl::new(name, LayerKind::ConvSummary, vec![channels]);
        self.push_layer(decl, LayerData::Summary { fraction, min, max })
    }

    pub fn set_labels(&mut self, labels: Vec<i32>) -> Result<()> {
        check_labels(&labels, self.num_samples(), self.num_classes())?;
        self.labels = Some(labels);
        self.manifest.labels_file = Some(LABELS_FILE.to_string());
        Ok(())
    }

    pub fn set_logits(&mut self, logits: Vec<f32>, kind: LogitsKind) -> Result<()> {
        let expected = self.num_samples() * self.num_classes();
        if logits.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: logits.len(),
            });
        }
        check_finite(LOGITS_FILE, &logits)?;
        self.logits = Some(logits);
        self.manifest.logits_file = Some(LOGITS_FILE.to_string());
        self.manifest.logits_kind = kind;
        Ok(())
    }

    /// Predicted class per sample: argmax of the logits, ties to the lowest index.
    pub fn predictions(&self) -> Option<Vec<usize>> {
        let k = self.num_classes();
        self.logits.as_ref().map(|l| l.chunks_exact(k).map(argmax).collect())
    }

    /// Keeps only the samples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<FeatureStore> {
        let n = self.num_samples();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Invalid(format!(
                "sample index {bad} out of range for {n} samples"
            )));
        }
        let take = |v: &[f32], w: usize| -> Vec<f32> {
            indices
                .iter()
                .flat_map(|&i| v[i * w..(i + 1) * w].iter().copied())
                .collect()
        };
        let mut manifest = self.manifest.clone();
        manifest.num_samples = indices.len();
        let layers = manifest
            .layers
            .iter()
            .zip(&self.layers)
            .map(|(decl, data)| {
                let w = decl.row_width();
                match data {
                    LayerData::Dense(v) => LayerData::Dense(take(v, w)),
                    LayerData::Summary { fraction, min, max } => LayerData::Summary {
                        fraction: take(fraction, w),
                        min: take(min, w),
                        max: take(max, w),
                    },
                }
            })
            .collect();
        Ok(FeatureStore {
            manifest,
            layers,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            logits: self.logits.as_ref().map(|l| take(l, self.num_classes())),
        })
    }
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_finite(name: &str, values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            array: name.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

fn check_labels(labels: &[i32], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(bad) = labels.iter().find(|&&l| l < 0 || l as usize >= k) {
        return Err(Error::Invalid(format!("label {bad} outside 0..{k}")));
    }
    Ok(())
}

fn read_bytes(root: &Path, file: &str, expected_len: u64) -> Result<Vec<u8>> {
    let path = root.join(file);
    let meta = match fs::metadata(&path) {
        Ok(m) => m,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path));
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    if meta.len() != expected_len {
        return Err(Error::SizeMismatch {
            path,
            expected: expected_len,
            found: meta.len(),
        });
    }
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

fn read_f32s(root: &Path, file: &str, count: usize) -> Result<Vec<f32>> {
    let bytes = read_bytes(root, file, count as u64 * 4)?;
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    check_finite(file, &values)?;
    Ok(values)
}

fn read_i32s(root: &Path, file: &str, count: usize) -> Result<Vec<i32>> {
    let bytes = read_bytes(root, file, count as u64 * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_file(root: &Path, file: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(file);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Loads and validates a store directory.
pub fn read_store(root: impl AsRef<Path>) -> Result<FeatureStore> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(manifest_path));
        }
        Err(e) => return Err(Error::io(manifest_path, e)),
    };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    manifest.validate()?;

    let n = manifest.num_samples;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for decl in &manifest.layers {
        let count = n * decl.row_width();
        let data = match decl.kind {
            LayerKind::ConvSummary => LayerData::Summary {
                fraction: read_f32s(root, &decl.files[0], count)?,
                min: read_f32s(root, &decl.files[1], count)?,
                max: read_f32s(root, &decl.files[2], count)?,
            },
            _ => LayerData::Dense(read_f32s(root, &decl.files[0], count)?),
        };
        layers.push(data);
    }

    let labels = match &manifest.labels_file {
        Some(file) => {
            let labels = read_i32s(root, file, n)?;
            check_labels(&labels, n, manifest.num_classes)?;
            Some(labels)
        }
        None => None,
    };
    let logits = match &manifest.logits_file {
        Some(file) => Some(read_f32s(root, file, n * manifest.num_classes)?),
        None => None,
    };

    Ok(FeatureStore {
        manifest,
        layers,
        labels,
        logits,
    })
}

/// Writes `store` under `root`, creating the directory if needed.
pub fn write_store(store: &FeatureStore, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest = serde_json::to_string_pretty(&store.manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    write_file(root, MANIFEST_FILE, manifest.as_bytes())?;
    for layer in store.layers() {
        for (array, file) in layer.data.arrays().into_iter().zip(&layer.decl.files) {
            write_file(root, file, &f32_bytes(array))?;
        }
    }
    if let (Some(labels), Some(file)) = (&store.labels, &store.manifest.labels_file) {
        let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
        write_file(root, file, &bytes)?;
    }
    if let (Some(logits), Some(file)) = (&store.logits, &store.manifest.logits_file) {
        write_file(root, file, &f32_bytes(logits))?;
    }
    Ok(())
}
