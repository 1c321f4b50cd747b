//! Exceedance-based anomaly scores.
//!
//! For a sample with monitoring vector `v` and a class `k` with boxes `𝒞_k`:
//!
//! * `ec(v, k) = min_{c ∈ 𝒞_k} |{i : v_i ∉ [L_{c,i}, U_{c,i}]}|`
//! * `ed(v, k) = min_{c ∈ 𝒞_k} Σ_i dist(v_i, [L_{c,i}, U_{c,i}])`
//! * `agg(v) = Σ_k p_k · score(v, k)` with `p = softmax(logits)`
//!
//! Higher is more anomalous. `ec` and `ed` condition on the predicted class.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxes::{BoundingBox, Monitor};
use crate::error::{Error, Result};
use crate::monitor_vars::build_monitoring_matrix;
use crate::store::{argmax, FeatureStore, LogitsKind};

/// Exceedance distance reported for a class without boxes.
pub const EMPTY_CLASS_DISTANCE: f64 = 1e30;
/// Probability below which an empty class is ignored by aggregation.
pub const NEGLIGIBLE_PROBABILITY: f64 = 1e-12;
const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseScore {
    Ec,
    Ed,
}

/// Which score columns to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variants {
    pub ec: bool,
    pub ed: bool,
    pub agg_ec: bool,
    pub agg_ed: bool,
}

impl Variants {
    pub const ALL: Variants = Variants {
        ec: true,
        ed: true,
        agg_ec: true,
        agg_ed: true,
    };
    pub const NAMES: [&'static str; 4] = ["ec", "ed", "agg_ec", "agg_ed"];

    pub fn parse(list: &str) -> Result<Self> {
        let mut v = Variants {
            ec: false,
            ed: false,
            agg_ec: false,
            agg_ed: false,
        };
        for token in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "ec" => v.ec = true,
                "ed" => v.ed = true,
                "agg_ec" => v.agg_ec = true,
                "agg_ed" => v.agg_ed = true,
                "all" => v = Variants::ALL,
                other => return Err(Error::Config(format!("unknown score variant `{other}`"))),
            }
        }
        if v.is_empty() {
            return Err(Error::Config("no score variant selected".into()));
        }
        Ok(v)
    }

    pub fn is_empty(&self) -> bool {
        !(self.ec || self.ed || self.agg_ec || self.agg_ed)
    }

    fn any_aggregate(&self) -> bool {
        self.agg_ec || self.agg_ed
    }
}

impl Default for Variants {
    fn default() -> Self {
        Variants::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassScores {
    pub ec: Vec<f64>,
    pub ed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_index: usize,
    pub predicted_class: usize,
    pub ec: Option<usize>,
    pub ed: Option<f64>,
    pub agg_ec: Option<f64>,
    pub agg_ed: Option<f64>,
    /// Filled whenever an aggregated variant was requested.
    pub per_class: Option<PerClassScores>,
    /// True if an empty class contributed a sentinel score.
    pub hit_empty_class: bool,
}

impl ScoreRecord {
    pub fn get(&self, variant: &str) -> Option<f64> {
        match variant {
            "ec" => self.ec.map(|v| v as f64),
            "ed" => self.ed,
            "agg_ec" => self.agg_ec,
            "agg_ed" => self.agg_ed,
            _ => None,
        }
    }
}

#[inline]
fn violations(v: &[f64], b: &BoundingBox) -> usize {
    v.iter()
        .zip(b.lower.iter().zip(&b.upper))
        .filter(|(&x, (&lo, &hi))| !(lo <= x && x <= hi))
        .count()
}

/// Fewest interval violations over `boxes`; `None` when there are no boxes.
pub fn exceedance_count(v: &[f64], boxes: &[BoundingBox]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for b in boxes {
        let c = violations(v, b);
        if best.is_none_or(|m| c < m) {
            best = Some(c);
            if c == 0 {
                break;
            }
        }
    }
    best
}

/// Distance from `value` to the closed interval `[lower, upper]`.
#[inline]
pub fn distance_to_interval(value: f64, lower: f64, upper: f64) -> f64 {
    if value < lower {
        lower - value
    } else if value > upper {
        value - upper
    } else {
        0.0
    }
}

#[inline]
fn box_distance(v: &[f64], b: &BoundingBox) -> f64 {
    v.iter()
        .zip(b.lower.iter().zip(&b.upper))
        .map(|(&x, (&lo, &hi))| distance_to_interval(x, lo, hi))
        .sum()
}

/// Smallest ℓ1 point-to-box distance over `boxes`; `None` when there are no boxes.
pub fn exceedance_distance(v: &[f64], boxes: &[BoundingBox]) -> Option<f64> {
    boxes.iter().map(|b| box_distance(v, b)).reduce(f64::min)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class probabilities for one row of the store's logits array.
pub fn class_probabilities(row: &[f32], kind: LogitsKind) -> Result<Vec<f64>> {
    let wide: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
    match kind {
        LogitsKind::Logits => Ok(softmax(&wide)),
        LogitsKind::Probabilities => {
            let sum: f64 = wide.iter().sum();
            if wide.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
                return Err(Error::Invalid(format!("stored probabilities sum to {sum}, not 1")));
            }
            Ok(wide)
        }
    }
}

/// Class-conditional score; `None` if the class has no boxes.
pub fn class_score(v: &[f64], monitor: &Monitor, class: usize, base: BaseScore) -> Option<f64> {
    let boxes = monitor.boxes(class);
    match base {
        BaseScore::Ec => exceedance_count(v, boxes).map(|c| c as f64),
        BaseScore::Ed => exceedance_distance(v, boxes),
    }
}

fn check_width(v: &[f64], monitor: &Monitor) -> Result<()> {
    if v.len() != monitor.width() {
        return Err(Error::Dimension {
            expected: monitor.width(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Posterior-weighted class-conditional score.
///
/// A class without boxes is an error unless its probability is at most
/// [`NEGLIGIBLE_PROBABILITY`], in which case it is skipped.
pub fn aggregated_score_with_probabilities(
    v: &[f64],
    probabilities: &[f64],
    monitor: &Monitor,
    base: BaseScore,
) -> Result<f64> {
    check_width(v, monitor)?;
    if probabilities.len() != monitor.num_classes {
        return Err(Error::Dimension {
            expected: monitor.num_classes,
            got: probabilities.len(),
        });
    }
    let mut total = 0.0;
    for (k, &p) in probabilities.iter().enumerate() {
        match class_score(v, monitor, k, base) {
            Some(s) => total += p * s,
            None if p <= NEGLIGIBLE_PROBABILITY => {}
            None => return Err(Error::EmptyClass(k)),
        }
    }
    Ok(total)
}

/// [`aggregated_score_with_probabilities`] with `p = softmax(logits)`.
pub fn aggregated_score(v: &[f64], logits: &[f64], monitor: &Monitor, base: BaseScore) -> Result<f64> {
    aggregated_score_with_probabilities(v, &softmax(logits), monitor, base)
}

/// Result of scoring a whole store.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub records: Vec<ScoreRecord>,
    pub variants: Variants,
}

impl ScoreBatch {
    /// Samples for which an empty class forced a sentinel score.
    pub fn empty_class_hits(&self) -> usize {
        self.records.iter().filter(|r| r.hit_empty_class).count()
    }

    pub fn column(&self, variant: &str) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.get(variant)).collect()
    }
}

fn score_one(
    v: &[f64],
    probs: &[f64],
    predicted: usize,
    index: usize,
    monitor: &Monitor,
    variants: Variants,
) -> ScoreRecord {
    let sentinel = |base: BaseScore| match base {
        BaseScore::Ec => monitor.width() as f64,
        BaseScore::Ed => EMPTY_CLASS_DISTANCE,
    };
    let score = |k: usize, base: BaseScore| class_score(v, monitor, k, base).unwrap_or(sentinel(base));
    let empty = |k: usize| monitor.boxes(k).is_empty();

    let mut hit_empty = (variants.ec || variants.ed) && empty(predicted);
    let mut record = ScoreRecord {
        sample_index: index,
        predicted_class: predicted,
        ec: variants.ec.then(|| score(predicted, BaseScore::Ec) as usize),
        ed: variants.ed.then(|| score(predicted, BaseScore::Ed)),
        agg_ec: None,
        agg_ed: None,
        per_class: None,
        hit_empty_class: false,
    };

    if variants.any_aggregate() {
        let k_total = monitor.num_classes;
        let per_class = PerClassScores {
            ec: (0..k_total).map(|k| score(k, BaseScore::Ec)).collect(),
            ed: (0..k_total).map(|k| score(k, BaseScore::Ed)).collect(),
        };
        // Empty classes with negligible weight are skipped rather than
        // letting the sentinel swamp the sum.
        let aggregate = |scores: &[f64]| -> f64 {
            probs
                .iter()
                .zip(scores)
                .enumerate()
                .filter(|&(k, (&p, _))| !(empty(k) && p <= NEGLIGIBLE_PROBABILITY))
                .map(|(_, (&p, &s))| p * s)
                .sum()
        };
        hit_empty |= probs
            .iter()
            .enumerate()
            .any(|(k, &p)| empty(k) && p > NEGLIGIBLE_PROBABILITY);
        record.agg_ec = variants.agg_ec.then(|| aggregate(&per_class.ec));
        record.agg_ed = variants.agg_ed.then(|| aggregate(&per_class.ed));
        record.per_class = Some(per_class);
    }
    record.hit_empty_class = hit_empty;
    record
}

/// Scores every sample of `store` against `monitor`.
///
/// Classes without boxes yield sentinel scores (`ec = N_var`,
/// `ed = EMPTY_CLASS_DISTANCE`) and are counted in
/// [`ScoreBatch::empty_class_hits`].
pub fn score_batch(store: &FeatureStore, monitor: &Monitor, variants: Variants) -> Result<ScoreBatch> {
    if variants.is_empty() {
        return Err(Error::Config("no score variant selected".into()));
    }
    let var_cfg = &monitor.configs.monitor_vars;
    let layout = var_cfg.layout(store.manifest()).map_err(|e| match e {
        Error::UnknownLayer(name) => Error::LayoutMismatch(format!(
            "monitor expects layer `{name}`, which the store does not declare"
        )),
        other => other,
    })?;
    if let Some(diff) = monitor.layout.diff(&layout) {
        return Err(Error::LayoutMismatch(diff));
    }
    if store.num_classes() != monitor.num_classes {
        return Err(Error::LayoutMismatch(format!(
            "monitor has K = {}, store has K = {}",
            monitor.num_classes,
            store.num_classes()
        )));
    }
    if store.logits().is_none() {
        return Err(Error::MissingArray(
            "logits (logits.bin), needed to condition on the predicted class".into(),
        ));
    }
    let phi = build_monitoring_matrix(store, var_cfg)?;
    let kind = store.logits_kind();

    let records = (0..store.num_samples())
        .into_par_iter()
        .map(|i| {
            let row = store.logits_row(i).expect("logits present");
            let probs = class_probabilities(row, kind)?;
            let predicted = argmax(row);
            Ok(score_one(phi.row(i), &probs, predicted, i, monitor, variants))
        })
        .collect::<Result<Vec<_>>>()?;

    let batch = ScoreBatch { records, variants };
    let hits = batch.empty_class_hits();
    if hits > 0 {
        log::warn!("{hits} samples were scored against a class without boxes");
    }
    Ok(batch)
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed.
pub fn format_score(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{v:.8e}");
        let (mantissa, exponent) = s.split_once('e').expect("exponent form");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{exponent}")
    }
}

pub const SCORES_HEADER: &str = "index,predicted_class,ec,ed,agg_ec,agg_ed";

pub fn write_scores_csv(batch: &ScoreBatch, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{SCORES_HEADER}")?;
    let cell = |v: Option<f64>| v.map(format_score).unwrap_or_default();
    for r in &batch.records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.sample_index,
            r.predicted_class,
            r.ec.map(|c| c.to_string()).unwrap_or_default(),
            cell(r.ed),
            cell(r.agg_ec),
            cell(r.agg_ed),
        )?;
    }
    Ok(())
}

pub fn save_scores_csv(batch: &ScoreBatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_scores_csv(batch, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Score columns read back from a `scores.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    /// `(variant name, values)` for each non-empty variant column, in header order.
    pub columns: Vec<(String, Vec<f64>)>,
    pub rows: usize,
}

impl ScoreTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn variant_names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
        .clone();
    let wanted: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| Variants::NAMES.contains(h))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if wanted.is_empty() {
        return Err(Error::Invalid(format!("{}: no score columns", path.display())));
    }
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); wanted.len()];
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        for (slot, (i, name)) in values.iter_mut().zip(&wanted) {
            let cell = record.get(*i).unwrap_or("").trim();
            if cell.is_empty() {
                slot.push(None);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Invalid(format!("{}: bad {name} value `{cell}`", path.display())))?;
                slot.push(Some(v));
            }
        }
        rows += 1;
    }
    let mut columns = Vec::new();
    for ((_, name), col) in wanted.into_iter().zip(values) {
        let filled = col.iter().filter(|v| v.is_some()).count();
        if filled == 0 {
            continue;
        }
        if filled != col.len() {
            return Err(Error::Invalid(format!(
                "{}: column {name} is only partially filled",
                path.display()
            )));
        }
        columns.push((name, col.into_iter().flatten().collect()));
    }
    Ok(ScoreTable { columns, rows })
}
