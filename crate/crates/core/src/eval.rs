//! AUROC, FPR at 95% TPR, and the threshold decision rule.
//!
//! Conventions: OOD is the positive class and higher scores mean "more OOD".
//! A sample is flagged OOD iff its score is strictly greater than the
//! threshold; a score equal to the threshold counts as in-distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of OOD samples that must score above the threshold.
pub const TARGET_TPR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    InD,
    Ood,
}

pub fn decide(score: f64, tau: f64) -> Decision {
    if score > tau {
        Decision::Ood
    } else {
        Decision::InD
    }
}

fn check(ind: &[f64], ood: &[f64]) -> Result<()> {
    if ind.is_empty() || ood.is_empty() {
        return Err(Error::Invalid(
            "AUROC/FPR95 need non-empty InD and OOD score lists".into(),
        ));
    }
    if ind.iter().chain(ood).any(|v| v.is_nan()) {
        return Err(Error::Invalid("score lists contain NaN".into()));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Mann–Whitney estimate of `P(ood > ind) + ½·P(ood = ind)`.
///
/// Counts are kept in integers (ties doubled), so the result is the exact
/// pair-counting ratio rounded once.
pub fn auroc(ind: &[f64], ood: &[f64]) -> Result<f64> {
    check(ind, ood)?;
    let ind = sorted(ind);
    let mut doubled: u128 = 0;
    for &o in ood {
        let below = ind.partition_point(|&x| x < o);
        let not_above = ind.partition_point(|&x| x <= o);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(doubled as f64 / (2 * ind.len() as u128 * ood.len() as u128) as f64)
}

/// InD false-positive rate at the largest threshold keeping OOD recall ≥ 95%.
///
/// With `m = ⌈0.95·n_ood⌉` and `s` the m-th largest OOD score, every `τ < s`
/// keeps recall at least `m / n_ood`. The returned threshold is the largest
/// observed score (InD or OOD) below `s`, or the float just below `s` when
/// none exists; the false-positive rate is then the InD fraction with score `≥ s`.
pub fn fpr_at_95tpr(ind: &[f64], ood: &[f64]) -> Result<(f64, f64)> {
    check(ind, ood)?;
    let n = ood.len();
    let m = (95 * n).div_ceil(100);
    let mut desc = sorted(ood);
    desc.reverse();
    let cut = desc[m - 1];
    let tau = ind
        .iter()
        .chain(ood)
        .copied()
        .filter(|&v| v < cut)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .unwrap_or_else(|| cut.next_down());
    let false_pos = ind.iter().filter(|&&v| decide(v, tau) == Decision::Ood).count();
    Ok((false_pos as f64 / ind.len() as f64, tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub auroc: f64,
    pub fpr95: f64,
    pub threshold: f64,
    pub n_ind: usize,
    pub n_ood: usize,
}

pub fn evaluate(ind: &[f64], ood: &[f64]) -> Result<VariantReport> {
    let (fpr95, threshold) = fpr_at_95tpr(ind, ood)?;
    Ok(VariantReport {
        auroc: auroc(ind, ood)?,
        fpr95,
        threshold,
        n_ind: ind.len(),
        n_ood: ood.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSetReport {
    pub name: String,
    pub variants: BTreeMap<String, VariantReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub auroc: f64,
    pub fpr95: f64,
}

/// Per-OOD-set reports plus their macro average per variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ood_sets: Vec<OodSetReport>,
    pub average: BTreeMap<String, AverageRow>,
}

impl EvalReport {
    pub fn from_sets(ood_sets: Vec<OodSetReport>) -> Self {
        let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
        for set in &ood_sets {
            for (variant, r) in &set.variants {
                let e = sums.entry(variant.clone()).or_insert((0.0, 0.0, 0));
                e.0 += r.auroc;
                e.1 += r.fpr95;
                e.2 += 1;
            }
        }
        let average = sums
            .into_iter()
            .map(|(k, (a, f, n))| {
                (
                    k,
                    AverageRow {
                        auroc: a / n as f64,
                        fpr95: f / n as f64,
                    },
                )
            })
            .collect();
        EvalReport { ood_sets, average }
    }
}
