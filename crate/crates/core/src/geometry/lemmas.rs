//! Numerical checks of the activation-region lemmas.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{hamming, mlp_forward, pattern_linear_map, ActivationPattern, MlpSpec};
use crate::boxes::BoundingBox;
use crate::error::{Error, Result};

/// Relative threshold on `σ₂/σ₁` for the rank-one check.
pub const RANK_ONE_TOLERANCE: f64 = 1e-8;
/// Relative threshold on `σᵢ/σ₁` for numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Kernel radii probed for rank-deficient first layers.
pub const KERNEL_RADII: [f64; 3] = [10.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneReport {
    pub passed: bool,
    /// Singular values of `A′ − A`, descending.
    pub singular_values: Vec<f64>,
}

fn singular_values(m: DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Checks that patterns at Hamming distance one give linear maps differing by rank ≤ 1.
pub fn verify_rank_one_lemma(
    spec: &MlpSpec,
    pattern_a: &ActivationPattern,
    pattern_b: &ActivationPattern,
) -> Result<RankOneReport> {
    if pattern_a.len() != pattern_b.len() || hamming(pattern_a, pattern_b) != 1 {
        return Err(Error::Invalid(
            "rank-one check needs two patterns at Hamming distance 1".into(),
        ));
    }
    let (a, _) = pattern_linear_map(spec, pattern_a)?;
    let (b, _) = pattern_linear_map(spec, pattern_b)?;
    rank_one_of(b - a)
}

/// Rank-one test on an explicit matrix: `σ₂ < tol·max(σ₁, 1e-30)`.
pub fn rank_one_of(diff: DMatrix<f64>) -> Result<RankOneReport> {
    let singular_values = singular_values(diff);
    let s1 = singular_values.first().copied().unwrap_or(0.0);
    let s2 = singular_values.get(1).copied().unwrap_or(0.0);
    Ok(RankOneReport {
        passed: s2 < RANK_ONE_TOLERANCE * s1.max(1e-30),
        singular_values,
    })
}

/// Regular lattice over a rectangle of the input plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
    pub resolution: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }

    fn coord(range: (f64, f64), i: usize, res: usize) -> f64 {
        if res < 2 {
            return range.0;
        }
        range.0 + (range.1 - range.0) * i as f64 / (res - 1) as f64
    }

    /// Point at column `c` (along x1) of row `r` (along x2).
    pub fn point(&self, r: usize, c: usize) -> [f64; 2] {
        [
            Self::coord(self.x1, c, self.resolution),
            Self::coord(self.x2, r, self.resolution),
        ]
    }

    /// Points in row-major order, x1 varying fastest.
    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.resolution).flat_map(move |r| (0..self.resolution).map(move |c| self.point(r, c)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentReport {
    /// Coordinates whose interval straddles zero.
    pub n_b: usize,
    /// Distinct sign configurations of those coordinates among grid points in the preimage.
    pub fragments_found: usize,
    pub points_inside: usize,
    pub passed: bool,
}

fn straddling(b: &BoundingBox) -> Vec<usize> {
    (0..b.dim()).filter(|&i| b.lower[i] < 0.0 && 0.0 < b.upper[i]).collect()
}

/// Counts sign fragments of one box over all hidden preactivations.
pub fn fragment_bound_check(spec: &MlpSpec, bbox: &BoundingBox, grid: &Grid) -> Result<FragmentReport> {
    let mut r = fragment_bound_check_all(spec, std::slice::from_ref(bbox), grid)?;
    Ok(r.remove(0))
}

/// [`fragment_bound_check`] for many boxes with one network pass per grid point.
pub fn fragment_bound_check_all(spec: &MlpSpec, boxes: &[BoundingBox], grid: &Grid) -> Result<Vec<FragmentReport>> {
    if spec.input_dim() != 2 {
        return Err(Error::Invalid(format!(
            "fragment enumeration needs a 2-input network, got {}",
            spec.input_dim()
        )));
    }
    for b in boxes {
        b.validate(spec.neurons())?;
    }
    let straddle: Vec<Vec<usize>> = boxes.iter().map(straddling).collect();
    let empty = || {
        (
            vec![BTreeSet::<Vec<bool>>::new(); boxes.len()],
            vec![0usize; boxes.len()],
        )
    };
    let (configs, inside) = (0..grid.resolution)
        .into_par_iter()
        .map(|r| {
            let (mut seen, mut count) = empty();
            for c in 0..grid.resolution {
                let f = mlp_forward(spec, &grid.point(r, c)).expect("input width checked");
                let phi: Vec<f64> = f.preactivations.concat();
                for (j, b) in boxes.iter().enumerate() {
                    if b.contains_unchecked(&phi) {
                        count[j] += 1;
                        seen[j].insert(straddle[j].iter().map(|&i| phi[i] > 0.0).collect());
                    }
                }
            }
            (seen, count)
        })
        .reduce(empty, |(mut sa, mut ca), (sb, cb)| {
            for j in 0..sa.len() {
                sa[j].extend(sb[j].iter().cloned());
                ca[j] += cb[j];
            }
            (sa, ca)
        });
    Ok(straddle
        .iter()
        .zip(configs)
        .zip(inside)
        .map(|((s, seen), points_inside)| {
            let n_b = s.len();
            let fragments_found = seen.len();
            let bound = if n_b >= usize::BITS as usize {
                usize::MAX
            } else {
                1usize << n_b
            };
            FragmentReport {
                n_b,
                fragments_found,
                points_inside,
                passed: fragments_found <= bound,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub rank: usize,
    pub full_rank: bool,
    /// In-region starting point of every probe.
    pub anchor: Vec<f64>,
    /// Norm bound on the region when the first layer has full column rank.
    pub radius: Option<f64>,
    /// Probe points that landed inside the region.
    pub inside_probes: usize,
    pub total_probes: usize,
    pub passed: bool,
}

/// Probes whether the preimage of a box over first-layer preactivations is bounded.
///
/// Full column rank: every `x` in the region satisfies
/// `‖x‖ ≤ √n₁·M / σ_min` with `M = maxᵢ max(|Lᵢ − bᵢ|, |Uᵢ − bᵢ|)`, so probes
/// beyond that radius along each ray must fall outside. Rank-deficient: the
/// region is invariant under kernel translations, so points `x₀ + t·v` for a
/// kernel vector `v` must stay inside. Empty `probe_rays` means `±eᵢ`.
pub fn first_layer_boundedness_check(
    spec: &MlpSpec,
    bbox: &BoundingBox,
    probe_rays: &[Vec<f64>],
) -> Result<BoundednessReport> {
    let layer = spec
        .hidden
        .first()
        .ok_or_else(|| Error::Invalid("network has no hidden layer".into()))?;
    let (n1, n_in) = (layer.outputs(), layer.inputs());
    bbox.validate(n1)?;
    let w = layer.matrix();
    let bias = layer.bias_vector();
    let in_region = |x: &DVector<f64>| bbox.contains_unchecked((&w * x + &bias).as_slice());

    // Pad to square so the SVD also returns kernel directions when n₁ < n_in.
    let rows = n1.max(n_in);
    let mut padded = DMatrix::<f64>::zeros(rows, n_in);
    padded.view_mut((0, 0), (n1, n_in)).copy_from(&w);
    let svd = padded.svd(true, true);
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let s1 = sigma.iter().copied().fold(0.0, f64::max);
    let rank = sigma.iter().filter(|&&s| s > RANK_TOLERANCE * s1).count();
    let full_rank = rank == n_in;

    let center = DVector::from_iterator(n1, (0..n1).map(|i| 0.5 * (bbox.lower[i] + bbox.upper[i])));
    let pinv = w
        .clone()
        .pseudo_inverse(RANK_TOLERANCE * s1.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let anchor = pinv * (center - &bias);
    if !in_region(&anchor) {
        return Err(Error::Invalid(
            "no in-region point found: the box center is not attained by the first layer".into(),
        ));
    }

    let default_rays: Vec<Vec<f64>>;
    let rays = if probe_rays.is_empty() {
        default_rays = (0..n_in)
            .flat_map(|i| {
                [1.0, -1.0].map(|s| {
                    let mut e = vec![0.0; n_in];
                    e[i] = s;
                    e
                })
            })
            .collect();
        &default_rays
    } else {
        probe_rays
    };

    let mut inside_probes = 0;
    let mut total_probes = 0;
    let radius;
    if full_rank {
        let s_min = sigma.iter().copied().fold(f64::INFINITY, f64::min);
        let m = (0..n1)
            .map(|i| (bbox.lower[i] - bias[i]).abs().max((bbox.upper[i] - bias[i]).abs()))
            .fold(0.0, f64::max);
        let r = (n1 as f64).sqrt() * m / s_min;
        radius = Some(r);
        for ray in rays {
            if ray.len() != n_in {
                return Err(Error::Dimension {
                    expected: n_in,
                    got: ray.len(),
                });
            }
            let d = DVector::from_column_slice(ray);
            let norm = d.norm();
            if norm == 0.0 {
                continue;
            }
            let d = d / norm;
            // ‖x₀ + t·d‖ ≥ t − ‖x₀‖ > R
            let base = r + anchor.norm();
            for scale in [1.0001, 2.0, 10.0, 1000.0] {
                let x = &anchor + &d * (base * scale);
                total_probes += 1;
                if in_region(&x) {
                    inside_probes += 1;
                }
            }
        }
    } else {
        radius = None;
        let v_t = svd.v_t.as_ref().expect("requested V");
        // The right singular vector of the smallest singular value lies in the kernel.
        let smallest = (0..sigma.len())
            .min_by(|&a, &b| sigma[a].total_cmp(&sigma[b]))
            .expect("nonempty");
        let v = v_t.row(smallest).transpose();
        for t in KERNEL_RADII {
            total_probes += 1;
            if in_region(&(&anchor + &v * t)) {
                inside_probes += 1;
            }
        }
    }
    let passed = if full_rank {
        inside_probes == 0
    } else {
        inside_probes == total_probes
    };
    Ok(BoundednessReport {
        rank,
        full_rank,
        anchor: anchor.iter().copied().collect(),
        radius,
        inside_probes,
        total_probes,
        passed,
    })
}
