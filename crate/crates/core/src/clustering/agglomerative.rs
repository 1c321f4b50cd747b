//! Greedy agglomerative clustering over a precomputed distance matrix.
//!
//! Clusters are identified by their smallest member index. At every step the
//! pair with the smallest linkage distance is merged; equal distances are
//! broken by the lexicographically smallest `(min-id, max-id)` pair, so runs are
//! reproducible bit for bit. Linkage distances are maintained with the
//! Lance–Williams update, and each live cluster caches its nearest neighbour
//! so a step costs O(n) amortized instead of a full O(n²) scan.

use serde::{Deserialize, Serialize};

use super::distance::{condensed_index, CondensedDistances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Complete,
    Average,
}

impl Linkage {
    #[inline]
    fn update(self, d_a: f64, d_b: f64, size_a: usize, size_b: usize) -> f64 {
        match self {
            Linkage::Single => d_a.min(d_b),
            Linkage::Complete => d_a.max(d_b),
            Linkage::Average => (size_a as f64 * d_a + size_b as f64 * d_b) / (size_a + size_b) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Surviving cluster id (the smaller one).
    pub kept: usize,
    pub absorbed: usize,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agglomeration {
    /// Clusters ordered by smallest member; members ascending.
    pub clusters: Vec<Vec<usize>>,
    pub merges: Vec<Merge>,
}

/// Merges singletons until `target_k` clusters remain.
///
/// `target_k` is clamped to `1..=n`; an empty input gives no clusters.
pub fn agglomerate(distances: &CondensedDistances, linkage: Linkage, target_k: usize) -> Agglomeration {
    let (n, mut d) = distances.clone().into_raw();
    if n == 0 {
        return Agglomeration {
            clusters: Vec::new(),
            merges: Vec::new(),
        };
    }
    let target_k = target_k.clamp(1, n);

    let dist = |d: &[f64], i: usize, j: usize| -> f64 {
        if i < j {
            d[condensed_index(n, i, j)]
        } else {
            d[condensed_index(n, j, i)]
        }
    };

    let mut active = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    let nearest = |d: &[f64], active: &[bool], i: usize| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in (0..n).filter(|&j| j != i && active[j]) {
            let dj = dist(d, i, j);
            if dj < best.1 || best.0 == usize::MAX {
                best = (j, dj);
            }
        }
        best
    };

    for i in 0..n {
        (nn[i], nn_dist[i]) = nearest(&d, &active, i);
    }

    let mut merges = Vec::with_capacity(n - target_k);
    let mut live = n;
    while live > target_k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            let key = (nn_dist[i], i.min(nn[i]), i.max(nn[i]));
            let better = match best {
                None => true,
                Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1, key.2) < (b.1, b.2)),
            };
            if better {
                best = Some(key);
            }
        }
        let (height, a, b) = best.expect("at least two live clusters");

        let (size_a, size_b) = (members[a].len(), members[b].len());
        for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
            let updated = linkage.update(dist(&d, a, k), dist(&d, b, k), size_a, size_b);
            let idx = if a < k {
                condensed_index(n, a, k)
            } else {
                condensed_index(n, k, a)
            };
            d[idx] = updated;
        }
        active[b] = false;
        let absorbed = std::mem::take(&mut members[b]);
        members[a].extend(absorbed);
        live -= 1;
        merges.push(Merge {
            kept: a,
            absorbed: b,
            height,
        });

        (nn[a], nn_dist[a]) = nearest(&d, &active, a);
        for k in (0..n).filter(|&k| active[k] && k != a) {
            if nn[k] == a || nn[k] == b {
                (nn[k], nn_dist[k]) = nearest(&d, &active, k);
            } else {
                let dk = dist(&d, k, a);
                if dk < nn_dist[k] || (dk == nn_dist[k] && a < nn[k]) {
                    nn[k] = a;
                    nn_dist[k] = dk;
                }
            }
        }
    }

    let clusters = members
        .into_iter()
        .zip(&active)
        .filter(|(_, &on)| on)
        .map(|(mut m, _)| {
            m.sort_unstable();
            m
        })
        .collect();
    Agglomeration { clusters, merges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::distance::{pairwise_distance, Metric};
    use ndarray::Array2;
    use proptest::prelude::*;

    fn points_1d(xs: &[f64]) -> CondensedDistances {
        let psi = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap();
        pairwise_distance(psi.view(), Metric::Euclidean).unwrap()
    }

    #[test]
    fn four_points_two_groups() {
        let d = points_1d(&[0.0, 0.1, 10.0, 10.1]);
        let r = agglomerate(&d, Linkage::Complete, 2);
        assert_eq!(r.clusters, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn target_n_and_one() {
        let d = points_1d(&[3.0, 1.0, 4.0, 1.5, 9.0]);
        let all = agglomerate(&d, Linkage::Average, 5);
        assert_eq!(all.clusters, (0..5).map(|i| vec![i]).collect::<Vec<_>>());
        assert!(all.merges.is_empty());
        let one = agglomerate(&d, Linkage::Single, 1);
        assert_eq!(one.clusters, vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        // All pairwise distances equal.
        let d = CondensedDistances::from_fn(4, |_, _| 1.0);
        let r = agglomerate(&d, Linkage::Complete, 3);
        assert_eq!(r.clusters, vec![vec![0, 1], vec![2], vec![3]]);
        let r = agglomerate(&d, Linkage::Complete, 2);
        assert_eq!(r.clusters, vec![vec![0, 1, 2], vec![3]]);
    }

    /// Recomputes every linkage distance from scratch at every step.
    fn brute_force(d: &CondensedDistances, linkage: Linkage, target: usize) -> Vec<Vec<usize>> {
        let mut clusters: Vec<Vec<usize>> = (0..d.len()).map(|i| vec![i]).collect();
        while clusters.len() > target {
            let mut best: Option<(f64, usize, usize)> = None;
            for x in 0..clusters.len() {
                for y in x + 1..clusters.len() {
                    let cross: Vec<f64> = clusters[x]
                        .iter()
                        .flat_map(|&i| clusters[y].iter().map(move |&j| d.get(i, j)))
                        .collect();
                    let v = match linkage {
                        Linkage::Single => cross.iter().cloned().fold(f64::INFINITY, f64::min),
                        Linkage::Complete => cross.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                        Linkage::Average => cross.iter().sum::<f64>() / cross.len() as f64,
                    };
                    // clusters stay sorted by min member, so (x, y) order is id order
                    if best.is_none_or(|b| v < b.0) {
                        best = Some((v, x, y));
                    }
                }
            }
            let (_, x, y) = best.unwrap();
            let moved = clusters.remove(y);
            clusters[x].extend(moved);
            clusters[x].sort_unstable();
        }
        clusters
    }

    proptest! {
        #[test]
        fn matches_brute_force_on_integer_grids(
            pts in prop::collection::vec((0i32..4, 0i32..4), 2..=8),
            target in 1usize..8,
            complete in any::<bool>(),
        ) {
            let n = pts.len();
            let flat: Vec<f64> = pts.iter().flat_map(|&(a, b)| [a as f64, b as f64]).collect();
            let psi = Array2::from_shape_vec((n, 2), flat).unwrap();
            let d = pairwise_distance(psi.view(), Metric::Manhattan).unwrap();
            let linkage = if complete { Linkage::Complete } else { Linkage::Single };
            let target = target.min(n);
            prop_assert_eq!(agglomerate(&d, linkage, target).clusters, brute_force(&d, linkage, target));
        }

        #[test]
        fn average_matches_brute_force(
            flat in prop::collection::vec(-5.0f64..5.0, 2..=16),
            target in 1usize..8,
        ) {
            let n = flat.len() / 2;
            prop_assume!(n >= 2);
            let psi = Array2::from_shape_vec((n, 2), flat[..2 * n].to_vec()).unwrap();
            let d = pairwise_distance(psi.view(), Metric::Euclidean).unwrap();
            let target = target.min(n);
            prop_assert_eq!(agglomerate(&d, Linkage::Average, target).clusters, brute_force(&d, Linkage::Average, target));
        }

        #[test]
        fn complete_linkage_heights_never_decrease(
            flat in prop::collection::vec(-10.0f64..10.0, 4..=120),
        ) {
            let n = flat.len() / 2;
            let psi = Array2::from_shape_vec((n, 2), flat[..2 * n].to_vec()).unwrap();
            let d = pairwise_distance(psi.view(), Metric::Manhattan).unwrap();
            let r = agglomerate(&d, Linkage::Complete, 1);
            for w in r.merges.windows(2) {
                prop_assert!(w[0].height <= w[1].height);
            }
        }

        #[test]
        fn clusters_form_a_disjoint_cover(
            flat in prop::collection::vec(-10.0f64..10.0, 2..=80),
            target in 1usize..20,
        ) {
            let n = flat.len() / 2;
            prop_assume!(n >= 1);
            let psi = Array2::from_shape_vec((n, 2), flat[..2 * n].to_vec()).unwrap();
            let d = pairwise_distance(psi.view(), Metric::Euclidean).unwrap();
            let r = agglomerate(&d, Linkage::Complete, target);
            prop_assert_eq!(r.clusters.len(), target.min(n));
            let mut all: Vec<usize> = r.clusters.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(r.clusters.iter().all(|c| !c.is_empty()));
        }
    }
}
