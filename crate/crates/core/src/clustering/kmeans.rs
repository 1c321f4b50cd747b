use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn row(m: &Array2<f64>, i: usize) -> &[f64] {
    m.row(i).to_slice().expect("owned rows are contiguous")
}

/// k-means++ seeding.
fn seed_centroids(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(row(points, i), row(points, chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Rounding can walk past the last positive weight.
            if closest[pick] == 0.0 {
                pick = closest.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Every point coincides with a centroid already.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq_dist(row(points, i), row(points, next)));
        }
    }
    points.select(ndarray::Axis(0), &chosen)
}

fn nearest(point: &[f64], centroids: &Array2<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for j in 0..centroids.nrows() {
        let d = sq_dist(point, row(centroids, j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

fn recompute(points: &Array2<f64>, assign: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    for (i, &c) in assign.iter().enumerate() {
        counts[c] += 1;
        let mut s = sums.row_mut(c);
        s += &points.row(i);
    }
    for (j, &count) in counts.iter().enumerate() {
        if count > 0 {
            let mean = &sums.row(j) / count as f64;
            centroids.row_mut(j).assign(&mean);
        }
    }
}

/// Moves the farthest member of the largest cluster into each empty cluster.
fn repair_empty(points: &Array2<f64>, assign: &mut [usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assign.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).fold(0, |b, j| if counts[j] > counts[b] { j } else { b });
        if counts[largest] < 2 {
            return;
        }
        let mut far = (usize::MAX, f64::NEG_INFINITY);
        for (i, &c) in assign.iter().enumerate() {
            if c == largest {
                let d = sq_dist(row(points, i), row(centroids, largest));
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        assign[far.0] = empty;
        centroids.row_mut(empty).assign(&points.row(far.0));
        recompute(points, assign, centroids);
    }
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Returns clusters ordered by smallest member, members ascending. `k` is
/// clamped to `1..=n`.
pub fn kmeans(psi: ArrayView2<f64>, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = psi.nrows();
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    let points = psi.to_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&points, k, &mut rng);

    let mut assign: Vec<usize> = vec![usize::MAX; n];
    for _ in 0..MAX_ITERATIONS {
        let next: Vec<usize> = (0..n).map(|i| nearest(row(&points, i), &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
        recompute(&points, &assign, &mut centroids);
        repair_empty(&points, &mut assign, &mut centroids);
    }
    repair_empty(&points, &mut assign, &mut centroids);

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        clusters[c].push(i);
    }
    clusters.retain(|c| !c.is_empty());
    clusters.sort_by_key(|c| c[0]);
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let blob = i % 2;
            let center = if blob == 0 { [0.0, 0.0] } else { [12.0, -12.0] };
            data.push(center[0] + noise.sample(&mut rng));
            data.push(center[1] + noise.sample(&mut rng));
            truth.push(blob);
        }
        (Array2::from_shape_vec((60, 2), data).unwrap(), truth)
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (x, truth) = blobs(7);
        let clusters = kmeans(x.view(), 2, 1);
        assert_eq!(clusters.len(), 2);
        for c in &clusters {
            let label = truth[c[0]];
            assert!(c.iter().all(|&i| truth[i] == label));
        }
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let (x, _) = blobs(3);
        let x = x.slice(ndarray::s![..10, ..]).to_owned();
        let clusters = kmeans(x.view(), 10, 5);
        assert_eq!(clusters, (0..10).map(|i| vec![i]).collect::<Vec<_>>());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (x, _) = blobs(11);
        assert_eq!(kmeans(x.view(), 5, 42), kmeans(x.view(), 5, 42));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let x = Array2::from_shape_vec((4, 1), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let clusters = kmeans(x.view(), 3, 0);
        assert_eq!(clusters.len(), 3);
        assert_eq!(clusters.concat().len(), 4);
    }
}
