use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Manhattan,
    Euclidean,
    Hamming,
}

impl Metric {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Hamming => a.iter().zip(b).filter(|(x, y)| x != y).count() as f64,
        }
    }
}

/// Upper triangle of a symmetric distance matrix, row-major, diagonal excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedDistances {
    n: usize,
    data: Vec<f64>,
}

#[inline]
pub(crate) fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl CondensedDistances {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let data = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let f = &f;
                (i + 1..n).map(move |j| f(i, j))
            })
            .collect();
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.data[condensed_index(self.n, i, j)],
            std::cmp::Ordering::Greater => self.data[condensed_index(self.n, j, i)],
        }
    }

    pub(crate) fn into_raw(self) -> (usize, Vec<f64>) {
        (self.n, self.data)
    }
}

/// All pairwise distances between the rows of `psi`.
pub fn pairwise_distance(psi: ArrayView2<f64>, metric: Metric) -> Result<CondensedDistances> {
    if metric == Metric::Hamming {
        if let Some(v) = psi.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Config(format!(
                "hamming distance needs binary features, found value {v}"
            )));
        }
    }
    let rows: Vec<Vec<f64>> = psi.outer_iter().map(|r| r.to_vec()).collect();
    Ok(CondensedDistances::from_fn(rows.len(), |i, j| {
        metric.eval(&rows[i], &rows[j])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn metric_examples() {
        assert_eq!(Metric::Hamming.eval(&[1.0, 0.0, 1.0], &[1.0, 1.0, 1.0]), 1.0);
        assert_eq!(Metric::Manhattan.eval(&[0.0, 0.0], &[1.0, 2.0]), 3.0);
        assert_eq!(Metric::Euclidean.eval(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        for m in [Metric::Manhattan, Metric::Euclidean, Metric::Hamming] {
            assert_eq!(m.eval(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        }
    }

    #[test]
    fn condensed_layout_is_symmetric() {
        let psi = array![[0.0, 0.0], [1.0, 2.0], [4.0, 4.0]];
        let d = pairwise_distance(psi.view(), Metric::Manhattan).unwrap();
        assert_eq!(d.get(0, 1), 3.0);
        assert_eq!(d.get(1, 0), 3.0);
        assert_eq!(d.get(0, 2), 8.0);
        assert_eq!(d.get(2, 1), 5.0);
        assert_eq!(d.get(2, 2), 0.0);
    }

    #[test]
    fn hamming_rejects_real_values() {
        let psi = array![[0.0, 0.5]];
        assert!(pairwise_distance(psi.view(), Metric::Hamming).is_err());
    }
}
