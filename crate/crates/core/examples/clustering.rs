//! Complete-linkage agglomerative clustering and k-means on the same points.

use bbas::clustering::{agglomerate, kmeans, pairwise_distance, Linkage, Metric};
use ndarray::array;

/// Member indices per cluster.
type Clusters = Vec<Vec<usize>>;

pub fn run_example() -> bbas::Result<(Clusters, Clusters)> {
    let points = array![[0.0, 0.0], [0.2, 0.1], [0.1, 0.3], [5.0, 5.0], [5.2, 4.9], [9.0, 0.0]];
    let d = pairwise_distance(points.view(), Metric::Manhattan)?;
    let agg = agglomerate(&d, Linkage::Complete, 3);
    for m in &agg.merges {
        println!("merge {} <- {} at height {:.2}", m.kept, m.absorbed, m.height);
    }
    println!("complete linkage: {:?}", agg.clusters);
    let km = kmeans(points.view(), 3, 7);
    println!("k-means:          {km:?}");
    Ok((agg.clusters, km))
}

fn main() -> bbas::Result<()> {
    run_example()?;
    Ok(())
}
