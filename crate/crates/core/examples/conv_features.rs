//! Monitoring variables of a convolutional layer: activation fractions and
//! normalized channel extrema, from raw tensors or stored summaries.

use bbas::monitor_vars::{build_monitoring_matrix, summarize_conv_layers, MonitorVarConfig};
use bbas::store::FeatureStore;

pub fn run_example() -> bbas::Result<()> {
    // Two samples of a 2-channel 2x2 preactivation tensor plus a penultimate vector.
    let mut store = FeatureStore::new(2, 1);
    store.push_conv_raw(
        "block4",
        [2, 2, 2],
        vec![
            1.0, -1.0, 0.0, 2.0, -0.5, -0.5, -0.5, 3.0, // sample 0
            0.1, 0.2, 0.3, 0.4, -1.0, -2.0, -3.0, -4.0, // sample 1
        ],
    )?;
    store.push_vector("z", 3, vec![3.0, 0.0, 4.0, 1.0, 1.0, 1.0])?;

    let cfg = MonitorVarConfig::default();
    let phi = build_monitoring_matrix(&store, &cfg)?;
    for seg in &phi.layout.segments {
        println!("{:>8} {:?} x{}", seg.layer, seg.kind, seg.width);
    }
    for i in 0..phi.nrows() {
        let row: Vec<String> = phi.row(i).iter().map(|v| format!("{v:.3}")).collect();
        println!("sample {i}: [{}]", row.join(", "));
    }

    // Storing only (f, m, M) per channel gives the same vectors.
    let summary = summarize_conv_layers(&store)?;
    assert_eq!(build_monitoring_matrix(&summary, &cfg)?.values, phi.values);
    Ok(())
}

fn main() -> bbas::Result<()> {
    run_example()
}
