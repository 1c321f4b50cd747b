//! The two-moons demo: 30 cluster-wise boxes over all hidden units of a
//! 2-32-32-1 regressor, written as CSV and JSON for plotting.
//!
//! ```text
//! cargo run --release -p bbas --example two_moons -- /tmp/moons
//! ```

use std::path::Path;

use bbas::geometry::{two_moons_demo, TwoMoonsConfig, TwoMoonsOutput};

pub fn run_example(dir: &Path, cfg: &TwoMoonsConfig) -> bbas::Result<TwoMoonsOutput> {
    let out = two_moons_demo(cfg, dir)?;
    println!(
        "{} samples, {} distinct activation patterns, {} boxes",
        out.samples.len(),
        out.clustering.groups,
        out.monitor.total_boxes()
    );
    let covered = out.grid_labels.iter().filter(|&&l| l >= 0).count();
    println!("{covered} of {} grid points fall in some box", out.grid_labels.len());
    for (j, f) in out.fragments.iter().enumerate().take(5) {
        println!("box {j}: n_b = {}, fragments on grid = {}", f.n_b, f.fragments_found);
    }
    Ok(out)
}

fn main() -> bbas::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "two-moons".into());
    run_example(Path::new(&dir), &TwoMoonsConfig::default())?;
    println!("outputs in {dir}");
    Ok(())
}
