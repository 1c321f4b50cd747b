//! Widening an existing monitor with new in-distribution samples instead of refitting.

use bbas::boxes::update_boxes;
use bbas::clustering::ClusterConfig;
use bbas::monitor_vars::{build_monitoring_matrix, MonitorVarConfig};
use bbas::pipeline::fit_monitor;
use bbas::scoring::{score_batch, Variants};
use bbas::synthetic::{synthetic_stores, SyntheticConfig};

pub fn run_example() -> bbas::Result<(usize, usize)> {
    let stores = synthetic_stores(&SyntheticConfig {
        train_per_class: 40,
        test_per_class: 20,
        ..Default::default()
    })?;
    let vars = MonitorVarConfig::default();
    let (monitor, _) = fit_monitor(&stores.train, &vars, &ClusterConfig::default())?;
    let before = score_batch(&stores.test, &monitor, Variants::parse("ec")?)?;
    let outside = before.records.iter().filter(|r| r.ec != Some(0)).count();

    // Put every new sample into the first box of its labelled class.
    let phi = build_monitoring_matrix(&stores.test, &vars)?;
    let classes: Vec<usize> = stores.test.labels().unwrap().iter().map(|&l| l as usize).collect();
    let clusters = vec![0; classes.len()];
    let widened = update_boxes(&monitor, phi.values.view(), &classes, &clusters)?;

    let after = score_batch(&stores.test, &widened, Variants::parse("ec")?)?;
    let still_outside = after.records.iter().filter(|r| r.ec != Some(0)).count();
    println!("test samples outside every box: {outside} before, {still_outside} after the update");
    Ok((outside, still_outside))
}

fn main() -> bbas::Result<()> {
    run_example()?;
    Ok(())
}
