//! Exceedance count and distance against hand-written boxes, plus the
//! posterior-weighted aggregate.

use bbas::boxes::{BoundingBox, Monitor, MonitorConfigs, MONITOR_VERSION};
use bbas::monitor_vars::{Layout, Segment, SegmentKind};
use bbas::scoring::{aggregated_score, class_score, exceedance_count, exceedance_distance, BaseScore};

fn bx(lower: &[f64], upper: &[f64]) -> BoundingBox {
    BoundingBox {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        size: 1,
    }
}

pub fn run_example() -> bbas::Result<()> {
    let boxes = [bx(&[0.0, 0.0], &[1.0, 1.0]), bx(&[2.0, -1.0], &[3.0, 0.0])];
    for v in [[0.5, 0.5], [1.5, 0.5], [4.0, 2.0]] {
        println!(
            "{v:?}: ec = {:?}, ed = {:?}",
            exceedance_count(&v, &boxes).unwrap(),
            exceedance_distance(&v, &boxes).unwrap()
        );
    }

    // Two classes over the same two coordinates.
    let monitor = Monitor {
        version: MONITOR_VERSION,
        num_classes: 2,
        layout: Layout {
            segments: vec![Segment {
                layer: "h".into(),
                kind: SegmentKind::Preactivation,
                width: 2,
            }],
        },
        classes: vec![boxes.to_vec(), vec![bx(&[5.0, 5.0], &[6.0, 6.0])]],
        configs: MonitorConfigs::default(),
    };
    let v = [0.5, 0.5];
    let per_class: Vec<f64> = (0..2)
        .map(|k| class_score(&v, &monitor, k, BaseScore::Ed).unwrap())
        .collect();
    let agg = aggregated_score(&v, &[2.0, 0.0], &monitor, BaseScore::Ed)?;
    println!("per-class ed {per_class:?}, aggregate with logits [2, 0]: {agg:.4}");
    assert!(agg > per_class[0] && agg < per_class[1]);
    Ok(())
}

fn main() -> bbas::Result<()> {
    run_example()
}
