//! Fits the 2-32-32-1 two-moons regressor and writes its weights as JSON.
//!
//! The bundled `assets/two_moons_weights.json` was produced with
//!
//! ```text
//! cargo run --release -p bbas --example train_two_moons -- crates/core/assets/two_moons_weights.json
//! ```

use std::path::Path;

use bbas::geometry::two_moons::{target, train_mlp, two_moons_data};
use bbas::geometry::{MlpSpec, TwoMoonsConfig};

pub fn run_example(epochs: usize, out: Option<&Path>) -> bbas::Result<(MlpSpec, f64)> {
    let cfg = TwoMoonsConfig::default();
    let xs = two_moons_data(cfg.n_samples, cfg.noise, cfg.seed);
    let ys: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
    let (spec, loss) = train_mlp(&xs, &ys, &cfg.hidden_widths, cfg.seed, epochs, cfg.learning_rate)?;
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n";
        std::fs::write(path, text).map_err(|e| bbas::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    Ok((spec, loss))
}

fn main() -> bbas::Result<()> {
    let out = std::env::args().nth(1);
    let epochs = TwoMoonsConfig::default().epochs;
    let (_, loss) = run_example(epochs, out.as_deref().map(Path::new))?;
    println!("trained {epochs} epochs, final loss {loss:.5}");
    if let Some(path) = out {
        println!("weights written to {path}");
    }
    Ok(())
}
