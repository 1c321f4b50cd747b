//! Writes a seeded train / test / OOD triple of feature stores to disk.
//!
//! ```text
//! cargo run -p bbas --example synthetic_stores -- /tmp/bbas-synth
//! ```
//!
//! Each directory is a complete store (`manifest.json` plus little-endian
//! float32 arrays) that the `bbas` binary can fit on and score.

use std::path::{Path, PathBuf};

use bbas::store::{read_store, write_store};
use bbas::synthetic::{synthetic_stores, SyntheticConfig};

pub fn run_example(dir: &Path, cfg: &SyntheticConfig) -> bbas::Result<Vec<PathBuf>> {
    let stores = synthetic_stores(cfg)?;
    let mut written = Vec::new();
    for (name, store) in [("train", &stores.train), ("test", &stores.test), ("ood", &stores.ood)] {
        let path = dir.join(name);
        write_store(store, &path)?;
        // Reading back runs every format check.
        let back = read_store(&path)?;
        assert_eq!(&back, store);
        written.push(path);
    }
    Ok(written)
}

fn main() -> bbas::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "bbas-synthetic".into());
    for path in run_example(Path::new(&dir), &SyntheticConfig::default())? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
