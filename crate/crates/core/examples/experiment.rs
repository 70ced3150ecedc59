//! A small method x regime x epoch grid with full artifacts and the report
//! tables, then a replay of one run from its manifest.
//!
//!     cargo run --release --example experiment -- [out_dir]

use std::fs;
use std::path::PathBuf;

use mlbench::bench::{run_experiment, run_grid, ExperimentManifest, Method};
use mlbench::Regime;

fn main() -> mlbench::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "mlbench-out/grid".into()));
    let base = ExperimentManifest { n_points: 200, ..ExperimentManifest::default() };
    let rows = run_grid(&base, &[Method::Pinn, Method::Node], &[Regime::Hopf], &[20, 50], &root)?;
    for r in &rows {
        println!("{:<6} {:<5} epochs={:<3} total_mse={:.4e}", r.scenario, r.method, r.epochs, r.total_mse);
    }

    let dir = fs::read_dir(&root)
        .map_err(|e| mlbench::Error::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| p.join("manifest.txt").is_file())
        .expect("a run directory");
    let before = fs::read_to_string(dir.join("metrics.csv")).map_err(|e| mlbench::Error::io(&dir, e))?;
    let manifest = ExperimentManifest::load(&dir.join("manifest.txt"))?;
    run_experiment(&manifest, &root)?;
    let after = fs::read_to_string(dir.join("metrics.csv")).map_err(|e| mlbench::Error::io(&dir, e))?;
    println!("replayed {}: metrics identical = {}", dir.display(), before == after);
    Ok(())
}
