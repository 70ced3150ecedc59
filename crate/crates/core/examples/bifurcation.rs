//! Peak-to-peak amplitude sweep over I in [0, 120] for every regime.
//!
//!     cargo run --release --example bifurcation -- [out_dir]

use std::fs;
use std::path::PathBuf;

use mlbench::bench::{bifurcation_svg, bifurcation_sweep, SweepConfig};
use mlbench::Regime;

fn main() -> mlbench::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "mlbench-out".into()));
    fs::create_dir_all(&dir).map_err(|e| mlbench::Error::io(&dir, e))?;
    let cfg = SweepConfig::default();
    let mut curves = Vec::new();
    for regime in Regime::ALL {
        let curve = bifurcation_sweep(regime, &cfg)?;
        // First current with a sustained swing above 30 mV.
        let onset = curve.i_values.iter().zip(&curve.amplitudes).find(|(_, a)| **a > 30.0).map(|(i, _)| *i);
        println!("{:>10}: first I with amplitude > 30 mV: {onset:?}", regime.name());
        let path = dir.join(format!("bifurcation-{regime}.csv"));
        fs::write(&path, curve.to_csv()).map_err(|e| mlbench::Error::io(&path, e))?;
        curves.push(curve);
    }
    let svg = dir.join("bifurcation.svg");
    fs::write(&svg, bifurcation_svg(&curves)).map_err(|e| mlbench::Error::io(&svg, e))?;
    println!("wrote {}", svg.display());
    Ok(())
}
