//! Ground-truth trajectories for the three regimes at their representative
//! currents, written as `t,V,N` CSV.
//!
//!     cargo run --example generate_data -- [out_dir]

use std::path::PathBuf;

use mlbench::bench::{generate_data, peak_to_peak, DEFAULT_POINTS, DEFAULT_T_END, DEFAULT_Y0};
use mlbench::Regime;

fn main() -> mlbench::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "mlbench-out".into()));
    for regime in Regime::ALL {
        let i = regime.representative_current();
        let path = dir.join(format!("data-{regime}-i{i}.csv"));
        let traj = generate_data(regime, i, DEFAULT_POINTS, DEFAULT_T_END, DEFAULT_Y0, &path)?;
        println!(
            "{:>10} I={i:<4} rows={} late peak-to-peak V={:.2} mV -> {}",
            regime.name(),
            traj.len(),
            peak_to_peak(&traj, 0.5),
            path.display()
        );
    }
    Ok(())
}
