//! Adaptive Dormand-Prince against fixed-step RK4 on the Hopf regime.

use mlbench::integrate::{dopri5, rk4_fixed, SolverConfig, TimeGrid};
use mlbench::ml_model::vector_field;
use mlbench::{MlParams, Regime, State};

fn main() -> mlbench::Result<()> {
    let p = MlParams::regime(Regime::Hopf).with_current(90.0);
    let y0 = State::new(-60.0, 0.02);
    let grid = TimeGrid::uniform(0.0, 300.0, 3001)?;
    let adaptive = dopri5(|_, s| vector_field(s, &p), y0, (0.0, 300.0), &SolverConfig::ground_truth(), &grid)?;
    println!(
        "dopri5: {} accepted, {} rejected, {} evaluations",
        adaptive.stats.accepted, adaptive.stats.rejected, adaptive.stats.evals
    );
    // RK4 on a 0.01 ms grid, compared on the 0.1 ms output points.
    let fine = TimeGrid::uniform(0.0, 300.0, 30001)?;
    let rk = rk4_fixed(|_, s| vector_field(s, &p), y0, &fine)?;
    let worst = adaptive
        .trajectory
        .states
        .iter()
        .zip(rk.states.iter().step_by(10))
        .map(|(a, b)| (a.v - b.v).abs())
        .fold(0.0, f64::max);
    println!("max |V_dopri5 - V_rk4| = {worst:.3e} mV");
    Ok(())
}
