//! Fixed points, Jacobians and their classification at the representative
//! currents.

use mlbench::ml_model::{find_equilibria, DEFAULT_SCAN_POINTS, DEFAULT_V_BRACKET};
use mlbench::{MlParams, Regime};

fn main() -> mlbench::Result<()> {
    for regime in Regime::ALL {
        let i = regime.representative_current();
        let p = MlParams::regime(regime).with_current(i);
        println!("{regime} I={i}");
        for e in find_equilibria(&p, DEFAULT_V_BRACKET, DEFAULT_SCAN_POINTS)? {
            let j = e.jacobian;
            println!("  (V*, N*) = ({:.4}, {:.4})  {}", e.state.v, e.state.n, e.stability.label());
            println!("  J = [[{:.4}, {:.4}], [{:.6}, {:.6}]]", j[0][0], j[0][1], j[1][0], j[1][1]);
            println!("  eigenvalues {:.4}, {:.4}", e.eigenvalues[0], e.eigenvalues[1]);
        }
    }
    Ok(())
}
