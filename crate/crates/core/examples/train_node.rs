//! Neural ODE on one regime, trained through the adaptive solver.
//!
//!     cargo run --release --example train_node -- [regime] [i_ext] [epochs] [points] [tanh|silu]

use mlbench::bench::{ground_truth, DEFAULT_T_END, DEFAULT_Y0};
use mlbench::metrics::MetricsReport;
use mlbench::mlp::Activation;
use mlbench::node::{train_node, NodeConfig};
use mlbench::{MlParams, Regime};

fn main() -> mlbench::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let regime: Regime = args.first().map_or(Ok(Regime::Hopf), |s| s.parse())?;
    let i: f64 = args.get(1).map_or(90.0, |s| s.parse().expect("i_ext"));
    let epochs: usize = args.get(2).map_or(500, |s| s.parse().expect("epochs"));
    let points: usize = args.get(3).map_or(500, |s| s.parse().expect("points"));
    let activation: Activation = args.get(4).map_or(Ok(Activation::Tanh), |s| s.parse())?;

    let p = MlParams::regime(regime).with_current(i);
    let truth = ground_truth(&p, points, DEFAULT_T_END, DEFAULT_Y0)?;
    let mut cfg = NodeConfig::new(p, truth.clone(), epochs, 0);
    cfg.activation = activation;
    cfg.log_every = (epochs / 10).max(1);
    let out = train_node(&cfg)?;
    for r in &out.history.records {
        println!("epoch {:>6}  scaled mse {:.4e}", r.epoch, r.total);
    }
    let pred = out.model.predict(truth.states[0], &truth.grid)?;
    let report = MetricsReport::new(&pred, &truth)?.with_run("node", regime.name(), epochs, out.wall_time_s);
    println!("{report}");
    Ok(())
}
