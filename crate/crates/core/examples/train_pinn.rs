//! Physics-informed network on one regime.
//!
//!     cargo run --release --example train_pinn -- [regime] [i_ext] [epochs] [points]

use mlbench::bench::{ground_truth, DEFAULT_T_END, DEFAULT_Y0};
use mlbench::metrics::MetricsReport;
use mlbench::pinn::{predict, train_pinn, PinnConfig};
use mlbench::{MlParams, Regime};

fn main() -> mlbench::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let regime: Regime = args.first().map_or(Ok(Regime::Hopf), |s| s.parse())?;
    let i: f64 = args.get(1).map_or(50.0, |s| s.parse().expect("i_ext"));
    let epochs: usize = args.get(2).map_or(1000, |s| s.parse().expect("epochs"));
    let points: usize = args.get(3).map_or(500, |s| s.parse().expect("points"));

    let p = MlParams::regime(regime).with_current(i);
    let truth = ground_truth(&p, points, DEFAULT_T_END, DEFAULT_Y0)?;
    let mut cfg = PinnConfig::new(p, truth.clone(), epochs, 0);
    cfg.log_every = (epochs / 10).max(1);
    let out = train_pinn(&cfg)?;
    for r in &out.history.records {
        println!("epoch {:>6}  total {:.4e}  data {:.4e}  physics {:.4e}", r.epoch, r.total, r.data, r.physics);
    }
    let pred = predict(&out.net, &truth.grid)?;
    let report = MetricsReport::new(&pred, &truth)?.with_run("pinn", regime.name(), epochs, out.wall_time_s);
    println!("{report}");
    Ok(())
}
