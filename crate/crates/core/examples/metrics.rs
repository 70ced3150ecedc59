//! The seven per-variable metrics on a small hand example.

use mlbench::metrics::{compute_metrics, format_r2};

fn main() -> mlbench::Result<()> {
    let truth = [1.0, 2.0, 3.0];
    let pred = [1.0, 2.0, 4.0];
    let m = compute_metrics(&pred, &truth)?;
    println!("mse    {:.6}", m.mse);
    println!("rmse   {:.6}", m.rmse);
    println!("mae    {:.6}", m.mae);
    println!("mape   {:.4} %", m.mape_percent);
    println!("rmspe  {:.6}", m.rmspe);
    println!("r2     {}", format_r2(m.r2));
    println!("maxerr {:.6}", m.max_err);
    // A constant truth has no variance to explain.
    println!("r2 on constant truth: {}", format_r2(compute_metrics(&[1.0, 2.0], &[5.0, 5.0])?.r2));
    Ok(())
}
