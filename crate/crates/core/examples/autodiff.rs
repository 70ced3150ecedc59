//! Tape-based reverse mode with forward tangents: the derivative of a small
//! network with respect to its input, and a gradient check of a loss that
//! depends on that derivative.

use mlbench::autodiff::{grad_check, Tape, Tensor};
use ndarray::array;

fn main() -> mlbench::Result<()> {
    // y = tanh(x w + b); seed dx = 1 so y carries dy/dx.
    let mut tape = Tape::new();
    let x = tape.input(array![[0.3], [-1.2]]);
    let w = tape.param(array![[0.7, -0.4]]);
    let b = tape.param(array![[0.1, 0.2]]);
    let x = tape.seed_tangent(x, Tensor::ones((2, 1)))?;
    let z = tape.affine(x, w, b)?;
    let y = tape.tanh(z);
    println!("y      = {}", tape.value(y));
    println!("dy/dx  = {}", tape.tangent_value(y).unwrap());

    // Loss = mean((dy/dx)^2); its parameter gradient goes through the tangent.
    let worst = grad_check(
        |tape, p| {
            let x = tape.input(array![[0.3], [-1.2], [2.0]]);
            let x = tape.seed_tangent(x, Tensor::ones((3, 1)))?;
            let z = tape.affine(x, p[0], p[1])?;
            let y = tape.tanh(z);
            let dy = y.tangent().expect("seeded");
            let sq = tape.square(dy);
            Ok(tape.mean(sq))
        },
        &[array![[0.7, -0.4]], array![[0.1, 0.2]]],
        1e-6,
        4,
        0,
    )?;
    println!("worst relative gradient error vs central differences: {worst:.2e}");
    Ok(())
}
