//! Network sizes, Adam steps on a toy regression, and a checkpoint roundtrip.

use mlbench::autodiff::Tape;
use mlbench::mlp::{default_layers, Activation, AdamState, Checkpoint, MlpNet};
use ndarray::Array2;

fn main() -> mlbench::Result<()> {
    for inputs in [1, 2] {
        let net = MlpNet::new(&default_layers(inputs, 2), Activation::Tanh, 0)?;
        println!("{:?}: {} parameters, {} MACs", net.layer_sizes(), net.param_count(), net.mac_count());
    }

    // Fit sin(3x) on [-1, 1] with a small network.
    let mut net = MlpNet::new(&[1, 16, 16, 1], Activation::Silu, 1)?;
    let x = Array2::from_shape_fn((64, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 63.0);
    let y = x.mapv(|v| (3.0 * v).sin());
    let mut adam = AdamState::new(net.param_count(), 1e-2);
    let mut params = net.flatten();
    for epoch in 0..=1000 {
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let xi = tape.input(x.clone());
        let out = net.forward_tape(&mut tape, &vars, xi)?;
        let target = tape.constant(y.clone());
        let d = tape.sub(out, target)?;
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        if epoch % 250 == 0 {
            println!("epoch {epoch:>4}  mse {:.3e}", tape.scalar_value(loss));
        }
        let grads = tape.backward(loss)?;
        adam.step(&mut params, &net.flat_gradient(&grads, &vars))?;
        net.set_flat(&params)?;
    }

    let ck = Checkpoint { net: net.clone(), seed: 1, metadata: vec![("task".into(), "sin3x".into())] };
    let back = Checkpoint::from_text(&ck.to_text())?;
    println!("checkpoint roundtrip exact: {}", back.net.flatten() == net.flatten());
    Ok(())
}
