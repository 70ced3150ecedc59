//! Fully connected networks, the Adam optimizer, and the checkpoint format.
//!
//! Layers compute `x·W + b` with `W` stored `n_in × n_out`, so a batch is a
//! matrix with one sample per row. Hidden layers share one activation; the
//! output layer is linear.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("bad layer layout: {0}")]
    BadShape(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("unknown activation `{0}` (expected tanh or silu)")]
    UnknownActivation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = MlpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "silu" | "swish" => Ok(Activation::Silu),
            other => Err(MlpError::UnknownActivation(other.to_string())),
        }
    }
}

/// Layout used by both learners: three hidden layers of 128 units.
pub fn default_layers(inputs: usize, outputs: usize) -> Vec<usize> {
    vec![inputs, 128, 128, 128, outputs]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `n_in × n_out`.
    pub weight: Array2<f64>,
    /// `1 × n_out`.
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
}

/// Tape handles for one network's parameters.
#[derive(Debug, Clone)]
pub struct NetVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl NetVars {
    /// Parameter handles in flattening order (per layer: weight, bias).
    pub fn iter(&self) -> impl Iterator<Item = Var> + '_ {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [*w, *b])
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<(), MlpError> {
    if layer_sizes.len() < 2 {
        return Err(MlpError::BadShape("need at least input and output sizes".into()));
    }
    if layer_sizes.contains(&0) {
        return Err(MlpError::BadShape("zero-width layer".into()));
    }
    Ok(())
}

impl MlpNet {
    /// Glorot-uniform weights, zero biases, drawn from a ChaCha8 stream seeded
    /// with `seed` (layer by layer, row-major).
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self, MlpError> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound));
                Layer { weight, bias: Array2::zeros((1, fan_out)) }
            })
            .collect();
        Ok(MlpNet { layer_sizes: layer_sizes.to_vec(), layers, activation })
    }

    /// All-zero network of the given layout.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self, MlpError> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer { weight: Array2::zeros((w[0], w[1])), bias: Array2::zeros((1, w[1])) })
            .collect();
        Ok(MlpNet { layer_sizes: layer_sizes.to_vec(), layers, activation })
    }

    /// Builds a network from explicit layers.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self, MlpError> {
        let first = layers.first().ok_or_else(|| MlpError::BadShape("no layers".into()))?;
        let mut sizes = vec![first.weight.nrows()];
        for l in &layers {
            if l.weight.nrows() != *sizes.last().unwrap() || l.bias.dim() != (1, l.weight.ncols()) {
                return Err(MlpError::BadShape("consecutive layers do not conform".into()));
            }
            sizes.push(l.weight.ncols());
        }
        check_sizes(&sizes)?;
        Ok(MlpNet { layer_sizes: sizes, layers, activation })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Σ (n_in·n_out + n_out).
    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Multiply–accumulates per single-sample inference, Σ n_in·n_out.
    /// Bias additions and activations are not counted.
    pub fn mac_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Batch forward pass without recording.
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>, MlpError> {
        if input.ncols() != self.input_width() {
            return Err(MlpError::ShapeMismatch { expected: self.input_width(), got: input.ncols() });
        }
        let last = self.layers.len() - 1;
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            x = z;
        }
        Ok(x)
    }

    /// Registers every weight and bias as a tape parameter.
    pub fn register(&self, tape: &mut Tape) -> NetVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(tape.param(l.weight.clone()));
            biases.push(tape.param(l.bias.clone()));
        }
        NetVars { weights, biases }
    }

    /// Recorded forward pass using previously registered parameters.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &NetVars, input: Var) -> Result<Var, AutodiffError> {
        let last = self.layers.len() - 1;
        let mut x = input;
        for i in 0..self.layers.len() {
            x = tape.affine(x, vars.weights[i], vars.biases[i])?;
            if i < last {
                x = match self.activation {
                    Activation::Tanh => tape.tanh(x),
                    Activation::Silu => tape.silu(x),
                };
            }
        }
        Ok(x)
    }

    /// Parameters in flattening order: per layer, weight row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), MlpError> {
        if flat.len() != self.param_count() {
            return Err(MlpError::ShapeMismatch { expected: self.param_count(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    /// Gradient with respect to [`Self::flatten`] order; parameters the
    /// output does not depend on get zeros.
    pub fn flat_gradient(&self, grads: &Gradients, vars: &NetVars) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (l, (w, b)) in self.layers.iter().zip(vars.weights.iter().zip(&vars.biases)) {
            match grads.get(*w) {
                Some(g) => out.extend(g.iter()),
                None => out.extend(std::iter::repeat_n(0.0, l.weight.len())),
            }
            match grads.get(*b) {
                Some(g) => out.extend(g.iter()),
                None => out.extend(std::iter::repeat_n(0.0, l.bias.len())),
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }
}

/// Shorthand for [`MlpNet::new`].
pub fn init_mlp(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<MlpNet, MlpError> {
    MlpNet::new(layer_sizes, activation, seed)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), MlpError> {
        if params.len() != self.m.len() {
            return Err(MlpError::ShapeMismatch { expected: self.m.len(), got: params.len() });
        }
        if grads.len() != self.m.len() {
            return Err(MlpError::ShapeMismatch { expected: self.m.len(), got: grads.len() });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<(), MlpError> {
    state.step(params, grads)
}

/// One logged training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub data: f64,
    pub physics: f64,
}

/// Logged losses of a training run. NODE runs log `physics = 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn push(&mut self, record: LossRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total_loss,data_loss,physics_loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.epoch, r.total, r.data, r.physics));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MlpError> {
        let bad = || MlpError::Checkpoint("malformed loss history".into());
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("epoch,total_loss,data_loss,physics_loss") {
            return Err(bad());
        }
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            records.push(LossRecord {
                epoch: f[0].trim().parse().map_err(|_| bad())?,
                total: num(f[1])?,
                data: num(f[2])?,
                physics: num(f[3])?,
            });
        }
        Ok(LossHistory { records })
    }
}

/// Whether `epoch` (1-based) is logged when logging every `every` epochs
/// out of `total`. The first and last epochs are always logged.
pub fn should_log(epoch: usize, every: usize, total: usize) -> bool {
    epoch == 1 || epoch == total || (every > 0 && epoch.is_multiple_of(every))
}

const CHECKPOINT_MAGIC: &str = "mlbench-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// A network plus the metadata needed to reproduce it.
///
/// Text layout (UTF-8, `\n` line endings):
///
/// ```text
/// mlbench-checkpoint 1
/// activation=<tanh|silu>
/// layers=<comma-separated sizes>
/// seed=<u64>
/// meta.<key>=<value>          (zero or more, sorted by key)
/// params=<count>
/// <16 lowercase hex digits>   (IEEE-754 bits of each parameter, flatten order)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: MlpNet,
    pub seed: u64,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        out.push_str(&format!("activation={}\n", self.net.activation()));
        let sizes: Vec<String> = self.net.layer_sizes().iter().map(|s| s.to_string()).collect();
        out.push_str(&format!("layers={}\n", sizes.join(",")));
        out.push_str(&format!("seed={}\n", self.seed));
        let mut meta = self.metadata.clone();
        meta.sort();
        for (k, v) in &meta {
            out.push_str(&format!("meta.{k}={v}\n"));
        }
        let flat = self.net.flatten();
        out.push_str(&format!("params={}\n", flat.len()));
        for x in flat {
            out.push_str(&format!("{:016x}\n", x.to_bits()));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MlpError> {
        let bad = |m: &str| MlpError::Checkpoint(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("missing magic header"))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut activation = None;
        let mut layers = None;
        let mut seed = None;
        let mut metadata = Vec::new();
        let count: usize = loop {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let (k, v) = line.split_once('=').ok_or_else(|| bad("malformed header line"))?;
            match k {
                "activation" => activation = Some(v.parse::<Activation>()?),
                "layers" => {
                    let sizes: Result<Vec<usize>, _> = v.split(',').map(str::parse).collect();
                    layers = Some(sizes.map_err(|_| bad("bad layer list"))?);
                }
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad("bad seed"))?),
                "params" => break v.parse().map_err(|_| bad("bad parameter count"))?,
                other => match other.strip_prefix("meta.") {
                    Some(key) => metadata.push((key.to_string(), v.to_string())),
                    None => return Err(bad(&format!("unknown key {other}"))),
                },
            }
        };
        let layers = layers.ok_or_else(|| bad("missing layers"))?;
        let mut net = MlpNet::zeros(&layers, activation.ok_or_else(|| bad("missing activation"))?)?;
        if count != net.param_count() {
            return Err(bad("parameter count does not match layers"));
        }
        let flat: Result<Vec<f64>, MlpError> = lines
            .by_ref()
            .take(count)
            .map(|l| u64::from_str_radix(l.trim(), 16).map(f64::from_bits).map_err(|_| bad("bad parameter")))
            .collect();
        let flat = flat?;
        if flat.len() != count {
            return Err(bad("truncated parameter block"));
        }
        net.set_flat(&flat)?;
        Ok(Checkpoint { net, seed: seed.ok_or_else(|| bad("missing seed"))?, metadata })
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        fs::write(path, self.to_text()).map_err(|e| crate::Error::io(path, e))
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Checkpoint::from_text(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn table_architectures() {
        let pinn = MlpNet::new(&default_layers(1, 2), Activation::Tanh, 0).unwrap();
        assert_eq!((pinn.param_count(), pinn.mac_count()), (33_538, 33_152));
        let node = MlpNet::new(&default_layers(2, 2), Activation::Tanh, 0).unwrap();
        assert_eq!((node.param_count(), node.mac_count()), (33_666, 33_280));
        let single = MlpNet::new(&[3, 1], Activation::Tanh, 0).unwrap();
        assert_eq!((single.param_count(), single.mac_count()), (4, 3));
    }

    #[test]
    fn counts_match_enumeration() {
        for sizes in [vec![1, 5, 2], vec![4, 3, 3, 1], vec![2, 2]] {
            let net = MlpNet::new(&sizes, Activation::Silu, 1).unwrap();
            let mut params = 0;
            let mut macs = 0;
            for l in net.layers() {
                for _ in l.weight.iter() {
                    params += 1;
                    macs += 1;
                }
                params += l.bias.iter().count();
            }
            assert_eq!(net.param_count(), params);
            assert_eq!(net.mac_count(), macs);
            assert_eq!(net.flatten().len(), params);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MlpNet::new(&default_layers(1, 2), Activation::Tanh, 42).unwrap();
        let b = MlpNet::new(&default_layers(1, 2), Activation::Tanh, 42).unwrap();
        let c = MlpNet::new(&default_layers(1, 2), Activation::Tanh, 43).unwrap();
        let bits = |n: &MlpNet| n.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
        for l in a.layers() {
            let bound = (6.0 / (l.weight.nrows() + l.weight.ncols()) as f64).sqrt();
            assert!(l.weight.iter().all(|w| w.abs() <= bound));
            assert!(l.bias.iter().all(|b| *b == 0.0));
        }
        assert!(MlpNet::new(&[3], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn forward_simple_cases() {
        let zero = MlpNet::zeros(&[2, 4, 2], Activation::Tanh).unwrap();
        assert!(zero.forward(&array![[1.0, -3.0]]).unwrap().iter().all(|&x| x == 0.0));

        let ident = MlpNet::from_layers(
            vec![Layer { weight: Array2::eye(2), bias: Array2::zeros((1, 2)) }],
            Activation::Tanh,
        )
        .unwrap();
        let x = array![[0.3, -7.0], [2.0, 5.0]];
        assert_eq!(ident.forward(&x).unwrap(), x);
        assert!(ident.forward(&array![[1.0]]).is_err());
    }

    #[test]
    fn forward_hand_built_tanh_net() {
        // 1-2-1: h = tanh([0.5x + 0.1, -x + 0.2]); y = 2h1 - 3h2 + 0.5
        let net = MlpNet::from_layers(
            vec![
                Layer { weight: array![[0.5, -1.0]], bias: array![[0.1, 0.2]] },
                Layer { weight: array![[2.0], [-3.0]], bias: array![[0.5]] },
            ],
            Activation::Tanh,
        )
        .unwrap();
        let x = 0.8f64;
        let expected = 2.0 * (0.5 * x + 0.1f64).tanh() - 3.0 * (-x + 0.2f64).tanh() + 0.5;
        let y = net.forward(&array![[x]]).unwrap()[[0, 0]];
        assert!((y - expected).abs() < 1e-15);
        // tanh(0.5) = 0.46211715726000974, tanh(-0.6) = -0.5370495669980353
        assert!((y - (2.0 * 0.462_117_157_260_009_7 + 3.0 * 0.537_049_566_998_035_3 + 0.5)).abs() < 1e-14);
    }

    #[test]
    fn forward_rows_are_independent() {
        let net = MlpNet::new(&[2, 8, 8, 2], Activation::Silu, 3).unwrap();
        let x = array![[0.1, 0.2], [-1.0, 0.5], [3.0, -2.0]];
        let y = net.forward(&x).unwrap();
        let perm = array![[3.0, -2.0], [0.1, 0.2], [-1.0, 0.5]];
        let yp = net.forward(&perm).unwrap();
        assert_eq!(yp.row(0), y.row(2));
        assert_eq!(yp.row(1), y.row(0));
        assert_eq!(yp.row(2), y.row(1));
    }

    #[test]
    fn tape_forward_matches_plain() {
        let net = MlpNet::new(&[2, 6, 6, 2], Activation::Silu, 9).unwrap();
        let x = array![[0.4, -0.3], [1.2, 0.7]];
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let xi = tape.constant(x.clone());
        let y = net.forward_tape(&mut tape, &vars, xi).unwrap();
        let plain = net.forward(&x).unwrap();
        for (a, b) in tape.value(y).iter().zip(plain.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let mut st = AdamState::new(3, 1e-3);
        let mut p = vec![0.5, -1.0, 2.0];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);

        // m̂ = 2, v̂ = 4: step = lr·2/(2 + 1e-8) ≈ 1e-3.
        let mut st = AdamState::new(1, 1e-3);
        let mut p = vec![0.0];
        st.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-6);
        assert_eq!(st.t, 1);
        assert!(st.step(&mut p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn adam_zero_lr_is_identity_and_deterministic() {
        let grads: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut st = AdamState::new(10, 0.0);
        let mut p: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let before = p.clone();
        for _ in 0..5 {
            st.step(&mut p, &grads).unwrap();
        }
        assert_eq!(p, before);

        let run = || {
            let mut st = AdamState::new(10, 1e-2);
            let mut p = before.clone();
            for k in 0..20 {
                let g: Vec<f64> = grads.iter().map(|g| g * (k as f64 + 1.0)).collect();
                st.step(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn history_csv_roundtrip() {
        let mut h = LossHistory::default();
        h.push(LossRecord { epoch: 1, total: 3.5, data: 3.0, physics: 0.5 });
        h.push(LossRecord { epoch: 10, total: 1.0e-7, data: 0.1e-7, physics: 0.9e-7 });
        let csv = h.to_csv();
        assert!(csv.starts_with("epoch,total_loss,data_loss,physics_loss\n"));
        assert_eq!(LossHistory::from_csv(&csv).unwrap(), h);
        assert!(LossHistory::from_csv("epoch,loss\n").is_err());
        assert!(should_log(1, 100, 250) && should_log(200, 100, 250) && should_log(250, 100, 250));
        assert!(!should_log(150, 100, 250));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let net = MlpNet::new(&[2, 5, 2], Activation::Silu, 11).unwrap();
        let ck = Checkpoint {
            net,
            seed: 11,
            metadata: vec![("method".into(), "node".into()), ("epochs".into(), "10".into())],
        };
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back.net, ck.net);
        assert_eq!(back.seed, 11);
        assert_eq!(back.to_text(), text);
        assert!(Checkpoint::from_text("mlbench-checkpoint 9\n").is_err());
        assert!(Checkpoint::from_text(&text.replace("params=27", "params=28")).is_err());
    }
}
