//! Physics-informed training: a network maps time `t` to `(V̂, N̂)` and is
//! fitted to data plus the residual of the Morris–Lecar equations.
//!
//! Time derivatives come from a tangent seeded on the time input, so the
//! residual is an ordinary tape expression and its parameter gradient is
//! exact. Training runs in physical units with no normalization.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::integrate::{TimeGrid, Trajectory};
use crate::mlp::{default_layers, should_log, Activation, AdamState, LossHistory, LossRecord, MlpNet, NetVars};
use crate::ml_model::{MlParams, State};
use crate::{Error, Result};

/// Scaling of the voltage residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoltageResidual {
    /// `c_m·dV̂/dt + I_ion − I`, a current density.
    Current,
    /// `dV̂/dt − (I − I_ion)/c_m`, the same residual divided by `c_m`.
    Rate,
}

impl VoltageResidual {
    pub fn name(self) -> &'static str {
        match self {
            VoltageResidual::Current => "current",
            VoltageResidual::Rate => "rate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "current" => Some(VoltageResidual::Current),
            "rate" => Some(VoltageResidual::Rate),
            _ => None,
        }
    }
}

/// How the network is initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinnInit {
    /// Glorot-uniform weights, zero biases.
    Glorot,
    /// Glorot weights, then first-layer unit centres spread uniformly over the
    /// training time span (`b_j = −w_j·c_j`) and output biases set to the
    /// data means.
    DataAware,
}

impl PinnInit {
    pub fn name(self) -> &'static str {
        match self {
            PinnInit::Glorot => "glorot",
            PinnInit::DataAware => "data-aware",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "glorot" => Some(PinnInit::Glorot),
            "data-aware" => Some(PinnInit::DataAware),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PinnConfig {
    pub params: MlParams,
    pub epochs: usize,
    pub collocation: TimeGrid,
    pub data: Trajectory,
    pub lr: f64,
    pub seed: u64,
    pub log_every: usize,
    pub activation: Activation,
    pub layers: Vec<usize>,
    pub init: PinnInit,
    pub residual: VoltageResidual,
    /// Draw fresh uniform collocation times every epoch instead of using
    /// `collocation` as given (the count is kept).
    pub resample: bool,
    /// Epochs after which a copy of the network is kept.
    pub snapshots: Vec<usize>,
}

impl PinnConfig {
    /// Defaults: collocation on the data grid, lr 1e-3, Tanh, 3×128 hidden.
    pub fn new(params: MlParams, data: Trajectory, epochs: usize, seed: u64) -> Self {
        PinnConfig {
            params,
            epochs,
            collocation: data.grid.clone(),
            data,
            lr: 1e-3,
            seed,
            log_every: 10,
            activation: Activation::Tanh,
            layers: default_layers(1, 2),
            init: PinnInit::DataAware,
            residual: VoltageResidual::Rate,
            resample: false,
            snapshots: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be finite and non-negative");
        }
        if self.data.len() < 2 {
            return fail("need at least two data points");
        }
        if self.layers.first() != Some(&1) || self.layers.last() != Some(&2) {
            return fail("PINN network must map 1 input to 2 outputs");
        }
        let (d0, d1) = (self.data.grid.first(), self.data.grid.last());
        if self.collocation.first() < d0 || self.collocation.last() > d1 {
            return fail("collocation points outside the data time span");
        }
        self.params.validate()?;
        Ok(())
    }
}

fn check_net(net: &MlpNet) -> Result<()> {
    if net.input_width() != 1 || net.output_width() != 2 {
        return Err(Error::Config(format!(
            "PINN network must map 1 input to 2 outputs, got {} -> {}",
            net.input_width(),
            net.output_width()
        )));
    }
    Ok(())
}

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}

fn state_matrix(states: &[State]) -> Array2<f64> {
    Array2::from_shape_fn((states.len(), 2), |(i, j)| if j == 0 { states[i].v } else { states[i].n })
}

/// Records the network output at `times` with a unit time tangent.
fn record_output(tape: &mut Tape, net: &MlpNet, vars: &NetVars, times: &[f64]) -> Result<Var> {
    let t = tape.input(column(times));
    let t = tape.seed_tangent(t, Array2::ones((times.len(), 1)))?;
    Ok(net.forward_tape(tape, vars, t)?)
}

/// Residual columns `(f1, f2)` from an output carrying its time tangent.
fn record_residuals_from(
    tape: &mut Tape,
    out: Var,
    p: &MlParams,
    form: VoltageResidual,
) -> Result<(Var, Var)> {
    let v_full = tape.slice(out, 1, 0, 1)?;
    let n_full = tape.slice(out, 1, 1, 1)?;
    let dv = v_full.tangent().ok_or_else(|| Error::Config("output has no time tangent".into()))?;
    let dn = n_full.tangent().ok_or_else(|| Error::Config("output has no time tangent".into()))?;
    // Second derivatives are never needed; drop the tangents from here on.
    let (v, n) = (v_full.primal(), n_full.primal());

    let m_arg = tape.scale_shift(v, 1.0 / p.v2, -p.v1 / p.v2);
    let m_tanh = tape.tanh(m_arg);
    let m_inf = tape.scale_shift(m_tanh, 0.5, 0.5);
    let v_ca = tape.scale_shift(v, 1.0, -p.v_ca);
    let ca = tape.mul(m_inf, v_ca)?;
    let v_k = tape.scale_shift(v, 1.0, -p.v_k);
    let k = tape.mul(n, v_k)?;
    let v_l = tape.scale_shift(v, 1.0, -p.v_l);
    let f1 = tape.lin_comb(&[(dv, p.c_m), (ca, p.g_ca), (k, p.g_k), (v_l, p.g_l)])?;
    let f1 = match form {
        VoltageResidual::Current => tape.scale_shift(f1, 1.0, -p.i_ext),
        VoltageResidual::Rate => tape.scale_shift(f1, 1.0 / p.c_m, -p.i_ext / p.c_m),
    };

    // 1/τ_N = cosh((V − v3)/(2 v4))
    let n_arg = tape.scale_shift(v, 1.0 / p.v4, -p.v3 / p.v4);
    let n_tanh = tape.tanh(n_arg);
    let n_inf = tape.scale_shift(n_tanh, 0.5, 0.5);
    let gap = tape.sub(n_inf, n)?;
    let c_arg = tape.scale_shift(v, 0.5 / p.v4, -0.5 * p.v3 / p.v4);
    let rate = tape.cosh(c_arg);
    let relax = tape.mul(gap, rate)?;
    let f2 = tape.lin_comb(&[(dn, 1.0), (relax, -p.phi)])?;
    Ok((f1, f2))
}

/// Records `(f1, f2)` at `times` on `tape`.
pub fn record_residuals(
    tape: &mut Tape,
    net: &MlpNet,
    vars: &NetVars,
    times: &[f64],
    p: &MlParams,
    form: VoltageResidual,
) -> Result<(Var, Var)> {
    check_net(net)?;
    let out = record_output(tape, net, vars, times)?;
    record_residuals_from(tape, out, p, form)
}

/// Residuals of the model equations at `times`, in the current form:
/// `f1 = c_m·dV̂/dt + I_ion(V̂, N̂) − I`, `f2 = dN̂/dt − φ(N∞(V̂) − N̂)/τ_N(V̂)`.
pub fn residuals(net: &MlpNet, times: &[f64], p: &MlParams) -> Result<(Vec<f64>, Vec<f64>)> {
    residuals_with(net, times, p, VoltageResidual::Current)
}

pub fn residuals_with(
    net: &MlpNet,
    times: &[f64],
    p: &MlParams,
    form: VoltageResidual,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape);
    let (f1, f2) = record_residuals(&mut tape, net, &vars, times, p, form)?;
    Ok((tape.value(f1).iter().copied().collect(), tape.value(f2).iter().copied().collect()))
}

/// Loss value and its two components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnLoss {
    pub total: f64,
    pub data: f64,
    pub physics: f64,
}

/// Tape handles of a recorded loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub data: Var,
    pub physics: Var,
}

/// Records `mean((ŷ − y)²) + mean(f1² + f2²)`. The data mean runs over both
/// variables (2n terms).
pub fn record_loss(
    tape: &mut Tape,
    net: &MlpNet,
    vars: &NetVars,
    data: &Trajectory,
    collocation: &[f64],
    p: &MlParams,
    form: VoltageResidual,
) -> Result<LossVars> {
    check_net(net)?;
    let out_c = record_output(tape, net, vars, collocation)?;
    let out_d = if collocation == data.times() {
        out_c.primal()
    } else {
        let t = tape.constant(column(data.times()));
        net.forward_tape(tape, vars, t)?
    };
    let target = tape.constant(state_matrix(&data.states));
    let diff = tape.sub(out_d, target)?;
    let sq = tape.square(diff);
    let data_loss = tape.mean(sq);

    let (f1, f2) = record_residuals_from(tape, out_c, p, form)?;
    let s1 = tape.square(f1);
    let s2 = tape.square(f2);
    let s = tape.add(s1, s2)?;
    let physics = tape.mean(s);
    let total = tape.add(data_loss, physics)?;
    Ok(LossVars { total, data: data_loss, physics })
}

/// Current-form loss.
pub fn pinn_loss(net: &MlpNet, data: &Trajectory, collocation: &TimeGrid, p: &MlParams) -> Result<PinnLoss> {
    pinn_loss_with(net, data, collocation, p, VoltageResidual::Current)
}

pub fn pinn_loss_with(
    net: &MlpNet,
    data: &Trajectory,
    collocation: &TimeGrid,
    p: &MlParams,
    form: VoltageResidual,
) -> Result<PinnLoss> {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape);
    let l = record_loss(&mut tape, net, &vars, data, collocation.points(), p, form)?;
    Ok(PinnLoss { total: tape.scalar_value(l.total), data: tape.scalar_value(l.data), physics: tape.scalar_value(l.physics) })
}

/// Network predictions at `times` as a trajectory.
pub fn predict(net: &MlpNet, times: &TimeGrid) -> Result<Trajectory> {
    check_net(net)?;
    let out = net.forward(&column(times.points()))?;
    let states = out.rows().into_iter().map(|r| State::new(r[0], r[1])).collect();
    Ok(Trajectory::new(times.clone(), states)?)
}

/// Applies [`PinnInit::DataAware`] to a freshly initialized network.
pub fn data_aware_init(net: &mut MlpNet, data: &Trajectory, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let (t0, t1) = (data.grid.first(), data.grid.last());
    let n = data.len() as f64;
    let mean_v = data.states.iter().map(|s| s.v).sum::<f64>() / n;
    let mean_n = data.states.iter().map(|s| s.n).sum::<f64>() / n;
    let layers = net.layers_mut();
    let first = &mut layers[0];
    for j in 0..first.weight.ncols() {
        let c = rng.random_range(t0..=t1);
        first.bias[[0, j]] = -first.weight[[0, j]] * c;
    }
    let last = layers.last_mut().unwrap();
    last.bias[[0, 0]] = mean_v;
    last.bias[[0, 1]] = mean_n;
}

#[derive(Debug, Clone)]
pub struct PinnOutcome {
    pub net: MlpNet,
    pub history: LossHistory,
    pub wall_time_s: f64,
    /// `(epoch, network after that epoch)` for each requested snapshot.
    pub snapshots: Vec<(usize, MlpNet)>,
    /// Seconds elapsed when each snapshot was taken.
    pub snapshot_times: Vec<f64>,
}

/// Initial network for `cfg` (before any update).
pub fn initial_net(cfg: &PinnConfig) -> Result<MlpNet> {
    let mut net = MlpNet::new(&cfg.layers, cfg.activation, cfg.seed)?;
    if cfg.init == PinnInit::DataAware {
        data_aware_init(&mut net, &cfg.data, cfg.seed);
    }
    Ok(net)
}

/// Full-batch Adam. History entries hold the loss evaluated before that
/// epoch's update.
pub fn train_pinn(cfg: &PinnConfig) -> Result<PinnOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut net = initial_net(cfg)?;
    train_from(cfg, &mut net, start)
}

fn train_from(cfg: &PinnConfig, net: &mut MlpNet, start: Instant) -> Result<PinnOutcome> {
    let mut adam = AdamState::new(net.param_count(), cfg.lr);
    let mut history = LossHistory::default();
    let mut snapshots = Vec::new();
    let mut snapshot_times = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let (t0, t1) = (cfg.data.grid.first(), cfg.data.grid.last());
    let mut colloc: Vec<f64> = cfg.collocation.points().to_vec();
    let mut flat = net.flatten();

    for epoch in 1..=cfg.epochs {
        if cfg.resample {
            for t in colloc.iter_mut() {
                *t = rng.random_range(t0..=t1);
            }
        }
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let l = record_loss(&mut tape, net, &vars, &cfg.data, &colloc, &cfg.params, cfg.residual)?;
        let total = tape.scalar_value(l.total);
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        if should_log(epoch, cfg.log_every, cfg.epochs) {
            history.push(LossRecord {
                epoch,
                total,
                data: tape.scalar_value(l.data),
                physics: tape.scalar_value(l.physics),
            });
        }
        let grads = tape.backward(l.total)?;
        let g = net.flat_gradient(&grads, &vars);
        drop(tape);
        adam.step(&mut flat, &g)?;
        net.set_flat(&flat)?;
        if cfg.snapshots.contains(&epoch) {
            snapshots.push((epoch, net.clone()));
            snapshot_times.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(PinnOutcome {
        net: net.clone(),
        history,
        wall_time_s: start.elapsed().as_secs_f64(),
        snapshots,
        snapshot_times,
    })
}
