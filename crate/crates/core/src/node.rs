//! Neural ODE: a network is the autonomous vector field `dy/dτ = f_θ(y)` in
//! min–max scaled coordinates, integrated from the scaled initial condition
//! over scaled time `τ ∈ [0, 1]`.
//!
//! Training backpropagates through every solver stage recorded on the tape.
//! Because the 300 ms span is mapped onto `[0, 1]`, the learned field equals
//! the physical one times the span, divided by the channel ranges.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::integrate::{
    dopri5_generic, rk4_steps, FieldSystem, IntegrateError, OdeSystem, SolverConfig, TimeGrid, Trajectory,
};
use crate::ml_model::{MlParams, State};
use crate::mlp::{default_layers, should_log, Activation, AdamState, LossHistory, LossRecord, MlpNet, NetVars};
use crate::{Error, Result};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ScalerError {
    #[error("channel {channel} is degenerate (range {range:e})")]
    DegenerateChannel { channel: &'static str, range: f64 },
}

/// Per-channel minimum and maximum of `t`, `V` and `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub t: (f64, f64),
    pub v: (f64, f64),
    pub n: (f64, f64),
}

const DEGENERATE_RANGE: f64 = 1e-12;

fn min_max(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

impl Scaler {
    pub fn new(t: (f64, f64), v: (f64, f64), n: (f64, f64)) -> Result<Self, ScalerError> {
        for (channel, (lo, hi)) in [("t", t), ("V", v), ("N", n)] {
            let range = hi - lo;
            if !(range >= DEGENERATE_RANGE) {
                return Err(ScalerError::DegenerateChannel { channel, range });
            }
        }
        Ok(Scaler { t, v, n })
    }

    pub fn fit(data: &Trajectory) -> Result<Self, ScalerError> {
        Scaler::new(
            min_max(data.times().iter().copied()),
            min_max(data.states.iter().map(|s| s.v)),
            min_max(data.states.iter().map(|s| s.n)),
        )
    }

    pub fn t_span(&self) -> f64 {
        self.t.1 - self.t.0
    }

    pub fn normalize_time(&self, t: f64) -> f64 {
        (t - self.t.0) / (self.t.1 - self.t.0)
    }

    pub fn denormalize_time(&self, t: f64) -> f64 {
        self.t.0 + t * (self.t.1 - self.t.0)
    }

    pub fn normalize(&self, s: State) -> State {
        State::new((s.v - self.v.0) / (self.v.1 - self.v.0), (s.n - self.n.0) / (self.n.1 - self.n.0))
    }

    pub fn denormalize(&self, s: State) -> State {
        State::new(self.v.0 + s.v * (self.v.1 - self.v.0), self.n.0 + s.n * (self.n.1 - self.n.0))
    }

    pub fn normalize_grid(&self, grid: &TimeGrid) -> Result<TimeGrid> {
        Ok(TimeGrid::new(grid.points().iter().map(|&t| self.normalize_time(t)).collect())?)
    }

    pub fn normalize_trajectory(&self, traj: &Trajectory) -> Result<Trajectory> {
        let states = traj.states.iter().map(|&s| self.normalize(s)).collect();
        Ok(Trajectory::new(self.normalize_grid(&traj.grid)?, states)?)
    }

    pub fn denormalize_trajectory(&self, traj: &Trajectory) -> Result<Trajectory> {
        let grid = TimeGrid::new(traj.times().iter().map(|&t| self.denormalize_time(t)).collect())?;
        Ok(Trajectory::new(grid, traj.states.iter().map(|&s| self.denormalize(s)).collect())?)
    }

    /// `t_lo,t_hi,v_lo,v_hi,n_lo,n_hi` with round-trip precision.
    pub fn to_field(&self) -> String {
        let xs = [self.t.0, self.t.1, self.v.0, self.v.1, self.n.0, self.n.1];
        xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
    }

    pub fn from_field(s: &str) -> Result<Self> {
        let xs: std::result::Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse::<f64>()).collect();
        match xs.as_deref() {
            Ok([a, b, c, d, e, f]) => Ok(Scaler::new((*a, *b), (*c, *d), (*e, *f))?),
            _ => Err(Error::Config(format!("bad scaler field `{s}`"))),
        }
    }
}

/// Fits a [`Scaler`] to `data`.
pub fn fit_scaler(data: &Trajectory) -> Result<Scaler, ScalerError> {
    Scaler::fit(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeIntegrator {
    Dopri5,
    /// Classical RK4, one step per grid interval.
    Rk4,
}

impl NodeIntegrator {
    pub fn name(self) -> &'static str {
        match self {
            NodeIntegrator::Dopri5 => "dopri5",
            NodeIntegrator::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for NodeIntegrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NodeIntegrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dopri5" => Ok(NodeIntegrator::Dopri5),
            "rk4" => Ok(NodeIntegrator::Rk4),
            other => Err(Error::Config(format!("unknown integrator `{other}` (expected dopri5 or rk4)"))),
        }
    }
}

/// The field `net(y)` recorded on a tape; rejected trial steps are rewound.
struct TapeField<'a> {
    tape: &'a mut Tape,
    net: &'a MlpNet,
    vars: &'a NetVars,
}

impl OdeSystem for TapeField<'_> {
    type Vector = Var;
    type Error = Error;

    fn eval(&mut self, _t: f64, y: &Var) -> Result<Var> {
        Ok(self.net.forward_tape(self.tape, self.vars, *y)?)
    }

    fn combine(&mut self, base: &Var, terms: &[(f64, &Var)]) -> Result<Var> {
        let mut all = Vec::with_capacity(terms.len() + 1);
        all.push((*base, 1.0));
        all.extend(terms.iter().map(|(c, k)| (**k, *c)));
        Ok(self.tape.lin_comb(&all)?)
    }

    fn components(&self, y: &Var) -> Vec<f64> {
        self.tape.value(*y).iter().copied().collect()
    }

    fn mark(&mut self) -> usize {
        self.tape.len()
    }

    fn rewind(&mut self, mark: usize) {
        self.tape.truncate(mark);
    }
}

fn check_net(net: &MlpNet) -> Result<()> {
    if net.input_width() != 2 || net.output_width() != 2 {
        return Err(Error::Config(format!(
            "NODE network must map 2 inputs to 2 outputs, got {} -> {}",
            net.input_width(),
            net.output_width()
        )));
    }
    Ok(())
}

fn row(s: State) -> Array2<f64> {
    Array2::from_shape_vec((1, 2), vec![s.v, s.n]).expect("row shape")
}

/// Records the scaled trajectory on `tape` and returns it as an `n×2` var.
pub fn record_forward(
    tape: &mut Tape,
    net: &MlpNet,
    vars: &NetVars,
    y0_scaled: State,
    grid_scaled: &TimeGrid,
    integrator: NodeIntegrator,
    solver: &SolverConfig,
) -> Result<Var> {
    check_net(net)?;
    let y0 = tape.constant(row(y0_scaled));
    let mut sys = TapeField { tape, net, vars };
    let samples = match integrator {
        NodeIntegrator::Dopri5 => {
            let span = (grid_scaled.first(), grid_scaled.last());
            dopri5_generic(&mut sys, y0, span, solver, grid_scaled, false)?.samples
        }
        NodeIntegrator::Rk4 => rk4_steps(&mut sys, y0, grid_scaled)?,
    };
    Ok(tape.concat(&samples, 0)?)
}

/// Integrates `dy/dτ = net(y)` without recording; returns scaled states.
pub fn node_forward(
    net: &MlpNet,
    y0_scaled: State,
    grid_scaled: &TimeGrid,
    integrator: NodeIntegrator,
    solver: &SolverConfig,
) -> Result<Trajectory> {
    check_net(net)?;
    let mut buf = Array2::zeros((1, 2));
    let mut failure = None;
    let field = |_t: f64, y: State| {
        buf[[0, 0]] = y.v;
        buf[[0, 1]] = y.n;
        match net.forward(&buf) {
            Ok(out) => State::new(out[[0, 0]], out[[0, 1]]),
            Err(e) => {
                failure = Some(e);
                State::new(f64::NAN, f64::NAN)
            }
        }
    };
    let mut sys = FieldSystem::new(field);
    let states = match integrator {
        NodeIntegrator::Dopri5 => {
            let span = (grid_scaled.first(), grid_scaled.last());
            dopri5_generic(&mut sys, y0_scaled, span, solver, grid_scaled, false).map(|o| o.samples)
        }
        NodeIntegrator::Rk4 => rk4_steps(&mut sys, y0_scaled, grid_scaled),
    };
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(Trajectory::new(grid_scaled.clone(), states?)?)
}

/// A trained field together with what is needed to produce physical output.
#[derive(Debug, Clone)]
pub struct NodeModel {
    pub net: MlpNet,
    pub scaler: Scaler,
    pub integrator: NodeIntegrator,
    pub solver: SolverConfig,
}

impl NodeModel {
    /// Physical trajectory on `times`, starting from the physical state `y0`
    /// at `times.first()`.
    pub fn predict(&self, y0: State, times: &TimeGrid) -> Result<Trajectory> {
        let grid = self.scaler.normalize_grid(times)?;
        let scaled = node_forward(&self.net, self.scaler.normalize(y0), &grid, self.integrator, &self.solver)?;
        let states = scaled.states.iter().map(|&s| self.scaler.denormalize(s)).collect();
        Ok(Trajectory::new(times.clone(), states)?)
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    /// Regime and current of the data; recorded, not used by the learner.
    pub params: MlParams,
    pub epochs: usize,
    pub data: Trajectory,
    pub lr: f64,
    pub seed: u64,
    pub activation: Activation,
    pub integrator: NodeIntegrator,
    pub solver: SolverConfig,
    pub log_every: usize,
    pub layers: Vec<usize>,
    /// Epochs after which a copy of the network is kept.
    pub snapshots: Vec<usize>,
}

impl NodeConfig {
    /// Defaults: lr 1e-3, Tanh, dopri5 at training tolerances, 3×128 hidden.
    pub fn new(params: MlParams, data: Trajectory, epochs: usize, seed: u64) -> Self {
        NodeConfig {
            params,
            epochs,
            data,
            lr: 1e-3,
            seed,
            activation: Activation::Tanh,
            integrator: NodeIntegrator::Dopri5,
            solver: SolverConfig::node_training(),
            log_every: 10,
            layers: default_layers(2, 2),
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
        if self.layers.first() != Some(&2) || self.layers.last() != Some(&2) {
            return fail("NODE network must map 2 inputs to 2 outputs");
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NodeOutcome {
    pub model: NodeModel,
    pub history: LossHistory,
    pub wall_time_s: f64,
    pub snapshots: Vec<(usize, MlpNet)>,
    pub snapshot_times: Vec<f64>,
}

/// Scaled-space MSE of the trajectory started from the first data point.
pub fn node_loss(
    net: &MlpNet,
    scaled: &Trajectory,
    integrator: NodeIntegrator,
    solver: &SolverConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape);
    let loss = record_loss(&mut tape, net, &vars, scaled, integrator, solver)?;
    Ok(tape.scalar_value(loss))
}

/// Records the scaled-space MSE between the solve and `scaled` on `tape`.
pub fn record_loss(
    tape: &mut Tape,
    net: &MlpNet,
    vars: &NetVars,
    scaled: &Trajectory,
    integrator: NodeIntegrator,
    solver: &SolverConfig,
) -> Result<Var> {
    let pred = record_forward(tape, net, vars, scaled.states[0], &scaled.grid, integrator, solver)?;
    let target = tape.constant(Array2::from_shape_fn((scaled.len(), 2), |(i, j)| {
        if j == 0 { scaled.states[i].v } else { scaled.states[i].n }
    }));
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Full-trajectory Adam training. History entries hold the loss evaluated
/// before that epoch's update, with `physics = 0`.
pub fn train_node(cfg: &NodeConfig) -> Result<NodeOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let scaler = Scaler::fit(&cfg.data)?;
    let scaled = scaler.normalize_trajectory(&cfg.data)?;
    let mut net = MlpNet::new(&cfg.layers, cfg.activation, cfg.seed)?;
    let mut adam = AdamState::new(net.param_count(), cfg.lr);
    let mut flat = net.flatten();
    let mut history = LossHistory::default();
    let mut snapshots = Vec::new();
    let mut snapshot_times = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let loss = match record_loss(&mut tape, &net, &vars, &scaled, cfg.integrator, &cfg.solver) {
            Ok(l) => l,
            Err(Error::Integrate(IntegrateError::NonFiniteState { .. })) => {
                return Err(Error::NonFiniteLoss { epoch });
            }
            Err(e) => return Err(e.context(format!("NODE forward at epoch {epoch}"))),
        };
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        if should_log(epoch, cfg.log_every, cfg.epochs) {
            history.push(LossRecord { epoch, total: value, data: value, physics: 0.0 });
        }
        let grads = tape.backward(loss)?;
        let g = net.flat_gradient(&grads, &vars);
        drop(tape);
        adam.step(&mut flat, &g)?;
        net.set_flat(&flat)?;
        if cfg.snapshots.contains(&epoch) {
            snapshots.push((epoch, net.clone()));
            snapshot_times.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(NodeOutcome {
        model: NodeModel { net, scaler, integrator: cfg.integrator, solver: cfg.solver },
        history,
        wall_time_s: start.elapsed().as_secs_f64(),
        snapshots,
        snapshot_times,
    })
}
