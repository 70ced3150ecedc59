//! Explicit ODE integrators: fixed-step RK4 and adaptive Dormand–Prince 5(4)
//! with dense output.
//!
//! Both methods are written once against [`OdeSystem`], so the same stepping
//! code drives plain `f64` states (ground truth, evaluation) and tape-recorded
//! states (neural-ODE training, where gradients flow through every stage).

use thiserror::Error;

use crate::ml_model::State;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("maximum number of steps ({0}) exceeded")]
    MaxStepsExceeded(usize),
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("step size {h:e} underflowed at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("t = {t} outside step [{t0}, {t1}]")]
    OutOfStepRange { t: f64, t0: f64, t1: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// Strictly increasing, finite sample times (ms unless stated otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, IntegrateError> {
        if points.is_empty() {
            return Err(IntegrateError::InvalidGrid("empty grid".into()));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(IntegrateError::InvalidGrid("non-finite time".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(IntegrateError::InvalidGrid("times must be strictly increasing".into()));
        }
        Ok(TimeGrid { points })
    }

    /// `n` evenly spaced points covering `[t0, t1]` inclusive.
    pub fn uniform(t0: f64, t1: f64, n: usize) -> Result<Self, IntegrateError> {
        if n == 1 {
            return TimeGrid::new(vec![t0]);
        }
        if n < 2 || t1 <= t0 {
            return Err(IntegrateError::InvalidGrid(format!("uniform grid needs n >= 2 and t1 > t0 (n={n}, [{t0}, {t1}])")));
        }
        let dt = (t1 - t0) / (n - 1) as f64;
        let points = (0..n).map(|i| if i + 1 == n { t1 } else { t0 + dt * i as f64 }).collect();
        TimeGrid::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        *self.points.last().unwrap()
    }
}

/// States sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<State>) -> Result<Self, IntegrateError> {
        if grid.len() != states.len() {
            return Err(IntegrateError::InvalidGrid(format!(
                "{} states for {} grid points",
                states.len(),
                grid.len()
            )));
        }
        Ok(Trajectory { grid, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        self.grid.points()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.v).collect()
    }

    pub fn gates(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step.
    pub h_init: f64,
    /// Upper bound on the step; `f64::INFINITY` for none.
    pub h_max: f64,
    pub max_steps: usize,
}

impl SolverConfig {
    /// Tolerances used for ground-truth trajectories (physical units).
    pub fn ground_truth() -> Self {
        SolverConfig { rtol: 1e-6, atol: 1e-9, h_init: 1e-2, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }

    /// Training tolerances for the neural ODE (normalized units).
    pub fn node_training() -> Self {
        SolverConfig { rtol: 1e-4, atol: 1e-6, h_init: 1e-3, h_max: f64::INFINITY, max_steps: 100_000 }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(IntegrateError::InvalidConfig("rtol and atol must be positive".into()));
        }
        if !(self.h_init > 0.0) || !(self.h_max > 0.0) {
            return Err(IntegrateError::InvalidConfig("step bounds must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(IntegrateError::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::ground_truth()
    }
}

/// What an integrator needs from a state space: evaluate the field, form
/// linear combinations, and read component values for step control.
pub trait OdeSystem {
    type Vector: Clone;
    type Error: From<IntegrateError>;

    fn eval(&mut self, t: f64, y: &Self::Vector) -> Result<Self::Vector, Self::Error>;

    /// `base + Σ cᵢ·kᵢ`.
    fn combine(&mut self, base: &Self::Vector, terms: &[(f64, &Self::Vector)]) -> Result<Self::Vector, Self::Error>;

    fn components(&self, y: &Self::Vector) -> Vec<f64>;

    /// Position marker taken before a trial step.
    fn mark(&mut self) -> usize {
        0
    }

    /// Discards work recorded since `mark` (a rejected trial step).
    fn rewind(&mut self, _mark: usize) {}
}

/// Adapter for plain closures over [`State`].
pub struct FieldSystem<F> {
    field: F,
    pub evals: usize,
}

impl<F: FnMut(f64, State) -> State> FieldSystem<F> {
    pub fn new(field: F) -> Self {
        FieldSystem { field, evals: 0 }
    }
}

impl<F: FnMut(f64, State) -> State> OdeSystem for FieldSystem<F> {
    type Vector = State;
    type Error = IntegrateError;

    fn eval(&mut self, t: f64, y: &State) -> Result<State, IntegrateError> {
        self.evals += 1;
        Ok((self.field)(t, *y))
    }

    fn combine(&mut self, base: &State, terms: &[(f64, &State)]) -> Result<State, IntegrateError> {
        let mut out = *base;
        for (c, k) in terms {
            out.v += c * k.v;
            out.n += c * k.n;
        }
        Ok(out)
    }

    fn components(&self, y: &State) -> Vec<f64> {
        vec![y.v, y.n]
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Classical RK4 with exactly one step per grid interval. Returns one state
/// per grid point; the first is `y0` itself.
pub fn rk4_steps<S: OdeSystem>(sys: &mut S, y0: S::Vector, grid: &TimeGrid) -> Result<Vec<S::Vector>, S::Error> {
    if grid.len() < 2 {
        return Err(IntegrateError::InvalidGrid("RK4 needs at least two grid points".into()).into());
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut y = y0;
    out.push(y.clone());
    for w in grid.points().windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let check = |sys: &S, v: &S::Vector| -> Result<(), S::Error> {
            if all_finite(&sys.components(v)) {
                Ok(())
            } else {
                Err(IntegrateError::NonFiniteState { t }.into())
            }
        };
        let k1 = sys.eval(t, &y)?;
        check(sys, &k1)?;
        let y2 = sys.combine(&y, &[(0.5 * h, &k1)])?;
        let k2 = sys.eval(t + 0.5 * h, &y2)?;
        check(sys, &k2)?;
        let y3 = sys.combine(&y, &[(0.5 * h, &k2)])?;
        let k3 = sys.eval(t + 0.5 * h, &y3)?;
        check(sys, &k3)?;
        let y4 = sys.combine(&y, &[(h, &k3)])?;
        let k4 = sys.eval(t + h, &y4)?;
        check(sys, &k4)?;
        y = sys.combine(&y, &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)])?;
        check(sys, &y)?;
        out.push(y.clone());
    }
    Ok(out)
}

/// Fixed-step RK4 over `grid`, one step per interval.
pub fn rk4_fixed<F>(field: F, y0: State, grid: &TimeGrid) -> Result<Trajectory, IntegrateError>
where
    F: FnMut(f64, State) -> State,
{
    let mut sys = FieldSystem::new(field);
    let states = rk4_steps(&mut sys, y0, grid)?;
    Trajectory::new(grid.clone(), states)
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
/// Fifth-order weights (also the last row of A; FSAL).
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
/// Continuous extension: `y(t + θh) = y + h Σᵢ kᵢ Σⱼ P[i][j] θ^(j+1)`.
const DENSE: [[f64; 4]; 7] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

fn dense_weights(theta: f64) -> [f64; 7] {
    let mut w = [0.0; 7];
    for (wi, row) in w.iter_mut().zip(DENSE.iter()) {
        // Horner form of θ(P0 + θ(P1 + θ(P2 + θP3))).
        *wi = theta * (row[0] + theta * (row[1] + theta * (row[2] + theta * row[3])));
    }
    w
}

/// One accepted Dormand–Prince step.
#[derive(Debug, Clone)]
pub struct StepRecord<V> {
    pub t0: f64,
    pub h: f64,
    pub y0: V,
    pub y1: V,
    pub stages: [V; 7],
    /// Scaled local error estimate (≤ 1 for accepted steps).
    pub error: f64,
}

impl<V> StepRecord<V> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
}

/// Result of an adaptive solve through [`OdeSystem`].
#[derive(Debug, Clone)]
pub struct AdaptiveOutput<V> {
    /// One state per output-grid point.
    pub samples: Vec<V>,
    pub steps: Vec<StepRecord<V>>,
    pub stats: SolverStats,
}

/// Dormand–Prince 5(4) on any [`OdeSystem`], sampled on `output_grid` through
/// the order-4 continuous extension. Accepted step sizes are plain numbers, so
/// for a tape-backed system they act as constants of the recorded computation.
pub fn dopri5_generic<S: OdeSystem>(
    sys: &mut S,
    y0: S::Vector,
    t_span: (f64, f64),
    cfg: &SolverConfig,
    output_grid: &TimeGrid,
    keep_steps: bool,
) -> Result<AdaptiveOutput<S::Vector>, S::Error> {
    cfg.validate()?;
    let (t0, t_end) = t_span;
    if !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
        return Err(IntegrateError::InvalidGrid(format!("bad span [{t0}, {t_end}]")).into());
    }
    if output_grid.first() < t0 || output_grid.last() > t_end {
        return Err(IntegrateError::InvalidGrid("output grid outside the integration span".into()).into());
    }
    let span = t_end - t0;
    let h_min = 1e-14 * span;
    let outputs = output_grid.points();
    let mut samples = Vec::with_capacity(outputs.len());
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] == t0 {
        samples.push(y0.clone());
        next_out += 1;
    }

    let mut stats = SolverStats::default();
    let mut steps = Vec::new();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = sys.eval(t, &y)?;
    stats.evals += 1;
    if !all_finite(&sys.components(&k1)) {
        return Err(IntegrateError::NonFiniteState { t }.into());
    }
    let mut h = cfg.h_init.min(cfg.h_max).min(span);

    while t < t_end {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(IntegrateError::MaxStepsExceeded(cfg.max_steps).into());
        }
        if h < h_min {
            return Err(IntegrateError::StepUnderflow { t, h }.into());
        }
        let last = t + h >= t_end - h_min;
        if last {
            h = t_end - t;
        }
        let mark = sys.mark();
        let y2 = sys.combine(&y, &[(h * A2[0], &k1)])?;
        let k2 = sys.eval(t + C[1] * h, &y2)?;
        let y3 = sys.combine(&y, &[(h * A3[0], &k1), (h * A3[1], &k2)])?;
        let k3 = sys.eval(t + C[2] * h, &y3)?;
        let y4 = sys.combine(&y, &[(h * A4[0], &k1), (h * A4[1], &k2), (h * A4[2], &k3)])?;
        let k4 = sys.eval(t + C[3] * h, &y4)?;
        let y5 = sys.combine(&y, &[(h * A5[0], &k1), (h * A5[1], &k2), (h * A5[2], &k3), (h * A5[3], &k4)])?;
        let k5 = sys.eval(t + C[4] * h, &y5)?;
        let y6 = sys.combine(
            &y,
            &[(h * A6[0], &k1), (h * A6[1], &k2), (h * A6[2], &k3), (h * A6[3], &k4), (h * A6[4], &k5)],
        )?;
        let k6 = sys.eval(t + C[5] * h, &y6)?;
        let y_new = sys.combine(
            &y,
            &[(h * B5[0], &k1), (h * B5[2], &k3), (h * B5[3], &k4), (h * B5[4], &k5), (h * B5[5], &k6)],
        )?;
        let t_new = if last { t_end } else { t + h };
        let k7 = sys.eval(t_new, &y_new)?;
        stats.evals += 6;

        let comps: Vec<Vec<f64>> = [&k1, &k2, &k3, &k4, &k5, &k6, &k7].iter().map(|k| sys.components(k)).collect();
        let yv = sys.components(&y);
        let ynv = sys.components(&y_new);
        let mut err = 0.0f64;
        let mut finite = all_finite(&ynv);
        for i in 0..yv.len() {
            let mut e = 0.0;
            for (j, kc) in comps.iter().enumerate() {
                e += (B5[j] - B4[j]) * kc[i];
            }
            e *= h;
            let scale = cfg.atol + cfg.rtol * yv[i].abs().max(ynv[i].abs());
            let r = e.abs() / scale;
            if !r.is_finite() {
                finite = false;
            }
            err = err.max(r);
        }
        finite &= comps.iter().all(|c| all_finite(c));

        if !finite || err > 1.0 {
            sys.rewind(mark);
            stats.rejected += 1;
            let factor = if finite { (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0) } else { MIN_FACTOR };
            h *= factor;
            continue;
        }

        stats.accepted += 1;
        let stages = [k1.clone(), k2, k3, k4, k5, k6, k7.clone()];
        while next_out < outputs.len() && outputs[next_out] <= t_new {
            let to = outputs[next_out];
            let sample = if to == t_new {
                y_new.clone()
            } else {
                let w = dense_weights((to - t) / h);
                let terms: Vec<(f64, &S::Vector)> =
                    w.iter().zip(stages.iter()).filter(|(c, _)| **c != 0.0).map(|(c, k)| (h * c, k)).collect();
                sys.combine(&y, &terms)?
            };
            samples.push(sample);
            next_out += 1;
        }
        if keep_steps {
            steps.push(StepRecord { t0: t, h, y0: y.clone(), y1: y_new.clone(), stages, error: err });
        }
        let factor = if err == 0.0 { MAX_FACTOR } else { (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR) };
        t = t_new;
        y = y_new;
        k1 = k7;
        h = (h * factor).min(cfg.h_max);
    }
    Ok(AdaptiveOutput { samples, steps, stats })
}

/// Adaptive solve of a plain field, with the accepted-step log.
#[derive(Debug, Clone)]
pub struct Dopri5Solution {
    pub trajectory: Trajectory,
    pub steps: Vec<StepRecord<State>>,
    pub stats: SolverStats,
}

/// Dormand–Prince 5(4) over `t_span`, sampled on `output_grid`.
pub fn dopri5<F>(
    field: F,
    y0: State,
    t_span: (f64, f64),
    cfg: &SolverConfig,
    output_grid: &TimeGrid,
) -> Result<Dopri5Solution, IntegrateError>
where
    F: FnMut(f64, State) -> State,
{
    let mut sys = FieldSystem::new(field);
    let out = dopri5_generic(&mut sys, y0, t_span, cfg, output_grid, true)?;
    Ok(Dopri5Solution {
        trajectory: Trajectory::new(output_grid.clone(), out.samples)?,
        steps: out.steps,
        stats: out.stats,
    })
}

/// Evaluates the continuous extension of one accepted step at `t`.
pub fn dense_eval(step: &StepRecord<State>, t: f64) -> Result<State, IntegrateError> {
    let (t0, t1) = (step.t0, step.t1());
    if !(t >= t0 && t <= t1) {
        return Err(IntegrateError::OutOfStepRange { t, t0, t1 });
    }
    if t == t0 {
        return Ok(step.y0);
    }
    if t == t1 {
        return Ok(step.y1);
    }
    let w = dense_weights((t - t0) / step.h);
    let mut out = step.y0;
    for (c, k) in w.iter().zip(step.stages.iter()) {
        out.v += step.h * c * k.v;
        out.n += step.h * c * k.n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, s: State) -> State {
        State::new(-s.v, -s.n)
    }

    #[test]
    fn uniform_grid_is_inclusive() {
        let g = TimeGrid::uniform(0.0, 300.0, 3000).unwrap();
        assert_eq!(g.len(), 3000);
        assert_eq!(g.first(), 0.0);
        assert_eq!(g.last(), 300.0);
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, f64::NAN]).is_err());
        assert_eq!(TimeGrid::uniform(0.0, 300.0, 2).unwrap().points(), &[0.0, 300.0]);
    }

    #[test]
    fn rk4_zero_field_is_constant() {
        let g = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let y0 = State::new(-26.0, 0.13);
        let tr = rk4_fixed(|_, _| State::default(), y0, &g).unwrap();
        assert!(tr.states.iter().all(|s| *s == y0));
    }

    #[test]
    fn rk4_single_step_hand_value() {
        // k1 = -1, k2 = -0.95, k3 = -0.9525, k4 = -0.90475
        // y1 = 1 + 0.1/6 (k1 + 2k2 + 2k3 + k4) = 0.9048375
        let g = TimeGrid::new(vec![0.0, 0.1]).unwrap();
        let tr = rk4_fixed(decay, State::new(1.0, 1.0), &g).unwrap();
        assert!((tr.states[1].v - 0.904_837_5).abs() < 1e-15);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |n: usize| {
            let g = TimeGrid::uniform(0.0, 1.0, n + 1).unwrap();
            let tr = rk4_fixed(decay, State::new(1.0, 1.0), &g).unwrap();
            (tr.states[n].v - (-1.0f64).exp()).abs()
        };
        let ratio = err(10) / err(20);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rk4_reports_non_finite() {
        let g = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let r = rk4_fixed(|_, _| State::new(f64::NAN, 0.0), State::default(), &g);
        assert!(matches!(r, Err(IntegrateError::NonFiniteState { .. })));
    }

    #[test]
    fn dopri5_exponential_growth() {
        let cfg = SolverConfig { rtol: 1e-9, atol: 1e-12, ..SolverConfig::ground_truth() };
        let g = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let sol = dopri5(|_, s| s, State::new(1.0, 0.0), (0.0, 1.0), &cfg, &g).unwrap();
        let e = std::f64::consts::E;
        assert!((sol.trajectory.states[10].v - e).abs() < 1e-7);
        for (t, s) in g.points().iter().zip(&sol.trajectory.states) {
            assert!((s.v - t.exp()).abs() < 1e-7);
        }
        assert!(sol.steps.iter().all(|s| s.error <= 1.0));
    }

    #[test]
    fn dopri5_zero_field_few_steps() {
        let g = TimeGrid::uniform(0.0, 300.0, 31).unwrap();
        let y0 = State::new(-60.0, 0.0);
        let sol = dopri5(|_, _| State::default(), y0, (0.0, 300.0), &SolverConfig::ground_truth(), &g).unwrap();
        assert!(sol.trajectory.states.iter().all(|s| *s == y0));
        assert!(sol.stats.accepted <= 8, "{:?}", sol.stats);
    }

    #[test]
    fn dense_output_endpoints_and_midpoint() {
        let cfg = SolverConfig { rtol: 1e-6, atol: 1e-9, ..SolverConfig::ground_truth() };
        let g = TimeGrid::uniform(0.0, 2.0, 3).unwrap();
        let sol = dopri5(decay, State::new(1.0, 1.0), (0.0, 2.0), &cfg, &g).unwrap();
        for step in &sol.steps {
            let a = dense_eval(step, step.t0).unwrap();
            let b = dense_eval(step, step.t1()).unwrap();
            assert!((a.v - step.y0.v).abs() <= 1e-13);
            assert!((b.v - step.y1.v).abs() <= 1e-13);
            // Interpolant at θ = 1 reproduces the propagated state.
            let w = dense_weights(1.0);
            let mut y = step.y0.v;
            for (c, k) in w.iter().zip(&step.stages) {
                y += step.h * c * k.v;
            }
            assert!((y - step.y1.v).abs() < 1e-13);
            let mid = 0.5 * (step.t0 + step.t1());
            let m = dense_eval(step, mid).unwrap();
            assert!((m.v - (-mid).exp()).abs() < 10.0 * (cfg.atol + cfg.rtol), "t={mid}");
        }
        let s = &sol.steps[0];
        assert!(matches!(dense_eval(s, s.t1() + 1.0), Err(IntegrateError::OutOfStepRange { .. })));
    }

    #[test]
    fn dopri5_is_deterministic_and_starts_at_y0() {
        let p = crate::MlParams::regime(crate::Regime::Snlc).with_current(42.0);
        let g = TimeGrid::uniform(0.0, 100.0, 101).unwrap();
        let run = || {
            dopri5(|_, s| crate::ml_model::vector_field(s, &p), State::new(-60.0, 0.0), (0.0, 100.0), &SolverConfig::ground_truth(), &g)
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.trajectory.states[0], State::new(-60.0, 0.0));
        assert_eq!(a.trajectory.len(), g.len());
    }

    #[test]
    fn dopri5_error_paths() {
        let g = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let tight = SolverConfig { max_steps: 2, rtol: 1e-12, atol: 1e-14, h_init: 1e-4, h_max: 1e-4 };
        assert!(matches!(
            dopri5(decay, State::new(1.0, 1.0), (0.0, 1.0), &tight, &g),
            Err(IntegrateError::MaxStepsExceeded(2))
        ));
        let blow = dopri5(|_, s| State::new(s.v * s.v, 0.0), State::new(1.0, 0.0), (0.0, 2.0), &SolverConfig::ground_truth(), &TimeGrid::uniform(0.0, 2.0, 3).unwrap());
        assert!(matches!(blow, Err(IntegrateError::StepUnderflow { .. }) | Err(IntegrateError::MaxStepsExceeded(_))));
        let outside = TimeGrid::uniform(0.0, 2.0, 3).unwrap();
        assert!(dopri5(decay, State::new(1.0, 1.0), (0.0, 1.0), &SolverConfig::ground_truth(), &outside).is_err());
    }
}
