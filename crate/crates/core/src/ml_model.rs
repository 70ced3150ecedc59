//! The Morris–Lecar membrane model.
//!
//! Two state variables: membrane potential `V` (mV) and the potassium gating
//! variable `N`. Time is in ms, currents in µA/cm², conductances in mS/cm².
//!
//! ```text
//! C dV/dt = -g_Ca M∞(V)(V - V_Ca) - g_K N (V - V_K) - g_L (V - V_L) + I
//!   dN/dt = φ (N∞(V) - N) / τ_N(V)
//! ```
//!
//! Besides the vector field this module finds equilibria through the scalar
//! reduction `f(V) = I` (with `N = N∞(V)`) and classifies them from the
//! closed-form Jacobian.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

/// Residual tolerance used when validating equilibria.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-8;

/// Default scan range for [`find_equilibria`] (mV).
pub const DEFAULT_V_BRACKET: (f64, f64) = (-100.0, 150.0);

/// Default number of scan points for [`find_equilibria`].
pub const DEFAULT_SCAN_POINTS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no sign change of f(V) - I in [{lo}, {hi}] mV")]
    EmptyBracket { lo: f64, hi: f64 },
    #[error("invalid scan: {0}")]
    InvalidScan(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown regime `{0}` (expected hopf, snlc or homoclinic)")]
    UnknownRegime(String),
}

/// The three excitability regimes studied in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Hopf,
    Snlc,
    Homoclinic,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Hopf, Regime::Snlc, Regime::Homoclinic];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Hopf => "hopf",
            Regime::Snlc => "snlc",
            Regime::Homoclinic => "homoclinic",
        }
    }

    /// Current at which the regime is trained and evaluated (µA/cm²).
    pub fn representative_current(self) -> f64 {
        match self {
            Regime::Hopf => 90.0,
            Regime::Snlc => 42.0,
            Regime::Homoclinic => 50.0,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hopf" => Ok(Regime::Hopf),
            "snlc" => Ok(Regime::Snlc),
            "homoclinic" | "homo" => Ok(Regime::Homoclinic),
            other => Err(ModelError::UnknownRegime(other.to_string())),
        }
    }
}

/// Biophysical constants of one regime plus the applied current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlParams {
    /// Membrane capacitance (µF/cm²).
    pub c_m: f64,
    pub g_ca: f64,
    pub g_k: f64,
    pub g_l: f64,
    pub v_ca: f64,
    pub v_k: f64,
    pub v_l: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub phi: f64,
    pub i_ext: f64,
}

impl MlParams {
    /// Parameter set of `regime` with `i_ext = 0`.
    pub fn regime(regime: Regime) -> Self {
        let snlc = MlParams {
            c_m: 20.0,
            g_ca: 4.0,
            g_k: 8.0,
            g_l: 2.0,
            v_ca: 120.0,
            v_k: -84.0,
            v_l: -60.0,
            v1: -1.2,
            v2: 18.0,
            v3: 12.0,
            v4: 17.4,
            phi: 0.067,
            i_ext: 0.0,
        };
        match regime {
            Regime::Hopf => MlParams {
                g_ca: 4.4,
                v3: 2.0,
                v4: 30.0,
                phi: 0.04,
                ..snlc
            },
            Regime::Snlc => snlc,
            Regime::Homoclinic => MlParams { phi: 0.23, ..snlc },
        }
    }

    pub fn with_current(self, i_ext: f64) -> Self {
        MlParams { i_ext, ..self }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.c_m, self.g_ca, self.g_k, self.g_l, self.v_ca, self.v_k, self.v_l, self.v1,
            self.v2, self.v3, self.v4, self.phi, self.i_ext,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidParams("non-finite constant".into()));
        }
        if self.c_m <= 0.0 {
            return Err(ModelError::InvalidParams("c_m must be positive".into()));
        }
        if self.g_ca < 0.0 || self.g_k < 0.0 || self.g_l < 0.0 {
            return Err(ModelError::InvalidParams("conductances must be non-negative".into()));
        }
        if self.v2 == 0.0 || self.v4 == 0.0 {
            return Err(ModelError::InvalidParams("v2 and v4 must be non-zero".into()));
        }
        if self.phi <= 0.0 {
            return Err(ModelError::InvalidParams("phi must be positive".into()));
        }
        Ok(())
    }
}

/// Shorthand for [`MlParams::regime`]; `i_ext` is zero.
pub fn regime_params(regime: Regime) -> MlParams {
    MlParams::regime(regime)
}

/// A point `(V, N)` of the phase plane. `n` is not clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    pub v: f64,
    pub n: f64,
}

impl State {
    pub const fn new(v: f64, n: f64) -> Self {
        State { v, n }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.n.is_finite()
    }

    pub fn norm_inf(&self) -> f64 {
        self.v.abs().max(self.n.abs())
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.v, self.n]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        State { v: a[0], n: a[1] }
    }
}

pub fn m_inf(v: f64, p: &MlParams) -> f64 {
    0.5 * (1.0 + ((v - p.v1) / p.v2).tanh())
}

pub fn n_inf(v: f64, p: &MlParams) -> f64 {
    0.5 * (1.0 + ((v - p.v3) / p.v4).tanh())
}

pub fn tau_n(v: f64, p: &MlParams) -> f64 {
    1.0 / ((v - p.v3) / (2.0 * p.v4)).cosh()
}

fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    1.0 / (c * c)
}

/// dM∞/dV.
pub fn m_inf_prime(v: f64, p: &MlParams) -> f64 {
    sech2((v - p.v1) / p.v2) / (2.0 * p.v2)
}

/// dN∞/dV.
pub fn n_inf_prime(v: f64, p: &MlParams) -> f64 {
    sech2((v - p.v3) / p.v4) / (2.0 * p.v4)
}

/// Total ionic current `I_ion(V, N)` such that `C dV/dt = I - I_ion`.
pub fn ionic_current(s: State, p: &MlParams) -> f64 {
    p.g_ca * m_inf(s.v, p) * (s.v - p.v_ca) + p.g_k * s.n * (s.v - p.v_k) + p.g_l * (s.v - p.v_l)
}

/// Right-hand side `(dV/dt, dN/dt)`.
pub fn vector_field(s: State, p: &MlParams) -> State {
    let dv = (p.i_ext - ionic_current(s, p)) / p.c_m;
    let dn = p.phi * (n_inf(s.v, p) - s.n) / tau_n(s.v, p);
    State { v: dv, n: dn }
}

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

/// Closed-form Jacobian of [`vector_field`].
pub fn jacobian(s: State, p: &MlParams) -> Mat2 {
    let v = s.v;
    let j11 = (-p.g_ca * m_inf_prime(v, p) * (v - p.v_ca) - p.g_ca * m_inf(v, p) - p.g_k * s.n - p.g_l) / p.c_m;
    let j12 = -p.g_k * (v - p.v_k) / p.c_m;
    let rate = p.phi / tau_n(v, p);
    // d/dV [(N∞ - N)/τ] also carries a dτ/dV term; it vanishes on the nullcline N = N∞(V).
    let dtau_inv = ((v - p.v3) / (2.0 * p.v4)).sinh() / (2.0 * p.v4);
    let j21 = rate * n_inf_prime(v, p) + p.phi * (n_inf(v, p) - s.n) * dtau_inv;
    let j22 = -rate;
    [[j11, j12], [j21, j22]]
}

/// Local stability class of a planar fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    StableNode,
    StableFocus,
    UnstableNode,
    UnstableFocus,
    Saddle,
    /// Zero trace or zero determinant (within tolerance): linearisation is inconclusive.
    CenterOrDegenerate,
}

impl Stability {
    pub fn is_stable(self) -> bool {
        matches!(self, Stability::StableNode | Stability::StableFocus)
    }

    pub fn label(self) -> &'static str {
        match self {
            Stability::StableNode => "stable node",
            Stability::StableFocus => "stable focus",
            Stability::UnstableNode => "unstable node",
            Stability::UnstableFocus => "unstable focus",
            Stability::Saddle => "saddle",
            Stability::CenterOrDegenerate => "center/degenerate",
        }
    }
}

const DEGENERACY_TOL: f64 = 1e-12;

/// Eigenvalues from the trace/determinant quadratic and the resulting class.
pub fn classify_equilibrium(j: &Mat2) -> (Stability, [Complex64; 2]) {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = tr * tr - 4.0 * det;
    let eig = if disc >= 0.0 {
        let sq = disc.sqrt();
        // Avoid cancellation in the smaller root.
        let q = 0.5 * (tr + tr.signum() * sq);
        let (a, b) = if q != 0.0 { (q, det / q) } else { (0.5 * sq, -0.5 * sq) };
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        [Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(0.5 * tr, im), Complex64::new(0.5 * tr, -im)]
    };
    let stability = if det < -DEGENERACY_TOL {
        Stability::Saddle
    } else if tr.abs() <= DEGENERACY_TOL || det.abs() <= DEGENERACY_TOL {
        Stability::CenterOrDegenerate
    } else if tr < 0.0 {
        if disc >= 0.0 {
            Stability::StableNode
        } else {
            Stability::StableFocus
        }
    } else if disc >= 0.0 {
        Stability::UnstableNode
    } else {
        Stability::UnstableFocus
    };
    (stability, eig)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: State,
    pub jacobian: Mat2,
    pub eigenvalues: [Complex64; 2],
    pub stability: Stability,
}

impl Equilibrium {
    pub fn at(state: State, p: &MlParams) -> Self {
        let jacobian = jacobian(state, p);
        let (stability, eigenvalues) = classify_equilibrium(&jacobian);
        Equilibrium { state, jacobian, eigenvalues, stability }
    }
}

/// `f(V) - I` where `f(V) = I_ion(V, N∞(V))`.
fn reduced_balance(v: f64, p: &MlParams) -> f64 {
    ionic_current(State::new(v, n_inf(v, p)), p) - p.i_ext
}

fn reduced_balance_prime(v: f64, p: &MlParams) -> f64 {
    let ni = n_inf(v, p);
    p.g_ca * (m_inf_prime(v, p) * (v - p.v_ca) + m_inf(v, p))
        + p.g_k * (n_inf_prime(v, p) * (v - p.v_k) + ni)
        + p.g_l
}

/// All fixed points with `V*` in `v_bracket`, sorted by `V*`.
///
/// Scans `f(V) - I` on `grid_n` uniform points, bisects every sign change to
/// `|ΔV| < 1e-10` and applies one Newton step (kept only if it stays inside
/// the bracket and does not increase the residual).
pub fn find_equilibria(
    p: &MlParams,
    v_bracket: (f64, f64),
    grid_n: usize,
) -> Result<Vec<Equilibrium>, ModelError> {
    let (lo, hi) = v_bracket;
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(ModelError::InvalidScan(format!("empty bracket [{lo}, {hi}]")));
    }
    if grid_n < 2 {
        return Err(ModelError::InvalidScan("grid_n must be at least 2".into()));
    }
    let step = (hi - lo) / (grid_n - 1) as f64;
    let grid = |i: usize| if i + 1 == grid_n { hi } else { lo + step * i as f64 };

    let mut roots = Vec::new();
    let mut prev_v = grid(0);
    let mut prev_f = reduced_balance(prev_v, p);
    if prev_f == 0.0 {
        roots.push(prev_v);
    }
    for i in 1..grid_n {
        let v = grid(i);
        let f = reduced_balance(v, p);
        if f == 0.0 {
            roots.push(v);
        } else if prev_f != 0.0 && (prev_f < 0.0) != (f < 0.0) {
            roots.push(refine_root(prev_v, v, prev_f, p));
        }
        prev_v = v;
        prev_f = f;
    }
    if roots.is_empty() {
        return Err(ModelError::EmptyBracket { lo, hi });
    }
    roots.sort_by(f64::total_cmp);
    Ok(roots
        .into_iter()
        .map(|v| Equilibrium::at(State::new(v, n_inf(v, p)), p))
        .collect())
}

fn refine_root(mut a: f64, mut b: f64, mut fa: f64, p: &MlParams) -> f64 {
    while (b - a).abs() >= 1e-10 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = reduced_balance(mid, p);
        if fm == 0.0 {
            return mid;
        }
        if (fa < 0.0) == (fm < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    let v = 0.5 * (a + b);
    let fv = reduced_balance(v, p);
    let d = reduced_balance_prime(v, p);
    if d != 0.0 && d.is_finite() {
        let polished = v - fv / d;
        if polished.is_finite()
            && (polished - v).abs() <= (b - a).abs().max(1e-9)
            && reduced_balance(polished, p).abs() <= fv.abs()
        {
            return polished;
        }
    }
    v
}
