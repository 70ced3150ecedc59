//! Orchestration: ground-truth data, bifurcation sweeps, equilibrium tables,
//! experiment runs with their artifacts, and report tables.
//!
//! Every run directory holds a `manifest.txt` that fully determines it.
//! Re-running a manifest reproduces every CSV in the directory byte for byte;
//! wall-clock time lives in `timing.txt` only.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::integrate::{dopri5, SolverConfig, TimeGrid, Trajectory};
use crate::metrics::{format_r2, MetricsReport, VarMetrics};
use crate::ml_model::{find_equilibria, vector_field, Equilibrium, DEFAULT_SCAN_POINTS, DEFAULT_V_BRACKET};
use crate::mlp::{should_log, Activation, Checkpoint, LossHistory, MlpNet};
use crate::node::{NodeConfig, NodeIntegrator, NodeModel};
use crate::pinn::{PinnConfig, PinnInit, VoltageResidual};
use crate::svg::{line_chart, Series};
use crate::{Error, MlParams, Regime, Result, State};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "MLBENCH_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "mlbench-out";
/// Default initial state for data generation.
pub const DEFAULT_Y0: State = State { v: -60.0, n: 0.02 };
pub const DEFAULT_T_END: f64 = 300.0;
pub const DEFAULT_POINTS: usize = 3000;

/// Output root: `MLBENCH_OUT` if set and non-empty, else `mlbench-out`.
pub fn output_root() -> PathBuf {
    match std::env::var(OUTPUT_ENV) {
        Ok(v) if !v.trim().is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUTPUT_ROOT),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Pinn,
    Node,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Pinn, Method::Node];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pinn => "pinn",
            Method::Node => "node",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pinn" => Ok(Method::Pinn),
            "node" => Ok(Method::Node),
            other => Err(Error::Config(format!("unknown method `{other}` (expected pinn or node)"))),
        }
    }
}

// ---------------------------------------------------------------- data

/// Ground truth on the inclusive uniform grid over `[0, t_end]`.
pub fn ground_truth(p: &MlParams, n_points: usize, t_end: f64, y0: State) -> Result<Trajectory> {
    if n_points < 2 {
        return Err(Error::Config("need at least 2 points".into()));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Config("t_end must be positive".into()));
    }
    let grid = TimeGrid::uniform(0.0, t_end, n_points)?;
    let sol = dopri5(|_, s| vector_field(s, p), y0, (0.0, t_end), &SolverConfig::ground_truth(), &grid)?;
    Ok(sol.trajectory)
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,V,N\n");
    for (t, s) in traj.times().iter().zip(&traj.states) {
        out.push_str(&format!("{},{},{}\n", num(*t), num(s.v), num(s.n)));
    }
    out
}

pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let bad = |m: &str| Error::Config(format!("trajectory CSV: {m}"));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("t,V,N") {
        return Err(bad("expected header t,V,N"));
    }
    let (mut ts, mut states) = (Vec::new(), Vec::new());
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-numeric field"))?;
        if f.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        ts.push(f[0]);
        states.push(State::new(f[1], f[2]));
    }
    Ok(Trajectory::new(TimeGrid::new(ts)?, states)?)
}

/// Generates ground truth and writes it as `t,V,N` CSV to `path`.
pub fn generate_data(
    regime: Regime,
    i_ext: f64,
    n_points: usize,
    t_end: f64,
    y0: State,
    path: &Path,
) -> Result<Trajectory> {
    let p = MlParams::regime(regime).with_current(i_ext);
    let traj = ground_truth(&p, n_points, t_end, y0)?;
    write_file(path, trajectory_csv(&traj))?;
    Ok(traj)
}

// ---------------------------------------------------------------- bifurcation

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationCurve {
    pub regime: Regime,
    pub i_values: Vec<f64>,
    /// Peak-to-peak V after the transient (mV); NaN for failed currents.
    pub amplitudes: Vec<f64>,
    /// Error message for currents whose integration failed.
    pub failures: Vec<Option<String>>,
}

impl BifurcationCurve {
    pub fn amplitude_at(&self, i: f64) -> Option<f64> {
        self.i_values.iter().position(|&x| (x - i).abs() < 1e-9).map(|k| self.amplitudes[k])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("i_ext,amplitude_mv,status\n");
        for ((i, a), f) in self.i_values.iter().zip(&self.amplitudes).zip(&self.failures) {
            let status = match f {
                None => "ok".to_string(),
                Some(m) => format!("failed: {}", m.replace(',', ";")),
            };
            out.push_str(&format!("{},{},{status}\n", num(*i), num(*a)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub i_range: (f64, f64),
    pub n_currents: usize,
    pub transient_fraction: f64,
    pub n_points: usize,
    pub t_end: f64,
    pub y0: State,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            i_range: (0.0, 120.0),
            n_currents: 41,
            transient_fraction: 0.5,
            n_points: DEFAULT_POINTS,
            t_end: DEFAULT_T_END,
            y0: DEFAULT_Y0,
        }
    }
}

/// Peak-to-peak `V` of the samples after the first `transient_fraction`.
pub fn peak_to_peak(traj: &Trajectory, transient_fraction: f64) -> f64 {
    let skip = ((traj.len() as f64) * transient_fraction).floor() as usize;
    let (lo, hi) = traj.states[skip.min(traj.len() - 1)..]
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.v), hi.max(s.v)));
    hi - lo
}

pub fn bifurcation_sweep(regime: Regime, cfg: &SweepConfig) -> Result<BifurcationCurve> {
    let (lo, hi) = cfg.i_range;
    if !(0.0..1.0).contains(&cfg.transient_fraction) {
        return Err(Error::Config("transient fraction must lie in [0, 1)".into()));
    }
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::Config("current range must be finite and increasing".into()));
    }
    let i_values: Vec<f64> = if lo == hi {
        vec![lo]
    } else {
        if cfg.n_currents < 2 {
            return Err(Error::Config("need at least 2 currents".into()));
        }
        let step = (hi - lo) / (cfg.n_currents - 1) as f64;
        (0..cfg.n_currents).map(|k| if k + 1 == cfg.n_currents { hi } else { lo + step * k as f64 }).collect()
    };
    let mut amplitudes = Vec::with_capacity(i_values.len());
    let mut failures = Vec::with_capacity(i_values.len());
    for &i in &i_values {
        let p = MlParams::regime(regime).with_current(i);
        match ground_truth(&p, cfg.n_points, cfg.t_end, cfg.y0) {
            Ok(traj) => {
                amplitudes.push(peak_to_peak(&traj, cfg.transient_fraction));
                failures.push(None);
            }
            Err(e) => {
                amplitudes.push(f64::NAN);
                failures.push(Some(e.to_string()));
            }
        }
    }
    Ok(BifurcationCurve { regime, i_values, amplitudes, failures })
}

pub fn bifurcation_svg(curves: &[BifurcationCurve]) -> String {
    let names: Vec<String> = curves.iter().map(|c| c.regime.to_string()).collect();
    let series: Vec<Series> = curves
        .iter()
        .zip(&names)
        .map(|(c, n)| Series { name: n, x: &c.i_values, y: &c.amplitudes, dashed: false })
        .collect();
    line_chart("Bifurcation diagram", "I_ext (uA/cm^2)", "peak-to-peak V (mV)", &series, false)
}

// ---------------------------------------------------------------- equilibria

pub fn equilibria(regime: Regime, i_ext: f64) -> Result<Vec<Equilibrium>> {
    let p = MlParams::regime(regime).with_current(i_ext);
    Ok(find_equilibria(&p, DEFAULT_V_BRACKET, DEFAULT_SCAN_POINTS)?)
}

pub fn equilibria_csv(eqs: &[Equilibrium]) -> String {
    let mut out = String::from("v,n,j11,j12,j21,j22,eig1_re,eig1_im,eig2_re,eig2_im,stability\n");
    for e in eqs {
        let j = e.jacobian;
        let [a, b] = e.eigenvalues;
        let cells = [e.state.v, e.state.n, j[0][0], j[0][1], j[1][0], j[1][1], a.re, a.im, b.re, b.im];
        let cells: Vec<String> = cells.iter().map(|x| num(*x)).collect();
        out.push_str(&format!("{},{}\n", cells.join(","), e.stability.label()));
    }
    out
}

// ---------------------------------------------------------------- manifest

/// Everything that determines one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub method: Method,
    pub regime: Regime,
    pub i_ext: f64,
    pub epochs: usize,
    pub n_points: usize,
    pub t_end: f64,
    pub y0: State,
    pub seed: u64,
    pub activation: Activation,
    pub integrator: NodeIntegrator,
    pub rtol: f64,
    pub atol: f64,
    pub lr: f64,
    pub log_every: usize,
    pub pinn_init: PinnInit,
    pub pinn_residual: VoltageResidual,
    pub resample: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        let solver = SolverConfig::node_training();
        ExperimentManifest {
            method: Method::Pinn,
            regime: Regime::Hopf,
            i_ext: 90.0,
            epochs: 2000,
            n_points: DEFAULT_POINTS,
            t_end: DEFAULT_T_END,
            y0: DEFAULT_Y0,
            seed: 0,
            activation: Activation::Tanh,
            integrator: NodeIntegrator::Dopri5,
            rtol: solver.rtol,
            atol: solver.atol,
            lr: 1e-3,
            log_every: 10,
            pinn_init: PinnInit::DataAware,
            pinn_residual: VoltageResidual::Rate,
            resample: false,
            out_dir: PathBuf::new(),
        }
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl ExperimentManifest {
    /// Run directory name under an output root.
    pub fn run_name(&self) -> String {
        format!(
            "{}-{}-i{}-e{}-p{}-s{}-{}",
            self.method,
            self.regime,
            self.i_ext,
            self.epochs,
            self.n_points,
            self.seed,
            self.activation
        )
    }

    pub fn params(&self) -> MlParams {
        MlParams::regime(self.regime).with_current(self.i_ext)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig { rtol: self.rtol, atol: self.atol, ..SolverConfig::node_training() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.n_points < 2 {
            return Err(Error::Config("need at least 2 points".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Config("t_end must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be finite and non-negative".into()));
        }
        if !self.y0.is_finite() || !self.i_ext.is_finite() {
            return Err(Error::Config("initial state and current must be finite".into()));
        }
        self.solver().validate()?;
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "method" => self.method = value.parse()?,
            "regime" => self.regime = value.parse()?,
            "i_ext" => self.i_ext = parse_field(key, value)?,
            "epochs" => self.epochs = parse_field(key, value)?,
            "points" => self.n_points = parse_field(key, value)?,
            "t_end" => self.t_end = parse_field(key, value)?,
            "y0_v" => self.y0.v = parse_field(key, value)?,
            "y0_n" => self.y0.n = parse_field(key, value)?,
            "seed" => self.seed = parse_field(key, value)?,
            "activation" => self.activation = value.parse()?,
            "integrator" => self.integrator = value.parse()?,
            "rtol" => self.rtol = parse_field(key, value)?,
            "atol" => self.atol = parse_field(key, value)?,
            "lr" => self.lr = parse_field(key, value)?,
            "log_every" => self.log_every = parse_field(key, value)?,
            "pinn_init" => {
                self.pinn_init =
                    PinnInit::parse(value).ok_or_else(|| Error::Config(format!("bad pinn_init `{value}`")))?
            }
            "pinn_residual" => {
                self.pinn_residual = VoltageResidual::parse(value)
                    .ok_or_else(|| Error::Config(format!("bad pinn_residual `{value}`")))?
            }
            "resample" => self.resample = parse_bool(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", k + 1)))?;
            self.set(key, value).map_err(|e| e.context(format!("line {}", k + 1)))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let lines = [
            ("method", self.method.to_string()),
            ("regime", self.regime.to_string()),
            ("i_ext", self.i_ext.to_string()),
            ("epochs", self.epochs.to_string()),
            ("points", self.n_points.to_string()),
            ("t_end", self.t_end.to_string()),
            ("y0_v", self.y0.v.to_string()),
            ("y0_n", self.y0.n.to_string()),
            ("seed", self.seed.to_string()),
            ("activation", self.activation.to_string()),
            ("integrator", self.integrator.to_string()),
            ("rtol", self.rtol.to_string()),
            ("atol", self.atol.to_string()),
            ("lr", self.lr.to_string()),
            ("log_every", self.log_every.to_string()),
            ("pinn_init", self.pinn_init.name().to_string()),
            ("pinn_residual", self.pinn_residual.name().to_string()),
            ("resample", self.resample.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        let mut out = String::from("# mlbench experiment manifest\n");
        for (k, v) in lines {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = ExperimentManifest::default();
        m.apply_config(text)?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentManifest::parse(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
    }
}

// ---------------------------------------------------------------- reports

pub const REPORT_HEADER: &str = "scenario,method,epochs,total_mse,mape_v,mape_n,mae_v,mae_n,r2_v,r2_n,maxerr_v,maxerr_n,rmse_v,rmse_n,rmspe_v,rmspe_n,time_s";

/// One line of the report table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub method: String,
    pub epochs: usize,
    pub v: VarMetrics,
    pub n: VarMetrics,
    pub total_mse: f64,
    pub time_s: f64,
}

impl ReportRow {
    pub fn from_report(r: &MetricsReport) -> Self {
        ReportRow {
            scenario: r.regime.clone(),
            method: r.method.clone(),
            epochs: r.epochs,
            v: r.v,
            n: r.n,
            total_mse: r.total_mse,
            time_s: r.wall_time_s,
        }
    }

    /// All cells except `time_s`.
    fn cells(&self) -> Vec<String> {
        vec![
            self.scenario.clone(),
            self.method.clone(),
            self.epochs.to_string(),
            num(self.total_mse),
            num(self.v.mape_percent),
            num(self.n.mape_percent),
            num(self.v.mae),
            num(self.n.mae),
            format_r2(self.v.r2),
            format_r2(self.n.r2),
            num(self.v.max_err),
            num(self.n.max_err),
            num(self.v.rmse),
            num(self.n.rmse),
            num(self.v.rmspe),
            num(self.n.rmspe),
        ]
    }

    pub fn to_csv_line(&self) -> String {
        let mut c = self.cells();
        c.push(format!("{:.3}", self.time_s));
        c.join(",")
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 17 {
            return Err(Error::Config(format!("report line has {} fields, expected 17", f.len())));
        }
        let x = |i: usize| parse_field::<f64>("report", f[i]);
        let r2 = |i: usize| -> Result<Option<f64>> {
            if f[i] == "undefined" { Ok(None) } else { Ok(Some(parse_field("r2", f[i])?)) }
        };
        let var = |mape: usize, mae: usize, r2i: usize, maxe: usize, rmse: usize, rmspe: usize| -> Result<VarMetrics> {
            let rmse = x(rmse)?;
            Ok(VarMetrics {
                mse: rmse * rmse,
                rmse,
                mae: x(mae)?,
                mape_percent: x(mape)?,
                rmspe: x(rmspe)?,
                r2: r2(r2i)?,
                max_err: x(maxe)?,
            })
        };
        Ok(ReportRow {
            scenario: f[0].to_string(),
            method: f[1].to_string(),
            epochs: parse_field("epochs", f[2])?,
            total_mse: x(3)?,
            v: var(4, 6, 8, 10, 12, 14)?,
            n: var(5, 7, 9, 11, 13, 15)?,
            time_s: x(16)?,
        })
    }
}

pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("report needs at least one row"));
    }
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(REPORT_HEADER) {
        return Err(Error::Config("unexpected report header".into()));
    }
    lines.filter(|l| !l.trim().is_empty()).map(ReportRow::parse_csv_line).collect()
}

/// Lowest `total_mse` per (scenario, method), ordered by scenario then method.
pub fn best_rows(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut best: BTreeMap<(String, String), &ReportRow> = BTreeMap::new();
    for r in rows {
        let key = (r.scenario.clone(), r.method.clone());
        match best.get(&key) {
            Some(b) if !(r.total_mse < b.total_mse) => {}
            _ => {
                best.insert(key, r);
            }
        }
    }
    best.into_values().cloned().collect()
}

/// Writes `report.csv` and `best.csv` into `dir`.
pub fn emit_report(rows: &[ReportRow], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let report = dir.join("report.csv");
    let best = dir.join("best.csv");
    write_file(&report, report_csv(rows)?)?;
    write_file(&best, report_csv(&best_rows(rows))?)?;
    Ok((report, best))
}

/// Collects rows from every run directory directly under `root`.
pub fn collect_rows(root: &Path) -> Result<Vec<ReportRow>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.csv").is_file())
        .collect();
    dirs.sort();
    let mut rows = Vec::new();
    for d in dirs {
        let text = read_file(&d.join("metrics.csv"))?;
        let line = text.lines().nth(1).ok_or_else(|| Error::Config(format!("{}: empty metrics", d.display())))?;
        let time = match fs::read_to_string(d.join("timing.txt")) {
            Ok(t) => t
                .lines()
                .find_map(|l| l.strip_prefix("wall_time_s="))
                .and_then(|v| v.trim().parse::<f64>().ok())
                .unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        };
        rows.push(ReportRow::parse_csv_line(&format!("{line},{time}"))?);
    }
    Ok(rows)
}

/// Appends one line to `progress.log` under `root` in a single write.
pub fn log_progress(root: &Path, message: &str) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join("progress.log");
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(format!("{message}\n").as_bytes()).map_err(|e| Error::io(&path, e))
}

// ---------------------------------------------------------------- experiments

/// Outcome of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub manifest: ExperimentManifest,
    pub report: MetricsReport,
    pub param_count: usize,
    pub mac_count: usize,
    pub history: LossHistory,
    pub prediction: Trajectory,
    pub truth: Trajectory,
}

/// Trained model for one snapshot of a run.
enum Trained {
    Pinn(MlpNet),
    Node(NodeModel),
}

fn predict(trained: &Trained, truth: &Trajectory) -> Result<Trajectory> {
    match trained {
        Trained::Pinn(net) => crate::pinn::predict(net, &truth.grid),
        Trained::Node(model) => model.predict(truth.states[0], &truth.grid),
    }
}

fn predictions_csv(truth: &Trajectory, pred: &Trajectory) -> String {
    let mut out = String::from("t,V_true,N_true,V_pred,N_pred\n");
    for ((t, a), b) in truth.times().iter().zip(&truth.states).zip(&pred.states) {
        out.push_str(&format!("{},{},{},{},{}\n", num(*t), num(a.v), num(a.n), num(b.v), num(b.n)));
    }
    out
}

fn phase_csv(truth: &Trajectory, pred: &Trajectory) -> String {
    let mut out = String::from("V_true,N_true,V_pred,N_pred\n");
    for (a, b) in truth.states.iter().zip(&pred.states) {
        out.push_str(&format!("{},{},{},{}\n", num(a.v), num(a.n), num(b.v), num(b.n)));
    }
    out
}

fn metrics_csv(row: &ReportRow) -> String {
    let header = REPORT_HEADER.strip_suffix(",time_s").unwrap();
    format!("{header}\n{}\n", row.cells().join(","))
}

fn write_plots(dir: &Path, m: &ExperimentManifest, truth: &Trajectory, pred: &Trajectory, h: &LossHistory) -> Result<()> {
    let t = truth.times();
    let (tv, tn, pv, pn) = (truth.voltages(), truth.gates(), pred.voltages(), pred.gates());
    let title = format!("{} {} I={}", m.method, m.regime, m.i_ext);
    let chart = |label: &str, a: &[f64], b: &[f64]| {
        line_chart(
            &format!("{title}: {label}(t)"),
            "t (ms)",
            label,
            &[
                Series { name: "truth", x: t, y: a, dashed: false },
                Series { name: "prediction", x: t, y: b, dashed: true },
            ],
            false,
        )
    };
    write_file(&dir.join("voltage.svg"), chart("V", &tv, &pv))?;
    write_file(&dir.join("gate.svg"), chart("N", &tn, &pn))?;
    write_file(
        &dir.join("phase.svg"),
        line_chart(
            &format!("{title}: phase portrait"),
            "V (mV)",
            "N",
            &[
                Series { name: "truth", x: &tv, y: &tn, dashed: false },
                Series { name: "prediction", x: &pv, y: &pn, dashed: true },
            ],
            false,
        ),
    )?;
    let e: Vec<f64> = h.records.iter().map(|r| r.epoch as f64).collect();
    let total: Vec<f64> = h.records.iter().map(|r| r.total).collect();
    let data: Vec<f64> = h.records.iter().map(|r| r.data).collect();
    let phys: Vec<f64> = h.records.iter().map(|r| r.physics).collect();
    let mut series = vec![
        Series { name: "total", x: &e, y: &total, dashed: false },
        Series { name: "data", x: &e, y: &data, dashed: true },
    ];
    if m.method == Method::Pinn {
        series.push(Series { name: "physics", x: &e, y: &phys, dashed: true });
    }
    write_file(&dir.join("loss.svg"), line_chart(&format!("{title}: training loss"), "epoch", "loss", &series, true))
}

fn finish_run(
    m: &ExperimentManifest,
    dir: &Path,
    truth: &Trajectory,
    trained: &Trained,
    history: LossHistory,
    wall_time_s: f64,
) -> Result<ExperimentResult> {
    let pred = predict(trained, truth)?;
    let report = MetricsReport::new(&pred, truth)?.with_run(m.method.name(), m.regime.name(), m.epochs, wall_time_s);
    let row = ReportRow::from_report(&report);
    let net = match trained {
        Trained::Pinn(net) => net,
        Trained::Node(model) => &model.net,
    };
    let mut metadata = vec![
        ("method".to_string(), m.method.to_string()),
        ("regime".to_string(), m.regime.to_string()),
        ("i_ext".to_string(), m.i_ext.to_string()),
        ("epochs".to_string(), m.epochs.to_string()),
        ("lr".to_string(), m.lr.to_string()),
    ];
    if let Trained::Node(model) = trained {
        metadata.push(("scaler".to_string(), model.scaler.to_field()));
        metadata.push(("integrator".to_string(), model.integrator.to_string()));
        metadata.push(("rtol".to_string(), model.solver.rtol.to_string()));
        metadata.push(("atol".to_string(), model.solver.atol.to_string()));
    }
    let ck = Checkpoint { net: net.clone(), seed: m.seed, metadata };

    write_file(&dir.join("manifest.txt"), m.to_text())?;
    write_file(&dir.join("data.csv"), trajectory_csv(truth))?;
    write_file(&dir.join("history.csv"), history.to_csv())?;
    write_file(&dir.join("predictions.csv"), predictions_csv(truth, &pred))?;
    write_file(&dir.join("phase.csv"), phase_csv(truth, &pred))?;
    write_file(&dir.join("metrics.csv"), metrics_csv(&row))?;
    write_file(
        &dir.join("model.txt"),
        format!(
            "param_count={}\nmac_count={}\nlayers={:?}\nactivation={}\n",
            net.param_count(),
            net.mac_count(),
            net.layer_sizes(),
            net.activation()
        ),
    )?;
    write_file(&dir.join("timing.txt"), format!("wall_time_s={wall_time_s}\nper_epoch_s={}\n", wall_time_s / m.epochs as f64))?;
    ck.save(&dir.join("checkpoint.txt"))?;
    write_plots(dir, m, truth, &pred, &history)?;
    Ok(ExperimentResult {
        manifest: m.clone(),
        report,
        param_count: net.param_count(),
        mac_count: net.mac_count(),
        history,
        prediction: pred,
        truth: truth.clone(),
    })
}

/// History as a standalone run of `epochs` epochs would have logged it.
fn history_prefix(h: &LossHistory, every: usize, epochs: usize) -> LossHistory {
    LossHistory { records: h.records.iter().filter(|r| r.epoch <= epochs && should_log(r.epoch, every, epochs)).copied().collect() }
}

/// Trains once for the largest of `epochs` and writes one run directory per
/// entry under `root`, each identical to what a standalone run with that
/// epoch count produces (apart from wall time).
pub fn run_ladder(base: &ExperimentManifest, epochs: &[usize], root: &Path) -> Result<Vec<ExperimentResult>> {
    ladder_into(base, epochs, |m| root.join(m.run_name()))
}

fn ladder_into(
    base: &ExperimentManifest,
    epochs: &[usize],
    dir_for: impl Fn(&ExperimentManifest) -> PathBuf,
) -> Result<Vec<ExperimentResult>> {
    let mut ladder: Vec<usize> = epochs.to_vec();
    ladder.sort_unstable();
    ladder.dedup();
    let max = *ladder.last().ok_or(Error::EmptyInput("epoch list"))?;
    let mut top = base.clone();
    top.epochs = max;
    top.validate()?;
    let ctx = |e: Error| e.context(format!("{} {} i_ext={}", top.method, top.regime, top.i_ext));
    let p = top.params();
    let truth = ground_truth(&p, top.n_points, top.t_end, top.y0).map_err(ctx)?;

    let (snapshots, history, times): (Vec<(usize, Trained)>, LossHistory, Vec<f64>) = match top.method {
        Method::Pinn => {
            let mut cfg = PinnConfig::new(p, truth.clone(), max, top.seed);
            cfg.lr = top.lr;
            cfg.activation = top.activation;
            cfg.log_every = top.log_every;
            cfg.init = top.pinn_init;
            cfg.residual = top.pinn_residual;
            cfg.resample = top.resample;
            cfg.snapshots = ladder.clone();
            let out = crate::pinn::train_pinn(&cfg).map_err(ctx)?;
            let snaps = out.snapshots.into_iter().map(|(e, n)| (e, Trained::Pinn(n))).collect();
            (snaps, out.history, out.snapshot_times)
        }
        Method::Node => {
            let mut cfg = NodeConfig::new(p, truth.clone(), max, top.seed);
            cfg.lr = top.lr;
            cfg.activation = top.activation;
            cfg.log_every = top.log_every;
            cfg.integrator = top.integrator;
            cfg.solver = top.solver();
            cfg.snapshots = ladder.clone();
            let out = crate::node::train_node(&cfg).map_err(ctx)?;
            let model = out.model.clone();
            let snaps =
                out.snapshots.into_iter().map(|(e, net)| (e, Trained::Node(NodeModel { net, ..model.clone() }))).collect();
            (snaps, out.history, out.snapshot_times)
        }
    };

    let mut results = Vec::with_capacity(snapshots.len());
    for ((epochs, trained), time) in snapshots.iter().zip(times) {
        let mut m = base.clone();
        m.epochs = *epochs;
        m.out_dir = dir_for(&m);
        let h = history_prefix(&history, m.log_every, *epochs);
        let dir = m.out_dir.clone();
        results.push(finish_run(&m, &dir, &truth, trained, h, time).map_err(ctx)?);
    }
    Ok(results)
}

/// Runs one manifest into `manifest.out_dir` (or `root/<run name>` when
/// `out_dir` is empty).
pub fn run_experiment(manifest: &ExperimentManifest, root: &Path) -> Result<ExperimentResult> {
    let dir = if manifest.out_dir.as_os_str().is_empty() {
        root.join(manifest.run_name())
    } else {
        manifest.out_dir.clone()
    };
    let mut res = ladder_into(manifest, &[manifest.epochs], |_| dir.clone())?;
    Ok(res.pop().expect("one rung"))
}

/// Runs every method × regime × epoch combination, then writes the report.
pub fn run_grid(
    base: &ExperimentManifest,
    methods: &[Method],
    regimes: &[Regime],
    epochs: &[usize],
    root: &Path,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        for &regime in regimes {
            let mut m = base.clone();
            m.method = method;
            m.regime = regime;
            m.i_ext = regime.representative_current();
            log_progress(root, &format!("start {method} {regime} epochs={epochs:?}"))?;
            for r in run_ladder(&m, epochs, root)? {
                log_progress(
                    root,
                    &format!(
                        "done {} {} epochs={} total_mse={:e} r2_v={} time_s={:.2}",
                        method,
                        regime,
                        r.manifest.epochs,
                        r.report.total_mse,
                        format_r2(r.report.v.r2),
                        r.report.wall_time_s
                    ),
                )?;
                rows.push(ReportRow::from_report(&r.report));
            }
        }
    }
    emit_report(&rows, root)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scenario: &str, method: &str, epochs: usize, total: f64) -> ReportRow {
        let v = VarMetrics { mse: total, rmse: total.sqrt(), mae: 0.1, mape_percent: 1.0, rmspe: 0.01, r2: Some(0.9), max_err: 1.0 };
        ReportRow { scenario: scenario.into(), method: method.into(), epochs, v, n: v, total_mse: total, time_s: 1.5 }
    }

    #[test]
    fn manifest_roundtrip_and_overrides() {
        let m = ExperimentManifest {
            method: Method::Node,
            regime: Regime::Homoclinic,
            i_ext: 50.0,
            y0: State::new(-26.0, 0.13),
            out_dir: PathBuf::from("runs/x"),
            ..ExperimentManifest::default()
        };
        let text = m.to_text();
        assert_eq!(ExperimentManifest::parse(&text).unwrap(), m);
        let mut n = m.clone();
        n.apply_config("# comment\n\nepochs = 7\nactivation=silu\n").unwrap();
        assert_eq!((n.epochs, n.activation), (7, Activation::Silu));
        assert!(n.apply_config("bogus=1").is_err());
        assert!(n.apply_config("epochs").is_err());
        assert!(n.apply_config("epochs=-3").is_err());
    }

    #[test]
    fn data_csv_endpoints_and_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let traj = generate_data(Regime::Hopf, 90.0, 2, 300.0, DEFAULT_Y0, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.0000000000000000e0,"));
        assert!(lines[2].starts_with("3.0000000000000000e2,"));
        let back = parse_trajectory_csv(&text).unwrap();
        assert_eq!(back.states, traj.states);
        assert!(generate_data(Regime::Hopf, 90.0, 1, 300.0, DEFAULT_Y0, &path).is_err());
        assert!(generate_data(Regime::Hopf, 90.0, 5, 0.0, DEFAULT_Y0, &path).is_err());
    }

    #[test]
    fn sweep_single_point_and_errors() {
        let cfg = SweepConfig { i_range: (50.0, 50.0), n_points: 300, ..SweepConfig::default() };
        let c = bifurcation_sweep(Regime::Hopf, &cfg).unwrap();
        assert_eq!(c.i_values, vec![50.0]);
        assert!(c.amplitudes[0] >= 0.0);
        assert!(bifurcation_sweep(Regime::Hopf, &SweepConfig { transient_fraction: 1.0, ..cfg }).is_err());
        assert!(bifurcation_sweep(Regime::Hopf, &SweepConfig { i_range: (0.0, 10.0), n_currents: 1, ..cfg }).is_err());
        assert!(c.to_csv().starts_with("i_ext,amplitude_mv,status\n"));
    }

    #[test]
    fn report_single_row_and_roundtrip() {
        let rows = vec![row("hopf", "pinn", 500, 2.5)];
        let csv = report_csv(&rows).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap(), REPORT_HEADER);
        let back = parse_report_csv(&csv).unwrap();
        assert_eq!(back[0].total_mse, 2.5);
        assert_eq!(back[0].v.r2, Some(0.9));
        assert!(matches!(report_csv(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn best_rows_pick_minimum_total_mse() {
        // Shaped after a per-epoch PINN table: the longest Hopf run is best.
        let rows = vec![
            row("hopf", "pinn", 1000, 465.644),
            row("hopf", "pinn", 5000, 34.774),
            row("hopf", "pinn", 20000, 0.306),
            row("hopf", "pinn", 10000, 1.2),
            row("snlc", "pinn", 1000, 80.0),
            row("snlc", "pinn", 2000, 60.0),
            row("hopf", "node", 1000, 5.0),
        ];
        let best = best_rows(&rows);
        assert_eq!(best.len(), 3);
        let hp = best.iter().find(|r| r.scenario == "hopf" && r.method == "pinn").unwrap();
        assert_eq!((hp.epochs, hp.total_mse), (20000, 0.306));
        assert_eq!(best.iter().find(|r| r.scenario == "snlc").unwrap().epochs, 2000);
    }

    #[test]
    fn equilibria_table_has_header_and_rows() {
        let eqs = equilibria(Regime::Snlc, 30.0).unwrap();
        let csv = equilibria_csv(&eqs);
        assert_eq!(csv.lines().count(), eqs.len() + 1);
        assert!(csv.contains("saddle"));
    }

    #[test]
    fn progress_log_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        log_progress(dir.path(), "a").unwrap();
        log_progress(dir.path(), "b").unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("progress.log")).unwrap(), "a\nb\n");
    }

    #[test]
    fn snlc_onset_between_30_and_42() {
        let amp = |i: f64| {
            let cfg = SweepConfig { i_range: (i, i), ..SweepConfig::default() };
            bifurcation_sweep(Regime::Snlc, &cfg).unwrap().amplitudes[0]
        };
        assert!(amp(42.0) - amp(30.0) >= 20.0);
    }

    #[test]
    fn amplitude_stable_under_transient_fraction() {
        let traj = ground_truth(&MlParams::regime(Regime::Hopf).with_current(90.0), 3000, 300.0, DEFAULT_Y0).unwrap();
        let a = peak_to_peak(&traj, 0.4);
        let b = peak_to_peak(&traj, 0.6);
        assert!(a > 30.0);
        assert!((a - b).abs() < 1.0, "{a} vs {b}");
    }
}
