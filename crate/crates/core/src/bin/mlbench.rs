//! Command-line front end over `mlbench::bench`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlbench::bench::{self, ExperimentManifest, Method, SweepConfig};
use mlbench::{Error, Regime, Result, State};

#[derive(Parser)]
#[command(name = "mlbench", version, about = "Morris-Lecar PINN / neural ODE benchmark")]
struct Cli {
    /// Output root directory.
    #[arg(long, global = true, env = bench::OUTPUT_ENV)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write ground-truth `t,V,N` data for one regime and current.
    Generate {
        #[arg(long, default_value = "hopf")]
        regime: Regime,
        #[arg(long, default_value_t = 90.0)]
        i_ext: f64,
        #[arg(long, default_value_t = bench::DEFAULT_POINTS)]
        points: usize,
        /// End time (ms).
        #[arg(long, default_value_t = bench::DEFAULT_T_END)]
        t_end: f64,
        #[arg(long, default_value_t = bench::DEFAULT_Y0.v, allow_hyphen_values = true)]
        y0_v: f64,
        #[arg(long, default_value_t = bench::DEFAULT_Y0.n)]
        y0_n: f64,
        /// Output file (default: <out>/data-<regime>-i<I>.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sweep the applied current and record peak-to-peak amplitudes.
    Bifurcate {
        /// Regime to sweep; all three when omitted.
        #[arg(long)]
        regime: Option<Regime>,
        #[arg(long, default_value_t = 0.0)]
        i_min: f64,
        #[arg(long, default_value_t = 120.0)]
        i_max: f64,
        #[arg(long, default_value_t = 41)]
        currents: usize,
        #[arg(long, default_value_t = 0.5)]
        transient: f64,
        #[arg(long, default_value_t = bench::DEFAULT_POINTS)]
        points: usize,
    },
    /// Locate and classify fixed points.
    Equilibria {
        #[arg(long, default_value = "hopf")]
        regime: Regime,
        #[arg(long, default_value_t = 90.0)]
        i_ext: f64,
    },
    /// Train one model and write its run directory.
    Train(TrainArgs),
    /// Run the method x regime x epoch matrix and write the report.
    Grid {
        #[arg(long, value_delimiter = ',', default_value = "pinn,node")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "hopf,snlc,homoclinic")]
        regimes: Vec<Regime>,
        #[arg(long = "epoch-list", value_delimiter = ',', default_value = "500,2000,5000")]
        epoch_list: Vec<usize>,
        #[command(flatten)]
        run: TrainArgs,
    },
    /// Rebuild report.csv and best.csv from existing run directories.
    Report {
        /// Directory holding run directories (default: the output root).
        #[arg(long)]
        root: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Replay a saved manifest.txt; other flags still override it.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// key=value config file, applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    i_ext: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    points: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    integrator: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    t_end: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    y0_v: Option<String>,
    #[arg(long)]
    y0_n: Option<String>,
    #[arg(long)]
    rtol: Option<String>,
    #[arg(long)]
    atol: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    #[arg(long)]
    pinn_init: Option<String>,
    #[arg(long)]
    pinn_residual: Option<String>,
    #[arg(long)]
    resample: Option<String>,
    /// Run directory (default: <out>/<run name>).
    #[arg(long)]
    out_dir: Option<String>,
}

impl TrainArgs {
    fn manifest(&self) -> Result<ExperimentManifest> {
        let mut m = match &self.manifest {
            Some(p) => ExperimentManifest::load(p)?,
            None => ExperimentManifest::default(),
        };
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            m.apply_config(&text).map_err(|e| e.context(p.display().to_string()))?;
        }
        let flags = [
            ("method", &self.method),
            ("regime", &self.regime),
            ("i_ext", &self.i_ext),
            ("epochs", &self.epochs),
            ("points", &self.points),
            ("seed", &self.seed),
            ("activation", &self.activation),
            ("integrator", &self.integrator),
            ("lr", &self.lr),
            ("t_end", &self.t_end),
            ("y0_v", &self.y0_v),
            ("y0_n", &self.y0_n),
            ("rtol", &self.rtol),
            ("atol", &self.atol),
            ("log_every", &self.log_every),
            ("pinn_init", &self.pinn_init),
            ("pinn_residual", &self.pinn_residual),
            ("resample", &self.resample),
            ("out_dir", &self.out_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                m.set(key, v).map_err(|e| e.context(format!("--{}", key.replace('_', "-"))))?;
            }
        }
        m.validate()?;
        Ok(m)
    }
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.out.unwrap_or_else(bench::output_root);
    match cli.command {
        Command::Generate { regime, i_ext, points, t_end, y0_v, y0_n, output } => {
            let path = output.unwrap_or_else(|| root.join(format!("data-{regime}-i{i_ext}.csv")));
            let traj = bench::generate_data(regime, i_ext, points, t_end, State::new(y0_v, y0_n), &path)?;
            println!("wrote {} rows to {}", traj.len(), path.display());
        }
        Command::Bifurcate { regime, i_min, i_max, currents, transient, points } => {
            let regimes = regime.map_or(Regime::ALL.to_vec(), |r| vec![r]);
            let cfg = SweepConfig {
                i_range: (i_min, i_max),
                n_currents: currents,
                transient_fraction: transient,
                n_points: points,
                ..SweepConfig::default()
            };
            fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
            let mut curves = Vec::new();
            for r in regimes {
                let curve = bench::bifurcation_sweep(r, &cfg)?;
                let path = root.join(format!("bifurcation-{r}.csv"));
                fs::write(&path, curve.to_csv()).map_err(|e| Error::io(&path, e))?;
                let failed = curve.failures.iter().filter(|f| f.is_some()).count();
                println!("{r}: {} currents ({failed} failed) -> {}", curve.i_values.len(), path.display());
                curves.push(curve);
            }
            let svg = root.join("bifurcation.svg");
            fs::write(&svg, bench::bifurcation_svg(&curves)).map_err(|e| Error::io(&svg, e))?;
        }
        Command::Equilibria { regime, i_ext } => {
            let eqs = bench::equilibria(regime, i_ext)?;
            for e in &eqs {
                println!(
                    "V*={:.6} N*={:.6} eig=({:.6}{:+.6}i, {:.6}{:+.6}i) {}",
                    e.state.v,
                    e.state.n,
                    e.eigenvalues[0].re,
                    e.eigenvalues[0].im,
                    e.eigenvalues[1].re,
                    e.eigenvalues[1].im,
                    e.stability.label()
                );
            }
            let path = root.join(format!("equilibria-{regime}-i{i_ext}.csv"));
            fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
            fs::write(&path, bench::equilibria_csv(&eqs)).map_err(|e| Error::io(&path, e))?;
        }
        Command::Train(args) => {
            let m = args.manifest()?;
            let r = bench::run_experiment(&m, &root)?;
            println!("{}", r.report);
            println!("params={} macs={} -> {}", r.param_count, r.mac_count, r.manifest.out_dir.display());
        }
        Command::Grid { methods, regimes, epoch_list, run } => {
            let methods: Vec<Method> = methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
            let base = run.manifest()?;
            let rows = bench::run_grid(&base, &methods, &regimes, &epoch_list, &root)?;
            println!("{} runs; report in {}", rows.len(), root.display());
        }
        Command::Report { root: dir } => {
            let dir = dir.unwrap_or(root);
            let rows = bench::collect_rows(&dir)?;
            let (report, best) = bench::emit_report(&rows, &dir)?;
            println!("{} rows -> {}, {}", rows.len(), report.display(), best.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
