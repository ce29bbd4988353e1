mod config;
mod ingest;
mod output;
mod pipeline;
mod quench;
mod scan;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{Engine, ExperimentConfig};
use output::{write_atomic, write_json};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] trisim::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} scan points failed")]
    Points { failed: usize, total: usize, code: i32 },
}

/// Exit status for a library error: 2 for bad input, 3 for engine
/// failures, 4 for statistics failures.
pub fn core_code(e: &trisim::Error) -> i32 {
    use trisim::Error::*;
    match e {
        Lattice(_) | Params(_) | Unreachable(_) | Constraint(_) | CapExceeded { .. } | Schema(_) | Span(_)
        | DegenerateRates(_) => 2,
        EmptySample | ShortSeries(_) | DegenerateFit | OutOfRange { .. } => 4,
        NoConvergence(_) | DtTooLarge { .. } | SignProblem | NoEquilibration(_) | Io(_) => 3,
    }
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => core_code(e),
            CliError::Io(_) => 3,
            CliError::Points { code, .. } => *code,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Parser)]
#[command(name = "trisim", version, about = "Triangular-lattice Rydberg simulator pipeline")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "TRISIM_THREADS")]
    threads: Option<usize>,
    /// Output directory; the configuration's `out`, else the current directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quasi-adiabatic scan over the configured axis.
    Scan,
    /// Sudden quench time series.
    Quench,
    /// Thermal QMC over the configured axis.
    Qmc {
        /// Also dump this many z-basis snapshots per point.
        #[arg(long, default_value_t = 0)]
        snapshots: usize,
    },
    /// Integrate and analyse an AC susceptibility file.
    IngestChi {
        path: PathBuf,
        #[arg(long, default_value_t = 1.543)]
        slope: f64,
        #[arg(long, default_value_t = trisim::analysis::DEFAULT_NORM_FIELD)]
        norm_field: f64,
        /// Outer critical-point fit window in Dz/J1.
        #[arg(long, num_args = 2, default_values_t = [2.0, 6.0])]
        window: Vec<f64>,
        #[arg(long, default_value_t = 9)]
        n_windows: usize,
        #[arg(long, default_value_t = trisim::analysis::sg::DEFAULT_WINDOW)]
        sg_window: usize,
        #[arg(long, default_value_t = trisim::analysis::sg::DEFAULT_ORDER)]
        sg_order: usize,
    },
    /// Control waveforms.
    Protocol {
        #[command(subcommand)]
        action: ProtocolAction,
    },
    /// Summarise a finished scan directory.
    Report,
}

#[derive(Subcommand)]
enum ProtocolAction {
    /// Write the drive waveforms of one scan point as CSV.
    Render {
        /// Scan value; the first configured point when absent.
        #[arg(long)]
        value: Option<f64>,
        /// Sampling step in units of hbar/J1; the configured dt when absent.
        #[arg(long)]
        dt: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out.clone().or_else(|| cfg.and_then(|c| c.out.clone())).unwrap_or_else(|| PathBuf::from("."))
}

fn finish_scan(cli: &Cli, cfg: &ExperimentConfig, out: &Path, snapshots: usize) -> Result<(), CliError> {
    let r = cfg.resolve()?;
    let outcome = scan::run_scan(cfg, &r, out)?;
    eprintln!("{} points computed, {} reused, {} failed", outcome.computed, outcome.reused, outcome.result.failures.len());
    if snapshots > 0 {
        for p in &outcome.result.points {
            let sse = pipeline::sse_config(cfg, &r, pipeline::point_seed(cfg.seed, p.axis_value));
            let dev = r.device.with_drive(r.device.omega, r.delta(cfg, p.axis_value));
            let set = trisim::qmc::snapshots(&r.lattice, &dev, &sse, snapshots)?;
            let mut buf = Vec::new();
            trisim::qmc::write_snapshots(&mut buf, &set)?;
            write_atomic(&out.join("snapshots").join(format!("{}.bin", p.point_hash)), &buf)?;
        }
    }
    scan::write_outputs(cfg, &outcome.result, out, cli.format, cli.svg)?;
    let failures = &outcome.result.failures;
    if let Some(first) = failures.first() {
        return Err(CliError::Points {
            failed: failures.len(),
            total: cfg.scan.values.len(),
            code: first.exit_code,
        });
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    match &cli.command {
        Command::Scan => {
            let cfg = load_config(cli)?;
            finish_scan(cli, &cfg, &out_dir(cli, Some(&cfg)), 0)
        }
        Command::Qmc { snapshots } => {
            let mut cfg = load_config(cli)?;
            cfg.engine = Engine::Qmc;
            finish_scan(cli, &cfg, &out_dir(cli, Some(&cfg)), *snapshots)
        }
        Command::Quench => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, Some(&cfg));
            let r = cfg.resolve()?;
            let res = quench::run_quench(&cfg, &r)?;
            match cli.format {
                Format::Csv => write_atomic(&out.join("quench.csv"), &quench::table_csv(&res)?),
                Format::Json => write_json(&out.join("quench.json"), &res),
            }
        }
        Command::IngestChi { path, slope, norm_field, window, n_windows, sg_window, sg_order } => {
            let opts = ingest::IngestOptions {
                slope: *slope,
                norm_field: *norm_field,
                window: [window[0], window[1]],
                n_windows: *n_windows,
                sg_window: *sg_window,
                sg_order: *sg_order,
            };
            let res = ingest::ingest(path, &opts)?;
            let out = out_dir(cli, None);
            match cli.format {
                Format::Csv => write_atomic(&out.join("chi_ingest.csv"), &ingest::table_csv(&res)?)?,
                Format::Json => write_json(&out.join("chi_ingest.json"), &res)?,
            }
            if let Some(s) = &res.critical_point {
                write_json(&out.join("chi_critical.json"), s)?;
            }
            if cli.svg {
                let svg = output::line_plot_svg(
                    "AC magnetisation",
                    "dz_over_j1",
                    &[output::Series { label: "M_AC", x: &res.dz_over_j1, y: &res.m_ac, err: None }],
                );
                write_atomic(&out.join("chi_ingest.svg"), svg.as_bytes())?;
            }
            Ok(())
        }
        Command::Protocol { action: ProtocolAction::Render { value, dt } } => {
            let cfg = load_config(cli)?;
            let r = cfg.resolve()?;
            let v = value.unwrap_or(cfg.scan.values[0]);
            let p = trisim::protocol::make_adiabatic(
                &r.device,
                r.delta(&cfg, v),
                r.time(cfg.protocol.t_total),
                cfg.protocol.ramp_fraction,
                &r.timing,
            )?;
            let step = dt.or(cfg.protocol.dt).map_or(p.total_time / 1000.0, |d| r.time(d));
            let text = p.render_csv(step);
            write_atomic(&out_dir(cli, Some(&cfg)).join("protocol.csv"), text.as_bytes())
        }
        Command::Report => {
            let out = out_dir(cli, None);
            let text = std::fs::read_to_string(out.join("result.json"))?;
            let res: scan::ScanResult =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("result.json: {e}")))?;
            let mut text = format!("config {}  engine {:?}  seed {}\n", res.config_hash, res.engine, res.seed);
            text += &format!("{:>12} {:>10} {:>10} {:>10} {:>10}\n", "value", "mz", "mz_err", "sq", "sq_err");
            let (x, mz, mz_e) = res.series(config::Observable::Mz);
            let (_, sq, sq_e) = res.series(config::Observable::Sq);
            for k in 0..x.len() {
                text += &format!("{:>12.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n", x[k], mz[k], mz_e[k], sq[k], sq_e[k]);
            }
            for f in &res.failures {
                text += &format!("{:>12.4} failed: {}\n", f.axis_value, f.error);
            }
            if let Ok(c) = std::fs::read_to_string(out.join("critical.json")) {
                text += &format!("critical point: {}\n", c.trim());
            }
            // a closed pipe (e.g. `| head`) is not an error
            let _ = std::io::Write::write_all(&mut std::io::stdout(), text.as_bytes());
            if cli.svg {
                write_atomic(&out.join("scan.svg"), scan::scan_svg(&res).as_bytes())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
