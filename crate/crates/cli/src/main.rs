use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptrack::harness::{self, pipeline, plot, ExperimentConfig};
use adaptrack::simlog::SimLog;
use adaptrack::Error;
use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptrack", version, about = "Saturated adaptive control, then receding-horizon tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run both phases and write logs, report and plots to the output directory.
    Run { config: PathBuf },
    /// Sweep injected parameter error and fit the optimality-gap slope.
    SweepDelta {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.025")]
        deltas: Vec<f64>,
        /// Output CSV; defaults to sweep.csv in the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the cost-to-go coefficients of the true plant over the tracking phase.
    Riccati {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the adaptive phase and report regressor excitation per window.
    PeCheck { config: PathBuf },
    /// Render SVG plots from a saved log.
    Plot {
        log: PathBuf,
        out_dir: PathBuf,
        /// Receding-horizon log to overlay against --oracle.
        #[arg(long, requires = "oracle")]
        mpc: Option<PathBuf>,
        #[arg(long, requires = "mpc")]
        oracle: Option<PathBuf>,
        #[arg(long)]
        u_max: Option<f64>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    Ok(harness::parse_config(path)?)
}

/// Opens `path` for writing; `-` means stdout.
fn output(path: &Path) -> anyhow::Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(io::stdout().lock()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let report = pipeline::run_pipeline(&cfg)?;
            println!("switch at t = {:.4}", report.t_switch);
            println!(
                "parameter error {:.6e} -> {:.6e}",
                report.theta_err_initial, report.theta_err_switch
            );
            match report.pe_level {
                Some(level) => println!("excitation level {level:.6e} (verdict: {})", report.pe_verdict),
                None => println!("adaptive phase too short for an excitation check"),
            }
            if !report.learning_guaranteed {
                println!("warning: regressor not persistently exciting; learned parameters are not guaranteed");
            }
            println!("V_mpc = {:.9e}, V_star = {:.9e}, gap = {:.6e}", report.v_mpc, report.v_star, report.gap);
            println!("wrote {} files to {}", report.artifacts.len(), cfg.output.dir.display());
        }
        Command::SweepDelta { config, deltas, out } => {
            let cfg = load(&config)?;
            let sweep = harness::sweep_delta(&cfg, &deltas)?;
            let path = out.unwrap_or_else(|| cfg.output.dir.join("sweep.csv"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            pipeline::write_sweep_csv(&sweep, &path)?;
            for p in &sweep.points {
                println!("delta = {:<8} gap = {:.6e}", p.delta, p.gap);
            }
            println!("slope = {:.4}", sweep.slope);
        }
        Command::Riccati { config, out } => {
            let cfg = load(&config)?;
            let table = pipeline::riccati_table(&cfg)?;
            let path = out.unwrap_or_else(|| cfg.output.dir.join("riccati.csv"));
            table.write_csv(output(&path)?)?;
        }
        Command::PeCheck { config } => {
            let cfg = load(&config)?;
            let (run, _) = pipeline::adapt(&cfg)?;
            match pipeline::pe_of(&cfg, &run.regressor)? {
                Some(report) => {
                    report.write_csv(io::stdout().lock())?;
                    println!(
                        "# level {:.6e}, alpha {}, persistently exciting: {}",
                        report.level(),
                        report.alpha,
                        report.is_persistently_exciting()
                    );
                }
                None => println!("# adaptive phase shorter than one window; not persistently exciting"),
            }
        }
        Command::Plot { log, out_dir, mpc, oracle, u_max } => {
            let main = SimLog::load(&log)?;
            let pair = match (mpc, oracle) {
                (Some(m), Some(o)) => Some((SimLog::load(&m)?, SimLog::load(&o)?)),
                _ => None,
            };
            let files = plot::emit_plots(&main, pair.as_ref().map(|(m, o)| (m, o)), u_max, &out_dir)?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
