use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qkdsat::calibration::validate_micius;
use qkdsat::optical_link::LinkParams;
use qkdsat::pipeline::{self, SweepAxis, SweepMetric, SweepValue};
use qkdsat::qkd_rate::DecoyParams;
use qkdsat::scenario::load_scenario;
use qkdsat::weather::{CloudGrid, DEFAULT_BANDS, DEFAULT_RESOLUTION_DEG};
use qkdsat::{Error, Result};

const MICIUS_LINK: &str = include_str!("../../data/micius.link");
const MICIUS_DECOY: &str = include_str!("../../data/micius.decoy");

#[derive(Parser)]
#[command(name = "qkdsat", version, about = "Trusted-node satellite QKD constellation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its CSV outputs.
    Run {
        scenario: PathBuf,
        /// Output directory, overriding `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a metric over one constellation parameter.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; `sso` selects the sun-synchronous layout.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_enum, default_value_t = Metric::Access)]
        metric: Metric,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average message size against satellites per plane with crosslinks on.
    Optimum {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, default_value_t = qkdsat::isl::DEFAULT_KNEE_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the single-pass comparison against the Micius reference pass.
    ValidateMicius {
        #[arg(long)]
        link: Option<PathBuf>,
        #[arg(long)]
        decoy: Option<PathBuf>,
    },
    /// Write a synthetic cloud-probability grid.
    GenCloud {
        #[arg(long, value_enum)]
        mode: CloudKind,
        /// Cloud probability for the uniform grid.
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION_DEG)]
        res: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Inclination,
    NSats,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Access,
    Fom,
}

#[derive(Clone, Copy, ValueEnum)]
enum CloudKind {
    Uniform,
    Banded,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::file(p, e))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { scenario, out } => {
            let s = load_scenario(&scenario)?;
            let dir = out.unwrap_or_else(|| s.output_dir.clone());
            let r = pipeline::simulate(&s)?;
            pipeline::write_outputs(&s, &r, &dir)?;
            let executed = r.plan.executed().count();
            println!(
                "{} passes planned, {executed} executed; average message size {:.1} bits; outputs in {}",
                r.plan.entries.len(),
                r.fom.network_average,
                dir.display()
            );
        }
        Command::Sweep {
            scenario,
            axis,
            values,
            metric,
            out,
        } => {
            let s = load_scenario(&scenario)?;
            let values = values.iter().map(|v| v.parse()).collect::<Result<Vec<SweepValue>>>()?;
            let axis = match axis {
                Axis::Inclination => SweepAxis::Inclination,
                Axis::NSats => SweepAxis::NSats,
            };
            let metric = match metric {
                Metric::Access => SweepMetric::Access,
                Metric::Fom => SweepMetric::Fom,
            };
            let rows = pipeline::sweep(&s, axis, &values, metric)?;
            pipeline::write_sweep_csv(sink(out.as_deref())?, axis, metric, &rows)?;
        }
        Command::Optimum {
            scenario,
            values,
            threshold,
            out,
        } => {
            let s = load_scenario(&scenario)?;
            let result = pipeline::optimum_constellation_sweep(&s, &values, threshold)?;
            pipeline::write_size_sweep_csv(sink(out.as_deref())?, &result)?;
            match result.knee {
                Some(n) => eprintln!("knee at {n} satellites per plane"),
                None => eprintln!("no knee within the swept range"),
            }
        }
        Command::ValidateMicius { link, decoy } => {
            let link = match link {
                Some(p) => LinkParams::from_kv_str(&read_text(&p)?, &p.display().to_string())?,
                None => LinkParams::from_kv_str(MICIUS_LINK, "micius.link")?,
            };
            let decoy = match decoy {
                Some(p) => DecoyParams::from_kv_str(&read_text(&p)?, &p.display().to_string())?,
                None => DecoyParams::from_kv_str(MICIUS_DECOY, "micius.decoy")?,
            };
            print!("{}", validate_micius(&link, &decoy)?.table());
        }
        Command::GenCloud { mode, p, res, out } => {
            let grid = match (mode, p) {
                (CloudKind::Uniform, Some(p)) => CloudGrid::uniform(p, res)?,
                (CloudKind::Uniform, None) => return Err(Error::invalid("p", "uniform grids need --p")),
                (CloudKind::Banded, None) => CloudGrid::banded(&DEFAULT_BANDS, res)?,
                (CloudKind::Banded, Some(_)) => return Err(Error::invalid("p", "--p only applies to uniform grids")),
            };
            let file = fs::File::create(&out).map_err(|e| Error::file(&out, e))?;
            grid.write_csv(io::BufWriter::new(file))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
