use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridless_doa::certificate::{certify, CertifyOptions, FilterSpec};
use gridless_doa::estimator::{cross_validate_lambda, CvData, EstimateSettings};
use gridless_doa::geometry::{build_covering, build_design, difference_set, quality_params, ArrayDesign, DesignSpec};
use gridless_doa::harness::{checked_estimate, default_ladder, natural_r, run_experiment, ExperimentConfig, ExperimentId};
use gridless_doa::measurement::{
    add_matrix_noise, forward, sigma_for_snr, simulate_snapshots, CovMatrix, SnapshotConfig, SpikeMeasure,
};
use gridless_doa::trig::{build_gamma, ApproxMode};
use gridless_doa::Error;

#[derive(Parser)]
#[command(name = "gdoa", version, about = "Gridless direction-of-arrival estimation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an array design; optionally emit its difference set and quality parameters.
    Design(DesignArgs),
    /// Simulate a covariance measurement from a spike measure.
    Simulate(SimulateArgs),
    /// Estimate spikes from a covariance measurement.
    Estimate(EstimateArgs),
    /// Run a configured batch experiment.
    Experiment(ExperimentArgs),
    /// Build the plane-wave certificate and check the recovery guarantee.
    Certify(CertifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Circular,
    Ula1d,
    Lattice2d,
    Coprime2d,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Antenna count (circular, ula1d).
    #[arg(long)]
    m: Option<usize>,
    /// Lattice side (lattice2d, coprime2d).
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    extent: Option<f64>,
    /// Comma-separated index set (coprime2d).
    #[arg(long, value_delimiter = ',')]
    index_set: Vec<i64>,
    /// Write the design JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the difference set as `x,y,multiplicity` CSV.
    #[arg(long)]
    emit_diffs: Option<PathBuf>,
    /// Build a covering and report beta, gamma at this radius.
    #[arg(long = "quality-R")]
    quality_r: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    /// Spike measure CSV (`theta_rad,re,im` or `theta_rad,amp`).
    #[arg(long)]
    mu: PathBuf,
    /// Matrix noise at this SNR (dB).
    #[arg(long, conflicts_with_all = ["sigma", "snapshots"])]
    snr_db: Option<f64>,
    /// Matrix noise with this per-entry standard deviation.
    #[arg(long, conflicts_with = "snapshots")]
    sigma: Option<f64>,
    /// Empirical covariance of this many snapshots.
    #[arg(long)]
    snapshots: Option<usize>,
    /// Per-antenna noise standard deviation for snapshots.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; `.bin` selects the binary format, anything else CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Truncated,
    Cesaro,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    design: PathBuf,
    /// Covariance matrix, CSV or `.bin`.
    #[arg(long)]
    b: PathBuf,
    #[arg(long = "L", default_value_t = 20)]
    l: usize,
    /// A positive number or `auto` (discrepancy-principle cross-validation).
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    lambda: String,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long, value_enum, default_value = "truncated")]
    mode: Mode,
    /// Estimator settings JSON (`localization`, `solver`).
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Spike CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solver history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// recovery, snr_sweep, resolution, quality_asymptotics or certify_demo.
    id: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    theta0: f64,
    #[arg(long = "M")]
    big_m: usize,
    #[arg(long)]
    k: u32,
    /// A positive radius or `auto`.
    #[arg(long = "R", default_value = "auto", allow_hyphen_values = true)]
    r: String,
    #[arg(long = "K", default_value_t = 1.0)]
    big_k: f64,
    #[arg(long = "C", default_value_t = 1.0)]
    big_c: f64,
    #[arg(long)]
    e_bar: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Report JSON output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_design(path: &Path) -> Result<ArrayDesign> {
    Ok(ArrayDesign::from_json(&read(path)?)?)
}

fn load_cov(path: &Path) -> Result<CovMatrix> {
    if path.extension().is_some_and(|e| e == "bin") {
        let f = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(CovMatrix::read_binary(std::io::BufReader::new(f))?)
    } else {
        Ok(CovMatrix::from_csv(&read(path)?)?)
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn need<T>(v: Option<T>, name: &'static str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidParameter { name, reason: "required for this kind".into() }.into())
}

fn cmd_design(a: DesignArgs) -> Result<()> {
    let spec = match a.kind {
        Kind::Circular => DesignSpec::Circular { m: need(a.m, "m")?, radius: a.radius.unwrap_or(1.0) },
        Kind::Ula1d => DesignSpec::Ula1d { m: need(a.m, "m")?, extent: a.extent.unwrap_or(1.0) },
        Kind::Lattice2d => DesignSpec::Lattice2d { side: need(a.side, "side")?, extent: a.extent.unwrap_or(1.0) },
        Kind::Coprime2d => DesignSpec::Coprime2d {
            index_set: a.index_set,
            side: need(a.side, "side")?,
            extent: a.extent.unwrap_or(1.0),
        },
    };
    let design = build_design(&spec)?;
    let diffs = difference_set(&design);
    if let Some(p) = &a.out {
        write(p, &design.to_json())?;
    }
    if let Some(p) = &a.emit_diffs {
        let mut s = String::from("x,y,multiplicity\n");
        for (d, n) in diffs.points.iter().zip(&diffs.multiplicities) {
            s.push_str(&format!("{:.17e},{:.17e},{n}\n", d[0], d[1]));
        }
        write(p, &s)?;
    }
    let mut report = serde_json::json!({
        "design": serde_json::from_str::<serde_json::Value>(&design.to_json())?,
        "m": design.m(),
        "lags": diffs.len(),
    });
    if let Some(r) = a.quality_r {
        let cov = build_covering(&design, r)?;
        report["covering_cells"] = cov.cells.len().into();
        report["theta_hat"] = serde_json::to_value(cov.theta_hat)?;
        report["quality"] = serde_json::to_value(quality_params(&cov, r))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let design = load_design(&a.design)?;
    let mu = SpikeMeasure::from_csv(&read(&a.mu)?)?;
    let clean = forward(&design, &mu);
    let (b, sigma) = if let Some(t) = a.snapshots {
        let cfg = SnapshotConfig { t, noise_sigma: a.noise_sigma, seed: a.seed };
        (simulate_snapshots(&design, &mu, &cfg)?, None)
    } else {
        let sigma = match (a.snr_db, a.sigma) {
            (Some(snr), _) => sigma_for_snr(&clean, snr),
            (None, Some(s)) => s,
            (None, None) => 0.0,
        };
        (add_matrix_noise(&clean, sigma, a.seed)?, Some(sigma))
    };
    if a.out.extension().is_some_and(|e| e == "bin") {
        let mut buf = Vec::new();
        b.write_binary(&mut buf)?;
        fs::write(&a.out, buf).with_context(|| format!("writing {}", a.out.display()))?;
    } else {
        write(&a.out, &b.to_csv())?;
    }
    let report = serde_json::json!({
        "m": b.m(),
        "sigma": sigma,
        "clean_frobenius": clean.frobenius(),
        "frobenius": b.frobenius(),
    });
    println!("{report}");
    Ok(())
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let design = load_design(&a.design)?;
    let b = load_cov(&a.b)?;
    let mut settings: EstimateSettings = match &a.settings {
        Some(p) => serde_json::from_str(&read(p)?).map_err(Error::from)?,
        None => EstimateSettings::default(),
    };
    if let Some(g) = a.grid_step {
        settings.localization.grid_step = g;
    }
    let mode = match a.mode {
        Mode::Truncated => ApproxMode::Truncated,
        Mode::Cesaro => ApproxMode::Cesaro,
    };
    let gamma = build_gamma(&design, a.l, mode);
    let lambda = if a.lambda == "auto" {
        let ladder: Vec<f64> = default_ladder().iter().map(|r| r * b.frobenius()).collect();
        cross_validate_lambda(&design, &gamma, CvData::Matrix(&b), &ladder, &settings)?.lambda
    } else {
        match a.lambda.parse::<f64>() {
            Ok(v) if v > 0.0 => v,
            _ => bail!(Error::InvalidParameter { name: "lambda", reason: format!("expected a positive number or `auto`, got `{}`", a.lambda) }),
        }
    };
    let rep = checked_estimate(&design, &gamma, &b, lambda, &settings)?;
    if let Some(p) = &a.history {
        write(p, &rep.dual.history_csv())?;
    }
    match &a.out {
        Some(p) => write(p, &rep.measure.to_csv())?,
        None => print!("{}", rep.measure.to_csv()),
    }
    eprintln!(
        "lambda {lambda:.6e}, {} spikes, {} solver iterations, dual objective {:.9e}",
        rep.measure.len(),
        rep.dual.iterations,
        rep.dual.objective
    );
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let id = ExperimentId::parse(&a.id)?;
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json(&read(p)?)?,
        None => ExperimentConfig::defaults(id),
    };
    if cfg.experiment != id {
        bail!(Error::InvalidParameter {
            name: "experiment",
            reason: format!("config is for `{}`, not `{}`", cfg.experiment.name(), id.name()),
        });
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = run_experiment(cfg, a.out.as_deref())?;
    for f in &out.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_certify(a: CertifyArgs) -> Result<()> {
    let design = load_design(&a.design)?;
    let mu = SpikeMeasure::from_csv(&read(&a.mu)?)?;
    let filter = FilterSpec::new(a.big_m, a.k);
    let cov = build_covering(&design, design.spec.extent())?;
    let r = if a.r == "auto" {
        natural_r(&design.spec, &cov)
    } else {
        match a.r.parse::<f64>() {
            Ok(v) if v > 0.0 => v,
            _ => bail!(Error::InvalidParameter { name: "R", reason: format!("expected a positive number or `auto`, got `{}`", a.r) }),
        }
    };
    let opts = CertifyOptions { big_k: a.big_k, big_c: a.big_c, e_bar: a.e_bar, rho: a.rho, ..Default::default() };
    let report = certify(&cov, Some(r), &mu, a.theta0, &filter, &opts)?;
    let body = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => write(p, &body)?,
        None => println!("{body}"),
    }
    let g = &report.guarantee;
    eprintln!(
        "{}: certificate bound {:.4}, measurement lhs {:.4} vs threshold {:.4}",
        if g.pass { "guarantee" } else { "no guarantee" },
        report.certificate.bound,
        g.measurement_lhs,
        g.threshold
    );
    Ok(())
}

/// Context chain down to the first library error, whose own message
/// already includes its stage labels.
fn message(e: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for c in e.chain() {
        parts.push(c.to_string());
        if c.is::<Error>() {
            break;
        }
    }
    parts.join(": ")
}

/// 3 for solver non-convergence, 2 for bad input, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return if e.chain().any(|c| c.is::<std::io::Error>()) { 2 } else { 1 };
    };
    match err.root() {
        Error::NotConverged { .. } | Error::QuadratureNotConverged(_) => 3,
        Error::InvalidParameter { .. }
        | Error::InvalidIndexSet { .. }
        | Error::TooFewAntennas { .. }
        | Error::OddMUnsupported(_)
        | Error::MTooSmall(_)
        | Error::DimensionMismatch { .. }
        | Error::Theta0NotInSupport(_)
        | Error::NegativeAmplitude(_)
        | Error::EmptyLadder
        | Error::Parse(_)
        | Error::Json(_)
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Design(a) => cmd_design(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Certify(a) => cmd_certify(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
