use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::svg::{render, Panel, Series, SeriesKind};
use super::{family_design, par_map, ExperimentConfig, LambdaSpec, NoiseSpec, RadiusSpec, SpikeSpec};
use crate::certificate::{autocorr, certify, natural_radius, CertifyReport};
use crate::error::{Error, Result};
use crate::estimator::{
    cross_validate_lambda, estimate_from_dual, solve_dual, solve_discretized, CvData, EstimateReport, EstimateSettings,
};
use crate::geometry::{asymptotic_fit, build_covering, build_design, quality_params, ArrayDesign, DesignSpec, SlopeFit};
use crate::measurement::{add_matrix_noise, forward, sigma_for_snr, CovMatrix, SpikeMeasure};
use crate::special::angle_dist;
use crate::trig::{build_gamma, GammaTensor};

pub(crate) struct Writer {
    dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path) -> Self {
        Writer {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, body)?;
        self.files.push(p);
        Ok(())
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(std::io::Error::other)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.text(name, &String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn svg(&mut self, name: &str, panels: &[Panel]) -> Result<()> {
        self.text(name, &render(panels, 420.0, 320.0))
    }
}

fn settings(cfg: &ExperimentConfig) -> EstimateSettings {
    EstimateSettings {
        localization: cfg.solver.localization.clone().unwrap_or_default(),
        solver: cfg.solver.sdp.clone(),
    }
}

/// [`estimate_with_gamma`](crate::estimator::estimate_with_gamma) with an unconverged solve turned into an error.
pub fn checked_estimate(
    design: &ArrayDesign,
    gamma: &GammaTensor,
    b: &CovMatrix,
    lambda: f64,
    settings: &EstimateSettings,
) -> Result<EstimateReport> {
    settings.localization.validate().map_err(|e| e.at("settings"))?;
    if design.m() != b.m() || gamma.m != b.m() {
        return Err(Error::DimensionMismatch {
            expected: design.m(),
            got: b.m(),
        }
        .at("input"));
    }
    let dual = solve_dual(gamma, b, lambda, settings)?;
    if !dual.converged() {
        return Err(Error::NotConverged { iters: dual.iterations }.at("sdp"));
    }
    estimate_from_dual(design, gamma, b, dual, settings)
}

fn lambda_for(
    cfg: &ExperimentConfig,
    design: &ArrayDesign,
    gamma: &GammaTensor,
    b: &CovMatrix,
    sigma: Option<f64>,
) -> Result<f64> {
    Ok(match cfg.solver.lambda.expect("resolved") {
        LambdaSpec::Value(v) => v,
        LambdaSpec::Relative { relative } => relative * b.frobenius(),
        LambdaSpec::NoiseMultiple { noise_multiple } => {
            noise_multiple * sigma.ok_or_else(|| Error::invalid("lambda", "noise_multiple needs a noise level"))? * b.m() as f64
        }
        LambdaSpec::Keyword(_) => {
            let ladder: Vec<f64> = cfg.solver.lambda_ladder.iter().map(|r| r * b.frobenius()).collect();
            cross_validate_lambda(design, gamma, CvData::Matrix(b), &ladder, &settings(cfg))?.lambda
        }
    })
}

fn truth(spec: &SpikeSpec) -> Result<SpikeMeasure> {
    match spec {
        SpikeSpec::Equispaced {
            count,
            offset,
            amplitude,
        } => {
            let thetas: Vec<f64> = (0..*count).map(|k| offset + 2.0 * PI * k as f64 / *count as f64).collect();
            SpikeMeasure::from_real(&thetas, &vec![*amplitude; *count])
        }
        SpikeSpec::Explicit { thetas, amplitudes } => SpikeMeasure::from_real(thetas, amplitudes),
        _ => Err(Error::invalid("spikes", "expected a fixed spike configuration")),
    }
    .map(SpikeMeasure::sorted)
}

/// For each true spike, the index of the largest estimated spike closer to
/// it than to any other true spike.
fn match_to_truth(truth: &SpikeMeasure, est: &SpikeMeasure) -> Vec<Option<usize>> {
    let owner = |th: f64| {
        (0..truth.len())
            .min_by(|&a, &b| angle_dist(th, truth.spikes[a].theta).total_cmp(&angle_dist(th, truth.spikes[b].theta)))
            .unwrap()
    };
    let mut best: Vec<Option<usize>> = vec![None; truth.len()];
    for (j, s) in est.spikes.iter().enumerate() {
        let o = owner(s.theta);
        if best[o].is_none_or(|k| est.spikes[k].amp.norm() < s.amp.norm()) {
            best[o] = Some(j);
        }
    }
    best
}

fn est_rows(method: &str, truth: &SpikeMeasure, est: &SpikeMeasure) -> Vec<RecoveryRow> {
    est.spikes
        .iter()
        .map(|s| {
            let nearest = truth
                .spikes
                .iter()
                .map(|t| t.theta)
                .min_by(|a, b| angle_dist(s.theta, *a).total_cmp(&angle_dist(s.theta, *b)))
                .unwrap_or(f64::NAN);
            RecoveryRow {
                method: method.into(),
                theta_rad: s.theta,
                amplitude_re: s.amp.re,
                amplitude_im: s.amp.im,
                nearest_true_theta_rad: nearest,
                abs_error_rad: angle_dist(s.theta, nearest),
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoveryRow {
    pub method: String,
    pub theta_rad: f64,
    pub amplitude_re: f64,
    pub amplitude_im: f64,
    pub nearest_true_theta_rad: f64,
    pub abs_error_rad: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TruthMatch {
    pub true_theta_rad: f64,
    pub true_amplitude: f64,
    pub gridless_theta_rad: Option<f64>,
    pub gridless_amplitude: Option<f64>,
    pub gridless_error_rad: Option<f64>,
    pub discretized_theta_rad: Option<f64>,
    pub discretized_amplitude: Option<f64>,
    pub discretized_error_rad: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoverySummary {
    pub lambda: f64,
    pub discretized_n: usize,
    pub gridless_count: usize,
    /// Nonzero atoms of the discretized solution, leakage included.
    pub discretized_count: usize,
    pub matches: Vec<TruthMatch>,
    pub solver_iterations: usize,
}

pub(crate) fn run_recovery(cfg: &ExperimentConfig, w: &mut Writer) -> Result<RecoverySummary> {
    let design = build_design(cfg.design.as_ref().unwrap())?;
    let mu = truth(cfg.spikes.as_ref().unwrap())?;
    let gamma = build_gamma(&design, cfg.solver.l, cfg.solver.mode);
    let b = forward(&design, &mu);
    let lambda = lambda_for(cfg, &design, &gamma, &b, None)?;
    let rep = checked_estimate(&design, &gamma, &b, lambda, &settings(cfg))?;
    let disc = solve_discretized(&design, &b, cfg.solver.discretized_n, lambda, cfg.solver.discretized_mode)
        .map_err(|e| e.at("discretized"))?;
    let (mg, md) = (match_to_truth(&mu, &rep.measure), match_to_truth(&mu, &disc));
    let pick = |est: &SpikeMeasure, j: Option<usize>, th: f64| match j {
        Some(j) => (
            Some(est.spikes[j].theta),
            Some(est.spikes[j].amp.norm()),
            Some(angle_dist(est.spikes[j].theta, th)),
        ),
        None => (None, None, None),
    };
    let matches: Vec<TruthMatch> = mu
        .spikes
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let g = pick(&rep.measure, mg[i], t.theta);
            let d = pick(&disc, md[i], t.theta);
            TruthMatch {
                true_theta_rad: t.theta,
                true_amplitude: t.amp.re,
                gridless_theta_rad: g.0,
                gridless_amplitude: g.1,
                gridless_error_rad: g.2,
                discretized_theta_rad: d.0,
                discretized_amplitude: d.1,
                discretized_error_rad: d.2,
            }
        })
        .collect();
    let mut rows = est_rows("truth", &mu, &mu);
    rows.extend(est_rows("gridless", &mu, &rep.measure));
    rows.extend(est_rows("discretized", &mu, &disc));
    w.csv("recovery.csv", &rows)?;
    let stems = |m: &SpikeMeasure| m.spikes.iter().map(|s| (s.theta.to_degrees(), s.amp.norm())).collect::<Vec<_>>();
    let panel = Panel::new("Noiseless recovery", "angle (deg)", "amplitude")
        .push(Series::new("truth", SeriesKind::Markers, stems(&mu)))
        .push(Series::new("gridless", SeriesKind::Stem, stems(&rep.measure)))
        .push(Series::new(format!("grid N={}", cfg.solver.discretized_n), SeriesKind::Stem, stems(&disc)));
    w.svg("recovery.svg", &[panel])?;
    Ok(RecoverySummary {
        lambda,
        discretized_n: cfg.solver.discretized_n,
        gridless_count: rep.measure.len(),
        discretized_count: disc.len(),
        matches,
        solver_iterations: rep.dual.iterations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SnrTrialRow {
    pub snr_db: f64,
    pub trial: usize,
    pub noise_seed: u64,
    pub sigma: f64,
    pub lambda: f64,
    pub true_theta_rad: f64,
    /// Largest recovered spike; empty when nothing survived.
    pub est_theta_rad: Option<f64>,
    pub abs_error_rad: f64,
    pub spikes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub sigma_mean: f64,
    pub mean_abs_error_rad: f64,
    pub stderr_rad: f64,
    pub max_abs_error_rad: f64,
    /// Paired mean change from the previous rung and its standard error.
    pub change_from_previous_rad: Option<f64>,
    pub change_stderr_rad: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SnrSummary {
    pub trials: usize,
    pub points: Vec<SnrPoint>,
    /// No rung exceeds its predecessor by more than one standard error of
    /// the paired difference.
    pub non_increasing_within_se: bool,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn run_snr_sweep(cfg: &ExperimentConfig, w: &mut Writer) -> Result<SnrSummary> {
    let design = build_design(cfg.design.as_ref().unwrap())?;
    let Some(SpikeSpec::RandomSingle { amplitude }) = cfg.spikes.clone() else {
        unreachable!("validated")
    };
    let Some(NoiseSpec::Matrix { snr_db }) = cfg.noise.clone() else {
        unreachable!("validated")
    };
    let trials = cfg.trials.unwrap();
    let gamma = build_gamma(&design, cfg.solver.l, cfg.solver.mode);
    let st = settings(cfg);
    // One angle per trial, shared across the ladder.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let thetas: Vec<f64> = (0..trials).map(|_| PI - rng.random_range(0.0..2.0 * PI)).collect();
    let tasks: Vec<(usize, usize)> = (0..snr_db.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let rows = par_map(&tasks, |&(i, t)| -> Result<SnrTrialRow> {
        let th = thetas[t];
        let mu = SpikeMeasure::from_real(&[th], &[amplitude])?;
        let b0 = forward(&design, &mu);
        let sigma = sigma_for_snr(&b0, snr_db[i]);
        let noise_seed = splitmix(splitmix(cfg.seed ^ ((i as u64) << 32)) ^ t as u64);
        let b = add_matrix_noise(&b0, sigma, noise_seed)?;
        let lambda = lambda_for(cfg, &design, &gamma, &b, Some(sigma))?;
        let est = match checked_estimate(&design, &gamma, &b, lambda, &st) {
            Ok(r) => r.measure,
            Err(e) if matches!(e.root(), Error::EmptySupport) => SpikeMeasure::default(),
            Err(e) => return Err(e),
        };
        let top = est.spikes.iter().max_by(|a, b| a.amp.norm().total_cmp(&b.amp.norm())).map(|s| s.theta);
        Ok(SnrTrialRow {
            snr_db: snr_db[i],
            trial: t,
            noise_seed,
            sigma,
            lambda,
            true_theta_rad: th,
            est_theta_rad: top,
            abs_error_rad: top.map_or(PI, |e| angle_dist(e, th)),
            spikes: est.len(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    w.csv("snr_trials.csv", &rows)?;
    let errs: Vec<Vec<f64>> = (0..snr_db.len())
        .map(|i| rows[i * trials..(i + 1) * trials].iter().map(|r| r.abs_error_rad).collect())
        .collect();
    let mut points = Vec::new();
    let mut monotone = true;
    for (i, e) in errs.iter().enumerate() {
        let (mean, se) = mean_se(e);
        let sig = rows[i * trials..(i + 1) * trials].iter().map(|r| r.sigma).sum::<f64>() / trials as f64;
        let (change, change_se) = if i > 0 {
            let d: Vec<f64> = e.iter().zip(&errs[i - 1]).map(|(a, b)| a - b).collect();
            let (dm, dse) = mean_se(&d);
            monotone &= dm <= dse;
            (Some(dm), Some(dse))
        } else {
            (None, None)
        };
        points.push(SnrPoint {
            snr_db: snr_db[i],
            sigma_mean: sig,
            mean_abs_error_rad: mean,
            stderr_rad: se,
            max_abs_error_rad: e.iter().cloned().fold(0.0, f64::max),
            change_from_previous_rad: change,
            change_stderr_rad: change_se,
        });
    }
    w.csv("snr_summary.csv", &points)?;
    let panel = Panel::new(format!("Single spike, {trials} trials"), "SNR (dB)", "mean abs deviation (deg)").push(
        Series::new(
            "gridless",
            SeriesKind::ErrorBars,
            points.iter().map(|p| (p.snr_db, p.mean_abs_error_rad.to_degrees())).collect(),
        )
        .with_errors(points.iter().map(|p| p.stderr_rad.to_degrees()).collect()),
    );
    w.svg("snr_sweep.svg", &[panel])?;
    Ok(SnrSummary {
        trials,
        points,
        non_increasing_within_se: monotone,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolutionRow {
    pub divisor: f64,
    pub separation_rad: f64,
    pub spike: usize,
    pub theta_rad: f64,
    pub amplitude_re: f64,
    pub amplitude_im: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolutionPanel {
    pub divisor: f64,
    pub separation_rad: f64,
    pub lambda: f64,
    pub truth_rad: [f64; 2],
    pub thetas_rad: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Per true spike, distance to the nearest recovered spike.
    pub nearest_error_rad: [f64; 2],
    /// A single spike strictly between the two truths.
    pub merged_between: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolutionSummary {
    pub m: usize,
    /// `pi / (2 m)` in degrees.
    pub half_resolution_deg: f64,
    pub panels: Vec<ResolutionPanel>,
}

pub(crate) fn run_resolution(cfg: &ExperimentConfig, w: &mut Writer) -> Result<ResolutionSummary> {
    let design = build_design(cfg.design.as_ref().unwrap())?;
    let Some(SpikeSpec::Pair {
        divisors,
        anchor,
        amplitude,
    }) = cfg.spikes.clone()
    else {
        unreachable!("validated")
    };
    let m = design.m();
    let gamma = build_gamma(&design, cfg.solver.l, cfg.solver.mode);
    let st = settings(cfg);
    let panels = par_map(&divisors, |&div| -> Result<ResolutionPanel> {
        let sep = PI / (div * m as f64);
        let mu = SpikeMeasure::from_real(&[anchor, anchor + sep], &[amplitude, amplitude])?;
        let b = forward(&design, &mu);
        let lambda = lambda_for(cfg, &design, &gamma, &b, None)?;
        let est = checked_estimate(&design, &gamma, &b, lambda, &st)?.measure;
        let truth = [mu.spikes[0].theta, mu.spikes[1].theta];
        let near = |t: f64| est.spikes.iter().map(|s| angle_dist(s.theta, t)).fold(f64::INFINITY, f64::min);
        let merged_between = est.len() == 1 && {
            let th = est.spikes[0].theta;
            let gap = angle_dist(truth[0], truth[1]);
            angle_dist(th, truth[0]) < gap && angle_dist(th, truth[1]) < gap
        };
        Ok(ResolutionPanel {
            divisor: div,
            separation_rad: sep,
            lambda,
            truth_rad: truth,
            thetas_rad: est.spikes.iter().map(|s| s.theta).collect(),
            amplitudes: est.spikes.iter().map(|s| s.amp.norm()).collect(),
            nearest_error_rad: [near(truth[0]), near(truth[1])],
            merged_between,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ResolutionRow> = panels
        .iter()
        .flat_map(|p| {
            p.thetas_rad.iter().zip(&p.amplitudes).enumerate().map(|(k, (t, a))| ResolutionRow {
                divisor: p.divisor,
                separation_rad: p.separation_rad,
                spike: k,
                theta_rad: *t,
                amplitude_re: *a,
                amplitude_im: 0.0,
            })
        })
        .collect();
    w.csv("resolution.csv", &rows)?;
    let figs: Vec<Panel> = panels
        .iter()
        .map(|p| {
            let rel = |t: f64| crate::special::wrap_angle(t - anchor).to_degrees();
            Panel::new(format!("sep = pi/({} m) = {:.2} deg", p.divisor, p.separation_rad.to_degrees()), "angle - anchor (deg)", "amplitude")
                .push(Series::new("truth", SeriesKind::Markers, p.truth_rad.iter().map(|t| (rel(*t), amplitude)).collect()))
                .push(Series::new(
                    "estimate",
                    SeriesKind::Stem,
                    p.thetas_rad.iter().zip(&p.amplitudes).map(|(t, a)| (rel(*t), *a)).collect(),
                ))
        })
        .collect();
    w.svg("resolution.svg", &figs)?;
    Ok(ResolutionSummary {
        m,
        half_resolution_deg: (PI / (2.0 * m as f64)).to_degrees(),
        panels,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct QualityRow {
    pub family: String,
    pub m: usize,
    #[serde(rename = "R")]
    pub r: f64,
    pub beta: f64,
    pub gamma: f64,
    pub beta_halfwidth: f64,
    pub gamma_halfwidth: f64,
    pub theta_hat: Option<f64>,
    pub cells: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct QualityFitRow {
    pub family: String,
    pub parameter: String,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct QualitySummary {
    pub rows: Vec<QualityRow>,
    pub fits: Vec<QualityFitRow>,
    pub circular_theta_hat_min: Option<f64>,
}

impl QualitySummary {
    pub fn gamma_slope(&self, family: &str) -> Option<&QualityFitRow> {
        self.fits.iter().find(|f| f.family == family && f.parameter == "gamma")
    }
}

/// Radius used for quality parameters: the extent for ULAs, [`natural_radius`] otherwise.
pub fn natural_r(design: &DesignSpec, cov: &crate::geometry::Covering) -> f64 {
    match design {
        DesignSpec::Ula1d { extent, .. } => *extent,
        _ => natural_radius(cov),
    }
}

pub(crate) fn run_quality_asymptotics(cfg: &ExperimentConfig, w: &mut Writer) -> Result<QualitySummary> {
    let fams = &cfg.quality.as_ref().unwrap().families;
    let tasks: Vec<(usize, usize)> = fams.iter().enumerate().flat_map(|(i, f)| f.m.iter().map(move |&m| (i, m))).collect();
    let rows = par_map(&tasks, |&(i, m)| -> Result<QualityRow> {
        let f = &fams[i];
        let spec = family_design(f, m)?;
        let design = build_design(&spec)?;
        let cov = build_covering(&design, f.extent)?;
        let r = natural_r(&spec, &cov);
        let q = quality_params(&cov, r);
        Ok(QualityRow {
            family: f.kind.clone(),
            m: design.m(),
            r,
            beta: q.beta,
            gamma: q.gamma,
            beta_halfwidth: q.beta_halfwidth,
            gamma_halfwidth: q.gamma_halfwidth,
            theta_hat: cov.theta_hat,
            cells: cov.cells.len(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut fits = Vec::new();
    let mut panels = Vec::new();
    for f in fams {
        let mine: Vec<&QualityRow> = rows.iter().filter(|r| r.family == f.kind).collect();
        let mut panel = Panel::new(format!("{} (R natural)", f.kind), "m", "value");
        panel.log_x = true;
        panel.log_y = true;
        for (name, get) in [("gamma", (|r: &QualityRow| r.gamma) as fn(&QualityRow) -> f64), ("beta", |r: &QualityRow| r.beta)] {
            let pairs: Vec<(f64, f64)> = mine.iter().map(|r| (r.m as f64, get(r))).collect();
            let fit: SlopeFit = asymptotic_fit(&pairs).map_err(|e| e.at("fit"))?;
            fits.push(QualityFitRow {
                family: f.kind.clone(),
                parameter: name.into(),
                slope: fit.slope,
                slope_stderr: fit.stderr,
                intercept: fit.intercept,
            });
            panel = panel.push(Series::new(format!("{name} slope {:.2}", fit.slope), SeriesKind::Line, pairs));
        }
        panels.push(panel);
    }
    w.csv("quality.csv", &rows)?;
    w.csv("quality_fits.csv", &fits)?;
    w.svg("quality.svg", &panels)?;
    let circular_theta_hat_min = rows
        .iter()
        .filter(|r| r.family == "circular")
        .filter_map(|r| r.theta_hat)
        .reduce(f64::min);
    Ok(QualitySummary {
        rows,
        fits,
        circular_theta_hat_min,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifyDemoSummary {
    pub report: CertifyReport,
    pub lambda: f64,
    pub estimate_thetas_rad: Vec<f64>,
    pub estimate_amplitudes: Vec<f64>,
    /// `max |a(angle(theta_*, theta0))|` over the recovered support.
    pub achieved_level: f64,
    /// Noisy level when noise inputs were given, else the noiseless one;
    /// absent when the hypothesis fails.
    pub guarantee_level: Option<f64>,
    /// `guarantee` or `no guarantee`.
    pub status: String,
    pub consistent: Option<bool>,
}

pub(crate) fn run_certify_demo(cfg: &ExperimentConfig, w: &mut Writer) -> Result<CertifyDemoSummary> {
    let spec = cfg.design.as_ref().unwrap();
    let design = build_design(spec)?;
    let mu = truth(cfg.spikes.as_ref().unwrap())?;
    let c = cfg.certify.as_ref().unwrap();
    let cov = build_covering(&design, spec.extent())?;
    let r = match c.r {
        RadiusSpec::Value(v) => Some(v),
        RadiusSpec::Keyword(_) => Some(natural_r(spec, &cov)),
    };
    let report = certify(&cov, r, &mu, c.theta0, &c.filter, &c.options).map_err(|e| e.at("certify"))?;
    let gamma = build_gamma(&design, cfg.solver.l, cfg.solver.mode);
    let b = forward(&design, &mu);
    let lambda = lambda_for(cfg, &design, &gamma, &b, None)?;
    let est = checked_estimate(&design, &gamma, &b, lambda, &settings(cfg))?.measure;
    let ac = autocorr(&c.filter)?;
    let theta0 = report.certificate.theta0;
    let achieved_level = est
        .spikes
        .iter()
        .map(|s| ac.eval(angle_dist(s.theta, theta0)).abs())
        .fold(0.0, f64::max);
    let g = &report.guarantee;
    let guarantee_level = if g.pass { g.noisy_level.or(g.level) } else { None };
    let summary = CertifyDemoSummary {
        lambda,
        estimate_thetas_rad: est.spikes.iter().map(|s| s.theta).collect(),
        estimate_amplitudes: est.spikes.iter().map(|s| s.amp.norm()).collect(),
        achieved_level,
        guarantee_level,
        status: if g.pass { "guarantee" } else { "no guarantee" }.into(),
        consistent: guarantee_level.map(|l| achieved_level >= l),
        report,
    };
    w.text("certify_report.json", &serde_json::to_string_pretty(&summary.report)?)?;
    w.text("estimate.csv", &est.to_csv())?;
    Ok(summary)
}
