//! Seeded batch experiments driven by a JSON config, writing CSV tables, SVG
//! plots, the resolved config and a `summary.json` into an output directory.

mod experiments;
pub mod svg;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certificate::{CertifyOptions, FilterSpec};
use crate::error::{Error, Result};
use crate::estimator::{DiscretizedMode, LocalizationSettings};
use crate::geometry::DesignSpec;
use crate::sdp::SolverSettings;
use crate::trig::ApproxMode;

pub use experiments::{
    checked_estimate, natural_r,
    CertifyDemoSummary, QualityFitRow, QualityRow, QualitySummary, RecoveryRow, RecoverySummary, ResolutionPanel,
    ResolutionSummary, SnrPoint, SnrSummary,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Recovery,
    SnrSweep,
    Resolution,
    QualityAsymptotics,
    CertifyDemo,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Recovery => "recovery",
            ExperimentId::SnrSweep => "snr_sweep",
            ExperimentId::Resolution => "resolution",
            ExperimentId::QualityAsymptotics => "quality_asymptotics",
            ExperimentId::CertifyDemo => "certify_demo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::invalid("experiment", format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpikeSpec {
    /// `count` spikes at `offset + 2 pi k / count`.
    Equispaced {
        count: usize,
        offset: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Explicit { thetas: Vec<f64>, amplitudes: Vec<f64> },
    /// One spike at a uniform angle drawn per trial.
    RandomSingle {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Two spikes at `anchor` and `anchor + pi / (divisor m)`, one panel per
    /// divisor.
    Pair {
        divisors: Vec<f64>,
        #[serde(default)]
        anchor: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    /// Hermitian matrix noise at each SNR of the ladder.
    Matrix { snr_db: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaKeyword {
    Auto,
}

/// Regularization weight: a number, `"auto"` (cross-validated over
/// `lambda_ladder` times `||b||_F`), `{"relative": r}` for `r ||b||_F`, or
/// `{"noise_multiple": k}` for `k sigma m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    Keyword(LambdaKeyword),
    Relative {
        relative: f64,
    },
    NoiseMultiple {
        noise_multiple: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(rename = "L", default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub lambda: Option<LambdaSpec>,
    /// Overrides `localization.grid_step`.
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default)]
    pub mode: ApproxMode,
    #[serde(default)]
    pub sdp: SolverSettings,
    #[serde(default)]
    pub localization: Option<LocalizationSettings>,
    /// Relative rungs for `"auto"`.
    #[serde(default = "default_ladder")]
    pub lambda_ladder: Vec<f64>,
    #[serde(default = "default_n")]
    pub discretized_n: usize,
    #[serde(default = "default_disc_mode")]
    pub discretized_mode: DiscretizedMode,
}

fn default_l() -> usize {
    20
}

fn default_n() -> usize {
    100
}

fn default_disc_mode() -> DiscretizedMode {
    DiscretizedMode::Equality
}

pub fn default_ladder() -> Vec<f64> {
    vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            l: default_l(),
            lambda: None,
            grid_step: None,
            mode: ApproxMode::default(),
            sdp: SolverSettings::default(),
            localization: None,
            lambda_ladder: default_ladder(),
            discretized_n: default_n(),
            discretized_mode: default_disc_mode(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityFamily {
    /// `circular`, `lattice2d` (m must be a perfect square) or `ula1d`.
    pub kind: String,
    pub m: Vec<usize>,
    #[serde(default = "one")]
    pub extent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualitySpec {
    pub families: Vec<QualityFamily>,
}

impl Default for QualitySpec {
    fn default() -> Self {
        QualitySpec {
            families: vec![
                QualityFamily {
                    kind: "circular".into(),
                    m: vec![8, 16, 32, 64],
                    extent: 1.0,
                },
                QualityFamily {
                    kind: "lattice2d".into(),
                    m: vec![16, 64, 256, 1024],
                    extent: 1.0,
                },
                QualityFamily {
                    kind: "ula1d".into(),
                    m: vec![8, 16, 32, 64],
                    extent: 1.0,
                },
            ],
        }
    }
}

/// Covering radius `R`: a number or `"auto"` for the family's natural
/// radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Value(f64),
    Keyword(LambdaKeyword),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    pub theta0: f64,
    pub filter: FilterSpec,
    #[serde(rename = "R", default = "auto_radius")]
    pub r: RadiusSpec,
    #[serde(default)]
    pub options: CertifyOptions,
}

fn auto_radius() -> RadiusSpec {
    RadiusSpec::Keyword(LambdaKeyword::Auto)
}

impl Default for CertifySpec {
    fn default() -> Self {
        CertifySpec {
            theta0: 0.3,
            filter: FilterSpec::new(3, 7),
            r: auto_radius(),
            options: CertifyOptions::default(),
        }
    }
}

/// Experiment configuration. Unset sections take the experiment's defaults
/// in [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub experiment: ExperimentId,
    #[serde(default)]
    pub design: Option<DesignSpec>,
    #[serde(default)]
    pub spikes: Option<SpikeSpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub quality: Option<QualitySpec>,
    #[serde(default)]
    pub certify: Option<CertifySpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        if c.schema != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema",
                format!("unsupported schema {} (expected {SCHEMA_VERSION})", c.schema),
            ));
        }
        Ok(c)
    }

    /// The default configuration of an experiment, already resolved.
    pub fn defaults(id: ExperimentId) -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            experiment: id,
            design: None,
            spikes: None,
            noise: None,
            solver: SolverSpec::default(),
            trials: None,
            seed: 0,
            out_dir: None,
            quality: None,
            certify: None,
        }
        .resolve()
        .expect("built-in defaults validate")
    }

    /// Fill unset sections with the experiment's defaults and validate.
    pub fn resolve(mut self) -> Result<Self> {
        use ExperimentId::*;
        let id = self.experiment;
        let circ17 = DesignSpec::Circular { m: 17, radius: 1.0 };
        self.design.get_or_insert(match id {
            CertifyDemo => DesignSpec::Circular { m: 256, radius: 0.85 },
            _ => circ17,
        });
        if id != QualityAsymptotics {
            self.spikes.get_or_insert(match id {
                Recovery => SpikeSpec::Equispaced {
                    count: 5,
                    offset: 0.1,
                    amplitude: 1.0,
                },
                SnrSweep => SpikeSpec::RandomSingle { amplitude: 1.0 },
                Resolution => SpikeSpec::Pair {
                    divisors: vec![1.0, 2.0, 4.0],
                    anchor: 0.0,
                    amplitude: 1.0,
                },
                _ => SpikeSpec::Explicit {
                    thetas: vec![0.3, 0.3 + 2.0 * PI / 3.0],
                    amplitudes: vec![0.7, 0.3],
                },
            });
        }
        self.noise.get_or_insert(match id {
            SnrSweep => NoiseSpec::Matrix {
                snr_db: (0..=6).map(|k| 5.0 * k as f64).collect(),
            },
            _ => NoiseSpec::None,
        });
        self.solver.lambda.get_or_insert(match id {
            SnrSweep => LambdaSpec::NoiseMultiple { noise_multiple: 8.0 },
            _ => LambdaSpec::Relative { relative: 1e-2 },
        });
        let loc = self.solver.localization.get_or_insert_with(|| match id {
            Resolution => LocalizationSettings {
                tau: 1e-7,
                cluster_gap: 0.01,
                ..Default::default()
            },
            _ => LocalizationSettings::default(),
        });
        if let Some(g) = self.solver.grid_step {
            loc.grid_step = g;
        }
        self.solver.grid_step = Some(loc.grid_step);
        self.trials.get_or_insert(match id {
            SnrSweep => 50,
            _ => 1,
        });
        if id == QualityAsymptotics {
            self.quality.get_or_insert_with(QualitySpec::default);
        }
        if id == CertifyDemo {
            self.certify.get_or_insert_with(CertifySpec::default);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        use ExperimentId::*;
        let id = self.experiment;
        let trials = self.trials.unwrap_or(1);
        if trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if id == SnrSweep && trials < 20 {
            return Err(Error::invalid("trials", "snr_sweep needs at least 20 trials"));
        }
        if let Some(d) = &self.design {
            crate::geometry::build_design(d)?;
        }
        if self.solver.l == 0 {
            return Err(Error::invalid("L", "must be positive"));
        }
        if self.solver.discretized_n < 2 {
            return Err(Error::invalid("discretized_n", "need at least 2 grid points"));
        }
        self.solver.sdp.validate()?;
        if let Some(loc) = &self.solver.localization {
            loc.validate()?;
        }
        match self.solver.lambda {
            Some(LambdaSpec::Value(v)) if !(v > 0.0 && v.is_finite()) => {
                return Err(Error::invalid("lambda", "must be positive"));
            }
            Some(LambdaSpec::Relative { relative: v }) | Some(LambdaSpec::NoiseMultiple { noise_multiple: v })
                if !(v > 0.0 && v.is_finite()) =>
            {
                return Err(Error::invalid("lambda", "must be positive"));
            }
            Some(LambdaSpec::NoiseMultiple { .. }) if !matches!(self.noise, Some(NoiseSpec::Matrix { .. })) => {
                return Err(Error::invalid("lambda", "noise_multiple needs matrix noise"));
            }
            Some(LambdaSpec::Keyword(_)) if self.solver.lambda_ladder.iter().any(|r| !(*r > 0.0)) || self.solver.lambda_ladder.is_empty() => {
                return Err(Error::invalid("lambda_ladder", "needs positive rungs"));
            }
            _ => {}
        }
        let noise_ok = match (&self.noise, id) {
            (Some(NoiseSpec::Matrix { snr_db }), SnrSweep) => !snr_db.is_empty() && snr_db.iter().all(|s| s.is_finite()),
            (Some(NoiseSpec::Matrix { .. }), _) => false,
            (Some(NoiseSpec::None), SnrSweep) => false,
            _ => true,
        };
        if !noise_ok {
            return Err(Error::invalid(
                "noise",
                format!("{} needs {}", id.name(), if id == SnrSweep { "a non-empty matrix SNR ladder" } else { "noiseless data" }),
            ));
        }
        let spikes_ok = match (&self.spikes, id) {
            (None, QualityAsymptotics) => true,
            (Some(_), QualityAsymptotics) => false,
            (Some(SpikeSpec::RandomSingle { .. }), SnrSweep) => true,
            (Some(_), SnrSweep) => false,
            (Some(SpikeSpec::Pair { divisors, .. }), Resolution) => !divisors.is_empty() && divisors.iter().all(|d| *d > 0.0),
            (Some(_), Resolution) => false,
            (Some(SpikeSpec::Equispaced { count, .. }), _) => *count >= 1,
            (Some(SpikeSpec::Explicit { thetas, amplitudes }), _) => thetas.len() == amplitudes.len() && !thetas.is_empty(),
            _ => false,
        };
        if !spikes_ok {
            return Err(Error::invalid("spikes", format!("unsupported spike spec for {}", id.name())));
        }
        if let Some(q) = &self.quality {
            for f in &q.families {
                if f.m.len() < 3 {
                    return Err(Error::invalid("quality", format!("family `{}` needs at least 3 sizes", f.kind)));
                }
                for &m in &f.m {
                    family_design(f, m)?;
                }
            }
        }
        if let Some(c) = &self.certify {
            c.filter.validate()?;
            if let RadiusSpec::Value(r) = c.r {
                if !(r > 0.0) {
                    return Err(Error::invalid("R", "must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub(crate) fn family_design(f: &QualityFamily, m: usize) -> Result<DesignSpec> {
    match f.kind.as_str() {
        "circular" => Ok(DesignSpec::Circular { m, radius: f.extent }),
        "ula1d" => Ok(DesignSpec::Ula1d { m, extent: f.extent }),
        "lattice2d" => {
            let side = (m as f64).sqrt().round() as usize;
            if side * side != m {
                return Err(Error::invalid("quality", format!("lattice2d size {m} is not a perfect square")));
            }
            Ok(DesignSpec::Lattice2d { side, extent: f.extent })
        }
        k => Err(Error::invalid("quality", format!("unknown family `{k}`"))),
    }
}

/// Typed result of one run.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum ExperimentSummary {
    Recovery(RecoverySummary),
    SnrSweep(SnrSummary),
    Resolution(ResolutionSummary),
    QualityAsymptotics(QualitySummary),
    CertifyDemo(Box<CertifyDemoSummary>),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: ExperimentSummary,
}

/// Resolve `config`, run it and write its outputs. `out_dir` falls back to
/// the config's `out_dir`, then to `out/<experiment>`.
pub fn run_experiment(config: ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    let cfg = config.resolve()?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()));
    std::fs::create_dir_all(&dir)?;
    let mut w = experiments::Writer::new(&dir);
    w.text("config.resolved.json", &cfg.to_json_pretty())?;
    let summary = match cfg.experiment {
        ExperimentId::Recovery => ExperimentSummary::Recovery(experiments::run_recovery(&cfg, &mut w)?),
        ExperimentId::SnrSweep => ExperimentSummary::SnrSweep(experiments::run_snr_sweep(&cfg, &mut w)?),
        ExperimentId::Resolution => ExperimentSummary::Resolution(experiments::run_resolution(&cfg, &mut w)?),
        ExperimentId::QualityAsymptotics => {
            ExperimentSummary::QualityAsymptotics(experiments::run_quality_asymptotics(&cfg, &mut w)?)
        }
        ExperimentId::CertifyDemo => ExperimentSummary::CertifyDemo(Box::new(experiments::run_certify_demo(&cfg, &mut w)?)),
    };
    w.text("summary.json", &serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutput {
        out_dir: dir,
        files: w.files,
        summary,
    })
}

/// Map `f` over `items` on all available cores, preserving order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}
