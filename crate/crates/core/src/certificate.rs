//! Filters, autocorrelations, plane-wave certificates and the recovery
//! guarantee calculator.
//!
//! Even real Fourier series are stored as [`EvenSeries`], coefficient `n`
//! at index `n + n_max`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{quality_params, Covering, QualityOptions};
use crate::geometry::quality::clipped_area;
use crate::measurement::SpikeMeasure;
use crate::quadrature::gauss_legendre_on;
use crate::special::{angle_dist, wrap_angle};
use crate::{Error, Point, Result, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvenSeries {
    pub n_max: usize,
    pub coeffs: Vec<f64>,
}

impl EvenSeries {
    fn from_fn(n_max: usize, f: impl Fn(usize) -> f64) -> Self {
        let coeffs = (0..=2 * n_max).map(|i| f((i as i64 - n_max as i64).unsigned_abs() as usize)).collect();
        EvenSeries { n_max, coeffs }
    }

    pub fn coeff(&self, n: i64) -> f64 {
        if n.unsigned_abs() as usize > self.n_max {
            0.0
        } else {
            self.coeffs[(n + self.n_max as i64) as usize]
        }
    }

    pub fn eval(&self, omega: f64) -> f64 {
        let mut s = self.coeff(0);
        for n in 1..=self.n_max {
            s += 2.0 * self.coeff(n as i64) * (n as f64 * omega).cos();
        }
        s
    }

    pub fn sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

/// Fejér kernel `alpha_M`, coefficients `(1 - |n|/M) / M` so that
/// `alpha_M(0) = 1`.
pub fn fejer_coeffs(m: usize) -> Result<EvenSeries> {
    if m == 0 {
        return Err(Error::invalid("M", "must be at least 1"));
    }
    let mf = m as f64;
    Ok(EvenSeries::from_fn(m - 1, |n| (1.0 - n as f64 / mf) / mf))
}

/// `(1 - cos M w) / (M^2 (1 - cos w))`, 1 at `w = 0`.
pub fn fejer_closed_form(m: usize, omega: f64) -> f64 {
    let mf = m as f64;
    // 1 - cos x = 2 sin^2(x/2), without the cancellation near 0
    let den = mf * (omega / 2.0).sin();
    if den.abs() < 1e-300 {
        return 1.0;
    }
    ((mf * omega / 2.0).sin() / den).powi(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(rename = "M")]
    pub m: usize,
    pub k: u32,
    /// Coefficient truncation; `8 M` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
}

impl FilterSpec {
    pub fn new(m: usize, k: u32) -> Self {
        FilterSpec { m, k, n_max: None }
    }

    pub fn truncation(&self) -> usize {
        self.n_max.unwrap_or(8 * self.m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return Err(Error::invalid("M", "must be at least 3"));
        }
        if self.k < 1 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if self.truncation() < 4 * self.m {
            return Err(Error::invalid("n_max", "must be at least 4 M"));
        }
        Ok(())
    }

    /// Smoothness order of the autocorrelation, `a in C^{2k-2}`.
    pub fn smoothness(&self) -> u32 {
        2 * self.k - 2
    }

    fn tail_term(&self, n: usize) -> f64 {
        (n as f64).powi(-2 * self.k as i32)
    }

    /// `sum_{|n| > n_max} |n|^{-2k}`, bounded by the integral test.
    pub fn truncation_tail(&self) -> f64 {
        let n = self.truncation() as f64;
        let p = 2.0 * self.k as f64;
        2.0 * n.powf(1.0 - p) / (p - 1.0).max(f64::MIN_POSITIVE)
    }
}

/// Filter `phi_hat`: `sqrt((1 - |n|/M)/M)` up to `M`, `|n|^{-k}` beyond,
/// both over `sqrt Z`.
///
/// The first branch vanishes at `|n| = M` while the second starts at
/// `(M+1)^{-k}`; the jump is kept as constructed.
pub fn filter_coeffs(spec: &FilterSpec) -> Result<EvenSeries> {
    spec.validate()?;
    let z = normalization(spec);
    let mf = spec.m as f64;
    Ok(EvenSeries::from_fn(spec.truncation(), |n| {
        let raw = if n <= spec.m {
            ((1.0 - n as f64 / mf) / mf).sqrt()
        } else {
            (n as f64).powi(-(spec.k as i32))
        };
        raw / z.sqrt()
    }))
}

fn unnormalized(spec: &FilterSpec) -> EvenSeries {
    let mf = spec.m as f64;
    EvenSeries::from_fn(spec.truncation(), |n| {
        if n <= spec.m {
            (1.0 - n as f64 / mf) / mf
        } else {
            spec.tail_term(n)
        }
    })
}

/// `Z = 1 + sum_{M < |n| <= n_max} n^{-2k}`, summed in the same order as the
/// evaluator so that `a(0)` is exactly one.
fn normalization(spec: &FilterSpec) -> f64 {
    unnormalized(spec).eval(0.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Autocorr {
    pub spec: FilterSpec,
    /// Normalized coefficients `a_hat(n)`.
    pub coeffs: EvenSeries,
    pub z: f64,
    pub truncation_tail: f64,
    raw: EvenSeries,
}

pub fn autocorr(spec: &FilterSpec) -> Result<Autocorr> {
    spec.validate()?;
    let raw = unnormalized(spec);
    let z = raw.eval(0.0);
    let coeffs = EvenSeries {
        n_max: raw.n_max,
        coeffs: raw.coeffs.iter().map(|c| c / z).collect(),
    };
    Ok(Autocorr {
        spec: *spec,
        coeffs,
        z,
        truncation_tail: spec.truncation_tail(),
        raw,
    })
}

impl Autocorr {
    pub fn eval(&self, omega: f64) -> f64 {
        self.raw.eval(omega) / self.z
    }

    /// `|phi_hat(n)| |n|^k` on the tail, which is `1/sqrt Z` for every `n`.
    pub fn anti_decay_constant(&self) -> f64 {
        1.0 / self.z.sqrt()
    }

    /// `D` in `|phi_hat(n)| >= D M^k |n|^{-k}`.
    pub fn anti_decay_d(&self) -> f64 {
        self.anti_decay_constant() / (self.spec.m as f64).powi(self.spec.k as i32)
    }

    /// `sup |a - alpha_M| <= 2 S / (1 + S)` with `S = Z - 1` the tail mass,
    /// plus the truncated tail.
    pub fn fejer_deviation_bound(&self) -> f64 {
        2.0 * (self.z - 1.0) / self.z + self.truncation_tail
    }
}

/// Piecewise decay envelope without the `C / M^{2k}` term.
pub fn adecay_envelope(m: usize, omega: f64) -> f64 {
    let w = wrap_angle(omega).abs();
    let mf = m as f64;
    if w <= 2.0 * PI / mf {
        let x = mf * w;
        1.0 - x * x / 12.0 + x.powi(4) / 360.0
    } else {
        let den = 1.0 - (2.0 * PI * (mf * w).floor() / mf).cos();
        if den <= 0.0 {
            f64::INFINITY
        } else {
            2.0 / den
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ADecayFit {
    #[serde(rename = "M")]
    pub m: usize,
    pub k: u32,
    pub grid: usize,
    /// Smallest `C >= 0` for which the bound holds on the grid.
    pub c: f64,
    /// Where the excess is largest, radians.
    pub argmax: f64,
}

pub fn fit_adecay(a: &Autocorr, grid: usize) -> ADecayFit {
    let scale = (a.spec.m as f64).powi(2 * a.spec.k as i32);
    let mut c = 0.0;
    let mut argmax = 0.0;
    for i in 0..grid {
        let w = -PI + 2.0 * PI * i as f64 / grid as f64;
        let excess = (a.eval(w) - adecay_envelope(a.spec.m, w)) * scale;
        if excess > c {
            c = excess;
            argmax = w;
        }
    }
    ADecayFit {
        m: a.spec.m,
        k: a.spec.k,
        grid,
        c,
        argmax,
    }
}

/// Radial prolongation `Phi(r) = exp(1 - 1/(1 - ((r-1)/w)^2))` for
/// `|r - 1| < w = 1 - delta`, zero elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prolongation {
    pub delta: f64,
}

impl Default for Prolongation {
    fn default() -> Self {
        Prolongation { delta: 0.25 }
    }
}

impl Prolongation {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        1.0 - self.delta
    }

    pub fn eval(&self, r: f64) -> f64 {
        let s = (r - 1.0) / self.width();
        if s.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - s * s)).exp()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneWaveSettings {
    pub radial_nodes: usize,
    pub angular_nodes: usize,
    pub tol: f64,
    pub max_refinements: usize,
    /// Angles in the sup-error grid.
    pub sup_grid: usize,
    /// Lags checked during refinement.
    pub probe_lags: usize,
}

impl Default for PlaneWaveSettings {
    fn default() -> Self {
        PlaneWaveSettings {
            radial_nodes: 32,
            angular_nodes: 64,
            tol: 1e-8,
            max_refinements: 6,
            sup_grid: 4096,
            probe_lags: 48,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlaneWaveApprox {
    pub theta0: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub lags: Vec<Point>,
    pub weights: Vec<C64>,
    /// `max_theta |a(theta - theta0) - sum_q p_q e^{i <q, theta>}|`.
    pub sup_error: f64,
    pub p_norm: f64,
    pub a_sup: f64,
    pub radial_nodes: usize,
    pub angular_nodes: usize,
}

impl PlaneWaveApprox {
    pub fn eval(&self, theta: f64) -> C64 {
        let (s, c) = theta.sin_cos();
        self.lags
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w != C64::new(0.0, 0.0))
            .map(|(q, w)| w * C64::from_polar(1.0, q[0] * c + q[1] * s))
            .sum()
    }
}

struct Rule {
    radial: Vec<(f64, f64)>,
    dirs: Vec<Point>,
    /// `a(eta - theta0) * dtheta / (2 pi)^2`.
    profile: Vec<f64>,
}

impl Rule {
    fn new(a: &dyn Fn(f64) -> f64, prol: &Prolongation, theta0: f64, nr: usize, na: usize) -> Self {
        let w = prol.width();
        let (x, wx) = gauss_legendre_on(nr, 1.0 - w, 1.0 + w);
        let radial = x.iter().zip(&wx).map(|(&r, &wr)| (r, wr * r * prol.eval(r))).collect();
        let step = 2.0 * PI / na as f64;
        let dirs = (0..na).map(|j| {
            let (s, c) = (j as f64 * step).sin_cos();
            [c, s]
        });
        let profile = (0..na).map(|j| a(j as f64 * step - theta0) * step / (4.0 * PI * PI)).collect();
        Rule {
            radial,
            dirs: dirs.collect(),
            profile,
        }
    }

    /// `F_hat(xi) = (2 pi)^{-2} int F(x) e^{-i <xi, x>} dx`.
    fn f_hat(&self, xi: Point) -> C64 {
        let u: Vec<f64> = self.dirs.iter().map(|d| xi[0] * d[0] + xi[1] * d[1]).collect();
        let mut total = C64::new(0.0, 0.0);
        for &(r, wr) in &self.radial {
            if wr == 0.0 {
                continue;
            }
            let mut acc = C64::new(0.0, 0.0);
            for (uj, pj) in u.iter().zip(&self.profile) {
                if *pj != 0.0 {
                    acc += pj * C64::from_polar(1.0, -r * uj);
                }
            }
            total += acc * wr;
        }
        total
    }
}

/// `F_hat(xi)` by direct polar quadrature with the given rule sizes.
pub fn prolongation_transform(
    a: &dyn Fn(f64) -> f64,
    prol: &Prolongation,
    theta0: f64,
    xi: Point,
    radial_nodes: usize,
    angular_nodes: usize,
) -> C64 {
    Rule::new(a, prol, theta0, radial_nodes, angular_nodes).f_hat(xi)
}

/// Natural radius for quality parameters: `Theta_hat D` for circular
/// designs, the covering radius otherwise.
pub fn natural_radius(cov: &Covering) -> f64 {
    match (cov.theta_hat, &cov.design) {
        (Some(t), crate::geometry::DesignSpec::Circular { radius, .. }) => t * radius,
        _ => cov.r_cov,
    }
}

/// Weights `p_q = F_hat(q) |I_q ∩ B_R|` for the prolongation
/// `F(x) = Phi(|x|) a(angle(x) - theta0)`.
pub fn plane_wave_approx(
    cov: &Covering,
    r: f64,
    theta0: f64,
    a: &dyn Fn(f64) -> f64,
    prol: &Prolongation,
    settings: &PlaneWaveSettings,
) -> Result<PlaneWaveApprox> {
    prol.validate()?;
    if !(r > 0.0) {
        return Err(Error::invalid("R", "must be positive"));
    }
    let opts = QualityOptions::default();
    let lags: Vec<Point> = cov.cells.iter().map(|c| c.anchor).collect();
    let areas: Vec<f64> = cov
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| clipped_area(&c.shape, r, opts, i as u64).0)
        .collect();
    let active: Vec<usize> = (0..lags.len()).filter(|&i| areas[i] > 0.0).collect();

    // probe the outermost lags, where the integrand oscillates most
    let mut probe = active.clone();
    probe.sort_by(|&i, &j| norm(lags[j]).total_cmp(&norm(lags[i])));
    probe.truncate(settings.probe_lags.max(1));
    let (mut nr, mut na) = (settings.radial_nodes.max(4), settings.angular_nodes.max(8));
    let probe_values = |rule: &Rule| -> Vec<C64> { probe.iter().map(|&i| rule.f_hat(lags[i])).collect() };
    let rel_change = |x: &[C64], y: &[C64]| {
        let scale = x.iter().chain(y).map(|z| z.norm()).fold(0.0, f64::max);
        let diff = x.iter().zip(y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        if scale > 0.0 {
            diff / scale
        } else {
            0.0
        }
    };
    // each axis is doubled until doubling it no longer moves the probes;
    // the coarser rule is then kept
    let mut rule = Rule::new(a, prol, theta0, nr, na);
    let mut current = probe_values(&rule);
    let mut change = 0.0;
    let (mut radial_done, mut angular_done) = (probe.is_empty(), probe.is_empty());
    for _ in 0..2 * settings.max_refinements {
        if radial_done && angular_done {
            break;
        }
        let (tr, ta) = if !angular_done { (nr, 2 * na) } else { (2 * nr, na) };
        let trial = Rule::new(a, prol, theta0, tr, ta);
        let values = probe_values(&trial);
        change = rel_change(&values, &current);
        if change <= settings.tol {
            if !angular_done {
                angular_done = true;
            } else {
                radial_done = true;
            }
        } else {
            (nr, na, rule, current) = (tr, ta, trial, values);
        }
    }
    if !(radial_done && angular_done) {
        return Err(Error::QuadratureNotConverged(change));
    }

    let mut weights = vec![C64::new(0.0, 0.0); lags.len()];
    for &i in &active {
        weights[i] = rule.f_hat(lags[i]) * areas[i];
    }
    let p_norm = weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt();
    let mut out = PlaneWaveApprox {
        theta0,
        r,
        lags,
        weights,
        sup_error: 0.0,
        p_norm,
        a_sup: 0.0,
        radial_nodes: nr,
        angular_nodes: na,
    };
    let n = settings.sup_grid.max(1);
    for j in 0..n {
        let th = -PI + 2.0 * PI * j as f64 / n as f64;
        let target = a(th - theta0);
        out.a_sup = out.a_sup.max(target.abs());
        out.sup_error = out.sup_error.max((out.eval(th) - target).norm());
    }
    Ok(out)
}

fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyInputs {
    pub e_bar: f64,
    pub rho: f64,
    pub p_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_r: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub theta0: f64,
    pub t: f64,
    pub sigma: f64,
    /// `t / sigma`.
    pub bound: f64,
    /// `Re sum_j g(theta_j) c_j`; must be at least 1.
    pub integral: f64,
    /// `integral - 1`, `sigma - |g(theta0)|` and `1 - t - sup`.
    pub residuals: [f64; 3],
    pub holds: bool,
    /// `sup |a(angle(theta, theta0))|` over the rest of the support.
    pub separation_sup: f64,
    pub grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy: Option<NoisyInputs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_bound: Option<f64>,
}

pub const CERT_GRID: usize = 8192;

fn spike_at(mu: &SpikeMeasure, theta0: f64) -> Option<usize> {
    mu.spikes.iter().position(|s| angle_dist(s.theta, theta0) < 1e-12)
}

/// Check the soft-certificate conditions for `g` at `theta0`.
pub fn soft_cert_check(
    g: &dyn Fn(f64) -> C64,
    mu0: &SpikeMeasure,
    theta0: f64,
    a: &dyn Fn(f64) -> f64,
    noisy: Option<NoisyInputs>,
) -> Result<CertificateReport> {
    let i0 = spike_at(mu0, theta0).ok_or(Error::Theta0NotInSupport(theta0))?;
    let theta0 = mu0.spikes[i0].theta;
    let integral: f64 = mu0.spikes.iter().map(|s| (g(s.theta) * s.amp).re).sum();
    let g0 = g(theta0);
    let sigma = g0.norm();
    let mut sup: f64 = 0.0;
    for j in 0..CERT_GRID {
        let th = -PI + 2.0 * PI * j as f64 / CERT_GRID as f64;
        sup = sup.max((g(th) - g0 * a(th - theta0)).norm());
    }
    let t = 1.0 - sup;
    let separation_sup = mu0
        .spikes
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != i0)
        .map(|(_, s)| a(s.theta - theta0).abs())
        .fold(0.0, f64::max);
    let bound = t / sigma;
    let noisy_bound = noisy.map(|n| bound - (2.0 * n.p_norm * n.e_bar + (n.rho - 1.0)) / (n.rho * sigma));
    Ok(CertificateReport {
        theta0,
        t,
        sigma,
        bound,
        integral,
        residuals: [integral - 1.0, 0.0, 0.0],
        holds: integral >= 1.0 - 1e-12 && t > 0.0 && sigma > 0.0,
        separation_sup,
        grid: CERT_GRID,
        noisy,
        noisy_bound,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdInputs {
    /// `|c_theta0|` relative to the total variation.
    pub c0: f64,
    pub gamma_r: f64,
    pub beta_r: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub k: f64,
    #[serde(rename = "K", default = "one")]
    pub big_k: f64,
    #[serde(rename = "C", default = "one")]
    pub big_c: f64,
    pub separation_sup: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub inputs: ThresholdInputs,
    /// `2 pi (K gamma(R) + C R^{-k})`.
    pub measurement_lhs: f64,
    /// `c0 / 6`.
    pub threshold: f64,
    pub measurements_pass: bool,
    pub separation_pass: bool,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_level: Option<f64>,
}

/// Recovery guarantee: with both hypotheses met, some support point of any
/// minimizer has `|a(angle(theta_*, theta0))| >= 3 c0 / 8`, less
/// `(6 beta e + 2 (rho - 1) c0) / (3 rho)` with noise.
pub fn main_threshold(inp: &ThresholdInputs) -> Result<GuaranteeReport> {
    let fields = [
        ("c0", inp.c0),
        ("gamma_r", inp.gamma_r),
        ("beta_r", inp.beta_r),
        ("R", inp.r),
        ("k", inp.k),
        ("K", inp.big_k),
        ("C", inp.big_c),
        ("separation_sup", inp.separation_sup),
    ];
    for (name, v) in fields {
        if !(v >= 0.0) {
            return Err(Error::invalid(name, "must be nonnegative"));
        }
    }
    if inp.e_bar.is_some_and(|e| !(e >= 0.0)) {
        return Err(Error::invalid("e_bar", "must be nonnegative"));
    }
    if inp.rho.is_some_and(|r| !(r >= 1.0)) {
        return Err(Error::invalid("rho", "must be at least 1"));
    }
    let measurement_lhs = 2.0 * PI * (inp.big_k * inp.gamma_r + inp.big_c * inp.r.powf(-inp.k));
    let threshold = inp.c0 / 6.0;
    let measurements_pass = measurement_lhs < threshold;
    let separation_pass = inp.separation_sup <= threshold;
    let pass = measurements_pass && separation_pass && inp.c0 > 0.0;
    let level = pass.then(|| 3.0 * inp.c0 / 8.0);
    let noisy_level = match (level, inp.e_bar, inp.rho) {
        (Some(l), e, r) if e.is_some() || r.is_some() => {
            let (e, rho) = (e.unwrap_or(0.0), r.unwrap_or(1.0));
            Some(l - (6.0 * inp.beta_r * e + 2.0 * (rho - 1.0) * inp.c0) / (3.0 * rho))
        }
        _ => None,
    };
    Ok(GuaranteeReport {
        inputs: *inp,
        measurement_lhs,
        threshold,
        measurements_pass,
        separation_pass,
        pass,
        level,
        noisy_level,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyOptions {
    #[serde(rename = "K")]
    pub big_k: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub prolongation: Prolongation,
    pub plane_wave: PlaneWaveSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            big_k: 1.0,
            big_c: 1.0,
            prolongation: Prolongation::default(),
            plane_wave: PlaneWaveSettings::default(),
            e_bar: None,
            rho: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlaneWaveSummary {
    pub lags: usize,
    pub active_lags: usize,
    pub sup_error: f64,
    pub p_norm: f64,
    pub a_sup: f64,
    pub radial_nodes: usize,
    pub angular_nodes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifyReport {
    pub filter: FilterSpec,
    pub autocorr_z: f64,
    pub quality: crate::geometry::QualityParams,
    pub covering_cells: usize,
    pub plane_wave: PlaneWaveSummary,
    pub certificate: CertificateReport,
    pub guarantee: GuaranteeReport,
}

/// Covering, quality parameters, plane-wave certificate for
/// `a(. - theta0)` scaled to meet the integral condition, and the threshold
/// check. `r = None` picks [`natural_radius`].
pub fn certify(
    cov: &Covering,
    r: Option<f64>,
    mu0: &SpikeMeasure,
    theta0: f64,
    filter: &FilterSpec,
    opts: &CertifyOptions,
) -> Result<CertifyReport> {
    let i0 = spike_at(mu0, theta0).ok_or(Error::Theta0NotInSupport(theta0))?;
    let theta0 = mu0.spikes[i0].theta;
    let ac = autocorr(filter)?;
    let r = r.unwrap_or_else(|| natural_radius(cov));
    let quality = quality_params(cov, r);
    let a = |w: f64| ac.eval(w);
    let pw = plane_wave_approx(cov, r, theta0, &a, &opts.prolongation, &opts.plane_wave)?;
    let raw: C64 = mu0.spikes.iter().map(|s| pw.eval(s.theta) * s.amp).sum();
    let scale = if raw.norm() > 0.0 { raw.conj() / raw.norm_sqr() } else { C64::new(0.0, 0.0) };
    let g = |th: f64| pw.eval(th) * scale;
    let noisy = match (opts.e_bar, opts.rho) {
        (None, None) => None,
        (e, rho) => Some(NoisyInputs {
            e_bar: e.unwrap_or(0.0),
            rho: rho.unwrap_or(1.0),
            p_norm: pw.p_norm * scale.norm(),
            beta_r: Some(quality.beta),
        }),
    };
    let certificate = soft_cert_check(&g, mu0, theta0, &a, noisy)?;
    let tv = mu0.tv_norm();
    let c0 = if tv > 0.0 { mu0.spikes[i0].amp.norm() / tv } else { 0.0 };
    let guarantee = main_threshold(&ThresholdInputs {
        c0,
        gamma_r: quality.gamma,
        beta_r: quality.beta,
        r,
        k: filter.smoothness() as f64,
        big_k: opts.big_k,
        big_c: opts.big_c,
        separation_sup: certificate.separation_sup,
        e_bar: opts.e_bar,
        rho: opts.rho,
    })?;
    Ok(CertifyReport {
        filter: *filter,
        autocorr_z: ac.z,
        covering_cells: cov.cells.len(),
        plane_wave: PlaneWaveSummary {
            lags: pw.lags.len(),
            active_lags: pw.weights.iter().filter(|w| w.norm() > 0.0).count(),
            sup_error: pw.sup_error,
            p_norm: pw.p_norm,
            a_sup: pw.a_sup,
            radial_nodes: pw.radial_nodes,
            angular_nodes: pw.angular_nodes,
        },
        quality,
        certificate,
        guarantee,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_covering, build_design, DesignSpec};
    use crate::measurement::Spike;
    use crate::quadrature::gauss_legendre_on;
    use crate::special::bessel_j;
    use proptest::prelude::*;

    fn circ_cov(m: usize, d: f64) -> Covering {
        let design = build_design(&DesignSpec::Circular { m, radius: d }).unwrap();
        build_covering(&design, d).unwrap()
    }

    #[test]
    fn fejer_forms_agree() {
        assert_eq!(fejer_coeffs(1).unwrap().coeffs, vec![1.0]);
        for m in [1, 2, 5, 8, 31] {
            assert!((fejer_coeffs(m).unwrap().eval(0.0) - 1.0).abs() < 1e-14);
        }
        let f = fejer_coeffs(8).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..4096 {
            let w = -PI + 2.0 * PI * (i as f64 + 0.37) / 4096.0;
            worst = worst.max((f.eval(w) - fejer_closed_form(8, w)).abs());
        }
        assert!(worst < 1e-12, "{worst}");
        assert!(fejer_closed_form(8, 2.0 * PI / 8.0).abs() < 1e-15);
    }

    #[test]
    fn filter_normalization_and_tail() {
        let spec = FilterSpec::new(8, 3);
        let phi = filter_coeffs(&spec).unwrap();
        let energy = phi.sum_squares();
        assert!((1.0 - 1e-6..=1.0 + 1e-12).contains(&energy), "{energy}");
        let ac = autocorr(&spec).unwrap();
        for n in spec.m + 1..=spec.truncation() {
            let v = phi.coeff(n as i64) * (n as f64).powi(spec.k as i32);
            assert!((v - ac.anti_decay_constant()).abs() < 1e-12);
        }
        // Fejér branch just below M against the tail branch just above
        let below = phi.coeff(spec.m as i64 - 1);
        let above = phi.coeff(spec.m as i64 + 1);
        assert!((below / above).log10().abs() < 3.0);
        assert_eq!(phi.coeff(spec.m as i64), 0.0);
        for n in -(spec.truncation() as i64)..=spec.truncation() as i64 {
            assert!((phi.coeff(n).powi(2) - ac.coeffs.coeff(n)).abs() < 1e-15);
        }
    }

    #[test]
    fn autocorr_basics() {
        for (m, k) in [(3, 1), (8, 2), (16, 3), (32, 3)] {
            let ac = autocorr(&FilterSpec::new(m, k)).unwrap();
            assert_eq!(ac.eval(0.0), 1.0);
            assert!((ac.coeffs.sum() - 1.0).abs() < 1e-12);
            for n in 0..=ac.coeffs.n_max as i64 {
                assert!(ac.coeffs.coeff(n) >= 0.0);
                assert_eq!(ac.coeffs.coeff(n), ac.coeffs.coeff(-n));
            }
        }
        let ac = autocorr(&FilterSpec::new(16, 3)).unwrap();
        assert!(ac.eval(PI) < 0.02);
        assert!(FilterSpec::new(2, 3).validate().is_err());
        assert!(FilterSpec { m: 8, k: 2, n_max: Some(20) }.validate().is_err());
    }

    #[test]
    fn adecay_fits() {
        for m in [8, 16, 32] {
            for k in [2, 3] {
                let ac = autocorr(&FilterSpec::new(m, k)).unwrap();
                let fit = fit_adecay(&ac, 8192);
                assert!(fit.c.is_finite());
                let scale = (m as f64).powi(-2 * k as i32);
                let dev = ac.fejer_deviation_bound();
                for i in 0..8192 {
                    let w = -PI + 2.0 * PI * i as f64 / 8192.0;
                    assert!(ac.eval(w) <= adecay_envelope(m, w) + fit.c * scale + 1e-15);
                    assert!((ac.eval(w) - fejer_closed_form(m, w)).abs() <= dev);
                }
            }
        }
    }

    #[test]
    fn prolongation_shape() {
        let p = Prolongation::default();
        for i in 0..=100 {
            assert_eq!(p.eval(p.delta * i as f64 / 100.0), 0.0);
        }
        assert!((p.eval(1.0) - 1.0).abs() < 1e-12);
        assert_eq!(p.eval(2.0 - p.delta), 0.0);
        // derivative continuity: neighbouring one-sided slopes agree
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 1..2000 {
            let r = p.delta + 1.5 * i as f64 / 2000.0;
            let left = (p.eval(r) - p.eval(r - h)) / h;
            let right = (p.eval(r + h) - p.eval(r)) / h;
            worst = worst.max((left - right).abs());
        }
        assert!(worst < 1e-3, "{worst}");
        assert!(Prolongation { delta: 1.0 }.validate().is_err());
    }

    /// `F_hat(xi) = (2 pi)^{-1} sum_n a_hat(n) (-i)^n e^{in(phi - theta0)} int Phi(r) r J_n(r |xi|) dr`.
    fn f_hat_series(ac: &Autocorr, prol: &Prolongation, theta0: f64, xi: Point) -> C64 {
        let s = xi[0].hypot(xi[1]);
        let phi = xi[1].atan2(xi[0]);
        let (x, w) = gauss_legendre_on(400, prol.delta, 2.0 - prol.delta);
        let n_max = ac.coeffs.n_max as i64;
        let mut total = C64::new(0.0, 0.0);
        for n in -n_max..=n_max {
            let radial: f64 = x.iter().zip(&w).map(|(&r, &wr)| wr * r * prol.eval(r) * bessel_j(n, r * s)).sum();
            let phase = C64::new(0.0, -1.0).powi(n as i32) * C64::from_polar(1.0, n as f64 * (phi - theta0));
            total += ac.coeffs.coeff(n) * phase * radial;
        }
        total / (2.0 * PI)
    }

    #[test]
    fn transform_matches_bessel_series() {
        let ac = autocorr(&FilterSpec::new(4, 2)).unwrap();
        let prol = Prolongation::default();
        let a = |w: f64| ac.eval(w);
        for (xi, th0) in [([0.0, 0.0], 0.0), ([0.7, -0.2], 0.3), ([-1.5, 1.1], -2.0), ([3.0, 0.5], 1.0)] {
            let direct = prolongation_transform(&a, &prol, th0, xi, 128, 256);
            let oracle = f_hat_series(&ac, &prol, th0, xi);
            assert!((direct - oracle).norm() < 1e-9 * (1.0 + oracle.norm()), "{xi:?}: {direct} vs {oracle}");
        }
    }

    #[test]
    fn zero_profile_and_origin_cell() {
        let cov = circ_cov(8, 1.0);
        let r = natural_radius(&cov);
        let zero = plane_wave_approx(&cov, r, 0.0, &|_| 0.0, &Prolongation::default(), &PlaneWaveSettings::default()).unwrap();
        assert!(zero.weights.iter().all(|w| *w == C64::new(0.0, 0.0)));
        assert_eq!(zero.sup_error, 0.0);
        let ac = autocorr(&FilterSpec::new(3, 2)).unwrap();
        let pw = plane_wave_approx(&cov, r, 0.0, &|w| ac.eval(w), &Prolongation::default(), &PlaneWaveSettings::default()).unwrap();
        let origin = pw.lags.iter().position(|q| q[0].hypot(q[1]) < 1e-12).unwrap();
        assert_eq!(pw.weights[origin], C64::new(0.0, 0.0));
    }

    #[test]
    fn plane_wave_error_and_weight_norm_across_m() {
        let ac = autocorr(&FilterSpec::new(3, 2)).unwrap();
        let mut errs = Vec::new();
        let mut kappas = Vec::new();
        for m in [8, 16, 32] {
            let cov = circ_cov(m, 1.0);
            let r = natural_radius(&cov);
            let q = quality_params(&cov, r);
            let pw = plane_wave_approx(&cov, r, 0.4, &|w| ac.eval(w), &Prolongation::default(), &PlaneWaveSettings::default()).unwrap();
            errs.push(pw.sup_error);
            kappas.push(pw.p_norm / (q.beta * pw.a_sup));
        }
        for w in errs.windows(2) {
            assert!(w[1] <= 1.1 * w[0], "{errs:?}");
        }
        let mean = kappas.iter().sum::<f64>() / 3.0;
        assert!(kappas.iter().all(|k| (k / mean - 1.0).abs() <= 0.5), "{kappas:?}");
    }

    #[test]
    fn autocorrelation_is_its_own_certificate() {
        let ac = autocorr(&FilterSpec::new(8, 3)).unwrap();
        let th0 = 0.9;
        let mu = SpikeMeasure::from_real(&[th0], &[1.0]).unwrap();
        let g = |th: f64| C64::new(ac.eval(th - th0), 0.0);
        let rep = soft_cert_check(&g, &mu, th0, &|w| ac.eval(w), None).unwrap();
        assert_eq!(rep.t, 1.0);
        assert_eq!(rep.sigma, 1.0);
        assert_eq!(rep.bound, 1.0);
        assert!(rep.holds);
        let half = |th: f64| g(th) * 0.5;
        let rep = soft_cert_check(&half, &mu, th0, &|w| ac.eval(w), None).unwrap();
        assert!((rep.integral - 0.5).abs() < 1e-15);
        assert!(!rep.holds);
        assert!(matches!(soft_cert_check(&g, &mu, 0.0, &|w| ac.eval(w), None), Err(Error::Theta0NotInSupport(_))));
        let noisy = NoisyInputs { e_bar: 0.0, rho: 1.0, p_norm: 3.0, beta_r: None };
        let rep = soft_cert_check(&g, &mu, th0, &|w| ac.eval(w), Some(noisy)).unwrap();
        assert_eq!(rep.noisy_bound, Some(rep.bound));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn cert_phase_invariance(phase in -PI..PI, th0 in -3.0f64..3.0, c1 in 0.1f64..1.0) {
            let ac = autocorr(&FilterSpec::new(6, 2)).unwrap();
            let a = |w: f64| ac.eval(w);
            let other = th0 + 2.0;
            let mu = SpikeMeasure::new(vec![
                Spike { theta: th0, amp: C64::new(1.0, 0.0) },
                Spike { theta: other, amp: C64::new(c1, 0.3) },
            ]).unwrap();
            let rot = C64::from_polar(1.0, phase);
            let mu_rot = SpikeMeasure::new(mu.spikes.iter().map(|s| Spike { theta: s.theta, amp: s.amp * rot.conj() }).collect()).unwrap();
            let g = |th: f64| C64::new(a(th - th0), 0.1 * (th - th0).sin()) * 0.8;
            let gr = |th: f64| g(th) * rot;
            let r1 = soft_cert_check(&g, &mu, th0, &a, None).unwrap();
            let r2 = soft_cert_check(&gr, &mu_rot, th0, &a, None).unwrap();
            prop_assert!((r1.t - r2.t).abs() < 1e-10);
            prop_assert!((r1.sigma - r2.sigma).abs() < 1e-10);
            prop_assert!((r1.integral - r2.integral).abs() < 1e-10);
        }
    }

    fn inputs(c0: f64, gamma: f64, r: f64, k: f64, sep: f64) -> ThresholdInputs {
        ThresholdInputs { c0, gamma_r: gamma, beta_r: 0.5, r, k, big_k: 1.0, big_c: 1.0, separation_sup: sep, e_bar: None, rho: None }
    }

    #[test]
    fn threshold_cases() {
        // C R^{-k} 2 pi = 2 pi / 1000 < 1/6
        let rep = main_threshold(&inputs(1.0, 0.0, 10.0, 3.0, 0.0)).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.level, Some(3.0 / 8.0));
        assert_eq!(rep.noisy_level, None);
        // the measurement condition is strict: lhs = threshold = 0 fails
        let mut edge = inputs(0.0, 0.0, 1.0, 3.0, 0.0);
        edge.big_c = 0.0;
        let rep = main_threshold(&edge).unwrap();
        assert_eq!(rep.measurement_lhs, rep.threshold);
        assert!(!rep.measurements_pass && !rep.pass);
        let big = main_threshold(&inputs(1.0, 0.03, 10.0, 3.0, 0.0)).unwrap();
        assert!(!big.measurements_pass && big.level.is_none());
        // separation: at most c0 / 6
        assert!(main_threshold(&inputs(0.6, 0.0, 10.0, 3.0, 0.6 / 6.0)).unwrap().separation_pass);
        assert!(!main_threshold(&inputs(0.6, 0.0, 10.0, 3.0, 0.1 + 1e-12)).unwrap().separation_pass);
        let mut noisy = inputs(0.8, 0.0, 10.0, 3.0, 0.0);
        noisy.e_bar = Some(0.0);
        noisy.rho = Some(1.0);
        let rep = main_threshold(&noisy).unwrap();
        assert_eq!(rep.noisy_level, rep.level);
        noisy.e_bar = Some(0.1);
        noisy.rho = Some(1.5);
        let rep = main_threshold(&noisy).unwrap();
        let expect = 0.3 - (6.0 * 0.5 * 0.1 + 2.0 * 0.5 * 0.8) / 4.5;
        assert!((rep.noisy_level.unwrap() - expect).abs() < 1e-15);
        assert!(main_threshold(&inputs(-1.0, 0.0, 1.0, 1.0, 0.0)).is_err());
    }
}
