//! Gridless estimation: localize the support where the dual polynomial
//! touches modulus one, refit amplitudes on it, prune. Also the plain
//! grid-discretized baselines and lambda selection.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayDesign;
use crate::measurement::{sample_covariance, steering_vector, CovMatrix, Spike, SpikeMeasure};
use crate::sdp::{dual_polynomial, solve_trig_sdp, DualSolution, SolverSettings};
use crate::special::{angle_dist, wrap_angle};
use crate::trig::{approx_forward, build_gamma, ApproxMode, GammaTensor, TrigPoly};
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationSettings {
    /// Sampling step of the support search, radians.
    pub grid_step: f64,
    /// Samples with `r - |q| < tau` are retained, `r` the reference level.
    pub tau: f64,
    /// The reference level is the grid maximum of `|q|` when that lies
    /// within `peak_slack` below 1, and 1 otherwise. Absorbs the uniform
    /// shortfall an inexact solve leaves at every peak.
    pub peak_slack: f64,
    /// Retained samples further apart than this start a new cluster.
    pub cluster_gap: f64,
    /// Relative amplitude below which refitted spikes are dropped.
    pub prune_tol: f64,
}

impl Default for LocalizationSettings {
    fn default() -> Self {
        LocalizationSettings {
            grid_step: 1e-3,
            tau: 1e-4,
            peak_slack: 1e-6,
            cluster_gap: 0.05,
            prune_tol: 1e-3,
        }
    }
}

impl LocalizationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step < PI) {
            return Err(Error::invalid("grid_step", "must be in (0, pi)"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid("tau", "must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.peak_slack) {
            return Err(Error::invalid("peak_slack", "must be in [0, 1)"));
        }
        if !(self.cluster_gap >= self.grid_step) {
            return Err(Error::invalid("cluster_gap", "must be at least grid_step"));
        }
        if !(0.0..1.0).contains(&self.prune_tol) {
            return Err(Error::invalid("prune_tol", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Cluster centers of `{w : r - |q(w)| < tau}` on a uniform grid, each the
/// `|q|`-weighted circular mean of its samples. Sorted, in `(-pi, pi]`.
pub fn find_support(q: &TrigPoly, settings: &LocalizationSettings) -> Result<Vec<f64>> {
    settings.validate()?;
    let n = (2.0 * PI / settings.grid_step).round() as usize;
    let h = 2.0 * PI / n as f64;
    let vals: Vec<f64> = q.eval_grid(n).iter().map(|z| z.norm()).collect();
    let peak = vals.iter().copied().fold(0.0, f64::max);
    let level = if peak < 1.0 && peak >= 1.0 - settings.peak_slack { peak } else { 1.0 };
    let keep: Vec<bool> = vals.iter().map(|v| level - v < settings.tau).collect();
    let Some(start) = keep.iter().position(|k| !k) else {
        return Err(Error::DegenerateSupport);
    };
    if !keep.contains(&true) {
        return Err(Error::EmptySupport);
    }

    // walk once around the circle from a rejected sample
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut last: Option<usize> = None;
    for step in 1..=n {
        let k = (start + step) % n;
        if !keep[k] {
            continue;
        }
        let pos = start + step;
        match last {
            Some(p) if (pos - p) as f64 * h <= settings.cluster_gap => clusters.last_mut().unwrap().push(k),
            _ => clusters.push(vec![k]),
        }
        last = Some(pos);
    }
    let first = clusters[0][0];
    let tail = *clusters.last().unwrap().last().unwrap();
    let wrap_gap = ((first + n - tail) % n) as f64 * h;
    if wrap_gap <= settings.cluster_gap {
        if clusters.len() == 1 {
            return Err(Error::DegenerateSupport);
        }
        let head = clusters.remove(0);
        clusters.last_mut().unwrap().extend(head);
    }

    let mut out: Vec<f64> = clusters
        .iter()
        .map(|c| {
            let s: C64 = c.iter().map(|&k| C64::from_polar(vals[k], k as f64 * h)).sum();
            wrap_angle(s.arg())
        })
        .collect();
    out.sort_by(|a, b| a.total_cmp(b));
    Ok(out)
}

/// Linear map from amplitudes at fixed angles to `m x m` matrices,
/// `c -> sum_j c_j a(theta_j) a(theta_j)*`.
#[derive(Clone, Debug)]
pub struct SupportOperator {
    m: usize,
    angles: Vec<f64>,
    /// Column `j` is `vec(a a*)` for angle `j`, column-major.
    cols: DMatrix<C64>,
}

impl SupportOperator {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn columns(&self) -> &DMatrix<C64> {
        &self.cols
    }

    pub fn apply(&self, c: &DVector<C64>) -> DMatrix<C64> {
        let v = &self.cols * c;
        DMatrix::from_column_slice(self.m, self.m, v.as_slice())
    }

    /// Per-angle correlations `a(theta_j)* r a(theta_j)`.
    pub fn adjoint(&self, r: &DMatrix<C64>) -> DVector<C64> {
        let v = DVector::from_column_slice(r.as_slice());
        self.cols.ad_mul(&v)
    }

    pub fn gram(&self) -> DMatrix<C64> {
        self.cols.ad_mul(&self.cols)
    }
}

pub fn build_support_operator(design: &ArrayDesign, angles: &[f64]) -> Result<SupportOperator> {
    for i in 0..angles.len() {
        if !angles[i].is_finite() {
            return Err(Error::invalid("angles", "non-finite angle"));
        }
        for j in 0..i {
            if angle_dist(angles[i], angles[j]) < 1e-12 {
                return Err(Error::invalid("angles", "angles must be distinct"));
            }
        }
    }
    let m = design.m();
    let mut cols = DMatrix::zeros(m * m, angles.len());
    for (j, &t) in angles.iter().enumerate() {
        let a = steering_vector(design, t);
        let aa = &a * a.adjoint();
        cols.set_column(j, &DVector::from_column_slice(aa.as_slice()));
    }
    Ok(SupportOperator {
        m,
        angles: angles.to_vec(),
        cols,
    })
}

/// The same map with the trigonometric approximation `M~` in place of the
/// exact steering outer products.
pub fn build_approx_operator(gamma: &GammaTensor, angles: &[f64]) -> Result<SupportOperator> {
    let m = gamma.m;
    let l = gamma.l as i64;
    let basis = DMatrix::from_fn((2 * l + 1) as usize, angles.len(), |n, j| C64::from_polar(1.0, (n as i64 - l) as f64 * angles[j]));
    // rows of data^T basis are ordered (k, j) -> k m + j; vec() wants j m + k
    let prod = gamma.data.transpose() * basis;
    let cols = DMatrix::from_fn(m * m, angles.len(), |r, c| prod[((r % m) * m + r / m, c)]);
    Ok(SupportOperator {
        m,
        angles: angles.to_vec(),
        cols,
    })
}

impl SupportOperator {
    fn select(&self, idx: &[usize]) -> SupportOperator {
        SupportOperator {
            m: self.m,
            angles: idx.iter().map(|&i| self.angles[i]).collect(),
            cols: self.cols.select_columns(idx),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DictionaryLasso {
    pub amplitudes: DVector<C64>,
    /// `1/2 ||A c - b||_F^2 + lambda ||c||_1`.
    pub objective: f64,
    /// `max_j |A_j* (b - A c)| / lambda - 1` over all columns, clamped at 0.
    pub violation: f64,
    pub working_set: usize,
}

/// LASSO over a dictionary too wide for its Gram matrix: solve exactly on a
/// working set, add the worst violators of `|A_j* r| <= lambda` from the
/// full dictionary, repeat.
pub fn solve_dictionary_lasso(op: &SupportOperator, b: &CovMatrix, lambda: f64) -> Result<DictionaryLasso> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    let k = op.len();
    let bv = DVector::from_column_slice(b.matrix().as_slice());
    let mut work: Vec<usize> = Vec::new();
    let mut c = DVector::<C64>::zeros(k);
    for _ in 0..200 {
        let resid = &bv - &op.cols * &c;
        let h = op.cols.ad_mul(&resid);
        let mut viol: Vec<(usize, f64)> = (0..k).filter(|j| !work.contains(j)).map(|j| (j, h[j].norm())).filter(|&(_, v)| v > lambda * (1.0 + 1e-9)).collect();
        if viol.is_empty() {
            let objective = 0.5 * resid.norm_squared() + lambda * c.iter().map(|z| z.norm()).sum::<f64>();
            let worst = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
            return Ok(DictionaryLasso {
                amplitudes: c,
                objective,
                violation: (worst / lambda - 1.0).max(0.0),
                working_set: work.len(),
            });
        }
        viol.sort_by(|a, b| b.1.total_cmp(&a.1));
        work.extend(viol.iter().take(4).map(|v| v.0));
        let sub = op.select(&work);
        let fit = solve_support_lasso(&sub, b, lambda)?;
        c = DVector::zeros(k);
        for (i, &j) in work.iter().enumerate() {
            c[j] = fit.amplitudes[i];
        }
    }
    Err(Error::NotConverged { iters: 200 })
}

#[derive(Clone, Debug)]
pub struct LassoFit {
    pub amplitudes: DVector<C64>,
    pub iterations: usize,
    /// [`lasso_kkt_residual`] of the returned amplitudes.
    pub kkt_residual: f64,
}

fn soft(v: C64, t: f64) -> C64 {
    let r = v.norm();
    if r <= t {
        C64::new(0.0, 0.0)
    } else {
        v * ((r - t) / r)
    }
}

fn kkt_from_gram(gram: &DMatrix<C64>, gb: &DVector<C64>, lambda: f64, c: &DVector<C64>) -> f64 {
    let h = gb - gram * c;
    let mut worst = 0.0f64;
    for i in 0..c.len() {
        let r = c[i].norm();
        let v = if r > 0.0 {
            (h[i] - c[i] * (lambda / r)).norm()
        } else {
            (h[i].norm() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Largest violation of the optimality conditions of
/// `min 1/2 ||A c - b||^2 + lambda ||c||_1`: with `h = A*(b - A c)`,
/// `h_j = lambda c_j/|c_j|` where `c_j != 0` and `|h_j| <= lambda` elsewhere.
pub fn lasso_kkt_residual(op: &SupportOperator, b: &CovMatrix, lambda: f64, c: &DVector<C64>) -> f64 {
    kkt_from_gram(&op.gram(), &op.adjoint(b.matrix()), lambda, c)
}

fn power_norm(gram: &DMatrix<C64>) -> f64 {
    let n = gram.nrows();
    let mut v = DVector::from_element(n, C64::new(1.0, 0.0)) / C64::new((n as f64).sqrt(), 0.0);
    let mut est = 0.0;
    for _ in 0..500 {
        let w = gram * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        v = w / C64::new(nw, 0.0);
        if (nw - est).abs() <= 1e-12 * nw {
            return nw;
        }
        est = nw;
    }
    est
}

/// Stationarity on `act` with phases held fixed, repeated until the phases
/// settle. `Err` lists the atoms whose phase flips.
fn solve_on(
    gram: &DMatrix<C64>,
    gb: &DVector<C64>,
    lambda: f64,
    act: &[usize],
    phase: &[C64],
) -> std::result::Result<Vec<C64>, Vec<usize>> {
    let ga = DMatrix::from_fn(act.len(), act.len(), |i, j| gram[(act[i], act[j])]);
    let lu = ga.lu();
    let mut ph = phase.to_vec();
    let mut prev: Option<DVector<C64>> = None;
    for _ in 0..50 {
        let rhs = DVector::from_fn(act.len(), |i, _| gb[act[i]] - ph[i] * lambda);
        let next = lu.solve(&rhs).ok_or_else(|| act.to_vec())?;
        let flipped: Vec<usize> = (0..act.len()).filter(|&i| (next[i] * ph[i].conj()).re <= 0.0).map(|i| act[i]).collect();
        if !flipped.is_empty() {
            return Err(flipped);
        }
        ph = next.iter().map(|z| z / z.norm()).collect();
        let done = prev.as_ref().is_some_and(|p| (p - &next).norm() <= 1e-15 * next.norm());
        prev = Some(next);
        if done {
            break;
        }
    }
    Ok(prev.unwrap().iter().copied().collect())
}

/// Primal active-set finish from an approximate solution: solve on the
/// support, drop atoms whose phase flips, add the worst violator.
fn active_set(gram: &DMatrix<C64>, gb: &DVector<C64>, lambda: f64, start: &DVector<C64>) -> Option<DVector<C64>> {
    let k = start.len();
    let mut act: Vec<usize> = (0..k).filter(|&i| start[i].norm() > 0.0).collect();
    let mut phase: Vec<C64> = act.iter().map(|&i| start[i] / start[i].norm()).collect();
    for _ in 0..4 * k + 20 {
        let mut c = DVector::zeros(k);
        if !act.is_empty() {
            match solve_on(gram, gb, lambda, &act, &phase) {
                Ok(v) => {
                    for (i, &a) in act.iter().enumerate() {
                        c[a] = v[i];
                    }
                    phase = v.iter().map(|z| z / z.norm()).collect();
                }
                Err(flipped) => {
                    let keep: Vec<usize> = (0..act.len()).filter(|&i| !flipped.contains(&act[i])).collect();
                    phase = keep.iter().map(|&i| phase[i]).collect();
                    act = keep.iter().map(|&i| act[i]).collect();
                    continue;
                }
            }
        }
        let h = gb - gram * &c;
        let worst = (0..k)
            .filter(|j| !act.contains(j))
            .map(|j| (j, h[j].norm()))
            .filter(|&(_, v)| v > lambda * (1.0 + 1e-12))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            None => return Some(c),
            Some((j, v)) => {
                act.push(j);
                phase.push(h[j] / v);
            }
        }
    }
    None
}

/// `min_c 1/2 ||A c - b||_F^2 + lambda ||c||_1` by FISTA with complex
/// soft-thresholding and adaptive restart, followed by an active-set
/// active-set finish. `lambda = 0` gives least squares on the support.
pub fn solve_support_lasso(op: &SupportOperator, b: &CovMatrix, lambda: f64) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be nonnegative"));
    }
    if op.m() != b.m() {
        return Err(Error::DimensionMismatch {
            expected: op.m(),
            got: b.m(),
        });
    }
    let k = op.len();
    if k == 0 {
        return Ok(LassoFit {
            amplitudes: DVector::zeros(0),
            iterations: 0,
            kkt_residual: 0.0,
        });
    }
    let gram = op.gram();
    let gb_raw = op.adjoint(b.matrix());
    // work with ||b|| = 1 so the stopping rules are scale-free
    let scale = b.frobenius();
    if scale == 0.0 {
        return Ok(LassoFit {
            amplitudes: DVector::zeros(k),
            iterations: 0,
            kkt_residual: 0.0,
        });
    }
    let gb = &gb_raw / C64::new(scale, 0.0);
    let lam = lambda / scale;

    let (c, iterations) = if lam == 0.0 {
        let svd = gram.clone().svd(true, true);
        let eps = 1e-13 * svd.singular_values.max();
        (svd.solve(&gb, eps).map_err(|e| Error::invalid("support", e))?, 1)
    } else {
        let lip = power_norm(&gram);
        let step = 1.0 / lip;
        let mut c = DVector::<C64>::zeros(k);
        let mut z = c.clone();
        let mut t = 1.0f64;
        let mut it = 0;
        while it < 20_000 {
            it += 1;
            let grad = &gram * &z - &gb;
            let next = (&z - grad * C64::new(step, 0.0)).map(|v| soft(v, lam * step));
            let change = (&next - &c).norm();
            // restart momentum when it points uphill
            let uphill = (&z - &next).dotc(&(&next - &c)).re > 0.0;
            let tn = if uphill { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
            z = &next + (&next - &c) * C64::new((t - 1.0) / tn, 0.0);
            t = tn;
            c = next;
            if change < 1e-10 || (it % 10 == 0 && kkt_from_gram(&gram, &gb, lam, &c) < 1e-8) {
                break;
            }
        }
        // finish from the FISTA iterate and, for coherent dictionaries where
        // that support is numerically singular, from scratch
        for p in [active_set(&gram, &gb, lam, &c), active_set(&gram, &gb, lam, &DVector::zeros(k))].into_iter().flatten() {
            if kkt_from_gram(&gram, &gb, lam, &p) < kkt_from_gram(&gram, &gb, lam, &c) {
                c = p;
            }
        }
        (c, it)
    };
    let amplitudes = c * C64::new(scale, 0.0);
    let kkt_residual = kkt_from_gram(&gram, &gb_raw, lambda, &amplitudes);
    Ok(LassoFit {
        amplitudes,
        iterations,
        kkt_residual,
    })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSettings {
    pub localization: LocalizationSettings,
    pub solver: SolverSettings,
}

#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub measure: SpikeMeasure,
    /// Located support before the refit.
    pub support: Vec<f64>,
    pub dual: DualSolution,
    pub lasso: LassoFit,
}

/// The full gridless pipeline; returns spikes sorted by angle.
pub fn estimate(
    design: &ArrayDesign,
    b: &CovMatrix,
    l: usize,
    mode: ApproxMode,
    lambda: f64,
    settings: &EstimateSettings,
) -> Result<SpikeMeasure> {
    estimate_detailed(design, b, l, mode, lambda, settings).map(|r| r.measure)
}

pub fn estimate_detailed(
    design: &ArrayDesign,
    b: &CovMatrix,
    l: usize,
    mode: ApproxMode,
    lambda: f64,
    settings: &EstimateSettings,
) -> Result<EstimateReport> {
    let gamma = build_gamma(design, l, mode);
    estimate_with_gamma(design, &gamma, b, lambda, settings)
}

/// As [`estimate`] with a prebuilt tensor for `design`.
pub fn estimate_with_gamma(
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
    estimate_from_dual(design, gamma, b, dual, settings)
}

/// The SDP step alone, with `lambda` overriding `settings.solver.lambda`.
pub fn solve_dual(gamma: &GammaTensor, b: &CovMatrix, lambda: f64, settings: &EstimateSettings) -> Result<DualSolution> {
    let solver = SolverSettings {
        lambda,
        ..settings.solver.clone()
    };
    solve_trig_sdp(gamma, b, &solver).map_err(|e| e.at("sdp"))
}

/// Support localization and amplitude refit from a solved dual.
pub fn estimate_from_dual(
    design: &ArrayDesign,
    gamma: &GammaTensor,
    b: &CovMatrix,
    dual: DualSolution,
    settings: &EstimateSettings,
) -> Result<EstimateReport> {
    let q = dual_polynomial(&dual, gamma);
    let support = find_support(&q, &settings.localization).map_err(|e| e.at("support"))?;
    let op = build_support_operator(design, &support).map_err(|e| e.at("support"))?;
    let lasso = solve_support_lasso(&op, b, dual.lambda).map_err(|e| e.at("lasso"))?;
    let measure = prune(&support, &lasso.amplitudes, settings.localization.prune_tol).map_err(|e| e.at("prune"))?;
    Ok(EstimateReport {
        measure,
        support,
        dual,
        lasso,
    })
}

/// Keep spikes with `|c| >= tol * max |c|` (and `c != 0`), sorted by angle.
pub fn prune(angles: &[f64], amps: &DVector<C64>, tol: f64) -> Result<SpikeMeasure> {
    let top = amps.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let spikes = angles
        .iter()
        .zip(amps.iter())
        .filter(|(_, a)| a.norm() > 0.0 && a.norm() >= tol * top)
        .map(|(&theta, &amp)| Spike { theta, amp })
        .collect();
    Ok(SpikeMeasure::new(spikes)?.sorted())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizedMode {
    /// `min ||c||_1` subject to an exact fit, run as the regularized problem
    /// with `lambda = 1e-6 ||b||_F`.
    Equality,
    Regularized,
}

/// `n` angles `2 pi k / n`, wrapped to `(-pi, pi]` and sorted.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n).map(|k| wrap_angle(2.0 * PI * k as f64 / n as f64)).collect();
    g.sort_by(|a, b| a.total_cmp(b));
    g
}

/// The grid-discretized baseline on [`uniform_grid`]`(n)`. Zero atoms are
/// dropped; everything else, leakage included, is returned.
pub fn solve_discretized(
    design: &ArrayDesign,
    b: &CovMatrix,
    n: usize,
    lambda: f64,
    mode: DiscretizedMode,
) -> Result<SpikeMeasure> {
    if n < 2 {
        return Err(Error::invalid("N", "need at least 2 grid points"));
    }
    let grid = uniform_grid(n);
    let op = build_support_operator(design, &grid)?;
    let lam = match mode {
        DiscretizedMode::Equality => 1e-6 * b.frobenius(),
        DiscretizedMode::Regularized => lambda,
    };
    let fit = solve_support_lasso(&op, b, lam)?;
    prune(&grid, &fit.amplitudes, 0.0)
}

pub enum CvData<'a> {
    /// A single covariance matrix; the discrepancy principle is used.
    Matrix(&'a CovMatrix),
    /// Snapshots in the columns; 5-fold held-out covariance fit.
    Snapshots(&'a DMatrix<C64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda: f64,
    /// `(lambda, score)` per rung; residual norm for matrix data, mean
    /// held-out residual for snapshots.
    pub scores: Vec<(f64, f64)>,
    /// Noise level estimate used by the discrepancy principle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<f64>,
}

pub const CV_FOLDS: usize = 5;

fn estimate_or_empty(design: &ArrayDesign, gamma: &GammaTensor, b: &CovMatrix, lambda: f64, settings: &EstimateSettings) -> Result<SpikeMeasure> {
    match estimate_with_gamma(design, gamma, b, lambda, settings) {
        Ok(r) => Ok(r.measure),
        Err(e) if matches!(e.root(), Error::EmptySupport) => Ok(SpikeMeasure::default()),
        Err(e) => Err(e),
    }
}

/// Pick a lambda from `ladder`. Matrix data: the largest rung whose fit
/// residual `||M~ mu - b||_F` is within 1.05 times the noise level, which is
/// estimated from the least-squares residual off the support found at the
/// smallest rung; the smallest rung if none qualifies. Snapshot data: the
/// rung minimizing the mean held-out residual over [`CV_FOLDS`] contiguous
/// folds.
pub fn cross_validate_lambda(
    design: &ArrayDesign,
    gamma: &GammaTensor,
    data: CvData<'_>,
    ladder: &[f64],
    settings: &EstimateSettings,
) -> Result<CvOutcome> {
    if ladder.is_empty() {
        return Err(Error::EmptyLadder);
    }
    let mut rungs = ladder.to_vec();
    rungs.sort_by(|a, b| b.total_cmp(a));
    rungs.dedup();
    match data {
        CvData::Matrix(b) => {
            let smallest = *rungs.last().unwrap();
            let reference = estimate_or_empty(design, gamma, b, smallest, settings)?;
            let angles: Vec<f64> = reference.spikes.iter().map(|s| s.theta).collect();
            let op = build_support_operator(design, &angles)?;
            let ls = solve_support_lasso(&op, b, 0.0)?;
            let resid = (b.matrix() - op.apply(&ls.amplitudes)).norm();
            let m2 = (b.m() * b.m()) as f64;
            let dof = m2 - angles.len() as f64;
            let noise = if dof > 0.0 { resid * (m2 / dof).sqrt() } else { 0.0 };
            let mut scores = Vec::new();
            let mut chosen = None;
            for &lam in &rungs {
                let mu = estimate_or_empty(design, gamma, b, lam, settings)?;
                let fit = (approx_forward(gamma, &mu) - b.matrix()).norm();
                scores.push((lam, fit));
                if fit <= 1.05 * noise {
                    chosen = Some(lam);
                    break;
                }
            }
            Ok(CvOutcome {
                lambda: chosen.unwrap_or(smallest),
                scores,
                noise_level: Some(noise),
            })
        }
        CvData::Snapshots(x) => {
            let t = x.ncols();
            if t < CV_FOLDS {
                return Err(Error::InsufficientData(format!("need at least {CV_FOLDS} snapshots, got {t}")));
            }
            let bounds: Vec<usize> = (0..=CV_FOLDS).map(|f| f * t / CV_FOLDS).collect();
            let mut scores = Vec::new();
            for &lam in &rungs {
                let mut total = 0.0;
                for f in 0..CV_FOLDS {
                    let (lo, hi) = (bounds[f], bounds[f + 1]);
                    let held = sample_covariance(&x.columns(lo, hi - lo).clone_owned())?;
                    let train_cols: Vec<usize> = (0..t).filter(|&j| j < lo || j >= hi).collect();
                    let train = sample_covariance(&x.select_columns(&train_cols))?;
                    let mu = estimate_or_empty(design, gamma, &train, lam, settings)?;
                    total += (approx_forward(gamma, &mu) - held.matrix()).norm();
                }
                scores.push((lam, total / CV_FOLDS as f64));
            }
            let best = scores.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
            Ok(CvOutcome {
                lambda: best,
                scores,
                noise_level: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_design, DesignSpec};
    use crate::measurement::forward;
    use proptest::prelude::*;

    fn circ(m: usize) -> ArrayDesign {
        build_design(&DesignSpec::Circular { m, radius: 1.0 }).unwrap()
    }

    fn poly_from_fn(l: usize, f: impl Fn(i64) -> C64) -> TrigPoly {
        TrigPoly {
            l,
            coeffs: (-(l as i64)..=l as i64).map(f).collect(),
        }
    }

    #[test]
    fn constant_polynomial_is_degenerate() {
        let q = poly_from_fn(2, |n| C64::new(if n == 0 { 1.0 } else { 0.0 }, 0.0));
        assert!(matches!(find_support(&q, &LocalizationSettings::default()), Err(Error::DegenerateSupport)));
        let small = poly_from_fn(2, |n| C64::new(if n == 0 { 0.5 } else { 0.0 }, 0.0));
        assert!(matches!(find_support(&small, &LocalizationSettings::default()), Err(Error::EmptySupport)));
    }

    #[test]
    fn cosine_support() {
        // cos w = (e^{iw} + e^{-iw}) / 2
        let q = poly_from_fn(1, |n| C64::new(if n == 0 { 0.0 } else { 0.5 }, 0.0));
        let s = LocalizationSettings::default();
        let sup = find_support(&q, &s).unwrap();
        assert_eq!(sup.len(), 2);
        assert!(angle_dist(sup[0], 0.0) <= s.grid_step);
        assert!(angle_dist(sup[1], PI) <= s.grid_step);
    }

    #[test]
    fn cluster_across_the_branch_cut_merges() {
        // |q| peaks at pi only
        let q = poly_from_fn(1, |n| C64::new(if n == 0 { 0.5 } else { -0.25 }, 0.0));
        let sup = find_support(
            &q,
            &LocalizationSettings {
                tau: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(sup.len(), 1);
        assert!(angle_dist(sup[0], PI) < 1e-9);
    }

    #[test]
    fn support_operator_basics() {
        let d = circ(9);
        let op = build_support_operator(&d, &[0.3]).unwrap();
        let a = steering_vector(&d, 0.3);
        let col = DMatrix::from_column_slice(9, 9, op.columns().column(0).as_slice());
        assert!((col - &a * a.adjoint()).norm() < 1e-14);
        let adj = op.adjoint(&DMatrix::identity(9, 9));
        assert!((adj[0] - C64::new(9.0, 0.0)).norm() < 1e-12);
        let two = build_support_operator(&d, &[0.3, 0.35]).unwrap();
        let g = two.gram();
        assert!(g[(0, 1)].norm() / 81.0 < 1.0);
        assert!(build_support_operator(&d, &[0.3, 0.3]).is_err());
    }

    #[test]
    fn approx_operator_columns() {
        let d = circ(6);
        let g = build_gamma(&d, 8, ApproxMode::Truncated);
        let angles = [0.3, -1.2, 2.9];
        let op = build_approx_operator(&g, &angles).unwrap();
        for (j, &t) in angles.iter().enumerate() {
            let mu = SpikeMeasure::from_real(&[t], &[1.0]).unwrap();
            let want = approx_forward(&g, &mu);
            let got = DMatrix::from_column_slice(6, 6, op.columns().column(j).as_slice());
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn dictionary_lasso_matches_dense() {
        let d = circ(6);
        let g = build_gamma(&d, 8, ApproxMode::Truncated);
        let mu = SpikeMeasure::from_real(&[0.41, 2.0], &[1.0, 0.6]).unwrap();
        let b = crate::measurement::add_matrix_noise(&forward(&d, &mu), 0.05, 3).unwrap();
        let op = build_approx_operator(&g, &uniform_grid(90)).unwrap();
        let lam = 0.3;
        let dense = solve_support_lasso(&op, &b, lam).unwrap();
        let bv = DVector::from_column_slice(b.matrix().as_slice());
        let obj = 0.5 * (&bv - op.columns() * &dense.amplitudes).norm_squared() + lam * dense.amplitudes.iter().map(|z| z.norm()).sum::<f64>();
        let lazy = solve_dictionary_lasso(&op, &b, lam).unwrap();
        assert!((lazy.objective - obj).abs() < 1e-9 * obj, "{} vs {obj}", lazy.objective);
        assert!(lazy.violation < 1e-9);
        assert!(lazy.working_set < 90);
    }

    #[test]
    fn lasso_trivial_cases() {
        let d = circ(9);
        let op = build_support_operator(&d, &[-1.0, 0.2, 2.0]).unwrap();
        let c0 = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.5, 0.0), C64::new(2.0, 0.0)]);
        let b = CovMatrix::from_matrix(op.apply(&c0)).unwrap();
        let ls = solve_support_lasso(&op, &b, 0.0).unwrap();
        assert!((&ls.amplitudes - &c0).norm() < 1e-8);
        let big = op.adjoint(b.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let z = solve_support_lasso(&op, &b, big * 1.0001).unwrap();
        assert!(z.amplitudes.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn lasso_certificate_on_noisy_data() {
        let d = circ(9);
        let op = build_support_operator(&d, &[-1.0, 0.2, 0.25, 2.0]).unwrap();
        let mu = SpikeMeasure::from_real(&[-0.95, 0.22, 2.1], &[1.0, 0.7, 1.3]).unwrap();
        let b = crate::measurement::add_matrix_noise(&forward(&d, &mu), 0.1, 3).unwrap();
        for lam in [0.1, 1.0, 5.0] {
            let fit = solve_support_lasso(&op, &b, lam).unwrap();
            let h = op.adjoint(&(b.matrix() - op.apply(&fit.amplitudes)));
            for (i, c) in fit.amplitudes.iter().enumerate() {
                assert!(h[i].norm() <= lam + 1e-6, "lambda {lam}: {}", h[i].norm());
                if c.norm() > 0.0 {
                    assert!((h[i].norm() - lam).abs() <= 1e-6);
                }
            }
            assert!(fit.kkt_residual <= 1e-6, "{}", fit.kkt_residual);
        }
    }

    #[test]
    fn discretized_on_grid_is_exact() {
        let d = circ(17);
        let grid = uniform_grid(100);
        // two spikes half a turn apart admit an exact sparse certificate
        let mu = SpikeMeasure::from_real(&[grid[10], grid[60]], &[1.0, 0.7]).unwrap();
        let b = forward(&d, &mu);
        let est = solve_discretized(&d, &b, 100, 0.0, DiscretizedMode::Equality).unwrap();
        let big: Vec<_> = est.spikes.iter().filter(|s| s.amp.norm() > 1e-6).collect();
        assert_eq!(big.len(), 2, "{:?}", est);
        for (s, t) in big.iter().zip(&mu.spikes) {
            assert!(angle_dist(s.theta, t.theta) < 1e-12);
            assert!((s.amp - t.amp).norm() < 1e-6, "{} vs {}", s.amp, t.amp);
        }
    }

    #[test]
    fn five_spike_pipeline() {
        let d = circ(17);
        let mu = SpikeMeasure::equispaced(5, 0.3);
        let b = forward(&d, &mu);
        let s = EstimateSettings::default();
        let rep = estimate_detailed(&d, &b, 20, ApproxMode::Truncated, 1e-2 * b.frobenius(), &s).unwrap();
        assert_eq!(rep.support.len(), 5);
        for (a, t) in rep.support.iter().zip(&mu.clone().sorted().spikes) {
            assert!(angle_dist(*a, t.theta) < 0.3f64.to_radians());
        }
        assert_eq!(rep.measure.len(), 5);
        for (e, t) in rep.measure.spikes.iter().zip(&mu.sorted().spikes) {
            assert!(angle_dist(e.theta, t.theta) < 0.5f64.to_radians());
            assert!((e.amp.norm() - 1.0).abs() < 0.05);
        }
        assert!(rep.lasso.kkt_residual < 1e-6);
    }

    #[test]
    fn empty_ladder() {
        let d = circ(5);
        let g = build_gamma(&d, 4, ApproxMode::Truncated);
        let b = CovMatrix::identity(5);
        assert!(matches!(
            cross_validate_lambda(&d, &g, CvData::Matrix(&b), &[], &EstimateSettings::default()),
            Err(Error::EmptyLadder)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn support_is_sorted_and_separated(seed in 0u64..1000, l in 2usize..8) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let half: Vec<C64> = (0..=l).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let mut q = poly_from_fn(l, |n| if n >= 0 { half[n as usize] } else { half[(-n) as usize].conj() });
            q.coeffs[l].im = 0.0;
            let sup = q.sup_norm_grid(1 << 14);
            for c in &mut q.coeffs { *c /= sup; }
            let s = LocalizationSettings { tau: 1e-3, ..Default::default() };
            if let Ok(out) = find_support(&q, &s) {
                for w in out.windows(2) { prop_assert!(w[0] < w[1]); }
                for i in 0..out.len() {
                    prop_assert!(out[i] > -PI && out[i] <= PI);
                    for j in 0..i { prop_assert!(angle_dist(out[i], out[j]) > s.cluster_gap); }
                }
            }
        }
    }
}
