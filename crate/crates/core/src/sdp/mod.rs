//! The dual of the TV-regularized problem as a semidefinite program,
//! solved by a barrier interior-point method or by ADMM.
//!
//! ```text
//! maximize   Re sum_{kl} p_kl b_kl - (Lambda/2) ||p||_F^2
//! subject to [[Q, Gamma p], [(Gamma p)*, 1]] >= 0,
//!            sum_i Q_{i,i+j} = delta_{j0},  j = 0..2L,
//! ```
//! over Hermitian `p` and Hermitian `Q` of size `2L+1`. The constraints
//! certify `sup_w |(Gamma p)(w)| <= 1` (bounded-real lemma applied to the
//! causal polynomial `z^L (Gamma p)(z)`).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::herm::{from_coords, herm_dim, to_coords};
use crate::measurement::{CovMatrix, SpikeMeasure};
use crate::trig::{apply_gamma, approx_forward, GammaTensor, TrigPoly};
use crate::C64;

mod interior;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpMethod {
    Admm,
    /// Barrier method; stops on `gap_tol`, and `max_iters` counts Newton
    /// steps.
    #[default]
    InteriorPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub method: SdpMethod,
    /// Regularization `Lambda`; values below `1e-6 ||b||_F` are raised to it.
    pub lambda: f64,
    pub max_iters: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Duality gap target of the barrier method, for data scaled to
    /// `||b||_F = 1`.
    pub gap_tol: f64,
    /// A barrier run that can no longer step still counts as converged
    /// when its certified gap bound is within `stall_factor * gap_tol`.
    pub stall_factor: f64,
    /// Initial ADMM penalty, relative to `||b||_F`.
    pub rho: f64,
    /// Residual balancing period (iterations); 0 disables it.
    pub adapt_every: usize,
    pub adapt_factor: f64,
    /// Over-relaxation factor in (0, 2).
    pub relax: f64,
    /// Anderson acceleration memory; 0 disables it.
    pub anderson_mem: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            method: SdpMethod::InteriorPoint,
            lambda: 0.0,
            max_iters: 20_000,
            abs_tol: 1e-7,
            rel_tol: 1e-6,
            gap_tol: 1e-7,
            stall_factor: 10.0,
            rho: 1.0,
            adapt_every: 500,
            adapt_factor: 2.0,
            relax: 1.0,
            anderson_mem: 20,
        }
    }
}

impl SolverSettings {
    pub fn with_lambda(lambda: f64) -> Self {
        SolverSettings {
            lambda,
            ..Default::default()
        }
    }

    pub fn effective_lambda(&self, b: &CovMatrix) -> f64 {
        self.lambda.max(1e-6 * b.frobenius()).max(1e-12)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.gap_tol > 0.0 && self.stall_factor >= 1.0) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.rho > 0.0 && self.adapt_factor > 1.0) {
            return Err(Error::invalid("settings", "need lambda >= 0, rho > 0, adapt_factor > 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct DualSolution {
    pub p: CovMatrix,
    pub q: DMatrix<C64>,
    pub objective: f64,
    pub lambda: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub history: Vec<IterRecord>,
    /// Diagonal shift applied by the final feasibility repair.
    pub repair_shift: f64,
    /// ADMM state for warm starts.
    pub z: DMatrix<C64>,
    pub u: DMatrix<C64>,
    pub rho: f64,
}

impl DualSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// `iter,primal_res,dual_res,objective` rows with a header.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iter,primal_res,dual_res,objective\n");
        for r in &self.history {
            s.push_str(&format!("{},{:e},{:e},{:.12e}\n", r.iter, r.primal_res, r.dual_res, r.objective));
        }
        s
    }
}

/// Unitary `W` with `W* Z W` real for every Hermitian `Z` invariant under
/// `Z -> P conj(Z) P`, where `P` reverses the first `dim - 1` indices and
/// fixes the last. ADMM iterates have this symmetry because `Gamma p` is
/// real-valued for Hermitian `p`.
struct RealForm {
    cols: Vec<Vec<(usize, C64)>>,
    rows: Vec<Vec<(usize, C64)>>,
}

impl RealForm {
    fn new(dim: usize) -> Self {
        let n = dim - 1;
        let h = 1.0 / SQRT2;
        let mut cols = Vec::with_capacity(dim);
        for i in 0..n {
            let j = n - 1 - i;
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    cols.push(vec![(i, C64::new(h, 0.0)), (j, C64::new(h, 0.0))]);
                    cols.push(vec![(i, C64::new(0.0, h)), (j, C64::new(0.0, -h))]);
                }
                std::cmp::Ordering::Equal => cols.push(vec![(i, C64::new(1.0, 0.0))]),
                std::cmp::Ordering::Greater => {}
            }
        }
        cols.push(vec![(n, C64::new(1.0, 0.0))]);
        let mut rows = vec![Vec::new(); dim];
        for (a, col) in cols.iter().enumerate() {
            for &(i, w) in col {
                rows[i].push((a, w));
            }
        }
        RealForm { cols, rows }
    }

    fn to_real(&self, z: &DMatrix<C64>) -> DMatrix<f64> {
        let d = self.cols.len();
        let mut m = DMatrix::zeros(d, d);
        for b in 0..d {
            for a in 0..=b {
                let mut acc = C64::new(0.0, 0.0);
                for &(i, wa) in &self.cols[a] {
                    for &(j, wb) in &self.cols[b] {
                        acc += wa.conj() * z[(i, j)] * wb;
                    }
                }
                m[(a, b)] = acc.re;
                m[(b, a)] = acc.re;
            }
        }
        m
    }

    fn to_complex(&self, m: &DMatrix<f64>) -> DMatrix<C64> {
        let d = self.rows.len();
        let mut z = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let mut acc = C64::new(0.0, 0.0);
                for &(a, wa) in &self.rows[i] {
                    for &(b, wb) in &self.rows[j] {
                        acc += wa * m[(a, b)] * wb.conj();
                    }
                }
                z[(i, j)] = acc;
                z[(j, i)] = acc.conj();
            }
        }
        z
    }
}

fn proj_psd_real(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let neg = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    // Sum over whichever side of the spectrum is smaller.
    let (mut out, sign, keep_pos) = if 2 * neg <= n {
        (a.clone(), -1.0, false)
    } else {
        (DMatrix::zeros(n, n), 1.0, true)
    };
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if (l > 0.0) == keep_pos && l != 0.0 {
            let v = eig.eigenvectors.column(k);
            out.ger(sign * l, &v, &v, 1.0);
        }
    }
    out
}

/// Type-II Anderson acceleration of the fixed-point map `v -> v - g(v)`.
struct Anderson {
    mem: usize,
    ds: Vec<DVector<f64>>,
    dg: Vec<DVector<f64>>,
    gram: Vec<Vec<f64>>,
    prev: Option<(DVector<f64>, DVector<f64>)>,
}

impl Anderson {
    fn new(mem: usize) -> Self {
        Anderson {
            mem,
            ds: Vec::new(),
            dg: Vec::new(),
            gram: Vec::new(),
            prev: None,
        }
    }

    fn reset(&mut self) {
        self.ds.clear();
        self.dg.clear();
        self.gram.clear();
        self.prev = None;
    }

    fn extrapolate(&mut self, v: &DVector<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
        if self.mem == 0 {
            return None;
        }
        if let Some((pv, pg)) = self.prev.take() {
            if self.ds.len() == self.mem {
                self.ds.remove(0);
                self.dg.remove(0);
                self.gram.remove(0);
                for row in &mut self.gram {
                    row.remove(0);
                }
            }
            let dg = g - pg;
            let dots: Vec<f64> = self.dg.iter().map(|o| o.dot(&dg)).collect();
            for (row, d) in self.gram.iter_mut().zip(&dots) {
                row.push(*d);
            }
            let mut last = dots;
            last.push(dg.norm_squared());
            self.gram.push(last);
            self.ds.push(v - pv);
            self.dg.push(dg);
        }
        self.prev = Some((v.clone(), g.clone()));
        let k = self.dg.len();
        if k == 0 {
            return None;
        }
        let mut gram = DMatrix::from_fn(k, k, |i, j| self.gram[i][j]);
        let reg = 1e-10 * gram.trace() / k as f64 + 1e-300;
        for i in 0..k {
            gram[(i, i)] += reg;
        }
        let rhs = DVector::from_fn(k, |i, _| self.dg[i].dot(g));
        let gamma = gram.cholesky()?.solve(&rhs);
        let mut out = v - g;
        for i in 0..k {
            out.axpy(-gamma[i], &self.ds[i], 1.0);
            out.axpy(gamma[i], &self.dg[i], 1.0);
        }
        out.iter().all(|x| x.is_finite()).then_some(out)
    }
}

fn pack(z: &DMatrix<f64>, u: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(z.len() + u.len(), z.iter().chain(u.iter()).copied())
}

fn unpack(v: &DVector<f64>, dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = dim * dim;
    (
        DMatrix::from_column_slice(dim, dim, &v.as_slice()[..n]),
        DMatrix::from_column_slice(dim, dim, &v.as_slice()[n..]),
    )
}

/// `p -> Gamma p` in Hermitian coordinates, stacked as `[Re; Im]`, with its
/// thin SVD.
struct Operator {
    nn: usize,
    kr: DMatrix<f64>,
    u: DMatrix<f64>,
    sig: DVector<f64>,
    v: DMatrix<f64>,
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn coord_operator(gamma: &GammaTensor) -> DMatrix<C64> {
    let m = gamma.m;
    let nn = 2 * gamma.l + 1;
    let mut k = DMatrix::zeros(nn, herm_dim(m));
    let col = |a: usize, b: usize| gamma.data.column(a * m + b);
    for a in 0..m {
        k.set_column(a, &col(a, a));
    }
    let mut i = m;
    let ic = C64::new(0.0, 1.0 / SQRT2);
    for a in 0..m {
        for b in a + 1..m {
            let (x, y) = (col(a, b), col(b, a));
            k.set_column(i, &((x + y) / C64::new(SQRT2, 0.0)));
            k.set_column(i + 1, &((x - y) * ic));
            i += 2;
        }
    }
    k
}

impl Operator {
    fn new(gamma: &GammaTensor) -> Self {
        let k = coord_operator(gamma);
        let nn = k.nrows();
        let n = k.ncols();
        let mut kr = DMatrix::zeros(2 * nn, n);
        for j in 0..n {
            for i in 0..nn {
                kr[(i, j)] = k[(i, j)].re;
                kr[(nn + i, j)] = k[(i, j)].im;
            }
        }
        let svd = kr.clone().svd(true, true);
        Operator {
            nn,
            u: svd.u.unwrap(),
            sig: svd.singular_values,
            v: svd.v_t.unwrap().transpose(),
            kr,
        }
    }

    fn to_complex(&self, gr: &DVector<f64>) -> DVector<C64> {
        DVector::from_fn(self.nn, |i, _| C64::new(gr[i], gr[self.nn + i]))
    }

    fn to_real(&self, g: &DVector<C64>) -> DVector<f64> {
        DVector::from_fn(2 * self.nn, |i, _| if i < self.nn { g[i].re } else { g[i - self.nn].im })
    }
}

fn proj_trace(w: &DMatrix<C64>) -> DMatrix<C64> {
    let n = w.nrows();
    let mut q = (w + w.adjoint()) * C64::new(0.5, 0.0);
    for j in 0..n {
        let mut s = C64::new(0.0, 0.0);
        for i in 0..n - j {
            s += q[(i, i + j)];
        }
        let target = if j == 0 { 1.0 } else { 0.0 };
        let shift = (s - target) / (n - j) as f64;
        for i in 0..n - j {
            q[(i, i + j)] -= shift;
            if j > 0 {
                q[(i + j, i)] = q[(i, i + j)].conj();
            }
        }
    }
    q
}

/// Shifts `Q` to dominate `g g*`, then rescales `(Q, x)` so the trace
/// constraints hold again. Returns the shift.
fn repair(q: DMatrix<C64>, g: &DVector<C64>, x: DVector<f64>) -> (DMatrix<C64>, DVector<f64>, f64) {
    let nn = q.nrows();
    let schur = &q - g * g.adjoint();
    let delta = (-min_eig(&schur)).max(0.0);
    let scale = 1.0 / (1.0 + nn as f64 * delta);
    let q = (q + DMatrix::identity(nn, nn) * C64::new(delta, 0.0)) * C64::new(scale, 0.0);
    (q, x * scale.sqrt(), delta)
}

fn min_eig(a: &DMatrix<C64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

fn assemble(q: &DMatrix<C64>, g: &DVector<C64>) -> DMatrix<C64> {
    let n = q.nrows();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a.view_mut((0, 0), (n, n)).copy_from(q);
    for i in 0..n {
        a[(i, n)] = g[i];
        a[(n, i)] = g[i].conj();
    }
    a[(n, n)] = C64::new(1.0, 0.0);
    a
}

/// Coordinates of `conj(b)`: `c . coords(p) = Re sum p_kl b_kl` for
/// Hermitian `p`.
fn objective_vector(b: &CovMatrix) -> DVector<f64> {
    to_coords(&b.matrix().map(|z| z.conj()))
}

pub fn solve_trig_sdp(gamma: &GammaTensor, b: &CovMatrix, settings: &SolverSettings) -> Result<DualSolution> {
    solve_trig_sdp_warm(gamma, b, settings, None)
}

/// As [`solve_trig_sdp`], starting from the ADMM state of `warm` when its
/// dimensions match.
pub fn solve_trig_sdp_warm(
    gamma: &GammaTensor,
    b: &CovMatrix,
    settings: &SolverSettings,
    warm: Option<&DualSolution>,
) -> Result<DualSolution> {
    settings.validate()?;
    if b.m() != gamma.m {
        return Err(Error::DimensionMismatch {
            expected: gamma.m,
            got: b.m(),
        });
    }
    let lambda = settings.effective_lambda(b);
    if settings.method == SdpMethod::InteriorPoint {
        let out = interior::solve(gamma, b, settings, lambda)?;
        let g = coord_operator(gamma) * out.x.map(|v| C64::new(v, 0.0));
        let (q, x, delta) = repair(proj_trace(&out.q), &g, out.x);
        let c = objective_vector(b);
        return Ok(DualSolution {
            p: CovMatrix::from_matrix(from_coords(x.as_slice(), gamma.m))?,
            q,
            objective: c.dot(&x) - 0.5 * lambda * x.norm_squared(),
            lambda,
            status: out.status,
            iterations: out.iterations,
            history: out.history,
            repair_shift: delta,
            z: out.block,
            u: -out.multiplier,
            rho: 1.0,
        });
    }
    let op = Operator::new(gamma);
    let nn = op.nn;
    let dim = nn + 1;

    let c = objective_vector(b);
    let vtc = op.v.transpose() * &c;
    let c_perp = &c - &op.v * &vtc;
    let cp2 = c_perp.norm_squared();

    let rf = RealForm::new(dim);
    let scale_b = if b.frobenius() > 0.0 { b.frobenius() } else { 1.0 };
    let (z0, u0, mut rho) = match warm {
        Some(w) if w.z.nrows() == dim => (rf.to_real(&w.z), rf.to_real(&w.u), w.rho),
        _ => (DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim), settings.rho * scale_b),
    };
    let mut v = pack(&z0, &u0);
    let (mut z, mut u) = (z0, u0);
    let mut aa = Anderson::new(settings.anderson_mem);
    let mut fallback: Option<(DVector<f64>, f64)> = None;
    let mut history = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let mut y = DVector::zeros(op.sig.len());
    let mut q = DMatrix::zeros(nn, nn);
    let mut iters = 0;
    let relax = settings.relax;

    for it in 1..=settings.max_iters {
        iters = it;
        let (z_in, u_in) = unpack(&v, dim);
        let w = rf.to_complex(&(&z_in - &u_in));
        q = proj_trace(&w.view((0, 0), (nn, nn)).clone_owned());
        let wcol: DVector<C64> = w.view((0, nn), (nn, 1)).column(0).clone_owned();
        let t = op.u.transpose() * op.to_real(&wcol);
        y = DVector::from_fn(op.sig.len(), |i, _| {
            let s = op.sig[i];
            (vtc[i] + 2.0 * rho * s * t[i]) / (lambda + 2.0 * rho * s * s)
        });
        let gr = &op.u * y.component_mul(&op.sig);
        let a = rf.to_real(&assemble(&q, &op.to_complex(&gr)));
        let ar = &a * relax + &z_in * (1.0 - relax);
        z = proj_psd_real(&(&ar + &u_in));
        u = &u_in + &ar - &z;

        let r = (&a - &z).norm();
        let s = rho * (&z - &z_in).norm();
        let objective = vtc.dot(&y) + cp2 / (2.0 * lambda) - 0.5 * lambda * y.norm_squared();
        history.push(IterRecord {
            iter: it,
            primal_res: r,
            dual_res: s,
            objective,
        });

        let fv = pack(&z, &u);
        let g = &v - &fv;
        let gn = g.norm();
        if let Some((plain, prev)) = fallback.take() {
            if gn > prev {
                v = plain;
                aa.reset();
                continue;
            }
        }
        let eps_pri = settings.abs_tol * dim as f64 + settings.rel_tol * a.norm().max(z.norm());
        let eps_dual = settings.abs_tol * dim as f64 + settings.rel_tol * rho * u.norm();
        if it > 1 && r < eps_pri && s < eps_dual {
            status = SolveStatus::Converged;
            break;
        }
        if settings.adapt_every > 0 && it % settings.adapt_every == 0 && (r > 10.0 * s || s > 10.0 * r) {
            let f = if r > s { settings.adapt_factor } else { 1.0 / settings.adapt_factor };
            rho *= f;
            u /= f;
            v = pack(&z, &u);
            aa.reset();
            continue;
        }
        v = match aa.extrapolate(&v, &g) {
            Some(next) => {
                fallback = Some((fv, gn));
                next
            }
            None => fv,
        };
    }
    let (z, u) = (rf.to_complex(&z), rf.to_complex(&u));

    let gr = &op.u * y.component_mul(&op.sig);
    let x = &c_perp / lambda + &op.v * &y;
    let (q, x, delta) = repair(q, &op.to_complex(&gr), x);
    let objective = c.dot(&x) - 0.5 * lambda * x.norm_squared();
    let p = CovMatrix::from_matrix(from_coords(x.as_slice(), gamma.m))?;

    Ok(DualSolution {
        p,
        q,
        objective,
        lambda,
        status,
        iterations: iters,
        history,
        repair_shift: delta,
        z,
        u,
        rho,
    })
}

/// `Gamma p` for the dual solution.
pub fn dual_polynomial(solution: &DualSolution, gamma: &GammaTensor) -> TrigPoly {
    apply_gamma(gamma, solution.p.matrix()).expect("dimensions checked by the solver")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KktReport {
    /// Smallest eigenvalue of `[[Q, Gamma p], [(Gamma p)*, 1]]`.
    pub block_min_eig: f64,
    /// `max_j |sum_i Q_{i,i+j} - delta_{j0}|`.
    pub trace_residual: f64,
    /// `max(0, sup_grid |Gamma p| - 1)` on 8192 points.
    pub sup_excess: f64,
    /// `||-c + Lambda x + 2 rho K^T U_12||`, relative to `max(1, ||c||)`.
    pub stationarity: f64,
    /// `||Lambda p - conj(b - M~ mu)||_F / ||b||_F` for a supplied estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal_consistency: Option<f64>,
}

pub fn kkt_report(
    solution: &DualSolution,
    gamma: &GammaTensor,
    b: &CovMatrix,
    lambda: f64,
    estimate: Option<&SpikeMeasure>,
) -> KktReport {
    let nn = 2 * gamma.l + 1;
    let poly = dual_polynomial(solution, gamma);
    let g = DVector::from_vec(poly.coeffs.clone());
    let block = assemble(&solution.q, &g);
    let trace_residual = (0..nn)
        .map(|j| {
            let s: C64 = (0..nn - j).map(|i| solution.q[(i, i + j)]).sum();
            (s - C64::new(if j == 0 { 1.0 } else { 0.0 }, 0.0)).norm()
        })
        .fold(0.0, f64::max);
    let sup = poly.sup_norm_grid(8192);

    let op = Operator::new(gamma);
    let c = objective_vector(b);
    let x = to_coords(solution.p.matrix());
    let mut grad = &x * lambda - &c;
    if solution.u.nrows() == nn + 1 {
        let u12: DVector<C64> = solution.u.view((0, nn), (nn, 1)).column(0).clone_owned();
        grad += op.kr.transpose() * op.to_real(&u12) * (2.0 * solution.rho);
    }
    let stationarity = grad.norm() / c.norm().max(1.0);

    let primal_consistency = estimate.map(|mu| {
        let resid = (b.matrix() - approx_forward(gamma, mu)).map(|z| z.conj());
        (solution.p.matrix() * C64::new(lambda, 0.0) - resid).norm() / b.frobenius().max(1e-300)
    });
    KktReport {
        block_min_eig: min_eig(&block),
        trace_residual,
        sup_excess: (sup - 1.0).max(0.0),
        stationarity,
        primal_consistency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_design, ArrayDesign, DesignSpec};
    use crate::measurement::{add_matrix_noise, forward};
    use crate::trig::{build_gamma, ApproxMode};
    use std::f64::consts::PI;

    fn circ(m: usize) -> ArrayDesign {
        build_design(&DesignSpec::Circular { m, radius: 1.0 }).unwrap()
    }

    fn check_invariants(sol: &DualSolution, gamma: &GammaTensor, b: &CovMatrix) {
        let r = kkt_report(sol, gamma, b, sol.lambda, None);
        assert!(r.block_min_eig >= -1e-8, "{r:?}");
        assert!(r.trace_residual < 1e-8, "{r:?}");
        assert!(r.sup_excess <= 1e-6, "{r:?}");
    }

    #[test]
    fn zero_data_gives_zero_dual() {
        let d = circ(7);
        let g = build_gamma(&d, 6, ApproxMode::Truncated);
        let b = CovMatrix::zeros(7);
        let sol = solve_trig_sdp(&g, &b, &SolverSettings::with_lambda(1.0)).unwrap();
        assert!(sol.converged());
        assert!(sol.p.frobenius() < 1e-8);
        assert!(sol.objective.abs() < 1e-12);
        check_invariants(&sol, &g, &b);
    }

    #[test]
    fn real_form_round_trip() {
        let dim = 8;
        let rf = RealForm::new(dim);
        // symmetric under reversal of the first dim-1 indices plus conjugation
        let perm = |i: usize| if i + 1 == dim { i } else { dim - 2 - i };
        let base = DMatrix::from_fn(dim, dim, |i, j| C64::new((i + 2 * j) as f64 * 0.3, (3 * i + j) as f64 * 0.1));
        let h = &base + base.adjoint();
        let z = DMatrix::from_fn(dim, dim, |i, j| (h[(i, j)] + h[(perm(i), perm(j))].conj()) * 0.5);
        let back = rf.to_complex(&rf.to_real(&z));
        assert!((back - &z).norm() < 1e-12);
        let m = rf.to_real(&z);
        assert!((m.norm() - z.norm()).abs() < 1e-12);
        let ez = SymmetricEigen::new(z.clone()).eigenvalues.min();
        let em = SymmetricEigen::new(m).eigenvalues.min();
        assert!((ez - em).abs() < 1e-10);
    }

    #[test]
    fn trace_projection_is_exact() {
        let w = DMatrix::from_fn(5, 5, |i, j| C64::new((i * 3 + j) as f64, (i as f64 - j as f64) * 0.5));
        let q = proj_trace(&w);
        for j in 0..5 {
            let s: C64 = (0..5 - j).map(|i| q[(i, i + j)]).sum();
            let t = if j == 0 { 1.0 } else { 0.0 };
            assert!((s - C64::new(t, 0.0)).norm() < 1e-14);
        }
        assert!((&q - q.adjoint()).norm() < 1e-14);
        // idempotent
        assert!((proj_trace(&q) - &q).norm() < 1e-13);
    }

    #[test]
    fn hand_constructed_pair_and_injected_fault() {
        let d = circ(5);
        let g = build_gamma(&d, 4, ApproxMode::Truncated);
        let nn = 9;
        let b = CovMatrix::zeros(5);
        let mut sol = DualSolution {
            p: CovMatrix::zeros(5),
            q: DMatrix::identity(nn, nn) / C64::new(nn as f64, 0.0),
            objective: 0.0,
            lambda: 1.0,
            status: SolveStatus::Converged,
            iterations: 0,
            history: vec![],
            repair_shift: 0.0,
            z: DMatrix::zeros(0, 0),
            u: DMatrix::zeros(0, 0),
            rho: 1.0,
        };
        let r = kkt_report(&sol, &g, &b, 1.0, None);
        assert!(r.trace_residual < 1e-15 && r.sup_excess == 0.0 && r.stationarity < 1e-15);
        assert!(r.block_min_eig > 0.0);
        sol.q[(0, 1)] += C64::new(1e-3, 0.0);
        sol.q[(1, 0)] += C64::new(1e-3, 0.0);
        let r = kkt_report(&sol, &g, &b, 1.0, None);
        assert!((r.trace_residual - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn five_spikes_dual_touches_one_at_truth() {
        let d = circ(17);
        let g = build_gamma(&d, 20, ApproxMode::Truncated);
        let mu = SpikeMeasure::equispaced(5, 0.3);
        let b = forward(&d, &mu);
        let settings = SolverSettings::with_lambda(1e-2 * b.frobenius());
        let sol = solve_trig_sdp(&g, &b, &settings).unwrap();
        assert!(sol.converged(), "{} iters", sol.iterations);
        check_invariants(&sol, &g, &b);
        let q = dual_polynomial(&sol, &g);
        for s in &mu.spikes {
            let v = q.eval(s.theta);
            assert!(v.re > 1.0 - 1e-4, "{} {}", s.theta, v);
        }
    }

    #[test]
    fn scale_equivariance_and_lambda_monotonicity() {
        let d = circ(9);
        let g = build_gamma(&d, 12, ApproxMode::Truncated);
        let mu = SpikeMeasure::from_real(&[0.4, 2.0], &[1.0, 0.6]).unwrap();
        let b = add_matrix_noise(&forward(&d, &mu), 0.05, 4).unwrap();
        let tight = SolverSettings {
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            max_iters: 50_000,
            ..SolverSettings::with_lambda(0.5)
        };
        let s1 = solve_trig_sdp(&g, &b, &tight).unwrap();
        let s2 = solve_trig_sdp(
            &g,
            &b.scale(2.0),
            &SolverSettings {
                lambda: 1.0,
                ..tight.clone()
            },
        )
        .unwrap();
        assert!(s1.converged() && s2.converged());
        assert!(s1.p.sub(&s2.p).frobenius() < 1e-6, "{}", s1.p.sub(&s2.p).frobenius());
        assert!((2.0 * s1.objective - s2.objective).abs() < 1e-6 * s2.objective.abs().max(1.0));

        let mut prev = f64::INFINITY;
        for lam in [0.1, 0.3, 1.0, 3.0, 10.0] {
            let s = solve_trig_sdp(&g, &b, &SolverSettings { lambda: lam, ..tight.clone() }).unwrap();
            check_invariants(&s, &g, &b);
            let n = s.p.frobenius();
            assert!(n <= prev + 1e-6, "lambda {lam}: {n} > {prev}");
            prev = n;
        }
    }

    #[test]
    fn warm_start_reuses_state() {
        let d = circ(9);
        let g = build_gamma(&d, 12, ApproxMode::Truncated);
        let b = forward(&d, &SpikeMeasure::from_real(&[0.4, -PI / 2.0], &[1.0, 1.0]).unwrap());
        let s = SolverSettings {
            method: SdpMethod::Admm,
            ..SolverSettings::with_lambda(0.2)
        };
        let cold = solve_trig_sdp(&g, &b, &s).unwrap();
        let warm = solve_trig_sdp_warm(&g, &b, &s, Some(&cold)).unwrap();
        assert!(warm.iterations < cold.iterations / 2, "{} vs {}", warm.iterations, cold.iterations);
        assert!(cold.history_csv().starts_with("iter,primal_res,dual_res,objective\n"));
    }

    #[test]
    fn methods_agree() {
        let d = circ(9);
        let g = build_gamma(&d, 10, ApproxMode::Truncated);
        let mu = SpikeMeasure::from_real(&[0.4, 2.0, -1.7], &[1.0, 0.6, 0.8]).unwrap();
        let b = add_matrix_noise(&forward(&d, &mu), 0.02, 9).unwrap();
        let ip = solve_trig_sdp(&g, &b, &SolverSettings::with_lambda(0.1)).unwrap();
        let admm = solve_trig_sdp(
            &g,
            &b,
            &SolverSettings {
                method: SdpMethod::Admm,
                abs_tol: 1e-10,
                rel_tol: 1e-9,
                max_iters: 100_000,
                ..SolverSettings::with_lambda(0.1)
            },
        )
        .unwrap();
        assert!(ip.converged() && admm.converged());
        check_invariants(&ip, &g, &b);
        assert!((ip.objective - admm.objective).abs() < 1e-6 * b.frobenius(), "{} {}", ip.objective, admm.objective);
        assert!(ip.p.sub(&admm.p).frobenius() < 1e-3, "{}", ip.p.sub(&admm.p).frobenius());
        let r = kkt_report(&ip, &g, &b, ip.lambda, None);
        assert!(r.stationarity < 1e-6, "{r:?}");
    }

    #[test]
    fn dimension_mismatch() {
        let g = build_gamma(&circ(5), 3, ApproxMode::Truncated);
        assert!(matches!(
            solve_trig_sdp(&g, &CovMatrix::zeros(4), &SolverSettings::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
