//! Primal barrier method on the real form of the block.
//!
//! Variables are the real symmetric block `S` and the coefficients `y` of
//! `x` in the row space of the coefficient operator. Equality constraints
//! (corner, diagonal sums, link between the last column of `S` and `Gamma p`)
//! are eliminated per Newton step through their Schur complement, which is
//! only about `3(2L+1)` wide.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{
    assemble, coord_operator, objective_vector, IterRecord, RealForm, SolveStatus, SolverSettings,
};
use crate::error::Result;
use crate::measurement::CovMatrix;
use crate::trig::GammaTensor;
use crate::C64;

struct Constraint {
    entries: Vec<(usize, usize, f64)>,
    rhs: f64,
}

impl Constraint {
    fn from_dense(a: &DMatrix<f64>, rhs: f64) -> Self {
        let mut entries = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                if a[(i, j)].abs() > 1e-15 {
                    entries.push((i, j, a[(i, j)]));
                }
            }
        }
        Constraint { entries, rhs }
    }

    fn dot(&self, s: &DMatrix<f64>) -> f64 {
        self.entries.iter().map(|&(i, j, a)| a * s[(i, j)]).sum()
    }

    /// `A S` for symmetric `A`.
    fn left_mul(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(s.nrows(), s.ncols());
        for &(i, j, a) in &self.entries {
            for c in 0..s.ncols() {
                out[(i, c)] += a * s[(j, c)];
            }
        }
        out
    }
}

const CENTERED: f64 = 1e-6;
const MU: f64 = 10.0;

pub(super) struct Outcome {
    pub x: DVector<f64>,
    pub q: DMatrix<C64>,
    pub block: DMatrix<C64>,
    pub multiplier: DMatrix<C64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub history: Vec<IterRecord>,
}

/// Jacobi-scaled Cholesky (LU as fallback) with two refinement sweeps.
fn solve_scaled(g: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = g.nrows();
    let d = DVector::from_fn(n, |i, _| 1.0 / g[(i, i)].abs().max(1e-300).sqrt());
    let gs = DMatrix::from_fn(n, n, |i, j| g[(i, j)] * d[i] * d[j]);
    let solve = |r: &DVector<f64>| -> Option<DVector<f64>> {
        let rs = r.component_mul(&d);
        let z = match Cholesky::new(gs.clone()) {
            Some(ch) => ch.solve(&rs),
            None => gs.clone().lu().solve(&rs)?,
        };
        Some(z.component_mul(&d))
    };
    let mut x = solve(rhs)?;
    for _ in 0..2 {
        let r = rhs - g * &x;
        x += solve(&r)?;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn log_det(s: &DMatrix<f64>) -> Option<f64> {
    let ch = Cholesky::new(s.clone())?;
    let l = ch.l_dirty();
    Some(2.0 * (0..s.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Constraint data of one problem instance.
struct Problem {
    dim: usize,
    cons: Vec<Constraint>,
    /// `B` rows of the link constraints, which start at `first_link`.
    link: DMatrix<f64>,
    first_link: usize,
}

struct Step {
    /// `sum_i nu_i A_i`, the barrier's estimate of `S^-1`.
    nmat: DMatrix<f64>,
    ds: DMatrix<f64>,
    dy: DVector<f64>,
    dec2: f64,
}

impl Problem {
    fn brow(&self, i: usize) -> Option<DVector<f64>> {
        (i >= self.first_link).then(|| self.link.row(i - self.first_link).transpose())
    }

    /// `h_i + B_i y - <A_i, S>`.
    fn residual(&self, s: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.cons.len(), |i, _| {
            let by = self.brow(i).map_or(0.0, |b| b.dot(y));
            self.cons[i].rhs + by - self.cons[i].dot(s)
        })
    }

    /// Newton step, with the equality constraints eliminated through their
    /// normal equations.
    fn step(&self, s: &DMatrix<f64>, y: &DVector<f64>, grad_y: &DVector<f64>, tl: f64) -> Option<Step> {
        let mc = self.cons.len();
        let mut g = DMatrix::zeros(mc, mc);
        for i in 0..mc {
            let w = s * self.cons[i].left_mul(s);
            for k in 0..mc {
                g[(i, k)] = self.cons[k].dot(&w);
            }
        }
        // A(S) - residual, so the step also removes any drift.
        let mut rhs = -self.residual(s, y);
        for i in 0..mc {
            rhs[i] += self.cons[i].dot(s);
        }
        for i in self.first_link..mc {
            let bi = self.brow(i).unwrap();
            for k in self.first_link..mc {
                g[(i, k)] += bi.dot(&self.brow(k).unwrap()) / tl;
            }
            rhs[i] += bi.dot(grad_y) / tl;
        }
        let g = (&g + g.transpose()) * 0.5;
        let nu = solve_scaled(&g, &rhs)?;
        let mut nmat = DMatrix::zeros(self.dim, self.dim);
        for (i, con) in self.cons.iter().enumerate() {
            for &(a, b, val) in &con.entries {
                nmat[(a, b)] += nu[i] * val;
            }
        }
        let ds = s - s * &nmat * s;
        let mut bt_nu = DVector::zeros(y.len());
        for i in self.first_link..mc {
            bt_nu.axpy(nu[i], &self.brow(i).unwrap(), 1.0);
        }
        let dy = (&bt_nu - grad_y) / tl;
        let l = Cholesky::new(s.clone())?.l();
        let a = l.solve_lower_triangular(&ds)?;
        let a = l.solve_lower_triangular(&a.transpose())?;
        let dec2 = a.norm_squared() + tl * dy.norm_squared();
        Some(Step { nmat, ds, dy, dec2 })
    }
}

pub(super) fn solve(gamma: &GammaTensor, b: &CovMatrix, settings: &SolverSettings, lambda: f64) -> Result<Outcome> {
    let nn = 2 * gamma.l + 1;
    let dim = nn + 1;
    let scale = if b.frobenius() > 0.0 { b.frobenius() } else { 1.0 };
    let lam = lambda / scale;
    let c = objective_vector(b) / scale;
    let rf = RealForm::new(dim);

    // Real coordinates of the last column: S[a, nn] = R x.
    let kc = coord_operator(gamma);
    let n = kc.ncols();
    let mut r = DMatrix::zeros(nn, n);
    for (a, col) in rf.cols.iter().take(nn).enumerate() {
        for j in 0..n {
            r[(a, j)] = col.iter().map(|&(i, w)| (w.conj() * kc[(i, j)]).re).sum();
        }
    }
    let svd = r.svd(true, true);
    let (u, sig, vt) = (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap());
    let v = vt.transpose();
    let ct = &vt * &c;
    let c_perp = &c - &v * &ct;

    let mut cons = vec![Constraint {
        entries: vec![(nn, nn, 1.0)],
        rhs: 1.0,
    }];
    for j in 0..nn {
        let mut h = DMatrix::<C64>::zeros(dim, dim);
        for i in 0..nn - j {
            h[(i, i + j)] += C64::new(0.5, 0.0);
            h[(i + j, i)] += C64::new(0.5, 0.0);
        }
        cons.push(Constraint::from_dense(&rf.to_real(&h), if j == 0 { 1.0 } else { 0.0 }));
        if j > 0 {
            let mut h = DMatrix::<C64>::zeros(dim, dim);
            for i in 0..nn - j {
                h[(i, i + j)] += C64::new(0.0, 0.5);
                h[(i + j, i)] -= C64::new(0.0, 0.5);
            }
            let im = Constraint::from_dense(&rf.to_real(&h), 0.0);
            if !im.entries.is_empty() {
                cons.push(im);
            }
        }
    }
    let first_link = cons.len();
    for a in 0..nn {
        cons.push(Constraint {
            entries: vec![(a, nn, 0.5), (nn, a, 0.5)],
            rhs: 0.0,
        });
    }
    let prob = Problem {
        dim,
        cons,
        link: &u * DMatrix::from_diagonal(&sig),
        first_link,
    };

    let q0 = DMatrix::<C64>::identity(nn, nn) / C64::new(nn as f64, 0.0);
    let mut s = rf.to_real(&assemble(&q0, &DVector::zeros(nn)));
    let mut y = DVector::<f64>::zeros(sig.len());
    let mut ld = log_det(&s).expect("initial block is positive definite");
    let mut t = 1.0 / (1.0 + ct.norm());
    let mut t_centered = t;
    let mut multiplier = (DMatrix::zeros(dim, dim), 1.0);
    let mut history = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let mut iters = 0;

    while iters < settings.max_iters {
        iters += 1;
        let grad_y = (&y * lam - &ct) * t;
        let tl = t * lam;
        let mut centered = false;
        let mut moved = false;
        let mut dec2 = f64::INFINITY;
        if let Some(step) = prob.step(&s, &y, &grad_y, tl) {
            dec2 = step.dec2;
            multiplier = (step.nmat.clone(), t);
            if dec2 < CENTERED {
                centered = true;
            } else if let Some((sn, ldn, alpha)) = line_search(&s, ld, &step, &grad_y, tl) {
                s = sn;
                ld = ldn;
                y.axpy(alpha, &step.dy, 1.0);
                moved = true;
                centered = alpha == 1.0 && dec2 < 1e-4;
            }
        }

        let x = &v * &y + &c_perp / lam;
        history.push(IterRecord {
            iter: iters,
            primal_res: prob.residual(&s, &y).norm(),
            dual_res: dim as f64 / t,
            objective: scale * (c.dot(&x) - 0.5 * lam * x.norm_squared()),
        });
        if !moved && !centered {
            // Rounding limits the step accuracy near the boundary: accept a
            // nearly central point, otherwise retreat towards the last
            // central one.
            if dec2 < 0.1 {
                centered = true;
            } else if t > 1.5 * t_centered {
                t = (t * t_centered).sqrt();
                continue;
            } else {
                if gap_bound(dim as f64, dec2, t) <= settings.stall_factor * settings.gap_tol {
                    status = SolveStatus::Converged;
                }
                break;
            }
        }
        if centered {
            t_centered = t;
            if dim as f64 / t < settings.gap_tol * 1.000_001 {
                status = SolveStatus::Converged;
                break;
            }
            t = (t * MU).min(dim as f64 / settings.gap_tol);
        }
    }

    let x = &v * &y + &c_perp / lam;
    let block = rf.to_complex(&s);
    let q = block.view((0, 0), (nn, nn)).clone_owned();
    let multiplier = rf.to_complex(&(&multiplier.0 * (scale / multiplier.1)));
    Ok(Outcome {
        x,
        q,
        block,
        multiplier,
        status,
        iterations: iters,
        history,
    })
}

/// Duality gap bound at barrier weight `t` for a point with squared Newton
/// decrement `dec2` under a barrier of parameter `nu`; infinite unless the
/// decrement is below 1.
fn gap_bound(nu: f64, dec2: f64, t: f64) -> f64 {
    let l = dec2.sqrt();
    if l >= 1.0 {
        return f64::INFINITY;
    }
    (nu + (l + nu.sqrt()) * l / (1.0 - l)) / t
}

/// Backtracking on the barrier value; returns the new block, its log
/// determinant and the step length.
fn line_search(
    s: &DMatrix<f64>,
    ld: f64,
    step: &Step,
    grad_y: &DVector<f64>,
    tl: f64,
) -> Option<(DMatrix<f64>, f64, f64)> {
    let gdy = grad_y.dot(&step.dy);
    let dy2 = step.dy.norm_squared();
    let mut alpha = 1.0;
    while alpha > 1e-8 {
        let sn = s + &step.ds * alpha;
        if let Some(ldn) = log_det(&sn) {
            // Change of the barrier value, formed without cancellation.
            let change = alpha * gdy + 0.5 * tl * alpha * alpha * dy2 - (ldn - ld);
            // Inside the quadratic region full steps are safe.
            if (alpha == 1.0 && step.dec2 < 1e-2) || change <= -0.25 * alpha * step.dec2 {
                return Some((sn, ldn, alpha));
            }
        }
        alpha *= 0.5;
    }
    None
}
