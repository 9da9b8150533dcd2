//! Trigonometric approximations of the steering functions and the tensor
//! `Gamma` mapping dual matrices to polynomial coefficients.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::ArrayDesign;
use crate::measurement::{forward_matrix, steering, SpikeMeasure};
use crate::special::bessel_j_all;
use crate::{Point, C64};

/// Above this lag length coefficients come from trapezoidal quadrature
/// instead of the Bessel recurrence.
const BESSEL_MAX_ARG: f64 = 60.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxMode {
    #[default]
    Truncated,
    Cesaro,
}

impl ApproxMode {
    fn tag(self) -> u8 {
        match self {
            ApproxMode::Truncated => 0,
            ApproxMode::Cesaro => 1,
        }
    }
}

/// `sum_{|n| <= L} coeffs[n + L] e^{i n w}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    pub l: usize,
    pub coeffs: Vec<C64>,
}

impl TrigPoly {
    pub fn zero(l: usize) -> Self {
        TrigPoly {
            l,
            coeffs: vec![C64::new(0.0, 0.0); 2 * l + 1],
        }
    }

    pub fn coeff(&self, n: i64) -> C64 {
        let i = n + self.l as i64;
        if i < 0 || i as usize >= self.coeffs.len() {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[i as usize]
        }
    }

    pub fn eval(&self, w: f64) -> C64 {
        // Horner in e^{iw}, then shift by e^{-iLw}
        let z = C64::from_polar(1.0, w);
        let mut acc = C64::new(0.0, 0.0);
        for c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc * C64::from_polar(1.0, -(self.l as f64) * w)
    }

    /// Values at `w_k = 2 pi k / n`, `k = 0..n`.
    pub fn eval_grid(&self, n: usize) -> Vec<C64> {
        (0..n).map(|k| self.eval(2.0 * PI * k as f64 / n as f64)).collect()
    }

    /// True when `coeffs[-n] = conj(coeffs[n])` within `tol`.
    pub fn is_real_valued(&self, tol: f64) -> bool {
        let l = self.l as i64;
        (-l..=l).all(|n| (self.coeff(-n) - self.coeff(n).conj()).norm() <= tol)
    }

    /// `max |p(w)|` over a uniform grid of `n` points.
    pub fn sup_norm_grid(&self, n: usize) -> f64 {
        self.eval_grid(n).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Fourier coefficients `n = -L..L` of `w -> exp(i <(cos w, sin w), d>)`:
/// `i^n J_n(|d|) e^{-i n atan2(d_2, d_1)}`.
pub fn plane_wave_fourier_coeffs(d: Point, l: usize) -> Vec<C64> {
    let r = d[0].hypot(d[1]);
    if r > BESSEL_MAX_ARG {
        return quadrature_coeffs(d, l);
    }
    let phi = d[1].atan2(d[0]);
    let j = bessel_j_all(l, r);
    let mut out = vec![C64::new(0.0, 0.0); 2 * l + 1];
    let ipow = [
        C64::new(1.0, 0.0),
        C64::new(0.0, 1.0),
        C64::new(-1.0, 0.0),
        C64::new(0.0, -1.0),
    ];
    for n in -(l as i64)..=(l as i64) {
        let na = n.unsigned_abs() as usize;
        let jn = if n < 0 && na % 2 == 1 { -j[na] } else { j[na] };
        let c = ipow[n.rem_euclid(4) as usize] * jn * C64::from_polar(1.0, -(n as f64) * phi);
        out[(n + l as i64) as usize] = c;
    }
    out
}

/// Trapezoidal rule on enough nodes that aliasing is below double precision.
fn quadrature_coeffs(d: Point, l: usize) -> Vec<C64> {
    let r = d[0].hypot(d[1]);
    let need = 2.0 * (l as f64 + r + 60.0);
    let nodes = (need as usize).next_power_of_two();
    let vals: Vec<C64> = (0..nodes)
        .map(|k| steering(d, 2.0 * PI * k as f64 / nodes as f64))
        .collect();
    (-(l as i64)..=(l as i64))
        .map(|n| {
            let mut s = C64::new(0.0, 0.0);
            for (k, v) in vals.iter().enumerate() {
                s += v * C64::from_polar(1.0, -2.0 * PI * (n * k as i64) as f64 / nodes as f64);
            }
            s / nodes as f64
        })
        .collect()
}

/// Trigonometric approximation of the steering function of lag `d`.
pub fn build_rho(d: Point, l: usize, mode: ApproxMode) -> TrigPoly {
    let mut coeffs = plane_wave_fourier_coeffs(d, l);
    if mode == ApproxMode::Cesaro {
        for (i, c) in coeffs.iter_mut().enumerate() {
            let n = (i as i64 - l as i64).unsigned_abs() as f64;
            *c *= 1.0 - n / (l as f64 + 1.0);
        }
    }
    TrigPoly { l, coeffs }
}

/// Column `(k, l)` (index `k m + l`) holds the coefficients of the
/// approximation of `w -> steering(Delta_k - Delta_l, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaTensor {
    pub l: usize,
    pub m: usize,
    pub mode: ApproxMode,
    pub data: DMatrix<C64>,
}

impl GammaTensor {
    pub fn column(&self, k: usize, j: usize) -> TrigPoly {
        TrigPoly {
            l: self.l,
            coeffs: self.data.column(k * self.m + j).iter().copied().collect(),
        }
    }
}

pub fn build_gamma(design: &ArrayDesign, l: usize, mode: ApproxMode) -> GammaTensor {
    let m = design.m();
    let mut data = DMatrix::<C64>::zeros(2 * l + 1, m * m);
    for k in 0..m {
        for j in 0..m {
            let pk = design.positions[k];
            let pj = design.positions[j];
            let col = if j < k {
                // conjugate reflection of the transposed column
                let src = data.column(j * m + k).clone_owned();
                (0..2 * l + 1).map(|i| src[2 * l - i].conj()).collect::<Vec<_>>()
            } else {
                build_rho([pk[0] - pj[0], pk[1] - pj[1]], l, mode).coeffs
            };
            for (i, c) in col.into_iter().enumerate() {
                data[(i, k * m + j)] = c;
            }
        }
    }
    GammaTensor { l, m, mode, data }
}

/// `sum_{k,l} p_{kl} Gamma[., (k,l)]`.
pub fn apply_gamma(gamma: &GammaTensor, p: &DMatrix<C64>) -> Result<TrigPoly> {
    if p.nrows() != gamma.m || p.ncols() != gamma.m {
        return Err(Error::DimensionMismatch {
            expected: gamma.m,
            got: p.nrows().max(p.ncols()),
        });
    }
    let m = gamma.m;
    let mut coeffs = vec![C64::new(0.0, 0.0); 2 * gamma.l + 1];
    for k in 0..m {
        for j in 0..m {
            let w = p[(k, j)];
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            for (c, g) in coeffs.iter_mut().zip(gamma.data.column(k * m + j).iter()) {
                *c += w * g;
            }
        }
    }
    Ok(TrigPoly { l: gamma.l, coeffs })
}

/// `(M~ mu)_{kl} = sum_s c_s rho_{kl}(theta_s)`.
pub fn approx_forward(gamma: &GammaTensor, mu: &SpikeMeasure) -> DMatrix<C64> {
    let m = gamma.m;
    let l = gamma.l as i64;
    let mut out = DMatrix::zeros(m, m);
    for s in &mu.spikes {
        let basis: Vec<C64> = (-l..=l)
            .map(|n| s.amp * C64::from_polar(1.0, n as f64 * s.theta))
            .collect();
        for k in 0..m {
            for j in 0..m {
                let col = gamma.data.column(k * m + j);
                let mut v = C64::new(0.0, 0.0);
                for (g, e) in col.iter().zip(&basis) {
                    v += g * e;
                }
                out[(k, j)] += v;
            }
        }
    }
    out
}

/// `||(M - M~) mu||_F`.
pub fn approx_operator_gap(design: &ArrayDesign, gamma: &GammaTensor, mu: &SpikeMeasure) -> f64 {
    (forward_matrix(design, mu) - approx_forward(gamma, mu)).norm()
}

/// Largest grid deviation `sup_w |steering(d, w) - rho(w)|` over all columns.
pub fn max_column_error(design: &ArrayDesign, gamma: &GammaTensor, grid: usize) -> f64 {
    let m = gamma.m;
    let mut worst = 0.0f64;
    for k in 0..m {
        for j in 0..m {
            let d = [
                design.positions[k][0] - design.positions[j][0],
                design.positions[k][1] - design.positions[j][1],
            ];
            let rho = gamma.column(k, j);
            for i in 0..grid {
                let w = 2.0 * PI * i as f64 / grid as f64;
                worst = worst.max((steering(d, w) - rho.eval(w)).norm());
            }
        }
    }
    worst
}

/// Hex SHA-256 of the antenna positions (bit patterns, in order).
pub fn design_hash(design: &ArrayDesign) -> String {
    let mut h = Sha256::new();
    for p in &design.positions {
        h.update(p[0].to_le_bytes());
        h.update(p[1].to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

const MAGIC: &[u8; 8] = b"GDOAGAM1";

impl GammaTensor {
    /// `MAGIC`, `u64` m, `u64` L, `u8` mode, then the `(2L+1) x m^2`
    /// entries column-major as little-endian `(re, im)` doubles.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&(self.l as u64).to_le_bytes())?;
        w.write_all(&[self.mode.tag()])?;
        for z in self.data.iter() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a Gamma cache file".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let m = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let l = u64::from_le_bytes(b8) as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let mode = match tag[0] {
            0 => ApproxMode::Truncated,
            1 => ApproxMode::Cesaro,
            t => return Err(Error::Parse(format!("unknown mode tag {t}"))),
        };
        let rows = 2 * l + 1;
        let mut vals = Vec::with_capacity(rows * m * m);
        for _ in 0..rows * m * m {
            r.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            vals.push(C64::new(re, f64::from_le_bytes(b8)));
        }
        Ok(GammaTensor {
            l,
            m,
            mode,
            data: DMatrix::from_vec(rows, m * m, vals),
        })
    }
}

/// Cache path for `(design hash, L, mode)` under `dir`.
pub fn gamma_cache_path(dir: &Path, design: &ArrayDesign, l: usize, mode: ApproxMode) -> PathBuf {
    let mode = match mode {
        ApproxMode::Truncated => "truncated",
        ApproxMode::Cesaro => "cesaro",
    };
    dir.join(format!("gamma-{}-L{l}-{mode}.bin", &design_hash(design)[..16]))
}

/// Load `Gamma` from the cache directory, building and storing it on a miss.
pub fn load_or_build_gamma(dir: &Path, design: &ArrayDesign, l: usize, mode: ApproxMode) -> Result<GammaTensor> {
    let path = gamma_cache_path(dir, design, l, mode);
    if let Ok(f) = std::fs::File::open(&path) {
        if let Ok(g) = GammaTensor::read_binary(std::io::BufReader::new(f)) {
            if g.m == design.m() && g.l == l && g.mode == mode {
                return Ok(g);
            }
        }
    }
    let g = build_gamma(design, l, mode);
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    g.write_binary(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
    std::fs::rename(tmp, &path)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_design, DesignSpec};
    use crate::measurement::SpikeMeasure;
    use proptest::prelude::*;

    fn quad_oracle(d: Point, n: i64) -> C64 {
        let nodes = 4096;
        let mut s = C64::new(0.0, 0.0);
        for k in 0..nodes {
            let w = 2.0 * PI * k as f64 / nodes as f64;
            s += steering(d, w) * C64::from_polar(1.0, -(n as f64) * w);
        }
        s / nodes as f64
    }

    fn circ17() -> ArrayDesign {
        build_design(&DesignSpec::Circular { m: 17, radius: 1.0 }).unwrap()
    }

    #[test]
    fn zero_lag_is_constant() {
        let c = plane_wave_fourier_coeffs([0.0, 0.0], 5);
        for (i, z) in c.iter().enumerate() {
            let want = if i == 5 { 1.0 } else { 0.0 };
            assert!((z - C64::new(want, 0.0)).norm() < 1e-15);
        }
        for mode in [ApproxMode::Truncated, ApproxMode::Cesaro] {
            let r = build_rho([0.0, 0.0], 4, mode);
            assert!((r.eval(1.234) - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn j0_of_two() {
        let c = plane_wave_fourier_coeffs([2.0, 0.0], 20);
        assert!((c[20].re - 0.22389077914123567).abs() < 1e-14);
        assert!((c[20] - quad_oracle([2.0, 0.0], 0)).norm() < 1e-13);
        assert!(c[0].norm() < 1e-10 && c[40].norm() < 1e-10);
    }

    #[test]
    fn matches_quadrature_oracle() {
        for &d in &[[0.3, -0.1], [1.0, 2.0], [-2.5, 3.0], [0.0, -4.0], [2.8, 2.8]] {
            let c = plane_wave_fourier_coeffs(d, 30);
            for n in -30..=30i64 {
                let e = (c[(n + 30) as usize] - quad_oracle(d, n)).norm();
                assert!(e < 1e-10, "d={d:?} n={n} e={e}");
            }
        }
    }

    #[test]
    fn quadrature_path_agrees_with_bessel() {
        for d in [[29.5, 0.0], [40.0, -41.0]] {
            let b = plane_wave_fourier_coeffs(d, 10);
            let q = quadrature_coeffs(d, 10);
            for (x, y) in b.iter().zip(&q) {
                assert!((x - y).norm() < 1e-12);
            }
        }
        // beyond the Bessel range: Parseval over a wide band
        let c = plane_wave_fourier_coeffs([50.0, 45.0], 120);
        let e: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_beats_cesaro() {
        let d = [2f64.sqrt(), 2f64.sqrt()];
        let t = build_rho(d, 20, ApproxMode::Truncated);
        let c = build_rho(d, 20, ApproxMode::Cesaro);
        let err = |p: &TrigPoly| {
            (0..4096)
                .map(|k| {
                    let w = 2.0 * PI * k as f64 / 4096.0;
                    (steering(d, w) - p.eval(w)).norm()
                })
                .fold(0.0, f64::max)
        };
        assert!(err(&t) < 1e-9);
        assert!(err(&c) > err(&t));
        assert!(c.sup_norm_grid(4096) <= 1.0 + 1e-12);
    }

    #[test]
    fn gamma_columns_and_pairing() {
        let d = build_design(&DesignSpec::Ula1d { m: 2, extent: 1.0 }).unwrap();
        let g = build_gamma(&d, 6, ApproxMode::Truncated);
        assert_eq!(g.data.ncols(), 4);
        for k in 0..2 {
            let c = g.column(k, k);
            assert!((c.eval(0.7) - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let g = build_gamma(&circ17(), 20, ApproxMode::Truncated);
        let l = 20i64;
        for (k, j) in [(0, 1), (3, 11), (16, 2)] {
            let a = g.column(k, j);
            let b = g.column(j, k);
            for n in -l..=l {
                assert!((a.coeff(n) - b.coeff(-n).conj()).norm() < 1e-15);
            }
        }
        assert!(max_column_error(&circ17(), &g, 4096) < 1e-8);
    }

    #[test]
    fn apply_gamma_basics() {
        let d = circ17();
        let g = build_gamma(&d, 20, ApproxMode::Truncated);
        let z = apply_gamma(&g, &DMatrix::zeros(17, 17)).unwrap();
        assert!(z.coeffs.iter().all(|c| c.norm() == 0.0));
        let mut e = DMatrix::zeros(17, 17);
        e[(0, 0)] = C64::new(1.0, 0.0);
        let q = apply_gamma(&g, &e).unwrap();
        assert!((q.eval(0.3) - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(matches!(
            apply_gamma(&g, &DMatrix::zeros(3, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn steering_outer_product_gives_m_squared() {
        let d = circ17();
        let g = build_gamma(&d, 20, ApproxMode::Truncated);
        let th = 0.9;
        let a = crate::measurement::steering_vector(&d, th);
        // conj so that p_{kl} eps_{kl}(th) = |a_k|^2 |a_l|^2
        let p = (&a * a.adjoint()).map(|z| z.conj());
        let q = apply_gamma(&g, &p).unwrap();
        assert!((q.eval(th) - C64::new(289.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn gap_examples() {
        let d = circ17();
        let mu = SpikeMeasure::from_real(&[0.2, 1.9, -2.2], &[0.5, 0.3, 0.2]).unwrap();
        let g40 = build_gamma(&d, 40, ApproxMode::Truncated);
        assert!(approx_operator_gap(&d, &g40, &mu) < 1e-8);
        let g0 = build_gamma(&d, 0, ApproxMode::Truncated);
        assert!(approx_operator_gap(&d, &g0, &mu) > 0.1);
        assert_eq!(approx_operator_gap(&d, &g40, &SpikeMeasure::default()), 0.0);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = circ17();
        let g = load_or_build_gamma(dir.path(), &d, 8, ApproxMode::Cesaro).unwrap();
        assert!(gamma_cache_path(dir.path(), &d, 8, ApproxMode::Cesaro).exists());
        let again = load_or_build_gamma(dir.path(), &d, 8, ApproxMode::Cesaro).unwrap();
        assert_eq!(g, again);
        assert_eq!(g, build_gamma(&d, 8, ApproxMode::Cesaro));
    }

    proptest! {
        #[test]
        fn parseval(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            prop_assume!(x.hypot(y) <= 2.0);
            let full: f64 = plane_wave_fourier_coeffs([x, y], 60).iter().map(|c| c.norm_sqr()).sum();
            prop_assert!((full - 1.0).abs() < 1e-13);
            let trunc: f64 = plane_wave_fourier_coeffs([x, y], 20).iter().map(|c| c.norm_sqr()).sum();
            prop_assert!(trunc >= 1.0 - 1e-13);
        }

        #[test]
        fn hermitian_p_gives_real_polynomial(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = build_design(&DesignSpec::Circular { m: 6, radius: 1.3 }).unwrap();
            let g = build_gamma(&d, 12, ApproxMode::Truncated);
            let a = DMatrix::from_fn(6, 6, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let p = &a + a.adjoint();
            let q = apply_gamma(&g, &p).unwrap();
            prop_assert!(q.is_real_valued(1e-12));
            for z in q.eval_grid(512) {
                prop_assert!(z.im.abs() < 1e-10);
            }
            // linearity
            let q2 = apply_gamma(&g, &(&p * C64::new(2.0, 0.0))).unwrap();
            for (u, v) in q.coeffs.iter().zip(&q2.coeffs) {
                prop_assert!((u * 2.0 - v).norm() < 1e-12);
            }
        }
    }
}
