//! Steering responses, the covariance-domain operator and noise models.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayDesign;
use crate::special::{angle_dist, wrap_angle};
use crate::{Point, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub theta: f64,
    pub amp: C64,
}

/// A finite sum of Dirac masses on the circle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpikeMeasure {
    pub spikes: Vec<Spike>,
}

impl SpikeMeasure {
    /// Angles are wrapped to `(-pi, pi]` and must be at least `1e-9` apart.
    pub fn new(spikes: Vec<Spike>) -> Result<Self> {
        let spikes: Vec<Spike> = spikes
            .into_iter()
            .map(|s| Spike {
                theta: wrap_angle(s.theta),
                amp: s.amp,
            })
            .collect();
        for i in 0..spikes.len() {
            if !spikes[i].theta.is_finite() || !spikes[i].amp.re.is_finite() || !spikes[i].amp.im.is_finite() {
                return Err(Error::invalid("spikes", "non-finite spike"));
            }
            for j in 0..i {
                if angle_dist(spikes[i].theta, spikes[j].theta) < 1e-9 {
                    return Err(Error::invalid(
                        "spikes",
                        format!("angles {} and {} coincide", spikes[j].theta, spikes[i].theta),
                    ));
                }
            }
        }
        Ok(SpikeMeasure { spikes })
    }

    /// Nonnegative real amplitudes at the given angles.
    pub fn from_real(thetas: &[f64], amps: &[f64]) -> Result<Self> {
        if thetas.len() != amps.len() {
            return Err(Error::DimensionMismatch {
                expected: thetas.len(),
                got: amps.len(),
            });
        }
        Self::new(
            thetas
                .iter()
                .zip(amps)
                .map(|(&theta, &a)| Spike {
                    theta,
                    amp: C64::new(a, 0.0),
                })
                .collect(),
        )
    }

    /// `n` unit spikes at `offset + 2 pi k / n`.
    pub fn equispaced(n: usize, offset: f64) -> Self {
        let thetas: Vec<f64> = (0..n).map(|k| offset + 2.0 * PI * k as f64 / n as f64).collect();
        Self::from_real(&thetas, &vec![1.0; n]).expect("equispaced angles are distinct")
    }

    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }

    pub fn tv_norm(&self) -> f64 {
        self.spikes.iter().map(|s| s.amp.norm()).sum()
    }

    /// Scaled to TV norm 1 (unchanged if empty).
    pub fn normalized(&self) -> Self {
        let tv = self.tv_norm();
        if tv == 0.0 {
            return self.clone();
        }
        SpikeMeasure {
            spikes: self
                .spikes
                .iter()
                .map(|s| Spike {
                    theta: s.theta,
                    amp: s.amp / tv,
                })
                .collect(),
        }
    }

    pub fn sorted(mut self) -> Self {
        self.spikes
            .sort_by(|a, b| a.theta.partial_cmp(&b.theta).unwrap());
        self
    }

    pub fn rotated(&self, phi: f64) -> Self {
        SpikeMeasure {
            spikes: self
                .spikes
                .iter()
                .map(|s| Spike {
                    theta: wrap_angle(s.theta + phi),
                    amp: s.amp,
                })
                .collect(),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.spikes.iter().all(|s| s.amp.im == 0.0 && s.amp.re >= 0.0)
    }

    /// CSV with header `theta_rad,re,im`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta_rad,re,im\n");
        for sp in &self.spikes {
            s.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", sp.theta, sp.amp.re, sp.amp.im));
        }
        s
    }

    /// Accepts `theta_rad,re,im` rows or `theta_rad,amp` rows; a header
    /// line is skipped when its first field is not numeric.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut spikes = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let nums: std::result::Result<Vec<f64>, _> = f.iter().map(|x| x.parse::<f64>()).collect();
            let nums = match nums {
                Ok(v) => v,
                Err(_) if ln == 0 => continue,
                Err(_) => return Err(Error::Parse(format!("line {}: `{line}`", ln + 1))),
            };
            let amp = match nums.len() {
                2 => C64::new(nums[1], 0.0),
                3 => C64::new(nums[1], nums[2]),
                n => {
                    return Err(Error::Parse(format!(
                        "line {}: expected 2 or 3 fields, got {n}",
                        ln + 1
                    )))
                }
            };
            spikes.push(Spike {
                theta: nums[0],
                amp,
            });
        }
        Self::new(spikes)
    }
}

/// An `m x m` Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    data: DMatrix<C64>,
}

impl CovMatrix {
    /// Symmetrizes `(a + a*) / 2`.
    pub fn from_matrix(a: DMatrix<C64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let h = (&a + a.adjoint()) * C64::new(0.5, 0.0);
        Ok(CovMatrix { data: h })
    }

    pub fn zeros(m: usize) -> Self {
        CovMatrix {
            data: DMatrix::zeros(m, m),
        }
    }

    pub fn identity(m: usize) -> Self {
        CovMatrix {
            data: DMatrix::identity(m, m),
        }
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn frobenius(&self) -> f64 {
        self.data.norm()
    }

    pub fn add(&self, other: &CovMatrix) -> CovMatrix {
        CovMatrix {
            data: &self.data + &other.data,
        }
    }

    pub fn sub(&self, other: &CovMatrix) -> CovMatrix {
        CovMatrix {
            data: &self.data - &other.data,
        }
    }

    pub fn scale(&self, c: f64) -> CovMatrix {
        CovMatrix {
            data: &self.data * C64::new(c, 0.0),
        }
    }

    /// Row-major CSV, one row per line, entries as `re,im` pairs.
    pub fn to_csv(&self) -> String {
        let m = self.m();
        let mut s = String::new();
        for k in 0..m {
            let row: Vec<String> = (0..m)
                .map(|j| {
                    let z = self.data[(k, j)];
                    format!("{:.17e},{:.17e}", z.re, z.im)
                })
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .enumerate()
            .map(|(i, l)| {
                l.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("row {}: bad number `{x}`", i + 1)))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let m = rows.len();
        if m == 0 {
            return Err(Error::Parse("empty matrix".into()));
        }
        let mut a = DMatrix::zeros(m, m);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != 2 * m {
                return Err(Error::DimensionMismatch {
                    expected: 2 * m,
                    got: row.len(),
                });
            }
            for j in 0..m {
                a[(k, j)] = C64::new(row[2 * j], row[2 * j + 1]);
            }
        }
        Self::from_matrix(a)
    }

    /// Little-endian `u64` m, then `m^2` entries row-major, each as two
    /// `f64` (re, im).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.m();
        w.write_all(&(m as u64).to_le_bytes())?;
        for k in 0..m {
            for j in 0..m {
                let z = self.data[(k, j)];
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let m = u64::from_le_bytes(b8) as usize;
        if m == 0 || m > 1 << 16 {
            return Err(Error::Parse(format!("implausible dimension {m}")));
        }
        let mut a = DMatrix::zeros(m, m);
        for k in 0..m {
            for j in 0..m {
                r.read_exact(&mut b8)?;
                let re = f64::from_le_bytes(b8);
                r.read_exact(&mut b8)?;
                let im = f64::from_le_bytes(b8);
                a[(k, j)] = C64::new(re, im);
            }
        }
        Self::from_matrix(a)
    }
}

/// `exp(i <(cos theta, sin theta), delta>)`.
pub fn steering(delta: Point, theta: f64) -> C64 {
    let (s, c) = theta.sin_cos();
    C64::from_polar(1.0, c * delta[0] + s * delta[1])
}

/// `a_k = steering(Delta_k, theta)`.
pub fn steering_vector(design: &ArrayDesign, theta: f64) -> DVector<C64> {
    DVector::from_iterator(design.m(), design.positions.iter().map(|&p| steering(p, theta)))
}

/// `(M mu)_{kj} = sum_l c_l steering(Delta_k - Delta_j, theta_l)`, not
/// symmetrized (complex amplitudes give non-Hermitian output).
pub fn forward_matrix(design: &ArrayDesign, mu: &SpikeMeasure) -> DMatrix<C64> {
    let m = design.m();
    let mut b = DMatrix::zeros(m, m);
    for s in &mu.spikes {
        let a = steering_vector(design, s.theta);
        for j in 0..m {
            let w = s.amp * a[j].conj();
            for k in 0..m {
                b[(k, j)] += a[k] * w;
            }
        }
    }
    b
}

/// The measurement `M mu` as a Hermitian matrix. Exact for real
/// amplitudes; complex amplitudes keep only the Hermitian part.
pub fn forward(design: &ArrayDesign, mu: &SpikeMeasure) -> CovMatrix {
    CovMatrix::from_matrix(forward_matrix(design, mu)).expect("square")
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn cnormal(rng: &mut ChaCha8Rng, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Snapshots `r(t) = sum_l w_l(t) a(theta_l) + n(t)` as the columns of an
/// `m x T` matrix, with `w_l ~ CN(0, c_l)` and `n ~ CN(0, sigma^2 I)`.
pub fn simulate_snapshot_matrix(design: &ArrayDesign, mu: &SpikeMeasure, cfg: &SnapshotConfig) -> Result<DMatrix<C64>> {
    if cfg.t == 0 {
        return Err(Error::invalid("T", "need at least one snapshot"));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma", "must be nonnegative"));
    }
    for s in &mu.spikes {
        if s.amp.im != 0.0 || s.amp.re < 0.0 {
            return Err(Error::NegativeAmplitude(s.amp.re));
        }
    }
    let m = design.m();
    let steer: Vec<DVector<C64>> = mu.spikes.iter().map(|s| steering_vector(design, s.theta)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = DMatrix::<C64>::zeros(m, cfg.t);
    let nv = cfg.noise_sigma * cfg.noise_sigma;
    for t in 0..cfg.t {
        let mut r = x.column_mut(t);
        for (s, a) in mu.spikes.iter().zip(&steer) {
            let w = cnormal(&mut rng, s.amp.re);
            r.axpy(w, a, C64::new(1.0, 0.0));
        }
        if nv > 0.0 {
            for k in 0..m {
                r[k] += cnormal(&mut rng, nv);
            }
        }
    }
    Ok(x)
}

/// `(1/T) X X*` for snapshots in the columns of `X`.
pub fn sample_covariance(x: &DMatrix<C64>) -> Result<CovMatrix> {
    if x.ncols() == 0 {
        return Err(Error::invalid("snapshots", "need at least one snapshot"));
    }
    CovMatrix::from_matrix(x * x.adjoint() / C64::new(x.ncols() as f64, 0.0))
}

/// Empirical covariance of [`simulate_snapshot_matrix`].
pub fn simulate_snapshots(design: &ArrayDesign, mu: &SpikeMeasure, cfg: &SnapshotConfig) -> Result<CovMatrix> {
    sample_covariance(&simulate_snapshot_matrix(design, mu, cfg)?)
}

/// `b + H`, `H = (G + G*) / sqrt 2` with `G` i.i.d. `CN(0, sigma^2)`, so
/// that `E ||H||_F^2 = sigma^2 m^2`.
pub fn add_matrix_noise(b: &CovMatrix, sigma: f64, seed: u64) -> Result<CovMatrix> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be nonnegative"));
    }
    if sigma == 0.0 {
        return Ok(b.clone());
    }
    let m = b.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(m, m, |_, _| cnormal(&mut rng, sigma * sigma));
    let h = (&g + g.adjoint()) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CovMatrix::from_matrix(b.matrix() + h)
}

/// `10 log10(||b_clean||_F^2 / noise_power)`.
pub fn snr_db(b_clean: &CovMatrix, noise_power: f64) -> Result<f64> {
    if !(noise_power > 0.0) {
        return Err(Error::ZeroNoise);
    }
    Ok(10.0 * (b_clean.frobenius().powi(2) / noise_power).log10())
}

/// Noise level `sigma` of [`add_matrix_noise`] giving the requested SNR.
pub fn sigma_for_snr(b_clean: &CovMatrix, snr: f64) -> f64 {
    let m = b_clean.m() as f64;
    let power = b_clean.frobenius().powi(2) / 10f64.powf(snr / 10.0);
    (power / (m * m)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_design, DesignSpec};
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn circ(m: usize) -> ArrayDesign {
        build_design(&DesignSpec::Circular { m, radius: 1.0 }).unwrap()
    }

    fn min_eig(b: &CovMatrix) -> f64 {
        SymmetricEigen::new(b.matrix().clone()).eigenvalues.min()
    }

    #[test]
    fn steering_examples() {
        assert_eq!(steering([0.0, 0.0], 1.3), C64::new(1.0, 0.0));
        assert!((steering([1.0, 0.0], PI / 2.0) - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((steering([1.0, 0.0], 0.0) - C64::new(1f64.cos(), 1f64.sin())).norm() < 1e-15);
    }

    #[test]
    fn forward_single_spike_is_rank_one() {
        let d = circ(7);
        let mu = SpikeMeasure::from_real(&[0.4], &[1.0]).unwrap();
        let b = forward(&d, &mu);
        let a = steering_vector(&d, 0.4);
        assert!((b.matrix() - &a * a.adjoint()).norm() < 1e-14);
        for k in 0..7 {
            assert!((b.matrix()[(k, k)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn forward_two_spikes_psd_trace() {
        let d = circ(9);
        let mu = SpikeMeasure::from_real(&[0.1, 2.0], &[1.0, 1.0]).unwrap();
        let b = forward(&d, &mu);
        assert!((b.matrix().trace() - C64::new(18.0, 0.0)).norm() < 1e-12);
        assert!(min_eig(&b) > -1e-10 * 18.0);
        let mu = SpikeMeasure::from_real(&[0.1, 2.0, -1.0], &[0.3, 0.5, 0.2]).unwrap();
        let b = forward(&d, &mu);
        for k in 0..9 {
            assert!((b.matrix()[(k, k)].re - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn snapshots_converge() {
        let d = circ(5);
        let mu = SpikeMeasure::from_real(&[0.7], &[1.0]).unwrap();
        let cfg = SnapshotConfig {
            t: 100_000,
            noise_sigma: 0.0,
            seed: 11,
        };
        let r = simulate_snapshots(&d, &mu, &cfg).unwrap();
        assert!(r.sub(&forward(&d, &mu)).frobenius() < 0.05);

        let empty = SpikeMeasure::default();
        let cfg = SnapshotConfig {
            t: 100_000,
            noise_sigma: 1.0,
            seed: 12,
        };
        let r = simulate_snapshots(&d, &empty, &cfg).unwrap();
        assert!(r.sub(&CovMatrix::identity(5)).frobenius() < 0.05);
    }

    #[test]
    fn single_snapshot_rank_one() {
        let d = circ(6);
        let mu = SpikeMeasure::from_real(&[0.2, 1.5], &[1.0, 2.0]).unwrap();
        let cfg = SnapshotConfig {
            t: 1,
            noise_sigma: 0.3,
            seed: 1,
        };
        let r = simulate_snapshots(&d, &mu, &cfg).unwrap();
        let ev = SymmetricEigen::new(r.matrix().clone()).eigenvalues;
        let mut v: Vec<f64> = ev.iter().copied().collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(v[0] > 0.0);
        assert!(v[1].abs() < 1e-12 * v[0]);
    }

    #[test]
    fn snapshot_error_halves_with_doubled_t() {
        let d = circ(5);
        let mu = SpikeMeasure::from_real(&[0.7, -1.0], &[1.0, 0.5]).unwrap();
        let limit = forward(&d, &mu).add(&CovMatrix::identity(5).scale(0.25));
        let mean_err = |t: usize| {
            (0..60)
                .map(|s| {
                    let cfg = SnapshotConfig {
                        t,
                        noise_sigma: 0.5,
                        seed: 1000 * t as u64 + s,
                    };
                    simulate_snapshots(&d, &mu, &cfg).unwrap().sub(&limit).frobenius().powi(2)
                })
                .sum::<f64>()
                / 60.0
        };
        let ratio = mean_err(200) / mean_err(400);
        assert!((ratio - 2.0).abs() < 0.6, "{ratio}");
    }

    #[test]
    fn negative_amplitude_rejected() {
        let d = circ(5);
        let mu = SpikeMeasure::from_real(&[0.7], &[-1.0]).unwrap();
        let cfg = SnapshotConfig {
            t: 10,
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(matches!(simulate_snapshots(&d, &mu, &cfg), Err(Error::NegativeAmplitude(_))));
    }

    #[test]
    fn matrix_noise_moments() {
        let b = CovMatrix::zeros(17);
        assert_eq!(add_matrix_noise(&b, 0.0, 3).unwrap(), b);
        let mean: f64 = (0..100)
            .map(|s| add_matrix_noise(&b, 0.1, s).unwrap().frobenius().powi(2))
            .sum::<f64>()
            / 100.0;
        assert!((mean - 2.89).abs() < 0.289, "{mean}");
        let h = add_matrix_noise(&b, 0.5, 9).unwrap();
        assert!((h.matrix() - h.matrix().adjoint()).norm() < 1e-12);
    }

    #[test]
    fn snr_examples() {
        let b = CovMatrix::identity(1).scale(10.0);
        assert!((snr_db(&b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(snr_db(&b, 100.0).unwrap().abs() < 1e-12);
        assert!(matches!(snr_db(&b, 0.0), Err(Error::ZeroNoise)));
        let d = circ(17);
        let b = forward(&d, &SpikeMeasure::from_real(&[0.3], &[1.0]).unwrap());
        assert!((b.frobenius().powi(2) - 289.0).abs() < 1e-9);
        let s = sigma_for_snr(&b, 10.0);
        // noise power sigma^2 m^2 = 28.9, i.e. per-entry variance 0.1
        assert!((s * s - 0.1).abs() < 1e-12);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let d = circ(4);
        let b = forward(&d, &SpikeMeasure::from_real(&[0.3, 1.0], &[1.0, 0.5]).unwrap());
        let back = CovMatrix::from_csv(&b.to_csv()).unwrap();
        assert!(back.sub(&b).frobenius() < 1e-15);
        let mut buf = Vec::new();
        b.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 16 * 16);
        assert_eq!(CovMatrix::read_binary(&buf[..]).unwrap(), b);
        let mu = SpikeMeasure::from_real(&[0.3, -2.0], &[1.0, 0.25]).unwrap();
        assert_eq!(SpikeMeasure::from_csv(&mu.to_csv()).unwrap(), mu);
    }

    proptest! {
        #[test]
        fn forward_hermitian_psd_linear(
            t1 in -3.1f64..3.1, t2 in -3.1f64..3.1, a1 in 0.0f64..2.0, a2 in 0.0f64..2.0,
        ) {
            prop_assume!(angle_dist(t1, t2) > 1e-6);
            let d = circ(8);
            let m1 = SpikeMeasure::from_real(&[t1], &[a1]).unwrap();
            let m2 = SpikeMeasure::from_real(&[t2], &[a2]).unwrap();
            let both = SpikeMeasure::from_real(&[t1, t2], &[a1, a2]).unwrap();
            let b = forward(&d, &both);
            prop_assert!((b.matrix() - b.matrix().adjoint()).norm() < 1e-12);
            let tr = b.matrix().trace().re;
            prop_assert!(min_eig(&b) >= -1e-10 * tr.max(1.0));
            let sum = forward(&d, &m1).add(&forward(&d, &m2));
            prop_assert!(sum.sub(&b).frobenius() < 1e-12);
        }

        #[test]
        fn rotation_invariance(phi in -3.0f64..3.0, t in -3.0f64..3.0) {
            let d = build_design(&DesignSpec::Lattice2d { side: 3, extent: 2.0 }).unwrap();
            let mu = SpikeMeasure::from_real(&[t, t + 1.0], &[1.0, 0.5]).unwrap();
            let b = forward(&d, &mu);
            let br = forward(&d.rotated(phi), &mu.rotated(phi));
            prop_assert!(b.sub(&br).frobenius() < 1e-12);
        }
    }
}
