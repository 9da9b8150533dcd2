//! Real orthonormal coordinates on Hermitian matrices.
//!
//! Index `k < m` is the diagonal entry `X_kk`; each pair `k < l` then gets
//! two coordinates, `sqrt 2 Re X_kl` and `sqrt 2 Im X_kl`, in row-major
//! pair order. With this basis `<X, Y> = Re tr(X* Y)` is the Euclidean
//! inner product of the coordinate vectors.

use nalgebra::{DMatrix, DVector};

use crate::C64;

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn herm_dim(m: usize) -> usize {
    m * m
}

/// Coordinates of the Hermitian part of `x`.
pub fn to_coords(x: &DMatrix<C64>) -> DVector<f64> {
    let m = x.nrows();
    let mut v = DVector::zeros(m * m);
    for k in 0..m {
        v[k] = x[(k, k)].re;
    }
    let mut i = m;
    for k in 0..m {
        for l in k + 1..m {
            let z = (x[(k, l)] + x[(l, k)].conj()) * 0.5;
            v[i] = SQRT2 * z.re;
            v[i + 1] = SQRT2 * z.im;
            i += 2;
        }
    }
    v
}

pub fn from_coords(v: &[f64], m: usize) -> DMatrix<C64> {
    let mut x = DMatrix::zeros(m, m);
    for k in 0..m {
        x[(k, k)] = C64::new(v[k], 0.0);
    }
    let mut i = m;
    for k in 0..m {
        for l in k + 1..m {
            let z = C64::new(v[i], v[i + 1]) / SQRT2;
            x[(k, l)] = z;
            x[(l, k)] = z.conj();
            i += 2;
        }
    }
    x
}

/// The basis element for coordinate `i` as a list of `((row, col), value)`.
pub fn basis_entries(i: usize, m: usize) -> Vec<((usize, usize), C64)> {
    if i < m {
        return vec![((i, i), C64::new(1.0, 0.0))];
    }
    let pair = (i - m) / 2;
    let imag = (i - m) % 2 == 1;
    let (mut k, mut rem) = (0, pair);
    while rem >= m - k - 1 {
        rem -= m - k - 1;
        k += 1;
    }
    let l = k + 1 + rem;
    let h = 1.0 / SQRT2;
    if imag {
        vec![((k, l), C64::new(0.0, h)), ((l, k), C64::new(0.0, -h))]
    } else {
        vec![((k, l), C64::new(h, 0.0)), ((l, k), C64::new(h, 0.0))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_herm(m: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, m, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        &a + a.adjoint()
    }

    #[test]
    fn basis_matches_from_coords() {
        let m = 5;
        for i in 0..herm_dim(m) {
            let mut e = vec![0.0; herm_dim(m)];
            e[i] = 1.0;
            let x = from_coords(&e, m);
            let mut y = DMatrix::zeros(m, m);
            for ((r, c), v) in basis_entries(i, m) {
                y[(r, c)] = v;
            }
            assert!((x - y).norm() < 1e-15, "{i}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_and_isometry(seed in 0u64..500, m in 1usize..7) {
            let x = random_herm(m, seed);
            let y = random_herm(m, seed + 1000);
            let vx = to_coords(&x);
            prop_assert!((from_coords(vx.as_slice(), m) - &x).norm() < 1e-13);
            let ip = (x.adjoint() * &y).trace().re;
            prop_assert!((vx.dot(&to_coords(&y)) - ip).abs() < 1e-12);
            prop_assert!((vx.norm() - x.norm()).abs() < 1e-12);
        }
    }
}
