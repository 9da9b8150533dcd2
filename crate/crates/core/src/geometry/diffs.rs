use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::design::ArrayDesign;
use crate::error::{Error, Result};
use crate::Point;

/// Deduplication tolerance (Euclidean) for lag points.
pub const DEDUP_TOL: f64 = 1e-9;

/// Distinct pairwise differences `Delta_l - Delta_k` with multiplicities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DifferenceSet {
    pub points: Vec<Point>,
    pub multiplicities: Vec<usize>,
}

struct Dedup {
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Point>,
    mult: Vec<usize>,
    tol: f64,
}

impl Dedup {
    fn new(tol: f64) -> Self {
        Dedup {
            cells: HashMap::new(),
            points: Vec::new(),
            mult: Vec::new(),
            tol,
        }
    }

    fn key(&self, p: Point) -> (i64, i64) {
        (
            (p[0] / self.tol).floor() as i64,
            (p[1] / self.tol).floor() as i64,
        )
    }

    fn insert(&mut self, p: Point, count: usize) {
        let (kx, ky) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.cells.get(&(kx + dx, ky + dy)) {
                    for &i in ids {
                        let q = self.points[i];
                        if (p[0] - q[0]).hypot(p[1] - q[1]) <= self.tol {
                            self.mult[i] += count;
                            return;
                        }
                    }
                }
            }
        }
        self.cells.entry((kx, ky)).or_default().push(self.points.len());
        self.points.push(p);
        self.mult.push(count);
    }

    fn finish(self) -> DifferenceSet {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        let r = |p: Point| p[0].hypot(p[1]);
        let a = |p: Point| p[1].atan2(p[0]);
        idx.sort_by(|&i, &j| {
            let (p, q) = (self.points[i], self.points[j]);
            (r(p), a(p))
                .partial_cmp(&(r(q), a(q)))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        DifferenceSet {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            multiplicities: idx.iter().map(|&i| self.mult[i]).collect(),
        }
    }
}

/// All pairwise differences, deduplicated at [`DEDUP_TOL`].
pub fn difference_set(design: &ArrayDesign) -> DifferenceSet {
    let mut d = Dedup::new(DEDUP_TOL);
    for a in &design.positions {
        for b in &design.positions {
            d.insert([a[0] - b[0], a[1] - b[1]], 1);
        }
    }
    d.finish()
}

/// Closed-form difference set of the circular design with an even number of
/// antennas: rings of radius `2 rho sin(j pi / m)`, `j = 0..m/2`, each holding
/// the points at angles `j pi / m - pi / 2 + 2 pi kappa / m`.
///
/// Multiplicities: `m` at the origin, 2 on the inner rings and 1 on the
/// outermost ring (`j = m/2`, the antipodal pairs).
pub fn circular_difference_closed_form(m: usize, rho: f64) -> Result<DifferenceSet> {
    if m % 2 == 1 {
        return Err(Error::OddMUnsupported(m));
    }
    if m < 4 {
        return Err(Error::invalid("m", format!("need m >= 4, got {m}")));
    }
    let mut d = Dedup::new(DEDUP_TOL);
    d.insert([0.0, 0.0], m);
    let mf = m as f64;
    for j in 1..=m / 2 {
        let r = 2.0 * rho * (j as f64 * PI / mf).sin();
        let mult = if j == m / 2 { 1 } else { 2 };
        for kappa in 1..=m {
            let a = j as f64 * PI / mf - PI / 2.0 + 2.0 * PI * kappa as f64 / mf;
            d.insert([r * a.cos(), r * a.sin()], mult);
        }
    }
    Ok(d.finish())
}

impl DifferenceSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_multiplicity(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    pub fn position(&self, p: Point, tol: f64) -> Option<usize> {
        self.points
            .iter()
            .position(|q| (p[0] - q[0]).hypot(p[1] - q[1]) <= tol)
    }

    /// `q` in the set implies `-q` in the set.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.points
            .iter()
            .all(|q| self.position([-q[0], -q[1]], tol).is_some())
    }

    /// Set equality (ignoring multiplicities) within `tol`.
    pub fn same_points(&self, other: &DifferenceSet, tol: f64) -> bool {
        self.len() == other.len()
            && self.points.iter().all(|p| other.position(*p, tol).is_some())
    }

    pub fn max_radius(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::design::{build_design, DesignSpec};

    fn circ(m: usize, r: f64) -> ArrayDesign {
        build_design(&DesignSpec::Circular { m, radius: r }).unwrap()
    }

    #[test]
    fn origin_has_multiplicity_m() {
        for spec in [
            DesignSpec::Circular { m: 9, radius: 1.0 },
            DesignSpec::Ula1d { m: 6, extent: 1.0 },
            DesignSpec::Lattice2d { side: 3, extent: 2.0 },
        ] {
            let d = build_design(&spec).unwrap();
            let ds = difference_set(&d);
            let o = ds.position([0.0, 0.0], 1e-12).unwrap();
            assert_eq!(ds.multiplicities[o], d.m());
            assert_eq!(ds.total_multiplicity(), d.m() * d.m());
            assert!(ds.is_symmetric(1e-9));
        }
    }

    #[test]
    fn ula_three_has_five_lags() {
        let d = build_design(&DesignSpec::Ula1d { m: 3, extent: 1.0 }).unwrap();
        let ds = difference_set(&d);
        assert_eq!(ds.len(), 5);
        for k in -2i32..=2 {
            assert!(ds.position([0.0, k as f64 / 3.0], 1e-12).is_some());
        }
    }

    #[test]
    fn circular_four_enumerated() {
        let ds = difference_set(&circ(4, 1.0));
        let expected: [Point; 9] = [
            [0.0, 0.0],
            [1.0, 1.0],
            [1.0, -1.0],
            [-1.0, 1.0],
            [-1.0, -1.0],
            [2.0, 0.0],
            [-2.0, 0.0],
            [0.0, 2.0],
            [0.0, -2.0],
        ];
        assert_eq!(ds.len(), 9);
        for p in expected {
            assert!(ds.position(p, 1e-12).is_some(), "{p:?}");
        }
        let cf = circular_difference_closed_form(4, 1.0).unwrap();
        assert!(cf.same_points(&ds, 1e-9));
    }

    #[test]
    fn closed_form_radii_m6() {
        let cf = circular_difference_closed_form(6, 2.0).unwrap();
        let mut radii: Vec<f64> = cf.points.iter().map(|p| p[0].hypot(p[1])).collect();
        radii.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let want = [0.0, 2.0, 2.0 * 3f64.sqrt(), 4.0];
        assert_eq!(radii.len(), 4);
        for (r, w) in radii.iter().zip(want) {
            assert!((r - w).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_enumeration_with_multiplicities() {
        for m in (4..=40).step_by(2) {
            for rho in [0.5, 1.0, 2.0] {
                let cf = circular_difference_closed_form(m, rho).unwrap();
                let en = difference_set(&circ(m, rho));
                assert!(cf.same_points(&en, 1e-9), "m={m} rho={rho}");
                assert_eq!(cf.total_multiplicity(), m * m);
                for (p, &c) in cf.points.iter().zip(&cf.multiplicities) {
                    let i = en.position(*p, 1e-9).unwrap();
                    assert_eq!(en.multiplicities[i], c);
                }
            }
        }
    }

    #[test]
    fn closed_form_rejects_odd() {
        assert!(matches!(
            circular_difference_closed_form(17, 1.0),
            Err(Error::OddMUnsupported(17))
        ));
    }
}
