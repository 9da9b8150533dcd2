use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::{ArrayDesign, DesignSpec};
use super::diffs::difference_set;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;
use crate::special::{sinc, wrap_angle};
use crate::Point;

/// Boundary band: samples closer than this to a cell boundary are not
/// classified.
pub const BOUNDARY_BAND: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellShape {
    Disk {
        center: Point,
        radius: f64,
    },
    AnnularSector {
        r_in: f64,
        r_out: f64,
        angle_center: f64,
        angle_halfwidth: f64,
    },
    Rect {
        center: Point,
        halfwidths: [f64; 2],
    },
    /// `{ y_lo < y < y_hi } ∩ B_clip(0)`.
    Slab {
        y_lo: f64,
        y_hi: f64,
        clip_radius: f64,
    },
    Point {
        q: Point,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringCell {
    pub shape: CellShape,
    pub anchor: Point,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Covering {
    pub cells: Vec<CoveringCell>,
    pub design: DesignSpec,
    /// Radius of the disk the cells are claimed to cover.
    pub r_cov: f64,
    /// `rho_J / rho` for circular designs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<f64>,
}

fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

/// Centroid of `{ r_in < r < r_out, |arg - alpha| < halfwidth }`.
pub fn annular_sector_centroid(r_in: f64, r_out: f64, alpha: f64, halfwidth: f64) -> Result<Point> {
    if r_in == r_out {
        return Err(Error::DegenerateSector);
    }
    if !(0.0 <= r_in && r_in < r_out) {
        return Err(Error::invalid("r_in", "need 0 <= r_in < r_out"));
    }
    if !(halfwidth > 0.0 && halfwidth <= PI) {
        return Err(Error::invalid("halfwidth", "need 0 < halfwidth <= pi"));
    }
    let r = sector_centroid_radius(r_in, r_out, halfwidth);
    Ok([r * alpha.cos(), r * alpha.sin()])
}

fn sector_centroid_radius(a: f64, b: f64, h: f64) -> f64 {
    2.0 * (a * a + a * b + b * b) / (3.0 * (a + b)) * sinc(h)
}

/// Output of the ring-radius recursion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RingRadii {
    /// Boundaries `s_1 = 0, s_2, ..`; ring `j` (1-based) spans `(s_j, s_{j+1})`.
    pub s: Vec<f64>,
    /// Ring radii `rho_j` that received a sector ring.
    pub rho: Vec<f64>,
    pub theta_hat: f64,
}

/// Ring boundaries `s_j` such that each annular sector of halfwidth `h_j`
/// between `s_j` and `s_{j+1}` has its centroid at radius `rho_j`.
/// Stops at the first ring where `s_j <= rho_j <= s_{j+1}` fails.
pub fn ring_radii(rhos: &[f64], halfwidths: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0];
    for (&rho, &h) in rhos.iter().zip(halfwidths) {
        let sj = *s.last().unwrap();
        let c = 3.0 * rho / (2.0 * sinc(h));
        if sj >= c {
            break;
        }
        let next = 0.5 * (c - sj) * (1.0 + (1.0 + 4.0 * sj / (c - sj)).sqrt());
        if !(sj <= rho && rho <= next) {
            break;
        }
        s.push(next);
    }
    s
}

/// Ring radii for the circular design with `m` antennas on a circle of
/// radius `rho`, using sectors of halfwidth `pi / m` around the lag rings
/// `2 rho sin(j pi / m)`.
pub fn circular_radii(m: usize, rho: f64) -> Result<RingRadii> {
    if m < 5 {
        return Err(Error::MTooSmall(m));
    }
    let rhos: Vec<f64> = (1..=m / 2)
        .map(|j| 2.0 * rho * (j as f64 * PI / m as f64).sin())
        .collect();
    let hw = vec![PI / m as f64; rhos.len()];
    let s = ring_radii(&rhos, &hw);
    let n = s.len() - 1;
    Ok(RingRadii {
        rho: rhos[..n].to_vec(),
        theta_hat: if n == 0 { 0.0 } else { rhos[n - 1] / rho },
        s,
    })
}

impl CellShape {
    pub fn is_point(&self) -> bool {
        matches!(self, CellShape::Point { .. })
    }

    /// Approximate signed distance to the boundary: positive inside.
    pub fn margin(&self, p: Point) -> f64 {
        match *self {
            CellShape::Disk { center, radius } => radius - norm([p[0] - center[0], p[1] - center[1]]),
            CellShape::AnnularSector {
                r_in,
                r_out,
                angle_center,
                angle_halfwidth,
            } => {
                let r = norm(p);
                let radial = (r - r_in).min(r_out - r);
                if angle_halfwidth >= PI {
                    return radial;
                }
                let d = wrap_angle(p[1].atan2(p[0]) - angle_center).abs();
                let ang = (angle_halfwidth - d) * r;
                radial.min(ang)
            }
            CellShape::Rect { center, halfwidths } => (halfwidths[0] - (p[0] - center[0]).abs())
                .min(halfwidths[1] - (p[1] - center[1]).abs()),
            CellShape::Slab {
                y_lo,
                y_hi,
                clip_radius,
            } => (p[1] - y_lo).min(y_hi - p[1]).min(clip_radius - norm(p)),
            CellShape::Point { q } => -norm([p[0] - q[0], p[1] - q[1]]),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.margin(p) > 0.0
    }

    /// Axis-aligned bounding box `[xmin, ymin, xmax, ymax]`.
    pub fn bbox(&self) -> [f64; 4] {
        match *self {
            CellShape::Disk { center, radius } => [
                center[0] - radius,
                center[1] - radius,
                center[0] + radius,
                center[1] + radius,
            ],
            CellShape::AnnularSector {
                r_in,
                r_out,
                angle_center,
                angle_halfwidth,
            } => {
                let mut pts = Vec::with_capacity(8);
                for a in [angle_center - angle_halfwidth, angle_center + angle_halfwidth] {
                    for r in [r_in, r_out] {
                        pts.push([r * a.cos(), r * a.sin()]);
                    }
                }
                for k in 0..4 {
                    let a = k as f64 * PI / 2.0;
                    if wrap_angle(a - angle_center).abs() <= angle_halfwidth {
                        pts.push([r_out * a.cos(), r_out * a.sin()]);
                    }
                }
                bbox_of(&pts)
            }
            CellShape::Rect { center, halfwidths } => [
                center[0] - halfwidths[0],
                center[1] - halfwidths[1],
                center[0] + halfwidths[0],
                center[1] + halfwidths[1],
            ],
            CellShape::Slab {
                y_lo,
                y_hi,
                clip_radius,
            } => [
                -clip_radius,
                y_lo.max(-clip_radius),
                clip_radius,
                y_hi.min(clip_radius),
            ],
            CellShape::Point { q } => [q[0], q[1], q[0], q[1]],
        }
    }

    /// Centroid by tensor Gauss-Legendre quadrature, independent of the
    /// closed forms used to construct the cell.
    pub fn centroid_quadrature(&self) -> Point {
        match *self {
            CellShape::Point { q } => q,
            CellShape::Disk { center, .. } => center,
            CellShape::Rect { center, halfwidths } => {
                let (xs, wx) = gauss_legendre_on(16, center[0] - halfwidths[0], center[0] + halfwidths[0]);
                let (ys, wy) = gauss_legendre_on(16, center[1] - halfwidths[1], center[1] + halfwidths[1]);
                let (mut a, mut mx, mut my) = (0.0, 0.0, 0.0);
                for (x, w1) in xs.iter().zip(&wx) {
                    for (y, w2) in ys.iter().zip(&wy) {
                        a += w1 * w2;
                        mx += w1 * w2 * x;
                        my += w1 * w2 * y;
                    }
                }
                [mx / a, my / a]
            }
            CellShape::AnnularSector {
                r_in,
                r_out,
                angle_center,
                angle_halfwidth,
            } => {
                let (rs, wr) = gauss_legendre_on(24, r_in, r_out);
                let (ts, wt) = gauss_legendre_on(
                    48,
                    angle_center - angle_halfwidth,
                    angle_center + angle_halfwidth,
                );
                let (mut a, mut mx, mut my) = (0.0, 0.0, 0.0);
                for (r, w1) in rs.iter().zip(&wr) {
                    for (t, w2) in ts.iter().zip(&wt) {
                        let w = w1 * w2 * r;
                        a += w;
                        mx += w * r * t.cos();
                        my += w * r * t.sin();
                    }
                }
                [mx / a, my / a]
            }
            CellShape::Slab {
                y_lo,
                y_hi,
                clip_radius: c,
            } => {
                // y = c sin t removes the square-root endpoint singularity
                let lo = (y_lo / c).clamp(-1.0, 1.0).asin();
                let hi = (y_hi / c).clamp(-1.0, 1.0).asin();
                let (ts, wt) = gauss_legendre_on(64, lo, hi);
                let (mut a, mut my) = (0.0, 0.0);
                for (t, w) in ts.iter().zip(&wt) {
                    let chord = 2.0 * c * t.cos();
                    let dy = c * t.cos();
                    a += w * chord * dy;
                    my += w * chord * dy * c * t.sin();
                }
                [0.0, my / a]
            }
        }
    }
}

fn bbox_of(pts: &[Point]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in pts {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].min(p[1]);
        b[2] = b[2].max(p[0]);
        b[3] = b[3].max(p[1]);
    }
    b
}

/// Area of `{lo < y < hi} ∩ B_r(0)`.
pub(crate) fn slab_area(lo: f64, hi: f64, r: f64) -> f64 {
    let f = |y: f64| {
        let y = y.clamp(-r, r);
        y * (r * r - y * y).max(0.0).sqrt() + r * r * (y / r).asin()
    };
    (f(hi) - f(lo)).max(0.0)
}

fn slab_centroid_y(lo: f64, hi: f64, r: f64) -> f64 {
    let mom = |y: f64| {
        let y = y.clamp(-r, r);
        -(2.0 / 3.0) * (r * r - y * y).max(0.0).powf(1.5)
    };
    (mom(hi) - mom(lo)) / slab_area(lo, hi, r)
}

/// Lower boundary `lo` of the slab `(lo, hi) ∩ B_r` whose centroid is at
/// height `c`, if one exists in `(-r, c)`.
fn solve_slab_lower(hi: f64, c: f64, r: f64) -> Option<f64> {
    let g = |lo: f64| slab_centroid_y(lo, hi, r) - c;
    let (mut a, mut b) = (-r, c);
    if g(a) > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if g(mid) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
        if b - a < 1e-15 * r {
            break;
        }
    }
    Some(0.5 * (a + b))
}

/// Build a covering of `B_R(0)` whose cells have the lags of `design` as
/// centroids.
///
/// * lattice and co-prime: squares of side `extent / side` around each lag
///   (lags outside the square grid reach are point cells);
/// * circular: a point cell at the origin, annular-sector rings from the
///   radius recursion and point cells beyond the last valid ring;
/// * 1-D ULA: horizontal slabs clipped to `B_R`, solved from the top cap
///   down so that the outermost slab reaches the circle.
pub fn build_covering(design: &ArrayDesign, r: f64) -> Result<Covering> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::invalid("R", format!("must be positive, got {r}")));
    }
    match &design.spec {
        DesignSpec::Lattice2d { side, extent }
        | DesignSpec::Coprime2d { side, extent, .. } => lattice_covering(design, *side, *extent),
        DesignSpec::Circular { m, radius } => circular_covering(design, *m, *radius),
        DesignSpec::Ula1d { .. } => ula_covering(design, r),
        DesignSpec::Custom { .. } => Err(Error::invalid(
            "design",
            "coverings are constructed for ula1d, lattice2d, coprime2d and circular designs",
        )),
    }
}

fn lattice_covering(design: &ArrayDesign, side: usize, extent: f64) -> Result<Covering> {
    let h = extent / side as f64;
    let ds = difference_set(design);
    let cells = ds
        .points
        .iter()
        .map(|&q| CoveringCell {
            shape: CellShape::Rect {
                center: q,
                halfwidths: [h / 2.0, h / 2.0],
            },
            anchor: q,
        })
        .collect();
    Ok(Covering {
        cells,
        design: design.spec.clone(),
        r_cov: (side as f64 - 0.5) * h,
        theta_hat: None,
    })
}

fn circular_covering(design: &ArrayDesign, m: usize, rho: f64) -> Result<Covering> {
    if m < 5 {
        return Err(Error::MTooSmall(m));
    }
    let ds = difference_set(design);
    // group nonzero lags into rings by radius
    let mut rings: Vec<(f64, Vec<Point>)> = Vec::new();
    for &q in &ds.points {
        let r = norm(q);
        if r < 1e-9 * rho {
            continue;
        }
        match rings.last_mut() {
            Some((r0, pts)) if (r - *r0).abs() < 1e-9 * rho.max(1.0) => pts.push(q),
            _ => rings.push((r, vec![q])),
        }
    }
    let rhos: Vec<f64> = rings.iter().map(|r| r.0).collect();
    let hws: Vec<f64> = rings.iter().map(|r| PI / r.1.len() as f64).collect();
    let s = ring_radii(&rhos, &hws);
    let mut n_valid = s.len() - 1;

    let make = |n_valid: usize| -> Vec<CoveringCell> {
        let mut cells = vec![CoveringCell {
            shape: CellShape::Point { q: [0.0, 0.0] },
            anchor: [0.0, 0.0],
        }];
        for (i, (_, pts)) in rings.iter().enumerate() {
            for &q in pts {
                let shape = if i < n_valid {
                    CellShape::AnnularSector {
                        r_in: s[i],
                        r_out: s[i + 1],
                        angle_center: q[1].atan2(q[0]),
                        angle_halfwidth: hws[i],
                    }
                } else {
                    CellShape::Point { q }
                };
                cells.push(CoveringCell { shape, anchor: q });
            }
        }
        cells
    };

    // a point-cell lag strictly inside a sector would give that sector two
    // lags; drop sector rings from the outside until none does
    loop {
        let cells = make(n_valid);
        let bad = cells.iter().any(|c| {
            c.shape.is_point()
                && norm(c.anchor) > 0.0
                && cells
                    .iter()
                    .any(|o| !o.shape.is_point() && o.shape.margin(c.anchor) > BOUNDARY_BAND)
        });
        if !bad || n_valid == 0 {
            return Ok(Covering {
                cells,
                design: design.spec.clone(),
                r_cov: s[n_valid],
                theta_hat: Some(if n_valid == 0 { 0.0 } else { rhos[n_valid - 1] / rho }),
            });
        }
        n_valid -= 1;
    }
}

fn ula_covering(design: &ArrayDesign, r: f64) -> Result<Covering> {
    let ds = difference_set(design);
    // lags lie on the y axis; the upper half (y > 0) drives the construction
    let mut ys: Vec<f64> = ds
        .points
        .iter()
        .map(|q| q[1])
        .filter(|&y| y > 1e-12 && y < r)
        .collect();
    ys.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // boundaries from the top: lower edge of the slab hosting ys[i]
    let mut upper = r;
    let mut lowers = Vec::with_capacity(ys.len());
    for (i, &y) in ys.iter().enumerate() {
        let next_lag = ys.get(i + 1).copied().unwrap_or(0.0);
        let lo = solve_slab_lower(upper, y, r).ok_or(Error::InfeasibleCovering(i))?;
        if lo <= next_lag {
            return Err(Error::InfeasibleCovering(i));
        }
        lowers.push(lo);
        upper = lo;
    }
    let mut cells = Vec::new();
    let mut hi = r;
    for (&y, &lo) in ys.iter().zip(&lowers) {
        for sign in [1.0, -1.0] {
            let (a, b) = if sign > 0.0 { (lo, hi) } else { (-hi, -lo) };
            cells.push(CoveringCell {
                shape: CellShape::Slab {
                    y_lo: a,
                    y_hi: b,
                    clip_radius: r,
                },
                anchor: [0.0, sign * y],
            });
        }
        hi = lo;
    }
    cells.push(CoveringCell {
        shape: CellShape::Slab {
            y_lo: -hi,
            y_hi: hi,
            clip_radius: r,
        },
        anchor: [0.0, 0.0],
    });
    for q in &ds.points {
        if q[1].abs() >= r {
            cells.push(CoveringCell {
                shape: CellShape::Point { q: *q },
                anchor: *q,
            });
        }
    }
    Ok(Covering {
        cells,
        design: design.spec.clone(),
        r_cov: r,
        theta_hat: None,
    })
}

/// Outcome of uniform sampling over `B_R`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleReport {
    pub samples: usize,
    /// Samples strictly inside two or more cells.
    pub overlaps: usize,
    /// Samples in no cell and not within the boundary band of any.
    pub uncovered: usize,
    pub boundary: usize,
}

impl SampleReport {
    pub fn ok(&self) -> bool {
        self.overlaps == 0 && self.uncovered == 0
    }
}

/// Uniform bucket grid over cell bounding boxes.
pub(crate) struct CellIndex<'a> {
    cells: Vec<&'a CellShape>,
    buckets: Vec<Vec<u32>>,
    n: usize,
    lo: f64,
    step: f64,
}

impl<'a> CellIndex<'a> {
    pub(crate) fn new(cov: &'a Covering, r: f64) -> Self {
        let cells: Vec<&CellShape> = cov
            .cells
            .iter()
            .map(|c| &c.shape)
            .filter(|s| !s.is_point())
            .collect();
        let n = ((cells.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let lo = -r;
        let step = 2.0 * r / n as f64;
        let mut buckets = vec![Vec::new(); n * n];
        let cl = |v: f64| (((v - lo) / step).floor().max(0.0) as usize).min(n - 1);
        for (id, c) in cells.iter().enumerate() {
            let b = c.bbox();
            if b[2] < -r || b[0] > r || b[3] < -r || b[1] > r {
                continue;
            }
            for i in cl(b[0] - BOUNDARY_BAND)..=cl(b[2] + BOUNDARY_BAND) {
                for j in cl(b[1] - BOUNDARY_BAND)..=cl(b[3] + BOUNDARY_BAND) {
                    buckets[i * n + j].push(id as u32);
                }
            }
        }
        CellIndex {
            cells,
            buckets,
            n,
            lo,
            step,
        }
    }

    pub(crate) fn candidates(&self, p: Point) -> impl Iterator<Item = &'a CellShape> + '_ {
        let cl = |v: f64| (((v - self.lo) / self.step).floor().max(0.0) as usize).min(self.n - 1);
        self.buckets[cl(p[0]) * self.n + cl(p[1])]
            .iter()
            .map(move |&i| self.cells[i as usize])
    }
}

/// Sample `n` uniform points in `B_R` and classify them against the cells.
pub fn sample_check(cov: &Covering, r: f64, n: usize, seed: u64) -> SampleReport {
    let idx = CellIndex::new(cov, r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SampleReport {
        samples: n,
        overlaps: 0,
        uncovered: 0,
        boundary: 0,
    };
    for _ in 0..n {
        let rad = r * rng.random::<f64>().sqrt();
        let t = 2.0 * PI * rng.random::<f64>();
        let p = [rad * t.cos(), rad * t.sin()];
        let (mut inside, mut near) = (0, false);
        for c in idx.candidates(p) {
            let mg = c.margin(p);
            if mg > BOUNDARY_BAND {
                inside += 1;
            } else if mg >= -BOUNDARY_BAND {
                near = true;
            }
        }
        if inside >= 2 {
            rep.overlaps += 1;
        } else if inside == 0 {
            if near {
                rep.boundary += 1;
            } else {
                rep.uncovered += 1;
            }
        }
    }
    rep
}

/// Largest `|quadrature centroid - anchor| / diam` over non-point cells.
pub fn max_centroid_residual(cov: &Covering) -> f64 {
    cov.cells
        .iter()
        .filter(|c| !c.shape.is_point())
        .map(|c| {
            let g = c.shape.centroid_quadrature();
            let b = c.shape.bbox();
            let diam = (b[2] - b[0]).hypot(b[3] - b[1]);
            norm([g[0] - c.anchor[0], g[1] - c.anchor[1]]) / diam
        })
        .fold(0.0, f64::max)
}
