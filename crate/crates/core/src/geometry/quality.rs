use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::covering::{slab_area, CellShape, Covering};
use crate::Point;

/// Monte-Carlo controls for cells straddling the boundary of `B_R`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QualityOptions {
    /// Samples per straddling cell (stratified, two per stratum).
    pub samples: usize,
    pub seed: u64,
}

impl Default for QualityOptions {
    fn default() -> Self {
        QualityOptions {
            samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QualityParams {
    #[serde(rename = "R")]
    pub r: f64,
    pub beta: f64,
    pub gamma: f64,
    /// 95% confidence half-widths from the stratified estimates (0 when
    /// every area is exact).
    pub beta_halfwidth: f64,
    pub gamma_halfwidth: f64,
    pub mc_cells: usize,
    pub samples_per_cell: usize,
    pub max_area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl QualityParams {
    pub fn is_finite(&self) -> bool {
        self.beta.is_finite() && self.gamma.is_finite()
    }
}

/// Area of `I ∩ B_R` and its 95% half-width.
pub fn clipped_area(shape: &CellShape, r: f64, opts: QualityOptions, salt: u64) -> (f64, f64) {
    match *shape {
        CellShape::Point { .. } => (0.0, 0.0),
        CellShape::AnnularSector {
            r_in,
            r_out,
            angle_halfwidth,
            ..
        } => {
            let (a, b) = (r_in.min(r), r_out.min(r));
            (angle_halfwidth * (b * b - a * a), 0.0)
        }
        CellShape::Slab {
            y_lo,
            y_hi,
            clip_radius,
        } => (slab_area(y_lo, y_hi, clip_radius.min(r)), 0.0),
        CellShape::Rect { .. } | CellShape::Disk { .. } => {
            if fully_inside(shape, r) {
                (full_area(shape), 0.0)
            } else if fully_outside(shape, r) {
                (0.0, 0.0)
            } else {
                stratified_area(shape, r, opts, salt)
            }
        }
    }
}

fn full_area(shape: &CellShape) -> f64 {
    match *shape {
        CellShape::Rect { halfwidths, .. } => 4.0 * halfwidths[0] * halfwidths[1],
        CellShape::Disk { radius, .. } => PI * radius * radius,
        _ => unreachable!(),
    }
}

fn far_corner(shape: &CellShape) -> f64 {
    match *shape {
        CellShape::Rect { center, halfwidths } => {
            (center[0].abs() + halfwidths[0]).hypot(center[1].abs() + halfwidths[1])
        }
        CellShape::Disk { center, radius } => center[0].hypot(center[1]) + radius,
        _ => unreachable!(),
    }
}

fn fully_inside(shape: &CellShape, r: f64) -> bool {
    far_corner(shape) <= r
}

fn fully_outside(shape: &CellShape, r: f64) -> bool {
    match *shape {
        CellShape::Rect { center, halfwidths } => {
            let dx = (center[0].abs() - halfwidths[0]).max(0.0);
            let dy = (center[1].abs() - halfwidths[1]).max(0.0);
            dx.hypot(dy) >= r
        }
        CellShape::Disk { center, radius } => center[0].hypot(center[1]) - radius >= r,
        _ => unreachable!(),
    }
}

fn straddles(shape: &CellShape, r: f64) -> bool {
    matches!(shape, CellShape::Rect { .. } | CellShape::Disk { .. })
        && !fully_inside(shape, r)
        && !fully_outside(shape, r)
}

fn stratified_area(shape: &CellShape, r: f64, opts: QualityOptions, salt: u64) -> (f64, f64) {
    let b = shape.bbox();
    let g = (((opts.samples / 2).max(4) as f64).sqrt().floor() as usize).max(2);
    let (wx, wy) = ((b[2] - b[0]) / g as f64, (b[3] - b[1]) / g as f64);
    let stratum = wx * wy;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (mut area, mut var) = (0.0, 0.0);
    for i in 0..g {
        for j in 0..g {
            let mut hits = [0.0; 2];
            for h in hits.iter_mut() {
                let p = [
                    b[0] + (i as f64 + rng.random::<f64>()) * wx,
                    b[1] + (j as f64 + rng.random::<f64>()) * wy,
                ];
                if shape.margin(p) > 0.0 && p[0].hypot(p[1]) < r {
                    *h = 1.0;
                }
            }
            let mean = 0.5 * (hits[0] + hits[1]);
            area += stratum * mean;
            // unbiased per-stratum variance of the mean with two samples
            let s2 = 0.5 * (hits[0] - hits[1]).powi(2);
            var += stratum * stratum * s2 / 2.0;
        }
    }
    (area, 1.96 * var.sqrt())
}

/// Diameter of `I ∩ B_R`; 0 for empty intersections and point cells.
pub fn clipped_diameter(shape: &CellShape, r: f64) -> f64 {
    match *shape {
        CellShape::Point { .. } => 0.0,
        CellShape::AnnularSector {
            r_in,
            r_out,
            angle_halfwidth,
            ..
        } => {
            if r_in >= r {
                return 0.0;
            }
            sector_diameter(r_in, r_out.min(r), angle_halfwidth)
        }
        CellShape::Slab {
            y_lo,
            y_hi,
            clip_radius,
        } => {
            let c = clip_radius.min(r);
            let (lo, hi) = (y_lo.max(-c), y_hi.min(c));
            if lo >= hi {
                return 0.0;
            }
            if lo <= 0.0 && hi >= 0.0 {
                return 2.0 * c;
            }
            let x = |y: f64| (c * c - y * y).max(0.0).sqrt();
            let pts = [[x(lo), lo], [-x(lo), lo], [x(hi), hi], [-x(hi), hi]];
            max_pair(&pts)
        }
        CellShape::Rect { halfwidths, .. } if fully_inside(shape, r) => {
            2.0 * halfwidths[0].hypot(halfwidths[1])
        }
        CellShape::Disk { radius, .. } if fully_inside(shape, r) => 2.0 * radius,
        _ => {
            if fully_outside(shape, r) {
                0.0
            } else {
                discretized_diameter(shape, r)
            }
        }
    }
}

/// Closed-form diameter of an annular sector.
pub fn sector_diameter(a: f64, b: f64, h: f64) -> f64 {
    let outer = if h >= PI / 2.0 { 2.0 * b } else { 2.0 * b * h.sin() };
    let cross = (a * a + b * b - 2.0 * a * b * (2.0 * h).min(PI).cos())
        .max(0.0)
        .sqrt();
    outer.max(cross).max(b - a)
}

fn max_pair(pts: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in 0..i {
            best = best.max((pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]));
        }
    }
    best
}

/// Boundary of `I ∩ B_R` sampled at `n` parameter values per piece.
fn boundary_points(shape: &CellShape, r: f64, n: usize, around: Option<(f64, f64)>) -> Vec<(f64, Point)> {
    let mut out = Vec::new();
    let inside_disk = |p: Point| p[0].hypot(p[1]) <= r * (1.0 + 1e-12);
    let (t0, t1) = around.unwrap_or((0.0, 1.0));
    // cell boundary parameterized by t in [0,1), disk circle by t in [1,2)
    for k in 0..n {
        let t = t0 + (t1 - t0) * k as f64 / n as f64;
        let t = t.rem_euclid(2.0);
        let p = if t < 1.0 {
            cell_boundary(shape, t)
        } else {
            let a = 2.0 * PI * (t - 1.0);
            let p = [r * a.cos(), r * a.sin()];
            if shape.margin(p) < -1e-12 {
                continue;
            }
            p
        };
        if inside_disk(p) {
            out.push((t, p));
        }
    }
    out
}

fn cell_boundary(shape: &CellShape, t: f64) -> Point {
    match *shape {
        CellShape::Rect { center, halfwidths } => {
            let (hx, hy) = (halfwidths[0], halfwidths[1]);
            let per = 4.0 * (hx + hy);
            let mut s = t * per;
            let edges = [
                ([-hx, -hy], [1.0, 0.0], 2.0 * hx),
                ([hx, -hy], [0.0, 1.0], 2.0 * hy),
                ([hx, hy], [-1.0, 0.0], 2.0 * hx),
                ([-hx, hy], [0.0, -1.0], 2.0 * hy),
            ];
            for (start, dir, len) in edges {
                if s <= len {
                    return [center[0] + start[0] + dir[0] * s, center[1] + start[1] + dir[1] * s];
                }
                s -= len;
            }
            [center[0] - hx, center[1] + hy]
        }
        CellShape::Disk { center, radius } => {
            let a = 2.0 * PI * t;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        }
        _ => unreachable!(),
    }
}

fn discretized_diameter(shape: &CellShape, r: f64) -> f64 {
    let n = 1024;
    let pts = boundary_points(shape, r, 2 * n, Some((0.0, 2.0)));
    if pts.len() < 2 {
        return 0.0;
    }
    let (mut best, mut bi, mut bj) = (0.0, 0, 0);
    for i in 0..pts.len() {
        for j in 0..i {
            let d = (pts[i].1[0] - pts[j].1[0]).hypot(pts[i].1[1] - pts[j].1[1]);
            if d > best {
                (best, bi, bj) = (d, i, j);
            }
        }
    }
    // refine around the best pair
    let h = 2.0 / (2 * n) as f64;
    let a = boundary_points(shape, r, 256, Some((pts[bi].0 - h, pts[bi].0 + h)));
    let b = boundary_points(shape, r, 256, Some((pts[bj].0 - h, pts[bj].0 + h)));
    for p in &a {
        for q in &b {
            best = best.max((p.1[0] - q.1[0]).hypot(p.1[1] - q.1[1]));
        }
    }
    best
}

/// `beta(R) = R sqrt(max_k |I_k ∩ B_R|)` and
/// `gamma(R) = sum_k diam(I_k ∩ B_R)^2 |I_k ∩ B_R|`.
///
/// Returns infinite parameters when the covering does not reach `R`.
pub fn quality_params(cov: &Covering, r: f64) -> QualityParams {
    quality_params_with(cov, r, QualityOptions::default())
}

pub fn quality_params_with(cov: &Covering, r: f64, opts: QualityOptions) -> QualityParams {
    if r > cov.r_cov * (1.0 + 1e-12) {
        return QualityParams {
            r,
            beta: f64::INFINITY,
            gamma: f64::INFINITY,
            beta_halfwidth: 0.0,
            gamma_halfwidth: 0.0,
            mc_cells: 0,
            samples_per_cell: opts.samples,
            max_area: f64::NAN,
            diagnostic: Some(format!(
                "not an R-covering: cells cover radius {} < R = {}",
                cov.r_cov, r
            )),
        };
    }
    let (mut max_area, mut max_hw) = (0.0f64, 0.0);
    let (mut gamma, mut gamma_hw) = (0.0, 0.0);
    let mut mc_cells = 0;
    for (i, c) in cov.cells.iter().enumerate() {
        let (area, hw) = clipped_area(&c.shape, r, opts, i as u64);
        if straddles(&c.shape, r) {
            mc_cells += 1;
        }
        if area <= 0.0 {
            continue;
        }
        let d = clipped_diameter(&c.shape, r);
        gamma += d * d * area;
        gamma_hw += d * d * hw;
        if area > max_area {
            max_area = area;
            max_hw = hw;
        }
    }
    let beta = r * max_area.sqrt();
    QualityParams {
        r,
        beta,
        gamma,
        beta_halfwidth: r * ((max_area + max_hw).sqrt() - max_area.sqrt()),
        gamma_halfwidth: gamma_hw,
        mc_cells,
        samples_per_cell: opts.samples,
        max_area,
        diagnostic: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::covering::build_covering;
    use crate::geometry::design::{build_design, DesignSpec};

    fn cov(spec: DesignSpec, r: f64) -> Covering {
        build_covering(&build_design(&spec).unwrap(), r).unwrap()
    }

    #[test]
    fn lattice_beta_interior() {
        let c = cov(DesignSpec::Lattice2d { side: 4, extent: 1.0 }, 0.875);
        // R small enough that the central cell lies inside B_R
        let q = quality_params(&c, 0.5);
        assert!((q.beta - 0.5 * 0.25).abs() < 1e-12, "{q:?}");
        assert!(q.is_finite());
    }

    #[test]
    fn not_covering_is_infinite() {
        let c = cov(DesignSpec::Lattice2d { side: 4, extent: 1.0 }, 0.875);
        let q = quality_params(&c, 2.0);
        assert!(q.beta.is_infinite() && q.gamma.is_infinite());
        assert!(q.diagnostic.is_some());
    }

    #[test]
    fn stratified_area_of_quarter_disk() {
        // rectangle [0,1]^2 clipped to the unit disk: pi/4
        let s = CellShape::Rect {
            center: [0.5, 0.5],
            halfwidths: [0.5, 0.5],
        };
        let (a, hw) = clipped_area(&s, 1.0, QualityOptions { samples: 40_000, seed: 3 }, 0);
        assert!((a - PI / 4.0).abs() < 3.0 * hw.max(1e-4), "{a} {hw}");
        assert!(hw < 2e-3);
    }

    #[test]
    fn discretized_diameter_matches_closed_forms() {
        // quarter disk: diameter is the chord sqrt(2)
        let s = CellShape::Rect {
            center: [0.5, 0.5],
            halfwidths: [0.5, 0.5],
        };
        let d = clipped_diameter(&s, 1.0);
        assert!((d - 2f64.sqrt()).abs() < 1e-4 * 2f64.sqrt(), "{d}");
        // rectangle [0.2,0.6]x[-0.1,0.3] inside the unit disk clipped at 0.5
        let s = CellShape::Rect {
            center: [0.4, 0.1],
            halfwidths: [0.2, 0.2],
        };
        let d = discretized_diameter(&s, 10.0);
        assert!((d - 0.4 * 2f64.sqrt()).abs() < 1e-4 * d);
    }

    #[test]
    fn sector_diameter_cases() {
        // half-disk
        assert!((sector_diameter(0.0, 1.0, PI / 2.0) - 2.0).abs() < 1e-15);
        // thin annulus piece: chord across
        let d = sector_diameter(1.0, 1.1, 0.05);
        let outer_chord = 2.0 * 1.1 * 0.05f64.sin();
        let cross = (1.0f64 + 1.21 - 2.2 * 0.1f64.cos()).sqrt();
        assert!((d - outer_chord.max(cross)).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_r() {
        for spec in [
            DesignSpec::Circular { m: 16, radius: 1.0 },
            DesignSpec::Lattice2d { side: 5, extent: 1.0 },
            DesignSpec::Ula1d { m: 8, extent: 1.0 },
        ] {
            let c = cov(spec.clone(), 1.0);
            let mut prev = (0.0, 0.0);
            for k in 1..=8 {
                let r = c.r_cov * k as f64 / 8.0;
                let q = quality_params_with(&c, r, QualityOptions { samples: 20_000, seed: 1 });
                assert!(q.beta >= prev.0 - q.beta_halfwidth - 1e-12, "{spec:?} {k}");
                assert!(q.gamma >= prev.1 - q.gamma_halfwidth - 1e-12, "{spec:?} {k}");
                prev = (q.beta, q.gamma);
            }
        }
    }

    #[test]
    fn doubling_samples_within_halfwidth() {
        let c = cov(DesignSpec::Lattice2d { side: 6, extent: 1.0 }, 1.0);
        let r = c.r_cov;
        let a = quality_params_with(&c, r, QualityOptions { samples: 10_000, seed: 5 });
        let b = quality_params_with(&c, r, QualityOptions { samples: 20_000, seed: 6 });
        assert!(a.mc_cells > 0);
        assert!((a.gamma - b.gamma).abs() <= a.gamma_halfwidth + b.gamma_halfwidth);
        assert!((a.beta - b.beta).abs() <= a.beta_halfwidth + b.beta_halfwidth + 1e-12);
    }
}
