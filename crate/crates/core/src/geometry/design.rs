use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point;

/// How a design was produced, with the parameters that define it.
///
/// Positions are wavelength-normalized: a physical position `x` enters as
/// `2 pi x / lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    /// `(0, k extent / m)`, `k = 0..m-1`.
    Ula1d { m: usize, extent: f64 },
    /// `(extent / side) (k, j)`, `k, j = 0..side-1`.
    Lattice2d { side: usize, extent: f64 },
    /// Lattice restricted to `index_set x index_set`; the index set must
    /// have a full difference set `{-(side-1) .. side-1}`.
    Coprime2d {
        index_set: Vec<i64>,
        side: usize,
        extent: f64,
    },
    /// `radius * exp(2 pi i k / m)`, `k = 1..m`.
    Circular { m: usize, radius: f64 },
    Custom { positions: Vec<Point> },
}

impl DesignSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DesignSpec::Ula1d { .. } => "ula1d",
            DesignSpec::Lattice2d { .. } => "lattice2d",
            DesignSpec::Coprime2d { .. } => "coprime2d",
            DesignSpec::Circular { .. } => "circular",
            DesignSpec::Custom { .. } => "custom",
        }
    }

    /// Spatial extent parameter (`R`, `D` or the max distance from the
    /// origin for custom designs).
    pub fn extent(&self) -> f64 {
        match self {
            DesignSpec::Ula1d { extent, .. }
            | DesignSpec::Lattice2d { extent, .. }
            | DesignSpec::Coprime2d { extent, .. } => *extent,
            DesignSpec::Circular { radius, .. } => *radius,
            DesignSpec::Custom { positions } => positions
                .iter()
                .map(|p| p[0].hypot(p[1]))
                .fold(0.0, f64::max),
        }
    }
}

/// Antenna positions in the plane.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArrayDesign {
    pub spec: DesignSpec,
    pub positions: Vec<Point>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesign {
    spec: DesignSpec,
    #[serde(default)]
    #[allow(dead_code)]
    positions: Option<Vec<Point>>,
}

impl<'de> Deserialize<'de> for ArrayDesign {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        // Positions are always rebuilt from `spec` so a file cannot carry
        // positions that disagree with its parameters.
        let raw = RawDesign::deserialize(d)?;
        build_design(&raw.spec).map_err(serde::de::Error::custom)
    }
}

impl ArrayDesign {
    pub fn m(&self) -> usize {
        self.positions.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    /// Accepts either a full design document or a bare spec.
    pub fn from_json(s: &str) -> Result<Self> {
        if let Ok(d) = serde_json::from_str::<ArrayDesign>(s) {
            return Ok(d);
        }
        let spec: DesignSpec = serde_json::from_str(s)?;
        build_design(&spec)
    }

    /// Same design with every position rotated by `phi` (custom kind).
    pub fn rotated(&self, phi: f64) -> ArrayDesign {
        let (s, c) = phi.sin_cos();
        let positions: Vec<Point> = self
            .positions
            .iter()
            .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
            .collect();
        ArrayDesign {
            spec: DesignSpec::Custom {
                positions: positions.clone(),
            },
            positions,
        }
    }
}

fn check_extent(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid(name, format!("must be positive, got {v}")));
    }
    Ok(())
}

/// First lag in `-(side-1)..=side-1` that is not a difference of two
/// elements of `set`.
pub fn first_missing_lag(set: &[i64], side: usize) -> Option<i64> {
    let diffs: BTreeSet<i64> = set
        .iter()
        .flat_map(|a| set.iter().map(move |b| a - b))
        .collect();
    let s = side as i64;
    (-(s - 1)..=(s - 1)).find(|l| !diffs.contains(l))
}

pub fn build_design(spec: &DesignSpec) -> Result<ArrayDesign> {
    let positions: Vec<Point> = match spec {
        DesignSpec::Ula1d { m, extent } => {
            check_extent("extent", *extent)?;
            (0..*m)
                .map(|k| [0.0, k as f64 * extent / *m as f64])
                .collect()
        }
        DesignSpec::Lattice2d { side, extent } => {
            check_extent("extent", *extent)?;
            let h = extent / *side as f64;
            let mut v = Vec::with_capacity(side * side);
            for k in 0..*side {
                for j in 0..*side {
                    v.push([k as f64 * h, j as f64 * h]);
                }
            }
            v
        }
        DesignSpec::Coprime2d {
            index_set,
            side,
            extent,
        } => {
            check_extent("extent", *extent)?;
            let set: BTreeSet<i64> = index_set.iter().copied().collect();
            if set.iter().any(|&d| d < 0 || d >= *side as i64) {
                return Err(Error::invalid(
                    "index_set",
                    format!("indices must lie in 0..{}", side),
                ));
            }
            let set: Vec<i64> = set.into_iter().collect();
            if let Some(missing) = first_missing_lag(&set, *side) {
                return Err(Error::InvalidIndexSet { missing });
            }
            let h = extent / *side as f64;
            let mut v = Vec::with_capacity(set.len() * set.len());
            for &k in &set {
                for &j in &set {
                    v.push([k as f64 * h, j as f64 * h]);
                }
            }
            v
        }
        DesignSpec::Circular { m, radius } => {
            check_extent("radius", *radius)?;
            (1..=*m)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / *m as f64;
                    [radius * a.cos(), radius * a.sin()]
                })
                .collect()
        }
        DesignSpec::Custom { positions } => {
            if positions.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
                return Err(Error::invalid("positions", "non-finite coordinate"));
            }
            positions.clone()
        }
    };
    if positions.len() < 2 {
        return Err(Error::TooFewAntennas {
            got: positions.len(),
            need: 2,
        });
    }
    for i in 0..positions.len() {
        for j in 0..i {
            let d = (positions[i][0] - positions[j][0]).hypot(positions[i][1] - positions[j][1]);
            if d < 1e-12 {
                return Err(Error::invalid(
                    "positions",
                    format!("antennas {j} and {i} coincide"),
                ));
            }
        }
    }
    Ok(ArrayDesign {
        spec: spec.clone(),
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circular_17_on_unit_circle() {
        let d = build_design(&DesignSpec::Circular { m: 17, radius: 1.0 }).unwrap();
        assert_eq!(d.m(), 17);
        for (k, p) in d.positions.iter().enumerate() {
            let a = 2.0 * PI * (k + 1) as f64 / 17.0;
            assert!((p[0] - a.cos()).abs() < 1e-15 && (p[1] - a.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn lattice_side_one_rejected() {
        let e = build_design(&DesignSpec::Lattice2d { side: 1, extent: 1.0 }).unwrap_err();
        assert!(matches!(e, Error::TooFewAntennas { got: 1, .. }));
    }

    #[test]
    fn coprime_ruler_accepted() {
        let d = build_design(&DesignSpec::Coprime2d {
            index_set: vec![0, 1, 4, 6],
            side: 7,
            extent: 1.0,
        })
        .unwrap();
        assert_eq!(d.m(), 16);
    }

    #[test]
    fn coprime_reports_first_missing_lag() {
        let e = build_design(&DesignSpec::Coprime2d {
            index_set: vec![0, 1, 2, 6],
            side: 7,
            extent: 1.0,
        })
        .unwrap_err();
        // {0,1,2,6} - itself = {0,±1,±2,±4,±5,±6}; -3 is the first gap
        assert!(matches!(e, Error::InvalidIndexSet { missing: -3 }));
    }

    #[test]
    fn json_round_trip_rebuilds_positions() {
        let d = build_design(&DesignSpec::Ula1d { m: 5, extent: 2.0 }).unwrap();
        let back = ArrayDesign::from_json(&d.to_json()).unwrap();
        assert_eq!(d, back);
        let bare = ArrayDesign::from_json(r#"{"kind":"circular","m":6,"radius":1.5}"#).unwrap();
        assert_eq!(bare.m(), 6);
        assert!(ArrayDesign::from_json(r#"{"kind":"circular","m":6,"radius":1.5,"x":1}"#).is_err());
    }
}
