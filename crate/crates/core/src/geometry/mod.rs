//! Antenna designs, difference sets, coverings and quality parameters.

pub mod design;
pub mod diffs;

pub use design::{build_design, ArrayDesign, DesignSpec};
pub use diffs::{circular_difference_closed_form, difference_set, DifferenceSet};
pub mod covering;

pub use covering::{
    annular_sector_centroid, build_covering, circular_radii, sample_check, CellShape, Covering,
    CoveringCell,
};
pub mod quality;

pub use quality::{quality_params, quality_params_with, QualityOptions, QualityParams};
pub mod fit;

pub use fit::{asymptotic_fit, SlopeFit};
