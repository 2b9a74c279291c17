//! Supports, free-boundary contours, boundary classification, junction
//! detection and the quantitative probes run on converged phases.

mod classify;
mod contour;
mod probes;

pub use classify::{classify_boundary, junction_scan, BoundaryClassification, BoundaryLabel};
pub use contour::{
    extract_contour, extract_supports, solution_geometry, BoundaryElement, BoundaryGeometry, CellSet, Supports,
};
pub use probes::{
    aux_weighted_bound_check, axial_asphericity, cjk_product, cjk_profile, density_ratio, lipschitz_probe,
    nondegeneracy_probe, poincare_ratio, reflect_antisymmetry, reflect_compare, weighted_dirichlet, ProbeReport,
    Verdict,
};
