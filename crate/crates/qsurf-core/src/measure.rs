//! Signed measures built from mollified point masses and surface shells,
//! rasterized to node densities.

use alloc::{format, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::grid::{dist, unit_sphere_area, Grid, Point, ScalarField};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    #[default]
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Point mass smeared by the bump `(1 - (s/r)^2)^2` on the ball of radius
/// `mollifier_radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub center: Point,
    pub mass: f64,
    pub mollifier_radius: f64,
    #[serde(default)]
    pub sign: Sign,
}

/// Uniform surface density on a sphere, smeared radially over a band of
/// half-width `mollifier_radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub center: Point,
    pub radius: f64,
    pub surface_density: f64,
    pub mollifier_radius: f64,
    #[serde(default)]
    pub sign: Sign,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasureSpec {
    pub atoms: Vec<Atom>,
    pub shells: Vec<Shell>,
    pub background: Option<(ScalarField, Sign)>,
}

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - t * t;
        q * q
    }
}

impl Atom {
    pub fn new(center: Point, mass: f64, mollifier_radius: f64) -> Self {
        Atom { center, mass, mollifier_radius, sign: Sign::Plus }
    }

    pub fn signed_mass(&self) -> f64 {
        self.sign.factor() * self.mass
    }
}

impl Shell {
    pub fn new(center: Point, radius: f64, surface_density: f64, mollifier_radius: f64) -> Self {
        Shell { center, radius, surface_density, mollifier_radius, sign: Sign::Plus }
    }

    /// Surface density times sphere area.
    pub fn mass(&self, dim: usize) -> f64 {
        self.surface_density * unit_sphere_area(dim) * crate::grid::powi(self.radius, dim as i32 - 1)
    }
}

impl MeasureSpec {
    pub fn from_atoms(atoms: Vec<Atom>) -> Self {
        MeasureSpec { atoms, ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.iter().all(|a| a.mass == 0.0)
            && self.shells.iter().all(|s| s.surface_density == 0.0)
            && self.background.is_none()
    }

    /// Total signed mass, with shells and background measured on `grid`.
    pub fn total_mass(&self, grid: &Grid) -> f64 {
        let atoms: f64 = self.atoms.iter().map(Atom::signed_mass).sum();
        let shells: f64 = self.shells.iter().map(|s| s.sign.factor() * s.mass(grid.dim())).sum();
        let bg = self
            .background
            .as_ref()
            .map(|(f, s)| s.factor() * crate::grid::integrate(f))
            .unwrap_or(0.0);
        atoms + shells + bg
    }

    /// Points at which concentration is probed: atom centres and sample
    /// points on each shell.
    pub fn support_points(&self, dim: usize) -> Vec<Point> {
        let mut out: Vec<Point> = self.atoms.iter().filter(|a| a.mass != 0.0).map(|a| a.center).collect();
        for s in &self.shells {
            for d in crate::grid::sphere_directions(dim, if dim == 2 { 8 } else { 16 }) {
                out.push([
                    s.center[0] + s.radius * d[0],
                    s.center[1] + s.radius * d[1],
                    s.center[2] + s.radius * d[2],
                ]);
            }
        }
        out
    }

    /// Smallest axis-aligned box containing the atom and shell supports.
    pub fn bounding_box(&self, dim: usize) -> Option<(Point, Point)> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        let mut grow = |c: &Point, r: f64| {
            any = true;
            for k in 0..dim {
                lo[k] = lo[k].min(c[k] - r);
                hi[k] = hi[k].max(c[k] + r);
            }
        };
        for a in self.atoms.iter().filter(|a| a.mass != 0.0) {
            grow(&a.center, a.mollifier_radius);
        }
        for s in &self.shells {
            grow(&s.center, s.radius + s.mollifier_radius);
        }
        if any {
            for k in dim..3 {
                lo[k] = 0.0;
                hi[k] = 0.0;
            }
            Some((lo, hi))
        } else {
            None
        }
    }
}

/// Rasterizes `spec` to a node density on `grid`. Every atom and shell is
/// renormalized on the grid so that its trapezoid integral equals its mass
/// up to rounding. Supports must keep a margin of two mollifier radii from
/// the box faces.
pub fn rasterize_measure(spec: &MeasureSpec, grid: &Grid) -> Result<ScalarField> {
    let mut values = alloc::vec![0.0; grid.len()];
    for (k, a) in spec.atoms.iter().enumerate() {
        if a.mass == 0.0 {
            continue;
        }
        let r = a.mollifier_radius;
        if !(r > 0.0) || !a.mass.is_finite() {
            return Err(Error::InvalidParameter(format!("atom {k}: bad radius or mass")));
        }
        if grid.distance_to_boundary(&a.center) < 3.0 * r {
            return Err(Error::SupportEscapesBox(format!("atom {k}")));
        }
        let mut nodes = Vec::new();
        let mut total = 0.0;
        grid.for_each_in_range(grid.node_range(&a.center, r), |i| {
            let b = bump(dist(&grid.point(i), &a.center) / r);
            if b > 0.0 {
                total += b * grid.node_weight(i);
                nodes.push((i, b));
            }
        });
        if total <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "atom {k}: mollifier radius {r} resolves no grid node"
            )));
        }
        let scale = a.signed_mass() / total;
        for (i, b) in nodes {
            values[i] += scale * b;
        }
    }
    for (k, s) in spec.shells.iter().enumerate() {
        if s.surface_density == 0.0 {
            continue;
        }
        let r = s.mollifier_radius;
        if !(r > 0.0) || !(s.radius > r) {
            return Err(Error::InvalidParameter(format!(
                "shell {k}: need 0 < mollifier radius < shell radius"
            )));
        }
        if grid.distance_to_boundary(&s.center) < s.radius + 3.0 * r {
            return Err(Error::SupportEscapesBox(format!("shell {k}")));
        }
        let mut nodes = Vec::new();
        let mut total = 0.0;
        grid.for_each_in_range(grid.node_range(&s.center, s.radius + r), |i| {
            let b = bump((dist(&grid.point(i), &s.center) - s.radius) / r);
            if b > 0.0 {
                total += b * grid.node_weight(i);
                nodes.push((i, b));
            }
        });
        if total <= 0.0 {
            return Err(Error::InvalidParameter(format!("shell {k}: band resolves no grid node")));
        }
        let scale = s.sign.factor() * s.mass(grid.dim()) / total;
        for (i, b) in nodes {
            values[i] += scale * b;
        }
    }
    if let Some((bg, sign)) = &spec.background {
        if bg.grid() != grid {
            return Err(Error::GridMismatch);
        }
        for (v, b) in values.iter_mut().zip(bg.values()) {
            *v += sign.factor() * b;
        }
    }
    ScalarField::new(*grid, values)
}
