//! Cell supports and level-set contours by marching triangles (2D) and
//! marching tetrahedra (3D).

use alloc::{format, string::String, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::grid::{dist, norm, Grid, Point, ScalarField};
use crate::{Error, Result};

use super::classify::BoundaryClassification;

/// Cells named by the node index of their lowest corner.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellSet {
    /// Cells with every corner inside.
    pub interior: Vec<usize>,
    /// Cells with some but not all corners inside.
    pub boundary: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Supports {
    pub plus: CellSet,
    pub minus: CellSet,
}

/// `Ω⁺ = {u > tau}` and `Ω⁻ = {u < -tau}` at cell resolution.
pub fn extract_supports(u: &ScalarField, tau: f64) -> Supports {
    let grid = u.grid();
    let mut out = Supports::default();
    let offsets = corner_offsets(grid);
    for_each_cell(grid, |base| {
        let (mut pos, mut neg) = (0, 0);
        for &o in &offsets {
            let v = u.values()[base + o];
            pos += (v > tau) as usize;
            neg += (v < -tau) as usize;
        }
        let n = offsets.len();
        for (count, set) in [(pos, &mut out.plus), (neg, &mut out.minus)] {
            if count == n {
                set.interior.push(base);
            } else if count > 0 {
                set.boundary.push(base);
            }
        }
    });
    out
}

/// A segment (2D) or triangle (3D) of a contour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryElement {
    pub midpoint: Point,
    /// Unit normal pointing out of the phase.
    pub normal: Point,
    /// Length or area.
    pub weight: f64,
    /// `(phase, neighbour phase)`, phases counted from 1 and 0 for `{u = 0}`.
    pub phase_pair: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGeometry {
    pub dim: usize,
    pub elements: Vec<BoundaryElement>,
    pub extraction_level: f64,
}

impl BoundaryGeometry {
    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.elements.iter().map(|e| e.weight).sum()
    }

    /// Elements belonging to `phase`.
    pub fn phase(&self, phase: usize) -> BoundaryGeometry {
        BoundaryGeometry {
            dim: self.dim,
            elements: self.elements.iter().filter(|e| e.phase_pair.0 == phase).copied().collect(),
            extraction_level: self.extraction_level,
        }
    }

    /// One row per element: midpoint, normal, weight, phase pair and label.
    pub fn to_csv(&self, labels: Option<&BoundaryClassification>) -> String {
        let axes = ["x", "y", "z"];
        let mut s = String::new();
        for a in &axes[..self.dim] {
            s.push_str(&format!("{a},"));
        }
        for a in &axes[..self.dim] {
            s.push_str(&format!("n{a},"));
        }
        s.push_str("weight,phase,neighbour,label\n");
        for (k, e) in self.elements.iter().enumerate() {
            for c in &e.midpoint[..self.dim] {
                s.push_str(&format!("{c:e},"));
            }
            for c in &e.normal[..self.dim] {
                s.push_str(&format!("{c:e},"));
            }
            let label = labels.and_then(|l| l.labels.get(k)).map(|l| l.as_str()).unwrap_or("");
            s.push_str(&format!("{:e},{},{},{}\n", e.weight, e.phase_pair.0, e.phase_pair.1, label));
        }
        s
    }
}

/// Contour `{sign·u = level}` with normals pointing towards decreasing
/// `sign·u`. Elements carry phase pair `(1, 0)` for `sign > 0` and `(2, 0)`
/// otherwise.
pub fn extract_contour(u: &ScalarField, level: f64, sign: f64) -> Result<BoundaryGeometry> {
    if !(level > 0.0) {
        return Err(Error::InvalidParameter("contour level must be positive".into()));
    }
    let s = if sign < 0.0 { -1.0 } else { 1.0 };
    let phase = if s > 0.0 { 1 } else { 2 };
    let grid = *u.grid();
    let phi: Vec<f64> = u.values().iter().map(|v| s * v - level).collect();
    let mut elements = Vec::new();
    march(&grid, &phi, |_, e| {
        elements.push(BoundaryElement { phase_pair: (phase, 0), ..e });
    });
    Ok(BoundaryGeometry { dim: grid.dim(), elements, extraction_level: level })
}

/// Contours of every nonnegative phase component at `level`. An element of
/// phase `i` is paired with phase `j` when `{u_j > level}` has a node within
/// one cell of the element's cell.
pub fn solution_geometry(phases: &[ScalarField], level: f64) -> Result<BoundaryGeometry> {
    if !(level > 0.0) {
        return Err(Error::InvalidParameter("contour level must be positive".into()));
    }
    let Some(first) = phases.first() else {
        return Err(Error::InvalidParameter("no phases".into()));
    };
    let grid = *first.grid();
    for p in phases {
        p.ensure_same_grid(first)?;
    }
    let dim = grid.dim();
    let mut elements = Vec::new();
    for (i, u) in phases.iter().enumerate() {
        let phi: Vec<f64> = u.values().iter().map(|v| v - level).collect();
        march(&grid, &phi, |base, e| {
            let c = grid.coords(base);
            let mut range = [(0, 0); 3];
            for k in 0..dim {
                range[k] = (c[k].saturating_sub(1), (c[k] + 2).min(grid.cells_per_axis()[k]));
            }
            let partner = phases
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .find(|(_, w)| {
                    let mut hit = false;
                    grid.for_each_in_range(range, |a| hit |= w.values()[a] > level);
                    hit
                })
                .map_or(0, |(j, _)| j + 1);
            elements.push(BoundaryElement { phase_pair: (i + 1, partner), ..e });
        });
    }
    Ok(BoundaryGeometry { dim: grid.dim(), elements, extraction_level: level })
}

pub(crate) fn corner_offsets(grid: &Grid) -> Vec<usize> {
    let s = grid.strides();
    (0..1usize << grid.dim())
        .map(|m| (0..grid.dim()).filter(|k| (m >> k) & 1 == 1).map(|k| s[k]).sum())
        .collect()
}

pub(crate) fn for_each_cell(grid: &Grid, mut f: impl FnMut(usize)) {
    let c = grid.cells_per_axis();
    let (ni, nj, nk) = (c[0], c[1], if grid.dim() == 3 { c[2] } else { 1 });
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                f(grid.index([i, j, k]));
            }
        }
    }
}

/// Kuhn simplices of the unit cell as corner bitmasks.
fn simplices(dim: usize) -> Vec<Vec<usize>> {
    if dim == 2 {
        return alloc::vec![alloc::vec![0b00, 0b01, 0b11], alloc::vec![0b00, 0b10, 0b11]];
    }
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    perms
        .iter()
        .map(|p| {
            let mut m = 0usize;
            let mut out = alloc::vec![0];
            for &a in p {
                m |= 1 << a;
                out.push(m);
            }
            out
        })
        .collect()
}

/// Gradient of the linear interpolant on a simplex.
fn simplex_gradient(dim: usize, p: &[Point], v: &[f64]) -> Point {
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for k in 0..dim {
        for a in 0..dim {
            m[k][a] = p[k + 1][a] - p[0][a];
        }
        rhs[k] = v[k + 1] - v[0];
    }
    if dim == 2 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [
            (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det,
            (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det,
            0.0,
        ]
    } else {
        let det3 = |a: [[f64; 3]; 3]| {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        };
        let det = det3(m);
        let mut g = [0.0; 3];
        for (col, slot) in g.iter_mut().enumerate() {
            let mut a = m;
            for row in 0..3 {
                a[row][col] = rhs[row];
            }
            *slot = det3(a) / det;
        }
        g
    }
}

fn cross(a: &Point, b: &Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn lerp(a: &Point, b: &Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

/// Emits the zero set of `phi` between `{phi > 0}` and `{phi <= 0}`, one
/// element per simplex piece, with its cell's base node.
fn march(grid: &Grid, phi: &[f64], mut emit: impl FnMut(usize, BoundaryElement)) {
    let dim = grid.dim();
    let offsets = corner_offsets(grid);
    let simp = simplices(dim);
    let h = grid.h();
    let corner_pos: Vec<Point> = (0..offsets.len())
        .map(|m| {
            let mut p = [0.0; 3];
            for (k, slot) in p.iter_mut().enumerate().take(dim) {
                *slot = if (m >> k) & 1 == 1 { h } else { 0.0 };
            }
            p
        })
        .collect();
    let min_weight = 1e-14 * crate::grid::powi(h, dim as i32 - 1);
    for_each_cell(grid, |base| {
        let vals: Vec<f64> = offsets.iter().map(|&o| phi[base + o]).collect();
        let inside = vals.iter().filter(|&&v| v > 0.0).count();
        if inside == 0 || inside == vals.len() {
            return;
        }
        let origin = grid.point(base);
        for s in &simp {
            let p: Vec<Point> = s.iter().map(|&m| corner_pos[m]).collect();
            let v: Vec<f64> = s.iter().map(|&m| vals[m]).collect();
            let ins: Vec<usize> = (0..v.len()).filter(|&k| v[k] > 0.0).collect();
            let outs: Vec<usize> = (0..v.len()).filter(|&k| v[k] <= 0.0).collect();
            if ins.is_empty() || outs.is_empty() {
                continue;
            }
            let grad = simplex_gradient(dim, &p, &v);
            let gn = norm(&grad);
            if !(gn > 0.0) {
                continue;
            }
            let normal = [-grad[0] / gn, -grad[1] / gn, -grad[2] / gn];
            let cut = |a: usize, b: usize| {
                let t = v[a] / (v[a] - v[b]);
                let q = lerp(&p[a], &p[b], t);
                [q[0] + origin[0], q[1] + origin[1], q[2] + origin[2]]
            };
            let mut pieces: Vec<[Point; 3]> = Vec::new();
            let mut segment = None;
            if dim == 2 {
                let pts: Vec<Point> = if ins.len() == 1 {
                    outs.iter().map(|&o| cut(ins[0], o)).collect()
                } else {
                    ins.iter().map(|&i| cut(i, outs[0])).collect()
                };
                segment = Some((pts[0], pts[1]));
            } else if ins.len() == 1 || outs.len() == 1 {
                let (lone, rest) = if ins.len() == 1 { (ins[0], &outs) } else { (outs[0], &ins) };
                pieces.push([cut(lone, rest[0]), cut(lone, rest[1]), cut(lone, rest[2])]);
            } else {
                let q = [cut(ins[0], outs[0]), cut(ins[0], outs[1]), cut(ins[1], outs[1]), cut(ins[1], outs[0])];
                pieces.push([q[0], q[1], q[2]]);
                pieces.push([q[0], q[2], q[3]]);
            }
            if let Some((a, b)) = segment {
                let w = dist(&a, &b);
                if w > min_weight {
                    let mid = lerp(&a, &b, 0.5);
                    emit(base, BoundaryElement { midpoint: mid, normal, weight: w, phase_pair: (0, 0) });
                }
            }
            for t in pieces {
                let e1 = [t[1][0] - t[0][0], t[1][1] - t[0][1], t[1][2] - t[0][2]];
                let e2 = [t[2][0] - t[0][0], t[2][1] - t[0][1], t[2][2] - t[0][2]];
                let w = 0.5 * norm(&cross(&e1, &e2));
                if w > min_weight {
                    let mid = [
                        (t[0][0] + t[1][0] + t[2][0]) / 3.0,
                        (t[0][1] + t[1][1] + t[2][1]) / 3.0,
                        (t[0][2] + t[1][2] + t[2][2]) / 3.0,
                    ];
                    emit(base, BoundaryElement { midpoint: mid, normal, weight: w, phase_pair: (0, 0) });
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use core::f64::consts::PI;

    fn square(h: f64, half: f64) -> Grid {
        let n = libm::round(2.0 * half / h) as usize;
        build_grid(2, &[-half, -half], h, &[n, n]).unwrap()
    }

    #[test]
    fn half_boxes() {
        let g = square(0.125, 1.0);
        let u = ScalarField::from_fn(g, |p| p[0]);
        let s = extract_supports(&u, 1e-9);
        assert_eq!(s.plus.interior.len(), 7 * 16);
        assert_eq!(s.minus.interior.len(), 7 * 16);
        assert_eq!(s.plus.boundary.len(), 16);
        assert!(s.plus.interior.iter().all(|c| !s.minus.interior.contains(c)));
        let z = extract_supports(&ScalarField::zeros(g), 1e-9);
        assert!(z.plus.interior.is_empty() && z.minus.boundary.is_empty());
    }

    #[test]
    fn radial_support_area() {
        let h = 1.0 / 64.0;
        let g = square(h, 2.5);
        let sol = crate::reference::radial_one_phase(4.0 * PI, 1.0, 2).unwrap();
        let u = sol.sample(&g, &[0.0; 3]);
        let s = extract_supports(&u, 1e-9);
        let expect = PI * 4.0 / (h * h);
        let got = s.plus.interior.len() as f64;
        assert!((got - expect).abs() / expect < 0.03, "{got} vs {expect}");
    }

    #[test]
    fn circle_perimeter() {
        let g = square(1.0 / 64.0, 1.5);
        let u = ScalarField::from_fn(g, |p| 1.0 - libm::hypot(p[0], p[1]));
        let c = extract_contour(&u, 1e-6, 1.0).unwrap();
        assert!((c.total_weight() - 2.0 * PI).abs() / (2.0 * PI) < 0.02);
        for e in &c.elements {
            assert!(e.weight > 0.0);
            assert!((norm(&e.normal) - 1.0).abs() < 1e-8);
            // Outward: along the position vector.
            assert!(e.normal[0] * e.midpoint[0] + e.normal[1] * e.midpoint[1] > 0.0);
        }
    }

    #[test]
    fn sphere_area() {
        let h = 1.0 / 16.0;
        let g = build_grid(3, &[-1.5; 3], h, &[48; 3]).unwrap();
        let u = ScalarField::from_fn(g, |p| 1.0 - norm(p));
        let c = extract_contour(&u, 1e-6, 1.0).unwrap();
        assert!((c.total_weight() - 4.0 * PI).abs() / (4.0 * PI) < 0.02, "{}", c.total_weight());
        assert!(c.elements.iter().all(|e| crate::grid::dot(&e.normal, &e.midpoint) > 0.0));
    }

    #[test]
    fn flat_contours() {
        let g = square(1.0 / 32.0, 1.0);
        let u = ScalarField::from_fn(g, |p| p[0]);
        let c = extract_contour(&u, 1e-6, 1.0).unwrap();
        assert!((c.total_weight() - 2.0).abs() < 0.04);
        assert!(c.elements.iter().all(|e| (e.normal[0] + 1.0).abs() < 1e-12));
        let m = extract_contour(&u, 1e-6, -1.0).unwrap();
        assert!(m.elements.iter().all(|e| (e.normal[0] - 1.0).abs() < 1e-12 && e.phase_pair == (2, 0)));
        let g3 = build_grid(3, &[-1.0; 3], 0.125, &[16; 3]).unwrap();
        let u3 = ScalarField::from_fn(g3, |p| p[0]);
        let c3 = extract_contour(&u3, 1e-6, 1.0).unwrap();
        assert!((c3.total_weight() - 4.0).abs() < 0.08);
    }

    #[test]
    fn empty_contour() {
        let g = square(0.25, 1.0);
        let c = extract_contour(&ScalarField::constant(g, 1e-9), 1e-6, 1.0).unwrap();
        assert!(c.is_empty());
        assert!(extract_contour(&ScalarField::zeros(g), 0.0, 1.0).is_err());
    }

    #[test]
    fn touching_phases_are_paired() {
        let g = square(1.0 / 16.0, 1.0);
        let a = ScalarField::from_fn(g, |p| (0.5 - libm::hypot(p[0], p[1])).max(0.0) * (p[0] > 0.0) as u8 as f64 * p[0]);
        let b = ScalarField::from_fn(g, |p| (0.5 - libm::hypot(p[0], p[1])).max(0.0) * (p[0] < 0.0) as u8 as f64 * -p[0]);
        let geo = solution_geometry(&[a, b], 1e-9).unwrap();
        assert!(geo.elements.iter().any(|e| e.phase_pair == (1, 2)));
        assert!(geo.elements.iter().any(|e| e.phase_pair == (2, 1)));
        assert!(geo.elements.iter().any(|e| e.phase_pair == (1, 0)));
        let csv = geo.to_csv(None);
        assert_eq!(csv.lines().count(), geo.elements.len() + 1);
    }
}
