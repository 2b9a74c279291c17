//! One-phase, two-phase and branch labels, and triple-junction detection.

use alloc::{vec, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::grid::{dist, Point, ScalarField};
use crate::{Error, Result};

use super::contour::BoundaryGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryLabel {
    OnePhase,
    TwoPhase,
    Branch,
}

impl BoundaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryLabel::OnePhase => "one_phase",
            BoundaryLabel::TwoPhase => "two_phase",
            BoundaryLabel::Branch => "branch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryClassification {
    /// One label per element of the classified geometry.
    pub labels: Vec<BoundaryLabel>,
    pub classification_radius: f64,
}

impl BoundaryClassification {
    pub fn count(&self, label: BoundaryLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Uniform bucket grid over a point cloud.
struct Buckets {
    lo: Point,
    size: f64,
    n: [usize; 3],
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(points: &[Point], size: f64) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut n = [1usize; 3];
        if !points.is_empty() {
            for k in 0..3 {
                n[k] = (libm::floor((hi[k] - lo[k]) / size) as usize + 1).min(4096);
            }
        }
        let mut b = Buckets { lo, size, n, cells: vec![Vec::new(); n[0] * n[1] * n[2]] };
        for (i, p) in points.iter().enumerate() {
            let c = b.key(p);
            b.cells[c].push(i);
        }
        b
    }

    fn coord(&self, p: &Point, k: usize) -> usize {
        (libm::floor((p[k] - self.lo[k]) / self.size).max(0.0) as usize).min(self.n[k] - 1)
    }

    fn key(&self, p: &Point) -> usize {
        (self.coord(p, 0) * self.n[1] + self.coord(p, 1)) * self.n[2] + self.coord(p, 2)
    }

    /// Indices in the 3^3 block of buckets around `p`.
    fn near(&self, p: &Point, mut f: impl FnMut(usize)) {
        let c = [self.coord(p, 0), self.coord(p, 1), self.coord(p, 2)];
        for i in c[0].saturating_sub(1)..=(c[0] + 1).min(self.n[0] - 1) {
            for j in c[1].saturating_sub(1)..=(c[1] + 1).min(self.n[1] - 1) {
                for k in c[2].saturating_sub(1)..=(c[2] + 1).min(self.n[2] - 1) {
                    for &e in &self.cells[(i * self.n[1] + j) * self.n[2] + k] {
                        f(e);
                    }
                }
            }
        }
    }
}

/// Labels each element of phase `i` as two-phase when an element of another
/// phase lies within `r_class`, one-phase when none lies within `2 r_class`,
/// and branch otherwise.
pub fn classify_boundary(geometry: &BoundaryGeometry, r_class: f64) -> Result<BoundaryClassification> {
    if !(r_class > 0.0) {
        return Err(Error::InvalidParameter("classification radius must be positive".into()));
    }
    let pts: Vec<Point> = geometry.elements.iter().map(|e| e.midpoint).collect();
    let buckets = Buckets::new(&pts, 2.0 * r_class);
    let labels = geometry
        .elements
        .iter()
        .map(|e| {
            let mut d = f64::INFINITY;
            buckets.near(&e.midpoint, |j| {
                let o = &geometry.elements[j];
                if o.phase_pair.0 != e.phase_pair.0 {
                    d = d.min(dist(&e.midpoint, &o.midpoint));
                }
            });
            if d <= r_class {
                BoundaryLabel::TwoPhase
            } else if d > 2.0 * r_class {
                BoundaryLabel::OnePhase
            } else {
                BoundaryLabel::Branch
            }
        })
        .collect();
    Ok(BoundaryClassification { labels, classification_radius: r_class })
}

/// Nodes whose `r_scan`-ball meets the supports `{u_i > tau}` of at least
/// three phases.
pub fn junction_scan(phases: &[ScalarField], tau: f64, r_scan: f64) -> Result<Vec<usize>> {
    if phases.len() < 3 {
        return Err(Error::InvalidParameter("junction scan needs at least three phases".into()));
    }
    if phases.len() > 32 {
        return Err(Error::InvalidParameter("at most 32 phases".into()));
    }
    if !(r_scan > 0.0) {
        return Err(Error::InvalidParameter("scan radius must be positive".into()));
    }
    let grid = *phases[0].grid();
    for p in phases {
        p.ensure_same_grid(&phases[0])?;
    }
    let mut mask = vec![0u32; grid.len()];
    let mut nb = Vec::new();
    for (i, u) in phases.iter().enumerate() {
        let bit = 1u32 << i;
        let inside = |a: usize| u.values()[a] > tau;
        for a in 0..grid.len() {
            if !inside(a) {
                continue;
            }
            mask[a] |= bit;
            grid.neighbors(a, &mut nb);
            if nb.iter().all(|&(b, _)| inside(b)) {
                continue;
            }
            let c = grid.point(a);
            grid.for_each_in_range(grid.node_range(&c, r_scan), |b| {
                if dist(&grid.point(b), &c) <= r_scan * (1.0 + 1e-12) {
                    mask[b] |= bit;
                }
            });
        }
    }
    Ok((0..grid.len()).filter(|&a| mask[a].count_ones() >= 3).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::contour::{solution_geometry, BoundaryElement};
    use crate::grid::build_grid;

    fn square(h: f64, half: f64) -> crate::Grid {
        let n = libm::round(2.0 * half / h) as usize;
        build_grid(2, &[-half, -half], h, &[n, n]).unwrap()
    }

    fn ball(g: crate::Grid, c: [f64; 2], r: f64) -> ScalarField {
        ScalarField::from_fn(g, |p| (r - libm::hypot(p[0] - c[0], p[1] - c[1])).max(0.0))
    }

    #[test]
    fn far_balls_are_one_phase() {
        let h = 1.0 / 32.0;
        let g = square(h, 2.0);
        let phases = [ball(g, [-1.0, 0.0], 0.5), ball(g, [1.0, 0.0], 0.5)];
        let geo = solution_geometry(&phases, 1e-9).unwrap();
        for r in [2.0 * h, 3.0 * h, 4.0 * h] {
            let c = classify_boundary(&geo, r).unwrap();
            assert_eq!(c.count(BoundaryLabel::OnePhase), geo.elements.len());
        }
    }

    #[test]
    fn odd_reflection_interface_is_two_phase() {
        // A half-disk touching x = 0 and its odd reflection.
        let h = 1.0 / 32.0;
        let g = square(h, 1.5);
        let u = ScalarField::from_fn(g, |p| (1.0 - libm::hypot(p[0], p[1])).max(0.0) * p[0].max(0.0));
        let plane = crate::grid::Hyperplane::new([1.0, 0.0, 0.0], 0.0).unwrap();
        let v = crate::reference::odd_reflection(&u, &plane, 1e-12).unwrap();
        let geo = solution_geometry(&[v.positive_part(), v.negative_part()], 1e-9).unwrap();
        let c = classify_boundary(&geo, 3.0 * h).unwrap();
        for (e, l) in geo.elements.iter().zip(&c.labels) {
            let x = e.midpoint[0].abs();
            if x < h && e.midpoint[1].abs() < 0.8 {
                assert_eq!(*l, BoundaryLabel::TwoPhase, "{e:?}");
            }
            if x > 0.3 {
                assert_eq!(*l, BoundaryLabel::OnePhase, "{e:?}");
            }
        }
        // Stable under r_class ± h away from the transition.
        for r in [2.0 * h, 4.0 * h] {
            let c2 = classify_boundary(&geo, r).unwrap();
            for ((e, a), b) in geo.elements.iter().zip(&c.labels).zip(&c2.labels) {
                if e.midpoint[0].abs() > 0.3 || (e.midpoint[0].abs() < h && e.midpoint[1].abs() < 0.8) {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn branch_band_where_phases_separate() {
        // Phases share the segment |x| < 1 of the axis and peel apart beyond
        // it, fast enough that the transition band is narrower than r_class.
        let h = 1.0 / 32.0;
        let g = square(h, 2.5);
        let gap = |x: f64| (x.abs() - 1.0).max(0.0);
        let disk = |p: &Point| (2.0 - libm::hypot(p[0], p[1])).max(0.0);
        let up = ScalarField::from_fn(g, |p| if p[1] > gap(p[0]) { disk(p).min(p[1] - gap(p[0])) } else { 0.0 });
        let dn = ScalarField::from_fn(g, |p| if p[1] < -gap(p[0]) { disk(p).min(-p[1] - gap(p[0])) } else { 0.0 });
        let geo = solution_geometry(&[up, dn], 1e-9).unwrap();
        let r = 3.0 * h;
        let c = classify_boundary(&geo, r).unwrap();
        let branch: Vec<&BoundaryElement> =
            geo.elements.iter().zip(&c.labels).filter(|(_, l)| **l == BoundaryLabel::Branch).map(|(e, _)| e).collect();
        assert!(!branch.is_empty());
        for e in &branch {
            // The separation 2(|x| - 1) lies in (r, 2r] there, up to a cell.
            let x = e.midpoint[0].abs();
            assert!(x > 1.0 + r / 2.0 - h && x <= 1.0 + r + h, "{e:?}");
        }
        for (e, l) in geo.elements.iter().zip(&c.labels) {
            if *l != BoundaryLabel::Branch {
                continue;
            }
            let mut near = [false; 2];
            for (o, m) in geo.elements.iter().zip(&c.labels) {
                if dist(&o.midpoint, &e.midpoint) <= r {
                    near[0] |= *m == BoundaryLabel::OnePhase;
                    near[1] |= *m == BoundaryLabel::TwoPhase;
                }
            }
            assert!(near[0] && near[1], "{e:?}");
        }
    }

    #[test]
    fn junctions() {
        let h = 1.0 / 16.0;
        let g = square(h, 2.0);
        let far = [ball(g, [-1.0, -1.0], 0.4), ball(g, [1.0, -1.0], 0.4), ball(g, [0.0, 1.0], 0.4)];
        assert!(junction_scan(&far, 1e-9, 4.0 * h).unwrap().is_empty());
        let q = [
            ScalarField::from_fn(g, |p| p[0].min(p[1]).max(0.0)),
            ScalarField::from_fn(g, |p| (-p[0]).min(p[1]).max(0.0)),
            ScalarField::from_fn(g, |p| (-p[1]).max(0.0)),
        ];
        let hits = junction_scan(&q, 1e-9, 4.0 * h).unwrap();
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|&a| crate::grid::norm(&g.point(a)) <= 4.0 * h * 1.5 + 2.0 * h));
        assert!(hits.iter().any(|&a| crate::grid::norm(&g.point(a)) < h / 2.0));
        assert!(junction_scan(&q[..2], 1e-9, h).is_err());
    }
}
