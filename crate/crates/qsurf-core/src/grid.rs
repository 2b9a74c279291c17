//! Uniform Cartesian grids, node-sampled fields and the discrete calculus
//! shared by every solver and probe.
//!
//! Nodes are stored row-major with the last active axis fastest. A 2D grid
//! keeps a degenerate third axis with a single node so that indexing code is
//! shared between dimensions.

use alloc::{format, vec, vec::Vec};
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point in space. The third coordinate is ignored (and kept at zero) in 2D.
pub type Point = [f64; 3];

/// Integer power by repeated squaring.
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    let (mut base, mut e) = if n < 0 { (1.0 / x, n.unsigned_abs()) } else { (x, n as u32) };
    let mut r = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            r *= base;
        }
        base *= base;
        e >>= 1;
    }
    r
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    libm::sqrt(powi(a[0] - b[0], 2) + powi(a[1] - b[1], 2) + powi(a[2] - b[2], 2))
}

pub(crate) fn norm(a: &Point) -> f64 {
    libm::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Pads a coordinate slice of length 2 or 3 to a [`Point`].
pub fn point(coords: &[f64]) -> Point {
    let mut p = [0.0; 3];
    for (slot, c) in p.iter_mut().zip(coords) {
        *slot = *c;
    }
    p
}

/// Volume of the unit ball in dimension 2 or 3.
pub fn unit_ball_volume(dim: usize) -> f64 {
    if dim == 2 {
        PI
    } else {
        4.0 * PI / 3.0
    }
}

/// Area (length in 2D) of the unit sphere.
pub fn unit_sphere_area(dim: usize) -> f64 {
    if dim == 2 {
        2.0 * PI
    } else {
        4.0 * PI
    }
}

/// The hyperplane `{x : x·normal = offset}` with unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub normal: Point,
    pub offset: f64,
}

impl Hyperplane {
    /// Normalizes `normal`; fails on a zero vector.
    pub fn new(normal: Point, offset: f64) -> Result<Self> {
        let n = norm(&normal);
        if !(n > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidParameter("hyperplane needs a nonzero normal".into()));
        }
        Ok(Hyperplane { normal: [normal[0] / n, normal[1] / n, normal[2] / n], offset })
    }

    pub fn signed_distance(&self, p: &Point) -> f64 {
        dot(p, &self.normal) - self.offset
    }

    pub fn reflect(&self, p: &Point) -> Point {
        let d = 2.0 * self.signed_distance(p);
        [p[0] - d * self.normal[0], p[1] - d * self.normal[1], p[2] - d * self.normal[2]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    origin: Point,
    h: f64,
    cells: [usize; 3],
}

/// Builds a grid covering `origin + [0, h * cells]` per axis.
pub fn build_grid(dim: usize, origin: &[f64], h: f64, cells_per_axis: &[usize]) -> Result<Grid> {
    Grid::new(dim, origin, h, cells_per_axis)
}

impl Grid {
    pub fn new(dim: usize, origin: &[f64], h: f64, cells_per_axis: &[usize]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension {dim} is not 2 or 3")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {h} must be finite and positive")));
        }
        if origin.len() != dim || cells_per_axis.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "origin and cells_per_axis must have {dim} entries"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        if cells_per_axis.iter().any(|&c| c < 8) {
            return Err(Error::InvalidGrid("at least 8 cells per axis are required".into()));
        }
        let mut cells = [0; 3];
        cells[..dim].copy_from_slice(cells_per_axis);
        Ok(Grid { dim, origin: point(origin), h, cells })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    /// Node counts per axis; the unused third axis of a 2D grid has one node.
    pub fn nodes(&self) -> [usize; 3] {
        [self.cells[0] + 1, self.cells[1] + 1, self.cells[2] + 1]
    }

    pub fn len(&self) -> usize {
        let n = self.nodes();
        n[0] * n[1] * n[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_count(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    pub fn strides(&self) -> [usize; 3] {
        let n = self.nodes();
        [n[1] * n[2], n[2], 1]
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        let s = self.strides();
        c[0] * s[0] + c[1] * s[1] + c[2] * s[2]
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.nodes();
        [idx / (n[1] * n[2]), (idx / n[2]) % n[1], idx % n[2]]
    }

    pub fn point_at(&self, c: [usize; 3]) -> Point {
        let mut p = [0.0; 3];
        for k in 0..self.dim {
            p[k] = self.origin[k] + self.h * c[k] as f64;
        }
        p
    }

    pub fn point(&self, idx: usize) -> Point {
        self.point_at(self.coords(idx))
    }

    pub fn lower(&self) -> Point {
        self.origin
    }

    pub fn upper(&self) -> Point {
        let mut p = self.origin;
        for k in 0..self.dim {
            p[k] += self.h * self.cells[k] as f64;
        }
        p
    }

    /// `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        powi(self.h, self.dim as i32)
    }

    /// Trapezoid factor of a node coordinate along one axis.
    pub(crate) fn axis_weight(&self, axis: usize, i: usize) -> f64 {
        if axis >= self.dim || (i > 0 && i < self.cells[axis]) {
            1.0
        } else {
            0.5
        }
    }

    /// Quadrature weight of a node: `h^dim` halved once per boundary axis.
    pub fn node_weight(&self, idx: usize) -> f64 {
        let c = self.coords(idx);
        let mut w = self.cell_volume();
        for k in 0..self.dim {
            w *= self.axis_weight(k, c[k]);
        }
        w
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node_weight(i)).collect()
    }

    /// Signed distance from `p` to the nearest box face (negative outside).
    pub fn distance_to_boundary(&self, p: &Point) -> f64 {
        let lo = self.lower();
        let hi = self.upper();
        (0..self.dim)
            .map(|k| (p[k] - lo[k]).min(hi[k] - p[k]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance, in whole cells, from node `idx` to the box boundary.
    pub fn cells_to_boundary(&self, idx: usize) -> usize {
        let c = self.coords(idx);
        (0..self.dim)
            .map(|k| c[k].min(self.cells[k] - c[k]))
            .min()
            .unwrap_or(0)
    }

    /// Grid-aligned node coordinates nearest to `p`, clamped into the box.
    pub fn nearest_node(&self, p: &Point) -> [usize; 3] {
        let mut c = [0; 3];
        for k in 0..self.dim {
            let t = libm::round((p[k] - self.origin[k]) / self.h);
            c[k] = t.clamp(0.0, self.cells[k] as f64) as usize;
        }
        c
    }

    /// Inclusive node-coordinate ranges covering the axis-aligned box
    /// `center ± r`, clipped to the grid.
    pub(crate) fn node_range(&self, center: &Point, r: f64) -> [(usize, usize); 3] {
        let mut out = [(0, 0); 3];
        for k in 0..self.dim {
            let lo = libm::ceil((center[k] - r - self.origin[k]) / self.h - 1e-9).max(0.0);
            let hi = libm::floor((center[k] + r - self.origin[k]) / self.h + 1e-9)
                .min(self.cells[k] as f64);
            if hi < lo {
                out[k] = (1, 0);
            } else {
                out[k] = (lo as usize, hi as usize);
            }
        }
        out
    }

    /// Visits the nodes whose coordinates fall in the ranges produced by
    /// [`Grid::node_range`].
    pub(crate) fn for_each_in_range(&self, r: [(usize, usize); 3], mut f: impl FnMut(usize)) {
        if r.iter().take(self.dim).any(|&(lo, hi)| lo > hi) {
            return;
        }
        for i in r[0].0..=r[0].1 {
            for j in r[1].0..=r[1].1 {
                for k in r[2].0..=r[2].1 {
                    f(self.index([i, j, k]));
                }
            }
        }
    }

    /// Visits every edge `(a, b, c)` of the node graph with its stiffness
    /// weight `c`: the fraction of the `2^(dim-1)` cells around an edge that
    /// exist, so boundary edges count one half (one quarter on box edges in
    /// 3D).
    pub(crate) fn for_each_edge(&self, mut f: impl FnMut(usize, usize, f64)) {
        let n = self.nodes();
        let s = self.strides();
        for axis in 0..self.dim {
            for i in 0..n[0] {
                for j in 0..n[1] {
                    for k in 0..n[2] {
                        let c = [i, j, k];
                        if c[axis] + 1 >= n[axis] {
                            continue;
                        }
                        let mut w = 1.0;
                        for t in 0..self.dim {
                            if t != axis {
                                w *= self.axis_weight(t, c[t]);
                            }
                        }
                        let a = i * s[0] + j * s[1] + k * s[2];
                        f(a, a + s[axis], w);
                    }
                }
            }
        }
    }

    /// Neighbour list of a node: `(neighbour, stiffness weight)` pairs.
    pub(crate) fn neighbors(&self, idx: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let c = self.coords(idx);
        let s = self.strides();
        for axis in 0..self.dim {
            let mut w = 1.0;
            for t in 0..self.dim {
                if t != axis {
                    w *= self.axis_weight(t, c[t]);
                }
            }
            if c[axis] > 0 {
                out.push((idx - s[axis], w));
            }
            if c[axis] < self.cells[axis] {
                out.push((idx + s[axis], w));
            }
        }
    }

    /// Multilinear interpolation stencil at `p`: up to eight `(node, weight)`
    /// pairs. `None` when `p` lies outside the box.
    pub(crate) fn stencil(&self, p: &Point) -> Option<([(usize, f64); 8], usize)> {
        let tol = 1e-9 * self.h;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..self.dim {
            let t = (p[k] - self.origin[k]) / self.h;
            if !(t >= -tol / self.h && t <= self.cells[k] as f64 + tol / self.h) {
                return None;
            }
            let t = t.clamp(0.0, self.cells[k] as f64);
            let mut i = libm::floor(t) as usize;
            if i >= self.cells[k] {
                i = self.cells[k] - 1;
            }
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let mut out = [(0usize, 0.0); 8];
        let corners = 1usize << self.dim;
        for (m, slot) in out.iter_mut().enumerate().take(corners) {
            let mut c = base;
            let mut w = 1.0;
            for k in 0..self.dim {
                if (m >> k) & 1 == 1 {
                    c[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            *slot = (self.index(c), w);
        }
        Some((out, corners))
    }
}

/// A real function sampled at every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at every node. Non-finite samples are replaced by zero.
    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let v = f(&grid.point(i));
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn positive_part(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn negative_part(&self) -> Self {
        self.map(|v| (-v).max(0.0))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn ensure_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Multilinear interpolation; `None` outside the box.
    pub fn sample(&self, p: &Point) -> Option<f64> {
        let (st, n) = self.grid.stencil(p)?;
        Some(st[..n].iter().map(|&(i, w)| w * self.values[i]).sum())
    }
}

/// Trapezoid-rule integral: node values times node weights.
pub fn integrate(field: &ScalarField) -> f64 {
    let g = field.grid();
    field.values().iter().enumerate().map(|(i, v)| v * g.node_weight(i)).sum()
}

/// Weighted sum `sum_a w_a u_a v_a`.
pub fn integrate_product(u: &ScalarField, v: &ScalarField) -> f64 {
    let g = u.grid();
    (0..g.len()).map(|i| g.node_weight(i) * u.values()[i] * v.values()[i]).sum()
}

/// Discrete Dirichlet energy. Each cell contributes `h^dim` times the sum
/// over axes of the squared forward difference quotient, averaged over the
/// cell's parallel edges. Exact for linear fields, zero only for constants
/// and invariant under mirror symmetries of the box.
pub fn dirichlet_energy(field: &ScalarField) -> f64 {
    dirichlet_form_values(field.grid(), field.values(), field.values())
}

/// Symmetric bilinear form whose diagonal is [`dirichlet_energy`].
pub fn dirichlet_form(u: &ScalarField, v: &ScalarField) -> Result<f64> {
    u.ensure_same_grid(v)?;
    Ok(dirichlet_form_values(u.grid(), u.values(), v.values()))
}

pub(crate) fn dirichlet_form_values(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    let scale = powi(grid.h(), grid.dim() as i32 - 2);
    let mut acc = 0.0;
    grid.for_each_edge(|a, b, c| acc += c * (u[a] - u[b]) * (v[a] - v[b]));
    acc * scale
}

/// `out = K u` where `u^T K u` is the Dirichlet energy; `K u` is half the
/// energy gradient.
pub(crate) fn apply_stiffness(grid: &Grid, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let scale = powi(grid.h(), grid.dim() as i32 - 2);
    grid.for_each_edge(|a, b, c| {
        let d = scale * c * (u[a] - u[b]);
        out[a] += d;
        out[b] -= d;
    });
}

/// Discrete Laplacian `-(K u)_a / w_a`: the standard 5/7-point stencil at
/// interior nodes, its natural Neumann closure on the boundary.
pub fn laplacian(field: &ScalarField) -> ScalarField {
    let g = *field.grid();
    let mut out = vec![0.0; g.len()];
    apply_stiffness(&g, field.values(), &mut out);
    for (i, o) in out.iter_mut().enumerate() {
        *o = -*o / g.node_weight(i);
    }
    ScalarField { grid: g, values: out }
}

/// Squared gradient of a cell (given by its lowest corner), using the same
/// edge averaging as [`dirichlet_energy`].
pub(crate) fn cell_gradient_sq(grid: &Grid, u: &[f64], corner: [usize; 3]) -> f64 {
    let dim = grid.dim();
    let base = grid.index(corner);
    let s = grid.strides();
    let mut total = 0.0;
    let per_axis = (1usize << (dim - 1)) as f64;
    for axis in 0..dim {
        let mut acc = 0.0;
        for m in 0..(1usize << dim) {
            if (m >> axis) & 1 == 1 {
                continue;
            }
            let mut a = base;
            for t in 0..dim {
                if (m >> t) & 1 == 1 {
                    a += s[t];
                }
            }
            let d = u[a + s[axis]] - u[a];
            acc += d * d;
        }
        total += acc / per_axis;
    }
    total / (grid.h() * grid.h())
}

/// Antipodally symmetric unit directions: `n` equispaced angles in 2D (`n`
/// rounded up to even), or a Fibonacci lattice plus its antipodes in 3D.
pub fn sphere_directions(dim: usize, n: usize) -> Vec<Point> {
    if dim == 2 {
        let n = n + n % 2;
        (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                [libm::cos(t), libm::sin(t), 0.0]
            })
            .collect()
    } else {
        let m = n.div_ceil(2).max(1);
        let golden = PI * (3.0 - libm::sqrt(5.0));
        let mut out = Vec::with_capacity(2 * m);
        for k in 0..m {
            let z = 1.0 - (2 * k + 1) as f64 / m as f64;
            let rho = libm::sqrt((1.0 - z * z).max(0.0));
            let t = golden * k as f64;
            out.push([rho * libm::cos(t), rho * libm::sin(t), z]);
        }
        for k in 0..m {
            let p = out[k];
            out.push([-p[0], -p[1], -p[2]]);
        }
        out
    }
}

/// Number of sample directions used for spheres of radius `r`: at least
/// `max(64, 8r/h)` per great circle.
pub(crate) fn sphere_sample_count(dim: usize, r: f64, h: f64) -> usize {
    let per_circle = libm::ceil((8.0 * r / h).max(64.0)) as usize;
    if dim == 2 {
        per_circle
    } else {
        per_circle * per_circle / 2
    }
}

/// Mean of the interpolated field over the sphere `|x - center| = r`.
pub fn spherical_average(field: &ScalarField, center: &Point, r: f64) -> Result<f64> {
    let g = field.grid();
    if !(r > 0.0) || g.distance_to_boundary(center) < r - 1e-9 * g.h() {
        return Err(Error::BallEscapesBox { radius: r });
    }
    let dirs = sphere_directions(g.dim(), sphere_sample_count(g.dim(), r, g.h()));
    let mut acc = 0.0;
    for d in &dirs {
        let p = [center[0] + r * d[0], center[1] + r * d[1], center[2] + r * d[2]];
        acc += field.sample(&p).ok_or(Error::BallEscapesBox { radius: r })?;
    }
    Ok(acc / dirs.len() as f64)
}
