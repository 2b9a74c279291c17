//! Newtonian kernel and potentials, harmonic test functions, surface
//! integrals by contour and by Green's identity, quadrature-identity
//! residuals, the concentration check and windowed null-surface residuals.

use alloc::{collections::BTreeMap, format, string::String, vec, vec::Vec};
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::boundary::{extract_contour, BoundaryGeometry, ProbeReport, Verdict};
use crate::grid::{dist, dot, norm, powi, sub, unit_ball_volume, Grid, Point, ScalarField};
use crate::measure::{rasterize_measure, MeasureSpec, Sign};
use crate::minimize::{PhaseSolution, ProblemKind};
use crate::reference::{ExteriorBall, TwoPlane, TwoPlaneKind};
use crate::{Error, Result};

/// Fundamental solution of `-Δ` as a function of the distance.
pub(crate) fn kernel_of_distance(r: f64, dim: usize) -> f64 {
    if dim == 2 {
        -libm::log(r) / (2.0 * PI)
    } else {
        1.0 / (4.0 * PI * r)
    }
}

/// `G(x - y)` with `-ΔG = δ`: `-(1/2π) log|x|` in 2D, `1/(4π|x|)` in 3D.
pub fn newtonian_kernel(x: &Point, y: &Point, dim: usize) -> Result<f64> {
    let r = dist(x, y);
    if r == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(kernel_of_distance(r, dim))
}

/// Newtonian potential `∫ G(x - y) f(y) dy` of a node density. Sources are
/// lumped into blocks and the potential is evaluated on a coarse lattice,
/// then interpolated; the kernel distance is floored at one fine cell.
pub fn newtonian_potential(f: &ScalarField) -> ScalarField {
    let grid = *f.grid();
    let dim = grid.dim();
    let h = grid.h();
    let cells = grid.cells_per_axis().to_vec();
    let mut sources: Vec<(Point, f64)> = Vec::new();
    let mut block = 1usize;
    loop {
        sources.clear();
        let nb: Vec<usize> = cells.iter().map(|&c| (c + 1).div_ceil(block)).collect();
        let count: usize = nb.iter().product();
        let mut mass = alloc::vec![0.0; count];
        let mut absm = alloc::vec![0.0; count];
        let mut cen = alloc::vec![[0.0f64; 3]; count];
        for (i, &v) in f.values().iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let c = grid.coords(i);
            let mut b = 0;
            for k in 0..dim {
                b = b * nb[k] + c[k] / block;
            }
            let m = v * grid.node_weight(i);
            let p = grid.point(i);
            mass[b] += m;
            absm[b] += m.abs();
            for k in 0..3 {
                cen[b][k] += m.abs() * p[k];
            }
        }
        for b in 0..count {
            if absm[b] > 0.0 {
                let c = cen[b];
                sources.push(([c[0] / absm[b], c[1] / absm[b], c[2] / absm[b]], mass[b]));
            }
        }
        if sources.len() <= 4096 {
            break;
        }
        block *= 2;
    }
    let floor = h * block as f64 * 0.5;
    let eval = |p: &Point| -> f64 {
        sources
            .iter()
            .map(|(c, m)| m * kernel_of_distance(dist(p, c).max(floor).max(h), dim))
            .sum()
    };
    let mut stride = 1usize;
    while cells.iter().map(|&c| c / stride + 2).product::<usize>() > 20_000 && cells.iter().all(|&c| c / (2 * stride) >= 8) {
        stride *= 2;
    }
    if stride == 1 {
        return ScalarField::from_fn(grid, eval);
    }
    let coarse_cells: Vec<usize> = cells.iter().map(|&c| c.div_ceil(stride)).collect();
    let coarse = match Grid::new(dim, grid.origin(), h * stride as f64, &coarse_cells) {
        Ok(g) => g,
        Err(_) => return ScalarField::from_fn(grid, eval),
    };
    let cf = ScalarField::from_fn(coarse, eval);
    ScalarField::from_fn(grid, |p| cf.sample(p).unwrap_or_else(|| eval(p)))
}

/// A monomial `coef · Π (x_k - c_k)^{powers_k}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: [u8; 3],
}

/// Test functions for the quadrature identity. All but `SquaredDistance`
/// are harmonic away from their singularities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { value: f64 },
    HarmonicPolynomial { label: String, center: Point, terms: Vec<Monomial> },
    /// `G(x - y)`.
    Kernel { y: Point, dim: usize },
    /// `|x - y|²`, subharmonic.
    SquaredDistance { y: Point },
    /// A finite linear combination.
    Combination { terms: Vec<(f64, TestFunction)> },
}

impl TestFunction {
    pub fn label(&self) -> String {
        match self {
            TestFunction::Constant { value } => format!("constant({value})"),
            TestFunction::HarmonicPolynomial { label, .. } => label.clone(),
            TestFunction::Kernel { y, .. } => format!("kernel({:.4} {:.4} {:.4})", y[0], y[1], y[2]),
            TestFunction::SquaredDistance { .. } => String::from("squared_distance"),
            TestFunction::Combination { terms } => format!("combination({})", terms.len()),
        }
    }

    pub fn value(&self, p: &Point) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::HarmonicPolynomial { center, terms, .. } => {
                let d = sub(p, center);
                terms
                    .iter()
                    .map(|m| m.coef * (0..3).map(|k| powi(d[k], m.powers[k] as i32)).product::<f64>())
                    .sum()
            }
            TestFunction::Kernel { y, dim } => kernel_of_distance(dist(p, y), *dim),
            TestFunction::SquaredDistance { y } => {
                let d = sub(p, y);
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
            }
            TestFunction::Combination { terms } => terms.iter().map(|(c, t)| c * t.value(p)).sum(),
        }
    }

    pub fn gradient(&self, p: &Point) -> Point {
        match self {
            TestFunction::Constant { .. } => [0.0; 3],
            TestFunction::HarmonicPolynomial { center, terms, .. } => {
                let d = sub(p, center);
                let mut g = [0.0; 3];
                for m in terms {
                    for (k, slot) in g.iter_mut().enumerate() {
                        if m.powers[k] == 0 {
                            continue;
                        }
                        let mut v = m.coef * m.powers[k] as f64;
                        for a in 0..3 {
                            let e = m.powers[a] as i32 - (a == k) as i32;
                            v *= powi(d[a], e);
                        }
                        *slot += v;
                    }
                }
                g
            }
            TestFunction::Kernel { y, dim } => {
                // ∇G = -x/(2π|x|²) in 2D, -x/(4π|x|³) in 3D.
                let d = sub(p, y);
                let r = norm(&d);
                let c = if *dim == 2 { -1.0 / (2.0 * PI * r * r) } else { -1.0 / (4.0 * PI * r * r * r) };
                [c * d[0], c * d[1], c * d[2]]
            }
            TestFunction::SquaredDistance { y } => {
                let d = sub(p, y);
                [2.0 * d[0], 2.0 * d[1], 2.0 * d[2]]
            }
            TestFunction::Combination { terms } => {
                let mut g = [0.0; 3];
                for (c, t) in terms {
                    let q = t.gradient(p);
                    for k in 0..3 {
                        g[k] += c * q[k];
                    }
                }
                g
            }
        }
    }

    /// Centred second-difference Laplacian with step `h`.
    pub fn discrete_laplacian(&self, p: &Point, h: f64, dim: usize) -> f64 {
        let c = self.value(p);
        let mut acc = 0.0;
        for k in 0..dim {
            let mut a = *p;
            let mut b = *p;
            a[k] += h;
            b[k] -= h;
            acc += self.value(&a) - 2.0 * c + self.value(&b);
        }
        acc / (h * h)
    }
}

/// Smallest axis-aligned box holding the nodes where some phase exceeds
/// `tau`.
pub fn support_bounding_box(phases: &[ScalarField], tau: f64) -> Option<(Point, Point)> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for u in phases {
        let g = u.grid();
        for (a, &v) in u.values().iter().enumerate() {
            if v > tau {
                any = true;
                let p = g.point(a);
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
    }
    any.then_some((lo, hi))
}

fn poly(label: &str, center: Point, terms: &[(f64, [u8; 3])]) -> TestFunction {
    TestFunction::HarmonicPolynomial {
        label: String::from(label),
        center,
        terms: terms.iter().map(|&(coef, powers)| Monomial { coef, powers }).collect(),
    }
}

/// Constant 1, harmonic polynomials centred on the bounding box (degree 1
/// for `k = 1`, degree 2 otherwise), and for `k >= 2` kernels at `k`
/// points on the sphere of 1.5 times the box circumradius.
pub fn harmonic_test_set(
    support_box: (Point, Point),
    measure_box: Option<(Point, Point)>,
    dim: usize,
    k: usize,
) -> Result<Vec<TestFunction>> {
    if k == 0 {
        return Err(Error::InvalidParameter("test count must be at least 1".into()));
    }
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidParameter(format!("dimension {dim}")));
    }
    let (mut lo, mut hi) = support_box;
    if let Some((a, b)) = measure_box {
        for i in 0..3 {
            lo[i] = lo[i].min(a[i]);
            hi[i] = hi[i].max(b[i]);
        }
    }
    let mut c = [0.0; 3];
    let mut half = [0.0; 3];
    for i in 0..dim {
        c[i] = 0.5 * (lo[i] + hi[i]);
        half[i] = 0.5 * (hi[i] - lo[i]);
    }
    let names = ["x", "y", "z"];
    let mut out = vec![TestFunction::Constant { value: 1.0 }];
    for i in 0..dim {
        let mut p = [0u8; 3];
        p[i] = 1;
        out.push(poly(names[i], c, &[(1.0, p)]));
    }
    if k >= 2 {
        for i in 0..dim {
            for j in i + 1..dim {
                let mut p = [0u8; 3];
                p[i] = 1;
                p[j] = 1;
                out.push(poly(&format!("{}{}", names[i], names[j]), c, &[(1.0, p)]));
            }
        }
        for i in 0..dim - 1 {
            let (mut a, mut b) = ([0u8; 3], [0u8; 3]);
            a[i] = 2;
            b[i + 1] = 2;
            out.push(poly(&format!("{}2-{}2", names[i], names[i + 1]), c, &[(1.0, a), (-1.0, b)]));
        }
        // Keep the kernel ring away from a degenerate (point-like) box.
        let radius = 1.5 * norm(&half).max(1e-3);
        let dirs = crate::grid::sphere_directions(dim, k);
        for d in dirs.iter().take(k) {
            let y = [c[0] + radius * d[0], c[1] + radius * d[1], c[2] + radius * d[2]];
            out.push(TestFunction::Kernel { y, dim });
        }
    }
    Ok(out)
}

/// `Σ g(midpoint) h(midpoint) weight` over the elements.
pub fn surface_integral_contour(geometry: &BoundaryGeometry, g: &ScalarField, h: &TestFunction) -> f64 {
    surface_integral_contour_with(geometry, g, &|p| h.value(p))
}

fn surface_integral_contour_with(geometry: &BoundaryGeometry, g: &ScalarField, h: &impl Fn(&Point) -> f64) -> f64 {
    geometry
        .elements
        .iter()
        .map(|e| g.sample(&e.midpoint).unwrap_or(0.0) * h(&e.midpoint) * e.weight)
        .sum()
}

/// Volume route for `∫_{∂Ω_s} |∇u| h dσ` on the phase `w = (s u)⁺` with
/// `-Δw = f` on `Ω_s = {w > tau}`: `∫_{Ω_s} h f - ∫ ∇h·∇w`, the second term
/// being the discrete Dirichlet form of the node-sampled `h` against `w`.
pub fn surface_integral_green(
    u: &ScalarField,
    sign: Sign,
    f: &ScalarField,
    h: &TestFunction,
    tau: f64,
) -> Result<f64> {
    u.ensure_same_grid(f)?;
    let grid = *u.grid();
    let s = sign.factor();
    let w: Vec<f64> = u.values().iter().map(|&v| (s * v).max(0.0)).collect();
    Ok(green_with(&grid, &w, f.values(), tau, |a| h.value(&grid.point(a)), |_| false).0)
}

/// Returns the Green-route value and the volume term `∫ w Δh` over the nodes
/// whose stencil touches a node flagged by `collar`. That term vanishes for
/// harmonic `h` and measures what a cutoff adds to the identity.
fn green_with(
    grid: &Grid,
    w: &[f64],
    f: &[f64],
    tau: f64,
    h: impl Fn(usize) -> f64,
    collar: impl Fn(usize) -> bool,
) -> (f64, f64) {
    let mut source = 0.0;
    for a in 0..grid.len() {
        if w[a] > tau && f[a] != 0.0 {
            source += grid.node_weight(a) * h(a) * f[a];
        }
    }
    let mut touched: Vec<bool> = (0..grid.len()).map(&collar).collect();
    grid.for_each_edge(|a, b, _| {
        if collar(a) {
            touched[b] = true;
        }
        if collar(b) {
            touched[a] = true;
        }
    });
    let scale = powi(grid.h(), grid.dim() as i32 - 2);
    let (mut form, mut col) = (0.0, 0.0);
    grid.for_each_edge(|a, b, c| {
        let (wa, wb) = (w[a], w[b]);
        if wa == 0.0 && wb == 0.0 {
            return;
        }
        let t = scale * c * (h(a) - h(b));
        form += t * (wa - wb);
        if touched[a] {
            col += t * wa;
        }
        if touched[b] {
            col -= t * wb;
        }
    });
    (source - form, -col)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QIRow {
    pub test_id: usize,
    pub kind: String,
    /// `(i, j)`, phases counted from 1 and `j = 0` for the null phase.
    pub pair: (usize, usize),
    pub lhs_contour: f64,
    pub lhs_green: f64,
    pub rhs_measure: f64,
    /// `lhs - rhs - collar` on each route.
    pub residual_contour: f64,
    pub residual_green: f64,
    /// `max(|lhs_contour|, |lhs_green|, |rhs|, 1)`.
    pub scale: f64,
    /// Volume term `∫ (u_i - u_j) Δ(χh)` the cutoff `χ` adds to the
    /// identity; zero unless the pair is cut off (three or more phases).
    pub collar: f64,
}

impl QIRow {
    pub fn relative_contour(&self) -> f64 {
        self.residual_contour.abs() / self.scale
    }

    pub fn relative_green(&self) -> f64 {
        self.residual_green.abs() / self.scale
    }

    pub fn route_disagreement(&self) -> f64 {
        (self.residual_contour - self.residual_green).abs() / self.scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QIReport {
    pub rows: Vec<QIRow>,
    pub tau: f64,
    pub notes: Vec<String>,
}

impl QIReport {
    pub fn max_relative_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.relative_contour().max(r.relative_green())).fold(0.0, f64::max)
    }

    pub fn max_route_disagreement(&self) -> f64 {
        self.rows.iter().map(QIRow::route_disagreement).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "test_id,kind,phase_i,phase_j,lhs_contour,lhs_green,rhs,residual_contour,residual_green,scale,collar\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.test_id,
                r.kind,
                r.pair.0,
                r.pair.1,
                r.lhs_contour,
                r.lhs_green,
                r.rhs_measure,
                r.residual_contour,
                r.residual_green,
                r.scale,
                r.collar
            ));
        }
        s
    }
}

/// `χ` with `χ = 0` within `2h` of the supports of `others`, rising
/// smoothly to 1 at `8h`. The ramp is wide enough for the contour route,
/// whose extrapolation samples `χ` a few cells inside each boundary.
fn cutoff(grid: &Grid, others: &[&ScalarField], tau: f64) -> Vec<f64> {
    let h = grid.h();
    let reach = 8.0 * h;
    let mut d = vec![f64::INFINITY; grid.len()];
    let mut nb = Vec::new();
    for u in others {
        for a in 0..grid.len() {
            if u.values()[a] <= tau {
                continue;
            }
            d[a] = 0.0;
            grid.neighbors(a, &mut nb);
            if nb.iter().all(|&(b, _)| u.values()[b] > tau) {
                continue;
            }
            let c = grid.point(a);
            grid.for_each_in_range(grid.node_range(&c, reach), |b| {
                let r = dist(&grid.point(b), &c);
                if r < d[b] {
                    d[b] = r;
                }
            });
        }
    }
    d.iter()
        .map(|&r| {
            let t = ((r - 2.0 * h) / (6.0 * h)).clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        })
        .collect()
}

fn phase_pairs(kind: ProblemKind, m: usize) -> Vec<(usize, usize)> {
    match kind {
        ProblemKind::OnePhase => vec![(1, 0)],
        ProblemKind::TwoPhase => vec![(1, 2)],
        ProblemKind::MultiPhase => {
            let mut out = Vec::new();
            for i in 1..=m {
                for j in i + 1..=m {
                    out.push((i, j));
                }
            }
            out
        }
    }
}

struct QIContext<'a> {
    phases: &'a [ScalarField],
    densities: &'a [ScalarField],
    g: &'a ScalarField,
    tau: f64,
    /// Per phase, contours at levels `ℓ` and `2ℓ`, or a single contour at
    /// `tau` when the phase is too thin to extrapolate.
    contours: Vec<(BoundaryGeometry, Option<BoundaryGeometry>)>,
    notes: Vec<String>,
}

impl QIContext<'_> {
    fn new<'a>(
        phases: &'a [ScalarField],
        densities: &'a [ScalarField],
        g: &'a ScalarField,
        tau: f64,
    ) -> Result<QIContext<'a>> {
        if phases.is_empty() {
            return Err(Error::InvalidParameter("no phases".into()));
        }
        if densities.len() != phases.len() {
            return Err(Error::LengthMismatch { expected: phases.len(), found: densities.len() });
        }
        for f in phases.iter().chain(densities).chain(core::iter::once(g)) {
            f.ensure_same_grid(&phases[0])?;
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter("tau must be positive".into()));
        }
        let grid = phases[0].grid();
        let mut notes = Vec::new();
        let mut contours = Vec::new();
        for (i, u) in phases.iter().enumerate() {
            let (mut sum, mut count) = (0.0, 0usize);
            for (&v, &gv) in u.values().iter().zip(g.values()) {
                if v > tau {
                    sum += gv;
                    count += 1;
                }
            }
            let level = 2.0 * grid.h() * if count > 0 { sum / count as f64 } else { 0.0 };
            if level > tau && u.max() > 4.0 * level {
                contours.push((extract_contour(u, level, 1.0)?, Some(extract_contour(u, 2.0 * level, 1.0)?)));
            } else {
                notes.push(format!("phase {} too thin for level extrapolation; contour taken at tau", i + 1));
                contours.push((extract_contour(u, tau, 1.0)?, None));
            }
        }
        Ok(QIContext { phases, densities, g, tau, contours, notes })
    }

    /// Contour route for phase `i`: the clamped field is not linear across
    /// the free boundary, so levels near 0 trace a staircase. Contours at
    /// `ℓ` and `2ℓ` sit on the smooth part and are extrapolated to level 0.
    fn contour(&self, i: usize, h: impl Fn(&Point) -> f64) -> f64 {
        let (a, b) = &self.contours[i - 1];
        let ia = surface_integral_contour_with(a, self.g, &h);
        match b {
            Some(b) => 2.0 * ia - surface_integral_contour_with(b, self.g, &h),
            None => ia,
        }
    }

    fn row(&self, test_id: usize, pair: (usize, usize), chi: Option<&ScalarField>, h: &TestFunction) -> QIRow {
        let grid = *self.phases[0].grid();
        let hv = |p: &Point| h.value(p) * chi.map_or(1.0, |c| c.sample(p).unwrap_or(0.0));
        let hn = |a: usize| h.value(&grid.point(a)) * chi.map_or(1.0, |c| c.values()[a]);
        let in_collar = |a: usize| chi.is_some_and(|c| c.values()[a] < 1.0);
        let side = |i: usize| -> (f64, f64, f64) {
            let contour = self.contour(i, hv);
            let (green, collar) =
                green_with(&grid, self.phases[i - 1].values(), self.densities[i - 1].values(), self.tau, hn, in_collar);
            (contour, green, collar)
        };
        let (ci, gi, ki) = side(pair.0);
        let (cj, gj, kj) = if pair.1 == 0 { (0.0, 0.0, 0.0) } else { side(pair.1) };
        let mut rhs = 0.0;
        for a in 0..grid.len() {
            let mut f = self.densities[pair.0 - 1].values()[a];
            if pair.1 > 0 {
                f -= self.densities[pair.1 - 1].values()[a];
            }
            if f != 0.0 {
                rhs += grid.node_weight(a) * hn(a) * f;
            }
        }
        let (lc, lg) = (ci - cj, gi - gj);
        let collar = ki - kj;
        QIRow {
            test_id,
            kind: h.label(),
            pair,
            lhs_contour: lc,
            lhs_green: lg,
            rhs_measure: rhs,
            residual_contour: lc - rhs - collar,
            residual_green: lg - rhs - collar,
            scale: lc.abs().max(lg.abs()).max(rhs.abs()).max(1.0),
            collar,
        }
    }
}

/// Quadrature-identity residuals of nonnegative phases against their
/// source densities on both routes. Pairs are `(1, 0)` for one phase,
/// `(1, 2)` for two phases (`densities = [f1, f2]` with `f2` the density of
/// `μ⁻`), and every `(i, j)` for `m >= 3` phases, where the test function is
/// multiplied by a cutoff vanishing near the other phases.
pub fn qi_report(
    phases: &[ScalarField],
    kind: ProblemKind,
    densities: &[ScalarField],
    g: &ScalarField,
    tests: &[TestFunction],
    tau: f64,
) -> Result<QIReport> {
    let ctx = QIContext::new(phases, densities, g, tau)?;
    let grid = *phases[0].grid();
    let mut rows = Vec::new();
    let mut notes = ctx.notes.clone();
    for pair in phase_pairs(kind, phases.len()) {
        let chi = if kind == ProblemKind::MultiPhase && phases.len() > 2 {
            let others: Vec<&ScalarField> =
                (1..=phases.len()).filter(|&k| k != pair.0 && k != pair.1).map(|k| &phases[k - 1]).collect();
            Some(ScalarField::new(grid, cutoff(&grid, &others, tau))?)
        } else {
            None
        };
        for (t, h) in tests.iter().enumerate() {
            rows.push(ctx.row(t, pair, chi.as_ref(), h));
        }
    }
    if kind == ProblemKind::MultiPhase && phases.len() > 2 {
        notes.push(String::from("test functions cut off within 2h-8h of the remaining phases"));
    }
    Ok(QIReport { rows, tau, notes })
}

/// [`qi_report`] for a solver result.
pub fn qi_residual(
    solution: &PhaseSolution,
    densities: &[ScalarField],
    g: &ScalarField,
    tests: &[TestFunction],
) -> Result<QIReport> {
    qi_report(&solution.phase_fields(), solution.kind, densities, g, tests, solution.tau)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubharmonicReport {
    /// `lhs - rhs` on each route; the inequality asks for `>= 0`.
    pub residual_contour: f64,
    pub residual_green: f64,
    pub scale: f64,
    pub warnings: Vec<String>,
}

/// One- or two-phase quadrature inequality for `h_sub` subharmonic on the
/// first phase and superharmonic on the second.
pub fn subharmonic_qi_check(
    phases: &[ScalarField],
    densities: &[ScalarField],
    g: &ScalarField,
    h_sub: &TestFunction,
    tau: f64,
) -> Result<SubharmonicReport> {
    if phases.len() > 2 {
        return Err(Error::InvalidParameter("the inequality is stated for one or two phases".into()));
    }
    let ctx = QIContext::new(phases, densities, g, tau)?;
    let pair = (1, if phases.len() == 2 { 2 } else { 0 });
    let row = ctx.row(0, pair, None, h_sub);
    let grid = *phases[0].grid();
    let (h, dim) = (grid.h(), grid.dim());
    let mut warnings = Vec::new();
    for (i, side) in [(0usize, 1.0), (1, -1.0)] {
        let Some(u) = phases.get(i) else { continue };
        let mut worst = 0.0f64;
        let mut peak = 0.0f64;
        for a in 0..grid.len() {
            if u.values()[a] > tau {
                let p = grid.point(a);
                worst = worst.min(side * h_sub.discrete_laplacian(&p, h, dim));
                peak = peak.max(h_sub.value(&p).abs());
            }
        }
        if worst < -h * h * (1.0 + peak) {
            let what = if side > 0.0 { "subharmonic" } else { "superharmonic" };
            warnings.push(format!("test function is not {what} on phase {} (discrete Laplacian {worst:e})", i + 1));
        }
    }
    Ok(SubharmonicReport {
        residual_contour: row.residual_contour,
        residual_green: row.residual_green,
        scale: row.scale,
        warnings,
    })
}

/// `N 6^N c / 3`.
pub fn sakai_threshold(dim: usize, c_bound: f64) -> f64 {
    dim as f64 * powi(6.0, dim as i32) * c_bound / 3.0
}

/// Concentration check at every support point of `spec`: the score of a
/// point is `max_r r μ(B_r(x)) / |B_r|` over `radii` from the rasterized
/// density. The report describes the worst point and passes when its
/// score exceeds [`sakai_threshold`].
pub fn sakai_check(spec: &MeasureSpec, grid: &Grid, c_bound: f64, radii: &[f64]) -> Result<ProbeReport> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("radii must be nonempty and decreasing".into()));
    }
    let min = 2.0 * grid.h();
    let smallest = radii[radii.len() - 1];
    if smallest < min * (1.0 - 1e-12) {
        return Err(Error::RadiusBelowGrid { radius: smallest, min });
    }
    let f = rasterize_measure(spec, grid)?;
    let dim = grid.dim();
    let threshold = sakai_threshold(dim, c_bound);
    let mut worst: Option<(f64, Point, Vec<f64>)> = None;
    for x in spec.support_points(dim) {
        let values: Vec<f64> = radii
            .iter()
            .map(|&r| {
                let mut m = 0.0;
                grid.for_each_in_range(grid.node_range(&x, r), |a| {
                    if dist(&grid.point(a), &x) <= r * (1.0 + 1e-12) {
                        m += grid.node_weight(a) * f.values()[a];
                    }
                });
                r * m / (unit_ball_volume(dim) * powi(r, dim as i32))
            })
            .collect();
        let score = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if worst.as_ref().is_none_or(|w| score < w.0) {
            worst = Some((score, x, values));
        }
    }
    let Some((score, center, values)) = worst else {
        return Err(Error::InvalidParameter("measure has no support points".into()));
    };
    let mut details = BTreeMap::new();
    details.insert(String::from("score"), score);
    details.insert(String::from("c_bound"), c_bound);
    Ok(ProbeReport {
        probe: String::from("sakai"),
        center,
        radii: radii.to_vec(),
        values,
        verdict: if score > threshold { Verdict::Pass } else { Verdict::Fail },
        threshold: Some(threshold),
        details,
        notes: Vec::new(),
    })
}

/// Closed-form null quadrature surfaces with `g ≡ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NullSurface {
    TwoPlane(TwoPlane),
    ExteriorBall(ExteriorBall),
}

impl NullSurface {
    fn dim(&self) -> usize {
        match self {
            NullSurface::TwoPlane(t) => t.dim,
            NullSurface::ExteriorBall(b) => b.dim,
        }
    }

    fn value(&self, p: &Point) -> f64 {
        match self {
            NullSurface::TwoPlane(t) => t.value(p),
            NullSurface::ExteriorBall(b) => b.value(p),
        }
    }

    fn gradient(&self, p: &Point) -> Point {
        match self {
            NullSurface::TwoPlane(t) => t.gradient(p),
            NullSurface::ExteriorBall(b) => b.gradient(p),
        }
    }

    pub fn is_minimizer(&self) -> bool {
        match self {
            NullSurface::TwoPlane(t) => t.is_minimizer(),
            NullSurface::ExteriorBall(_) => true,
        }
    }

    /// Region of phase `s` as seen from the window sphere `S_ρ(c)`: the cap
    /// `{ξ : ξ·axis >= cos_alpha}` of directions.
    fn window_cap(&self, s: f64, c: &Point, rho: f64) -> Option<(Point, f64)> {
        let dim = self.dim();
        let mut en = [0.0; 3];
        en[dim - 1] = 1.0;
        let neg = [-en[0], -en[1], -en[2]];
        let above = |p: f64| Some((en, ((p - c[dim - 1]) / rho).clamp(-1.0, 1.0)));
        let below = |p: f64| Some((neg, ((c[dim - 1] - p) / rho).clamp(-1.0, 1.0)));
        match self {
            NullSurface::TwoPlane(t) => match (t.kind, s > 0.0) {
                (TwoPlaneKind::Plus, true) | (TwoPlaneKind::Gap(_), true) | (TwoPlaneKind::Linear(_), true) => {
                    above(0.0)
                }
                (TwoPlaneKind::Minus, false) | (TwoPlaneKind::Linear(_), false) => below(0.0),
                (TwoPlaneKind::Gap(g), false) => below(-g),
                _ => None,
            },
            NullSurface::ExteriorBall(b) => {
                if s < 0.0 {
                    return None;
                }
                let d = sub(c, &b.center);
                let dd = norm(&d);
                if dd == 0.0 {
                    return if rho > b.radius { Some((en, -1.0)) } else { None };
                }
                let axis = [d[0] / dd, d[1] / dd, d[2] / dd];
                let cos = (b.radius * b.radius - dd * dd - rho * rho) / (2.0 * rho * dd);
                Some((axis, cos.clamp(-1.0, 1.0)))
            }
        }
    }

    /// Pieces of `∂Ω_s ∩ B_ρ(c)`.
    fn boundary_pieces(&self, s: f64, c: &Point, rho: f64) -> Vec<Piece> {
        let dim = self.dim();
        let mut en = [0.0; 3];
        en[dim - 1] = 1.0;
        let disk = |p: f64| {
            let off = p - c[dim - 1];
            if off.abs() >= rho {
                return None;
            }
            let mut o = *c;
            o[dim - 1] = p;
            Some(Piece::Disk { center: o, normal: en, radius: libm::sqrt(rho * rho - off * off) })
        };
        let mut out = Vec::new();
        match self {
            NullSurface::TwoPlane(t) => {
                let plane = match (t.kind, s > 0.0) {
                    (TwoPlaneKind::Minus, true) | (TwoPlaneKind::Plus, false) => None,
                    (TwoPlaneKind::Gap(g), false) => Some(-g),
                    _ => Some(0.0),
                };
                out.extend(plane.and_then(disk));
            }
            NullSurface::ExteriorBall(b) => {
                if s > 0.0 {
                    let d = sub(c, &b.center);
                    let dd = norm(&d);
                    let r = b.radius;
                    if dd == 0.0 {
                        if rho > r {
                            out.push(Piece::Cap { center: b.center, radius: r, axis: en, cos_alpha: -1.0 });
                        }
                    } else {
                        let axis = [d[0] / dd, d[1] / dd, d[2] / dd];
                        let cos = (r * r + dd * dd - rho * rho) / (2.0 * r * dd);
                        if cos < 1.0 {
                            out.push(Piece::Cap { center: b.center, radius: r, axis, cos_alpha: cos.max(-1.0) });
                        }
                    }
                }
            }
        }
        out
    }
}

enum Piece {
    /// Flat disk (a segment in 2D).
    Disk { center: Point, normal: Point, radius: f64 },
    /// `{center + radius ξ : ξ·axis >= cos_alpha}`.
    Cap { center: Point, radius: f64, axis: Point, cos_alpha: f64 },
}

/// Orthonormal vectors completing `a` to a frame.
fn frame(a: &Point) -> (Point, Point) {
    let t = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot(&t, a);
    let e1 = [t[0] - d * a[0], t[1] - d * a[1], t[2] - d * a[2]];
    let n1 = norm(&e1);
    let e1 = [e1[0] / n1, e1[1] / n1, e1[2] / n1];
    let e2 = [a[1] * e1[2] - a[2] * e1[1], a[2] * e1[0] - a[0] * e1[2], a[0] * e1[1] - a[1] * e1[0]];
    (e1, e2)
}

/// In-plane unit vector orthogonal to `a` in 2D.
fn perp2(a: &Point) -> Point {
    [-a[1], a[0], 0.0]
}

/// Midpoint-rule integral of `f(point, outward unit direction)` over a
/// piece; `n` nodes per radial or polar direction.
fn integrate_piece(piece: &Piece, dim: usize, n: usize, f: &mut impl FnMut(&Point, &Point) -> f64) -> f64 {
    let nphi = 4 * n;
    match *piece {
        Piece::Disk { center, normal, radius } => {
            if dim == 2 {
                let e = perp2(&normal);
                let ds = 2.0 * radius / n as f64;
                (0..n)
                    .map(|k| {
                        let t = -radius + (k as f64 + 0.5) * ds;
                        let p = [center[0] + t * e[0], center[1] + t * e[1], 0.0];
                        f(&p, &normal) * ds
                    })
                    .sum()
            } else {
                let (e1, e2) = frame(&normal);
                let ds = radius / n as f64;
                let dphi = 2.0 * PI / nphi as f64;
                let mut acc = 0.0;
                for k in 0..n {
                    let s = (k as f64 + 0.5) * ds;
                    for j in 0..nphi {
                        let (sn, cs) = libm::sincos((j as f64 + 0.5) * dphi);
                        let p = [
                            center[0] + s * (cs * e1[0] + sn * e2[0]),
                            center[1] + s * (cs * e1[1] + sn * e2[1]),
                            center[2] + s * (cs * e1[2] + sn * e2[2]),
                        ];
                        acc += f(&p, &normal) * s * ds * dphi;
                    }
                }
                acc
            }
        }
        Piece::Cap { center, radius, axis, cos_alpha } => {
            let alpha = libm::acos(cos_alpha.clamp(-1.0, 1.0));
            if dim == 2 {
                let e = perp2(&axis);
                let db = 2.0 * alpha / n as f64;
                (0..n)
                    .map(|k| {
                        let b = -alpha + (k as f64 + 0.5) * db;
                        let (sn, cs) = libm::sincos(b);
                        let xi = [cs * axis[0] + sn * e[0], cs * axis[1] + sn * e[1], 0.0];
                        let p = [center[0] + radius * xi[0], center[1] + radius * xi[1], 0.0];
                        f(&p, &xi) * radius * db
                    })
                    .sum()
            } else {
                let (e1, e2) = frame(&axis);
                let db = alpha / n as f64;
                let dphi = 2.0 * PI / nphi as f64;
                let mut acc = 0.0;
                for k in 0..n {
                    let b = (k as f64 + 0.5) * db;
                    let (sb, cb) = libm::sincos(b);
                    for j in 0..nphi {
                        let (sn, cs) = libm::sincos((j as f64 + 0.5) * dphi);
                        let xi = [
                            cb * axis[0] + sb * (cs * e1[0] + sn * e2[0]),
                            cb * axis[1] + sb * (cs * e1[1] + sn * e2[1]),
                            cb * axis[2] + sb * (cs * e1[2] + sn * e2[2]),
                        ];
                        let p = [center[0] + radius * xi[0], center[1] + radius * xi[1], center[2] + radius * xi[2]];
                        acc += f(&p, &xi) * radius * radius * sb * db * dphi;
                    }
                }
                acc
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullWindowReport {
    /// `∫_{∂Ω_s ∩ W} g h dσ` for `s = +, -`.
    pub boundary: [f64; 2],
    /// `∫_{Ω_s ∩ ∂W} (h ∂_ν w_s - w_s ∂_ν h) dσ` with `w_s = s u`.
    pub window_flux: [f64; 2],
    /// `Σ_s s (boundary_s - window_flux_s)`.
    pub residual: f64,
    /// `max(Σ_s |boundary_s|, Σ_s |window_flux_s|, 1)`.
    pub scale: f64,
    pub is_minimizer: bool,
}

/// Windowed quadrature identity of a null surface in `W = B_ρ(c)`: by
/// Green's identity on `Ω_s ∩ W`, the boundary integral of `g h` equals
/// the flux through the window, so the residual vanishes for a surface
/// satisfying `|∇u| = 1` on its one-phase boundary. `n` sets the
/// quadrature resolution.
pub fn null_window_residual(
    surface: &NullSurface,
    center: &Point,
    rho: f64,
    h: &TestFunction,
    n: usize,
) -> Result<NullWindowReport> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter("window radius must be positive".into()));
    }
    if n < 8 {
        return Err(Error::InvalidParameter("quadrature resolution must be at least 8".into()));
    }
    let dim = surface.dim();
    let mut boundary = [0.0; 2];
    let mut flux = [0.0; 2];
    for (k, s) in [1.0f64, -1.0].into_iter().enumerate() {
        for piece in surface.boundary_pieces(s, center, rho) {
            boundary[k] += integrate_piece(&piece, dim, n, &mut |p, _| h.value(p));
        }
        if let Some((axis, cos_alpha)) = surface.window_cap(s, center, rho) {
            let cap = Piece::Cap { center: *center, radius: rho, axis, cos_alpha };
            flux[k] += integrate_piece(&cap, dim, n, &mut |p, nu| {
                let w = (s * surface.value(p)).max(0.0);
                let gu = surface.gradient(p);
                let gh = h.gradient(p);
                h.value(p) * s * dot(&gu, nu) - w * dot(&gh, nu)
            });
        }
    }
    let residual = (boundary[0] - flux[0]) - (boundary[1] - flux[1]);
    let scale = (boundary[0].abs() + boundary[1].abs()).max(flux[0].abs() + flux[1].abs()).max(1.0);
    Ok(NullWindowReport { boundary, window_flux: flux, residual, scale, is_minimizer: surface.is_minimizer() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::extract_contour;
    use crate::grid::{build_grid, integrate};
    use crate::measure::Atom;
    use crate::reference::{exterior_ball_null, radial_one_phase};

    fn cube(dim: usize, h: f64, half: f64) -> Grid {
        let n = libm::round(2.0 * half / h) as usize;
        build_grid(dim, &[-half; 3][..dim], h, &[n; 3][..dim]).unwrap()
    }

    #[test]
    fn kernel_values() {
        let o = [0.0; 3];
        let x = [1.0, 0.0, 0.0];
        assert!((newtonian_kernel(&x, &o, 3).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert_eq!(newtonian_kernel(&x, &o, 2).unwrap(), 0.0);
        assert!(matches!(newtonian_kernel(&o, &o, 3), Err(Error::CoincidentPoints)));
    }

    #[test]
    fn kernel_flux_through_spheres_is_one() {
        for dim in [2, 3] {
            let y = [0.3, -0.2, if dim == 3 { 0.1 } else { 0.0 }];
            let k = TestFunction::Kernel { y, dim };
            for r in [0.5, 2.0] {
                let cap = Piece::Cap { center: y, radius: r, axis: [1.0, 0.0, 0.0], cos_alpha: -1.0 };
                let flux = -integrate_piece(&cap, dim, 64, &mut |p, nu| dot(&k.gradient(p), nu));
                assert!((flux - 1.0).abs() < 1e-3, "dim {dim} r {r}: {flux}");
            }
        }
    }

    #[test]
    fn gradients_match_differences() {
        let tests = harmonic_test_set(([-1.0, -0.5, -0.3], [1.0, 0.5, 0.7]), None, 3, 4).unwrap();
        let p = [0.31, -0.17, 0.23];
        let e = 1e-6;
        for t in tests.iter().chain([&TestFunction::SquaredDistance { y: [0.1, 0.2, 0.3] }]) {
            let g = t.gradient(&p);
            for k in 0..3 {
                let (mut a, mut b) = (p, p);
                a[k] += e;
                b[k] -= e;
                let fd = (t.value(&a) - t.value(&b)) / (2.0 * e);
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "{} axis {k}", t.label());
            }
        }
    }

    #[test]
    fn single_test_is_constant_and_linear() {
        for dim in [2, 3] {
            let set = harmonic_test_set(([-1.0; 3], [1.0; 3]), None, dim, 1).unwrap();
            assert_eq!(set.len(), 1 + dim);
            assert_eq!(set[0], TestFunction::Constant { value: 1.0 });
            assert!(set[1..].iter().all(|t| matches!(t, TestFunction::HarmonicPolynomial { .. })));
        }
        assert!(harmonic_test_set(([-1.0; 3], [1.0; 3]), None, 2, 0).is_err());
    }

    #[test]
    fn kernels_lie_outside_the_inflated_box() {
        let (lo, hi) = ([-1.0, -0.2, -0.5], [0.6, 1.4, 0.5]);
        for dim in [2, 3] {
            let set = harmonic_test_set((lo, hi), Some(([-1.5, 0.0, 0.0], [-0.5, 0.3, 0.0])), dim, 6).unwrap();
            let kernels: Vec<Point> = set
                .iter()
                .filter_map(|t| match t {
                    TestFunction::Kernel { y, .. } => Some(*y),
                    _ => None,
                })
                .collect();
            assert_eq!(kernels.len(), 6);
            let (lo, hi) = ([-1.5, -0.2, -0.5], [0.6, 1.4, 0.5]);
            for y in kernels {
                let inside = (0..dim).all(|k| {
                    let (c, w) = (0.5 * (lo[k] + hi[k]), 0.5 * (hi[k] - lo[k]));
                    (y[k] - c).abs() <= 1.25 * w
                });
                assert!(!inside, "{y:?}");
            }
        }
    }

    #[test]
    fn test_set_is_discretely_harmonic_on_the_support() {
        for dim in [2, 3] {
            let h = 1.0 / 16.0;
            let g = cube(dim, h, 1.0);
            let set = harmonic_test_set(([-1.0; 3], [1.0; 3]), None, dim, 4).unwrap();
            for t in &set {
                let worst =
                    (0..g.len()).map(|a| t.discrete_laplacian(&g.point(a), h, dim).abs()).fold(0.0, f64::max);
                assert!(worst <= h * h, "{}: {worst:e}", t.label());
            }
        }
    }

    #[test]
    fn contour_route_examples() {
        let h = 1.0 / 32.0;
        let g3 = cube(3, h, 2.25);
        let ball = ScalarField::from_fn(g3, |p| 2.0 - norm(p));
        let one3 = ScalarField::constant(g3, 1.0);
        let geo = extract_contour(&ball, 1e-9, 1.0).unwrap();
        let area = surface_integral_contour(&geo, &one3, &TestFunction::Constant { value: 1.0 });
        assert!((area / (16.0 * PI) - 1.0).abs() < 0.02, "{area}");

        let g2 = cube(2, h, 2.5);
        let disk = ScalarField::from_fn(g2, |p| 2.0 - norm(p));
        let one2 = ScalarField::constant(g2, 1.0);
        let geo = extract_contour(&disk, 1e-9, 1.0).unwrap();
        let x1 = &harmonic_test_set(([-1.0; 3], [1.0; 3]), None, 2, 1).unwrap()[1];
        assert!(surface_integral_contour(&geo, &one2, x1).abs() < 1e-3 * 4.0 * PI);

        let empty = extract_contour(&ScalarField::zeros(g2), 1e-9, 1.0).unwrap();
        assert_eq!(surface_integral_contour(&empty, &one2, x1), 0.0);
    }

    /// Exact radial solution of mass `c` with `g ≡ 1`, centred off the nodes,
    /// and the rasterized density of the atom.
    fn radial_case(dim: usize, c: f64, h: f64, half: f64) -> (ScalarField, ScalarField, Point) {
        let g = cube(dim, h, half);
        let mut center = [0.0; 3];
        center[..dim].fill(0.5 * h);
        let u = radial_one_phase(c, 1.0, dim).unwrap().sample(&g, &center);
        let f = rasterize_measure(&MeasureSpec::from_atoms(vec![Atom::new(center, c, 0.25)]), &g).unwrap();
        (u, f, center)
    }

    #[test]
    fn green_route_examples() {
        let c = 16.0 * PI;
        let (u, f, center) = radial_case(3, c, 1.0 / 16.0, 2.5);
        let one = TestFunction::Constant { value: 1.0 };
        let v = surface_integral_green(&u, Sign::Plus, &f, &one, 1e-9).unwrap();
        assert!((v / c - 1.0).abs() < 0.02, "{v}");
        // Mean value of the kernel over the sphere equals c G(center - y).
        let y = [center[0] + 4.0, center[1], center[2]];
        let k = TestFunction::Kernel { y, dim: 3 };
        let v = surface_integral_green(&u, Sign::Plus, &f, &k, 1e-9).unwrap();
        let want = c * kernel_of_distance(4.0, 3);
        assert!((v / want - 1.0).abs() < 0.02, "{v} vs {want}");
        let zero = ScalarField::zeros(*u.grid());
        assert_eq!(surface_integral_green(&zero, Sign::Plus, &f, &k, 1e-9).unwrap(), 0.0);
        // The negative route sees nothing of a positive field.
        assert_eq!(surface_integral_green(&u, Sign::Minus, &f, &k, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn one_phase_identity_on_the_radial_reference() {
        let c = 2.0 * PI;
        let (u, f, _) = radial_case(2, c, 1.0 / 64.0, 1.5);
        let g = ScalarField::constant(*u.grid(), 1.0);
        let tests = harmonic_test_set(([-1.0; 3], [1.0; 3]), None, 2, 4).unwrap();
        let rep = qi_report(&[u], ProblemKind::OnePhase, &[f], &g, &tests, 1e-9).unwrap();
        assert_eq!(rep.rows.len(), tests.len());
        assert!(rep.rows[0].relative_green() < 0.02, "{:?}", rep.rows[0]);
        assert!(rep.max_relative_residual() < 0.05, "{}", rep.to_csv());
        assert!(rep.max_route_disagreement() < 0.05);
        for r in &rep.rows {
            assert_eq!(r.residual_contour, r.lhs_contour - r.rhs_measure);
            assert_eq!(r.residual_green, r.lhs_green - r.rhs_measure);
        }
    }

    #[test]
    fn separated_pair_identity() {
        // Unit-radius balls at (∓1.5, 0) carrying opposite phases.
        let h = 1.0 / 64.0;
        let grid = cube(2, h, 3.0);
        let c = 2.0 * PI;
        let radial = radial_one_phase(c, 1.0, 2).unwrap();
        let (a, b) = ([-1.5 + 0.5 * h, 0.5 * h, 0.0], [1.5 + 0.5 * h, 0.5 * h, 0.0]);
        let up = radial.sample(&grid, &a);
        let dn = radial.sample(&grid, &b);
        let f1 = rasterize_measure(&MeasureSpec::from_atoms(vec![Atom::new(a, c, 0.25)]), &grid).unwrap();
        let f2 = rasterize_measure(&MeasureSpec::from_atoms(vec![Atom::new(b, c, 0.25)]), &grid).unwrap();
        let g = ScalarField::constant(grid, 1.0);
        let tests = harmonic_test_set(([-2.5, -1.0, 0.0], [2.5, 1.0, 0.0]), None, 2, 4).unwrap();
        let rep = qi_report(&[up, dn], ProblemKind::TwoPhase, &[f1, f2], &g, &tests, 1e-9).unwrap();
        for r in rep.rows.iter().filter(|r| r.kind.starts_with("kernel")) {
            assert!(r.relative_contour() < 0.05 && r.relative_green() < 0.05, "{r:?}");
        }
        assert!(rep.max_route_disagreement() < 0.05);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let g = cube(2, 0.25, 1.0);
        let z = ScalarField::zeros(g);
        let t = [TestFunction::Constant { value: 1.0 }];
        assert!(matches!(
            qi_report(core::slice::from_ref(&z), ProblemKind::OnePhase, &[], &z, &t, 1e-9),
            Err(Error::LengthMismatch { .. })
        ));
        let other = ScalarField::zeros(cube(2, 0.125, 1.0));
        assert!(qi_report(core::slice::from_ref(&z), ProblemKind::OnePhase, &[other], &z, &t, 1e-9).is_err());
    }

    #[test]
    fn multi_phase_rows_cover_every_pair_and_report_the_collar() {
        let h = 1.0 / 32.0;
        let grid = cube(2, h, 2.0);
        let ball = |c: [f64; 2]| ScalarField::from_fn(grid, move |p| (0.4 - libm::hypot(p[0] - c[0], p[1] - c[1])).max(0.0));
        let phases = [ball([-1.0, -0.7]), ball([1.0, -0.7]), ball([0.0, 0.4])];
        let zero = ScalarField::zeros(grid);
        let g = ScalarField::constant(grid, 1.0);
        let t = [TestFunction::Constant { value: 1.0 }];
        let rep = qi_report(&phases, ProblemKind::MultiPhase, &[zero.clone(), zero.clone(), zero], &g, &t, 1e-9)
            .unwrap();
        let pairs: Vec<(usize, usize)> = rep.rows.iter().map(|r| r.pair).collect();
        assert_eq!(pairs, vec![(1, 2), (1, 3), (2, 3)]);
        // Cones sit far apart, so the cutoff is 1 on every support.
        for r in &rep.rows {
            assert_eq!(r.collar, 0.0);
        }
        assert!(!rep.notes.is_empty());
    }

    #[test]
    fn collar_is_the_volume_term_of_the_flagged_nodes() {
        let grid = cube(2, 1.0 / 16.0, 1.0);
        let w: Vec<f64> = (0..grid.len()).map(|a| (0.5 - norm(&grid.point(a))).max(0.0)).collect();
        let zero = vec![0.0; grid.len()];
        let h = |a: usize| {
            let p = grid.point(a);
            p[0] * p[0] * p[1] + libm::exp(p[1])
        };
        let (all, collar) = green_with(&grid, &w, &zero, 1e-12, h, |_| true);
        assert!((all - collar).abs() <= 1e-12 * all.abs().max(1.0), "{all} {collar}");
        let (none, collar) = green_with(&grid, &w, &zero, 1e-12, h, |_| false);
        assert_eq!(collar, 0.0);
        assert_eq!(none, all);
        // Flagged nodes away from the support of w contribute nothing.
        let (_, left) = green_with(&grid, &w, &zero, 1e-12, h, |a| grid.point(a)[0] < -0.75);
        assert_eq!(left, 0.0);
    }

    #[test]
    fn cutoff_vanishes_near_other_phases() {
        let h = 1.0 / 16.0;
        let grid = cube(2, h, 1.0);
        let other = ScalarField::from_fn(grid, |p| (-p[0]).max(0.0));
        let chi = cutoff(&grid, &[&other], 1e-9);
        for a in 0..grid.len() {
            let x = grid.point(a)[0];
            // The outermost support nodes sit at x = -h.
            if x <= h + 1e-12 {
                assert_eq!(chi[a], 0.0, "{x}");
            }
            if x >= 7.0 * h - 1e-12 {
                assert_eq!(chi[a], 1.0, "{x}");
            }
        }
    }

    #[test]
    fn subharmonic_inequality() {
        let c = 2.0 * PI;
        let (u, f, center) = radial_case(2, c, 1.0 / 32.0, 1.5);
        let g = ScalarField::constant(*u.grid(), 1.0);
        let sq = TestFunction::SquaredDistance { y: center };
        let rep = subharmonic_qi_check(core::slice::from_ref(&u), core::slice::from_ref(&f), &g, &sq, 1e-9).unwrap();
        assert!(rep.warnings.is_empty());
        assert!(rep.residual_green >= -0.05 * rep.scale && rep.residual_contour >= -0.05 * rep.scale);
        // The Green residual is ∫ u Δh = 4 ∫ u.
        assert!((rep.residual_green / (4.0 * integrate(&u)) - 1.0).abs() < 0.02, "{rep:?}");

        let x = harmonic_test_set(([-1.0; 3], [1.0; 3]), None, 2, 1).unwrap().remove(1);
        let a = subharmonic_qi_check(core::slice::from_ref(&u), core::slice::from_ref(&f), &g, &x, 1e-9).unwrap();
        let b = qi_report(core::slice::from_ref(&u), ProblemKind::OnePhase, core::slice::from_ref(&f), &g, &[x], 1e-9).unwrap();
        assert_eq!(a.residual_green, b.rows[0].residual_green);
        assert_eq!(a.residual_contour, b.rows[0].residual_contour);

        let sup = TestFunction::Combination { terms: vec![(-1.0, sq)] };
        let w = subharmonic_qi_check(&[u], &[f], &g, &sup, 1e-9).unwrap();
        assert_eq!(w.warnings.len(), 1);
    }

    #[test]
    fn sakai_thresholds() {
        assert_eq!(sakai_threshold(2, 1.0), 24.0);
        assert_eq!(sakai_threshold(3, 1.0), 216.0);
    }

    #[test]
    fn sakai_atom_at_its_mollifier_radius() {
        let h = 1.0 / 32.0;
        let grid = cube(2, h, 1.0);
        let rho = 0.25;
        // Pass iff m > 24 |B_ρ| / ρ = 6π.
        for (m, pass) in [(20.0, true), (17.0, false)] {
            let spec = MeasureSpec::from_atoms(vec![Atom::new([0.0; 3], m, rho)]);
            let rep = sakai_check(&spec, &grid, 1.0, &[rho]).unwrap();
            assert!((rep.values[0] - m / (PI * rho)).abs() < 1e-9 * m);
            assert_eq!(rep.verdict == Verdict::Pass, pass);
            assert_eq!(rep.threshold, Some(24.0));
        }
        let spec = MeasureSpec::from_atoms(vec![Atom::new([0.0; 3], 1.0, rho)]);
        assert!(sakai_check(&spec, &grid, 1.0, &[0.1, 0.2]).is_err());
        assert!(matches!(sakai_check(&spec, &grid, 1.0, &[0.2, h]), Err(Error::RadiusBelowGrid { .. })));
    }

    #[test]
    fn null_windows_balance() {
        let one = TestFunction::Constant { value: 1.0 };
        for dim in [2, 3] {
            let tests = harmonic_test_set(([-1.0; 3], [1.0; 3]), None, dim, 3).unwrap();
            let mut surfaces = vec![
                NullSurface::TwoPlane(TwoPlane::new(TwoPlaneKind::Plus, dim).unwrap()),
                NullSurface::TwoPlane(TwoPlane::new(TwoPlaneKind::Minus, dim).unwrap()),
                NullSurface::TwoPlane(TwoPlane::new(TwoPlaneKind::Gap(0.3), dim).unwrap()),
                NullSurface::TwoPlane(TwoPlane::new(TwoPlaneKind::Linear(1.7), dim).unwrap()),
            ];
            surfaces.push(NullSurface::ExteriorBall(exterior_ball_null(0.5, [0.2, -0.1, 0.0], dim).unwrap()));
            for s in &surfaces {
                for center in [[0.1, 0.05, -0.1], [0.4, -0.2, 0.0]] {
                    let rep = null_window_residual(s, &center, 1.0, &one, 200).unwrap();
                    assert!(rep.residual.abs() <= 1e-3 * rep.scale, "{s:?} {rep:?}");
                    for t in &tests {
                        let rep = null_window_residual(s, &center, 1.0, t, 200).unwrap();
                        assert!(rep.residual.abs() <= 1e-3 * rep.scale, "{s:?} {} {rep:?}", t.label());
                    }
                }
            }
        }
    }

    #[test]
    fn window_flux_values() {
        let plus = NullSurface::TwoPlane(TwoPlane::new(TwoPlaneKind::Plus, 2).unwrap());
        let one = TestFunction::Constant { value: 1.0 };
        let rep = null_window_residual(&plus, &[0.0; 3], 1.0, &one, 200).unwrap();
        // Boundary and flux both equal the chord length 2.
        assert!((rep.window_flux[0] - 2.0).abs() < 1e-4 && (rep.boundary[0] - 2.0).abs() < 1e-12);
        // Doubling the slope doubles the flux and breaks the balance.
        let steep = NullSurface::TwoPlane(TwoPlane::new(TwoPlaneKind::Linear(2.0), 2).unwrap());
        let rep = null_window_residual(&steep, &[0.0; 3], 1.0, &one, 200).unwrap();
        assert!(rep.residual.abs() < 1e-9);
        assert!(null_window_residual(&plus, &[0.0; 3], 0.0, &one, 200).is_err());
    }
}
