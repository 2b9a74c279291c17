//! Local probes on converged phases. Every probe reports raw values; the
//! verdicts compare against user thresholds and are regression anchors.

use alloc::{collections::BTreeMap, string::String, vec, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::grid::{cell_gradient_sq, dist, laplacian, powi, spherical_average, Grid, Hyperplane, Point, ScalarField};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: String,
    pub center: Point,
    pub radii: Vec<f64>,
    /// One value per radius.
    pub values: Vec<f64>,
    pub verdict: Verdict,
    pub threshold: Option<f64>,
    /// Auxiliary numbers such as bounds derived from configuration.
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl ProbeReport {
    fn new(probe: &str, center: Point) -> Self {
        ProbeReport {
            probe: String::from(probe),
            center,
            radii: Vec::new(),
            values: Vec::new(),
            verdict: Verdict::Indeterminate,
            threshold: None,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

fn check_ball(grid: &Grid, center: &Point, r: f64) -> Result<()> {
    if !(r > 0.0) || grid.distance_to_boundary(center) < r - 1e-9 * grid.h() {
        return Err(Error::BallEscapesBox { radius: r });
    }
    Ok(())
}

/// Visits the cells meeting `B_r(center)` with `s^dim` cell-centred
/// subsamples each: `f(cell base node, sample point, sample volume)` for
/// samples inside the ball.
fn for_each_subsample(grid: &Grid, center: &Point, r: f64, s: usize, mut f: impl FnMut(usize, &Point, f64)) {
    let dim = grid.dim();
    let h = grid.h();
    let mut range = grid.node_range(center, r + h);
    for (k, rg) in range.iter_mut().enumerate().take(dim) {
        rg.1 = rg.1.min(grid.cells_per_axis()[k] - 1);
    }
    let sub = h / s as f64;
    let vol = powi(sub, dim as i32);
    let n3 = if dim == 3 { s } else { 1 };
    let r2 = r * r;
    grid.for_each_in_range(range, |base| {
        let o = grid.point(base);
        for i in 0..s {
            for j in 0..s {
                for k in 0..n3 {
                    let mut p = [o[0] + (i as f64 + 0.5) * sub, o[1] + (j as f64 + 0.5) * sub, o[2]];
                    if dim == 3 {
                        p[2] += (k as f64 + 0.5) * sub;
                    }
                    let d2 = (p[0] - center[0]) * (p[0] - center[0])
                        + (p[1] - center[1]) * (p[1] - center[1])
                        + (p[2] - center[2]) * (p[2] - center[2]);
                    if d2 <= r2 {
                        f(base, &p, vol);
                    }
                }
            }
        }
    });
}

fn subsamples_per_axis(dim: usize) -> usize {
    if dim == 2 {
        3
    } else {
        2
    }
}

/// Fraction of samples in `{x : |u(x)| <= tau}` (`zero = true`) or
/// `{u > tau}` within the ball, plus the ball volume.
fn ball_fraction(u: &ScalarField, center: &Point, r: f64, tau: f64, zero: bool) -> (f64, f64) {
    let (mut hit, mut all, mut vol) = (0usize, 0usize, 0.0);
    for_each_subsample(u.grid(), center, r, subsamples_per_axis(u.grid().dim()), |_, p, v| {
        let x = u.sample(p).unwrap_or(0.0);
        all += 1;
        vol += v;
        if (zero && x.abs() <= tau) || (!zero && x > tau) {
            hit += 1;
        }
    });
    if all == 0 {
        (0.0, 0.0)
    } else {
        (hit as f64 / all as f64, vol)
    }
}

/// `∫_{B_r} |∇u|² / max(|x - center|, h/2)^power`, with cellwise gradients
/// and `4^dim` subsamples per cell for the weight and the ball.
pub fn weighted_dirichlet(u: &ScalarField, center: &Point, r: f64, power: i32) -> Result<f64> {
    let grid = u.grid();
    check_ball(grid, center, r)?;
    let floor = grid.h() / 2.0;
    let mut cache: Option<(usize, f64)> = None;
    let mut acc = 0.0;
    for_each_subsample(grid, center, r, 4, |base, p, v| {
        let g2 = match cache {
            Some((b, g)) if b == base => g,
            _ => {
                let g = cell_gradient_sq(grid, u.values(), grid.coords(base));
                cache = Some((base, g));
                g
            }
        };
        if g2 > 0.0 {
            acc += g2 * v / powi(dist(p, center).max(floor), power);
        }
    });
    Ok(acc)
}

/// `spherical_average(u, x, r) / r` per radius; passes when the minimum is
/// at least `d_min`. With `(l, m_hat)` the report also records the radius
/// bound `2 N l / m_hat`.
pub fn nondegeneracy_probe(
    u: &ScalarField,
    center: &Point,
    radii: &[f64],
    d_min: f64,
    bounds: Option<(f64, f64)>,
) -> Result<ProbeReport> {
    let mut rep = ProbeReport::new("nondegeneracy", *center);
    for &r in radii {
        rep.values.push(spherical_average(u, center, r)? / r);
        rep.radii.push(r);
    }
    let min = rep.values.iter().copied().fold(f64::INFINITY, f64::min);
    rep.verdict = if min >= d_min { Verdict::Pass } else { Verdict::Fail };
    rep.threshold = Some(d_min);
    if let Some((l, m_hat)) = bounds {
        let bound = 2.0 * u.grid().dim() as f64 * l / m_hat;
        rep.details.insert("radius_upper_bound".into(), bound);
        if radii.iter().any(|&r| r >= bound) {
            rep.notes.push("some radii exceed the admissible bound 2 N l / M".into());
        }
    }
    Ok(rep)
}

/// `|{u > tau} ∩ B_r| / |B_r|` by subcell sampling.
pub fn density_ratio(u: &ScalarField, center: &Point, r: f64, tau: f64) -> Result<f64> {
    check_ball(u.grid(), center, r)?;
    Ok(ball_fraction(u, center, r, tau, false).0)
}

fn segregation(us: &[&ScalarField; 3], center: &Point, r: f64, tau: f64) -> Result<()> {
    let grid = us[0].grid();
    let mut worst = 0.0f64;
    grid.for_each_in_range(grid.node_range(center, r), |a| {
        for i in 0..3 {
            for j in i + 1..3 {
                worst = worst.max(us[i].values()[a] * us[j].values()[a]);
            }
        }
    });
    if worst > tau * tau {
        return Err(Error::SegregationViolation { max_product: worst });
    }
    Ok(())
}

fn cjk_integrals(us: &[&ScalarField; 3], center: &Point, r: f64) -> Result<[f64; 3]> {
    let power = us[0].grid().dim() as i32 - 2;
    let mut out = [0.0; 3];
    for (slot, u) in out.iter_mut().zip(us) {
        *slot = weighted_dirichlet(u, center, r, power)?;
    }
    // Sorting makes the product exactly symmetric in its arguments.
    out.sort_by(|a, b| a.total_cmp(b));
    Ok(out)
}

/// `∏_i r^{-(2+ε)} ∫_{B_r} |∇u_i|² / |x - x0|^{N-2}`.
pub fn cjk_product(us: [&ScalarField; 3], center: &Point, r: f64, epsilon: f64, tau: f64) -> Result<f64> {
    us[0].ensure_same_grid(us[1])?;
    us[0].ensure_same_grid(us[2])?;
    segregation(&us, center, r, tau)?;
    let i = cjk_integrals(&us, center, r)?;
    Ok(i[0] * i[1] * i[2] / libm::pow(r, 3.0 * (2.0 + epsilon)))
}

/// [`cjk_product`] over decreasing radii. Passes when every step from `r`
/// to `r' < r` grows the product by at most `(r / r')^{3ε}`. The detail
/// `rhs_proxy` is `(1 + Σ_i ∫_{B_R} u_i²)³` at the largest radius.
pub fn cjk_profile(us: [&ScalarField; 3], center: &Point, radii: &[f64], epsilon: f64, tau: f64) -> Result<ProbeReport> {
    if radii.windows(2).any(|w| w[1] >= w[0]) || radii.is_empty() {
        return Err(Error::InvalidParameter("radii must be nonempty and decreasing".into()));
    }
    let mut rep = ProbeReport::new("cjk_product", *center);
    for &r in radii {
        rep.values.push(cjk_product(us, center, r, epsilon, tau)?);
        rep.radii.push(r);
    }
    let mut worst = 0.0f64;
    for k in 1..radii.len() {
        let allowed = libm::pow(radii[k - 1] / radii[k], 3.0 * epsilon);
        let (a, b) = (rep.values[k - 1], rep.values[k]);
        let ratio = if b == 0.0 {
            0.0
        } else if a == 0.0 {
            f64::INFINITY
        } else {
            b / a / allowed
        };
        worst = worst.max(ratio);
    }
    rep.threshold = Some(1.0);
    rep.verdict = if worst <= 1.0 + 1e-12 { Verdict::Pass } else { Verdict::Fail };
    rep.details.insert("epsilon".into(), epsilon);
    rep.details.insert("worst_growth_over_allowed".into(), worst);
    let big = radii[0];
    let mut l2 = 0.0;
    for u in us {
        l2 += ball_integral(u, center, big, |x| x * x);
    }
    rep.details.insert("rhs_proxy".into(), powi(1.0 + l2, 3));
    Ok(rep)
}

fn ball_integral(u: &ScalarField, center: &Point, r: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for_each_subsample(u.grid(), center, r, subsamples_per_axis(u.grid().dim()), |_, p, v| {
        acc += f(u.sample(p).unwrap_or(0.0)) * v;
    });
    acc
}

/// Ratio `∫_{B_1} |∇v|²/|y|^{N-2} / (1 + ∫_{B_2} v²)` for the rescaling
/// `v(y) = u(center + ρy)/ρ²`. The verdict is indeterminate; a note records
/// nodes of `B_{2ρ}` where the discrete Laplacian falls below `-1 - h`.
pub fn aux_weighted_bound_check(u: &ScalarField, center: &Point, rho: f64) -> Result<ProbeReport> {
    let grid = u.grid();
    let dim = grid.dim() as i32;
    check_ball(grid, center, 2.0 * rho)?;
    let left = weighted_dirichlet(u, center, rho, dim - 2)? * powi(rho, -4);
    let right = ball_integral(u, center, 2.0 * rho, |x| x * x) * powi(rho, -4 - dim);
    let mut rep = ProbeReport::new("aux_weighted_bound", *center);
    rep.radii.push(rho);
    rep.values.push(left / (1.0 + right));
    rep.details.insert("left".into(), left);
    rep.details.insert("right".into(), right);
    let lap = laplacian(u);
    let floor = -1.0 - grid.h();
    let mut bad = 0usize;
    grid.for_each_in_range(grid.node_range(center, 2.0 * rho), |a| {
        if grid.cells_to_boundary(a) > 0 && dist(&grid.point(a), center) <= 2.0 * rho && lap.values()[a] < floor {
            bad += 1;
        }
    });
    if bad > 0 {
        rep.notes.push(alloc::format!("subharmonicity precondition fails at {bad} nodes"));
    }
    Ok(rep)
}

/// `|{|v| <= tau} ∩ B_r| (mean_{∂B_r} v / r)² / ∫_{B_r} |∇v|²`; zero when the
/// left side vanishes and `+∞` when only the right side does.
pub fn poincare_ratio(v: &ScalarField, center: &Point, r: f64, tau: f64) -> Result<f64> {
    let grid = v.grid();
    check_ball(grid, center, r)?;
    let (frac, vol) = ball_fraction(v, center, r, tau, true);
    let mean = spherical_average(v, center, r)?;
    let left = frac * vol * (mean / r) * (mean / r);
    let right = weighted_dirichlet(v, center, r, 0)?;
    if left == 0.0 {
        Ok(0.0)
    } else if right < 1e-14 {
        Ok(f64::INFINITY)
    } else {
        Ok(left / right)
    }
}

/// `max (u(x) - u(x^t))` over nodes strictly on the positive side of the
/// plane whose mirror image lies in the box; zero if there are none.
pub fn reflect_compare(u: &ScalarField, plane: &Hyperplane) -> f64 {
    reflect_max(u, plane, |a, b| a - b).unwrap_or(0.0)
}

/// `max |u(x) + u(x^t)|` over the positive side: zero for odd fields.
pub fn reflect_antisymmetry(u: &ScalarField, plane: &Hyperplane) -> f64 {
    reflect_max(u, plane, |a, b| (a + b).abs()).unwrap_or(0.0)
}

fn reflect_max(u: &ScalarField, plane: &Hyperplane, f: impl Fn(f64, f64) -> f64) -> Option<f64> {
    let grid = u.grid();
    let eps = 1e-9 * grid.h();
    let mut best: Option<f64> = None;
    for a in 0..grid.len() {
        let p = grid.point(a);
        if plane.signed_distance(&p) <= eps {
            continue;
        }
        if let Some(m) = u.sample(&plane.reflect(&p)) {
            let d = f(u.values()[a], m);
            best = Some(best.map_or(d, |b: f64| b.max(d)));
        }
    }
    best
}

/// Largest distance from a rotated support node to the support `{u > tau}`,
/// over rotations about the axis through `axis_point` along `axis_dir`: the
/// reflection across the axis in 2D, multiples of 45° in 3D. Distances are
/// searched up to 8 cells.
pub fn axial_asphericity(u: &ScalarField, tau: f64, axis_point: &Point, axis_dir: &Point) -> Result<f64> {
    let grid = u.grid();
    let dim = grid.dim();
    let n = crate::grid::norm(axis_dir);
    if !(n > 0.0) {
        return Err(Error::InvalidParameter("axis direction must be nonzero".into()));
    }
    let d = [axis_dir[0] / n, axis_dir[1] / n, axis_dir[2] / n];
    let inside = |a: usize| u.values()[a] > tau;
    let rotate = |p: &Point, t: f64| -> Point {
        let v = [p[0] - axis_point[0], p[1] - axis_point[1], p[2] - axis_point[2]];
        let along = v[0] * d[0] + v[1] * d[1] + v[2] * d[2];
        let par = [along * d[0], along * d[1], along * d[2]];
        let perp = [v[0] - par[0], v[1] - par[1], v[2] - par[2]];
        let (c, s) = (libm::cos(t), libm::sin(t));
        let w = if dim == 2 {
            [c * perp[0], c * perp[1], 0.0]
        } else {
            let x = [d[1] * perp[2] - d[2] * perp[1], d[2] * perp[0] - d[0] * perp[2], d[0] * perp[1] - d[1] * perp[0]];
            [c * perp[0] + s * x[0], c * perp[1] + s * x[1], c * perp[2] + s * x[2]]
        };
        [axis_point[0] + par[0] + w[0], axis_point[1] + par[1] + w[1], axis_point[2] + par[2] + w[2]]
    };
    let angles: Vec<f64> = if dim == 2 {
        vec![core::f64::consts::PI]
    } else {
        (1..8).map(|k| k as f64 * core::f64::consts::FRAC_PI_4).collect()
    };
    let h = grid.h();
    let cap = 8usize;
    let mut worst = 0.0f64;
    for a in 0..grid.len() {
        if !inside(a) {
            continue;
        }
        let p = grid.point(a);
        for &t in &angles {
            let q = rotate(&p, t);
            let c = grid.nearest_node(&q);
            let mut best = f64::INFINITY;
            for ring in 0..=cap {
                let lo = |k: usize| c[k].saturating_sub(ring);
                let hi = |k: usize| if k < dim { (c[k] + ring).min(grid.cells_per_axis()[k]) } else { 0 };
                let range = [(lo(0), hi(0)), (lo(1), hi(1)), if dim == 3 { (lo(2), hi(2)) } else { (0, 0) }];
                grid.for_each_in_range(range, |b| {
                    if inside(b) {
                        best = best.min(dist(&grid.point(b), &q));
                    }
                });
                // Later rings are at least `ring·h` away.
                if best <= ring as f64 * h {
                    break;
                }
            }
            worst = worst.max(best.min(cap as f64 * h));
        }
    }
    Ok(worst)
}

/// Largest difference quotient `|u(a) - u(b)| / h` over grid edges inside
/// each ball. Indeterminate verdict.
pub fn lipschitz_probe(u: &ScalarField, center: &Point, radii: &[f64]) -> Result<ProbeReport> {
    let grid = u.grid();
    let mut rep = ProbeReport::new("lipschitz", *center);
    let mut nb = Vec::new();
    for &r in radii {
        check_ball(grid, center, r)?;
        let mut best = 0.0f64;
        grid.for_each_in_range(grid.node_range(center, r), |a| {
            if dist(&grid.point(a), center) > r {
                return;
            }
            grid.neighbors(a, &mut nb);
            for &(b, _) in &nb {
                if dist(&grid.point(b), center) <= r {
                    best = best.max((u.values()[a] - u.values()[b]).abs() / grid.h());
                }
            }
        });
        rep.radii.push(r);
        rep.values.push(best);
    }
    Ok(rep)
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
    fn nondegeneracy_of_half_plane() {
        let g = square(1.0 / 32.0, 1.0);
        let u = ScalarField::from_fn(g, |p| p[0].max(0.0));
        let rep = nondegeneracy_probe(&u, &[0.0; 3], &[0.125, 0.25, 0.5], 0.3, Some((1.0, 4.0))).unwrap();
        for v in &rep.values {
            assert!((v - 1.0 / PI).abs() < 1e-3, "{v}");
        }
        assert_eq!(rep.verdict, Verdict::Pass);
        assert_eq!(rep.details["radius_upper_bound"], 1.0);
        let z = nondegeneracy_probe(&ScalarField::zeros(g), &[0.0; 3], &[0.25], 0.1, None).unwrap();
        assert_eq!((z.values[0], z.verdict), (0.0, Verdict::Fail));
        assert!(nondegeneracy_probe(&u, &[0.9, 0.0, 0.0], &[0.5], 0.1, None).is_err());
        let g3 = build_grid(3, &[-1.0; 3], 1.0 / 16.0, &[32; 3]).unwrap();
        let u3 = ScalarField::from_fn(g3, |p| p[0].max(0.0));
        let rep3 = nondegeneracy_probe(&u3, &[0.0; 3], &[0.5], 0.0, None).unwrap();
        assert!((rep3.values[0] - 0.25).abs() < 5e-3, "{}", rep3.values[0]);
    }

    #[test]
    fn nondegeneracy_at_radial_boundary() {
        let h = 1.0 / 64.0;
        let g = square(h, 2.5);
        let u = crate::reference::radial_one_phase(4.0 * PI, 1.0, 2).unwrap().sample(&g, &[0.0; 3]);
        let radii: Vec<f64> = [16.0, 8.0, 4.0].iter().map(|k| k * h).collect();
        let rep = nondegeneracy_probe(&u, &[2.0, 0.0, 0.0], &radii, 0.25, None).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{:?}", rep.values);
    }

    #[test]
    fn densities() {
        let g = square(1.0 / 32.0, 1.0);
        let u = ScalarField::from_fn(g, |p| p[0].max(0.0));
        assert!((density_ratio(&u, &[0.0; 3], 0.5, 1e-12).unwrap() - 0.5).abs() < 1e-2);
        assert_eq!(density_ratio(&ScalarField::constant(g, 1.0), &[0.0; 3], 0.5, 1e-12).unwrap(), 1.0);
        assert!(density_ratio(&u, &[0.0; 3], 2.0, 1e-12).is_err());
    }

    fn wedges(g: Grid) -> [ScalarField; 3] {
        [
            ScalarField::from_fn(g, |p| p[0].min(p[1]).max(0.0)),
            ScalarField::from_fn(g, |p| (-p[0]).min(p[1]).max(0.0)),
            ScalarField::from_fn(g, |p| (-p[0]).min(-p[1]).max(0.0)),
        ]
    }

    #[test]
    fn cjk_wedge_growth_and_symmetry() {
        let h = 1.0 / 64.0;
        let g = square(h, 1.0);
        let w = wedges(g);
        let eps = 0.1;
        let a = cjk_product([&w[0], &w[1], &w[2]], &[0.0; 3], 16.0 * h, eps, 1e-12).unwrap();
        let b = cjk_product([&w[0], &w[1], &w[2]], &[0.0; 3], 8.0 * h, eps, 1e-12).unwrap();
        let growth = b / a;
        assert!((growth / libm::pow(2.0, 3.0 * eps) - 1.0).abs() < 0.05, "{growth}");
        let c = cjk_product([&w[2], &w[0], &w[1]], &[0.0; 3], 8.0 * h, eps, 1e-12).unwrap();
        assert_eq!(b, c);
        let z = ScalarField::zeros(g);
        assert_eq!(cjk_product([&w[0], &w[1], &z], &[0.0; 3], 8.0 * h, eps, 1e-12).unwrap(), 0.0);
        let overlap = cjk_product([&w[0], &w[0], &w[1]], &[0.0; 3], 8.0 * h, eps, 1e-12);
        assert!(matches!(overlap, Err(Error::SegregationViolation { .. })));
        // Homogeneous wedges sit exactly on the allowed growth.
        let radii = [16.0 * h, 8.0 * h, 4.0 * h];
        let prof = cjk_profile([&w[0], &w[1], &w[2]], &[0.0; 3], &radii, eps, 1e-12).unwrap();
        assert!((prof.details["worst_growth_over_allowed"] - 1.0).abs() < 0.05);
        assert!(prof.details["rhs_proxy"] > 1.0);
        let sq: Vec<ScalarField> = w.iter().map(|u| u.map(|x| x * x)).collect();
        let prof = cjk_profile([&sq[0], &sq[1], &sq[2]], &[0.0; 3], &radii, eps, 1e-12).unwrap();
        assert_eq!(prof.verdict, Verdict::Pass);
    }

    #[test]
    fn weighted_dirichlet_of_linear_field_in_3d() {
        // ∫_{B_r} 1/|x| = 2π r².
        let g = build_grid(3, &[-1.0; 3], 1.0 / 16.0, &[32; 3]).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0]);
        let v = weighted_dirichlet(&u, &[0.0; 3], 0.5, 1).unwrap();
        assert!((v / (2.0 * PI * 0.25) - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn aux_ratio_of_quadratic() {
        let g = square(1.0 / 32.0, 2.5);
        let u = ScalarField::from_fn(g, |p| (p[0] * p[0] + p[1] * p[1]) / 4.0);
        let rep = aux_weighted_bound_check(&u, &[0.0; 3], 1.0).unwrap();
        let exact = (PI / 8.0) / (1.0 + 4.0 * PI / 3.0);
        assert!((rep.values[0] / exact - 1.0).abs() < 0.02, "{} vs {exact}", rep.values[0]);
        assert!(rep.notes.is_empty());
        assert_eq!(rep.verdict, Verdict::Indeterminate);
        let z = aux_weighted_bound_check(&ScalarField::zeros(g), &[0.0; 3], 1.0).unwrap();
        assert_eq!(z.values[0], 0.0);
        let bad = ScalarField::from_fn(g, |p| -(p[0] * p[0] + p[1] * p[1]));
        assert!(!aux_weighted_bound_check(&bad, &[0.0; 3], 1.0).unwrap().notes.is_empty());
    }

    #[test]
    fn poincare_cases() {
        let g = square(1.0 / 64.0, 1.5);
        let v = ScalarField::from_fn(g, |p| p[0].max(0.0));
        let r = poincare_ratio(&v, &[0.0; 3], 1.0, 1e-12).unwrap();
        assert!((r * PI * PI - 1.0).abs() < 0.02, "{r}");
        assert_eq!(poincare_ratio(&ScalarField::constant(g, 2.0), &[0.0; 3], 1.0, 1e-12).unwrap(), 0.0);
        assert_eq!(poincare_ratio(&ScalarField::zeros(g), &[0.0; 3], 1.0, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn reflections() {
        let g = square(1.0 / 16.0, 1.0);
        let plane = Hyperplane::new([1.0, 0.0, 0.0], 0.0).unwrap();
        let even = ScalarField::from_fn(g, |p| libm::cos(3.0 * p[0]) + p[1]);
        assert!(reflect_compare(&even, &plane).abs() < 1e-6);
        let lin = ScalarField::from_fn(g, |p| p[0]);
        assert!((reflect_compare(&lin, &plane) - 2.0).abs() < 1e-12);
        assert!(reflect_antisymmetry(&lin, &plane) < 1e-12);
        let tilted = Hyperplane::new([1.0, 1.0, 0.0], 0.0).unwrap();
        let sym = ScalarField::from_fn(g, |p| p[0] * p[1]);
        assert!(reflect_compare(&sym, &tilted).abs() < 1e-6);
    }

    #[test]
    fn asphericity() {
        let h = 1.0 / 16.0;
        let g = square(h, 1.0);
        let disk = ScalarField::from_fn(g, |p| (0.6 - libm::hypot(p[0] - 0.1, p[1])).max(0.0));
        assert_eq!(axial_asphericity(&disk, 1e-9, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let lopsided = ScalarField::from_fn(g, |p| (0.6 - libm::hypot(p[0], p[1] - 0.25)).max(0.0));
        assert!(axial_asphericity(&lopsided, 1e-9, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap() > 0.4);
        let g3 = build_grid(3, &[-1.0; 3], 0.125, &[16; 3]).unwrap();
        let ball = ScalarField::from_fn(g3, |p| (0.7 - crate::grid::norm(p)).max(0.0));
        assert!(axial_asphericity(&ball, 1e-9, &[0.0; 3], &[0.0, 0.0, 1.0]).unwrap() <= 0.125);
    }

    #[test]
    fn lipschitz_of_linear() {
        let g = square(1.0 / 16.0, 1.0);
        let u = ScalarField::from_fn(g, |p| 2.0 * p[0] - p[1]);
        let rep = lipschitz_probe(&u, &[0.0; 3], &[0.5]).unwrap();
        assert!((rep.values[0] - 2.0).abs() < 1e-9);
    }
}
