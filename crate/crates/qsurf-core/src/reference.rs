//! Closed-form reference solutions: radial point-mass surfaces, the annular
//! two-phase construction with its Kelvin extension, odd reflections, the
//! two-plane and exterior-ball null surfaces, the Alt–Caffarelli cone and
//! the internal radii of the existence construction.

use alloc::{format, string::String, vec::Vec};
use core::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::grid::{dist, sub, Grid, Hyperplane, Point, ScalarField};
use crate::{Error, Result};

/// `u = a + b·φ(r)` on `[r_min, r_max]`, with `φ = log r` in 2D and `1/r`
/// in 3D.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialPiece {
    pub r_min: f64,
    pub r_max: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialSolution {
    pub dim: usize,
    /// Increasing piece endpoints.
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<RadialPiece>,
    /// Radii where the solution vanishes (free boundaries).
    pub boundary_radii: Vec<f64>,
    /// `|u'|` at each boundary radius.
    pub boundary_gradients: Vec<f64>,
}

fn basis(dim: usize, r: f64) -> f64 {
    if dim == 2 {
        libm::log(r)
    } else {
        1.0 / r
    }
}

fn basis_d(dim: usize, r: f64) -> f64 {
    if dim == 2 {
        1.0 / r
    } else {
        -1.0 / (r * r)
    }
}

fn basis_dd(dim: usize, r: f64) -> f64 {
    if dim == 2 {
        -1.0 / (r * r)
    } else {
        2.0 / (r * r * r)
    }
}

impl RadialPiece {
    pub fn value(&self, dim: usize, r: f64) -> f64 {
        self.a + self.b * basis(dim, r)
    }

    pub fn derivative(&self, dim: usize, r: f64) -> f64 {
        self.b * basis_d(dim, r)
    }

    /// `u'' + (N-1)/r u'`, zero for every piece up to rounding.
    pub fn ode_residual(&self, dim: usize, r: f64) -> f64 {
        self.b * (basis_dd(dim, r) + (dim as f64 - 1.0) / r * basis_d(dim, r))
    }
}

impl RadialSolution {
    fn from_pieces(dim: usize, mut pieces: Vec<RadialPiece>) -> Self {
        pieces.sort_by(|p, q| p.r_min.total_cmp(&q.r_min));
        let mut breakpoints = Vec::new();
        for p in &pieces {
            if breakpoints.last() != Some(&p.r_min) {
                breakpoints.push(p.r_min);
            }
            breakpoints.push(p.r_max);
        }
        let mut sol = RadialSolution { dim, breakpoints, pieces, boundary_radii: Vec::new(), boundary_gradients: Vec::new() };
        let first = sol.pieces[0];
        let last = sol.pieces[sol.pieces.len() - 1];
        let scale = sol.scale();
        for (p, r) in [(first, first.r_min), (last, last.r_max)] {
            if r > 0.0 && p.value(dim, r).abs() <= 1e-12 * scale {
                sol.boundary_radii.push(r);
                sol.boundary_gradients.push(p.derivative(dim, r).abs());
            }
        }
        sol
    }

    fn scale(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.a.abs() + p.b.abs() * basis(self.dim, p.r_max.max(p.r_min)).abs().max(1.0))
            .fold(1.0, f64::max)
    }

    fn piece(&self, r: f64) -> Option<&RadialPiece> {
        self.pieces.iter().find(|p| r >= p.r_min && r <= p.r_max)
    }

    /// Value at radius `r`; zero outside the pieces.
    pub fn value(&self, r: f64) -> f64 {
        self.piece(r).map(|p| p.value(self.dim, r)).unwrap_or(0.0)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        self.piece(r).map(|p| p.derivative(self.dim, r)).unwrap_or(0.0)
    }

    /// Largest mismatch of adjacent pieces at shared breakpoints.
    pub fn continuity_residual(&self) -> f64 {
        self.pieces
            .windows(2)
            .filter(|w| w[0].r_max == w[1].r_min)
            .map(|w| (w[0].value(self.dim, w[0].r_max) - w[1].value(self.dim, w[1].r_min)).abs())
            .fold(0.0, f64::max)
    }

    /// `u'(b+) - u'(b-)` at each shared breakpoint `b`.
    pub fn flux_jumps(&self) -> Vec<(f64, f64)> {
        self.pieces
            .windows(2)
            .filter(|w| w[0].r_max == w[1].r_min)
            .map(|w| {
                let b = w[0].r_max;
                (b, w[1].derivative(self.dim, b) - w[0].derivative(self.dim, b))
            })
            .collect()
    }

    /// Largest `|u'' + (N-1)/r u'|` over `samples` radii per piece.
    pub fn ode_residual(&self, samples: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for p in &self.pieces {
            let lo = p.r_min.max(1e-3 * p.r_max);
            for k in 0..=samples {
                let r = lo + (p.r_max - lo) * k as f64 / samples.max(1) as f64;
                worst = worst.max(p.ode_residual(self.dim, r).abs());
            }
        }
        worst
    }

    /// Samples `u(|x - center|)` onto a grid.
    pub fn sample(&self, grid: &Grid, center: &Point) -> ScalarField {
        ScalarField::from_fn(*grid, |p| self.value(dist(p, center)))
    }
}

/// Radial one-phase surface of a point mass `c` with boundary gradient `g0`.
pub fn radial_one_phase(mass: f64, g0: f64, dim: usize) -> Result<RadialSolution> {
    if !(mass > 0.0 && g0 > 0.0) {
        return Err(Error::InvalidParameter("mass and g0 must be positive".into()));
    }
    let piece = match dim {
        2 => {
            let r = mass / (2.0 * PI * g0);
            let k = mass / (2.0 * PI);
            RadialPiece { r_min: 0.0, r_max: r, a: k * libm::log(r), b: -k }
        }
        3 => {
            let r = libm::sqrt(mass / (4.0 * PI * g0));
            let k = mass / (4.0 * PI);
            RadialPiece { r_min: 0.0, r_max: r, a: -k / r, b: k }
        }
        _ => return Err(Error::InvalidParameter(format!("dimension {dim}"))),
    };
    Ok(RadialSolution::from_pieces(dim, alloc::vec![piece]))
}

/// The annular construction and its odd Kelvin extension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnularConstruction {
    /// Positive phase on `[inner_radius, outer_radius]`.
    pub annulus: RadialSolution,
    /// Annulus plus its odd Kelvin image inside the inversion sphere.
    pub extended: RadialSolution,
    pub outer_radius: f64,
    pub inner_boundary_radius: f64,
    /// `|∇u|` of the Kelvin image at its inner free boundary, by direct
    /// differentiation: `R^N |u'(R)|` for unit inversion radius.
    pub inner_boundary_gradient: f64,
    pub continuity_residual: f64,
    pub jump_residual: f64,
    pub notes: Vec<String>,
}

/// Solves `Δu = -σ dS_ρ` radially in 3D with `u(r_in) = 0`, `u(R) = 0`,
/// `|u'(R)| = 1`. The free radius is the positive root of
/// `R² - r_in R - σ ρ (ρ - r_in) = 0`; it lies beyond the shell only when
/// `σ > 1`.
pub fn annular_construction(
    shell_radius: f64,
    shell_density: f64,
    inner_radius: f64,
    dim: usize,
) -> Result<AnnularConstruction> {
    if dim != 3 {
        return Err(Error::InvalidParameter("the annular construction is three-dimensional".into()));
    }
    let (rho, sigma, a) = (shell_radius, shell_density, inner_radius);
    if !(sigma > 0.0 && a > 0.0 && rho > a) {
        return Err(Error::InvalidParameter("need density > 0 and shell radius > inner radius > 0".into()));
    }
    let disc = a * a + 4.0 * sigma * rho * (rho - a);
    let big_r = 0.5 * (a + libm::sqrt(disc));
    if !(big_r > rho) {
        return Err(Error::NoRoot(format!(
            "free radius {big_r} does not exceed the shell radius {rho} (density must exceed 1)"
        )));
    }
    let b2 = big_r * big_r;
    let b1 = b2 - sigma * rho * rho;
    let inner = RadialPiece { r_min: a, r_max: rho, a: -b1 / a, b: b1 };
    let outer = RadialPiece { r_min: rho, r_max: big_r, a: -big_r, b: b2 };
    let annulus = RadialSolution::from_pieces(3, alloc::vec![inner, outer]);
    let image = kelvin_invert(&annulus, a, true)?;
    let mut pieces = image.pieces.clone();
    pieces.extend(annulus.pieces.iter().copied());
    let extended = RadialSolution::from_pieces(3, pieces);
    let inner_r = a * a / big_r;
    let inner_grad = image.derivative(inner_r).abs();
    let jump = annulus
        .flux_jumps()
        .iter()
        .map(|&(_, j)| (j + sigma).abs())
        .fold(0.0, f64::max);
    let notes = alloc::vec![format!(
        "inner gradient from differentiating u*(r) = -r^(2-N) u(1/r): R^N |u'(R)| = {inner_grad}"
    )];
    Ok(AnnularConstruction {
        continuity_residual: annulus.continuity_residual().max(extended.continuity_residual()),
        jump_residual: jump,
        annulus,
        extended,
        outer_radius: big_r,
        inner_boundary_radius: inner_r,
        inner_boundary_gradient: inner_grad,
        notes,
    })
}

/// Kelvin transform in the sphere of radius `a`:
/// `u*(r) = s (a/r)^(N-2) u(a²/r)` with `s = -1` when `odd`. The solution
/// must vanish on the sphere.
pub fn kelvin_invert(radial: &RadialSolution, a: f64, odd: bool) -> Result<RadialSolution> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter("inversion radius must be positive".into()));
    }
    let at = radial.value(a);
    if radial.piece(a).is_none() || at.abs() > 1e-12 * radial.scale() {
        let v = if radial.piece(a).is_none() { f64::NAN } else { at };
        return Err(Error::NonvanishingAtSphere(v));
    }
    let s = if odd { -1.0 } else { 1.0 };
    let dim = radial.dim;
    let pieces = radial
        .pieces
        .iter()
        .filter(|p| p.r_min > 0.0)
        .map(|p| {
            let (na, nb) = if dim == 2 {
                (s * (p.a + 2.0 * p.b * libm::log(a)), -s * p.b)
            } else {
                (s * p.b / a, s * p.a * a)
            };
            RadialPiece { r_min: a * a / p.r_max, r_max: a * a / p.r_min, a: na, b: nb }
        })
        .collect();
    Ok(RadialSolution::from_pieces(dim, pieces))
}

/// Extends a field supported on one side of `plane` by `-u(x^t)` on the
/// other side. The plane itself is set to zero. Support may touch the
/// plane but not cross it by more than one cell.
pub fn odd_reflection(u: &ScalarField, plane: &Hyperplane, tau: f64) -> Result<ScalarField> {
    let g = *u.grid();
    let h = g.h();
    let (mut pos, mut neg) = (0.0, 0.0);
    for i in 0..g.len() {
        let d = plane.signed_distance(&g.point(i));
        if d > 0.0 {
            pos += u.values()[i].abs();
        } else if d < 0.0 {
            neg += u.values()[i].abs();
        }
    }
    let side = if pos >= neg { 1.0 } else { -1.0 };
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        let d = side * plane.signed_distance(&g.point(i));
        if d < 0.0 && u.values()[i].abs() > tau {
            worst = worst.max(-d);
        }
    }
    if worst > h * (1.0 + 1e-9) {
        return Err(Error::Overlap { cells: libm::ceil(worst / h - 1e-9) as usize });
    }
    let eps = 1e-9 * h;
    let values = (0..g.len())
        .map(|i| {
            let p = g.point(i);
            let d = side * plane.signed_distance(&p);
            if d > eps {
                u.values()[i]
            } else if d < -eps {
                -u.sample(&plane.reflect(&p)).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    ScalarField::new(g, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoPlaneKind {
    /// `x_n+`
    Plus,
    /// `-x_n-`
    Minus,
    /// `x_n+ - (x_n + γ)-`
    Gap(f64),
    /// `a x_n`
    Linear(f64),
}

/// Flat null quadrature surfaces; `x_n` is the last coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPlane {
    pub kind: TwoPlaneKind,
    pub dim: usize,
}

impl TwoPlane {
    pub fn new(kind: TwoPlaneKind, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidParameter(format!("dimension {dim}")));
        }
        match kind {
            TwoPlaneKind::Gap(g) if !(g > 0.0) => {
                Err(Error::InvalidParameter("gap width must be positive".into()))
            }
            TwoPlaneKind::Linear(a) if !a.is_finite() => Err(Error::InvalidParameter("slope".into())),
            _ => Ok(TwoPlane { kind, dim }),
        }
    }

    fn xn(&self, p: &Point) -> f64 {
        p[self.dim - 1]
    }

    pub fn value(&self, p: &Point) -> f64 {
        let x = self.xn(p);
        match self.kind {
            TwoPlaneKind::Plus => x.max(0.0),
            TwoPlaneKind::Minus => x.min(0.0),
            TwoPlaneKind::Gap(g) => x.max(0.0) + (x + g).min(0.0),
            TwoPlaneKind::Linear(a) => a * x,
        }
    }

    /// Gradient, which only has an `x_n` component.
    pub fn gradient(&self, p: &Point) -> Point {
        let x = self.xn(p);
        let d = match self.kind {
            TwoPlaneKind::Plus => (x > 0.0) as u8 as f64,
            TwoPlaneKind::Minus => (x < 0.0) as u8 as f64,
            TwoPlaneKind::Gap(g) => (x > 0.0 || x < -g) as u8 as f64,
            TwoPlaneKind::Linear(a) => a,
        };
        let mut out = [0.0; 3];
        out[self.dim - 1] = d;
        out
    }

    /// Whether the member is a local minimizer for `g ≡ 1`; a linear field
    /// needs slope at least 1.
    pub fn is_minimizer(&self) -> bool {
        match self.kind {
            TwoPlaneKind::Linear(a) => a >= 1.0,
            _ => true,
        }
    }

    pub fn sample(&self, grid: &Grid) -> ScalarField {
        ScalarField::from_fn(*grid, |p| self.value(p))
    }
}

/// Null quadrature surface bounding the exterior of a ball, with `g ≡ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExteriorBall {
    pub dim: usize,
    pub radius: f64,
    pub center: Point,
    /// For `N >= 3`, `u = -(b |x - x0|^(2-N) + c)` with `b = r^(N-1)/(N-2)`,
    /// `c = -b r^(2-N)`; the overall sign makes `u >= 0` outside. In 2D
    /// `u = r log(|x - x0| / r)` and `b`, `c` are unused.
    pub b: f64,
    pub c: f64,
}

pub fn exterior_ball_null(radius: f64, center: Point, dim: usize) -> Result<ExteriorBall> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    let (b, c) = match dim {
        2 => (0.0, 0.0),
        3 => {
            let b = radius * radius;
            (b, -b / radius)
        }
        _ => return Err(Error::InvalidParameter(format!("dimension {dim}"))),
    };
    Ok(ExteriorBall { dim, radius, center, b, c })
}

impl ExteriorBall {
    pub fn value(&self, p: &Point) -> f64 {
        let s = dist(p, &self.center);
        if s <= self.radius {
            return 0.0;
        }
        if self.dim == 2 {
            self.radius * libm::log(s / self.radius)
        } else {
            -(self.b / s + self.c)
        }
    }

    pub fn gradient(&self, p: &Point) -> Point {
        let d = sub(p, &self.center);
        let s = dist(p, &self.center);
        if s <= self.radius {
            return [0.0; 3];
        }
        // |∇u| = (r/s)^(N-1), pointing away from the centre.
        let mag = crate::grid::powi(self.radius / s, self.dim as i32 - 1);
        [mag * d[0] / s, mag * d[1] / s, mag * d[2] / s]
    }

    pub fn sample(&self, grid: &Grid) -> ScalarField {
        ScalarField::from_fn(*grid, |p| self.value(p))
    }
}

/// `f(θ) = 2 + cos θ log((1 - cos θ)/(1 + cos θ))`.
pub fn cone_f(theta: f64) -> f64 {
    let c = libm::cos(theta);
    2.0 + c * libm::log((1.0 - c) / (1.0 + c))
}

/// `f'(θ) = -sin θ L + 2 cot θ`, `L = log((1 - cos θ)/(1 + cos θ))`.
pub fn cone_f_prime(theta: f64) -> f64 {
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    -s * libm::log((1.0 - c) / (1.0 + c)) + 2.0 * c / s
}

/// `f''(θ) = -cos θ L - 2 - 2 / sin² θ`.
pub fn cone_f_second(theta: f64) -> f64 {
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    -c * libm::log((1.0 - c) / (1.0 + c)) - 2.0 - 2.0 / (s * s)
}

/// `(sin θ f')' + 2 sin θ f`.
pub fn cone_ode_residual(theta: f64) -> f64 {
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    c * cone_f_prime(theta) + s * cone_f_second(theta) + 2.0 * s * cone_f(theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeProfile {
    pub theta: Vec<f64>,
    pub f: Vec<f64>,
    pub theta_0: f64,
    pub theta_0_degrees: f64,
    pub f_prime_at_theta_0: f64,
    pub f_prime_at_half_pi: f64,
    /// Largest ODE residual over the tabulated angles in `(0.1, π/2]`.
    pub ode_residual: f64,
}

/// Tabulates the axially symmetric homogeneous cone profile on `(0, π/2]`
/// and locates its zero by bisection.
pub fn ac_cone(resolution: usize) -> Result<ConeProfile> {
    if resolution < 256 {
        return Err(Error::InvalidParameter("resolution must be at least 256".into()));
    }
    let theta: Vec<f64> = (1..=resolution).map(|k| FRAC_PI_2 * k as f64 / resolution as f64).collect();
    let f: Vec<f64> = theta.iter().map(|&t| cone_f(t)).collect();
    let ode_residual = theta
        .iter()
        .filter(|&&t| t > 0.1)
        .map(|&t| cone_ode_residual(t).abs())
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (1e-8, FRAC_PI_2);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if cone_f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta_0 = 0.5 * (lo + hi);
    Ok(ConeProfile {
        theta,
        f,
        theta_0,
        theta_0_degrees: theta_0.to_degrees(),
        f_prime_at_theta_0: cone_f_prime(theta_0),
        f_prime_at_half_pi: cone_f_prime(FRAC_PI_2),
        ode_residual,
    })
}

impl ConeProfile {
    fn polar(p: &Point) -> (f64, f64) {
        let r = libm::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        let t = if r > 0.0 { libm::acos((p[2] / r).clamp(-1.0, 1.0)) } else { FRAC_PI_2 };
        (r, t)
    }

    /// `u = r max(f(θ)/f'(θ0), 0)` with θ measured from the `x_3` axis.
    pub fn value(&self, p: &Point) -> f64 {
        let (r, t) = Self::polar(p);
        if r == 0.0 {
            return 0.0;
        }
        r * (cone_f(t) / self.f_prime_at_theta_0).max(0.0)
    }

    pub fn gradient_norm(&self, p: &Point) -> f64 {
        let (r, t) = Self::polar(p);
        if r == 0.0 || cone_f(t) <= 0.0 {
            return 0.0;
        }
        let k = self.f_prime_at_theta_0;
        libm::sqrt(libm::pow(cone_f(t), 2.0) + libm::pow(cone_f_prime(t), 2.0)) / k
    }

    pub fn sample(&self, grid: &Grid) -> Result<ScalarField> {
        if grid.dim() != 3 {
            return Err(Error::InvalidParameter("the cone lives in three dimensions".into()));
        }
        Ok(ScalarField::from_fn(*grid, |p| self.value(p)))
    }
}

/// Internal radii of the existence construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiiIdentity {
    /// `r = R (N l0 / (M R))^(1/N)`.
    pub r: f64,
    /// `σ = (r^N M / (N l0))^(1/(N-1))`, equal to `R`.
    pub sigma: f64,
    /// Upper threshold `2 N l0 / M` for the non-degeneracy radius.
    pub r_threshold: f64,
}

pub fn sakai_radius_identity(big_r: f64, m: f64, l0: f64, dim: usize) -> Result<RadiiIdentity> {
    if !(big_r > 0.0 && m > 0.0 && l0 > 0.0) || dim < 2 {
        return Err(Error::InvalidParameter("R, M, l0 must be positive and N >= 2".into()));
    }
    let n = dim as f64;
    let r = big_r * libm::pow(n * l0 / (m * big_r), 1.0 / n);
    let sigma = libm::pow(libm::pow(r, n) * m / (n * l0), 1.0 / (n - 1.0));
    Ok(RadiiIdentity { r, sigma, r_threshold: 2.0 * n * l0 / m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn radial_2d() {
        let s = radial_one_phase(4.0 * PI, 1.0, 2).unwrap();
        assert!((s.boundary_radii[0] - 2.0).abs() < 1e-14);
        assert!((s.boundary_gradients[0] - 1.0).abs() < 1e-14);
        assert!((s.value(1.0) - 2.0 * libm::log(2.0)).abs() < 1e-14);
    }

    #[test]
    fn radial_3d() {
        let s = radial_one_phase(16.0 * PI, 1.0, 3).unwrap();
        assert!((s.boundary_radii[0] - 2.0).abs() < 1e-14);
        assert!((s.value(1.0) - 2.0).abs() < 1e-13);
        assert!((s.boundary_gradients[0] - 1.0).abs() < 1e-14);
        assert!(radial_one_phase(1.0, 0.0, 3).is_err());
    }

    #[test]
    fn annulus_defaults() {
        let a = annular_construction(2.0, 3.0, 1.0, 3).unwrap();
        assert_eq!(a.outer_radius, 3.0);
        assert!((a.annulus.value(2.0) - 1.5).abs() < 1e-14);
        assert!((a.annulus.derivative(1.0).abs() - 3.0).abs() < 1e-14);
        assert!(a.continuity_residual <= 1e-12);
        assert!(a.jump_residual <= 1e-12);
        assert!((a.inner_boundary_radius - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.inner_boundary_gradient - 27.0).abs() < 1e-11);
    }

    #[test]
    fn annulus_needs_dense_shell() {
        assert!(matches!(annular_construction(2.0, 0.5, 1.0, 3), Err(Error::NoRoot(_))));
        assert!(matches!(annular_construction(2.0, 1.0, 1.0, 3), Err(Error::NoRoot(_))));
        let just = annular_construction(2.0, 1.01, 1.0, 3).unwrap();
        assert!(just.outer_radius > 2.0);
    }

    #[test]
    fn kelvin_of_radial_piece() {
        // u = 1 - 1/r on [1, R] maps to 1 - 1/r on [1/R, 1].
        let r = 3.0;
        let u = RadialSolution::from_pieces(3, alloc::vec![RadialPiece { r_min: 1.0, r_max: r, a: 1.0, b: -1.0 }]);
        let k = kelvin_invert(&u, 1.0, true).unwrap();
        for t in [0.4, 0.5, 0.9] {
            assert!((k.value(t) - (1.0 - 1.0 / t)).abs() < 1e-14);
        }
        assert!((k.pieces[0].r_min - 1.0 / r).abs() < 1e-15);
        let bad = radial_one_phase(16.0 * PI, 1.0, 3).unwrap();
        assert!(matches!(kelvin_invert(&bad, 1.0, true), Err(Error::NonvanishingAtSphere(_))));
    }

    #[test]
    fn odd_reflection_is_antisymmetric() {
        let g = build_grid(2, &[-2.0, -2.0], 0.125, &[32, 32]).unwrap();
        let u = ScalarField::from_fn(g, |p| (0.5 - ((p[0] - 1.0).powi(2) + p[1] * p[1])).max(0.0));
        let plane = Hyperplane::new([1.0, 0.0, 0.0], 0.0).unwrap();
        let v = odd_reflection(&u, &plane, 1e-12).unwrap();
        for i in 0..g.len() {
            let p = g.point(i);
            let j = g.index(g.nearest_node(&[-p[0], p[1], 0.0]));
            assert!((v.values()[i] + v.values()[j]).abs() < 1e-14);
        }
        assert!(matches!(odd_reflection(&v, &plane, 1e-12), Err(Error::Overlap { .. })));
    }

    #[test]
    fn two_plane_members() {
        let gap = TwoPlane::new(TwoPlaneKind::Gap(1.0), 2).unwrap();
        assert_eq!(gap.value(&[0.3, -0.5, 0.0]), 0.0);
        assert_eq!(gap.value(&[0.3, -1.5, 0.0]), -0.5);
        assert!(!TwoPlane::new(TwoPlaneKind::Linear(0.5), 3).unwrap().is_minimizer());
        assert!(TwoPlane::new(TwoPlaneKind::Linear(1.0), 3).unwrap().is_minimizer());
        assert!(TwoPlane::new(TwoPlaneKind::Gap(0.0), 2).is_err());
    }

    #[test]
    fn exterior_ball_3d() {
        let e = exterior_ball_null(1.0, [0.0; 3], 3).unwrap();
        assert_eq!((e.b, e.c), (1.0, -1.0));
        assert!((e.value(&[2.0, 0.0, 0.0]) - 0.5).abs() < 1e-15);
        let gr = e.gradient(&[1.0 + 1e-12, 0.0, 0.0]);
        assert!((gr[0] - 1.0).abs() < 1e-9);
        assert!(exterior_ball_null(0.0, [0.0; 3], 3).is_err());
    }

    #[test]
    fn cone_profile() {
        let c = ac_cone(512).unwrap();
        assert!((c.theta_0_degrees - 33.534).abs() < 1e-3, "{}", c.theta_0_degrees);
        assert!(cone_f(c.theta_0).abs() < 1e-10);
        assert!(c.f_prime_at_half_pi.abs() < 1e-8);
        assert!(c.ode_residual < 1e-8);
        assert!((cone_f(PI / 3.0) - (2.0 + 0.5 * libm::log(1.0 / 3.0))).abs() < 1e-14);
        assert!(ac_cone(100).is_err());
    }

    #[test]
    fn radii_identity() {
        let r = sakai_radius_identity(2.0, 10.0, 1.0, 3).unwrap();
        assert!((r.r - 2.0 * libm::cbrt(0.15)).abs() < 1e-14);
        assert!((r.r - 1.0627).abs() < 1e-4);
        assert!((r.sigma - 2.0).abs() < 1e-12 * 2.0);
        assert!(sakai_radius_identity(2.0, 0.0, 1.0, 3).is_err());
    }
}
