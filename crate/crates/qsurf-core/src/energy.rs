//! One-, two- and multi-phase Bernoulli energies on a grid.
//!
//! The support indicator is discretized as `|u| > tau`. The two-phase
//! Dirichlet term is the sum of the energies of `u+` and `u-`, so that the
//! split `J(u) = J1(u+) + J1(u-)` and the identification of a segregated
//! pair with a signed field hold node by node. Both sources are nonnegative
//! densities: `f1` drives the positive phase and `f2` the negative one, so
//! the Euler equation reads `Δu = -f1` on `{u > 0}` and `Δu = f2` on
//! `{u < 0}`.

use alloc::{format, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::grid::{dirichlet_form_values, Grid, ScalarField};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    /// `-2 ∫ f1 u+` (summed over phases in the multi-phase case).
    pub source_plus: f64,
    /// `-2 ∫ f2 u-`.
    pub source_minus: f64,
    /// `∫ g^2 χ`.
    pub perimeter_penalty: f64,
    pub total: f64,
    pub tau: f64,
}

impl EnergyBreakdown {
    pub fn new(dirichlet: f64, source_plus: f64, source_minus: f64, perimeter_penalty: f64, tau: f64) -> Self {
        EnergyBreakdown {
            dirichlet,
            source_plus,
            source_minus,
            perimeter_penalty,
            total: dirichlet + source_plus + source_minus + perimeter_penalty,
            tau,
        }
    }

    pub fn source(&self) -> f64 {
        self.source_plus + self.source_minus
    }
}

/// Default support threshold: `1e-8 * max|u|` over the given fields.
pub fn default_tau(fields: &[&ScalarField]) -> f64 {
    1e-8 * fields.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
}

/// Energy pieces of one nonnegative component `p` with source `f`:
/// `(E(p), -2 Σ w f p, Σ w g² [p > tau])`.
pub(crate) fn component_energy(grid: &Grid, p: &[f64], f: &[f64], g: &[f64], tau: f64) -> (f64, f64, f64) {
    let d = dirichlet_form_values(grid, p, p);
    let mut s = 0.0;
    let mut pen = 0.0;
    for i in 0..p.len() {
        let w = grid.node_weight(i);
        s -= 2.0 * w * f[i] * p[i];
        if p[i] > tau {
            pen += w * g[i] * g[i];
        }
    }
    (d, s, pen)
}

fn same_grid(fields: &[&ScalarField]) -> Result<()> {
    for w in fields.windows(2) {
        w[0].ensure_same_grid(w[1])?;
    }
    Ok(())
}

/// `∫|∇u|² - 2∫ f u + ∫ g² χ{u > tau}` for `u >= -tau`.
pub fn one_phase_energy(u: &ScalarField, f: &ScalarField, g: &ScalarField, tau: f64) -> Result<EnergyBreakdown> {
    same_grid(&[u, f, g])?;
    let min = u.min();
    if min < -tau {
        return Err(Error::Negativity { min, neg_tau: -tau });
    }
    let (d, s, p) = component_energy(u.grid(), u.values(), f.values(), g.values(), tau);
    Ok(EnergyBreakdown::new(d, s, 0.0, p, tau))
}

/// `∫|∇u+|² + |∇u-|² - 2∫ f1 u+ - 2∫ f2 u- + ∫ g² χ{|u| > tau}`.
pub fn two_phase_energy(
    u: &ScalarField,
    f1: &ScalarField,
    f2: &ScalarField,
    g: &ScalarField,
    tau: f64,
) -> Result<EnergyBreakdown> {
    same_grid(&[u, f1, f2, g])?;
    let plus = u.positive_part();
    let minus = u.negative_part();
    let grid = u.grid();
    let (d1, s1, _) = component_energy(grid, plus.values(), f1.values(), g.values(), tau);
    let (d2, s2, _) = component_energy(grid, minus.values(), f2.values(), g.values(), tau);
    let mut pen = 0.0;
    for (i, v) in u.values().iter().enumerate() {
        if v.abs() > tau {
            let gi = g.values()[i];
            pen += grid.node_weight(i) * gi * gi;
        }
    }
    Ok(EnergyBreakdown::new(d1 + d2, s1, s2, pen, tau))
}

/// `Σ_i ∫|∇u_i|² - 2∫ f_i u_i + ∫ g² χ{u_i > tau}` for nonnegative `u_i`.
pub fn multi_phase_energy(
    us: &[ScalarField],
    fs: &[ScalarField],
    g: &ScalarField,
    tau: f64,
) -> Result<EnergyBreakdown> {
    if us.len() != fs.len() {
        return Err(Error::LengthMismatch { expected: us.len(), found: fs.len() });
    }
    if us.is_empty() {
        return Err(Error::InvalidParameter("at least one phase is required".into()));
    }
    let mut all: Vec<&ScalarField> = us.iter().chain(fs.iter()).collect();
    all.push(g);
    same_grid(&all)?;
    let (mut d, mut s, mut p) = (0.0, 0.0, 0.0);
    for (k, (u, f)) in us.iter().zip(fs).enumerate() {
        let min = u.min();
        if min < -tau {
            return Err(Error::InvalidParameter(format!("phase {} is negative (min {min})", k + 1)));
        }
        let (dk, sk, pk) = component_energy(u.grid(), u.values(), f.values(), g.values(), tau);
        d += dk;
        s += sk;
        p += pk;
    }
    Ok(EnergyBreakdown::new(d, s, 0.0, p, tau))
}

/// `|J(u) - J1_{f1}(u+) - J1_{f2}(u-)|`.
pub fn energy_split_check(
    u: &ScalarField,
    f1: &ScalarField,
    f2: &ScalarField,
    g: &ScalarField,
    tau: f64,
) -> Result<f64> {
    let j = two_phase_energy(u, f1, f2, g, tau)?;
    let jp = one_phase_energy(&u.positive_part(), f1, g, tau)?;
    let jm = one_phase_energy(&u.negative_part(), f2, g, tau)?;
    Ok((j.total - jp.total - jm.total).abs())
}

/// Slack `[J(u1) + J~(u2)] - [J(min) + J~(max)]` of the comparison
/// inequality, where `J~` uses the data `(f1t, f2t, gt)`. Requires
/// `f1 <= f1t`, `f2 >= f2t` and `g >= gt` at every node. The slack is only
/// guaranteed nonnegative when `g = gt` or both fields are nonnegative.
#[allow(clippy::too_many_arguments)]
pub fn comparison_inequality_check(
    u1: &ScalarField,
    u2: &ScalarField,
    f1: &ScalarField,
    f2: &ScalarField,
    g: &ScalarField,
    f1t: &ScalarField,
    f2t: &ScalarField,
    gt: &ScalarField,
    tau: f64,
) -> Result<f64> {
    same_grid(&[u1, u2, f1, f2, g, f1t, f2t, gt])?;
    for i in 0..u1.values().len() {
        if f1.values()[i] > f1t.values()[i] {
            return Err(Error::OrderingViolation(format!("f1 > f1t at node {i}")));
        }
        if f2.values()[i] < f2t.values()[i] {
            return Err(Error::OrderingViolation(format!("f2 < f2t at node {i}")));
        }
        if g.values()[i] < gt.values()[i] {
            return Err(Error::OrderingViolation(format!("g < gt at node {i}")));
        }
    }
    let lo = ScalarField::new(
        *u1.grid(),
        u1.values().iter().zip(u2.values()).map(|(a, b)| a.min(*b)).collect(),
    )?;
    let hi = ScalarField::new(
        *u1.grid(),
        u1.values().iter().zip(u2.values()).map(|(a, b)| a.max(*b)).collect(),
    )?;
    let before = two_phase_energy(u1, f1, f2, g, tau)?.total + two_phase_energy(u2, f1t, f2t, gt, tau)?.total;
    let after = two_phase_energy(&lo, f1, f2, g, tau)?.total + two_phase_energy(&hi, f1t, f2t, gt, tau)?.total;
    Ok(before - after)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn grid() -> Grid {
        build_grid(2, &[-4.0, -4.0], 0.25, &[32, 32]).unwrap()
    }

    fn wavy(g: Grid, a: f64, b: f64) -> ScalarField {
        ScalarField::from_fn(g, move |p| libm::sin(a * p[0] + 0.3) * libm::cos(b * p[1] - 0.2))
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let g = grid();
        let z = ScalarField::zeros(g);
        let f = wavy(g, 1.0, 2.0);
        let one = ScalarField::constant(g, 1.0);
        assert_eq!(one_phase_energy(&z, &f, &one, 1e-8).unwrap().total, 0.0);
        assert_eq!(two_phase_energy(&z, &f, &f, &one, 1e-8).unwrap().total, 0.0);
    }

    #[test]
    fn constant_field_is_pure_penalty() {
        let g = grid();
        let one = ScalarField::constant(g, 1.0);
        let e = one_phase_energy(&one, &ScalarField::zeros(g), &one, 1e-8).unwrap();
        assert_eq!(e.total, 64.0);
        assert_eq!(e.perimeter_penalty, 64.0);
    }

    #[test]
    fn negativity_is_rejected() {
        let g = grid();
        let u = ScalarField::constant(g, -1e-3);
        let z = ScalarField::zeros(g);
        assert!(matches!(one_phase_energy(&u, &z, &z, 1e-8), Err(Error::Negativity { .. })));
    }

    #[test]
    fn two_phase_reduces_to_one_phase_for_nonnegative_fields() {
        let g = grid();
        let u = wavy(g, 0.7, 0.4).map(|v| v.max(0.0));
        let f1 = wavy(g, 1.1, 0.3);
        let f2 = wavy(g, 0.2, 1.7);
        let gg = ScalarField::constant(g, 0.8);
        let a = two_phase_energy(&u, &f1, &f2, &gg, 1e-9).unwrap();
        let b = one_phase_energy(&u, &f1, &gg, 1e-9).unwrap();
        assert_eq!(a.total, b.total);
    }

    #[test]
    fn multi_phase_pair_matches_signed_field() {
        let g = grid();
        let u = wavy(g, 0.9, 0.5);
        let f1 = wavy(g, 1.3, 0.1);
        let f2 = wavy(g, 0.6, 0.8);
        let gg = ScalarField::constant(g, 1.2);
        let two = two_phase_energy(&u, &f1, &f2, &gg, 1e-9).unwrap();
        let multi = multi_phase_energy(&[u.positive_part(), u.negative_part()], &[f1, f2], &gg, 1e-9).unwrap();
        assert!((two.total - multi.total).abs() <= 1e-12 * (1.0 + two.total.abs()));
    }

    #[test]
    fn multi_phase_length_mismatch() {
        let g = grid();
        let z = ScalarField::zeros(g);
        assert!(matches!(
            multi_phase_energy(&[z.clone(), z.clone()], core::slice::from_ref(&z), &z, 0.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn odd_reflection_doubles_energy() {
        let g = grid();
        let bump = |p: &crate::Point| (1.0 - ((p[0] - 1.5).powi(2) + p[1] * p[1])).max(0.0);
        let u = ScalarField::from_fn(g, move |p| bump(p) - bump(&[-p[0], p[1], 0.0]));
        let f = ScalarField::from_fn(g, move |p| bump(p));
        let fr = ScalarField::from_fn(g, move |p| bump(&[-p[0], p[1], 0.0]));
        let gg = ScalarField::constant(g, 1.0);
        let half = one_phase_energy(&u.positive_part(), &f, &gg, 1e-9).unwrap().total;
        let full = two_phase_energy(&u, &f, &fr, &gg, 1e-9).unwrap().total;
        assert!((full - 2.0 * half).abs() <= 1e-12 * full.abs());
    }

    #[test]
    fn split_identity_on_smooth_field() {
        let g = grid();
        let u = wavy(g, 1.3, 0.9);
        let f1 = wavy(g, 0.4, 0.4);
        let f2 = wavy(g, 0.8, 1.1);
        let gg = ScalarField::constant(g, 0.5);
        let r = energy_split_check(&u, &f1, &f2, &gg, 1e-9).unwrap();
        assert!(r <= 1e-10);
    }

    #[test]
    fn comparison_slack_vanishes_for_equal_fields() {
        let g = grid();
        let u = wavy(g, 1.0, 1.0);
        let f = wavy(g, 0.3, 0.2);
        let gg = ScalarField::constant(g, 1.0);
        let s = comparison_inequality_check(&u, &u, &f, &f, &gg, &f, &f, &gg, 1e-9).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn comparison_rejects_misordered_data() {
        let g = grid();
        let u = wavy(g, 1.0, 1.0);
        let z = ScalarField::zeros(g);
        let one = ScalarField::constant(g, 1.0);
        let two = ScalarField::constant(g, 2.0);
        assert!(matches!(
            comparison_inequality_check(&u, &u, &z, &z, &one, &z, &z, &two, 1e-9),
            Err(Error::OrderingViolation(_))
        ));
    }

    #[test]
    fn comparison_penalty_needs_equal_g() {
        // Where u1 vanishes and u2 < 0, min = u2 and max = u1: the stronger
        // penalty g lands on the nonzero field, so g > gt gives a negative
        // slack. With g = gt the penalty terms cancel exactly.
        let g = grid();
        let u1 = ScalarField::zeros(g);
        let u2 = ScalarField::constant(g, -0.5);
        let z = ScalarField::zeros(g);
        let big = ScalarField::constant(g, 2.0);
        let small = ScalarField::constant(g, 1.0);
        let s = comparison_inequality_check(&u1, &u2, &z, &z, &big, &z, &z, &small, 1e-9).unwrap();
        assert!((s + 64.0 * 3.0).abs() < 1e-9);
        let s_eq = comparison_inequality_check(&u1, &u2, &z, &z, &big, &z, &z, &big, 1e-9).unwrap();
        assert!(s_eq.abs() < 1e-12);
    }

    #[test]
    fn larger_g_never_lowers_energy() {
        let g = grid();
        let u = wavy(g, 0.5, 0.7);
        let f = wavy(g, 0.9, 0.2);
        let a = ScalarField::constant(g, 0.5);
        let b = ScalarField::constant(g, 0.6);
        let ea = two_phase_energy(&u, &f, &f, &a, 1e-9).unwrap().total;
        let eb = two_phase_energy(&u, &f, &f, &b, 1e-9).unwrap().total;
        assert!(eb >= ea);
    }
}
