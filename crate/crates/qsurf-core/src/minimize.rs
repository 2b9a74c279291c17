//! Minimizers of the one-, two- and multi-phase functionals.
//!
//! Every problem is solved as `m` nonnegative components with pairwise
//! disjoint supports: one component for one phase, `(u+, u-)` for two
//! phases. A solve runs in two stages.
//!
//! 1. Continuation: accelerated proximal gradient on the smooth part plus
//!    `Σ w g² β_ε(u_i)`, with `β_ε` the C¹ smoothstep ramp on `[0, ε]`, for
//!    a decreasing schedule of `ε`. The prox is solved exactly per node.
//! 2. Hard stage: each node carries a phase label. Each component is the
//!    exact minimizer of its quadratic energy on its label set (conjugate
//!    gradients), and labels move one node at a time to whichever phase, or
//!    none, lowers the exact discrete energy. Moves are applied in batches
//!    that are only accepted if the exact energy decreases.
//!
//! The result is certified against the exact `tau`-energy of the returned
//! fields; every logged energy is non-increasing.

use alloc::{format, string::String, vec, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::energy::{component_energy, EnergyBreakdown};
use crate::grid::{Grid, ScalarField};
use crate::quadrature::newtonian_potential;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Truncated Newtonian potential of the measure with an optimized shift.
    Potential,
    Zero,
    /// Uses [`SolveOptions::custom_seed`].
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentStep {
    /// `1 / L` with `L` a Gershgorin bound of the smooth gradient.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Proximal-gradient iterations per continuation stage.
    pub max_outer_iters: usize,
    /// Smoothing widths, relative to the seed amplitude; strictly decreasing.
    pub regularization_schedule: Vec<f64>,
    pub descent_step: DescentStep,
    /// Relative stagnation threshold of a continuation stage.
    pub energy_tol: f64,
    /// Support threshold; zero selects `1e-8 · max|seed|`.
    pub support_tau: f64,
    pub seed_mode: SeedMode,
    /// Label passes allowed in the hard stage.
    pub max_hard_passes: usize,
    #[serde(skip)]
    pub custom_seed: Vec<ScalarField>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_outer_iters: 20_000,
            regularization_schedule: vec![0.3, 0.1, 0.03, 1e-2, 1e-3, 1e-5, 1e-7],
            descent_step: DescentStep::Auto,
            energy_tol: 1e-12,
            support_tau: 0.0,
            seed_mode: SeedMode::Potential,
            max_hard_passes: 2000,
            custom_seed: Vec::new(),
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let s = &self.regularization_schedule;
        if s.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter("regularization widths must be positive".into()));
        }
        if s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("regularization schedule must strictly decrease".into()));
        }
        if !(self.support_tau >= 0.0) {
            return Err(Error::InvalidParameter("support_tau must be nonnegative".into()));
        }
        if !(self.energy_tol > 0.0) {
            return Err(Error::InvalidParameter("energy_tol must be positive".into()));
        }
        if let DescentStep::Fixed(t) = self.descent_step {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter("descent step must be positive".into()));
            }
        }
        if self.seed_mode == SeedMode::Custom && self.custom_seed.is_empty() {
            return Err(Error::InvalidParameter("custom seed mode needs seed fields".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    OnePhase,
    TwoPhase,
    MultiPhase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremal {
    Largest,
    Smallest,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLogEntry {
    pub iteration: usize,
    /// Absolute smoothing width; zero in the hard stage.
    pub epsilon: f64,
    pub energy: EnergyBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSolution {
    pub kind: ProblemKind,
    /// `[u]` for one and two phases (signed in the latter), `[u_1..u_m]`
    /// otherwise.
    pub fields: Vec<ScalarField>,
    pub energy: EnergyBreakdown,
    pub iterations_used: usize,
    pub converged: bool,
    /// `U¹` of a two-phase solve.
    pub barrier_upper: Option<ScalarField>,
    /// `u¹ <= 0` of a two-phase solve.
    pub barrier_lower: Option<ScalarField>,
    /// One-phase barriers `v_i` of a multi-phase solve.
    pub phase_barriers: Vec<ScalarField>,
    pub energy_log: Vec<EnergyLogEntry>,
    pub tau: f64,
    pub seed: String,
    pub extremal: Option<Extremal>,
    pub notes: Vec<String>,
}

impl PhaseSolution {
    /// Nonnegative phase components: `[u]`, `[u+, u-]` or `[u_1..u_m]`.
    pub fn phase_fields(&self) -> Vec<ScalarField> {
        match self.kind {
            ProblemKind::TwoPhase => vec![self.fields[0].positive_part(), self.fields[0].negative_part()],
            _ => self.fields.clone(),
        }
    }

    /// Upper barrier per phase component, when one exists.
    pub fn phase_barrier_fields(&self) -> Vec<Option<ScalarField>> {
        match self.kind {
            ProblemKind::OnePhase => vec![None],
            ProblemKind::TwoPhase => vec![
                self.barrier_upper.clone(),
                self.barrier_lower.as_ref().map(|b| b.negative_part()),
            ],
            ProblemKind::MultiPhase => {
                if self.phase_barriers.len() == self.fields.len() {
                    self.phase_barriers.iter().cloned().map(Some).collect()
                } else {
                    vec![None; self.fields.len()]
                }
            }
        }
    }

    /// The per-stage energy log as CSV: `iter,epsilon,total,dirichlet,source,penalty`.
    pub fn energy_log_csv(&self) -> String {
        let mut s = String::from("iter,epsilon,total,dirichlet,source,penalty\n");
        for e in &self.energy_log {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                e.iteration,
                e.epsilon,
                e.energy.total,
                e.energy.dirichlet,
                e.energy.source(),
                e.energy.perimeter_penalty
            ));
        }
        s
    }
}

/// `u'_i = max(u_i - max_{j≠i} u_j, 0)` nodewise.
pub fn segregation_project(us: &[ScalarField]) -> Result<Vec<ScalarField>> {
    for w in us.windows(2) {
        w[0].ensure_same_grid(&w[1])?;
    }
    let mut vals: Vec<Vec<f64>> = us.iter().map(|u| u.values().to_vec()).collect();
    segregate(&mut vals);
    us.iter().zip(vals).map(|(u, v)| ScalarField::new(*u.grid(), v)).collect()
}

fn segregate(vals: &mut [Vec<f64>]) {
    if vals.len() < 2 {
        return;
    }
    let n = vals[0].len();
    let m = vals.len();
    for a in 0..n {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut arg = 0;
        for (i, v) in vals.iter().enumerate() {
            let x = v[a];
            if x > first {
                second = first;
                first = x;
                arg = i;
            } else if x > second {
                second = x;
            }
        }
        for i in 0..m {
            let other = if i == arg { second } else { first };
            vals[i][a] = (vals[i][a] - other).max(0.0);
        }
    }
}

/// Internal description of a component problem.
struct Problem {
    grid: Grid,
    kind: ProblemKind,
    weights: Vec<f64>,
    diag: Vec<f64>,
    scale: f64,
    fs: Vec<Vec<f64>>,
    g: Vec<f64>,
    g2: Vec<f64>,
    /// Nodes at least two cells from the box boundary.
    interior: Vec<bool>,
    inner: Vec<usize>,
    /// `inner` as maximal contiguous index ranges.
    runs: Vec<(usize, usize)>,
    inv_w: Vec<f64>,
    /// Upper bounds with `+inf` where absent.
    ubv: Vec<Vec<f64>>,
}

impl Problem {
    fn new(grid: Grid, kind: ProblemKind, fs: Vec<Vec<f64>>, g: &[f64], upper: Vec<Option<Vec<f64>>>) -> Self {
        let weights = grid.weights();
        let scale = crate::grid::powi(grid.h(), grid.dim() as i32 - 2);
        let mut diag = vec![0.0; grid.len()];
        grid.for_each_edge(|a, b, c| {
            diag[a] += scale * c;
            diag[b] += scale * c;
        });
        let interior: Vec<bool> = (0..grid.len()).map(|i| grid.cells_to_boundary(i) >= 2).collect();
        let inner: Vec<usize> = (0..grid.len()).filter(|&i| interior[i]).collect();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &a in &inner {
            match runs.last_mut() {
                Some(r) if r.1 == a => r.1 = a + 1,
                _ => runs.push((a, a + 1)),
            }
        }
        let ubv = upper
            .iter()
            .map(|u| u.clone().unwrap_or_else(|| vec![f64::INFINITY; grid.len()]))
            .collect();
        let inv_w = weights.iter().map(|w| 1.0 / w).collect();
        Problem {
            grid,
            kind,
            weights,
            diag,
            scale,
            fs,
            g: g.to_vec(),
            g2: g.iter().map(|v| v * v).collect(),
            interior,
            inner,
            runs,
            inv_w,
            ubv,
        }
    }

    fn m(&self) -> usize {
        self.fs.len()
    }

    fn ub(&self, i: usize, a: usize) -> f64 {
        self.ubv[i][a]
    }

    fn allowed(&self, i: usize, a: usize, tau: f64) -> bool {
        self.interior[a] && self.ub(i, a) > tau
    }

    fn exact_energy(&self, comps: &[Vec<f64>], tau: f64) -> EnergyBreakdown {
        let mut d = 0.0;
        let mut s = [0.0, 0.0];
        let mut p = 0.0;
        for (i, u) in comps.iter().enumerate() {
            let (di, si, pi) = component_energy(&self.grid, u, &self.fs[i], &self.g, tau);
            d += di;
            p += pi;
            let slot = if self.kind == ProblemKind::TwoPhase && i == 1 { 1 } else { 0 };
            s[slot] += si;
        }
        EnergyBreakdown::new(d, s[0], s[1], p, tau)
    }

    fn project(&self, comps: &mut [Vec<f64>]) {
        for (i, u) in comps.iter_mut().enumerate() {
            for (a, v) in u.iter_mut().enumerate() {
                if !self.interior[a] {
                    *v = 0.0;
                } else {
                    *v = v.max(0.0).min(self.ub(i, a));
                }
            }
        }
        segregate(comps);
    }

    /// `K u` on interior nodes for `u` vanishing off them; there every
    /// stiffness edge has unit transverse weight.
    fn apply_k(&self, u: &[f64], out: &mut [f64]) {
        let s = self.grid.strides();
        let dim = self.grid.dim();
        let c = 2.0 * dim as f64;
        let sc = self.scale;
        for &(lo, hi) in &self.runs {
            let o = &mut out[lo..hi];
            let uc = &u[lo..hi];
            for (ok, &v) in o.iter_mut().zip(uc) {
                *ok = c * v;
            }
            for &st in &s[..dim] {
                let um = &u[lo - st..hi - st];
                let up = &u[lo + st..hi + st];
                for ((ok, &a), &b) in o.iter_mut().zip(um).zip(up) {
                    *ok -= a + b;
                }
            }
            for ok in o.iter_mut() {
                *ok *= sc;
            }
        }
    }

    /// Smoothed objective given `K u` for every component.
    fn smooth_objective(&self, comps: &[Vec<f64>], ks: &[Vec<f64>], eps: f64) -> f64 {
        let mut total = 0.0;
        for (i, u) in comps.iter().enumerate() {
            for &(lo, hi) in &self.runs {
                let it = u[lo..hi]
                    .iter()
                    .zip(&ks[i][lo..hi])
                    .zip(&self.weights[lo..hi])
                    .zip(&self.fs[i][lo..hi])
                    .zip(&self.g2[lo..hi]);
                for ((((&v, &k), &w), &f), &g2) in it {
                    if v != 0.0 {
                        total += v * k - 2.0 * w * f * v + w * g2 * smoothstep(v, eps);
                    }
                }
            }
        }
        total
    }
}

fn smoothstep(x: f64, eps: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= eps {
        1.0
    } else {
        let q = x / eps;
        q * q * (3.0 - 2.0 * q)
    }
}

/// `argmin_{0 <= x <= ub} ½(x - v)² + s β_ε(x)`.
fn prox(v: f64, s: f64, eps: f64, ub: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    // Beyond the ramp with enough room that no ramp point competes.
    if v >= eps && v <= ub && 0.5 * (v - eps) * (v - eps) >= s {
        return v;
    }
    let mut best = 0.0;
    let mut best_val = 0.5 * v * v;
    if ub >= eps {
        let x = v.max(eps).min(ub);
        let val = 0.5 * (x - v) * (x - v) + s;
        if val < best_val {
            best_val = val;
            best = x;
        }
    } else if ub > 0.0 {
        let val = 0.5 * (ub - v) * (ub - v) + s * smoothstep(ub, eps);
        if val < best_val {
            best_val = val;
            best = ub;
        }
    }
    if s > 0.0 {
        // Stationary points inside the ramp: A x² - B x + v = 0.
        let a = 6.0 * s / (eps * eps * eps);
        let b = 1.0 + 6.0 * s / (eps * eps);
        let disc = b * b - 4.0 * a * v;
        if disc >= 0.0 {
            let r = libm::sqrt(disc);
            for x in [(b - r) / (2.0 * a), (b + r) / (2.0 * a)] {
                if x > 0.0 && x < eps && x <= ub {
                    let q = x / eps;
                    let val = 0.5 * (x - v) * (x - v) + s * q * q * (3.0 - 2.0 * q);
                    if val < best_val {
                        best_val = val;
                        best = x;
                    }
                }
            }
        }
    } else {
        best = v.min(ub);
    }
    best
}

struct StageResult {
    iterations: usize,
    converged: bool,
}

/// Accelerated proximal gradient at fixed `eps` with monotone restarts.
/// Stops once five consecutive steps change the objective by at most `tol`
/// relative and, when `strict`, also move no node by more than `tol · amp`.
fn continuation_stage(
    p: &Problem,
    comps: &mut Vec<Vec<f64>>,
    eps: f64,
    step: f64,
    amp: f64,
    tol: f64,
    strict: bool,
    max_iters: usize,
) -> StageResult {
    let m = p.m();
    let n = p.grid.len();
    let mut kx: Vec<Vec<f64>> = vec![vec![0.0; n]; m];
    for i in 0..m {
        p.apply_k(&comps[i], &mut kx[i]);
    }
    let mut obj = p.smooth_objective(comps, &kx, eps);
    let mut prev = comps.clone();
    let mut kprev = kx.clone();
    let mut theta: f64 = 1.0;
    let mut z = comps.clone();
    let mut kz: Vec<Vec<f64>> = vec![vec![0.0; n]; m];
    // `K y` follows from linearity, so each step applies `K` once.
    let prox_step = |x: &[Vec<f64>], kxs: &[Vec<f64>], xp: &[Vec<f64>], kxp: &[Vec<f64>], mom: f64, dst: &mut Vec<Vec<f64>>| {
        for i in 0..m {
            let (x, kxs, xp, kxp, f, ub) = (&x[i], &kxs[i], &xp[i], &kxp[i], &p.fs[i], &p.ubv[i]);
            let d = &mut dst[i];
            for &(lo, hi) in &p.runs {
                for a in lo..hi {
                    let y = x[a] + mom * (x[a] - xp[a]);
                    let ky = kxs[a] + mom * (kxs[a] - kxp[a]);
                    let grad = 2.0 * (ky * p.inv_w[a] - f[a]);
                    d[a] = prox(y - step * grad, step * p.g2[a], eps, ub[a]);
                }
            }
        }
        segregate(dst);
    };
    let mut quiet = 0;
    let mut it = 0;
    while it < max_iters {
        it += 1;
        let theta_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * theta * theta));
        let mom = (theta - 1.0) / theta_next;
        prox_step(comps, &kx, &prev, &kprev, mom, &mut z);
        for i in 0..m {
            p.apply_k(&z[i], &mut kz[i]);
        }
        let mut oz = p.smooth_objective(&z, &kz, eps);
        if oz > obj && mom != 0.0 {
            theta = 1.0;
            prox_step(comps, &kx, &prev, &kprev, 0.0, &mut z);
            for i in 0..m {
                p.apply_k(&z[i], &mut kz[i]);
            }
            oz = p.smooth_objective(&z, &kz, eps);
        } else {
            theta = theta_next;
        }
        if oz > obj {
            return StageResult { iterations: it, converged: true };
        }
        let mut dx: f64 = 0.0;
        for i in 0..m {
            for (a, b) in z[i].iter().zip(&comps[i]) {
                dx = dx.max((a - b).abs());
            }
        }
        core::mem::swap(&mut prev, comps);
        core::mem::swap(&mut kprev, &mut kx);
        core::mem::swap(comps, &mut z);
        core::mem::swap(&mut kx, &mut kz);
        let change = (obj - oz).abs();
        obj = oz;
        if change <= tol * obj.abs().max(1e-300) && (!strict || dx <= tol * amp) {
            quiet += 1;
            if quiet >= 5 {
                return StageResult { iterations: it, converged: true };
            }
        } else {
            quiet = 0;
        }
    }
    StageResult { iterations: it, converged: false }
}

/// SSOR-preconditioned conjugate gradients for `K_SS x = w f` on the label
/// set `set` (interior nodes, increasing). `x` is a full-length vector, zero
/// off the set, used as the warm start.
fn solve_on_set(p: &Problem, set: &[usize], f: &[f64], x: &mut [f64]) {
    const OMEGA: f64 = 1.6;
    let n = set.len();
    if n == 0 {
        return;
    }
    let dim = p.grid.dim();
    let st = p.grid.strides();
    let mut pos = vec![u32::MAX; p.grid.len()];
    for (k, &a) in set.iter().enumerate() {
        pos[a] = k as u32;
    }
    // Neighbours inside the set, lower ones first; interior nodes have unit
    // edge weights so `K_SS = scale (2d I - adjacency)`.
    let mut nbr: Vec<u32> = Vec::with_capacity(n * 2 * dim);
    let mut split = Vec::with_capacity(n);
    let mut start = Vec::with_capacity(n + 1);
    for &a in set {
        start.push(nbr.len());
        for &s in st[..dim].iter() {
            let j = pos[a - s];
            if j != u32::MAX {
                nbr.push(j);
            }
        }
        split.push(nbr.len());
        for &s in st[..dim].iter().rev() {
            let j = pos[a + s];
            if j != u32::MAX {
                nbr.push(j);
            }
        }
    }
    start.push(nbr.len());
    let sc = p.scale;
    let d = sc * 2.0 * dim as f64;
    let matvec = |v: &[f64], out: &mut [f64]| {
        for k in 0..n {
            let mut acc = 0.0;
            for &j in &nbr[start[k]..start[k + 1]] {
                acc += v[j as usize];
            }
            out[k] = d * v[k] - sc * acc;
        }
    };
    let precond = |r: &[f64], z: &mut [f64]| {
        let c = OMEGA / d;
        for k in 0..n {
            let mut acc = r[k];
            for &j in &nbr[start[k]..split[k]] {
                acc += sc * z[j as usize];
            }
            z[k] = acc * c;
        }
        for k in 0..n {
            z[k] *= d / OMEGA;
        }
        for k in (0..n).rev() {
            let mut acc = z[k];
            for &j in &nbr[split[k]..start[k + 1]] {
                acc += sc * z[j as usize];
            }
            z[k] = acc * c;
        }
    };
    let b: Vec<f64> = set.iter().map(|&a| p.weights[a] * f[a]).collect();
    let mut xs: Vec<f64> = set.iter().map(|&a| x[a]).collect();
    let mut r = vec![0.0; n];
    matvec(&xs, &mut r);
    for k in 0..n {
        r[k] = b[k] - r[k];
    }
    let bnorm = libm::sqrt(b.iter().map(|v| v * v).sum::<f64>()).max(f64::MIN_POSITIVE);
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut dvec = z.clone();
    let mut q = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..(4 * n + 100) {
        let rn = libm::sqrt(r.iter().map(|v| v * v).sum::<f64>());
        if rn <= 1e-12 * bnorm {
            break;
        }
        matvec(&dvec, &mut q);
        let dq: f64 = dvec.iter().zip(&q).map(|(a, b)| a * b).sum();
        if !(dq > 0.0) {
            break;
        }
        let alpha = rz / dq;
        for k in 0..n {
            xs[k] += alpha * dvec[k];
            r[k] -= alpha * q[k];
        }
        precond(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            dvec[k] = z[k] + beta * dvec[k];
        }
    }
    for v in x.iter_mut() {
        *v = 0.0;
    }
    for (k, &a) in set.iter().enumerate() {
        x[a] = xs[k];
    }
}

/// Label of each node: 0 for empty, `i + 1` for component `i`.
fn labels_from(comps: &[Vec<f64>], tau: f64) -> Vec<usize> {
    let n = comps[0].len();
    (0..n)
        .map(|a| {
            let mut best = 0;
            let mut val = tau;
            for (i, u) in comps.iter().enumerate() {
                if u[a] > val {
                    val = u[a];
                    best = i + 1;
                }
            }
            best
        })
        .collect()
}

fn solve_labels(p: &Problem, labels: &[usize], comps: &mut [Vec<f64>]) {
    for i in 0..p.m() {
        let set: Vec<usize> = (0..labels.len()).filter(|&a| labels[a] == i + 1).collect();
        solve_on_set(p, &set, &p.fs[i], &mut comps[i]);
        for (a, v) in comps[i].iter_mut().enumerate() {
            *v = v.max(0.0).min(p.ub(i, a));
        }
    }
}

/// Local energy of node `a` carrying component `i` at its best value,
/// relative to leaving it empty: `K v² - 2 v r + w g²` with
/// `v = clamp(r / K, 0, ub)`.
///
/// Local moves freeze every neighbour, so `K` is the full diagonal.
/// Collective moves predict the effect of moving a whole stretch of
/// interface at once: only same-label neighbours deeper in the phase
/// couple, which reproduces the balance `|∇u|² = g²` on a flat front.
fn node_gain(p: &Problem, comps: &[Vec<f64>], labels: &[usize], a: usize, i: usize, collective: bool, nb: &[(usize, f64)]) -> f64 {
    let u = &comps[i];
    let mut r = p.weights[a] * p.fs[i][a];
    let mut k = 0.0;
    if !collective {
        for &(b, c) in nb {
            r += p.scale * c * u[b];
        }
        k = p.diag[a];
    } else {
        let own = if labels[a] == i + 1 { u[a] } else { 0.0 };
        for &(b, c) in nb {
            if labels[b] == i + 1 && u[b] > own {
                r += p.scale * c * (u[b] - own);
                k += p.scale * c;
            }
        }
        if k == 0.0 {
            k = p.diag[a];
        }
    }
    let v = (r / k).clamp(0.0, p.ub(i, a));
    k * v * v - 2.0 * v * r + p.weights[a] * p.g2[a]
}

struct HardResult {
    passes: usize,
    converged: bool,
}

/// Candidate relabelings `(node, label, predicted change)`.
fn candidates(p: &Problem, comps: &[Vec<f64>], labels: &[usize], tau: f64, collective: bool) -> Vec<(usize, usize, f64)> {
    let n = p.grid.len();
    let m = p.m();
    let mut nb = Vec::with_capacity(6);
    let mut out = Vec::new();
    for a in 0..n {
        if !p.interior[a] {
            continue;
        }
        let cur = labels[a];
        p.grid.neighbors(a, &mut nb);
        if collective && nb.iter().all(|&(b, _)| labels[b] == cur) {
            continue;
        }
        let mut gains = [0.0f64; 16];
        for i in 0..m {
            gains[i + 1] = if p.allowed(i, a, tau) || cur == i + 1 {
                node_gain(p, comps, labels, a, i, collective, &nb)
            } else {
                f64::INFINITY
            };
        }
        let mut best = 0;
        for q in 1..=m {
            if gains[q] < gains[best] {
                best = q;
            }
        }
        let delta = gains[best] - gains[cur];
        let thresh = 1e-9 * p.weights[a] * p.g2[a] + 1e-14 * gains[cur].abs();
        if best != cur && delta < -thresh {
            out.push((a, best, delta));
        }
    }
    out
}

/// Applies every candidate whose predicted change is below a threshold that
/// tightens towards the strongest one, and keeps the first batch that lowers
/// the exact energy. Thresholds keep mirror-symmetric moves together.
fn try_batch(
    p: &Problem,
    comps: &mut Vec<Vec<f64>>,
    trial: &mut Vec<Vec<f64>>,
    labels: &mut Vec<usize>,
    cands: &[(usize, usize, f64)],
    current: f64,
    tau: f64,
) -> Option<EnergyBreakdown> {
    if cands.is_empty() {
        return None;
    }
    let n = p.grid.len();
    let cut = cands.iter().map(|c| c.2).fold(0.0, f64::min);
    let mut level = 0.0;
    loop {
        let mut new_labels = labels.clone();
        for &(a, q, d) in cands {
            if d <= level {
                new_labels[a] = q;
            }
        }
        trial.clone_from(comps);
        for (i, t) in trial.iter_mut().enumerate() {
            for a in 0..n {
                if new_labels[a] != i + 1 {
                    t[a] = 0.0;
                }
            }
        }
        solve_labels(p, &new_labels, trial);
        let e = p.exact_energy(trial, tau);
        if e.total < current {
            *labels = new_labels;
            core::mem::swap(comps, trial);
            return Some(e);
        }
        if level <= cut {
            return None;
        }
        level = if level == 0.0 { 0.5 * cut } else { 0.5 * (level + cut) };
        if (level - cut).abs() <= 1e-3 * cut.abs() {
            level = cut;
        }
    }
}

/// Labels `{u_i > level}` restricted to admissible nodes.
fn threshold_labels(p: &Problem, comps: &[Vec<f64>], level: f64, tau: f64) -> Vec<usize> {
    let mut labels = labels_from(comps, level.max(tau));
    for (a, l) in labels.iter_mut().enumerate() {
        if *l > 0 && !p.allowed(*l - 1, a, tau) {
            *l = 0;
        }
    }
    labels
}

/// Exact-energy scan of the level sets of smoothed snapshots: each level
/// `s` gives labels `{u > s}`, solved exactly; returns the best
/// `(labels, fields, energy)`.
fn level_scan(p: &Problem, snaps: &[(f64, Vec<Vec<f64>>)], tau: f64) -> Option<(Vec<usize>, Vec<Vec<f64>>, EnergyBreakdown)> {
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, EnergyBreakdown)> = None;
    for (eps, snap) in snaps {
        let eval = |level: f64| {
            let labels = threshold_labels(p, snap, level, tau);
            let mut u = snap.clone();
            for (i, c) in u.iter_mut().enumerate() {
                for a in 0..c.len() {
                    if labels[a] != i + 1 {
                        c[a] = 0.0;
                    }
                }
            }
            solve_labels(p, &labels, &mut u);
            let e = p.exact_energy(&u, tau);
            (labels, u, e)
        };
        let steps = 6;
        let levels: Vec<f64> = (0..=steps).map(|k| eps * k as f64 / 4.0).collect();
        let mut scored: Vec<(f64, f64)> = Vec::with_capacity(levels.len() + 8);
        let consider = |level: f64, best: &mut Option<(Vec<usize>, Vec<Vec<f64>>, EnergyBreakdown)>| {
            let r = eval(level);
            let total = r.2.total;
            if best.as_ref().is_none_or(|b| total < b.2.total) {
                *best = Some(r);
            }
            total
        };
        for &l in &levels {
            let t = consider(l, &mut best);
            scored.push((l, t));
        }
        let arg = (0..scored.len()).fold(0, |m, k| if scored[k].1 < scored[m].1 { k } else { m });
        let (mut lo, mut hi) = (scored[arg.saturating_sub(1)].0, scored[(arg + 1).min(steps)].0);
        for _ in 0..4 {
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if consider(a, &mut best) < consider(b, &mut best) {
                hi = b;
            } else {
                lo = a;
            }
        }
    }
    best
}

fn hard_stage(
    p: &Problem,
    comps: &mut Vec<Vec<f64>>,
    mut labels: Vec<usize>,
    tau: f64,
    opts: &SolveOptions,
    log: &mut Vec<EnergyLogEntry>,
    it0: usize,
) -> HardResult {
    let mut trial = comps.clone();
    solve_labels(p, &labels, comps);
    let mut energy = p.exact_energy(comps, tau);
    log.push(EnergyLogEntry { iteration: it0, epsilon: 0.0, energy });
    let mut passes = 0;
    let mut collective = true;
    // Consecutive passes without an accepted move.
    let mut idle = 0;
    while idle < 2 {
        if passes >= opts.max_hard_passes {
            return HardResult { passes, converged: false };
        }
        passes += 1;
        let all = candidates(p, comps, &labels, tau, collective);
        let mut accepted = false;
        // Growth, shrinkage and phase swaps are tried as separate batches so
        // that opposite moves on one interface do not cancel.
        for group in 0..3 {
            let cands: Vec<(usize, usize, f64)> = all
                .iter()
                .copied()
                .filter(|&(a, q, _)| match group {
                    0 => labels[a] == 0,
                    1 => q == 0,
                    _ => labels[a] != 0 && q != 0,
                })
                .collect();
            if let Some(e) = try_batch(p, comps, &mut trial, &mut labels, &cands, energy.total, tau) {
                energy = e;
                accepted = true;
                break;
            }
        }
        if accepted {
            idle = 0;
            log.push(EnergyLogEntry { iteration: it0 + passes, epsilon: 0.0, energy });
        } else {
            idle += 1;
            collective = !collective;
        }
    }
    HardResult { passes, converged: true }
}

fn seed_amplitude(comps: &[Vec<f64>]) -> f64 {
    comps.iter().flat_map(|u| u.iter()).fold(0.0, |m, v| m.max(v.abs()))
}

/// Truncated potentials `max(V_i - κ_i, 0)` with each shift chosen to
/// minimize that component's exact energy.
fn potential_seed(p: &Problem, potentials: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = p.grid.len();
    let mut out = Vec::with_capacity(p.m());
    for (i, v) in potentials.iter().enumerate() {
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::NEG_INFINITY;
        for a in 0..n {
            hi = hi.max(v[a]);
            if p.grid.cells_to_boundary(a) < 4 {
                lo = lo.max(v[a]);
            }
        }
        if !(hi > lo) {
            out.push(vec![0.0; n]);
            continue;
        }
        let make = |kappa: f64| -> Vec<f64> {
            (0..n)
                .map(|a| if p.interior[a] { (v[a] - kappa).max(0.0).min(p.ub(i, a)) } else { 0.0 })
                .collect()
        };
        let energy = |kappa: f64| -> f64 {
            let u = make(kappa);
            component_energy(&p.grid, &u, &p.fs[i], &p.g, 0.0).0
                + component_energy(&p.grid, &u, &p.fs[i], &p.g, 0.0).1
                + component_energy(&p.grid, &u, &p.fs[i], &p.g, 0.0).2
        };
        let samples = 48;
        let ks: Vec<f64> = (0..=samples).map(|k| lo + (hi - lo) * k as f64 / samples as f64).collect();
        let es: Vec<f64> = ks.iter().map(|&k| energy(k)).collect();
        let mut arg = 0;
        for k in 1..es.len() {
            if es[k] < es[arg] {
                arg = k;
            }
        }
        let (mut a, mut b) = (ks[arg.saturating_sub(1)], ks[(arg + 1).min(samples)]);
        let gr = 0.5 * (libm::sqrt(5.0) - 1.0);
        let mut c = b - gr * (b - a);
        let mut d = a + gr * (b - a);
        let (mut ec, mut ed) = (energy(c), energy(d));
        for _ in 0..40 {
            if ec < ed {
                b = d;
                d = c;
                ed = ec;
                c = b - gr * (b - a);
                ec = energy(c);
            } else {
                a = c;
                c = d;
                ec = ed;
                d = a + gr * (b - a);
                ed = energy(d);
            }
        }
        let mut best = 0.5 * (a + b);
        if energy(best) > es[arg] {
            best = ks[arg];
        }
        out.push(make(best));
    }
    segregate(&mut out);
    out
}

fn check_sources(grid: &Grid, fs: &[&ScalarField], g: &ScalarField) -> Result<Vec<String>> {
    for f in fs {
        f.ensure_same_grid(g)?;
    }
    let mut notes = Vec::new();
    let n = grid.len();
    for (i, f) in fs.iter().enumerate() {
        if (0..n).any(|a| grid.cells_to_boundary(a) < 2 && f.values()[a] > 0.0) {
            return Err(Error::SupportEscapesBox(format!("source {}", i + 1)));
        }
    }
    if g.min() < 0.0 {
        notes.push(String::from("warning: g takes negative values (g >= 0 expected)"));
    }
    let outside: Vec<usize> = (0..n).filter(|&a| fs.iter().all(|f| f.values()[a] <= 0.0)).collect();
    let g_ok = outside.iter().all(|&a| g.values()[a] > 0.0);
    let f_ok = outside.iter().all(|&a| fs.iter().all(|f| f.values()[a] < 0.0));
    if !outside.is_empty() && !g_ok && !f_ok {
        notes.push(String::from(
            "warning: neither g >= c0 > 0 nor f <= -c1 < 0 holds outside the source support; existence is not guaranteed",
        ));
    }
    Ok(notes)
}

struct Solved {
    comps: Vec<Vec<f64>>,
    energy: EnergyBreakdown,
    iterations: usize,
    converged: bool,
    log: Vec<EnergyLogEntry>,
    tau: f64,
    seed: String,
    notes: Vec<String>,
}

fn run(p: &Problem, potentials: &[Vec<f64>], opts: &SolveOptions) -> Result<Solved> {
    opts.validate()?;
    let n = p.grid.len();
    let m = p.m();
    // Smoothing widths and tau scale with the data, never with the seed, so
    // that seeds only influence the start of the homotopy.
    let pseed = potential_seed(p, potentials);
    let mut amp = seed_amplitude(&pseed);
    if !(amp > 0.0) {
        amp = seed_amplitude(potentials);
    }
    if !(amp > 0.0) {
        amp = 1.0;
    }
    let (mut comps, seed) = match opts.seed_mode {
        SeedMode::Potential => (pseed, String::from("potential")),
        SeedMode::Zero => (vec![vec![0.0; n]; m], String::from("zero")),
        SeedMode::Custom => {
            if opts.custom_seed.len() != m {
                return Err(Error::LengthMismatch { expected: m, found: opts.custom_seed.len() });
            }
            let mut c = Vec::with_capacity(m);
            for s in &opts.custom_seed {
                if s.grid() != &p.grid {
                    return Err(Error::GridMismatch);
                }
                c.push(s.values().to_vec());
            }
            (c, String::from("custom"))
        }
    };
    p.project(&mut comps);
    let tau = if opts.support_tau > 0.0 { opts.support_tau } else { 1e-8 * amp };
    if let Some(&last) = opts.regularization_schedule.last() {
        if last * amp > 10.0 * tau * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "last smoothing width {} exceeds 10 tau = {}",
                last * amp,
                10.0 * tau
            )));
        }
    }
    let step = match opts.descent_step {
        DescentStep::Fixed(t) => t,
        DescentStep::Auto => {
            let l = (0..n).map(|a| 4.0 * p.diag[a] / p.weights[a]).fold(0.0, f64::max);
            1.0 / l
        }
    };
    let mut log = Vec::new();
    let mut best = p.exact_energy(&comps, tau);
    log.push(EnergyLogEntry { iteration: 0, epsilon: f64::INFINITY, energy: best });
    let mut iterations = 0;
    let mut notes = Vec::new();
    // The homotopy follows its own iterate; the log and the result track
    // the best exact energy seen so far.
    let mut cur = comps.clone();
    let g_max = p.inner.iter().map(|&a| p.g[a].abs()).fold(0.0, f64::max);
    let pin = 2.0 * p.grid.h() * g_max;
    let mut snaps: Vec<(f64, Vec<Vec<f64>>)> = Vec::new();
    for (k, &rel) in opts.regularization_schedule.iter().enumerate() {
        let eps = rel * amp;
        // Only the first stage has to forget the seed; later stages start
        // from its output and run at a looser tolerance.
        let tol = if k == 0 { opts.energy_tol } else { (1e2 * opts.energy_tol).min(1e-6) };
        let r = continuation_stage(p, &mut cur, eps, step, amp, tol, k == 0, opts.max_outer_iters);
        iterations += r.iterations;
        if !r.converged {
            notes.push(format!("smoothing stage eps = {eps:e} stopped at the iteration cap"));
        }
        let e = p.exact_energy(&cur, tau);
        if e.total <= best.total {
            comps.clone_from(&cur);
            best = e;
        }
        log.push(EnergyLogEntry { iteration: iterations, epsilon: eps, energy: best });
        // Keep the two finest snapshots above the lattice pinning scale.
        if eps >= pin {
            snaps.push((eps, cur.clone()));
            if snaps.len() > 2 {
                snaps.remove(0);
            }
        }
    }
    if snaps.is_empty() {
        snaps.push((opts.regularization_schedule.last().copied().unwrap_or(0.0) * amp, cur.clone()));
    }
    let mut labels = threshold_labels(p, &cur, tau, tau);
    let mut start = cur.clone();
    solve_labels(p, &labels, &mut start);
    let e0 = p.exact_energy(&start, tau);
    if let Some((l, u, e)) = level_scan(p, &snaps, tau) {
        if e.total < e0.total {
            labels = l;
            cur = u;
        }
    }
    let mut hard_log = Vec::new();
    let h = hard_stage(p, &mut cur, labels, tau, opts, &mut hard_log, iterations);
    iterations += h.passes;
    for entry in hard_log {
        if entry.energy.total <= best.total {
            best = entry.energy;
        }
        log.push(EnergyLogEntry { iteration: entry.iteration, epsilon: 0.0, energy: best });
    }
    let e = p.exact_energy(&cur, tau);
    if e.total <= best.total {
        comps = cur;
        best = e;
    }
    if !h.converged {
        return Err(Error::NonConvergence { iterations: h.passes });
    }
    // Support margin.
    let mut closest = usize::MAX;
    for a in 0..n {
        if comps.iter().any(|u| u[a] > tau) {
            closest = closest.min(p.grid.cells_to_boundary(a));
        }
    }
    if closest < 4 {
        return Err(Error::BoxTooSmall { cells: closest });
    }
    let converged = notes.is_empty();
    Ok(Solved { comps, energy: best, iterations, converged, log, tau, seed, notes })
}

fn field(grid: Grid, v: Vec<f64>) -> Result<ScalarField> {
    ScalarField::new(grid, v)
}

/// Minimizes `J¹_{f,g}` over nonnegative fields.
pub fn minimize_one_phase(f: &ScalarField, g: &ScalarField, opts: &SolveOptions) -> Result<PhaseSolution> {
    let grid = *f.grid();
    let notes = check_sources(&grid, &[f], g)?;
    let p = Problem::new(grid, ProblemKind::OnePhase, vec![f.values().to_vec()], g.values(), vec![None]);
    let pot = if opts.seed_mode == SeedMode::Potential {
        vec![newtonian_potential(f).into_values()]
    } else {
        vec![vec![0.0; grid.len()]]
    };
    let s = run(&p, &pot, opts)?;
    let u = field(grid, s.comps.into_iter().next().unwrap_or_default())?;
    Ok(PhaseSolution {
        kind: ProblemKind::OnePhase,
        fields: vec![u],
        energy: s.energy,
        iterations_used: s.iterations,
        converged: s.converged,
        barrier_upper: None,
        barrier_lower: None,
        phase_barriers: Vec::new(),
        energy_log: s.log,
        tau: s.tau,
        seed: s.seed,
        extremal: None,
        notes: notes.into_iter().chain(s.notes).collect(),
    })
}

/// One-phase barriers: `U¹` for `f1` and `u¹ = -v` with `v` the one-phase
/// minimizer for `f2`.
pub fn barrier_pair(
    f1: &ScalarField,
    f2: &ScalarField,
    g: &ScalarField,
    opts: &SolveOptions,
) -> Result<(ScalarField, ScalarField)> {
    let upper = barrier_for(f1, g, opts)?;
    let lower = barrier_for(f2, g, opts)?.map(|v| -v);
    Ok((upper, lower))
}

fn barrier_for(f: &ScalarField, g: &ScalarField, opts: &SolveOptions) -> Result<ScalarField> {
    if f.values().iter().all(|&v| v <= 0.0) && g.min() > 0.0 {
        return Ok(ScalarField::zeros(*f.grid()));
    }
    let mut o = opts.clone();
    o.seed_mode = SeedMode::Potential;
    o.custom_seed.clear();
    Ok(minimize_one_phase(f, g, &o)?.fields.remove(0))
}

/// Minimizes the two-phase functional over `u¹ <= u <= U¹`.
pub fn minimize_two_phase(
    f1: &ScalarField,
    f2: &ScalarField,
    g: &ScalarField,
    opts: &SolveOptions,
) -> Result<PhaseSolution> {
    let grid = *f1.grid();
    f1.ensure_same_grid(f2)?;
    let notes = check_sources(&grid, &[f1, f2], g)?;
    let (upper, lower) = barrier_pair(f1, f2, g, opts)?;
    let p = Problem::new(
        grid,
        ProblemKind::TwoPhase,
        vec![f1.values().to_vec(), f2.values().to_vec()],
        g.values(),
        vec![Some(upper.values().to_vec()), Some(lower.negative_part().into_values())],
    );
    let mut o = opts.clone();
    if o.seed_mode == SeedMode::Custom {
        if o.custom_seed.len() != 1 {
            return Err(Error::LengthMismatch { expected: 1, found: o.custom_seed.len() });
        }
        let s = o.custom_seed[0].clone();
        o.custom_seed = vec![s.positive_part(), s.negative_part()];
    }
    let pot = if o.seed_mode == SeedMode::Potential {
        let v1 = newtonian_potential(f1);
        let v2 = newtonian_potential(f2);
        let v: Vec<f64> = v1.values().iter().zip(v2.values()).map(|(a, b)| a - b).collect();
        let neg = v.iter().map(|x| -x).collect();
        vec![v, neg]
    } else {
        vec![vec![0.0; grid.len()]; 2]
    };
    let s = run(&p, &pot, &o)?;
    let u: Vec<f64> = s.comps[0].iter().zip(&s.comps[1]).map(|(a, b)| a - b).collect();
    Ok(PhaseSolution {
        kind: ProblemKind::TwoPhase,
        fields: vec![field(grid, u)?],
        energy: s.energy,
        iterations_used: s.iterations,
        converged: s.converged,
        barrier_upper: Some(upper),
        barrier_lower: Some(lower),
        phase_barriers: Vec::new(),
        energy_log: s.log,
        tau: s.tau,
        seed: s.seed,
        extremal: None,
        notes: notes.into_iter().chain(s.notes).collect(),
    })
}

/// Minimizes `Σ_i J¹_{f_i,g}(u_i)` over segregated nonnegative vectors,
/// each component bounded by its one-phase barrier.
pub fn minimize_multi_phase(fs: &[ScalarField], g: &ScalarField, opts: &SolveOptions) -> Result<PhaseSolution> {
    if fs.is_empty() {
        return Err(Error::InvalidParameter("at least one phase is required".into()));
    }
    if fs.len() == 1 {
        return minimize_one_phase(&fs[0], g, opts);
    }
    if fs.len() > 15 {
        return Err(Error::InvalidParameter("at most 15 phases are supported".into()));
    }
    let grid = *fs[0].grid();
    let refs: Vec<&ScalarField> = fs.iter().collect();
    let notes = check_sources(&grid, &refs, g)?;
    let mut barriers = Vec::with_capacity(fs.len());
    for f in fs {
        barriers.push(barrier_for(f, g, opts)?);
    }
    let p = Problem::new(
        grid,
        ProblemKind::MultiPhase,
        fs.iter().map(|f| f.values().to_vec()).collect(),
        g.values(),
        barriers.iter().map(|b| Some(b.values().to_vec())).collect(),
    );
    let pot: Vec<Vec<f64>> = if opts.seed_mode == SeedMode::Potential {
        fs.iter().map(|f| newtonian_potential(f).into_values()).collect()
    } else {
        vec![vec![0.0; grid.len()]; fs.len()]
    };
    let s = run(&p, &pot, opts)?;
    let fields = s.comps.into_iter().map(|v| field(grid, v)).collect::<Result<Vec<_>>>()?;
    Ok(PhaseSolution {
        kind: ProblemKind::MultiPhase,
        fields,
        energy: s.energy,
        iterations_used: s.iterations,
        converged: s.converged,
        barrier_upper: None,
        barrier_lower: None,
        phase_barriers: barriers,
        energy_log: s.log,
        tau: s.tau,
        seed: s.seed,
        extremal: None,
        notes: notes.into_iter().chain(s.notes).collect(),
    })
}

/// One-phase problem for [`select_extremal`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremalProblem {
    pub f: ScalarField,
    pub g: ScalarField,
    pub opts: SolveOptions,
}

/// Runs the one-phase solver from a fixed family of three seeds (potential,
/// scaled-up supersolution, support-hugging truncation) and returns the
/// member that dominates (largest) or is dominated by (smallest) every
/// other member within `1e-8`. The family is a heuristic proxy for the
/// extremal minimizers.
pub fn select_extremal(problem: &ExtremalProblem, which: Extremal) -> Result<PhaseSolution> {
    let f = &problem.f;
    let g = &problem.g;
    let grid = *f.grid();
    check_sources(&grid, &[f], g)?;
    let p = Problem::new(grid, ProblemKind::OnePhase, vec![f.values().to_vec()], g.values(), vec![None]);
    let pot = newtonian_potential(f).into_values();
    let base = potential_seed(&p, core::slice::from_ref(&pot)).remove(0);
    let energy_of = |u: &[f64]| {
        let (d, s, q) = component_energy(&grid, u, f.values(), g.values(), 0.0);
        d + s + q
    };
    // Supersolution: scale the truncated potential up until the energy rises.
    let mut scale = 1.0;
    let mut e_prev = energy_of(&base);
    for _ in 0..20 {
        let trial: Vec<f64> = base.iter().map(|v| v * scale * 1.25).collect();
        let e = energy_of(&trial);
        if e > e_prev {
            break;
        }
        e_prev = e;
        scale *= 1.25;
    }
    let mut superseed: Vec<f64> = base.iter().map(|v| v * scale).collect();
    p.project(core::slice::from_mut(&mut superseed));
    let superseed = superseed;
    // Support-hugging seed: truncate at the smallest potential on supp f.
    let mut kappa = f64::INFINITY;
    for a in 0..grid.len() {
        if f.values()[a] > 0.0 {
            kappa = kappa.min(pot[a]);
        }
    }
    let hug: Vec<f64> = if kappa.is_finite() {
        (0..grid.len())
            .map(|a| if p.interior[a] { (pot[a] - kappa).max(0.0) } else { 0.0 })
            .collect()
    } else {
        vec![0.0; grid.len()]
    };
    let seeds = [("potential", base), ("supersolution", superseed), ("support", hug)];
    let mut members = Vec::with_capacity(3);
    for (name, s) in seeds {
        let mut o = problem.opts.clone();
        o.seed_mode = SeedMode::Custom;
        o.custom_seed = vec![ScalarField::new(grid, s)?];
        let mut sol = minimize_one_phase(f, g, &o)?;
        sol.seed = String::from(name);
        members.push(sol);
    }
    let dominates = |a: &ScalarField, b: &ScalarField, largest: bool| {
        a.values().iter().zip(b.values()).all(|(x, y)| if largest { *x >= y - 1e-8 } else { *x <= y + 1e-8 })
    };
    let largest = which == Extremal::Largest;
    let pick = (0..members.len()).find(|&i| {
        (0..members.len()).all(|j| dominates(&members[i].fields[0], &members[j].fields[0], largest))
    });
    match pick {
        Some(i) => {
            let mut sol = members.swap_remove(i);
            sol.extremal = Some(which);
            sol.notes.push(String::from("extremal selection over a three-seed family (heuristic)"));
            Ok(sol)
        }
        None => {
            let mut gap: f64 = 0.0;
            for i in 0..members.len() {
                for j in 0..members.len() {
                    for (x, y) in members[i].fields[0].values().iter().zip(members[j].fields[0].values()) {
                        gap = gap.max(y - x);
                    }
                }
            }
            Err(Error::FamilyDisagreement { gap })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::measure::{rasterize_measure, Atom, MeasureSpec};
    use core::f64::consts::PI;

    fn radial_setup(h: f64, half: f64) -> (ScalarField, ScalarField) {
        let n = libm::round(2.0 * half / h) as usize;
        let g = build_grid(2, &[-half, -half], h, &[n, n]).unwrap();
        let spec = MeasureSpec::from_atoms(vec![Atom::new([0.0; 3], 4.0 * PI, 0.25)]);
        (rasterize_measure(&spec, &g).unwrap(), ScalarField::constant(g, 1.0))
    }

    fn support_radius(u: &ScalarField, tau: f64) -> f64 {
        let g = u.grid();
        let area: f64 = (0..g.len()).filter(|&a| u.values()[a] > tau).map(|a| g.node_weight(a)).sum();
        libm::sqrt(area / PI)
    }

    #[test]
    fn prox_cases() {
        assert_eq!(prox(-1.0, 0.1, 0.5, f64::INFINITY), 0.0);
        assert_eq!(prox(3.0, 0.1, 0.5, f64::INFINITY), 3.0);
        assert_eq!(prox(3.0, 0.1, 0.5, 2.0), 2.0);
        // Hard threshold: jumping to v costs s, staying at 0 costs v²/2.
        assert_eq!(prox(0.5, 0.1, 1e-9, f64::INFINITY), 0.5);
        assert_eq!(prox(0.5, 0.2, 1e-9, f64::INFINITY), 0.0);
        let x = prox(0.2, 0.01, 0.5, f64::INFINITY);
        assert!(x > 0.0 && x < 0.2);
    }

    #[test]
    fn segregation_examples() {
        let g = build_grid(2, &[0.0, 0.0], 1.0, &[8, 8]).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let out = segregation_project(&[one.clone(), one.clone()]).unwrap();
        assert_eq!(out[0].max_abs() + out[1].max_abs(), 0.0);
        let two = ScalarField::constant(g, 2.0);
        let out = segregation_project(&[two, one]).unwrap();
        assert_eq!((out[0].values()[0], out[1].values()[0]), (1.0, 0.0));
        let again = segregation_project(&out).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn zero_source_gives_zero() {
        let g = build_grid(2, &[-1.0, -1.0], 0.125, &[16, 16]).unwrap();
        let s = minimize_one_phase(&ScalarField::zeros(g), &ScalarField::constant(g, 1.0), &SolveOptions::default()).unwrap();
        assert_eq!(s.fields[0].max_abs(), 0.0);
        assert_eq!(s.energy.total, 0.0);
    }

    #[test]
    fn radial_2d_coarse() {
        let h = 1.0 / 16.0;
        let (f, g) = radial_setup(h, 2.75);
        let s = minimize_one_phase(&f, &g, &SolveOptions::default()).unwrap();
        let r = support_radius(&s.fields[0], s.tau);
        assert!((r - 2.0).abs() <= 2.0 * h, "radius {r}");
        assert!(s.converged);
        for w in s.energy_log.windows(2) {
            assert!(w[1].energy.total <= w[0].energy.total + 1e-12 * w[0].energy.total.abs());
        }
        // Interior consistency: Δu = -f on the support away from its edge.
        let lap = crate::grid::laplacian(&s.fields[0]);
        let grid = *f.grid();
        for a in 0..grid.len() {
            let p = grid.point(a);
            if libm::hypot(p[0], p[1]) < 1.5 {
                let e = (lap.values()[a] + f.values()[a]).abs();
                assert!(e < 1e-6 * (1.0 + f.values()[a].abs()), "residual {e} at {p:?} u={}", s.fields[0].values()[a]);
            }
        }
    }

    #[test]
    fn box_too_small() {
        let h = 1.0 / 8.0;
        let (f, g) = radial_setup(h, 2.0);
        let r = minimize_one_phase(&f, &g, &SolveOptions::default());
        assert!(matches!(r, Err(Error::BoxTooSmall { .. })), "{r:?}");
    }

    #[test]
    fn bad_schedule() {
        let o = SolveOptions { regularization_schedule: vec![0.1, 0.2], ..Default::default() };
        assert!(o.validate().is_err());
    }

    #[test]
    fn two_phase_with_zero_f2_matches_one_phase() {
        let h = 1.0 / 16.0;
        let (f, g) = radial_setup(h, 2.75);
        let z = ScalarField::zeros(*f.grid());
        let one = minimize_one_phase(&f, &g, &SolveOptions::default()).unwrap();
        let two = minimize_two_phase(&f, &z, &g, &SolveOptions::default()).unwrap();
        let diff = one.fields[0]
            .values()
            .iter()
            .zip(two.fields[0].values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-6, "diff {diff}\n{}\n{}", one.energy_log_csv(), two.energy_log_csv());
        assert_eq!(two.barrier_lower.as_ref().unwrap().max_abs(), 0.0);
    }

    fn pair_setup(h: f64, half: f64, m1: f64, m2: f64) -> (ScalarField, ScalarField, ScalarField) {
        let n = libm::round(2.0 * half / h) as usize;
        let g = build_grid(2, &[-half, -half], h, &[n, n]).unwrap();
        let a = MeasureSpec::from_atoms(vec![Atom::new([-1.0, 0.0, 0.0], m1, 0.25)]);
        let b = MeasureSpec::from_atoms(vec![Atom::new([1.0, 0.0, 0.0], m2, 0.25)]);
        (rasterize_measure(&a, &g).unwrap(), rasterize_measure(&b, &g).unwrap(), ScalarField::constant(g, 1.0))
    }

    /// Values at the mirror image through `x = 0`.
    fn mirror(u: &ScalarField) -> Vec<f64> {
        let g = u.grid();
        let nx = g.nodes()[0];
        (0..g.len())
            .map(|a| {
                let mut c = g.coords(a);
                c[0] = nx - 1 - c[0];
                u.values()[g.index(c)]
            })
            .collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn barriers_of_mirrored_sources_are_mirrored() {
        let (f1, f2, g) = pair_setup(1.0 / 16.0, 2.5, PI, PI);
        let (up, lo) = barrier_pair(&f2, &f1, &g, &SolveOptions::default()).unwrap();
        let neg: Vec<f64> = mirror(&lo).iter().map(|v| -v).collect();
        assert!(max_diff(up.values(), &neg) <= 1e-8);
    }

    #[test]
    fn two_phase_dirac_pair_is_antisymmetric() {
        let (f1, f2, g) = pair_setup(1.0 / 16.0, 2.5, PI, PI);
        let s = minimize_two_phase(&f2, &f1, &g, &SolveOptions::default()).unwrap();
        let u = &s.fields[0];
        let neg: Vec<f64> = mirror(u).iter().map(|v| -v).collect();
        assert!(max_diff(u.values(), &neg) <= 1e-6);
        assert!(u.max() > 0.0 && u.min() < 0.0);
        let (up, lo) = (s.barrier_upper.unwrap(), s.barrier_lower.unwrap());
        for a in 0..u.grid().len() {
            let v = u.values()[a];
            assert!(v <= up.values()[a] + 1e-12 && v >= lo.values()[a] - 1e-12);
        }
    }

    #[test]
    fn separated_phases_are_disjoint_balls() {
        let h = 1.0 / 16.0;
        let n = 96;
        let g = build_grid(2, &[-3.0, -3.0], h, &[n, n]).unwrap();
        let centers = [[-1.5, -1.0, 0.0], [1.5, -1.0, 0.0], [0.0, 1.5, 0.0]];
        let fs: Vec<ScalarField> = centers
            .iter()
            .map(|c| rasterize_measure(&MeasureSpec::from_atoms(vec![Atom::new(*c, PI, 0.2)]), &g).unwrap())
            .collect();
        let one = ScalarField::constant(g, 1.0);
        let s = minimize_multi_phase(&fs, &one, &SolveOptions::default()).unwrap();
        assert_eq!(s.fields.len(), 3);
        let tau = s.tau;
        for a in 0..g.len() {
            for i in 0..3 {
                for j in i + 1..3 {
                    assert!(s.fields[i].values()[a] * s.fields[j].values()[a] <= tau * tau);
                }
            }
        }
        // Mass π gives radius 1/2; the balls are far apart so each phase is its one-phase minimizer.
        let r = 0.5;
        for (i, c) in centers.iter().enumerate() {
            let u = &s.fields[i];
            let area: f64 = (0..g.len()).filter(|&a| u.values()[a] > tau).map(|a| g.node_weight(a)).sum();
            let rr = libm::sqrt(area / PI);
            assert!((rr - r).abs() <= 2.0 * h, "phase {i} radius {rr} notes {:?}", s.notes);
            let far = (0..g.len())
                .filter(|&a| u.values()[a] > tau)
                .map(|a| {
                    let p = g.point(a);
                    libm::hypot(p[0] - c[0], p[1] - c[1])
                })
                .fold(0.0f64, f64::max);
            assert!(far <= r + 2.0 * h, "phase {i} reaches {far}");
        }
    }

    #[test]
    fn radial_extremal_minimizers_coincide() {
        let (f, g) = radial_setup(1.0 / 16.0, 2.75);
        let problem = ExtremalProblem { f, g, opts: SolveOptions::default() };
        let hi = select_extremal(&problem, Extremal::Largest).unwrap();
        let lo = select_extremal(&problem, Extremal::Smallest).unwrap();
        assert!(max_diff(hi.fields[0].values(), lo.fields[0].values()) <= 1e-6);
        assert_eq!(hi.extremal, Some(Extremal::Largest));
    }
}
