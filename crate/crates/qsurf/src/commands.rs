//! Subcommands. Each appends its artifacts and check records to an
//! [`Outcome`], so a failing run still reports what it produced.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use qsurf_core::boundary::{
    aux_weighted_bound_check, axial_asphericity, cjk_profile, classify_boundary, junction_scan, lipschitz_probe,
    nondegeneracy_probe, reflect_antisymmetry, reflect_compare, solution_geometry, BoundaryClassification,
    BoundaryGeometry, BoundaryLabel, ProbeReport, Verdict,
};
use qsurf_core::grid::{point, Hyperplane};
use qsurf_core::minimize::{PhaseSolution, ProblemKind};
use qsurf_core::quadrature::{harmonic_test_set, qi_residual, sakai_check, support_bounding_box};
use qsurf_core::reference::{ac_cone, annular_construction};
use qsurf_core::ScalarField;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    config_hash, CjkCheck, ExperimentConfig, JunctionCheck, ProbeSpec, QiCheck, ReferenceCheck, SakaiCheck,
    SupportInclusionCheck, SymmetryCheck,
};
use crate::experiment::{load_solution, save_solution, Experiment};
use crate::manifest::{unix_now, CheckRecord, Manifest, RunStatus, Timing};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Solve,
    VerifyQi,
    Classify,
    Probes,
    Reference,
    Sakai,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::VerifyQi => "verify-qi",
            Command::Classify => "classify",
            Command::Probes => "probes",
            Command::Reference => "reference",
            Command::Sakai => "sakai",
            Command::All => "all",
        }
    }

    /// Only `reference` runs without a configuration.
    pub fn needs_config(self) -> bool {
        self != Command::Reference
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<String>,
    pub checks: Vec<CheckRecord>,
}

impl Outcome {
    fn write(&mut self, dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(dir.join(name), contents).with_context(|| format!("writing {name}"))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, dir: &Path, name: &str, value: &T) -> Result<()> {
        self.write(dir, name, serde_json::to_string_pretty(value)? + "\n")
    }
}

/// Runs `cmd`, then writes `manifest.json` into `out` whatever happened.
pub fn execute(cmd: Command, cfg: Option<&ExperimentConfig>, out: &Path) -> Manifest {
    let started = unix_now();
    let clock = Instant::now();
    let mut outcome = Outcome::default();
    let hash = match cfg {
        Some(c) => config_hash(c),
        None => config_hash(&ReferenceCheck::default()),
    };
    let result = fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .and_then(|_| run(cmd, cfg, out, &hash, &mut outcome));
    let (status, error) = match result {
        Err(e) => (RunStatus::Failed, Some(format!("{e:#}"))),
        Ok(()) if outcome.checks.iter().any(CheckRecord::failed) => (RunStatus::ChecksFailed, None),
        Ok(()) => (RunStatus::Passed, None),
    };
    let manifest = Manifest {
        subcommand: cmd.name().into(),
        status,
        error,
        config_hash: hash,
        qsurf_version: env!("CARGO_PKG_VERSION").into(),
        core_version: qsurf_core::VERSION.into(),
        artifacts: outcome.artifacts,
        checks: outcome.checks,
        timing: Timing { started_unix: started, wall_seconds: clock.elapsed().as_secs_f64() },
    };
    if let Err(e) = manifest.write(out) {
        eprintln!("qsurf: could not write the manifest: {e:#}");
    }
    manifest
}

fn run(cmd: Command, cfg: Option<&ExperimentConfig>, out: &Path, hash: &str, o: &mut Outcome) -> Result<()> {
    let need = || cfg.ok_or_else(|| anyhow!("`{}` needs --config", cmd.name()));
    match cmd {
        Command::Solve => solve(need()?, out, hash, o),
        Command::VerifyQi => verify_qi(need()?, out, &need()?.checks.qi.clone().unwrap_or_default(), o),
        Command::Classify => classify(need()?, out, o),
        Command::Probes => probes(need()?, out, o),
        Command::Sakai => sakai(need()?, out, &need()?.checks.sakai.clone().unwrap_or_default(), o),
        Command::Reference => {
            let spec = cfg.and_then(|c| c.checks.reference.clone()).unwrap_or_default();
            reference(&spec, out, o)
        }
        Command::All => {
            let cfg = need()?;
            solve(cfg, out, hash, o)?;
            if let Some(q) = &cfg.checks.qi {
                verify_qi(cfg, out, q, o)?;
            }
            classify(cfg, out, o)?;
            probes(cfg, out, o)?;
            if let Some(s) = &cfg.checks.sakai {
                sakai(cfg, out, s, o)?;
            }
            if let Some(r) = &cfg.checks.reference {
                reference(r, out, o)?;
            }
            Ok(())
        }
    }
}

fn solve(cfg: &ExperimentConfig, out: &Path, hash: &str, o: &mut Outcome) -> Result<()> {
    let exp = Experiment::from_config(cfg)?;
    let sol = exp.solve(&cfg.solve)?;
    o.artifacts.extend(save_solution(out, &sol, hash)?);
    let (geo, cls) = classified_geometry(cfg, &sol)?;
    o.write(out, "boundary.csv", geo.to_csv(Some(&cls)))?;
    if let Some(c) = &cfg.checks.support_inclusion {
        o.checks.push(support_inclusion(&sol, c));
    }
    if let Some(c) = &cfg.checks.symmetry {
        o.checks.extend(symmetry(&sol, c)?);
    }
    Ok(())
}

fn classified_geometry(cfg: &ExperimentConfig, sol: &PhaseSolution) -> Result<(BoundaryGeometry, BoundaryClassification)> {
    let h = sol.fields[0].grid().h();
    let geo = solution_geometry(&sol.phase_fields(), sol.tau)?;
    let cls = classify_boundary(&geo, cfg.checks.classify.r_class_cells * h)?;
    Ok((geo, cls))
}

/// Phase-support nodes with no barrier-support node within `halo_cells`
/// (per axis).
fn support_inclusion(sol: &PhaseSolution, c: &SupportInclusionCheck) -> CheckRecord {
    const NAME: &str = "support_inclusion";
    if sol.kind == ProblemKind::OnePhase {
        return CheckRecord::not_applicable(NAME, "one-phase solve has no barriers");
    }
    let phases = sol.phase_fields();
    let barriers = sol.phase_barrier_fields();
    let mut violations = 0usize;
    for (u, b) in phases.iter().zip(&barriers) {
        let Some(b) = b else { continue };
        let grid = *u.grid();
        let dim = grid.dim();
        let n = grid.nodes();
        let mut covered = vec![false; grid.len()];
        let r = c.halo_cells;
        for a in 0..grid.len() {
            if b.values()[a] <= sol.tau {
                continue;
            }
            let p = grid.coords(a);
            let lo: Vec<usize> = (0..3).map(|k| if k < dim { p[k].saturating_sub(r) } else { 0 }).collect();
            let hi: Vec<usize> = (0..3).map(|k| if k < dim { (p[k] + r).min(n[k] - 1) } else { 0 }).collect();
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    for k in lo[2]..=hi[2] {
                        covered[grid.index([i, j, k])] = true;
                    }
                }
            }
        }
        violations += (0..grid.len()).filter(|&a| u.values()[a] > sol.tau && !covered[a]).count();
    }
    CheckRecord::at_most(NAME, violations as f64, 0.0).with_detail(format!("halo of {} cells", c.halo_cells))
}

fn symmetry(sol: &PhaseSolution, c: &SymmetryCheck) -> Result<Vec<CheckRecord>> {
    let plane = Hyperplane::new(point(&c.plane_normal), c.plane_offset)?;
    let reflected: Vec<&ScalarField> = match sol.kind {
        ProblemKind::MultiPhase => sol.fields.iter().collect(),
        _ => vec![&sol.fields[0]],
    };
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for u in &reflected {
        scale = scale.max(u.max_abs());
        let d = if c.antisymmetric {
            reflect_antisymmetry(u, &plane)
        } else {
            let back = Hyperplane { normal: plane.normal.map(|x| -x), offset: -plane.offset };
            reflect_compare(u, &plane).max(reflect_compare(u, &back))
        };
        worst = worst.max(d);
    }
    let kind = if c.antisymmetric { "odd" } else { "even" };
    let mut out = vec![CheckRecord::at_most("symmetry.reflection", worst / scale.max(f64::MIN_POSITIVE), c.tolerance)
        .with_detail(format!("{kind} reflection, relative to max|u| = {scale:e}"))];
    if let (Some(p), Some(d)) = (&c.axis_point, &c.axis_direction) {
        let h = sol.fields[0].grid().h();
        let mut asph = 0.0f64;
        for u in sol.phase_fields() {
            asph = asph.max(axial_asphericity(&u, sol.tau, &point(p), &point(d))?);
        }
        out.push(
            CheckRecord::at_most("symmetry.asphericity", asph, c.asphericity_cells * h)
                .with_detail(format!("{} cells", c.asphericity_cells)),
        );
    }
    Ok(out)
}

/// The saved solution, provided it lives on the configured grid.
fn load_matching(cfg: &ExperimentConfig, out: &Path) -> Result<PhaseSolution> {
    let (sol, _) = load_solution(out)?;
    if *sol.fields[0].grid() != cfg.grid.build()? {
        bail!("the solution in {} was computed on another grid; rerun `qsurf solve`", out.display());
    }
    Ok(sol)
}

fn verify_qi(cfg: &ExperimentConfig, out: &Path, q: &QiCheck, o: &mut Outcome) -> Result<()> {
    let sol = load_matching(cfg, out)?;
    let exp = Experiment::from_config(cfg)?;
    let phases = sol.phase_fields();
    let Some(support) = support_bounding_box(&phases, sol.tau) else {
        bail!("the solution has empty support");
    };
    let tests = harmonic_test_set(support, exp.measure_box(), exp.grid.dim(), q.kernels)?;
    let report = qi_residual(&sol, &exp.densities, &exp.g, &tests)?;
    o.write(out, "qi.csv", report.to_csv())?;
    o.write_json(out, "qi.json", &report)?;
    o.checks.push(
        CheckRecord::at_most("qi.residual", report.max_relative_residual(), q.tolerance)
            .with_detail(format!("{} tests, both routes", tests.len())),
    );
    o.checks.push(CheckRecord::at_most("qi.route_disagreement", report.max_route_disagreement(), q.route_tolerance));
    Ok(())
}

#[derive(Serialize)]
struct ClassificationSummary {
    classification_radius: f64,
    elements: usize,
    one_phase: usize,
    two_phase: usize,
    branch: usize,
}

fn classify(cfg: &ExperimentConfig, out: &Path, o: &mut Outcome) -> Result<()> {
    let sol = load_matching(cfg, out)?;
    let (geo, cls) = classified_geometry(cfg, &sol)?;
    o.write(out, "boundary.csv", geo.to_csv(Some(&cls)))?;
    o.write_json(
        out,
        "classification.json",
        &ClassificationSummary {
            classification_radius: cls.classification_radius,
            elements: geo.elements.len(),
            one_phase: cls.count(BoundaryLabel::OnePhase),
            two_phase: cls.count(BoundaryLabel::TwoPhase),
            branch: cls.count(BoundaryLabel::Branch),
        },
    )?;
    let phases = sol.phase_fields();
    if let Some(j) = &cfg.checks.junctions {
        let record = junctions(&sol, &phases, j, out, o)?;
        o.checks.push(record);
    }
    if let Some(c) = &cfg.checks.cjk {
        let record = cjk(&sol, &phases, &geo, &cls, c, out, o)?;
        o.checks.push(record);
    }
    Ok(())
}

fn junctions(
    sol: &PhaseSolution,
    phases: &[ScalarField],
    c: &JunctionCheck,
    out: &Path,
    o: &mut Outcome,
) -> Result<CheckRecord> {
    const NAME: &str = "junctions";
    if phases.len() < 3 {
        return Ok(CheckRecord::not_applicable(NAME, "fewer than three phases"));
    }
    let grid = *phases[0].grid();
    let r = c.r_scan_cells * grid.h();
    let hits = junction_scan(phases, sol.tau, r)?;
    let mut csv = String::from("node,x,y,z\n");
    for &a in &hits {
        let p = grid.point(a);
        csv.push_str(&format!("{a},{:e},{:e},{:e}\n", p[0], p[1], p[2]));
    }
    o.write(out, "junctions.csv", csv)?;
    Ok(CheckRecord::at_most(NAME, hits.len() as f64, 0.0).with_detail(format!("scan radius {} cells", c.r_scan_cells)))
}

#[allow(clippy::too_many_arguments)]
fn cjk(
    sol: &PhaseSolution,
    phases: &[ScalarField],
    geo: &BoundaryGeometry,
    cls: &BoundaryClassification,
    c: &CjkCheck,
    out: &Path,
    o: &mut Outcome,
) -> Result<CheckRecord> {
    const NAME: &str = "cjk";
    if phases.len() < 3 {
        return Ok(CheckRecord::not_applicable(NAME, "fewer than three phases"));
    }
    let grid = *phases[0].grid();
    let radii: Vec<f64> = c.radii_cells.iter().map(|r| r * grid.h()).collect();
    let reach = radii[0];
    let samples: Vec<(usize, [f64; 3])> = geo
        .elements
        .iter()
        .zip(&cls.labels)
        .filter(|(e, l)| **l == BoundaryLabel::TwoPhase && grid.distance_to_boundary(&e.midpoint) >= reach)
        .map(|(e, _)| (e.phase_pair.0 - 1, e.midpoint))
        .step_by(c.stride)
        .collect();
    let m = phases.len();
    let rows: Vec<Result<(usize, [f64; 3], [usize; 3], f64)>> = samples
        .par_iter()
        .flat_map_iter(|&(i, x)| {
            let others: Vec<usize> = (0..m).filter(|&k| k != i).collect();
            let mut triples = Vec::new();
            for (a, &j) in others.iter().enumerate() {
                for &k in &others[a + 1..] {
                    triples.push([i, j, k]);
                }
            }
            let radii = &radii;
            triples.into_iter().map(move |t| {
                let rep: ProbeReport =
                    cjk_profile([&phases[t[0]], &phases[t[1]], &phases[t[2]]], &x, radii, c.epsilon, sol.tau)?;
                Ok((i, x, t, rep.details.get("worst_growth_over_allowed").copied().unwrap_or(0.0)))
            })
        })
        .collect();
    let mut csv = String::from("x,y,z,phase_i,phase_j,phase_k,worst_growth_over_allowed\n");
    let mut worst = 0.0f64;
    for r in rows {
        let (_, x, t, w) = r?;
        worst = worst.max(w);
        csv.push_str(&format!("{:e},{:e},{:e},{},{},{},{:e}\n", x[0], x[1], x[2], t[0] + 1, t[1] + 1, t[2] + 1, w));
    }
    o.write(out, "cjk.csv", csv)?;
    Ok(CheckRecord::at_most(NAME, worst, 1.0)
        .with_detail(format!("{} two-phase samples, growth relative to (r/r')^(3ε), ε = {}", samples.len(), c.epsilon)))
}

fn probes(cfg: &ExperimentConfig, out: &Path, o: &mut Outcome) -> Result<()> {
    if cfg.checks.probes.is_empty() {
        return Ok(());
    }
    let sol = load_matching(cfg, out)?;
    let phases = sol.phase_fields();
    let reports: Vec<ProbeReport> = cfg
        .checks
        .probes
        .par_iter()
        .map(|spec| {
            let u = phases
                .get(spec.phase() - 1)
                .ok_or_else(|| anyhow!("probe phase {} does not exist", spec.phase()))?;
            Ok(match spec {
                ProbeSpec::Nondegeneracy { center, radii, d_min, .. } => {
                    nondegeneracy_probe(u, &point(center), radii, *d_min, None)?
                }
                ProbeSpec::Lipschitz { center, radii, .. } => lipschitz_probe(u, &point(center), radii)?,
                ProbeSpec::AuxBound { center, rho, .. } => aux_weighted_bound_check(u, &point(center), *rho)?,
            })
        })
        .collect::<Result<_>>()?;
    for (i, rep) in reports.iter().enumerate() {
        let name = format!("probe.{}.{i}", rep.probe);
        let record = match (rep.verdict, rep.threshold) {
            (Verdict::Indeterminate, _) | (_, None) => CheckRecord {
                name,
                verdict: rep.verdict,
                value: rep.values.iter().copied().reduce(f64::max),
                threshold: rep.threshold,
                detail: "raw values only".into(),
            },
            (v, Some(t)) => CheckRecord {
                name,
                verdict: v,
                value: rep.values.iter().copied().reduce(f64::min),
                threshold: Some(t),
                detail: "minimum over radii".into(),
            },
        };
        o.checks.push(record);
    }
    o.write_json(out, "probes.json", &reports)
}

fn sakai(cfg: &ExperimentConfig, out: &Path, s: &SakaiCheck, o: &mut Outcome) -> Result<()> {
    let exp = Experiment::from_config(cfg)?;
    let h = exp.grid.h();
    let radii = if s.radii.is_empty() { vec![4.0 * h, 3.0 * h, 2.0 * h] } else { s.radii.clone() };
    let c = s.c_bound.unwrap_or_else(|| exp.g.max());
    let mut reports = Vec::new();
    for (i, m) in exp.measures.iter().enumerate() {
        let name = format!("sakai.phase_{}", i + 1);
        if m.support_points(exp.grid.dim()).is_empty() {
            o.checks.push(CheckRecord::not_applicable(name, "empty measure"));
            continue;
        }
        let rep = sakai_check(m, &exp.grid, c, &radii)?;
        o.checks.push(CheckRecord {
            name,
            verdict: rep.verdict,
            value: rep.details.get("score").copied(),
            threshold: rep.threshold,
            detail: "passes when the worst support point exceeds the threshold".into(),
        });
        reports.push(rep);
    }
    o.write_json(out, "sakai.json", &reports)
}

#[derive(Serialize)]
struct ConeReport {
    theta_0: f64,
    theta_0_degrees: f64,
    f_prime_at_theta_0: f64,
    f_prime_at_half_pi: f64,
    ode_residual: f64,
}

/// Opening angle of the axially symmetric homogeneous cone, in degrees.
pub const CONE_ANGLE_DEGREES: f64 = 33.534;

fn reference(spec: &ReferenceCheck, out: &Path, o: &mut Outcome) -> Result<()> {
    let ann = annular_construction(spec.shell_radius, spec.shell_density, spec.inner_radius, 3)?;
    o.write_json(out, "annulus.json", &ann)?;
    o.checks.push(CheckRecord::at_most(
        "reference.annulus_residual",
        ann.continuity_residual.max(ann.jump_residual),
        1e-12,
    ));
    let cone = ac_cone(spec.cone_resolution)?;
    let mut csv = String::from("theta,f\n");
    for (t, f) in cone.theta.iter().zip(&cone.f) {
        csv.push_str(&format!("{t:e},{f:e}\n"));
    }
    o.write(out, "cone_profile.csv", csv)?;
    o.write_json(
        out,
        "cone.json",
        &ConeReport {
            theta_0: cone.theta_0,
            theta_0_degrees: cone.theta_0_degrees,
            f_prime_at_theta_0: cone.f_prime_at_theta_0,
            f_prime_at_half_pi: cone.f_prime_at_half_pi,
            ode_residual: cone.ode_residual,
        },
    )?;
    o.checks.push(CheckRecord::at_most(
        "reference.cone_angle",
        (cone.theta_0_degrees - CONE_ANGLE_DEGREES).abs(),
        1e-3,
    ));
    o.checks.push(CheckRecord::at_most("reference.cone_ode_residual", cone.ode_residual, 1e-8));
    o.checks.push(CheckRecord::at_most("reference.cone_f_prime_half_pi", cone.f_prime_at_half_pi.abs(), 1e-8));
    Ok(())
}
