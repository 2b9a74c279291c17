//! Problems assembled from a configuration, and solutions on disk.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use qsurf_core::energy::EnergyBreakdown;
use qsurf_core::measure::{rasterize_measure, Atom, MeasureSpec, Shell, Sign};
use qsurf_core::minimize::{
    minimize_multi_phase, minimize_one_phase, minimize_two_phase, PhaseSolution, ProblemKind, SolveOptions,
};
use qsurf_core::{Grid, Point, ScalarField};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GConfig, MeasureEntry};
use crate::io::{read_field, write_field};

pub struct Experiment {
    pub grid: Grid,
    pub kind: ProblemKind,
    /// Source measure per phase component: `[μ]`, `[μ⁺, μ⁻]` (both
    /// nonnegative) or `[μ_1..μ_m]`.
    pub measures: Vec<MeasureSpec>,
    pub densities: Vec<ScalarField>,
    pub g: ScalarField,
}

fn point(v: &[f64]) -> Point {
    qsurf_core::grid::point(v)
}

impl Experiment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let grid = cfg.grid.build()?;
        let phases = cfg.measures.iter().map(MeasureEntry::phase).max().unwrap_or(1);
        let two = phases == 1 && cfg.measures.iter().any(|m| m.sign() == Sign::Minus);
        let (kind, count) = match (phases, two) {
            (1, false) => (ProblemKind::OnePhase, 1),
            (1, true) => (ProblemKind::TwoPhase, 2),
            (m, _) => (ProblemKind::MultiPhase, m),
        };
        let mut measures = vec![MeasureSpec::default(); count];
        for m in &cfg.measures {
            // Two-phase sources are stored as nonnegative densities per side.
            let slot = if two { usize::from(m.sign() == Sign::Minus) } else { m.phase() - 1 };
            match m {
                MeasureEntry::Atom { center, mass, mollifier_radius, .. } => {
                    measures[slot].atoms.push(Atom::new(point(center), *mass, *mollifier_radius));
                }
                MeasureEntry::Shell { center, radius, surface_density, mollifier_radius, .. } => {
                    measures[slot].shells.push(Shell::new(point(center), *radius, *surface_density, *mollifier_radius));
                }
            }
        }
        let densities = measures.iter().map(|m| rasterize_measure(m, &grid)).collect::<qsurf_core::Result<Vec<_>>>()?;
        let g = match &cfg.g {
            GConfig::Constant(c) => ScalarField::constant(grid, *c),
            GConfig::Field(p) => {
                let g = read_field(p)?;
                if *g.grid() != grid {
                    bail!("g field {} is not on the configured grid", p.display());
                }
                g
            }
        };
        Ok(Experiment { grid, kind, measures, densities, g })
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<PhaseSolution> {
        let sol = match self.kind {
            ProblemKind::OnePhase => minimize_one_phase(&self.densities[0], &self.g, opts)?,
            ProblemKind::TwoPhase => minimize_two_phase(&self.densities[0], &self.densities[1], &self.g, opts)?,
            ProblemKind::MultiPhase => minimize_multi_phase(&self.densities, &self.g, opts)?,
        };
        Ok(sol)
    }

    /// Bounding box of all source supports.
    pub fn measure_box(&self) -> Option<(Point, Point)> {
        let dim = self.grid.dim();
        self.measures.iter().filter_map(|m| m.bounding_box(dim)).reduce(|(a, b), (c, d)| {
            let mut lo = a;
            let mut hi = b;
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(d[k]);
            }
            (lo, hi)
        })
    }
}

/// `solution.json`: everything in a [`PhaseSolution`] except the fields,
/// which are stored next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub kind: ProblemKind,
    pub fields: Vec<String>,
    pub barriers: Vec<String>,
    pub energy: EnergyBreakdown,
    pub iterations_used: usize,
    pub converged: bool,
    pub tau: f64,
    pub seed: String,
    pub notes: Vec<String>,
    pub config_hash: String,
}

pub const SOLUTION_FILE: &str = "solution.json";

fn field_names(kind: ProblemKind, m: usize) -> Vec<String> {
    match kind {
        ProblemKind::MultiPhase => (1..=m).map(|i| format!("u_{i}")).collect(),
        _ => vec!["u".into()],
    }
}

/// Writes the fields, barriers, energy log and `solution.json`; returns the
/// artifact names.
pub fn save_solution(dir: &Path, sol: &PhaseSolution, config_hash: &str) -> Result<Vec<String>> {
    let fields = field_names(sol.kind, sol.fields.len());
    let mut artifacts = Vec::new();
    for (name, f) in fields.iter().zip(&sol.fields) {
        write_field(dir, name, f)?;
        artifacts.push(format!("{name}.json"));
    }
    let mut barriers = Vec::new();
    let mut named: Vec<(String, &ScalarField)> = Vec::new();
    if let Some(b) = &sol.barrier_upper {
        named.push(("barrier_upper".into(), b));
    }
    if let Some(b) = &sol.barrier_lower {
        named.push(("barrier_lower".into(), b));
    }
    for (i, b) in sol.phase_barriers.iter().enumerate() {
        named.push((format!("barrier_{}", i + 1), b));
    }
    for (name, b) in named {
        write_field(dir, &name, b)?;
        artifacts.push(format!("{name}.json"));
        barriers.push(name);
    }
    fs::write(dir.join("energy_log.csv"), sol.energy_log_csv())?;
    artifacts.push("energy_log.csv".into());
    let record = SolutionRecord {
        kind: sol.kind,
        fields,
        barriers,
        energy: sol.energy,
        iterations_used: sol.iterations_used,
        converged: sol.converged,
        tau: sol.tau,
        seed: sol.seed.clone(),
        notes: sol.notes.clone(),
        config_hash: config_hash.to_string(),
    };
    fs::write(dir.join(SOLUTION_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
    artifacts.push(SOLUTION_FILE.into());
    Ok(artifacts)
}

/// Reads a solution written by [`save_solution`]. The energy log is not
/// restored.
pub fn load_solution(dir: &Path) -> Result<(PhaseSolution, SolutionRecord)> {
    let path = dir.join(SOLUTION_FILE);
    if !path.exists() {
        bail!("missing input: {} not found; run `qsurf solve` first", path.display());
    }
    let record: SolutionRecord = serde_json::from_str(&fs::read_to_string(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let read = |name: &str| read_field(&dir.join(format!("{name}.json")));
    let fields = record.fields.iter().map(|n| read(n)).collect::<Result<Vec<_>>>()?;
    let mut sol = PhaseSolution {
        kind: record.kind,
        fields,
        energy: record.energy,
        iterations_used: record.iterations_used,
        converged: record.converged,
        barrier_upper: None,
        barrier_lower: None,
        phase_barriers: Vec::new(),
        energy_log: Vec::new(),
        tau: record.tau,
        seed: record.seed.clone(),
        extremal: None,
        notes: record.notes.clone(),
    };
    for name in &record.barriers {
        let f = read(name)?;
        match name.as_str() {
            "barrier_upper" => sol.barrier_upper = Some(f),
            "barrier_lower" => sol.barrier_lower = Some(f),
            _ => sol.phase_barriers.push(f),
        }
    }
    Ok((sol, record))
}
