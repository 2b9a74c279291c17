//! Experiment configuration: JSON with unknown keys rejected, `key=value`
//! overrides applied before deserialization, and validation that reports
//! every violation at once.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use qsurf_core::measure::Sign;
use qsurf_core::minimize::SolveOptions;
use qsurf_core::Grid;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub measures: Vec<MeasureEntry>,
    #[serde(default)]
    pub g: GConfig,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("qsurf-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub origin: Vec<f64>,
    pub h: f64,
    pub cells: Vec<usize>,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Ok(Grid::new(self.dim, &self.origin, self.h, &self.cells)?)
    }
}

/// A mollified atom or a surface shell feeding phase `phase` (from 1).
/// One phase with both signs is a two-phase problem; several phases must be
/// positive and form a multi-phase problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureEntry {
    Atom {
        phase: usize,
        center: Vec<f64>,
        mass: f64,
        mollifier_radius: f64,
        #[serde(default)]
        sign: Sign,
    },
    Shell {
        phase: usize,
        center: Vec<f64>,
        radius: f64,
        surface_density: f64,
        mollifier_radius: f64,
        #[serde(default)]
        sign: Sign,
    },
}

impl MeasureEntry {
    pub fn phase(&self) -> usize {
        match self {
            MeasureEntry::Atom { phase, .. } | MeasureEntry::Shell { phase, .. } => *phase,
        }
    }

    pub fn sign(&self) -> Sign {
        match self {
            MeasureEntry::Atom { sign, .. } | MeasureEntry::Shell { sign, .. } => *sign,
        }
    }

    fn center(&self) -> &[f64] {
        match self {
            MeasureEntry::Atom { center, .. } | MeasureEntry::Shell { center, .. } => center,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GConfig {
    Constant(f64),
    /// Header of a field file on the configured grid.
    Field(PathBuf),
}

impl Default for GConfig {
    fn default() -> Self {
        GConfig::Constant(1.0)
    }
}

/// Checks run by the subcommands; a check is enabled by its presence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    pub support_inclusion: Option<SupportInclusionCheck>,
    pub symmetry: Option<SymmetryCheck>,
    pub qi: Option<QiCheck>,
    #[serde(default)]
    pub classify: ClassifyOptions,
    pub junctions: Option<JunctionCheck>,
    pub cjk: Option<CjkCheck>,
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
    pub sakai: Option<SakaiCheck>,
    pub reference: Option<ReferenceCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportInclusionCheck {
    pub halo_cells: usize,
}

impl Default for SupportInclusionCheck {
    fn default() -> Self {
        SupportInclusionCheck { halo_cells: 1 }
    }
}

/// Reflection about `{x · plane_normal = plane_offset}` (odd when
/// `antisymmetric`) and asphericity of every support about an axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryCheck {
    pub plane_normal: Vec<f64>,
    #[serde(default)]
    pub plane_offset: f64,
    #[serde(default)]
    pub antisymmetric: bool,
    /// Relative to `max|u|`.
    #[serde(default = "default_reflection_tolerance")]
    pub tolerance: f64,
    pub axis_point: Option<Vec<f64>>,
    pub axis_direction: Option<Vec<f64>>,
    /// Asphericity bound in cells.
    #[serde(default = "default_asphericity_cells")]
    pub asphericity_cells: f64,
}

fn default_reflection_tolerance() -> f64 {
    1e-4
}

fn default_asphericity_cells() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QiCheck {
    /// Exterior kernels in the test set.
    pub kernels: usize,
    /// Bound on `|residual| / scale` for both routes.
    pub tolerance: f64,
    /// Bound on `|residual_contour - residual_green| / scale`.
    pub route_tolerance: f64,
}

impl Default for QiCheck {
    fn default() -> Self {
        QiCheck { kernels: 8, tolerance: 0.05, route_tolerance: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    pub r_class_cells: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { r_class_cells: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JunctionCheck {
    pub r_scan_cells: f64,
}

impl Default for JunctionCheck {
    fn default() -> Self {
        JunctionCheck { r_scan_cells: 4.0 }
    }
}

/// Three-phase product at two-phase boundary samples over decreasing radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CjkCheck {
    pub epsilon: f64,
    pub radii_cells: Vec<f64>,
    /// Use every `stride`-th two-phase element.
    pub stride: usize,
}

impl Default for CjkCheck {
    fn default() -> Self {
        CjkCheck { epsilon: 0.1, radii_cells: vec![16.0, 8.0, 4.0], stride: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "probe", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeSpec {
    Nondegeneracy {
        #[serde(default = "first_phase")]
        phase: usize,
        center: Vec<f64>,
        radii: Vec<f64>,
        d_min: f64,
    },
    Lipschitz {
        #[serde(default = "first_phase")]
        phase: usize,
        center: Vec<f64>,
        radii: Vec<f64>,
    },
    AuxBound {
        #[serde(default = "first_phase")]
        phase: usize,
        center: Vec<f64>,
        rho: f64,
    },
}

fn first_phase() -> usize {
    1
}

impl ProbeSpec {
    pub fn phase(&self) -> usize {
        match self {
            ProbeSpec::Nondegeneracy { phase, .. }
            | ProbeSpec::Lipschitz { phase, .. }
            | ProbeSpec::AuxBound { phase, .. } => *phase,
        }
    }

    fn center(&self) -> &[f64] {
        match self {
            ProbeSpec::Nondegeneracy { center, .. }
            | ProbeSpec::Lipschitz { center, .. }
            | ProbeSpec::AuxBound { center, .. } => center,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SakaiCheck {
    /// Defaults to `max g`.
    pub c_bound: Option<f64>,
    /// Decreasing; empty selects `4h, 3h, 2h`.
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceCheck {
    pub shell_radius: f64,
    pub shell_density: f64,
    pub inner_radius: f64,
    pub cone_resolution: usize,
}

impl Default for ReferenceCheck {
    fn default() -> Self {
        ReferenceCheck { shell_radius: 2.0, shell_density: 3.0, inner_radius: 1.0, cone_resolution: 4096 }
    }
}

/// Reads, overrides, deserializes and validates a configuration.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config_str(&text, overrides, path.parent())
        .with_context(|| format!("in config {}", path.display()))
}

/// [`parse_config`] on a string; relative field paths resolve against
/// `base`.
pub fn parse_config_str(text: &str, overrides: &[String], base: Option<&Path>) -> Result<ExperimentConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| anyhow!("malformed JSON: {e}"))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| anyhow!("{e}"))?;
    if let (GConfig::Field(p), Some(base)) = (&mut cfg.g, base) {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

/// Sets a dotted key, creating intermediate objects. The value is parsed
/// as JSON and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| anyhow!("override `{assignment}` is not key=value"))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!("override key `{key}` has an empty segment");
        }
        let obj = node.as_object_mut().ok_or_else(|| anyhow!("override `{key}`: `{part}` is not inside an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let mut errs: Vec<String> = Vec::new();
    let dim = cfg.grid.dim;
    let grid = match cfg.grid.build() {
        Ok(g) => Some(g),
        Err(e) => {
            errs.push(format!("grid: {e}"));
            None
        }
    };
    let mut phases: Vec<usize> = cfg.measures.iter().map(MeasureEntry::phase).collect();
    phases.sort_unstable();
    phases.dedup();
    if phases.iter().enumerate().any(|(i, &p)| p != i + 1) {
        errs.push(format!("measures: phase indices {phases:?} are not contiguous from 1"));
    }
    for (i, m) in cfg.measures.iter().enumerate() {
        let at = format!("measures[{i}]");
        if m.center().len() != dim {
            errs.push(format!("{at}: center has {} coordinates, grid dimension is {dim}", m.center().len()));
        }
        match m {
            MeasureEntry::Atom { mass, mollifier_radius, .. } => {
                if !(*mass >= 0.0 && mass.is_finite()) {
                    errs.push(format!("{at}: mass must be finite and nonnegative"));
                }
                if !(*mollifier_radius > 0.0) {
                    errs.push(format!("{at}: mollifier_radius must be positive"));
                }
            }
            MeasureEntry::Shell { radius, surface_density, mollifier_radius, .. } => {
                if !(*radius > 0.0) {
                    errs.push(format!("{at}: radius must be positive"));
                }
                if !(*surface_density >= 0.0 && surface_density.is_finite()) {
                    errs.push(format!("{at}: surface_density must be finite and nonnegative"));
                }
                if !(*mollifier_radius > 0.0) {
                    errs.push(format!("{at}: mollifier_radius must be positive"));
                }
            }
        }
        if phases.len() > 1 && m.sign() == Sign::Minus {
            errs.push(format!("{at}: multi-phase measures must be positive (use signs within phase 1 for two phases)"));
        }
    }
    match &cfg.g {
        GConfig::Constant(c) => {
            if !(*c > 0.0 && c.is_finite()) {
                errs.push("g: constant must be positive".into());
            }
        }
        GConfig::Field(p) => {
            if !p.exists() {
                errs.push(format!("g: field file {} does not exist", p.display()));
            } else if let (Ok(h), Some(grid)) = (crate::io::read_header(p), grid) {
                if h.grid().ok() != Some(grid) {
                    errs.push(format!("g: field {} is not on the configured grid", p.display()));
                }
            }
        }
    }
    if let Err(e) = cfg.solve.validate() {
        errs.push(format!("solve: {e}"));
    }
    let c = &cfg.checks;
    if let Some(s) = &c.symmetry {
        if s.plane_normal.len() != dim {
            errs.push("checks.symmetry: plane_normal must have one entry per dimension".into());
        }
        if s.axis_point.is_some() != s.axis_direction.is_some() {
            errs.push("checks.symmetry: axis_point and axis_direction go together".into());
        }
        for v in [&s.axis_point, &s.axis_direction].into_iter().flatten() {
            if v.len() != dim {
                errs.push("checks.symmetry: axis vectors must have one entry per dimension".into());
            }
        }
    }
    if let Some(q) = &c.qi {
        if q.kernels == 0 {
            errs.push("checks.qi: kernels must be at least 1".into());
        }
    }
    if !(c.classify.r_class_cells > 0.0) {
        errs.push("checks.classify: r_class_cells must be positive".into());
    }
    if let Some(k) = &c.cjk {
        if k.radii_cells.is_empty() || k.radii_cells.windows(2).any(|w| w[1] >= w[0]) {
            errs.push("checks.cjk: radii_cells must be nonempty and decreasing".into());
        }
        if k.stride == 0 {
            errs.push("checks.cjk: stride must be at least 1".into());
        }
    }
    if let Some(s) = &c.sakai {
        if s.radii.windows(2).any(|w| w[1] >= w[0]) {
            errs.push("checks.sakai: radii must be decreasing".into());
        }
    }
    let count = phases.len().max(1);
    for (i, p) in c.probes.iter().enumerate() {
        if p.center().len() != dim {
            errs.push(format!("checks.probes[{i}]: center must have {dim} coordinates"));
        }
        let limit = if count == 1 && cfg.measures.iter().any(|m| m.sign() == Sign::Minus) { 2 } else { count };
        if p.phase() == 0 || p.phase() > limit {
            errs.push(format!("checks.probes[{i}]: phase {} out of range 1..={limit}", p.phase()));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        bail!("invalid configuration:\n  - {}", errs.join("\n  - "))
    }
}

/// SHA-256 of the canonical serialization of a configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("configurations serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "grid": {"dim": 2, "origin": [-2, -2], "h": 0.125, "cells": [32, 32]},
        "measures": [{"type": "atom", "phase": 1, "center": [0, 0], "mass": 3.0, "mollifier_radius": 0.25}]
    }"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config_str(MINIMAL, &[], None).unwrap();
        assert_eq!(cfg.grid.cells, vec![32, 32]);
        assert_eq!(cfg.g, GConfig::Constant(1.0));
        assert_eq!(cfg.solve, SolveOptions::default());
        assert_eq!(cfg.checks, ChecksConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let bad = MINIMAL.replace("\"measures\"", "\"mesures\"");
        let e = format!("{:#}", parse_config_str(&bad, &[], None).unwrap_err());
        assert!(e.contains("mesures"), "{e}");
        let nested = MINIMAL.replace("\"mass\"", "\"mas\"");
        let e = format!("{:#}", parse_config_str(&nested, &[], None).unwrap_err());
        assert!(e.contains("mas"), "{e}");
    }

    #[test]
    fn phases_must_be_contiguous() {
        let cfg = r#"{
            "grid": {"dim": 2, "origin": [-2, -2], "h": 0.125, "cells": [32, 32]},
            "measures": [
                {"type": "atom", "phase": 1, "center": [-1, 0], "mass": 1.0, "mollifier_radius": 0.25},
                {"type": "atom", "phase": 3, "center": [1, 0], "mass": 1.0, "mollifier_radius": 0.25}
            ]
        }"#;
        let e = format!("{:#}", parse_config_str(cfg, &[], None).unwrap_err());
        assert!(e.contains("not contiguous"), "{e}");
    }

    #[test]
    fn every_violation_is_listed() {
        let cfg = r#"{
            "grid": {"dim": 2, "origin": [-2, -2], "h": -0.125, "cells": [32, 32]},
            "measures": [{"type": "atom", "phase": 1, "center": [0, 0, 0], "mass": -1.0, "mollifier_radius": 0.25}],
            "g": {"field": "/nonexistent/g.json"}
        }"#;
        let e = format!("{:#}", parse_config_str(cfg, &[], None).unwrap_err());
        for needle in ["grid:", "center has 3", "mass must", "does not exist"] {
            assert!(e.contains(needle), "{needle} missing from {e}");
        }
    }

    #[test]
    fn overrides_set_nested_keys() {
        let cfg = parse_config_str(
            MINIMAL,
            &["solve.max_outer_iters=50".into(), "output=runs/a".into(), "checks.qi.kernels=3".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.solve.max_outer_iters, 50);
        assert_eq!(cfg.output, PathBuf::from("runs/a"));
        assert_eq!(cfg.checks.qi.unwrap().kernels, 3);
        assert!(parse_config_str(MINIMAL, &["grid.h".into()], None).is_err());
        assert!(parse_config_str(MINIMAL, &["grid.h.x=1".into()], None).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config_str(MINIMAL, &[], None).unwrap();
        let b = parse_config_str(MINIMAL, &["solve.max_outer_iters=50".into()], None).unwrap();
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
