//! Scenario files: a TOML schema for the measurand space, unit systems,
//! chart, structure source, observables, integration parameters and
//! requested checks.
//!
//! The schema is the contract; see the bundled `scenarios/` directory for
//! worked examples. Structure sources:
//!
//! - `explicit` — bivector components and Reeb field as expressions;
//! - `contact` — covector components of an exact contact form;
//! - `canonical` — the canonical contact pair on the jet chart of the
//!   declared base chart (the full evaluation chart is then
//!   `(q.., p.., z)` and must be declared as such);
//! - `product` — the product structure of two nested sub-scenarios.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Seed for every sampling operation; recorded in reports.
    #[serde(default)]
    pub seed: Option<u64>,
    pub space: SpaceDecl,
    #[serde(default)]
    pub units: BTreeMap<String, UnitDecl>,
    pub chart: ChartDecl,
    pub structure: StructureDecl,
    #[serde(default)]
    pub observables: BTreeMap<String, ObservableDecl>,
    /// Name of the observable used as the Hamiltonian of the flow.
    #[serde(default)]
    pub hamiltonian: Option<String>,
    #[serde(default)]
    pub integration: Option<IntegrationDecl>,
    #[serde(default)]
    pub checks: Vec<CheckDecl>,
    #[serde(default)]
    pub outputs: Option<OutputsDecl>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDecl {
    pub base: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitDecl {
    pub scales: Vec<f64>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartDecl {
    pub coords: Vec<String>,
    /// Dimension expression per coordinate; empty string = dimensionless.
    #[serde(default)]
    pub dims: Option<Vec<String>>,
    /// Open bounds per coordinate name.
    #[serde(default)]
    pub bounds: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureDecl {
    pub kind: StructureKind,
    /// `explicit`: strictly upper-triangular bivector entries.
    #[serde(default)]
    pub pi: Vec<PiEntry>,
    /// `explicit`: Reeb field components.
    #[serde(default)]
    pub reeb: Option<Vec<String>>,
    /// `contact`: covector components of theta.
    #[serde(default)]
    pub theta: Option<Vec<String>>,
    /// `canonical`: base dimension n; the declared chart must be the jet
    /// chart of its first n coordinates.
    #[serde(default)]
    pub n: Option<usize>,
    /// `product`: nested sub-scenarios.
    #[serde(default)]
    pub first: Option<Box<SubScenarioDecl>>,
    #[serde(default)]
    pub second: Option<Box<SubScenarioDecl>>,
    /// `product`: which component of the fibre-ratio axis to use.
    #[serde(default)]
    pub branch: Option<BranchDecl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchDecl {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Explicit,
    Contact,
    Canonical,
    Product,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiEntry {
    pub i: usize,
    pub j: usize,
    pub expr: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubScenarioDecl {
    pub chart: ChartDecl,
    pub structure: StructureDecl,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableDecl {
    pub expr: String,
    /// Dimension expression over the measurand space base names.
    #[serde(default)]
    pub dim: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationDecl {
    pub x0: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
}

fn default_method() -> String {
    "rk4".to_string()
}

/// One requested certification or check, tagged by kind.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckDecl {
    pub kind: CheckKind,
    pub tol: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// `coisotropy`: coordinate names cutting the surface.
    #[serde(default)]
    pub constraints: Vec<String>,
    /// `coisotropy`: test section expressions on the chart.
    #[serde(default)]
    pub sections: Vec<String>,
    /// `jacobi_map` / `jet_lift_graph`: factor declaration.
    #[serde(default)]
    pub factor: Option<FactorDecl>,
    /// `jet_lift_graph`: multiply the lifted fibre scale by
    /// `(1 + c * <first source coordinate>)` as a negative control.
    #[serde(default)]
    pub perturb_beta: Option<f64>,
}

fn default_samples() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    JacobiPair,
    BracketRelations,
    Coisotropy,
    JacobiMap,
    JetLiftGraph,
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::JacobiPair => "jacobi_pair",
            CheckKind::BracketRelations => "bracket_relations",
            CheckKind::Coisotropy => "coisotropy",
            CheckKind::JacobiMap => "jacobi_map",
            CheckKind::JetLiftGraph => "jet_lift_graph",
        }
    }
}

/// Factor serialization: `{ b = ["expr", ...], beta = "expr",
/// inverse = ["expr", ...]? }`. Inverse expressions are written in the
/// target coordinates, which are the source names suffixed with `2` for
/// self-maps declared in scenarios.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorDecl {
    pub b: Vec<String>,
    pub beta: String,
    #[serde(default)]
    pub inverse: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsDecl {
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub report: Option<String>,
}

/// Loads and structurally validates a scenario file. Cross-reference
/// resolution (names, arities) happens here; dimensional validation and
/// structure construction happen in the runner.
pub fn load_scenario(path: &Path) -> Result<ScenarioFile, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scenario: ScenarioFile = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    validate_references(&scenario)?;
    Ok(scenario)
}

fn validate_chart(chart: &ChartDecl, ctx: &str) -> Result<(), ScenarioError> {
    if chart.coords.is_empty() {
        return Err(ScenarioError::Invalid(format!(
            "{ctx}: chart needs at least one coordinate"
        )));
    }
    if let Some(dims) = &chart.dims {
        if dims.len() != chart.coords.len() {
            return Err(ScenarioError::Invalid(format!(
                "{ctx}: chart declares {} coords but {} dims",
                chart.coords.len(),
                dims.len()
            )));
        }
    }
    for name in chart.bounds.keys() {
        if !chart.coords.contains(name) {
            return Err(ScenarioError::UnresolvedReference(format!(
                "{ctx}: bounds for unknown coordinate `{name}`"
            )));
        }
    }
    Ok(())
}

fn validate_structure(decl: &StructureDecl, chart: &ChartDecl, ctx: &str) -> Result<(), ScenarioError> {
    match decl.kind {
        StructureKind::Explicit => {
            if decl.reeb.is_none() {
                return Err(ScenarioError::UnresolvedReference(format!(
                    "{ctx}: explicit structure needs `reeb`"
                )));
            }
        }
        StructureKind::Contact => {
            if decl.theta.is_none() {
                return Err(ScenarioError::UnresolvedReference(format!(
                    "{ctx}: contact structure needs `theta`"
                )));
            }
        }
        StructureKind::Canonical => {
            let n = decl.n.ok_or_else(|| {
                ScenarioError::UnresolvedReference(format!(
                    "{ctx}: canonical structure needs `n`"
                ))
            })?;
            if chart.coords.len() != 2 * n + 1 {
                return Err(ScenarioError::Invalid(format!(
                    "{ctx}: canonical structure with n = {n} needs a chart of dimension {}, got {}",
                    2 * n + 1,
                    chart.coords.len()
                )));
            }
        }
        StructureKind::Product => {
            let first = decl.first.as_ref().ok_or_else(|| {
                ScenarioError::UnresolvedReference(format!("{ctx}: product needs `first`"))
            })?;
            let second = decl.second.as_ref().ok_or_else(|| {
                ScenarioError::UnresolvedReference(format!("{ctx}: product needs `second`"))
            })?;
            for (sub, name) in [(first, "first"), (second, "second")] {
                if sub.structure.kind == StructureKind::Product {
                    return Err(ScenarioError::Invalid(format!(
                        "{ctx}: nested products are not supported"
                    )));
                }
                validate_chart(&sub.chart, &format!("{ctx}.{name}"))?;
                validate_structure(&sub.structure, &sub.chart, &format!("{ctx}.{name}"))?;
            }
        }
    }
    Ok(())
}

fn validate_references(s: &ScenarioFile) -> Result<(), ScenarioError> {
    validate_chart(&s.chart, "chart")?;
    for (name, u) in &s.units {
        if u.scales.len() != s.space.base.len() || u.names.len() != s.space.base.len() {
            return Err(ScenarioError::Invalid(format!(
                "unit system `{name}` must declare {} scales and names",
                s.space.base.len()
            )));
        }
    }
    validate_structure(&s.structure, &s.chart, "structure")?;
    if let Some(h) = &s.hamiltonian {
        if !s.observables.contains_key(h) {
            return Err(ScenarioError::UnresolvedReference(format!(
                "hamiltonian `{h}` is not a declared observable"
            )));
        }
    }
    if s.integration.is_some() && s.hamiltonian.is_none() {
        return Err(ScenarioError::UnresolvedReference(
            "integration requested without a hamiltonian".into(),
        ));
    }
    if let Some(integ) = &s.integration {
        if integ.x0.len() != s.chart.coords.len() {
            return Err(ScenarioError::Invalid(format!(
                "x0 has {} entries, chart has {} coordinates",
                integ.x0.len(),
                s.chart.coords.len()
            )));
        }
        match integ.method.as_str() {
            "rk4" | "rk45" => {}
            other => {
                return Err(ScenarioError::Invalid(format!(
                    "unknown method `{other}` (expected rk4 or rk45)"
                )))
            }
        }
    }
    for c in &s.checks {
        match c.kind {
            CheckKind::Coisotropy => {
                if c.constraints.is_empty() {
                    return Err(ScenarioError::UnresolvedReference(
                        "coisotropy check needs `constraints`".into(),
                    ));
                }
                for name in &c.constraints {
                    if !s.chart.coords.contains(name) {
                        return Err(ScenarioError::UnresolvedReference(format!(
                            "coisotropy constraint `{name}` is not a chart coordinate"
                        )));
                    }
                }
            }
            CheckKind::JacobiMap | CheckKind::JetLiftGraph => {
                if c.factor.is_none() {
                    return Err(ScenarioError::UnresolvedReference(format!(
                        "{} check needs a `factor`",
                        c.kind.name()
                    )));
                }
            }
            CheckKind::BracketRelations => {
                if s.structure.kind != StructureKind::Canonical {
                    return Err(ScenarioError::Invalid(
                        "bracket_relations requires a canonical structure".into(),
                    ));
                }
            }
            CheckKind::JacobiPair => {}
        }
        if c.kind == CheckKind::JetLiftGraph && s.structure.kind != StructureKind::Canonical {
            return Err(ScenarioError::Invalid(
                "jet_lift_graph requires a canonical structure".into(),
            ));
        }
    }
    Ok(())
}
