//! Scenario files: TOML blocks for grid, market, jumps, population, claim,
//! solver, verification and output, validated all at once.

use std::path::{Path, PathBuf};

use jumpmfg::basis::{IntensityForm, JumpSpec, MarkAtom, TimeGrid};
use jumpmfg::claim::ClaimSpec;
use jumpmfg::equilibrium::SolverConfig;
use jumpmfg::market::MarketSpec;
use jumpmfg::oracle::ThetaGrid;
use jumpmfg::types::{Law, TypeLaw};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: invalid scenario:\n  - {}", .errors.join("\n  - "))]
    Invalid { path: PathBuf, errors: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpBlock {
    pub c_nu: f64,
    pub zeta: IntensityForm,
    #[serde(default)]
    pub atoms: Vec<MarkAtom>,
}

impl Default for JumpBlock {
    fn default() -> Self {
        Self { c_nu: 0.0, zeta: IntensityForm::Constant { value: 0.0 }, atoms: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationBlock {
    /// Number of independent common-noise paths.
    pub common_paths: usize,
    /// Agents per common path (M).
    pub agents: usize,
    pub x0: Law,
    pub alpha: Law,
    pub rho: Law,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Compensator,
    ClosedForm,
    Identity,
    MeasureChange,
    Projection,
    FixedPoint,
    Degeneracy,
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Compensator,
        Suite::ClosedForm,
        Suite::Identity,
        Suite::MeasureChange,
        Suite::Projection,
        Suite::FixedPoint,
        Suite::Degeneracy,
        Suite::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Compensator => "compensator",
            Suite::ClosedForm => "closed-form",
            Suite::Identity => "identity",
            Suite::MeasureChange => "measure-change",
            Suite::Projection => "projection",
            Suite::FixedPoint => "fixed-point",
            Suite::Degeneracy => "degeneracy",
            Suite::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_step: f64,
}

impl OracleBlock {
    pub fn theta_grid(&self) -> ThetaGrid {
        ThetaGrid { min: self.theta_min, max: self.theta_max, step: self.theta_step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationBlock {
    /// Suites run by `verify`; empty means every applicable suite.
    pub suites: Vec<Suite>,
    /// Paths simulated under the tilted measure for the reweighting check.
    pub tilted_paths: usize,
    pub oracle: Option<OracleBlock>,
}

impl Default for VerificationBlock {
    fn default() -> Self {
        Self { suites: Vec::new(), tilted_paths: 20_000, oracle: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Common paths whose per-agent series are written to CSV.
    pub export_common_paths: usize,
    /// Agents per exported common path.
    pub export_agents: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { export_common_paths: 4, export_agents: 4 }
    }
}

fn default_seed() -> u64 {
    1
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub grid: GridBlock,
    pub market: MarketSpec,
    #[serde(default)]
    pub jumps: JumpBlock,
    pub population: PopulationBlock,
    #[serde(default = "zero_claim")]
    pub claim: ClaimSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verification: VerificationBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn zero_claim() -> ClaimSpec {
    ClaimSpec::Zero
}

/// A validated scenario with its derived objects.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub grid: TimeGrid,
    pub spec: JumpSpec,
    pub law: TypeLaw,
}

/// Largest running count at which zeta is probed during validation.
const ZETA_PROBE_COUNT: u32 = 16;

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self, Vec<String>> {
        let mut errs = Vec::new();
        let grid = TimeGrid::new(file.grid.horizon, file.grid.steps).map_err(|e| errs.push(e.to_string())).ok();
        if let Err(e) = file.market.validate() {
            errs.push(e.to_string());
        }
        let spec = JumpSpec::from_form(file.jumps.atoms.clone(), file.jumps.c_nu, file.jumps.zeta.clone())
            .map_err(|e| errs.push(e.to_string()))
            .ok();
        if let (Some(g), Some(s)) = (&grid, &spec) {
            if let Err(e) = s.check_by_sampling(g, file.market.d, ZETA_PROBE_COUNT) {
                errs.push(e.to_string());
            }
        }
        let law = TypeLaw { x0: file.population.x0.clone(), alpha: file.population.alpha.clone(), rho: file.population.rho.clone() };
        errs.extend(law.validate().into_iter().map(|e| e.to_string()));
        if file.population.common_paths == 0 || file.population.agents == 0 {
            errs.push("population needs at least one common path and one agent".into());
        }
        if let Some(s) = &spec {
            if let Err(e) = file.claim.validate(s) {
                errs.push(e.to_string());
            }
        }
        if let Some(o) = &file.verification.oracle {
            if !(o.theta_step > 0.0 && o.theta_max > o.theta_min) {
                errs.push("oracle strategy grid needs theta_step > 0 and theta_max > theta_min".into());
            }
        }
        if file.solver.degree == 0 || file.solver.degree > 4 {
            errs.push(format!("regression degree {} outside 1..=4", file.solver.degree));
        }
        match (errs.is_empty(), grid, spec) {
            (true, Some(grid), Some(spec)) => Ok(Self { file, grid, spec, law }),
            _ => Err(errs),
        }
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    /// Suites to run under `verify`.
    pub fn suites(&self) -> Vec<Suite> {
        if self.file.verification.suites.is_empty() {
            Suite::ALL.to_vec()
        } else {
            self.file.verification.suites.clone()
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ScenarioError::Parse { path: path.to_path_buf(), line, column, message: e.message().to_string() }
    })?;
    Scenario::from_file(file).map_err(|errors| ScenarioError::Invalid { path: path.to_path_buf(), errors })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
[grid]
horizon = 1.0
steps = 4
[market]
d = 1
s0 = [1.0]
phi_bound = 1.0
phi = { form = "constant", value = [0.2] }
sigma = { form = "constant", matrix = [[0.3]] }
[jumps]
c_nu = 2.0
zeta = { form = "constant", value = 1.0 }
atoms = [{ mark = [0.1], weight = 0.5, split = "common" }]
[population]
common_paths = 10
agents = 4
x0 = { law = "constant", value = 0.0 }
alpha = { law = "constant", value = 2.0 }
rho = { law = "constant", value = 0.5 }
"#;

    fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        parse_scenario(text, Path::new("mem.toml"))
    }

    #[test]
    fn base_parses_with_defaults() {
        let s = parse(BASE).unwrap();
        assert_eq!(s.file.claim, ClaimSpec::Zero);
        assert_eq!(s.suites().len(), Suite::ALL.len());
        assert_eq!(s.file.seed, 1);
    }

    #[test]
    fn unit_competition_weight_rejected() {
        let text = BASE.replace("rho = { law = \"constant\", value = 0.5 }", "rho = { law = \"constant\", value = 1.0 }");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("E[rho] != 1"), "{err}");
    }

    #[test]
    fn zeta_above_bound_rejected() {
        let text = BASE.replace("zeta = { form = \"constant\", value = 1.0 }", "zeta = { form = \"constant\", value = 5.0 }");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("0 <= zeta <= c_nu"), "{err}");
    }

    #[test]
    fn all_failures_reported_together() {
        let text = BASE
            .replace("value = 1.0 }\natoms", "value = 5.0 }\natoms")
            .replace("value = 2.0 }", "value = 0.0 }")
            .replace("value = 0.5 }", "value = 1.0 }");
        match parse(&text).unwrap_err() {
            ScenarioError::Invalid { errors, .. } => assert_eq!(errors.len(), 3, "{errors:?}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn parse_error_has_position() {
        let text = BASE.replace("steps = 4", "steps = \"four\"");
        match parse(&text).unwrap_err() {
            ScenarioError::Parse { line, column, .. } => {
                assert_eq!(line, 5);
                assert!(column > 1);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unbounded_claim_rejected() {
        let text = format!("{BASE}\n[claim]\nform = \"linear\"\nslope = 1.0\n");
        assert!(matches!(parse(&text), Err(ScenarioError::Invalid { .. })));
    }
}
