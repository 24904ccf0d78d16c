//! WebAssembly bindings for the browser demo. Every export takes and returns JSON
//! so the page needs no generated type glue.

use jumpmfg::basis::{IntensityForm, JumpSpec, MarkAtom, PathBundle, Split, TimeGrid};
use jumpmfg::claim::{AtomSelector, ClaimSpec};
use jumpmfg::equilibrium::{solve_mfg, Backend, Pipeline, SolverConfig};
use jumpmfg::jbsde::{solve_lattice, GeneratorSpec, Lattice, SolutionField};
use jumpmfg::market::{price_path, MarketSpec};
use jumpmfg::oracle::closed_form_merton;
use jumpmfg::projection::PopulationBundle;
use jumpmfg::types::{Law, TypeLaw};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use wasm_bindgen::prelude::*;

/// Lattice node budget for in-browser solves.
const MAX_NODES: usize = 400_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct EquilibriumInput {
    pub phi: f64,
    pub sigma: f64,
    pub alpha: Vec<f64>,
    pub alpha_weights: Vec<f64>,
    pub rho: Vec<f64>,
    pub rho_weights: Vec<f64>,
    /// Loss per common jump and its arrival rate.
    pub mark: f64,
    pub rate: f64,
    /// Stop-loss retention and cap on common losses; `cap = 0` gives the zero claim.
    pub retention: f64,
    pub cap: f64,
    pub steps: usize,
    pub common_paths: usize,
    pub agents: usize,
    pub seed: u64,
}

impl Default for EquilibriumInput {
    fn default() -> Self {
        Self {
            phi: 0.2,
            sigma: 0.3,
            alpha: vec![1.0, 4.0],
            alpha_weights: vec![0.5, 0.5],
            rho: vec![0.5],
            rho_weights: vec![1.0],
            mark: 0.1,
            rate: 1.0,
            retention: 0.0,
            cap: 0.0,
            steps: 12,
            common_paths: 200,
            agents: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassRow {
    pub alpha: f64,
    pub rho: f64,
    pub y0: f64,
    pub theta_mean: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Constant-coefficient formula for the zero claim, shown for reference.
    pub theta_zero_claim: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumOutput {
    pub backend: &'static str,
    pub classes: Vec<ClassRow>,
    pub e_rho: f64,
    pub e_inv_alpha: f64,
    /// max over common paths of |Pi(X_T - B) - formula|, and the same in standard errors.
    pub fixed_point_residual: f64,
    pub fixed_point_residual_se: f64,
}

fn one_atom(mark: f64, rate: f64, split: Split) -> Result<JumpSpec, String> {
    if rate <= 0.0 {
        return Ok(JumpSpec::empty());
    }
    let atom = MarkAtom { mark: vec![mark], weight: rate, split };
    JumpSpec::from_form(vec![atom], 1.0, IntensityForm::Constant { value: 1.0 }).map_err(|e| e.to_string())
}

fn discrete(values: &[f64], weights: &[f64]) -> Law {
    if values.len() == 1 {
        Law::Constant { value: values[0] }
    } else {
        Law::Discrete { values: values.to_vec(), weights: weights.to_vec() }
    }
}

pub fn equilibrium_json(input: &str) -> Result<String, String> {
    let inp: EquilibriumInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(1.0, inp.steps).map_err(|e| e.to_string())?;
    let market = MarketSpec::constant_1d(inp.phi, inp.sigma);
    market.validate().map_err(|e| e.to_string())?;
    let spec = one_atom(inp.mark, inp.rate, Split::Common)?;
    let claim = if inp.cap > 0.0 {
        ClaimSpec::StopLoss { k1: inp.retention, k2: inp.cap, atoms: AtomSelector::Common, coordinate: 0 }
    } else {
        ClaimSpec::Zero
    };
    let law = TypeLaw {
        x0: Law::Constant { value: 0.0 },
        alpha: discrete(&inp.alpha, &inp.alpha_weights),
        rho: discrete(&inp.rho, &inp.rho_weights),
    };
    if let Some(e) = law.validate().first() {
        return Err(e.to_string());
    }
    let pop = PopulationBundle::simulate(grid, 1, &spec, inp.common_paths, inp.agents, &law, inp.seed).map_err(|e| e.to_string())?;
    // With a claim the tilted intensity depends on the state and the auxiliary
    // lattice stops recombining, so claims go to the regression backend.
    let backend = if claim == ClaimSpec::Zero { Backend::Lattice } else { Backend::Lsmc };
    let solver = SolverConfig { backend, max_lattice_nodes: MAX_NODES, aux_paths: 4000, ..SolverConfig::default() };
    let pl = Pipeline::new(&market, &spec, &claim, &pop, &solver, inp.seed).map_err(|e| e.to_string())?;
    let res = solve_mfg(&pl).map_err(|e| e.to_string())?;
    let formula = closed_form_merton(&[inp.phi], &law.alpha, &law.rho).ok();
    let classes = res
        .class_theta
        .iter()
        .map(|c| ClassRow {
            alpha: c.alpha,
            rho: c.rho,
            y0: c.y0,
            theta_mean: c.theta_mean,
            theta_min: c.theta_min,
            theta_max: c.theta_max,
            theta_zero_claim: formula
                .as_ref()
                .and_then(|f| f.iter().find(|t| t.alpha == c.alpha && t.rho == c.rho))
                .map(|t| t.theta[0]),
        })
        .collect();
    let out = EquilibriumOutput {
        backend: backend.name(),
        classes,
        e_rho: res.e_rho,
        e_inv_alpha: res.e_inv_alpha,
        fixed_point_residual: res.fixed_point.f_max_residual,
        fixed_point_residual_se: res.fixed_point.f_max_z,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PathsInput {
    pub phi: f64,
    pub sigma: f64,
    pub mark: f64,
    pub common_rate: f64,
    pub own_rate: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
}

impl Default for PathsInput {
    fn default() -> Self {
        Self { phi: 0.2, sigma: 0.3, mark: 0.1, common_rate: 2.0, own_rate: 1.0, steps: 100, paths: 8, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplePath {
    pub w: Vec<f64>,
    pub price: Vec<f64>,
    /// Running count of common events per node.
    pub common: Vec<u32>,
    /// Running count of the agent's own events per node.
    pub own: Vec<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathsOutput {
    pub t: Vec<f64>,
    pub paths: Vec<SamplePath>,
}

pub fn sample_paths_json(input: &str) -> Result<String, String> {
    let inp: PathsInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(1.0, inp.steps).map_err(|e| e.to_string())?;
    let market = MarketSpec::constant_1d(inp.phi, inp.sigma);
    market.validate().map_err(|e| e.to_string())?;
    let mut atoms = Vec::new();
    for (rate, split) in [(inp.common_rate, Split::Common), (inp.own_rate, Split::Idiosyncratic)] {
        if rate > 0.0 {
            atoms.push(MarkAtom { mark: vec![inp.mark], weight: rate, split });
        }
    }
    let spec = JumpSpec::from_form(atoms, 1.0, IntensityForm::Constant { value: 1.0 }).map_err(|e| e.to_string())?;
    let bundle = PathBundle::simulate(grid, 1, &spec, inp.paths, 1, inp.seed).map_err(|e| e.to_string())?;
    let common = spec.atoms_with(Split::Common);
    let own = spec.atoms_with(Split::Idiosyncratic);
    let paths = (0..inp.paths)
        .map(|p| {
            let path = bundle.agent_path(p, 0);
            let count = |sel: &[usize], node: usize| sel.iter().map(|a| path.counts_at(node)[*a]).sum();
            SamplePath {
                w: (0..grid.n_nodes()).map(|i| path.w_at(i)[0]).collect(),
                price: price_path(&market, &grid, &path),
                common: (0..grid.n_nodes()).map(|i| count(&common, i)).collect(),
                own: (0..grid.n_nodes()).map(|i| count(&own, i)).collect(),
            }
        })
        .collect();
    serde_json::to_string(&PathsOutput { t: grid.nodes(), paths }).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct TiltInput {
    pub alpha: f64,
    pub mark: f64,
    pub rate: f64,
    pub retention: f64,
    pub cap: f64,
    pub steps: usize,
}

impl Default for TiltInput {
    fn default() -> Self {
        Self { alpha: 2.0, mark: 0.1, rate: 3.0, retention: 0.15, cap: 0.3, steps: 40 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TiltOutput {
    pub t: Vec<f64>,
    pub y0: f64,
    pub rate: f64,
    /// `u[count][cell]`: jump size of Y with `count` events so far; null where unreachable.
    pub u: Vec<Vec<Option<f64>>>,
    /// Tilted arrival rate rate * exp(alpha U), same layout.
    pub tilted: Vec<Vec<Option<f64>>>,
    pub jump_step_weight: f64,
}

/// Jump sizes and the tilted intensity of a stop-loss claim on one common atom.
pub fn stop_loss_tilt_json(input: &str) -> Result<String, String> {
    let inp: TiltInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if !(inp.alpha > 0.0) {
        return Err("risk aversion must be positive".into());
    }
    let grid = TimeGrid::new(1.0, inp.steps).map_err(|e| e.to_string())?;
    let spec = one_atom(inp.mark, inp.rate, Split::Common)?;
    if spec.n_atoms() == 0 {
        return Err("jump rate must be positive".into());
    }
    let claim = ClaimSpec::StopLoss { k1: inp.retention, k2: inp.cap, atoms: AtomSelector::Common, coordinate: 0 };
    claim.validate(&spec).map_err(|e| e.to_string())?;
    let n = grid.n_steps();
    let lattice = Arc::new(Lattice::build(grid, &spec, &vec![0.0; n], MAX_NODES).map_err(|e| e.to_string())?);
    let gen = GeneratorSpec::single_agent(inp.alpha, vec![0.0; n], 1, spec.clone());
    let sol = solve_lattice(&gen, lattice.clone(), &|w: &[f64], c: &[u32]| claim.payoff(&spec, w, c)).map_err(|e| e.to_string())?;
    let mut u = vec![vec![None; n]; n + 1];
    for (i, cell) in sol.u.iter().enumerate() {
        for (j, node) in lattice.layer(i).iter().enumerate() {
            // The claim reads counts only, so U is the same at every Brownian level.
            u[node.counts[0] as usize][i].get_or_insert(cell[j]);
        }
    }
    let tilted = u.iter().map(|row| row.iter().map(|v| v.map(|x| inp.rate * (inp.alpha * x).exp())).collect()).collect();
    let out = TiltOutput { t: grid.nodes()[..n].to_vec(), y0: sol.y0(), rate: inp.rate, u, tilted, jump_step_weight: sol.diagnostics.jump_step_weight };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Equilibrium strategy per type class for a JSON [`EquilibriumInput`].
#[wasm_bindgen]
pub fn equilibrium(input: &str) -> Result<String, JsValue> {
    equilibrium_json(input).map_err(|e| JsValue::from_str(&e))
}

/// Simulated Brownian levels, prices and event counts for a JSON [`PathsInput`].
#[wasm_bindgen]
pub fn sample_paths(input: &str) -> Result<String, JsValue> {
    sample_paths_json(input).map_err(|e| JsValue::from_str(&e))
}

/// Jump sizes and tilted intensity of a stop-loss claim for a JSON [`TiltInput`].
#[wasm_bindgen]
pub fn stop_loss_tilt(input: &str) -> Result<String, JsValue> {
    stop_loss_tilt_json(input).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn equilibrium_defaults_match_zero_claim_formula() {
        let v: Value = serde_json::from_str(&equilibrium_json("{}").unwrap()).unwrap();
        let classes = v["classes"].as_array().unwrap();
        assert_eq!(classes.len(), 2);
        for c in classes {
            let (got, want) = (c["theta_mean"].as_f64().unwrap(), c["theta_zero_claim"].as_f64().unwrap());
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn paths_have_one_value_per_node() {
        let v: Value = serde_json::from_str(&sample_paths_json(r#"{"steps": 20, "paths": 3}"#).unwrap()).unwrap();
        let paths = v["paths"].as_array().unwrap();
        assert_eq!(paths.len(), 3);
        for p in paths {
            assert_eq!(p["w"].as_array().unwrap().len(), 21);
            assert_eq!(p["price"].as_array().unwrap().len(), 21);
            assert_eq!(p["common"][0].as_u64(), Some(0));
        }
    }

    #[test]
    fn stop_loss_tilt_raises_rate_below_the_cap() {
        let out = stop_loss_tilt_json("{}").unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        let rate = v["rate"].as_f64().unwrap();
        // At time 0 nothing has happened, the claim pays only after further losses,
        // so U > 0 and the tilted rate exceeds the original one.
        let first = v["tilted"][0][0].as_f64().unwrap();
        assert!(first > rate, "{first} <= {rate}");
        // Once the cap is reached the claim no longer moves.
        let mut capped = v["u"][6].as_array().unwrap().iter().filter_map(Value::as_f64);
        assert!(capped.all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn bad_input_is_an_error_message() {
        assert!(equilibrium_json(r#"{"rho": [1.0]}"#).unwrap_err().contains("E[rho] != 1"));
        assert!(stop_loss_tilt_json(r#"{"alpha": 0}"#).is_err());
        assert!(sample_paths_json("not json").is_err());
    }

    #[test]
    fn stop_loss_equilibrium_runs_on_regression_backend() {
        let out = equilibrium_json(r#"{"cap": 0.3, "retention": 0.1, "common_paths": 100, "agents": 10}"#).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["backend"], "lsmc");
        assert!(v["classes"].as_array().unwrap().iter().all(|c| c["theta_mean"].as_f64().unwrap().is_finite()));
    }
}
