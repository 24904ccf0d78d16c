//! Mean-field equilibrium by direct reduction.
//!
//! 1. Solve the single-agent equation with terminal B - rho Pi(B) per type class;
//!    theta^B = Z^B + phi / alpha.
//! 2. Tilt the measure with density E(-int phi dW + int (exp(alpha U^B) - 1) d(mu - nu)).
//! 3. Solve the auxiliary equation under the tilted measure with terminal rho E[x0].
//! 4. Reconstruct Z = Z~ + rho (Pi(Z~) + E[rho] Pi(theta^B)) / (1 - E[rho]) + rho Pi(theta^B)
//!    and the equilibrium strategy theta~ = Z + theta^B.
//!
//! The fixed point is then checked: the mean-field term F = Pi(X_T - B) is
//! recomputed from the simulated wealth, the best response to F is re-solved,
//! and deviations in fixed directions must not raise expected utility.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{AgentPath, JumpSpec, TimeGrid};
use crate::claim::ClaimSpec;
use crate::error::{Error, Result};
use crate::jbsde::{
    solve_lattice, solve_lsmc, BsdeDiagnostics, GeneratorSpec, Lattice, LatticeSolution, LsmcConfig, LsmcSolution, Measure, SolutionField,
};
use crate::market::{dot, MarketSpec};
use crate::measure_change::{doleans_exponential, jump_inputs, simulate_tilted, tilt_compensator};
use crate::projection::{project_pi, project_pi_se, Layout, PopulationBundle, TypeClass};
use crate::stats::{Estimate, FLOAT_SLACK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Lattice,
    Lsmc,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Lattice => "lattice",
            Backend::Lsmc => "lsmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub backend: Backend,
    pub degree: usize,
    pub ridge: f64,
    pub max_lattice_nodes: usize,
    /// u is clamped to +-u_max_scale / alpha inside the driver.
    pub u_max_scale: f64,
    /// Paths simulated under the tilted measure for the auxiliary regression solve.
    pub aux_paths: usize,
    /// Lattice paths used for per-path identity checks (all of them if fewer).
    pub identity_paths: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Lattice,
            degree: 2,
            ridge: 1e-8,
            max_lattice_nodes: 2_000_000,
            u_max_scale: 50.0,
            aux_paths: 20_000,
            identity_paths: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn lsmc(&self) -> LsmcConfig {
        LsmcConfig { degree: self.degree, ridge: self.ridge }
    }
}

/// Everything the pipeline stages share.
pub struct Pipeline<'a> {
    pub grid: TimeGrid,
    pub market: &'a MarketSpec,
    pub spec: &'a JumpSpec,
    pub claim: &'a ClaimSpec,
    pub pop: &'a PopulationBundle,
    pub solver: &'a SolverConfig,
    pub seed: u64,
    /// Population paths, index `common * m + agent`.
    pub paths: Vec<AgentPath>,
    /// phi per cell, `[cell][coordinate]`.
    pub phi: Vec<f64>,
    /// Common driver increments dW_hat per common path, `[common][cell][coordinate]`.
    pub dw_hat: Vec<f64>,
    pub e_rho: f64,
    pub e_x0: f64,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        market: &'a MarketSpec,
        spec: &'a JumpSpec,
        claim: &'a ClaimSpec,
        pop: &'a PopulationBundle,
        solver: &'a SolverConfig,
        seed: u64,
    ) -> Result<Self> {
        let grid = *pop.bundle.grid();
        let phi = market.phi_table(&grid);
        let paths = pop.paths();
        let (d, n, m) = (market.d, grid.n_steps(), pop.m());
        let dt = grid.dt();
        let mut dw_hat = Vec::with_capacity(pop.n_common() * n * d);
        for c in 0..pop.n_common() {
            let p = &paths[c * m];
            dw_hat.extend(p.dw.iter().zip(&phi).map(|(w, f)| w + f * dt));
        }
        Ok(Self {
            grid,
            market,
            spec,
            claim,
            pop,
            solver,
            seed,
            paths,
            phi,
            dw_hat,
            e_rho: pop.law.mean_rho(),
            e_x0: pop.law.mean_x0(),
        })
    }

    pub fn d(&self) -> usize {
        self.market.d
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn layout(&self, dim: usize) -> Layout {
        self.pop.layout(self.n_cells(), dim)
    }

    pub fn class_samples(&self, class: &TypeClass) -> Vec<usize> {
        (0..self.pop.n_common()).flat_map(|c| class.agents.iter().map(move |a| self.pop.index(c, *a))).collect()
    }

    fn u_max(&self, alpha: f64) -> f64 {
        self.solver.u_max_scale / alpha
    }

    /// Per-sample values of a field's Z along the population paths, `[sample][cell][d]`.
    fn z_on_population(&self, fields: &[Arc<dyn SolutionField>], class_of: &[usize]) -> Vec<f64> {
        let (n, d, m) = (self.n_cells(), self.d(), self.pop.m());
        self.paths
            .par_iter()
            .enumerate()
            .flat_map_iter(|(s, p)| {
                let f = &fields[class_of[s % m]];
                let mut out = vec![0.0; n * d];
                for i in 0..n {
                    f.z(i, p.w_at(i), p.counts_at(i), &mut out[i * d..(i + 1) * d]);
                }
                out
            })
            .collect()
    }

    fn wealth_gain(&self, theta: &[f64], s: usize) -> f64 {
        let (n, d, m) = (self.n_cells(), self.d(), self.pop.m());
        let c = s / m;
        let inc = &self.dw_hat[c * n * d..(c + 1) * n * d];
        dot(&theta[s * n * d..(s + 1) * n * d], inc)
    }
}

pub struct ClassReference {
    pub class: TypeClass,
    pub y0: f64,
    /// Standard error of the pathwise Y0 estimate (zero on the lattice).
    pub y0_se: f64,
    pub z_se: f64,
    pub field: Arc<dyn SolutionField>,
    pub diagnostics: BsdeDiagnostics,
    pub lattice: Option<Arc<LatticeSolution>>,
    /// Regression solution over this class's samples (in class order).
    pub lsmc: Option<Arc<LsmcSolution>>,
}

pub struct ReferenceSolution {
    pub classes: Vec<ClassReference>,
    /// Class index per agent slot.
    pub class_of: Vec<usize>,
    /// B per sample.
    pub claim: Vec<f64>,
    /// Pi(B) per common path.
    pub pi_claim: Vec<f64>,
    /// B - rho Pi(B) per sample.
    pub terminal: Vec<f64>,
    /// `[sample][cell][d]`
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
}

fn build_lattice(pl: &Pipeline<'_>, spec: &JumpSpec, drift: &[f64]) -> Result<Arc<Lattice>> {
    if pl.d() != 1 {
        return Err(Error::Unsupported { backend: "lattice", reason: format!("dimension {} (only d = 1)", pl.d()) });
    }
    Ok(Arc::new(Lattice::build(pl.grid, spec, drift, pl.solver.max_lattice_nodes)?))
}

/// Reference single-agent solve for every type class and theta^B on the population.
pub fn solve_reference_single_agent(pl: &Pipeline<'_>) -> Result<ReferenceSolution> {
    let pop = pl.pop;
    let m = pop.m();
    let claim: Vec<f64> = pl
        .paths
        .par_iter()
        .map(|p| pl.claim.checked_payoff(pl.spec, p.terminal_w(), p.terminal_counts()))
        .collect::<Result<_>>()?;
    let pi_claim = project_pi(&claim, pop.layout(1, 1))?;
    let terminal: Vec<f64> = (0..claim.len()).map(|s| claim[s] - pop.agent_of(s).rho * pi_claim[s / m]).collect();

    let classes = pop.classes();
    let mut class_of = vec![0; m];
    for (ci, c) in classes.iter().enumerate() {
        for a in &c.agents {
            class_of[*a] = ci;
        }
    }
    let zero_drift = vec![0.0; pl.n_cells()];
    let mut lattice = None;
    let mut out = Vec::with_capacity(classes.len());
    for class in classes {
        let mut gen = GeneratorSpec::single_agent(class.alpha, pl.phi.clone(), pl.d(), pl.spec.clone());
        gen.u_max = pl.u_max(class.alpha);
        let solved = match pl.solver.backend {
            Backend::Lattice => {
                if class.rho != 0.0 && pl.claim.reads_idiosyncratic(pl.spec) {
                    return Err(Error::Unsupported {
                        backend: "lattice",
                        reason: "E[B | common noise] of a claim on idiosyncratic events (use the lsmc backend)".into(),
                    });
                }
                if lattice.is_none() {
                    lattice = Some(build_lattice(pl, pl.spec, &zero_drift)?);
                }
                let rho = class.rho;
                let claim_fn = |w: &[f64], c: &[u32]| {
                    let b = pl.claim.payoff(pl.spec, w, c);
                    b - rho * b
                };
                let sol = Arc::new(solve_lattice(&gen, lattice.clone().expect("built"), &claim_fn)?);
                ClassReference {
                    y0: sol.y0(),
                    y0_se: 0.0,
                    z_se: 0.0,
                    diagnostics: sol.diagnostics.clone(),
                    field: sol.clone(),
                    lattice: Some(sol),
                    lsmc: None,
                    class,
                }
            }
            Backend::Lsmc => {
                let idx = pl.class_samples(&class);
                let sub: Vec<AgentPath> = idx.iter().map(|s| pl.paths[*s].clone()).collect();
                let term: Vec<f64> = idx.iter().map(|s| terminal[*s]).collect();
                let sol = Arc::new(solve_lsmc(&gen, &sub, &term, &Measure::Physical, &pl.grid, &pl.solver.lsmc())?);
                ClassReference {
                    y0: sol.y0,
                    y0_se: sol.y0_pathwise.se,
                    z_se: sol.z_se.iter().cloned().fold(0.0, f64::max),
                    diagnostics: sol.diagnostics.clone(),
                    field: sol.clone(),
                    lattice: None,
                    lsmc: Some(sol),
                    class,
                }
            }
        };
        out.push(solved);
    }
    let fields: Vec<Arc<dyn SolutionField>> = out.iter().map(|c| c.field.clone()).collect();
    let z = pl.z_on_population(&fields, &class_of);
    let (n, d) = (pl.n_cells(), pl.d());
    let theta: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(j, zv)| {
            let s = j / (n * d);
            let cell_coord = j % (n * d);
            zv + pl.phi[cell_coord] / pop.agent_of(s).alpha
        })
        .collect();
    Ok(ReferenceSolution { classes: out, class_of, claim, pi_claim, terminal, z, theta })
}

/// Terminal density of the tilted measure per population sample.
pub fn population_densities(pl: &Pipeline<'_>, reference: &ReferenceSolution) -> Result<Vec<f64>> {
    let m = pl.pop.m();
    pl.paths
        .par_iter()
        .enumerate()
        .map(|(s, p)| {
            let cls = &reference.classes[reference.class_of[s % m]];
            let (u, rates) = jump_inputs(p, cls.field.as_ref(), pl.spec, &pl.grid)?;
            Ok(doleans_exponential(p, &pl.phi, &u, &rates, cls.class.alpha, &pl.grid).terminal)
        })
        .collect()
}

pub struct ClassAuxiliary {
    pub y0: f64,
    pub y0_se: f64,
    pub z_se: f64,
    pub c_hat: f64,
    pub field: Arc<dyn SolutionField>,
    pub diagnostics: BsdeDiagnostics,
}

pub struct AuxiliarySolution {
    pub classes: Vec<ClassAuxiliary>,
    /// Z~ on the population, `[sample][cell][d]`.
    pub z: Vec<f64>,
}

/// Auxiliary equation under the tilted measure, terminal rho E[x0], per class.
pub fn solve_auxiliary(pl: &Pipeline<'_>, reference: &ReferenceSolution) -> Result<AuxiliarySolution> {
    let n = pl.n_cells();
    let mut out = Vec::with_capacity(reference.classes.len());
    for (ci, cls) in reference.classes.iter().enumerate() {
        let alpha = cls.class.alpha;
        let tilted = tilt_compensator(pl.spec, alpha, cls.field.clone())?;
        let mut gen = GeneratorSpec::auxiliary(alpha, pl.d(), n, tilted.clone());
        gen.u_max = pl.u_max(alpha);
        let target = cls.class.rho * pl.e_x0;
        let c_hat = tilted.c_nu();
        let aux = match pl.solver.backend {
            Backend::Lattice => {
                let lat = build_lattice(pl, &tilted, &pl.phi)?;
                let sol = solve_lattice(&gen, lat, &|_, _| target)?;
                ClassAuxiliary { y0: sol.y0(), y0_se: 0.0, z_se: 0.0, c_hat, diagnostics: sol.diagnostics.clone(), field: Arc::new(sol) }
            }
            Backend::Lsmc => {
                let seed = pl.seed ^ ((ci as u64 + 1) << 40);
                let paths = simulate_tilted(&pl.grid, &tilted, &pl.phi, pl.d(), pl.solver.aux_paths, seed)?;
                let term = vec![target; paths.len()];
                let sol = solve_lsmc(&gen, &paths, &term, &Measure::Tilted { phi: pl.phi.clone() }, &pl.grid, &pl.solver.lsmc())?;
                ClassAuxiliary {
                    y0: sol.y0,
                    y0_se: sol.y0_pathwise.se,
                    z_se: sol.z_se.iter().cloned().fold(0.0, f64::max),
                    c_hat,
                    diagnostics: sol.diagnostics.clone(),
                    field: Arc::new(sol),
                }
            }
        };
        out.push(aux);
    }
    let fields: Vec<Arc<dyn SolutionField>> = out.iter().map(|c| c.field.clone()).collect();
    let z = pl.z_on_population(&fields, &reference.class_of);
    Ok(AuxiliarySolution { classes: out, z })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    /// `[sample][cell][d]`
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
    /// Z~ - (Z - rho Pi(Z + theta^B)), `[sample][cell][d]`.
    pub residual: Vec<f64>,
    /// |rho| times the standard error of Pi(theta~) at the residual's (path, cell).
    pub tolerance: Vec<f64>,
    pub max_residual: f64,
    pub within_tolerance: bool,
}

/// Z and theta~ from Z~ and theta^B; `rho` per agent slot.
pub fn reconstruct_equilibrium(z_tilde: &[f64], theta_b: &[f64], rho: &[f64], layout: Layout, e_rho: f64) -> Result<Reconstruction> {
    if (1.0 - e_rho).abs() < 1e-12 {
        return Err(Error::SingularInteraction);
    }
    let b = layout.n_cells * layout.dim;
    let pi_zt = project_pi(z_tilde, layout)?;
    let pi_tb = project_pi(theta_b, layout)?;
    let mut z = vec![0.0; z_tilde.len()];
    for (j, zj) in z.iter_mut().enumerate() {
        let s = j / b;
        let (c, a, cc) = (s / layout.m, s % layout.m, j % b);
        let pz = pi_zt[c * b + cc];
        let pt = pi_tb[c * b + cc];
        *zj = z_tilde[j] + rho[a] * (pz + e_rho * pt) / (1.0 - e_rho) + rho[a] * pt;
    }
    let theta: Vec<f64> = z.iter().zip(theta_b).map(|(a, b)| a + b).collect();
    let pi_th = project_pi(&theta, layout)?;
    let se_th = project_pi_se(&theta, layout)?;
    let mut residual = vec![0.0; z.len()];
    let mut tolerance = vec![0.0; z.len()];
    let mut ok = true;
    let mut max_residual: f64 = 0.0;
    for j in 0..z.len() {
        let s = j / b;
        let (c, a, cc) = (s / layout.m, s % layout.m, j % b);
        residual[j] = z_tilde[j] - (z[j] - rho[a] * pi_th[c * b + cc]);
        tolerance[j] = rho[a].abs() * se_th[c * b + cc];
        let slack = FLOAT_SLACK * (1.0 + z[j].abs() + theta[j].abs());
        ok &= residual[j].abs() <= tolerance[j] + slack;
        max_residual = max_residual.max(residual[j].abs());
    }
    Ok(Reconstruction { z, theta, residual, tolerance, max_residual, within_tolerance: ok })
}

/// A fixed perturbation direction h(cell, path).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Constant,
    TimeRamp,
    FirstHalf,
    TanhBrownian,
    AfterCommonJump,
    AfterOwnJump,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Constant,
        Direction::TimeRamp,
        Direction::FirstHalf,
        Direction::TanhBrownian,
        Direction::AfterCommonJump,
        Direction::AfterOwnJump,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Direction::Constant => "constant",
            Direction::TimeRamp => "time-ramp",
            Direction::FirstHalf => "first-half",
            Direction::TanhBrownian => "tanh-brownian",
            Direction::AfterCommonJump => "after-common-jump",
            Direction::AfterOwnJump => "after-own-jump",
        }
    }

    fn value(&self, grid: &TimeGrid, spec: &JumpSpec, path: &AgentPath, cell: usize) -> f64 {
        let t = grid.node(cell);
        let counted = |split| -> u32 {
            spec.atoms().iter().zip(path.counts_at(cell)).filter(|(a, _)| a.split == split).map(|(_, n)| *n).sum()
        };
        match self {
            Direction::Constant => 1.0,
            Direction::TimeRamp => t / grid.horizon(),
            Direction::FirstHalf => (t < 0.5 * grid.horizon()) as u8 as f64,
            Direction::TanhBrownian => path.w_at(cell)[0].tanh(),
            Direction::AfterCommonJump => (counted(crate::basis::Split::Common) >= 1) as u8 as f64,
            Direction::AfterOwnJump => (counted(crate::basis::Split::Idiosyncratic) >= 1) as u8 as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationResult {
    pub direction: Direction,
    pub epsilon: f64,
    /// Mean utility change from deviating, clustered by common path.
    pub gain: Estimate,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueCheck {
    pub alpha: f64,
    pub rho: f64,
    /// Monte Carlo E[exp(-alpha (int theta^B dW_hat - xi))].
    pub simulated: Estimate,
    /// exp(alpha Y0^B).
    pub formula: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    /// Pi(X_T - B) per common path.
    pub f_direct: Vec<f64>,
    /// E[x0] + int Pi(theta~) dW_hat - Pi(B) per common path.
    pub f_formula: Vec<f64>,
    /// Standard error of Pi(X_T - B) per common path.
    pub f_se: Vec<f64>,
    pub f_max_residual: f64,
    /// max over paths of |residual| / se.
    pub f_max_z: f64,
    /// sum |theta~ - Z' - phi/alpha|^2 dt with Z' from the best response to F.
    pub exponent: Estimate,
    pub exponent_max: f64,
    pub deviations: Vec<DeviationResult>,
    pub value_checks: Vec<ValueCheck>,
}

pub const DEVIATION_EPSILONS: [f64; 4] = [-0.1, -0.05, 0.05, 0.1];

pub fn fixed_point_residual(
    pl: &Pipeline<'_>,
    reference: &ReferenceSolution,
    recon: &Reconstruction,
    wealth_terminal: &[f64],
) -> Result<FixedPointReport> {
    let pop = pl.pop;
    let (n, d, m) = (pl.n_cells(), pl.d(), pop.m());
    let dt = pl.grid.dt();
    let net: Vec<f64> = wealth_terminal.iter().zip(&reference.claim).map(|(x, b)| x - b).collect();
    let l1 = pop.layout(1, 1);
    let f_direct = project_pi(&net, l1)?;
    let f_se = project_pi_se(&net, l1)?;
    let pi_theta = project_pi(&recon.theta, pl.layout(d))?;
    let f_formula: Vec<f64> = (0..pop.n_common())
        .map(|c| pl.e_x0 + dot(&pi_theta[c * n * d..(c + 1) * n * d], &pl.dw_hat[c * n * d..(c + 1) * n * d]) - reference.pi_claim[c])
        .collect();
    let mut f_max_residual: f64 = 0.0;
    let mut f_max_z: f64 = 0.0;
    for c in 0..pop.n_common() {
        let r = (f_formula[c] - f_direct[c]).abs();
        f_max_residual = f_max_residual.max(r);
        let slack = FLOAT_SLACK * (1.0 + f_direct[c].abs());
        let z = if r <= slack { 0.0 } else if f_se[c] > 0.0 { r / f_se[c] } else { f64::INFINITY };
        f_max_z = f_max_z.max(z);
    }

    // Best response to F: terminal xi' = B - rho Pi(B) + rho F.
    let xi_prime: Vec<f64> = (0..net.len()).map(|s| reference.terminal[s] + pop.agent_of(s).rho * f_direct[s / m]).collect();
    let mut z_prime = vec![0.0; recon.theta.len()];
    for cls in &reference.classes {
        let class = &cls.class;
        let mut gen = GeneratorSpec::single_agent(class.alpha, pl.phi.clone(), d, pl.spec.clone());
        gen.u_max = pl.u_max(class.alpha);
        let field: Arc<dyn SolutionField> = match (pl.solver.backend, &cls.lattice) {
            (Backend::Lattice, Some(sol)) if class.rho == 0.0 => {
                let claim_fn = |w: &[f64], c: &[u32]| pl.claim.payoff(pl.spec, w, c);
                Arc::new(solve_lattice(&gen, sol.lattice().clone(), &claim_fn)?)
            }
            _ => {
                let idx = pl.class_samples(class);
                let sub: Vec<AgentPath> = idx.iter().map(|s| pl.paths[*s].clone()).collect();
                let term: Vec<f64> = idx.iter().map(|s| xi_prime[*s]).collect();
                Arc::new(solve_lsmc(&gen, &sub, &term, &Measure::Physical, &pl.grid, &pl.solver.lsmc())?)
            }
        };
        for s in pl.class_samples(class) {
            let p = &pl.paths[s];
            for i in 0..n {
                field.z(i, p.w_at(i), p.counts_at(i), &mut z_prime[(s * n + i) * d..(s * n + i + 1) * d]);
            }
        }
    }
    let exps: Vec<f64> = (0..net.len())
        .map(|s| {
            let alpha = pop.agent_of(s).alpha;
            (0..n * d)
                .map(|j| {
                    let g = recon.theta[s * n * d + j] - z_prime[s * n * d + j] - pl.phi[j] / alpha;
                    g * g * dt
                })
                .sum()
        })
        .collect();
    let exponent = Estimate::from_samples(&exps);
    let exponent_max = exps.iter().cloned().fold(0.0, f64::max);

    // Deviation test against the fixed F.
    let utility = |s: usize, x: f64| -> f64 { -(-pop.agent_of(s).alpha * (x - xi_prime[s])).exp() };
    let base: Vec<f64> = (0..net.len()).map(|s| utility(s, wealth_terminal[s])).collect();
    let mut deviations = Vec::new();
    for dir in Direction::ALL {
        let shift: Vec<f64> = (0..net.len())
            .into_par_iter()
            .map(|s| {
                let c = s / m;
                let p = &pl.paths[s];
                (0..n)
                    .map(|i| {
                        let h = dir.value(&pl.grid, pl.spec, p, i);
                        h * pl.dw_hat[(c * n + i) * d..(c * n + i + 1) * d].iter().sum::<f64>() / (d as f64).sqrt()
                    })
                    .sum()
            })
            .collect();
        for eps in DEVIATION_EPSILONS {
            let diff: Vec<f64> = (0..net.len()).map(|s| utility(s, wealth_terminal[s] + eps * shift[s]) - base[s]).collect();
            let gain = Estimate::clustered(&diff, m);
            let pass = gain.mean <= 2.0 * gain.se + FLOAT_SLACK;
            deviations.push(DeviationResult { direction: dir, epsilon: eps, gain, pass });
        }
    }

    // Simulated optimal utility of the reference strategy against the closed-form value.
    let mut value_checks = Vec::new();
    for cls in &reference.classes {
        let idx = pl.class_samples(&cls.class);
        let mut vals = Vec::with_capacity(idx.len());
        for s in &idx {
            let gain = pl.wealth_gain(&reference.theta, *s);
            vals.push((-cls.class.alpha * (gain - reference.terminal[*s])).exp());
        }
        value_checks.push(ValueCheck {
            alpha: cls.class.alpha,
            rho: cls.class.rho,
            simulated: Estimate::clustered(&vals, cls.class.agents.len()),
            formula: (cls.class.alpha * cls.y0).exp(),
        });
    }

    Ok(FixedPointReport { f_direct, f_formula, f_se, f_max_residual, f_max_z, exponent, exponent_max, deviations, value_checks })
}

/// -exp(-alpha (x - Y0)).
pub fn value_function(x: f64, y0: f64, alpha: f64) -> f64 {
    -(-alpha * (x - y0)).exp()
}

/// Mean equilibrium strategy of one type class with an error bar combining the
/// sampling spread and the regression standard errors of both solves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassTheta {
    pub alpha: f64,
    pub rho: f64,
    pub y0: f64,
    pub y0_se: f64,
    pub theta_mean: f64,
    pub theta_se: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

pub struct EquilibriumResult {
    pub reference: ReferenceSolution,
    pub density: Vec<f64>,
    pub auxiliary: AuxiliarySolution,
    pub reconstruction: Reconstruction,
    /// X_T per sample.
    pub wealth: Vec<f64>,
    pub fixed_point: FixedPointReport,
    pub e_rho: f64,
    pub e_x0: f64,
    pub e_inv_alpha: f64,
    pub class_theta: Vec<ClassTheta>,
}

/// Runs the whole reduction and its fixed-point diagnostics.
pub fn solve_mfg(pl: &Pipeline<'_>) -> Result<EquilibriumResult> {
    if (1.0 - pl.e_rho).abs() < 1e-12 {
        return Err(Error::SingularInteraction);
    }
    let reference = solve_reference_single_agent(pl)?;
    let density = population_densities(pl, &reference)?;
    let auxiliary = solve_auxiliary(pl, &reference)?;
    let rho: Vec<f64> = pl.pop.agents.iter().map(|a| a.rho).collect();
    let reconstruction = reconstruct_equilibrium(&auxiliary.z, &reference.theta, &rho, pl.layout(pl.d()), pl.e_rho)?;
    let wealth: Vec<f64> = (0..pl.paths.len())
        .into_par_iter()
        .map(|s| pl.pop.agent_of(s).x0 + pl.wealth_gain(&reconstruction.theta, s))
        .collect();
    let fixed_point = fixed_point_residual(pl, &reference, &reconstruction, &wealth)?;

    let (n, d) = (pl.n_cells(), pl.d());
    let m = pl.pop.m();
    let class_theta = reference
        .classes
        .iter()
        .zip(&auxiliary.classes)
        .map(|(cls, aux)| {
            let idx = pl.class_samples(&cls.class);
            let per_sample: Vec<f64> = idx
                .iter()
                .map(|s| reconstruction.theta[s * n * d..(s + 1) * n * d].iter().sum::<f64>() / (n * d) as f64)
                .collect();
            let all = idx.iter().flat_map(|s| reconstruction.theta[s * n * d..(s + 1) * n * d].iter().copied());
            let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let est = Estimate::clustered(&per_sample, cls.class.agents.len().min(m));
            ClassTheta {
                alpha: cls.class.alpha,
                rho: cls.class.rho,
                y0: cls.y0,
                y0_se: cls.y0_se,
                theta_mean: est.mean,
                theta_se: (est.se.powi(2) + cls.z_se.powi(2) + aux.z_se.powi(2)).sqrt(),
                theta_min: lo,
                theta_max: hi,
            }
        })
        .collect();
    Ok(EquilibriumResult {
        reference,
        density,
        auxiliary,
        reconstruction,
        wealth,
        fixed_point,
        e_rho: pl.e_rho,
        e_x0: pl.e_x0,
        e_inv_alpha: pl.pop.law.mean_inv_alpha(),
        class_theta,
    })
}
