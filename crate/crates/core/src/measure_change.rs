//! Exponential change of measure with jumps.
//!
//! The density of the tilted measure is the Doleans-Dade exponential of
//! M = -int phi dW + int (exp(alpha U) - 1) d(mu - nu). Under it, W + int phi dt is
//! a Brownian motion and the compensator becomes exp(alpha U) zeta lambda dt.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{draw_cell_events, AgentPath, Intensity, JumpSpec, JumpState, TimeGrid};
use crate::error::Result;
use crate::jbsde::SolutionField;
use crate::rng::{Domain, StreamKey};
use crate::stats::Estimate;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityPath {
    /// Density at every node; the first value is 1.
    pub values: Vec<f64>,
    /// Per cell: sum_k alpha U_k dN_k - (exp(alpha U_k) - 1) zeta lambda_k dt.
    pub log_jump_terms: Vec<f64>,
    pub terminal: f64,
}

/// U and zeta lambda per cell along a path, `[cell][atom]` each.
pub fn jump_inputs(path: &AgentPath, field: &dyn SolutionField, spec: &JumpSpec, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = spec.n_atoms();
    let n = grid.n_steps();
    let mut u = vec![0.0; n * k];
    let mut rates = vec![0.0; n * k];
    for i in 0..n {
        let st = path.state(i);
        field.u(i, st.w, st.counts, &mut u[i * k..(i + 1) * k]);
        for a in 0..k {
            rates[i * k + a] = spec.rate(grid.node(i), i, &st, a)?;
        }
    }
    Ok((u, rates))
}

/// Discrete stochastic exponential along one path: Brownian part
/// exp(-phi dW - |phi|^2 dt / 2), a factor exp(alpha U_k) per event and the
/// compensator factor exp(-(exp(alpha U_k) - 1) zeta lambda_k dt) per cell.
pub fn doleans_exponential(path: &AgentPath, phi: &[f64], u: &[f64], rates: &[f64], alpha: f64, grid: &TimeGrid) -> DensityPath {
    let d = path.d;
    let k = path.k;
    let dt = grid.dt();
    let mut log = 0.0;
    let mut values = Vec::with_capacity(grid.n_nodes());
    let mut log_jump_terms = Vec::with_capacity(grid.n_steps());
    values.push(1.0);
    for i in 0..grid.n_steps() {
        let ph = &phi[i * d..(i + 1) * d];
        let dw = path.dw_at(i);
        let brownian: f64 = -ph.iter().zip(dw).map(|(p, w)| p * w).sum::<f64>() - 0.5 * ph.iter().map(|p| p * p).sum::<f64>() * dt;
        let dn = path.dn_at(i);
        let mut jump = 0.0;
        for a in 0..k {
            let au = alpha * u[i * k + a];
            jump += au * dn[a] as f64 - au.exp_m1() * rates[i * k + a] * dt;
        }
        log += brownian + jump;
        log_jump_terms.push(jump);
        values.push(log.exp());
    }
    let terminal = *values.last().expect("nonempty");
    DensityPath { values, log_jump_terms, terminal }
}

/// exp(alpha U(t, state, e_k)) times the original density.
pub struct TiltedIntensity {
    base: Arc<dyn Intensity>,
    alpha: f64,
    field: Arc<dyn SolutionField>,
}

impl fmt::Debug for TiltedIntensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TiltedIntensity").field("base", &self.base).field("alpha", &self.alpha).finish_non_exhaustive()
    }
}

impl Intensity for TiltedIntensity {
    fn density(&self, t: f64, cell: usize, state: &JumpState<'_>, atom: usize) -> f64 {
        let mut u = vec![0.0; self.field.n_atoms()];
        self.field.u(cell, state.w, state.counts, &mut u);
        (self.alpha * u[atom]).exp() * self.base.density(t, cell, state, atom)
    }
}

/// Compensator under the tilted measure; the bound becomes c_nu exp(alpha max|U|).
pub fn tilt_compensator(spec: &JumpSpec, alpha: f64, field: Arc<dyn SolutionField>) -> Result<JumpSpec> {
    let c_hat = spec.c_nu() * (alpha * field.u_bound()).exp() * (1.0 + 1e-12);
    let intensity = TiltedIntensity { base: spec.intensity().clone(), alpha, field };
    JumpSpec::new(spec.atoms().to_vec(), c_hat, Arc::new(intensity))
}

/// Independent paths simulated directly under the tilted measure: the driver
/// W_hat has Gaussian increments and jumps follow `tilted`. The returned paths
/// store increments of W = W_hat - int phi dt, like paths simulated under the
/// original measure.
pub fn simulate_tilted(grid: &TimeGrid, tilted: &JumpSpec, phi: &[f64], d: usize, n_paths: usize, seed: u64) -> Result<Vec<AgentPath>> {
    let n = grid.n_steps();
    let k = tilted.n_atoms();
    let dt = grid.dt();
    let sd = dt.sqrt();
    let all: Vec<usize> = (0..k).collect();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut dw = Vec::with_capacity(n * d);
            let mut dn = vec![0u32; n * k];
            let mut w = vec![0.0; d];
            let mut counts = vec![0u32; k];
            let key = StreamKey::new(seed, Domain::TiltedJump).path(p as u64);
            for i in 0..n {
                let st = JumpState { w: &w, counts: &counts };
                let events = draw_cell_events(tilted, grid, i, &st, &all, key)?;
                let mut rng = StreamKey::new(seed, Domain::TiltedBrownian).path(p as u64).cell(i as u64).rng();
                for j in 0..d {
                    let inc = sd * rng.sample::<f64, _>(StandardNormal) - phi[i * d + j] * dt;
                    dw.push(inc);
                    w[j] += inc;
                }
                for (a, _) in events {
                    dn[i * k + a] += 1;
                    counts[a] += 1;
                }
            }
            Ok(AgentPath::from_increments(d, k, dw, dn))
        })
        .collect()
}

/// Mean of payoff times density with its standard error.
pub fn phat_expectation(payoff: &[f64], density: &[f64]) -> Estimate {
    let prod: Vec<f64> = payoff.iter().zip(density).map(|(a, b)| a * b).collect();
    Estimate::from_samples(&prod)
}

/// Summary of terminal densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityReport {
    pub mean: Estimate,
    pub min: f64,
    pub max: f64,
    pub positive_fraction: f64,
}

impl DensityReport {
    pub fn new(terminal: &[f64]) -> Self {
        let positive = terminal.iter().filter(|v| **v > 0.0 && v.is_finite()).count();
        Self {
            mean: Estimate::from_samples(terminal),
            min: terminal.iter().cloned().fold(f64::INFINITY, f64::min),
            max: terminal.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            positive_fraction: positive as f64 / terminal.len().max(1) as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{IntensityForm, MarkAtom, PathBundle, Split};
    use crate::jbsde::ConstantField;

    fn one_atom() -> JumpSpec {
        JumpSpec::from_form(
            vec![MarkAtom { mark: vec![1.0], weight: 1.5, split: Split::Common }],
            1.0,
            IntensityForm::Constant { value: 0.8 },
        )
        .unwrap()
    }

    #[test]
    fn zero_inputs_give_unit_density() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let p = AgentPath::from_increments(1, 1, vec![0.3, -0.1, 0.2, 0.0], vec![1, 0, 2, 0]);
        let dp = doleans_exponential(&p, &[0.0; 4], &[0.0; 4], &[1.0; 4], 2.0, &grid);
        assert!(dp.values.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn brownian_density_closed_form() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let p = AgentPath::from_increments(1, 0, vec![0.3, -0.1, 0.2, 0.05], vec![]);
        let dp = doleans_exponential(&p, &[0.2; 4], &[], &[], 2.0, &grid);
        let expect = (-0.2 * p.terminal_w()[0] - 0.02).exp();
        assert!((dp.terminal - expect).abs() < 1e-14);
    }

    #[test]
    fn no_tilt_and_scalar_tilt() {
        let spec = one_atom();
        let st = JumpState { w: &[0.0], counts: &[0] };
        let zero = ConstantField { d: 1, k: 1, y0: 0.0, z: vec![0.0; 4], u: vec![0.0; 4] };
        let t0 = tilt_compensator(&spec, 1.0, Arc::new(zero)).unwrap();
        assert_eq!(t0.zeta(0.0, 0, &st, 0).unwrap(), 0.8);
        let ln2 = ConstantField { d: 1, k: 1, y0: 0.0, z: vec![0.0; 4], u: vec![2f64.ln(); 4] };
        let t1 = tilt_compensator(&spec, 1.0, Arc::new(ln2)).unwrap();
        assert!((t1.zeta(0.3, 1, &st, 0).unwrap() - 1.6).abs() < 1e-14);
        assert!(t1.c_nu() >= 2.0);
        t1.check_by_sampling(&TimeGrid::new(1.0, 4).unwrap(), 1, 3).unwrap();
    }

    #[test]
    fn density_has_unit_mean_with_jumps() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let spec = one_atom();
        let bundle = PathBundle::simulate(grid, 1, &spec, 100_000, 0, 21).unwrap();
        let field = ConstantField { d: 1, k: 1, y0: 0.0, z: vec![0.0; 8], u: vec![0.3; 8] };
        let terms: Vec<f64> = bundle
            .agent_paths()
            .iter()
            .map(|p| {
                let (u, r) = jump_inputs(p, &field, &spec, &grid).unwrap();
                doleans_exponential(p, &[0.2; 8], &u, &r, 1.5, &grid).terminal
            })
            .collect();
        let rep = DensityReport::new(&terms);
        assert_eq!(rep.positive_fraction, 1.0);
        assert!(rep.mean.z_score(1.0) < 4.0, "{:?}", rep.mean);
    }
}
