//! Independent ground truth: brute-force dynamic programming on tiny trees,
//! exhaustive jump-path recursion, closed-form special cases and the per-path
//! exponential identity.
//!
//! Nothing here calls the solvers; the tree branching is rebuilt from the jump
//! specification directly.

use serde::Serialize;

use crate::basis::{AgentPath, JumpSpec, JumpState, TimeGrid};
use crate::error::{config, Error, Result};
use crate::types::Law;

/// Largest tree the brute-force search accepts (leaves times strategy-grid size).
pub const MAX_ENUMERATION: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl ThetaGrid {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|j| self.min + j as f64 * self.step).collect()
    }
}

/// Tiny one-dimensional model: exclusive branching per cell, jump of atom k with
/// probability zeta lambda_k dt, otherwise a Brownian move of +-s with
/// s = sqrt(dt / (1 - q)).
#[derive(Debug, Clone)]
pub struct TinyModel {
    pub grid: TimeGrid,
    pub spec: JumpSpec,
    pub phi: f64,
    pub alpha: f64,
    pub x0: f64,
    pub theta_grid: ThetaGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleNode {
    pub cell: usize,
    pub w: f64,
    pub counts: Vec<u32>,
    pub theta: f64,
    /// (1/alpha) ln of the continuation factor: the certainty-equivalent offset at the node.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceResult {
    /// Expected utility factor C_0 with value = -exp(-alpha x0) C_0.
    pub c0: f64,
    pub value: f64,
    /// (1/alpha) ln C_0, comparable to Y_0.
    pub y0: f64,
    /// Optimal grid strategy and offset at every tree node, in depth-first order.
    pub table: Vec<OracleNode>,
}

impl TinyModel {
    pub fn n_leaves(&self) -> u64 {
        (2 + self.spec.n_atoms() as u64).pow(self.grid.n_steps() as u32)
    }

    fn check_size(&self) -> Result<()> {
        if self.grid.n_steps() > 6 {
            return Err(config("tiny models have at most 6 steps"));
        }
        if self.spec.n_atoms() > 2 {
            return Err(config("tiny models have at most 2 atoms"));
        }
        let size = self.n_leaves().saturating_mul(self.theta_grid.values().len() as u64);
        if size >= MAX_ENUMERATION {
            return Err(Error::TooLarge { size, limit: MAX_ENUMERATION });
        }
        Ok(())
    }
}

/// Maximizes E[-exp(-alpha (X_T - xi))] over grid strategies by backward induction
/// over the full (non-recombining) tree. By the CARA factorization the value at a
/// node is -exp(-alpha x) C, so each node minimizes over theta
/// E[exp(-alpha theta dW_hat) C_next] with C at the leaves equal to exp(alpha xi).
pub fn brute_force_single_agent(model: &TinyModel, claim: &dyn Fn(f64, &[u32]) -> f64) -> Result<BruteForceResult> {
    model.check_size()?;
    let thetas = model.theta_grid.values();
    let mut table = Vec::new();
    let k = model.spec.n_atoms();
    let c0 = bf_node(model, claim, &thetas, 0, 0.0, &vec![0; k], &mut table)?;
    let a = model.alpha;
    Ok(BruteForceResult { c0, value: -(-a * model.x0).exp() * c0, y0: c0.ln() / a, table })
}

fn bf_node(
    m: &TinyModel,
    claim: &dyn Fn(f64, &[u32]) -> f64,
    thetas: &[f64],
    i: usize,
    w: f64,
    counts: &[u32],
    table: &mut Vec<OracleNode>,
) -> Result<f64> {
    let a = m.alpha;
    if i == m.grid.n_steps() {
        return Ok((a * claim(w, counts)).exp());
    }
    let dt = m.grid.dt();
    let state = JumpState { w: std::slice::from_ref(&w), counts };
    let mut probs = Vec::with_capacity(counts.len());
    for k in 0..counts.len() {
        probs.push(m.spec.zeta(m.grid.node(i), i, &state, k)? * m.spec.atoms()[k].weight * dt);
    }
    let q: f64 = probs.iter().sum();
    if q >= 1.0 {
        return Err(config("jump probability per cell must stay below one"));
    }
    let s = (dt / (1.0 - q)).sqrt();
    let pos = table.len();
    table.push(OracleNode { cell: i, w, counts: counts.to_vec(), theta: f64::NAN, y: f64::NAN });
    let cu = bf_node(m, claim, thetas, i + 1, w + s, counts, table)?;
    let cd = bf_node(m, claim, thetas, i + 1, w - s, counts, table)?;
    let mut cj = Vec::with_capacity(counts.len());
    for k in 0..counts.len() {
        let mut c = counts.to_vec();
        c[k] += 1;
        cj.push(bf_node(m, claim, thetas, i + 1, w, &c, table)?);
    }
    let pb = 0.5 * (1.0 - q);
    let jump_part: f64 = probs.iter().zip(&cj).map(|(p, c)| p * c).sum();
    let mut best = (f64::INFINITY, f64::NAN);
    for &th in thetas {
        let drift = (-a * th * m.phi * dt).exp();
        let v = drift * (pb * (-a * th * s).exp() * cu + pb * (a * th * s).exp() * cd + jump_part);
        if v < best.0 {
            best = (v, th);
        }
    }
    table[pos].theta = best.1;
    table[pos].y = best.0.ln() / a;
    Ok(best.0)
}

/// Y_0 of the single-agent equation with phi = 0 and one atom of constant rate,
/// by recursion over every jump/no-jump path: with U = Y_jump - Y_stay,
/// Y_i = Y_stay + p U + ((exp(alpha U) - 1 - alpha U) / alpha) rate dt.
pub fn jump_path_recursion(n_steps: usize, dt: f64, rate: f64, alpha: f64, terminal: &dyn Fn(u32) -> f64) -> Result<f64> {
    if n_steps > 24 {
        return Err(Error::TooLarge { size: 1u64 << n_steps.min(63), limit: 1 << 24 });
    }
    fn rec(i: usize, n: usize, count: u32, dt: f64, rate: f64, alpha: f64, terminal: &dyn Fn(u32) -> f64) -> f64 {
        if i == n {
            return terminal(count);
        }
        let stay = rec(i + 1, n, count, dt, rate, alpha, terminal);
        let jump = rec(i + 1, n, count + 1, dt, rate, alpha, terminal);
        let u = jump - stay;
        stay + rate * dt * u + ((alpha * u).exp() - 1.0 - alpha * u) / alpha * rate * dt
    }
    Ok(rec(0, n_steps, 0, dt, rate, alpha, terminal))
}

/// theta = phi (1/alpha + rho E[1/alpha] / (1 - E[rho])) for every (alpha, rho)
/// in the support, zero claim and constant coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MertonType {
    pub alpha: f64,
    pub rho: f64,
    pub theta: Vec<f64>,
}

pub fn closed_form_merton(phi: &[f64], alpha: &Law, rho: &Law) -> Result<Vec<MertonType>> {
    let a_sup = alpha.quantized().support().ok_or_else(|| config("risk aversion law needs finite support"))?;
    let r_sup = rho.support().ok_or_else(|| config("competition weight law needs finite support"))?;
    let e_rho: f64 = r_sup.iter().map(|(v, w)| v * w).sum();
    if (1.0 - e_rho).abs() < 1e-12 {
        return Err(Error::SingularInteraction);
    }
    let e_inv_alpha: f64 = a_sup.iter().map(|(v, w)| w / v).sum();
    let mut out = Vec::new();
    for (a, _) in &a_sup {
        for (r, _) in &r_sup {
            let scale = 1.0 / a + r * e_inv_alpha / (1.0 - e_rho);
            out.push(MertonType { alpha: *a, rho: *r, theta: phi.iter().map(|p| p * scale).collect() });
        }
    }
    Ok(out)
}

/// Ingredients of the per-path identity, all per cell along one path.
pub struct IdentityInputs<'a> {
    pub grid: &'a TimeGrid,
    pub path: &'a AgentPath,
    pub alpha: f64,
    pub y0: f64,
    pub xi: f64,
    /// `[cell][coordinate]`
    pub theta: &'a [f64],
    pub z: &'a [f64],
    pub phi: &'a [f64],
    /// `[cell][atom]`
    pub u: &'a [f64],
    pub rates: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Compares -exp(-alpha (Y_0 + int theta dW_hat - xi)) with
/// -exp((alpha^2/2) int |theta - Z - phi/alpha|^2 dt) E(-alpha int (theta - Z) dW + int (exp(alpha U) - 1) d(mu - nu)).
pub fn exponential_identity_residual(inp: &IdentityInputs<'_>) -> IdentityResidual {
    let (d, k) = (inp.path.d, inp.path.k);
    let dt = inp.grid.dt();
    let a = inp.alpha;
    let mut gain = 0.0;
    let mut penalty = 0.0;
    let mut log_e = 0.0;
    for i in 0..inp.grid.n_steps() {
        let dw = inp.path.dw_at(i);
        for j in 0..d {
            let c = i * d + j;
            gain += inp.theta[c] * (dw[j] + inp.phi[c] * dt);
            let diff = inp.theta[c] - inp.z[c];
            penalty += (diff - inp.phi[c] / a).powi(2) * dt;
            log_e += -a * diff * dw[j] - 0.5 * a * a * diff * diff * dt;
        }
        let dn = inp.path.dn_at(i);
        for b in 0..k {
            let au = a * inp.u[i * k + b];
            log_e += au * dn[b] as f64 - (au.exp() - 1.0) * inp.rates[i * k + b] * dt;
        }
    }
    let lhs = -(-a * (inp.y0 + gain - inp.xi)).exp();
    let rhs = -(0.5 * a * a * penalty + log_e).exp();
    IdentityResidual { lhs, rhs, residual: (lhs - rhs).abs() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{IntensityForm, MarkAtom, Split};

    fn brownian_model(n: usize, alpha: f64) -> TinyModel {
        TinyModel {
            grid: TimeGrid::new(1.0, n).unwrap(),
            spec: JumpSpec::empty(),
            phi: 0.2,
            alpha,
            x0: 0.0,
            theta_grid: ThetaGrid { min: -0.5, max: 0.5, step: 0.01 },
        }
    }

    #[test]
    fn merton_grid_optimum() {
        let r = brute_force_single_agent(&brownian_model(2, 2.0), &|_, _| 0.0).unwrap();
        for node in &r.table {
            assert!((node.theta - 0.1).abs() <= 0.01 + 1e-12, "{node:?}");
        }
        let r4 = brute_force_single_agent(&brownian_model(2, 4.0), &|_, _| 0.0).unwrap();
        for node in &r4.table {
            assert!((node.theta - 0.05).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn value_increases_with_initial_wealth() {
        let mut m = brownian_model(2, 2.0);
        let v0 = brute_force_single_agent(&m, &|w, _| w.max(0.0)).unwrap().value;
        m.x0 = 0.1;
        let v1 = brute_force_single_agent(&m, &|w, _| w.max(0.0)).unwrap().value;
        assert!(v1 >= v0);
    }

    #[test]
    fn oversized_tree_rejected() {
        let spec = JumpSpec::from_form(
            vec![
                MarkAtom { mark: vec![1.0], weight: 0.1, split: Split::Common },
                MarkAtom { mark: vec![1.0], weight: 0.1, split: Split::Idiosyncratic },
            ],
            1.0,
            IntensityForm::Constant { value: 1.0 },
        )
        .unwrap();
        let m = TinyModel { spec, theta_grid: ThetaGrid { min: -5.0, max: 5.0, step: 0.001 }, ..brownian_model(6, 1.0) };
        assert!(matches!(brute_force_single_agent(&m, &|_, _| 0.0), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn merton_closed_forms() {
        let c = |v| Law::Constant { value: v };
        assert!((closed_form_merton(&[0.2], &c(2.0), &c(0.5)).unwrap()[0].theta[0] - 0.2).abs() < 1e-15);
        assert!((closed_form_merton(&[0.2], &c(2.0), &c(0.0)).unwrap()[0].theta[0] - 0.1).abs() < 1e-15);
        // E[rho] = -1: phi (1/alpha - E[1/alpha] / 2) = 0.2 * (0.5 - 0.25).
        assert!((closed_form_merton(&[0.2], &c(2.0), &c(-1.0)).unwrap()[0].theta[0] - 0.05).abs() < 1e-15);
        assert!(matches!(closed_form_merton(&[0.2], &c(2.0), &c(1.0)), Err(Error::SingularInteraction)));
        let two = Law::Discrete { values: vec![1.0, 4.0], weights: vec![1.0, 1.0] };
        for t in closed_form_merton(&[0.2], &two, &c(0.5)).unwrap() {
            assert!((t.theta[0] - (0.2 / t.alpha + 0.125)).abs() < 1e-15);
        }
    }

    #[test]
    fn trivial_identity() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let path = AgentPath::from_increments(1, 0, vec![0.1, -0.2, 0.3], vec![]);
        let zeros = [0.0; 3];
        let r = exponential_identity_residual(&IdentityInputs {
            grid: &grid,
            path: &path,
            alpha: 2.0,
            y0: 0.0,
            xi: 0.0,
            theta: &zeros,
            z: &zeros,
            phi: &zeros,
            u: &[],
            rates: &[],
        });
        assert_eq!(r.lhs, -1.0);
        assert_eq!(r.rhs, -1.0);
    }

    #[test]
    fn gaussian_algebra_identity_at_zero_strategy() {
        // theta = 0, no jumps, Z = 0: the identity holds for any Y0 + drift bookkeeping only
        // when xi = Y0 + (|phi|^2 / 2 alpha) T, the deterministic solution.
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let path = AgentPath::from_increments(1, 0, vec![0.1, -0.2, 0.3, 0.05], vec![]);
        let zeros = [0.0; 4];
        let r = exponential_identity_residual(&IdentityInputs {
            grid: &grid,
            path: &path,
            alpha: 2.0,
            y0: -0.01,
            xi: 0.0,
            theta: &zeros,
            z: &zeros,
            phi: &[0.2; 4],
            u: &[],
            rates: &[],
        });
        assert!(r.residual < 1e-12, "{r:?}");
    }
}
