//! Conditional expectation given the common noise, estimated by averaging over
//! a population of agents that share the common Brownian path and common jumps.

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{AgentPath, JumpSpec, PathBundle, TimeGrid};
use crate::error::{config, Result};
use crate::stats::Estimate;
use crate::types::{AgentSample, TypeLaw};

/// M agent copies per common path with frozen characteristics.
#[derive(Debug, Clone)]
pub struct PopulationBundle {
    pub bundle: PathBundle,
    /// One draw per agent slot, shared across common paths.
    pub agents: Vec<AgentSample>,
    /// Law used for exact moments (risk aversion and weights quantized if needed).
    pub law: TypeLaw,
}

/// Agents with identical (alpha, rho); they share one reference solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeClass {
    pub alpha: f64,
    pub rho: f64,
    pub agents: Vec<usize>,
}

impl PopulationBundle {
    pub fn simulate(grid: TimeGrid, d: usize, spec: &JumpSpec, n_common: usize, m: usize, law: &TypeLaw, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(config("population needs at least one agent"));
        }
        let bundle = PathBundle::simulate(grid, d, spec, n_common, m, seed)?;
        let agents = law.sample(m, seed);
        Ok(Self { bundle, agents, law: law.effective() })
    }

    pub fn n_common(&self) -> usize {
        self.bundle.n_paths()
    }

    pub fn m(&self) -> usize {
        self.agents.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_common() * self.m()
    }

    /// Sample index of (common path, agent).
    pub fn index(&self, common: usize, agent: usize) -> usize {
        common * self.m() + agent
    }

    pub fn agent_of(&self, sample: usize) -> &AgentSample {
        &self.agents[sample % self.m()]
    }

    pub fn paths(&self) -> Vec<AgentPath> {
        self.bundle.agent_paths()
    }

    pub fn classes(&self) -> Vec<TypeClass> {
        let mut out: Vec<TypeClass> = Vec::new();
        for (a, s) in self.agents.iter().enumerate() {
            match out.iter_mut().find(|c| c.alpha == s.alpha && c.rho == s.rho) {
                Some(c) => c.agents.push(a),
                None => out.push(TypeClass { alpha: s.alpha, rho: s.rho, agents: vec![a] }),
            }
        }
        out
    }

    pub fn layout(&self, n_cells: usize, dim: usize) -> Layout {
        Layout { n_common: self.n_common(), m: self.m(), n_cells, dim }
    }
}

/// Shape of a per-sample process `[common][agent][cell][dim]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_common: usize,
    pub m: usize,
    pub n_cells: usize,
    pub dim: usize,
}

impl Layout {
    fn block(&self) -> usize {
        self.n_cells * self.dim
    }
}

/// Cross-agent average per (common path, cell, coordinate), `[common][cell][dim]`.
pub fn project_pi(values: &[f64], layout: Layout) -> Result<Vec<f64>> {
    if layout.m == 0 {
        return Err(config("projection needs at least one agent per common path"));
    }
    let b = layout.block();
    if values.len() != layout.n_common * layout.m * b {
        return Err(config(format!("projection input has {} values, layout expects {}", values.len(), layout.n_common * layout.m * b)));
    }
    Ok((0..layout.n_common)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut acc = vec![0.0; b];
            for a in 0..layout.m {
                let row = &values[(c * layout.m + a) * b..(c * layout.m + a + 1) * b];
                acc.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            acc.into_iter().map(move |s| s / layout.m as f64)
        })
        .collect())
}

/// Standard error of the cross-agent average, same layout as [`project_pi`].
pub fn project_pi_se(values: &[f64], layout: Layout) -> Result<Vec<f64>> {
    let mean = project_pi(values, layout)?;
    let b = layout.block();
    let m = layout.m as f64;
    Ok((0..layout.n_common)
        .flat_map(|c| {
            let mean = &mean;
            (0..b).map(move |j| {
                if layout.m < 2 {
                    return 0.0;
                }
                let mu = mean[c * b + j];
                let var = (0..layout.m).map(|a| (values[(c * layout.m + a) * b + j] - mu).powi(2)).sum::<f64>() / (m - 1.0);
                (var / m).sqrt()
            })
        })
        .collect())
}

/// Both sides of E[int theta dW_hat | common] = int Pi(theta) dW_hat per common path
/// and node: the cross-agent average of the agents' integrals and the integral of
/// the projected strategy. `dw_hat` is `[common][cell][dim]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WealthIntegral {
    /// `[common][node]`
    pub averaged: Vec<f64>,
    /// `[common][node]`
    pub projected: Vec<f64>,
}

pub fn project_wealth_integral(theta: &[f64], dw_hat: &[f64], layout: Layout) -> Result<WealthIntegral> {
    let pi = project_pi(theta, layout)?;
    let (n, d, m, b) = (layout.n_cells, layout.dim, layout.m, layout.block());
    let mut averaged = vec![0.0; layout.n_common * (n + 1)];
    let mut projected = vec![0.0; layout.n_common * (n + 1)];
    for c in 0..layout.n_common {
        let inc = &dw_hat[c * b..(c + 1) * b];
        for a in 0..m {
            let th = &theta[(c * m + a) * b..(c * m + a + 1) * b];
            let mut x = 0.0;
            for i in 0..n {
                x += (0..d).map(|j| th[i * d + j] * inc[i * d + j]).sum::<f64>();
                averaged[c * (n + 1) + i + 1] += x / m as f64;
            }
        }
        let mut x = 0.0;
        for i in 0..n {
            x += (0..d).map(|j| pi[c * b + i * d + j] * inc[i * d + j]).sum::<f64>();
            projected[c * (n + 1) + i + 1] = x;
        }
    }
    Ok(WealthIntegral { averaged, projected })
}

/// Surrogate of the BMO energy: sup over groups and cells of the member-average
/// conditional tail energy sum_{s >= i} |z_s|^2 dt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub value: f64,
    /// Standard error of the member average at the maximizing (group, cell).
    pub se: f64,
    pub group: usize,
    pub cell: usize,
}

pub fn bmo_energy(values: &[f64], layout: Layout, dt: f64) -> EnergyReport {
    let (n, d, m, b) = (layout.n_cells, layout.dim, layout.m, layout.block());
    let mut best = EnergyReport { value: f64::NEG_INFINITY, se: 0.0, group: 0, cell: 0 };
    for g in 0..layout.n_common {
        let mut tails = vec![0.0; m];
        for i in (0..n).rev() {
            for (a, t) in tails.iter_mut().enumerate() {
                let z = &values[(g * m + a) * b + i * d..(g * m + a) * b + (i + 1) * d];
                *t += z.iter().map(|v| v * v).sum::<f64>() * dt;
            }
            let est = Estimate::from_samples(&tails);
            if est.mean > best.value {
                best = EnergyReport { value: est.mean, se: est.se, group: g, cell: i };
            }
        }
    }
    best
}
