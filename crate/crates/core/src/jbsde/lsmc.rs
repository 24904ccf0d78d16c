//! Least-squares Monte Carlo backward scheme.
//!
//! On each cell, conditional expectations are projections on polynomials in
//! the state features (Brownian level, running counts per atom):
//! m = E_i[Y_{i+1}], Z = E_i[(Y_{i+1} - m) dW] / dt and
//! U_k p_k = E_i[(Y_{i+1} - m)(dN_k - p_k)], then Y_i = m - drift(Z, U) dt.

use rayon::prelude::*;
use serde::Serialize;

use super::generator::GeneratorSpec;
use super::regression::{PolyBasis, RegressionFit};
use super::{BsdeDiagnostics, BsdePathValues, SolutionField};
use crate::basis::{AgentPath, JumpSpec, JumpState, TimeGrid};
use crate::error::{config, Error, Result};
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsmcConfig {
    pub degree: usize,
    pub ridge: f64,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        Self { degree: 2, ridge: 1e-8 }
    }
}

/// Which Brownian motion drives the equation along the supplied paths.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    /// The reference W.
    Physical,
    /// W_hat = W + int phi dt, with phi per cell `[cell][coordinate]`.
    Tilted { phi: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct LsmcSolution {
    grid: TimeGrid,
    d: usize,
    k: usize,
    spec: JumpSpec,
    fits: Vec<RegressionFit>,
    pub y0: f64,
    /// Pathwise estimate of Y0 (terminal minus the discrete martingale and drift sums).
    pub y0_pathwise: Estimate,
    /// `[sample][node]`
    pub y_paths: Vec<f64>,
    /// Standard error of the Z regression target mean, per cell.
    pub z_se: Vec<f64>,
    u_bound: f64,
    pub diagnostics: BsdeDiagnostics,
}

fn features(path: &AgentPath, node: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(path.w_at(node));
    out.extend(path.counts_at(node).iter().map(|c| *c as f64));
}

fn driver_increment(path: &AgentPath, cell: usize, measure: &Measure, dt: f64, out: &mut [f64]) {
    let d = path.d;
    out.copy_from_slice(path.dw_at(cell));
    if let Measure::Tilted { phi } = measure {
        for j in 0..d {
            out[j] += phi[cell * d + j] * dt;
        }
    }
}

pub fn solve_lsmc(
    gen: &GeneratorSpec,
    paths: &[AgentPath],
    terminal: &[f64],
    measure: &Measure,
    grid: &TimeGrid,
    cfg: &LsmcConfig,
) -> Result<LsmcSolution> {
    let n_samples = paths.len();
    if n_samples == 0 || terminal.len() != n_samples {
        return Err(config(format!("need one terminal value per path ({} paths, {} values)", n_samples, terminal.len())));
    }
    let n = grid.n_steps();
    let d = gen.d;
    let k = gen.spec.n_atoms();
    let dt = grid.dt();
    let nf = d + k;
    let basis = PolyBasis { degree: cfg.degree };
    if let Some(j) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Solver { cell: n, message: format!("terminal value not finite on path {j}") });
    }

    let mut y_paths = vec![0.0; n_samples * (n + 1)];
    for (s, t) in terminal.iter().enumerate() {
        y_paths[s * (n + 1) + n] = *t;
    }
    let mut y_next = terminal.to_vec();
    let mut fits = vec![None; n];
    let mut z_all = vec![0.0; n_samples * n * d];
    let mut u_all = vec![0.0; n_samples * n * k];
    let mut drift_all = vec![0.0; n_samples * n];
    let mut rate_all = vec![0.0; n_samples * n * k];
    let mut z_se = vec![0.0; n];
    let mut rms = vec![0.0; n];
    let mut ridge_fallbacks = 0;

    for i in (0..n).rev() {
        let t = grid.node(i);
        let feats: Vec<f64> = paths
            .par_iter()
            .flat_map_iter(|p| {
                let mut f = Vec::with_capacity(nf);
                features(p, i, &mut f);
                f
            })
            .collect();
        let rates: Vec<f64> = paths
            .par_iter()
            .map(|p| {
                let st = p.state(i);
                (0..k).map(|a| gen.spec.rate(t, i, &st, a)).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .concat();

        let mean_fit = RegressionFit::fit(&basis, &feats, nf, &[&y_next], cfg.ridge);
        let m: Vec<f64> = (0..n_samples).into_par_iter().map(|s| mean_fit.eval(0, &feats[s * nf..(s + 1) * nf])).collect();
        let resid: Vec<f64> = y_next.iter().zip(&m).map(|(y, mm)| y - mm).collect();
        rms[i] = (resid.iter().map(|r| r * r).sum::<f64>() / n_samples as f64).sqrt();

        let mut targets = vec![vec![0.0; n_samples]; d + k];
        let mut inc = vec![0.0; d];
        for (s, p) in paths.iter().enumerate() {
            driver_increment(p, i, measure, dt, &mut inc);
            for j in 0..d {
                targets[j][s] = resid[s] * inc[j] / dt;
            }
            let dn = p.dn_at(i);
            for a in 0..k {
                targets[d + a][s] = resid[s] * (dn[a] as f64 - rates[s * k + a] * dt);
            }
        }
        z_se[i] = targets[..d].iter().map(|t| Estimate::from_samples(t).se).fold(0.0, f64::max);
        let refs: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
        let mart_fit = RegressionFit::fit(&basis, &feats, nf, &refs, cfg.ridge);
        ridge_fallbacks += mean_fit.ridge_used as usize + mart_fit.ridge_used as usize;

        let solved: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = (0..n_samples)
            .into_par_iter()
            .map(|s| {
                let mut out = vec![0.0; d + k];
                mart_fit.eval_all(&feats[s * nf..(s + 1) * nf], &mut out);
                let z = out[..d].to_vec();
                let u: Vec<f64> = (0..k)
                    .map(|a| {
                        let p = rates[s * k + a] * dt;
                        if p > 0.0 { out[d + a] / p } else { 0.0 }
                    })
                    .collect();
                let drift = gen.drift(i, &z, &u, &rates[s * k..(s + 1) * k]);
                (z, u, drift, m[s] - drift * dt)
            })
            .collect();
        for (s, (z, u, drift, y)) in solved.into_iter().enumerate() {
            z_all[(s * n + i) * d..(s * n + i + 1) * d].copy_from_slice(&z);
            u_all[(s * n + i) * k..(s * n + i + 1) * k].copy_from_slice(&u);
            rate_all[(s * n + i) * k..(s * n + i + 1) * k].copy_from_slice(&rates[s * k..(s + 1) * k]);
            drift_all[s * n + i] = drift;
            y_paths[s * (n + 1) + i] = y;
            y_next[s] = y;
        }
        if let Some(s) = y_next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Solver { cell: i, message: format!("non-finite value on path {s}") });
        }
        fits[i] = Some(mart_fit);
    }

    let y0 = y_next.iter().sum::<f64>() / n_samples as f64;
    let pathwise: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let p = &paths[s];
            let mut acc = terminal[s];
            let mut inc = vec![0.0; d];
            for i in 0..n {
                driver_increment(p, i, measure, dt, &mut inc);
                acc -= drift_all[s * n + i] * dt;
                for j in 0..d {
                    acc -= z_all[(s * n + i) * d + j] * inc[j];
                }
                let dn = p.dn_at(i);
                for a in 0..k {
                    acc -= u_all[(s * n + i) * k + a] * (dn[a] as f64 - rate_all[(s * n + i) * k + a] * dt);
                }
            }
            acc
        })
        .collect();

    // Conditional tail energy of Z, regressed per cell.
    let mut tail = vec![0.0; n_samples];
    let mut bmo: f64 = 0.0;
    for i in (0..n).rev() {
        for s in 0..n_samples {
            tail[s] += z_all[(s * n + i) * d..(s * n + i + 1) * d].iter().map(|z| z * z).sum::<f64>() * dt;
        }
        let feats: Vec<f64> = paths.iter().flat_map(|p| {
            let mut f = Vec::with_capacity(nf);
            features(p, i, &mut f);
            f
        }).collect();
        let fit = RegressionFit::fit(&basis, &feats, nf, &[&tail], cfg.ridge);
        let sup = (0..n_samples).map(|s| fit.eval(0, &feats[s * nf..(s + 1) * nf])).fold(0.0, f64::max);
        bmo = bmo.max(sup);
    }

    let step_weight = (0..n_samples * n)
        .map(|c| (0..k).map(|a| rate_all[c * k + a] * dt * (gen.alpha * u_all[c * k + a]).exp()).sum::<f64>())
        .fold(0.0, f64::max);
    let u_bound = u_all.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let osc = terminal.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - terminal.iter().cloned().fold(f64::INFINITY, f64::min);
    let diagnostics = BsdeDiagnostics {
        terminal_mismatch: 0.0,
        bmo_energy: bmo,
        max_abs_u: u_bound,
        jump_step_weight: step_weight,
        terminal_oscillation: osc,
        ridge_fallbacks,
        regression_rms: rms,
        nodes: 0,
    };
    Ok(LsmcSolution {
        grid: *grid,
        d,
        k,
        spec: gen.spec.clone(),
        fits: fits.into_iter().map(|f| f.expect("every cell fitted")).collect(),
        y0,
        y0_pathwise: Estimate::from_samples(&pathwise),
        y_paths,
        z_se,
        u_bound,
        diagnostics,
    })
}

impl LsmcSolution {
    pub fn y_path(&self, sample: usize) -> &[f64] {
        let n = self.grid.n_steps() + 1;
        &self.y_paths[sample * n..(sample + 1) * n]
    }

    /// Y, Z, U along a training path.
    pub fn along(&self, sample: usize, path: &AgentPath) -> BsdePathValues {
        let n = self.grid.n_steps();
        let mut z = vec![0.0; n * self.d];
        let mut u = vec![0.0; n * self.k];
        for i in 0..n {
            self.z(i, path.w_at(i), path.counts_at(i), &mut z[i * self.d..(i + 1) * self.d]);
            self.u(i, path.w_at(i), path.counts_at(i), &mut u[i * self.k..(i + 1) * self.k]);
        }
        BsdePathValues { y: self.y_path(sample).to_vec(), z, u }
    }
}

impl SolutionField for LsmcSolution {
    fn d(&self) -> usize {
        self.d
    }

    fn n_atoms(&self) -> usize {
        self.k
    }

    fn y0(&self) -> f64 {
        self.y0
    }

    fn z(&self, cell: usize, w: &[f64], counts: &[u32], out: &mut [f64]) {
        let mut f = Vec::with_capacity(self.d + self.k);
        f.extend_from_slice(w);
        f.extend(counts.iter().map(|c| *c as f64));
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.fits[cell].eval(j, &f);
        }
    }

    fn u(&self, cell: usize, w: &[f64], counts: &[u32], out: &mut [f64]) {
        let mut f = Vec::with_capacity(self.d + self.k);
        f.extend_from_slice(w);
        f.extend(counts.iter().map(|c| *c as f64));
        let t = self.grid.node(cell);
        let dt = self.grid.dt();
        let st = JumpState { w, counts };
        for (a, o) in out.iter_mut().enumerate() {
            let p = self.spec.rate(t, cell, &st, a).unwrap_or(0.0) * dt;
            *o = if p > 0.0 {
                (self.fits[cell].eval(self.d + a, &f) / p).clamp(-self.u_bound, self.u_bound)
            } else {
                0.0
            };
        }
    }

    fn u_bound(&self) -> f64 {
        self.u_bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::PathBundle;

    #[test]
    fn constant_terminal_gives_constant_solution() {
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let spec = JumpSpec::empty();
        let bundle = PathBundle::simulate(grid, 1, &spec, 2000, 0, 1).unwrap();
        let paths = bundle.agent_paths();
        let gen = GeneratorSpec::single_agent(2.0, vec![0.0; 5], 1, spec);
        let sol = solve_lsmc(&gen, &paths, &vec![0.7; paths.len()], &Measure::Physical, &grid, &LsmcConfig::default()).unwrap();
        assert!((sol.y0 - 0.7).abs() < 1e-12);
        let mut z = [0.0];
        for i in 0..5 {
            sol.z(i, &[0.3], &[], &mut z);
            assert!(z[0].abs() <= 3.0 * sol.z_se[i] + 1e-12);
        }
    }
}
