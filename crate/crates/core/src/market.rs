//! Market price of risk, volatility, the drift-adjusted driver and wealth bookkeeping.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{AgentPath, TimeGrid};
use crate::error::{config, Error, Result};

/// Time-deterministic market price of risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum PhiForm {
    Constant { value: Vec<f64> },
    /// `values[j]` applies on `[breaks[j-1], breaks[j])`.
    Piecewise { breaks: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum SigmaForm {
    Constant { matrix: Vec<Vec<f64>> },
    Piecewise { breaks: Vec<f64>, matrices: Vec<Vec<Vec<f64>>> },
}

fn segment(breaks: &[f64], t: f64) -> usize {
    breaks.partition_point(|b| *b <= t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub d: usize,
    pub phi: PhiForm,
    pub sigma: SigmaForm,
    pub s0: Vec<f64>,
    /// Declared bound on |phi|.
    pub phi_bound: f64,
}

impl MarketSpec {
    /// One asset with constant coefficients.
    pub fn constant_1d(phi: f64, sigma: f64) -> Self {
        Self {
            d: 1,
            phi: PhiForm::Constant { value: vec![phi] },
            sigma: SigmaForm::Constant { matrix: vec![vec![sigma]] },
            s0: vec![1.0],
            phi_bound: phi.abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d == 0 {
            return Err(config("market needs at least one asset"));
        }
        if self.s0.len() != d || self.s0.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(config(format!("S0 must hold {d} positive prices")));
        }
        let phis: Vec<&Vec<f64>> = match &self.phi {
            PhiForm::Constant { value } => vec![value],
            PhiForm::Piecewise { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(config("piecewise phi needs one more value than breaks"));
                }
                values.iter().collect()
            }
        };
        for v in phis {
            if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                return Err(config(format!("phi must be a finite vector of length {d}")));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > self.phi_bound * (1.0 + 1e-12) + 1e-15 {
                return Err(config(format!(
                    "|phi| = {norm} exceeds the declared bound {}; the market price of risk must be bounded",
                    self.phi_bound
                )));
            }
        }
        let mats: Vec<&Vec<Vec<f64>>> = match &self.sigma {
            SigmaForm::Constant { matrix } => vec![matrix],
            SigmaForm::Piecewise { breaks, matrices } => {
                if matrices.len() != breaks.len() + 1 {
                    return Err(config("piecewise sigma needs one more matrix than breaks"));
                }
                matrices.iter().collect()
            }
        };
        for m in mats {
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return Err(config(format!("sigma must be {d}x{d}")));
            }
            check_invertible(&to_matrix(m))?;
        }
        Ok(())
    }

    pub fn phi_at(&self, t: f64) -> &[f64] {
        match &self.phi {
            PhiForm::Constant { value } => value,
            PhiForm::Piecewise { breaks, values } => &values[segment(breaks, t)],
        }
    }

    pub fn sigma_at(&self, t: f64) -> DMatrix<f64> {
        match &self.sigma {
            SigmaForm::Constant { matrix } => to_matrix(matrix),
            SigmaForm::Piecewise { breaks, matrices } => to_matrix(&matrices[segment(breaks, t)]),
        }
    }

    /// phi at the left endpoint of every cell, `[cell][coordinate]`.
    pub fn phi_table(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..grid.n_steps()).flat_map(|i| self.phi_at(grid.node(i)).to_vec()).collect()
    }

    /// Whether phi is the same at every cell.
    pub fn phi_is_constant(&self) -> bool {
        matches!(self.phi, PhiForm::Constant { .. })
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

fn check_invertible(m: &DMatrix<f64>) -> Result<()> {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max.is_finite() && min > max * 1e-13) {
        return Err(Error::LinearAlgebra(format!(
            "volatility matrix is singular (singular values {min:e} .. {max:e})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parametrization {
    /// Amount invested per unit of Brownian exposure, theta = Sigma^T vartheta.
    Theta,
    /// Number of shares held.
    Vartheta,
}

/// Predictable strategy values per cell, `[cell][coordinate]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyPath {
    pub d: usize,
    pub values: Vec<f64>,
    pub param: Parametrization,
}

impl StrategyPath {
    pub fn theta(d: usize, values: Vec<f64>) -> Self {
        Self { d, values, param: Parametrization::Theta }
    }

    pub fn at(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.d..(cell + 1) * self.d]
    }
}

/// Switches between theta = Sigma^T vartheta and vartheta = (Sigma^T)^{-1} theta,
/// with one Sigma per cell.
pub fn reparametrize(s: &StrategyPath, sigma_path: &[DMatrix<f64>]) -> Result<StrategyPath> {
    let d = s.d;
    let n = s.values.len() / d;
    if sigma_path.len() != n {
        return Err(config(format!("need {n} volatility matrices, got {}", sigma_path.len())));
    }
    let mut out = Vec::with_capacity(s.values.len());
    for (i, sig) in sigma_path.iter().enumerate() {
        let v = nalgebra::DVector::from_column_slice(s.at(i));
        let r = match s.param {
            Parametrization::Vartheta => sig.transpose() * v,
            Parametrization::Theta => {
                check_invertible(sig)?;
                sig.transpose()
                    .lu()
                    .solve(&v)
                    .ok_or_else(|| Error::LinearAlgebra(format!("volatility singular at cell {i}")))?
            }
        };
        out.extend(r.iter());
    }
    let param = match s.param {
        Parametrization::Theta => Parametrization::Vartheta,
        Parametrization::Vartheta => Parametrization::Theta,
    };
    Ok(StrategyPath { d, values: out, param })
}

/// Prices along a path, exact for coefficients frozen on each cell:
/// S_{i+1} = S_i exp((sigma phi - |sigma_j|^2 / 2) dt + sigma dW) coordinatewise.
pub fn price_path(market: &MarketSpec, grid: &TimeGrid, path: &AgentPath) -> Vec<f64> {
    let d = market.d;
    let dt = grid.dt();
    let mut s = market.s0.clone();
    let mut out = s.clone();
    for i in 0..grid.n_steps() {
        let t = grid.node(i);
        let sig = market.sigma_at(t);
        let phi = market.phi_at(t);
        for a in 0..d {
            let mut drift = 0.0;
            let mut shock = 0.0;
            let mut var = 0.0;
            for j in 0..d {
                drift += sig[(a, j)] * phi[j];
                shock += sig[(a, j)] * path.dw_at(i)[j];
                var += sig[(a, j)] * sig[(a, j)];
            }
            s[a] *= ((drift - 0.5 * var) * dt + shock).exp();
        }
        out.extend_from_slice(&s);
    }
    out
}

/// Sigma_i = diag(S_i) sigma_i per cell along a path.
pub fn volatility_path(market: &MarketSpec, grid: &TimeGrid, path: &AgentPath) -> Vec<DMatrix<f64>> {
    let d = market.d;
    let prices = price_path(market, grid, path);
    (0..grid.n_steps())
        .map(|i| {
            let sig = market.sigma_at(grid.node(i));
            DMatrix::from_fn(d, d, |a, j| prices[i * d + a] * sig[(a, j)])
        })
        .collect()
}

/// dW_hat_i = dW_i + phi_i dt.
pub fn w_hat_increments(path: &AgentPath, phi: &[f64], grid: &TimeGrid) -> Vec<f64> {
    let dt = grid.dt();
    path.dw.iter().zip(phi).map(|(w, p)| w + p * dt).collect()
}

/// X_{i+1} = X_i + theta_i . (phi_i dt + dW_i), per node.
pub fn wealth_path(x0: f64, theta: &StrategyPath, phi: &[f64], grid: &TimeGrid, path: &AgentPath) -> Result<Vec<f64>> {
    if theta.param != Parametrization::Theta {
        return Err(config("wealth accumulation expects a theta-parametrized strategy"));
    }
    let d = theta.d;
    let dw_hat = w_hat_increments(path, phi, grid);
    let mut x = x0;
    let mut out = Vec::with_capacity(grid.n_nodes());
    out.push(x);
    for i in 0..grid.n_steps() {
        x += dot(theta.at(i), &dw_hat[i * d..(i + 1) * d]);
        out.push(x);
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
