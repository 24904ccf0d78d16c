//! Least-squares regression on standardized polynomial features.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// Rows per partial Gram matrix; fixed so that sums do not depend on thread count.
const CHUNK: usize = 2048;

/// Monomials of total degree `1..=degree` in the features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyBasis {
    pub degree: usize,
}

fn monomials(n_features: usize, degree: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    fn rec(start: usize, n: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        for f in start..n {
            cur[f] += 1;
            out.push(cur.clone());
            if left > 1 {
                rec(f, n, left - 1, cur, out);
            }
            cur[f] -= 1;
        }
    }
    if degree > 0 {
        rec(0, n_features, degree, &mut vec![0; n_features], &mut out);
    }
    out.sort_by_key(|e| e.iter().map(|x| *x as u32).sum::<u32>());
    out
}

/// Coefficients for several targets regressed on the same design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    active: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    exps: Vec<Vec<u8>>,
    pub coefs: Vec<Vec<f64>>,
    pub ridge_used: bool,
}

impl RegressionFit {
    pub fn n_columns(&self) -> usize {
        1 + self.exps.len()
    }

    pub fn design_row(&self, x: &[f64], row: &mut Vec<f64>) {
        row.clear();
        row.push(1.0);
        let z: Vec<f64> = self.active.iter().enumerate().map(|(j, f)| (x[*f] - self.mean[j]) / self.scale[j]).collect();
        for e in &self.exps {
            let mut v = 1.0;
            for (zj, p) in z.iter().zip(e) {
                for _ in 0..*p {
                    v *= zj;
                }
            }
            row.push(v);
        }
    }

    /// Fitted value of target `j` at features `x`.
    pub fn eval(&self, j: usize, x: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(self.n_columns());
        self.design_row(x, &mut row);
        row.iter().zip(&self.coefs[j]).map(|(a, b)| a * b).sum()
    }

    pub fn eval_all(&self, x: &[f64], out: &mut [f64]) {
        let mut row = Vec::with_capacity(self.n_columns());
        self.design_row(x, &mut row);
        for (o, c) in out.iter_mut().zip(&self.coefs) {
            *o = row.iter().zip(c).map(|(a, b)| a * b).sum();
        }
    }

    /// Least squares of each target on the basis evaluated at `features`
    /// (`rows x n_features`, row-major). Constant features are dropped. If the Gram
    /// matrix is not positive definite a ridge term `ridge * trace / p` is added.
    pub fn fit(basis: &PolyBasis, features: &[f64], n_features: usize, targets: &[&[f64]], ridge: f64) -> Self {
        let rows = if n_features == 0 { targets.first().map_or(0, |t| t.len()) } else { features.len() / n_features };
        let mut active = Vec::new();
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        for f in 0..n_features {
            let col = (0..rows).map(|r| features[r * n_features + f]);
            let m = col.clone().sum::<f64>() / rows.max(1) as f64;
            let v = col.map(|x| (x - m) * (x - m)).sum::<f64>() / rows.max(1) as f64;
            if v.sqrt() > 1e-12 * (1.0 + m.abs()) {
                active.push(f);
                mean.push(m);
                scale.push(v.sqrt());
            }
        }
        let exps = monomials(active.len(), basis.degree);
        let mut fit = Self { active, mean, scale, exps, coefs: vec![Vec::new(); targets.len()], ridge_used: false };
        let p = fit.n_columns();
        let m = targets.len();

        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..rows.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = vec![0.0; p * p];
                let mut b = vec![0.0; p * m];
                let mut row = Vec::with_capacity(p);
                for r in c * CHUNK..((c + 1) * CHUNK).min(rows) {
                    fit.design_row(&features[r * n_features..(r + 1) * n_features], &mut row);
                    for a in 0..p {
                        for bb in a..p {
                            g[a * p + bb] += row[a] * row[bb];
                        }
                        for (t, tgt) in targets.iter().enumerate() {
                            b[t * p + a] += row[a] * tgt[r];
                        }
                    }
                }
                (g, b)
            })
            .collect();
        let mut g = vec![0.0; p * p];
        let mut b = vec![0.0; p * m];
        for (pg, pb) in partials {
            g.iter_mut().zip(pg).for_each(|(x, y)| *x += y);
            b.iter_mut().zip(pb).for_each(|(x, y)| *x += y);
        }
        let gram = DMatrix::from_fn(p, p, |i, j| if i <= j { g[i * p + j] } else { g[j * p + i] });
        let chol = match gram.clone().cholesky() {
            Some(c) if well_conditioned(&c) => c,
            _ => {
                fit.ridge_used = true;
                let bump = ridge.max(1e-12) * gram.trace() / p as f64;
                let mut reg = gram.clone();
                for i in 0..p {
                    reg[(i, i)] += bump.max(1e-300);
                }
                match reg.cholesky() {
                    Some(c) => c,
                    None => {
                        // Degenerate data (e.g. no rows): fall back to the zero fit.
                        fit.coefs = vec![vec![0.0; p]; m];
                        return fit;
                    }
                }
            }
        };
        for t in 0..m {
            let rhs = DVector::from_column_slice(&b[t * p..(t + 1) * p]);
            fit.coefs[t] = chol.solve(&rhs).iter().copied().collect();
        }
        fit
    }
}

fn well_conditioned(c: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = c.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    min.is_finite() && min > 1e-12 * max
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(2, 2).len(), 5);
        assert_eq!(monomials(3, 2).len(), 9);
        assert_eq!(monomials(2, 1).len(), 2);
        assert!(monomials(0, 2).is_empty());
    }

    #[test]
    fn recovers_quadratic_exactly() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 50.0 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x).collect();
        let fit = RegressionFit::fit(&PolyBasis { degree: 2 }, &xs, 1, &[&ys], 1e-8);
        assert!(!fit.ridge_used);
        for x in [-1.3, 0.0, 0.7] {
            assert!((fit.eval(0, &[x]) - (1.0 - 2.0 * x + 0.5 * x * x)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_features_are_dropped() {
        let feats: Vec<f64> = (0..50).flat_map(|i| [i as f64, 3.0]).collect();
        let ys: Vec<f64> = (0..50).map(|i| 2.0 + i as f64).collect();
        let fit = RegressionFit::fit(&PolyBasis { degree: 2 }, &feats, 2, &[&ys], 1e-8);
        assert_eq!(fit.n_columns(), 3);
        assert!((fit.eval(0, &[10.0, 3.0]) - 12.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_features_fall_back_to_ridge() {
        let feats: Vec<f64> = (0..50).flat_map(|i| [i as f64, 2.0 * i as f64]).collect();
        let ys: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = RegressionFit::fit(&PolyBasis { degree: 1 }, &feats, 2, &[&ys], 1e-8);
        assert!(fit.ridge_used);
        assert!((fit.eval(0, &[10.0, 20.0]) - 10.0).abs() < 1e-3);
    }
}
