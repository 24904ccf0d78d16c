use serde::Serialize;

use crate::basis::JumpSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GeneratorKind {
    /// Exponential-utility driver with market price of risk.
    SingleAgent,
    /// Pure jump-convexity driver under the tilted compensator.
    Auxiliary,
}

/// (exp(alpha u) - 1 - alpha u) / alpha, computed without cancellation.
#[inline]
pub fn jump_convexity(alpha: f64, u: f64) -> f64 {
    let x = alpha * u;
    if x.abs() < 1e-3 {
        x * x * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0)))) / alpha
    } else {
        (x.exp_m1() - x) / alpha
    }
}

/// Driver of dY_t = drift dt + Z dW + U d(mu - nu).
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub alpha: f64,
    /// Market price of risk per cell, `[cell][coordinate]`; ignored by the auxiliary kind.
    pub phi: Vec<f64>,
    pub d: usize,
    /// Compensator: original for the single-agent kind, tilted for the auxiliary kind.
    pub spec: JumpSpec,
    /// Clamp applied to u inside the driver.
    pub u_max: f64,
}

impl GeneratorSpec {
    pub fn single_agent(alpha: f64, phi: Vec<f64>, d: usize, spec: JumpSpec) -> Self {
        Self { kind: GeneratorKind::SingleAgent, alpha, phi, d, spec, u_max: 50.0 / alpha }
    }

    pub fn auxiliary(alpha: f64, d: usize, n_cells: usize, spec: JumpSpec) -> Self {
        Self {
            kind: GeneratorKind::Auxiliary,
            alpha,
            phi: vec![0.0; n_cells * d],
            d,
            spec,
            u_max: 50.0 / alpha,
        }
    }

    pub fn phi_at(&self, cell: usize) -> &[f64] {
        &self.phi[cell * self.d..(cell + 1) * self.d]
    }

    /// Drift at (z, u) on `cell`, with `rates[k] = zeta lambda_k` at the current state.
    pub fn drift(&self, cell: usize, z: &[f64], u: &[f64], rates: &[f64]) -> f64 {
        let a = self.alpha;
        let jumps: f64 = u
            .iter()
            .zip(rates)
            .map(|(uk, r)| jump_convexity(a, uk.clamp(-self.u_max, self.u_max)) * r)
            .sum();
        match self.kind {
            GeneratorKind::SingleAgent => {
                let phi = self.phi_at(cell);
                let zphi: f64 = z.iter().zip(phi).map(|(x, p)| x * p).sum();
                let phi2: f64 = phi.iter().map(|p| p * p).sum();
                zphi + phi2 / (2.0 * a) - jumps
            }
            GeneratorKind::Auxiliary => -jumps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_point_values() {
        let g = GeneratorSpec::single_agent(2.0, vec![0.2], 1, JumpSpec::empty());
        assert!((g.drift(0, &[0.0], &[], &[]) - 0.01).abs() < 1e-16);
        let a = GeneratorSpec::auxiliary(2.0, 1, 1, JumpSpec::empty());
        assert_eq!(a.drift(0, &[0.3], &[0.0], &[1.0]), 0.0);
        let g0 = GeneratorSpec::single_agent(2.0, vec![0.0], 1, JumpSpec::empty());
        assert_eq!(g0.drift(0, &[0.0], &[0.0], &[1.0]), 0.0);
    }

    #[test]
    fn convexity_is_accurate_near_zero() {
        for &u in &[0.01, 0.3, -2.0] {
            let exact = ((2.0f64 * u).exp() - 1.0 - 2.0 * u) / 2.0;
            assert!((jump_convexity(2.0, u) - exact).abs() < 1e-10 * exact.abs(), "u={u}");
        }
        for &u in &[1e-9, -1e-7, 1e-5] {
            let leading = 2.0 * u * u / 2.0;
            assert!((jump_convexity(2.0, u) / leading - 1.0).abs() < 1e-4, "u={u}");
        }
        let (a, b) = (jump_convexity(2.0, 0.000499), jump_convexity(2.0, 0.000501));
        assert!(a < b && (b - a) / a < 0.01);
        assert!(jump_convexity(1.0, -3.0) > 0.0);
    }
}
