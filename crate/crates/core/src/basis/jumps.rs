use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use crate::error::{config, Error, Result};

/// Which part of the noise an atom belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Common,
    Idiosyncratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkAtom {
    pub mark: Vec<f64>,
    /// Mass of the atom under the finite mark measure.
    pub weight: f64,
    pub split: Split,
}

/// State visible to the intensity density at the left end of a cell.
#[derive(Debug, Clone, Copy)]
pub struct JumpState<'a> {
    /// Common Brownian state W(t-).
    pub w: &'a [f64],
    /// Running event counts per atom, N_k(t-).
    pub counts: &'a [u32],
}

/// Intensity density zeta(t, state, e_k).
pub trait Intensity: Send + Sync + fmt::Debug {
    fn density(&self, t: f64, cell: usize, state: &JumpState<'_>, atom: usize) -> f64;
}

/// Built-in intensity densities selectable from scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum IntensityForm {
    Constant { value: f64 },
    /// `values[j]` applies on `[breaks[j-1], breaks[j])`, with `breaks` strictly increasing.
    PiecewiseTime { breaks: Vec<f64>, values: Vec<f64> },
    /// `min(base + slope * N_k(t-), cap)`: self-exciting in the atom's own count.
    StateScaled { base: f64, slope: f64, cap: f64 },
}

impl IntensityForm {
    fn check(&self) -> Result<()> {
        match self {
            Self::Constant { value } if !value.is_finite() => {
                Err(config("constant intensity must be finite"))
            }
            Self::PiecewiseTime { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(config(format!(
                        "piecewise intensity needs {} values for {} breaks, got {}",
                        breaks.len() + 1,
                        breaks.len(),
                        values.len()
                    )));
                }
                if breaks.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(config("piecewise intensity breaks must be strictly increasing"));
                }
                Ok(())
            }
            Self::StateScaled { base, slope, cap } if !(base.is_finite() && slope.is_finite() && cap.is_finite()) => {
                Err(config("state-scaled intensity parameters must be finite"))
            }
            _ => Ok(()),
        }
    }
}

impl Intensity for IntensityForm {
    fn density(&self, t: f64, _cell: usize, state: &JumpState<'_>, atom: usize) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::PiecewiseTime { breaks, values } => {
                let j = breaks.partition_point(|b| *b <= t);
                values[j]
            }
            Self::StateScaled { base, slope, cap } => {
                let n = state.counts.get(atom).copied().unwrap_or(0) as f64;
                (base + slope * n).min(*cap)
            }
        }
    }
}

/// Finite-atom integer-valued random measure with compensator zeta(t, e) lambda(de) dt.
#[derive(Debug, Clone)]
pub struct JumpSpec {
    atoms: Vec<MarkAtom>,
    c_nu: f64,
    intensity: Arc<dyn Intensity>,
}

impl JumpSpec {
    pub fn new(atoms: Vec<MarkAtom>, c_nu: f64, intensity: Arc<dyn Intensity>) -> Result<Self> {
        if !(c_nu.is_finite() && c_nu >= 0.0) {
            return Err(config(format!("intensity bound c_nu must be finite and nonnegative, got {c_nu}")));
        }
        let dim = atoms.first().map(|a| a.mark.len());
        for (k, a) in atoms.iter().enumerate() {
            if a.mark.is_empty() || Some(a.mark.len()) != dim {
                return Err(config(format!("atom {k}: marks must share one nonzero dimension")));
            }
            if a.mark.iter().any(|m| !m.is_finite()) || a.mark.iter().all(|m| *m == 0.0) {
                return Err(config(format!("atom {k}: mark must be finite and nonzero")));
            }
            if !(a.weight.is_finite() && a.weight > 0.0) {
                return Err(config(format!("atom {k}: weight must be positive and finite")));
            }
        }
        Ok(Self { atoms, c_nu, intensity })
    }

    pub fn from_form(atoms: Vec<MarkAtom>, c_nu: f64, form: IntensityForm) -> Result<Self> {
        form.check()?;
        Self::new(atoms, c_nu, Arc::new(form))
    }

    /// A spec without atoms (pure Brownian noise).
    pub fn empty() -> Self {
        Self { atoms: Vec::new(), c_nu: 0.0, intensity: Arc::new(IntensityForm::Constant { value: 0.0 }) }
    }

    pub fn atoms(&self) -> &[MarkAtom] {
        &self.atoms
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn c_nu(&self) -> f64 {
        self.c_nu
    }

    pub fn intensity(&self) -> &Arc<dyn Intensity> {
        &self.intensity
    }

    pub fn atoms_with(&self, split: Split) -> Vec<usize> {
        (0..self.atoms.len()).filter(|k| self.atoms[*k].split == split).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// zeta at the left endpoint of a cell, checked against `[0, c_nu]`.
    pub fn zeta(&self, t: f64, cell: usize, state: &JumpState<'_>, atom: usize) -> Result<f64> {
        let z = self.intensity.density(t, cell, state, atom);
        let slack = 1e-12 * (1.0 + self.c_nu);
        if !(z >= -slack && z <= self.c_nu + slack) {
            return Err(Error::ModelViolation(format!(
                "intensity density {z} for atom {atom} at t = {t} leaves the compensator bound 0 <= zeta <= c_nu = {}",
                self.c_nu
            )));
        }
        Ok(z.clamp(0.0, self.c_nu))
    }

    /// zeta(t, e_k) * lambda_k.
    pub fn rate(&self, t: f64, cell: usize, state: &JumpState<'_>, atom: usize) -> Result<f64> {
        Ok(self.zeta(t, cell, state, atom)? * self.atoms[atom].weight)
    }

    /// Evaluates zeta on every grid node for running counts `0..=max_count` per atom
    /// (Brownian state at the origin) and reports the first breach of the bound.
    pub fn check_by_sampling(&self, grid: &TimeGrid, d: usize, max_count: u32) -> Result<()> {
        let w = vec![0.0; d];
        let k = self.n_atoms();
        for cell in 0..grid.n_steps() {
            let t = grid.node(cell);
            for n in 0..=max_count {
                let counts = vec![n; k];
                let state = JumpState { w: &w, counts: &counts };
                for atom in 0..k {
                    self.zeta(t, cell, &state, atom)?;
                }
            }
        }
        Ok(())
    }
}

/// sum_k g(e_k) zeta(t, state, e_k) lambda_k.
pub fn compensator_integral(
    spec: &JumpSpec,
    g: impl Fn(&MarkAtom) -> f64,
    t: f64,
    cell: usize,
    state: &JumpState<'_>,
) -> Result<f64> {
    let mut total = 0.0;
    for (k, atom) in spec.atoms.iter().enumerate() {
        let v = g(atom);
        if v != 0.0 {
            total += v * spec.rate(t, cell, state, k)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Owner {
    Common,
    Agent(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub cell: usize,
    pub time: f64,
    pub atom: usize,
    pub owner: Owner,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(mark: f64, weight: f64, split: Split) -> MarkAtom {
        MarkAtom { mark: vec![mark], weight, split }
    }

    fn state<'a>(counts: &'a [u32]) -> JumpState<'a> {
        JumpState { w: &[], counts }
    }

    #[test]
    fn null_integrand_gives_zero() {
        let spec = JumpSpec::from_form(vec![atom(1.0, 3.0, Split::Common)], 1.0, IntensityForm::Constant { value: 1.0 }).unwrap();
        assert_eq!(compensator_integral(&spec, |_| 0.0, 0.0, 0, &state(&[0])).unwrap(), 0.0);
    }

    #[test]
    fn single_atom_sum() {
        let spec = JumpSpec::from_form(vec![atom(1.0, 3.0, Split::Common)], 1.0, IntensityForm::Constant { value: 1.0 }).unwrap();
        assert_eq!(compensator_integral(&spec, |_| 2.0, 0.0, 0, &state(&[0])).unwrap(), 6.0);
    }

    #[test]
    fn linear_in_weights() {
        let spec = JumpSpec::from_form(
            vec![atom(1.0, 1.0, Split::Common), atom(2.0, 2.0, Split::Idiosyncratic)],
            1.0,
            IntensityForm::Constant { value: 0.5 },
        )
        .unwrap();
        assert_eq!(compensator_integral(&spec, |_| 1.0, 0.0, 0, &state(&[0, 0])).unwrap(), 1.5);
    }

    #[test]
    fn bound_breach_is_a_model_violation() {
        let spec = JumpSpec::from_form(vec![atom(1.0, 1.0, Split::Common)], 2.0, IntensityForm::Constant { value: 5.0 }).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let err = spec.check_by_sampling(&grid, 1, 2).unwrap_err();
        assert!(matches!(err, Error::ModelViolation(_)));
        assert!(err.to_string().contains("c_nu"));
    }

    #[test]
    fn state_scaled_caps_at_bound() {
        let f = IntensityForm::StateScaled { base: 0.5, slope: 0.5, cap: 1.5 };
        assert_eq!(f.density(0.0, 0, &state(&[0]), 0), 0.5);
        assert_eq!(f.density(0.0, 0, &state(&[1]), 0), 1.0);
        assert_eq!(f.density(0.0, 0, &state(&[7]), 0), 1.5);
    }

    #[test]
    fn piecewise_picks_segment() {
        let f = IntensityForm::PiecewiseTime { breaks: vec![0.5], values: vec![1.0, 2.0] };
        assert_eq!(f.density(0.25, 0, &state(&[]), 0), 1.0);
        assert_eq!(f.density(0.5, 0, &state(&[]), 0), 2.0);
    }

    #[test]
    fn zero_marks_rejected() {
        assert!(JumpSpec::from_form(vec![atom(0.0, 1.0, Split::Common)], 1.0, IntensityForm::Constant { value: 1.0 }).is_err());
        assert!(JumpSpec::from_form(vec![atom(1.0, 0.0, Split::Common)], 1.0, IntensityForm::Constant { value: 1.0 }).is_err());
    }
}
