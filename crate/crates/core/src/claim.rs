//! Bounded terminal claims read from the terminal state (Brownian level, counts).

use serde::{Deserialize, Serialize};

use crate::basis::{JumpSpec, Split};
use crate::error::{config, Error, Result};

/// Which atoms feed the loss L_T = sum_k N_k(T) mark_k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AtomSelector {
    #[default]
    All,
    Common,
    Idiosyncratic,
}

impl AtomSelector {
    fn includes(&self, split: Split) -> bool {
        match self {
            AtomSelector::All => true,
            AtomSelector::Common => split == Split::Common,
            AtomSelector::Idiosyncratic => split == Split::Idiosyncratic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum ClaimSpec {
    Zero,
    Constant { value: f64 },
    /// min((L_T - k1)^+, k2): losses above k1, capped at k2.
    StopLoss {
        k1: f64,
        k2: f64,
        #[serde(default)]
        atoms: AtomSelector,
        #[serde(default)]
        coordinate: usize,
    },
    /// `payout` when at least `threshold` selected events occurred.
    Digital {
        threshold: u32,
        payout: f64,
        #[serde(default)]
        atoms: AtomSelector,
    },
    /// clamp(slope W_T, -cap, cap) on the first Brownian coordinate.
    Collar { slope: f64, cap: f64 },
    /// slope W_T; unbounded and therefore rejected by validation.
    Linear { slope: f64 },
}

impl ClaimSpec {
    /// sup |B|, or `None` for unbounded forms.
    pub fn bound(&self) -> Option<f64> {
        match self {
            ClaimSpec::Zero => Some(0.0),
            ClaimSpec::Constant { value } => Some(value.abs()),
            ClaimSpec::StopLoss { k2, .. } => Some(k2.abs()),
            ClaimSpec::Digital { payout, .. } => Some(payout.abs()),
            ClaimSpec::Collar { cap, .. } => Some(cap.abs()),
            ClaimSpec::Linear { .. } => None,
        }
    }

    pub fn validate(&self, spec: &JumpSpec) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            ClaimSpec::Linear { .. } => {
                return Err(config("claim form `linear` is unbounded; the claim must be bounded"));
            }
            ClaimSpec::Constant { value } if !value.is_finite() => return Err(config("claim value must be finite")),
            ClaimSpec::StopLoss { k1, k2, coordinate, .. } => {
                if !finite(&[*k1, *k2]) || *k2 < 0.0 {
                    return Err(config("stop-loss needs finite k1 and k2 >= 0"));
                }
                if let Some(a) = spec.atoms().first() {
                    if *coordinate >= a.mark.len() {
                        return Err(config(format!("stop-loss coordinate {coordinate} exceeds the mark dimension")));
                    }
                }
            }
            ClaimSpec::Digital { payout, .. } if !payout.is_finite() => return Err(config("digital payout must be finite")),
            ClaimSpec::Collar { slope, cap } if !finite(&[*slope, *cap]) => return Err(config("collar parameters must be finite")),
            _ => {}
        }
        Ok(())
    }

    fn selected(&self) -> Option<AtomSelector> {
        match self {
            ClaimSpec::StopLoss { atoms, .. } | ClaimSpec::Digital { atoms, .. } => Some(*atoms),
            _ => None,
        }
    }

    /// Whether the payoff depends on idiosyncratic events (then it is not common-measurable).
    pub fn reads_idiosyncratic(&self, spec: &JumpSpec) -> bool {
        match self.selected() {
            Some(sel) => spec.atoms().iter().any(|a| a.split == Split::Idiosyncratic && sel.includes(a.split)),
            None => false,
        }
    }

    pub fn reads_brownian(&self) -> bool {
        matches!(self, ClaimSpec::Collar { .. } | ClaimSpec::Linear { .. })
    }

    pub fn reads_jumps(&self, spec: &JumpSpec) -> bool {
        self.selected().is_some() && spec.n_atoms() > 0
    }

    pub fn payoff(&self, spec: &JumpSpec, w: &[f64], counts: &[u32]) -> f64 {
        let loss = |sel: AtomSelector, coord: usize| -> f64 {
            spec.atoms()
                .iter()
                .zip(counts)
                .filter(|(a, _)| sel.includes(a.split))
                .map(|(a, n)| *n as f64 * a.mark[coord])
                .sum()
        };
        match self {
            ClaimSpec::Zero => 0.0,
            ClaimSpec::Constant { value } => *value,
            ClaimSpec::StopLoss { k1, k2, atoms, coordinate } => (loss(*atoms, *coordinate) - k1).max(0.0).min(*k2),
            ClaimSpec::Digital { threshold, payout, atoms } => {
                let n: u32 = spec.atoms().iter().zip(counts).filter(|(a, _)| atoms.includes(a.split)).map(|(_, n)| *n).sum();
                if n >= *threshold { *payout } else { 0.0 }
            }
            ClaimSpec::Collar { slope, cap } => (slope * w[0]).clamp(-cap, *cap),
            ClaimSpec::Linear { slope } => slope * w[0],
        }
    }

    /// Payoff with the bound asserted.
    pub fn checked_payoff(&self, spec: &JumpSpec, w: &[f64], counts: &[u32]) -> Result<f64> {
        let b = self.payoff(spec, w, counts);
        match self.bound() {
            Some(bound) if b.abs() <= bound * (1.0 + 1e-12) + 1e-15 => Ok(b),
            _ => Err(Error::ModelViolation(format!("claim value {b} exceeds its declared bound"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{IntensityForm, MarkAtom};

    fn spec() -> JumpSpec {
        JumpSpec::from_form(
            vec![
                MarkAtom { mark: vec![1.0], weight: 1.0, split: Split::Common },
                MarkAtom { mark: vec![0.5], weight: 1.0, split: Split::Idiosyncratic },
            ],
            1.0,
            IntensityForm::Constant { value: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn stop_loss_layers() {
        let c = ClaimSpec::StopLoss { k1: 1.0, k2: 1.5, atoms: AtomSelector::All, coordinate: 0 };
        let s = spec();
        assert_eq!(c.payoff(&s, &[0.0], &[1, 0]), 0.0);
        assert_eq!(c.payoff(&s, &[0.0], &[1, 2]), 1.0);
        assert_eq!(c.payoff(&s, &[0.0], &[4, 4]), 1.5);
        assert!(c.reads_idiosyncratic(&s));
        let common = ClaimSpec::StopLoss { k1: 1.0, k2: 1.5, atoms: AtomSelector::Common, coordinate: 0 };
        assert!(!common.reads_idiosyncratic(&s));
        assert_eq!(common.payoff(&s, &[0.0], &[3, 9]), 1.5);
    }

    #[test]
    fn unbounded_claims_rejected() {
        assert!(ClaimSpec::Linear { slope: 1.0 }.validate(&spec()).is_err());
        assert!(ClaimSpec::Collar { slope: 1.0, cap: 0.5 }.validate(&spec()).is_ok());
        assert_eq!(ClaimSpec::Collar { slope: 1.0, cap: 0.5 }.payoff(&spec(), &[2.0], &[0, 0]), 0.5);
    }
}
