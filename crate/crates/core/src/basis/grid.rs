use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Uniform time grid on [0, T].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(config(format!("time horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(config("time grid needs at least one step"));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Node `i`; the last node is exactly the horizon.
    pub fn node(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.node(i)).collect()
    }

    /// Index of the cell `[t_i, t_{i+1})` containing `t`; `T` belongs to the last cell.
    pub fn cell_of(&self, t: f64) -> usize {
        let i = (t / self.dt()).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.n_steps - 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_cells_on_unit_horizon() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn single_cell() {
        assert_eq!(TimeGrid::new(1.0, 1).unwrap().nodes(), vec![0.0, 1.0]);
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(-1.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(f64::NAN, 4).is_err());
    }

    #[test]
    fn nodes_strictly_increasing_and_end_at_horizon() {
        let g = TimeGrid::new(0.7, 13).unwrap();
        let n = g.nodes();
        assert!(n.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*n.last().unwrap(), 0.7);
        assert_eq!(g.cell_of(0.7), 12);
        assert_eq!(g.cell_of(0.0), 0);
    }
}
