use rayon::prelude::*;

use super::grid::TimeGrid;
use super::jumps::{JumpEvent, JumpSpec, JumpState};
use super::simulate::{simulate_brownian, simulate_jump_measure, BrownianPaths};
use crate::error::Result;

/// One Monte Carlo world set: common Brownian paths, common jump events and
/// per-agent idiosyncratic events, all on one grid. Immutable once built.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    n_atoms: usize,
    n_agents: usize,
    brownian: BrownianPaths,
    common: Vec<Vec<JumpEvent>>,
    idio: Vec<Vec<Vec<JumpEvent>>>,
    seed: u64,
}

impl PathBundle {
    pub fn simulate(
        grid: TimeGrid,
        d: usize,
        spec: &JumpSpec,
        n_paths: usize,
        n_agents: usize,
        seed: u64,
    ) -> Result<Self> {
        let brownian = simulate_brownian(&grid, d, n_paths, seed)?;
        let parts = simulate_jump_measure(&grid, spec, n_agents, n_paths, seed, Some(&brownian))?;
        Ok(Self {
            grid,
            n_atoms: spec.n_atoms(),
            n_agents,
            brownian,
            common: parts.common,
            idio: parts.idio,
            seed,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.brownian.d
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn n_paths(&self) -> usize {
        self.brownian.n_paths
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn brownian(&self) -> &BrownianPaths {
        &self.brownian
    }

    pub fn common_events(&self, path: usize) -> &[JumpEvent] {
        &self.common[path]
    }

    pub fn idio_events(&self, path: usize, agent: usize) -> &[JumpEvent] {
        &self.idio[path][agent]
    }

    /// The path as seen by one agent: common noise plus its own events.
    pub fn agent_path(&self, path: usize, agent: usize) -> AgentPath {
        let n = self.grid.n_steps();
        let k = self.n_atoms;
        let mut dn = vec![0u32; n * k];
        let own = self.idio.get(path).and_then(|v| v.get(agent)).map_or(&[][..], |v| v.as_slice());
        for e in self.common[path].iter().chain(own) {
            dn[e.cell * k + e.atom] += 1;
        }
        AgentPath::from_increments(self.d(), k, self.brownian.path(path).to_vec(), dn)
    }

    /// Agent paths for every (common path, agent) pair, row-major in the common path.
    pub fn agent_paths(&self) -> Vec<AgentPath> {
        let m = self.n_agents.max(1);
        (0..self.n_paths() * m)
            .into_par_iter()
            .map(|idx| self.agent_path(idx / m, idx % m))
            .collect()
    }
}

/// Cell increments and node states of one agent's noise.
///
/// `dw` holds increments of the reference Brownian motion W (under the tilted
/// measure W is no longer driftless, but the bookkeeping is the same).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPath {
    pub d: usize,
    pub k: usize,
    /// `[cell][coordinate]`
    pub dw: Vec<f64>,
    /// `[cell][atom]`
    pub dn: Vec<u32>,
    /// `[node][coordinate]`
    pub w: Vec<f64>,
    /// `[node][atom]`
    pub counts: Vec<u32>,
}

impl AgentPath {
    pub fn from_increments(d: usize, k: usize, dw: Vec<f64>, dn: Vec<u32>) -> Self {
        let n = dw.len() / d;
        debug_assert_eq!(dn.len(), n * k);
        let mut w = vec![0.0; (n + 1) * d];
        let mut counts = vec![0u32; (n + 1) * k];
        for i in 0..n {
            for j in 0..d {
                w[(i + 1) * d + j] = w[i * d + j] + dw[i * d + j];
            }
            for a in 0..k {
                counts[(i + 1) * k + a] = counts[i * k + a] + dn[i * k + a];
            }
        }
        Self { d, k, dw, dn, w, counts }
    }

    pub fn n_cells(&self) -> usize {
        self.dw.len() / self.d
    }

    pub fn dw_at(&self, cell: usize) -> &[f64] {
        &self.dw[cell * self.d..(cell + 1) * self.d]
    }

    pub fn dn_at(&self, cell: usize) -> &[u32] {
        &self.dn[cell * self.k..(cell + 1) * self.k]
    }

    pub fn w_at(&self, node: usize) -> &[f64] {
        &self.w[node * self.d..(node + 1) * self.d]
    }

    pub fn counts_at(&self, node: usize) -> &[u32] {
        &self.counts[node * self.k..(node + 1) * self.k]
    }

    pub fn state(&self, node: usize) -> JumpState<'_> {
        JumpState { w: self.w_at(node), counts: self.counts_at(node) }
    }

    pub fn terminal_w(&self) -> &[f64] {
        self.w_at(self.n_cells())
    }

    pub fn terminal_counts(&self) -> &[u32] {
        self.counts_at(self.n_cells())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{IntensityForm, MarkAtom, Split};

    #[test]
    fn common_events_shared_by_agents() {
        let spec = JumpSpec::from_form(
            vec![
                MarkAtom { mark: vec![1.0], weight: 2.0, split: Split::Common },
                MarkAtom { mark: vec![1.0], weight: 2.0, split: Split::Idiosyncratic },
            ],
            1.0,
            IntensityForm::Constant { value: 1.0 },
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let b = PathBundle::simulate(grid, 1, &spec, 50, 3, 9).unwrap();
        for p in 0..50 {
            let paths: Vec<_> = (0..3).map(|a| b.agent_path(p, a)).collect();
            for a in 1..3 {
                assert_eq!(paths[a].dw, paths[0].dw);
                for i in 0..4 {
                    assert_eq!(paths[a].dn_at(i)[0], paths[0].dn_at(i)[0]);
                }
            }
        }
        assert!(b.idio_events(0, 0).iter().all(|e| e.atom == 1));
    }

    #[test]
    fn node_states_accumulate_increments() {
        let p = AgentPath::from_increments(1, 1, vec![0.5, -0.25], vec![1, 2]);
        assert_eq!(p.w, vec![0.0, 0.5, 0.25]);
        assert_eq!(p.counts, vec![0, 1, 3]);
        assert_eq!(p.terminal_counts(), &[3]);
    }
}
