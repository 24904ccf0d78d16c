//! Exact recombining lattice for one Brownian coordinate and finitely many atoms.
//!
//! Each cell branches exclusively: a jump of atom k with probability
//! p_k = zeta lambda_k dt (Brownian level unchanged), otherwise a Brownian move
//! of +-s with probability (1 - q) / 2 each, q = sum_k p_k. The step
//! s = sqrt(dt / (1 - q)) keeps Var(dW) = dt; without jumps it is +-sqrt(dt).
//! With one branch per martingale direction the one-step martingale
//! representation is exact, so Y_{i+1} - Y_i = drift dt + Z dW + sum_k U_k (dN_k - p_k)
//! holds on every branch.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::generator::GeneratorSpec;
use super::{BsdeDiagnostics, BsdePathValues, SolutionField};
use crate::basis::{AgentPath, JumpSpec, JumpState, TimeGrid};
use crate::error::{config, Error, Result};
use crate::rng::{Domain, StreamKey};

#[derive(Debug, Clone)]
pub struct Branching {
    pub up: usize,
    pub down: usize,
    /// Brownian step s.
    pub step: f64,
    /// Child index after a jump of each atom.
    pub jump: Vec<usize>,
    /// Jump probabilities p_k.
    pub prob: Vec<f64>,
    /// zeta lambda_k at the node.
    pub rate: Vec<f64>,
}

impl Branching {
    pub fn brownian_prob(&self) -> f64 {
        0.5 * (1.0 - self.prob.iter().sum::<f64>())
    }
}

#[derive(Debug, Clone)]
pub struct LatticeNode {
    /// Level of the driving random walk.
    pub level: f64,
    /// Reference Brownian state: level minus the accumulated drift.
    pub w: f64,
    pub counts: Vec<u32>,
    pub branch: Option<Branching>,
}

#[derive(Debug, Clone)]
pub struct Lattice {
    grid: TimeGrid,
    k: usize,
    layers: Vec<Vec<LatticeNode>>,
    index: Vec<HashMap<Vec<u32>, Vec<(f64, usize)>>>,
}

fn level_key(level: f64, dt: f64) -> i64 {
    (level / dt.sqrt() * 1e9).round() as i64
}

impl Lattice {
    /// Builds the lattice for `spec`. `drift[i]` is subtracted from the driver on
    /// cell i to obtain the reference Brownian state (zero for the original measure,
    /// phi for the tilted one where the driver is W + int phi dt).
    pub fn build(grid: TimeGrid, spec: &JumpSpec, drift: &[f64], max_nodes: usize) -> Result<Self> {
        let n = grid.n_steps();
        let k = spec.n_atoms();
        let dt = grid.dt();
        if drift.len() != n {
            return Err(config(format!("lattice drift needs {n} cells, got {}", drift.len())));
        }
        let mut layers: Vec<Vec<LatticeNode>> = Vec::with_capacity(n + 1);
        layers.push(vec![LatticeNode { level: 0.0, w: 0.0, counts: vec![0; k], branch: None }]);
        let mut total = 1usize;
        for i in 0..n {
            let t = grid.node(i);
            let mut next: Vec<LatticeNode> = Vec::new();
            let mut keys: HashMap<(i64, Vec<u32>), usize> = HashMap::new();
            let mut child = |level: f64, w: f64, counts: Vec<u32>, next: &mut Vec<LatticeNode>| -> usize {
                let key = (level_key(level, dt), counts.clone());
                *keys.entry(key).or_insert_with(|| {
                    next.push(LatticeNode { level, w, counts, branch: None });
                    next.len() - 1
                })
            };
            let layer = &mut layers[i];
            for node in layer.iter_mut() {
                let state = JumpState { w: std::slice::from_ref(&node.w), counts: &node.counts };
                let rate = (0..k).map(|a| spec.rate(t, i, &state, a)).collect::<Result<Vec<_>>>()?;
                let prob: Vec<f64> = rate.iter().map(|r| r * dt).collect();
                let q: f64 = prob.iter().sum();
                if q >= 1.0 {
                    return Err(config(format!(
                        "jump probability {q} per cell at t = {t} is not below one; refine the time grid"
                    )));
                }
                let step = (dt / (1.0 - q)).sqrt();
                let shift = drift[i] * dt;
                let up = child(node.level + step, node.w + step - shift, node.counts.clone(), &mut next);
                let down = child(node.level - step, node.w - step - shift, node.counts.clone(), &mut next);
                let jump = (0..k)
                    .map(|a| {
                        let mut c = node.counts.clone();
                        c[a] += 1;
                        child(node.level, node.w - shift, c, &mut next)
                    })
                    .collect();
                node.branch = Some(Branching { up, down, step, jump, prob, rate });
            }
            total += next.len();
            if total > max_nodes {
                return Err(Error::TooLarge { size: total as u64, limit: max_nodes as u64 });
            }
            layers.push(next);
        }
        let index = layers
            .iter()
            .map(|layer| {
                let mut m: HashMap<Vec<u32>, Vec<(f64, usize)>> = HashMap::new();
                for (j, node) in layer.iter().enumerate() {
                    m.entry(node.counts.clone()).or_default().push((node.w, j));
                }
                for v in m.values_mut() {
                    v.sort_by(|a, b| a.0.total_cmp(&b.0));
                }
                m
            })
            .collect();
        Ok(Self { grid, k, layers, index })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_atoms(&self) -> usize {
        self.k
    }

    pub fn layer(&self, i: usize) -> &[LatticeNode] {
        &self.layers[i]
    }

    pub fn n_nodes(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Number of distinct root-to-leaf paths.
    pub fn n_paths(&self) -> f64 {
        let mut count = vec![1.0f64; self.layers[self.grid.n_steps()].len()];
        for i in (0..self.grid.n_steps()).rev() {
            count = self.layers[i]
                .iter()
                .map(|node| {
                    let b = node.branch.as_ref().expect("inner node");
                    count[b.up] + count[b.down] + b.jump.iter().map(|j| count[*j]).sum::<f64>()
                })
                .collect();
        }
        count[0]
    }

    /// Interpolation weights for a state on layer `i`: two (node, weight) pairs.
    fn locate(&self, i: usize, w: f64, counts: &[u32]) -> [(usize, f64); 2] {
        let layer = &self.index[i];
        let mut c = counts.to_vec();
        let list = loop {
            if let Some(l) = layer.get(&c) {
                break l;
            }
            // Off-lattice count vector: step back along the largest count.
            let (a, _) = c.iter().enumerate().max_by_key(|(_, v)| **v).expect("atoms exist when counts miss");
            c[a] -= 1;
        };
        let pos = list.partition_point(|(x, _)| *x <= w);
        if pos == 0 {
            return [(list[0].1, 1.0), (list[0].1, 0.0)];
        }
        if pos == list.len() {
            let last = list[list.len() - 1].1;
            return [(last, 1.0), (last, 0.0)];
        }
        let (x0, j0) = list[pos - 1];
        let (x1, j1) = list[pos];
        let lam = if x1 > x0 { (w - x0) / (x1 - x0) } else { 0.0 };
        [(j0, 1.0 - lam), (j1, lam)]
    }

    /// Every root-to-leaf path when there are at most `max_paths`, otherwise
    /// `max_paths` paths sampled from the branching probabilities.
    pub fn paths(&self, max_paths: usize, seed: u64) -> Vec<LatticePath> {
        if self.n_paths() <= max_paths as f64 {
            let mut out = Vec::new();
            let mut nodes = vec![0usize];
            self.enumerate(0, &mut nodes, 1.0, &mut out);
            out
        } else {
            (0..max_paths)
                .into_par_iter()
                .map(|p| {
                    let mut rng = StreamKey::new(seed, Domain::Lattice).path(p as u64).rng();
                    let mut nodes = vec![0usize];
                    for i in 0..self.grid.n_steps() {
                        let b = self.layers[i][*nodes.last().unwrap()].branch.as_ref().unwrap();
                        let mut u: f64 = rng.gen();
                        let mut next = None;
                        for (a, p) in b.prob.iter().enumerate() {
                            if u < *p {
                                next = Some(b.jump[a]);
                                break;
                            }
                            u -= p;
                        }
                        let next = next.unwrap_or(if u < b.brownian_prob() { b.up } else { b.down });
                        nodes.push(next);
                    }
                    self.make_path(nodes, 1.0 / max_paths as f64)
                })
                .collect()
        }
    }

    fn enumerate(&self, i: usize, nodes: &mut Vec<usize>, prob: f64, out: &mut Vec<LatticePath>) {
        if i == self.grid.n_steps() {
            out.push(self.make_path(nodes.clone(), prob));
            return;
        }
        let b = self.layers[i][nodes[i]].branch.as_ref().unwrap();
        let pb = b.brownian_prob();
        let mut kids = vec![(b.up, pb), (b.down, pb)];
        kids.extend(b.jump.iter().copied().zip(b.prob.iter().copied()));
        for (c, p) in kids {
            nodes.push(c);
            self.enumerate(i + 1, nodes, prob * p, out);
            nodes.pop();
        }
    }

    fn make_path(&self, nodes: Vec<usize>, prob: f64) -> LatticePath {
        let n = self.grid.n_steps();
        let k = self.k;
        let mut dw = Vec::with_capacity(n);
        let mut dn = vec![0u32; n * k];
        for i in 0..n {
            let a = &self.layers[i][nodes[i]];
            let b = &self.layers[i + 1][nodes[i + 1]];
            dw.push(b.w - a.w);
            for j in 0..k {
                dn[i * k + j] = b.counts[j] - a.counts[j];
            }
        }
        LatticePath { nodes, prob, path: AgentPath::from_increments(1, k, dw, dn) }
    }
}

/// One root-to-leaf path with its probability (or sampling weight).
#[derive(Debug, Clone)]
pub struct LatticePath {
    pub nodes: Vec<usize>,
    pub prob: f64,
    pub path: AgentPath,
}

#[derive(Debug, Clone)]
pub struct LatticeSolution {
    lattice: Arc<Lattice>,
    /// `[layer][node]`
    pub y: Vec<Vec<f64>>,
    /// `[cell][node]`
    pub z: Vec<Vec<f64>>,
    /// `[cell][node * k + atom]`
    pub u: Vec<Vec<f64>>,
    /// Conditional tail energy `[layer][node]`.
    pub energy: Vec<Vec<f64>>,
    pub diagnostics: BsdeDiagnostics,
}

/// Backward recursion on the lattice. The driver does not depend on y, so each
/// node is solved explicitly: Z and U are read off the children and
/// Y_i = E_i[Y_{i+1}] - drift(Z, U) dt.
pub fn solve_lattice(
    gen: &GeneratorSpec,
    lattice: Arc<Lattice>,
    terminal: &(dyn Fn(&[f64], &[u32]) -> f64 + Sync),
) -> Result<LatticeSolution> {
    if gen.d != 1 {
        return Err(Error::Unsupported { backend: "lattice", reason: format!("dimension {} (only d = 1)", gen.d) });
    }
    let grid = *lattice.grid();
    let n = grid.n_steps();
    let k = lattice.n_atoms();
    let dt = grid.dt();

    let term: Vec<f64> = lattice.layer(n).iter().map(|nd| terminal(std::slice::from_ref(&nd.w), &nd.counts)).collect();
    if let Some(j) = term.iter().position(|v| !v.is_finite()) {
        return Err(Error::Solver { cell: n, message: format!("terminal value not finite at node {j}") });
    }
    let osc = term.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - term.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut u = vec![Vec::new(); n];
    let mut energy = vec![Vec::new(); n + 1];
    energy[n] = vec![0.0; term.len()];
    y[n] = term;
    let mut step_weight: f64 = 0.0;
    for i in (0..n).rev() {
        let (yn, en) = (&y[i + 1], &energy[i + 1]);
        let solved: Vec<(f64, f64, Vec<f64>, f64, f64)> = lattice
            .layer(i)
            .par_iter()
            .map(|node| {
                let b = node.branch.as_ref().expect("inner node");
                let (yu, yd) = (yn[b.up], yn[b.down]);
                let bar = 0.5 * (yu + yd);
                let zi = (yu - yd) / (2.0 * b.step);
                let ui: Vec<f64> = b.jump.iter().map(|j| yn[*j] - bar).collect();
                let mean = bar + ui.iter().zip(&b.prob).map(|(x, p)| x * p).sum::<f64>();
                let yi = mean - gen.drift(i, &[zi], &ui, &b.rate) * dt;
                let pb = b.brownian_prob();
                let e = pb * (en[b.up] + en[b.down])
                    + b.jump.iter().zip(&b.prob).map(|(j, p)| p * en[*j]).sum::<f64>()
                    + zi * zi * dt;
                let w = ui.iter().zip(&b.prob).map(|(x, p)| p * (gen.alpha * x).exp()).sum::<f64>();
                (yi, zi, ui, e, w)
            })
            .collect();
        if let Some(j) = solved.iter().position(|s| !s.0.is_finite()) {
            return Err(Error::Solver { cell: i, message: format!("non-finite value at node {j}") });
        }
        let mut ul = Vec::with_capacity(solved.len() * k);
        for s in &solved {
            ul.extend_from_slice(&s.2);
        }
        y[i] = solved.iter().map(|s| s.0).collect();
        z[i] = solved.iter().map(|s| s.1).collect();
        energy[i] = solved.iter().map(|s| s.3).collect();
        u[i] = ul;
        step_weight = solved.iter().fold(step_weight, |m, s| m.max(s.4));
    }
    let max_abs_u = u.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let bmo_energy = energy.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    let diagnostics = BsdeDiagnostics {
        terminal_mismatch: 0.0,
        bmo_energy,
        max_abs_u,
        jump_step_weight: step_weight,
        terminal_oscillation: osc,
        nodes: lattice.n_nodes(),
        ..Default::default()
    };
    Ok(LatticeSolution { lattice, y, z, u, energy, diagnostics })
}

impl LatticeSolution {
    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    /// Y, Z, U along a lattice path.
    pub fn along(&self, p: &LatticePath) -> BsdePathValues {
        let n = self.lattice.grid().n_steps();
        let k = self.lattice.n_atoms();
        let y = (0..=n).map(|i| self.y[i][p.nodes[i]]).collect();
        let z = (0..n).map(|i| self.z[i][p.nodes[i]]).collect();
        let mut u = Vec::with_capacity(n * k);
        for i in 0..n {
            let j = p.nodes[i];
            u.extend_from_slice(&self.u[i][j * k..(j + 1) * k]);
        }
        BsdePathValues { y, z, u }
    }

    /// Y at a node state, interpolated in W.
    pub fn y_at(&self, node: usize, w: f64, counts: &[u32]) -> f64 {
        self.lattice.locate(node, w, counts).iter().map(|(j, lam)| lam * self.y[node][*j]).sum()
    }
}

impl SolutionField for LatticeSolution {
    fn d(&self) -> usize {
        1
    }

    fn n_atoms(&self) -> usize {
        self.lattice.n_atoms()
    }

    fn y0(&self) -> f64 {
        self.y[0][0]
    }

    fn z(&self, cell: usize, w: &[f64], counts: &[u32], out: &mut [f64]) {
        out[0] = self.lattice.locate(cell, w[0], counts).iter().map(|(j, lam)| lam * self.z[cell][*j]).sum();
    }

    fn u(&self, cell: usize, w: &[f64], counts: &[u32], out: &mut [f64]) {
        let k = self.lattice.n_atoms();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, lam) in self.lattice.locate(cell, w[0], counts) {
            for a in 0..k {
                out[a] += lam * self.u[cell][j * k + a];
            }
        }
    }

    fn u_bound(&self) -> f64 {
        self.diagnostics.max_abs_u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{IntensityForm, MarkAtom, Split};

    fn one_atom(weight: f64) -> JumpSpec {
        JumpSpec::from_form(
            vec![MarkAtom { mark: vec![1.0], weight, split: Split::Common }],
            1.0,
            IntensityForm::Constant { value: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn null_solution() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let spec = one_atom(1.0);
        let lat = Arc::new(Lattice::build(grid, &spec, &[0.0; 4], 100_000).unwrap());
        let gen = GeneratorSpec::single_agent(1.0, vec![0.0; 4], 1, spec);
        let sol = solve_lattice(&gen, lat, &|_, _| 0.0).unwrap();
        assert!(sol.y.iter().flatten().all(|v| *v == 0.0));
        assert!(sol.z.iter().flatten().all(|v| *v == 0.0));
        assert!(sol.u.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn deterministic_merton_value() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let spec = JumpSpec::empty();
        let lat = Arc::new(Lattice::build(grid, &spec, &[0.0; 10], 100_000).unwrap());
        let gen = GeneratorSpec::single_agent(2.0, vec![0.2; 10], 1, spec);
        let sol = solve_lattice(&gen, lat, &|_, _| 0.0).unwrap();
        assert!((sol.y0() + 0.01).abs() < 1e-15);
        assert!(sol.z.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn brownian_lattice_recombines() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let lat = Lattice::build(grid, &JumpSpec::empty(), &[0.0; 8], 1000).unwrap();
        assert_eq!(lat.layer(8).len(), 9);
        assert_eq!(lat.n_paths(), 256.0);
    }

    #[test]
    fn branch_variance_is_dt() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let lat = Lattice::build(grid, &one_atom(0.8), &[0.0; 4], 10_000).unwrap();
        let b = lat.layer(0)[0].branch.as_ref().unwrap();
        let var = 2.0 * b.brownian_prob() * b.step * b.step;
        assert!((var - 0.25).abs() < 1e-15);
    }

    #[test]
    fn too_coarse_grid_rejected() {
        let grid = TimeGrid::new(1.0, 1).unwrap();
        assert!(Lattice::build(grid, &one_atom(1.0), &[0.0], 100).is_err());
    }

    #[test]
    fn enumerated_path_probabilities_sum_to_one() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let lat = Lattice::build(grid, &one_atom(1.0), &[0.0; 4], 10_000).unwrap();
        let paths = lat.paths(1000, 0);
        assert_eq!(paths.len(), 81);
        let total: f64 = paths.iter().map(|p| p.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn field_matches_nodes_exactly() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let spec = one_atom(1.0);
        let lat = Arc::new(Lattice::build(grid, &spec, &[0.0; 4], 10_000).unwrap());
        let gen = GeneratorSpec::single_agent(1.0, vec![0.1; 4], 1, spec);
        let sol = solve_lattice(&gen, lat.clone(), &|w, c| (w[0]).tanh() + 0.3 * c[0] as f64).unwrap();
        for (j, node) in lat.layer(2).iter().enumerate() {
            let mut z = [0.0];
            sol.z(2, &[node.w], &node.counts, &mut z);
            assert!((z[0] - sol.z[2][j]).abs() < 1e-12);
        }
    }
}
