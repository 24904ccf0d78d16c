use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use super::grid::TimeGrid;
use super::jumps::{JumpEvent, JumpSpec, JumpState, Owner, Split};
use crate::error::{config, Result};
use crate::rng::{Domain, StreamKey, COMMON_OWNER};

/// Brownian increments laid out as `[path][cell][coordinate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPaths {
    pub d: usize,
    pub n_paths: usize,
    pub n_cells: usize,
    pub dw: Vec<f64>,
}

impl BrownianPaths {
    pub fn path(&self, p: usize) -> &[f64] {
        let len = self.n_cells * self.d;
        &self.dw[p * len..(p + 1) * len]
    }

    /// Brownian levels W(t_i) for one path, `[node][coordinate]`.
    pub fn levels(&self, p: usize) -> Vec<f64> {
        let inc = self.path(p);
        let mut w = vec![0.0; (self.n_cells + 1) * self.d];
        for i in 0..self.n_cells {
            for j in 0..self.d {
                w[(i + 1) * self.d + j] = w[i * self.d + j] + inc[i * self.d + j];
            }
        }
        w
    }
}

/// Gaussian increments with variance dt, one stream per (path, cell).
pub fn simulate_brownian(grid: &TimeGrid, d: usize, n_paths: usize, seed: u64) -> Result<BrownianPaths> {
    if d == 0 {
        return Err(config("Brownian dimension must be at least 1"));
    }
    if n_paths == 0 {
        return Err(config("need at least one path"));
    }
    let n = grid.n_steps();
    let sd = grid.dt().sqrt();
    let dw: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .flat_map_iter(|p| {
            (0..n).flat_map(move |i| {
                let mut rng = StreamKey::new(seed, Domain::Brownian).path(p as u64).cell(i as u64).rng();
                (0..d).map(move |_| sd * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>()
            })
        })
        .collect();
    Ok(BrownianPaths { d, n_paths, n_cells: n, dw })
}

/// Events in one cell for the given atoms, by thinning: propose Poisson(c_nu lambda_k dt)
/// points, keep each with probability zeta / c_nu evaluated at the left endpoint.
/// `key` fixes seed, domain, path and agent; atom and cell complete the stream address.
pub fn draw_cell_events(
    spec: &JumpSpec,
    grid: &TimeGrid,
    cell: usize,
    state: &JumpState<'_>,
    atoms: &[usize],
    key: StreamKey,
) -> Result<Vec<(usize, f64)>> {
    let dt = grid.dt();
    let t0 = grid.node(cell);
    let c_nu = spec.c_nu();
    let mut out = Vec::new();
    for &k in atoms {
        let zeta = spec.zeta(t0, cell, state, k)?;
        let proposal_rate = c_nu * spec.atoms()[k].weight * dt;
        if proposal_rate <= 0.0 || zeta <= 0.0 {
            continue;
        }
        let mut rng = key.channel(k as u64).cell(cell as u64).rng();
        let n_prop = Poisson::new(proposal_rate)
            .map_err(|e| config(format!("invalid proposal rate {proposal_rate}: {e}")))?
            .sample(&mut rng) as u64;
        let accept = zeta / c_nu;
        for _ in 0..n_prop {
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            if u < accept {
                out.push((k, t0 + v * dt));
            }
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Common events per path and idiosyncratic events per path and agent.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpParts {
    pub common: Vec<Vec<JumpEvent>>,
    pub idio: Vec<Vec<Vec<JumpEvent>>>,
}

/// Simulates the jump measure on `n_paths` common worlds with `n_agents` agents each.
/// When `brownian` is given, its levels feed the intensity state; otherwise W = 0.
pub fn simulate_jump_measure(
    grid: &TimeGrid,
    spec: &JumpSpec,
    n_agents: usize,
    n_paths: usize,
    seed: u64,
    brownian: Option<&BrownianPaths>,
) -> Result<JumpParts> {
    if n_paths == 0 {
        return Err(config("need at least one path"));
    }
    let common_atoms = spec.atoms_with(Split::Common);
    let idio_atoms = spec.atoms_with(Split::Idiosyncratic);
    let k = spec.n_atoms();
    let n = grid.n_steps();
    let d = brownian.map_or(1, |b| b.d);

    let per_path: Vec<(Vec<JumpEvent>, Vec<Vec<JumpEvent>>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let w = match brownian {
                Some(b) => b.levels(p),
                None => vec![0.0; (n + 1) * d],
            };
            let key = StreamKey::new(seed, Domain::Jump).path(p as u64);
            let mut counts = vec![0u32; k];
            let mut common_counts = vec![0u32; (n + 1) * k];
            let mut common = Vec::new();
            for i in 0..n {
                let state = JumpState { w: &w[i * d..(i + 1) * d], counts: &counts };
                let evs = draw_cell_events(spec, grid, i, &state, &common_atoms, key.agent(COMMON_OWNER))?;
                for (atom, time) in evs {
                    counts[atom] += 1;
                    common.push(JumpEvent { cell: i, time, atom, owner: Owner::Common });
                }
                common_counts[(i + 1) * k..(i + 2) * k].copy_from_slice(&counts);
            }
            let mut idio = Vec::with_capacity(n_agents);
            for a in 0..n_agents {
                let mut own = vec![0u32; k];
                let mut evs_a = Vec::new();
                for i in 0..n {
                    let mut cnt = common_counts[i * k..(i + 1) * k].to_vec();
                    for (c, o) in cnt.iter_mut().zip(&own) {
                        *c += o;
                    }
                    let state = JumpState { w: &w[i * d..(i + 1) * d], counts: &cnt };
                    for (atom, time) in draw_cell_events(spec, grid, i, &state, &idio_atoms, key.agent(a as u64))? {
                        own[atom] += 1;
                        evs_a.push(JumpEvent { cell: i, time, atom, owner: Owner::Agent(a as u32) });
                    }
                }
                idio.push(evs_a);
            }
            Ok((common, idio))
        })
        .collect::<Result<_>>()?;

    let (common, idio) = per_path.into_iter().unzip();
    Ok(JumpParts { common, idio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{IntensityForm, MarkAtom};
    use crate::stats::Estimate;

    fn one_atom(weight: f64, zeta: f64) -> JumpSpec {
        JumpSpec::from_form(
            vec![MarkAtom { mark: vec![1.0], weight, split: Split::Common }],
            1.0,
            IntensityForm::Constant { value: zeta },
        )
        .unwrap()
    }

    #[test]
    fn brownian_is_reproducible() {
        let g = TimeGrid::new(1.0, 5).unwrap();
        let a = simulate_brownian(&g, 2, 50, 3).unwrap();
        let b = simulate_brownian(&g, 2, 50, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_brownian(&g, 2, 50, 4).unwrap());
    }

    #[test]
    fn null_intensity_has_no_events() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let parts = simulate_jump_measure(&g, &one_atom(3.0, 0.0), 2, 200, 1, None).unwrap();
        assert!(parts.common.iter().all(|e| e.is_empty()));
    }

    #[test]
    fn poisson_mean_count() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let parts = simulate_jump_measure(&g, &one_atom(3.0, 1.0), 0, 100_000, 11, None).unwrap();
        let counts: Vec<f64> = parts.common.iter().map(|e| e.len() as f64).collect();
        let est = Estimate::from_samples(&counts);
        assert!(est.z_score(3.0) < 4.0, "{est:?}");
    }

    #[test]
    fn event_times_inside_their_cell() {
        let g = TimeGrid::new(2.0, 7).unwrap();
        let parts = simulate_jump_measure(&g, &one_atom(2.0, 1.0), 0, 500, 5, None).unwrap();
        for e in parts.common.iter().flatten() {
            assert!(e.time >= g.node(e.cell) && e.time < g.node(e.cell + 1) + 1e-15);
        }
    }
}
