use std::sync::Arc;

use approx::assert_abs_diff_eq;
use jumpmfg::basis::{IntensityForm, JumpSpec, MarkAtom, Split, TimeGrid};
use jumpmfg::jbsde::{jump_convexity, solve_lattice, GeneratorSpec, Lattice, SolutionField};
use jumpmfg::market::{reparametrize, StrategyPath};
use jumpmfg::oracle::jump_path_recursion;
use jumpmfg::projection::{project_pi, Layout};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn one_atom(weight: f64, zeta: f64) -> JumpSpec {
    let atom = MarkAtom { mark: vec![0.1], weight, split: Split::Common };
    JumpSpec::from_form(vec![atom], zeta.max(1.0), IntensityForm::Constant { value: zeta }).unwrap()
}

/// Y0 and the jump step weight on the lattice, with phi = 0 and a terminal
/// depending on the jump count only.
fn lattice_solve(steps: usize, alpha: f64, spec: &JumpSpec, terminal: &(dyn Fn(u32) -> f64 + Sync)) -> (f64, f64) {
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let lattice = Arc::new(Lattice::build(grid, spec, &vec![0.0; steps], 1 << 20).unwrap());
    let gen = GeneratorSpec::single_agent(alpha, vec![0.0; steps], 1, spec.clone());
    let sol = solve_lattice(&gen, lattice, &|_w: &[f64], c: &[u32]| terminal(c[0])).unwrap();
    (sol.y0(), sol.diagnostics.jump_step_weight)
}

fn lattice_y0(steps: usize, alpha: f64, spec: &JumpSpec, terminal: &(dyn Fn(u32) -> f64 + Sync)) -> f64 {
    lattice_solve(steps, alpha, spec, terminal).0
}

#[test]
fn lattice_matches_path_recursion_on_count_claims() {
    let spec = one_atom(1.5, 0.8);
    let rate = 1.5 * 0.8;
    for (alpha, steps) in [(0.5, 6), (2.0, 10), (4.0, 12)] {
        let terminal = |n: u32| 0.3 * (n.min(2) as f64) - 0.1;
        let want = jump_path_recursion(steps, 1.0 / steps as f64, rate, alpha, &terminal).unwrap();
        let got = lattice_y0(steps, alpha, &spec, &terminal);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }
}

#[test]
fn zero_claim_without_price_of_risk_has_zero_value() {
    let spec = one_atom(2.0, 1.0);
    assert_abs_diff_eq!(lattice_y0(8, 3.0, &spec, &|_| 0.0), 0.0, epsilon = 1e-15);
}

#[test]
fn merton_value_with_constant_price_of_risk() {
    let (phi, alpha, steps) = (0.2, 2.0, 16);
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let spec = one_atom(1.0, 0.5);
    let lattice = Arc::new(Lattice::build(grid, &spec, &vec![0.0; steps], 1 << 20).unwrap());
    let gen = GeneratorSpec::single_agent(alpha, vec![phi; steps], 1, spec);
    let sol = solve_lattice(&gen, lattice, &|_: &[f64], _: &[u32]| 0.0).unwrap();
    assert_abs_diff_eq!(sol.y0(), -phi * phi / (2.0 * alpha), epsilon = 1e-14);
}

#[test]
fn large_jump_weight_breaks_comparison() {
    // alpha U is large enough that p exp(alpha U) > 1: raising the terminal at one
    // count lowers the explicit-step value at the root.
    let spec = one_atom(1.0, 0.1);
    let alpha = 4.963120150826598;
    let low = |n: u32| [0.0, -0.5837831769516191, 0.7745871734713057, 0.0, 0.0][(n as usize).min(4)];
    let high = |n: u32| low(n) + if n == 1 { 0.4323998427267269 } else { 0.0 };
    let (yl, wl) = lattice_solve(6, alpha, &spec, &low);
    let (yh, wh) = lattice_solve(6, alpha, &spec, &high);
    assert!(wl > 1.0 || wh > 1.0, "weights {wl} {wh}");
    assert!(yh < yl, "{yh} vs {yl}");
}

fn layout(n_common: usize, m: usize, n_cells: usize) -> Layout {
    Layout { n_common, m, n_cells, dim: 1 }
}

proptest! {
    #[test]
    fn jump_convexity_is_nonnegative_and_matches_direct_form(alpha in 0.05f64..8.0, u in -3.0f64..3.0) {
        let g = jump_convexity(alpha, u);
        prop_assert!(g >= 0.0);
        let direct = ((alpha * u).exp() - 1.0 - alpha * u) / alpha;
        prop_assert!((g - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn projection_is_linear(
        n_common in 1usize..4,
        m in 1usize..6,
        n_cells in 1usize..4,
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let l = layout(n_common, m, n_cells);
        let n = n_common * m * n_cells;
        let x: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 997) as f64 / 97.0).sin()).collect();
        let y: Vec<f64> = (0..n).map(|i| ((seed.wrapping_mul(31).wrapping_add(i as u64) % 991) as f64 / 89.0).cos()).collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (px, py, pc) = (project_pi(&x, l).unwrap(), project_pi(&y, l).unwrap(), project_pi(&combo, l).unwrap());
        for j in 0..pc.len() {
            prop_assert!((pc[j] - (a * px[j] + b * py[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent(n_common in 1usize..4, m in 1usize..6, n_cells in 1usize..4, seed in any::<u64>()) {
        let l = layout(n_common, m, n_cells);
        let x: Vec<f64> = (0..n_common * m * n_cells).map(|i| ((seed ^ i as u64) % 1009) as f64 / 100.0).collect();
        let p = project_pi(&x, l).unwrap();
        // Broadcast the projection back to every agent and project again.
        let broadcast: Vec<f64> = (0..n_common)
            .flat_map(|c| {
                let p = &p;
                (0..m).flat_map(move |_| p[c * n_cells..(c + 1) * n_cells].to_vec())
            })
            .collect();
        let pp = project_pi(&broadcast, l).unwrap();
        for (u, v) in p.iter().zip(&pp) {
            prop_assert!((u - v).abs() < 1e-14 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn reparametrize_round_trips(
        diag in prop::collection::vec(0.1f64..2.0, 2),
        off in -0.5f64..0.5,
        theta in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let sigma = DMatrix::from_row_slice(2, 2, &[diag[0], off, 0.0, diag[1]]);
        let sigmas = vec![sigma; 3];
        let s = StrategyPath::theta(2, theta.clone());
        let back = reparametrize(&reparametrize(&s, &sigmas).unwrap(), &sigmas).unwrap();
        prop_assert_eq!(back.param, s.param);
        for (u, v) in back.values.iter().zip(&theta) {
            prop_assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn larger_terminal_gives_larger_value_while_step_is_monotone(
        alpha in 0.2f64..5.0,
        zeta in 0.1f64..1.0,
        base in prop::collection::vec(-1.0f64..1.0, 5),
        bump in prop::collection::vec(0.0f64..0.5, 5),
    ) {
        let spec = one_atom(1.0, zeta);
        let low = |n: u32| base[(n as usize).min(4)];
        let high = |n: u32| base[(n as usize).min(4)] + bump[(n as usize).min(4)];
        let ((yl, wl), (yh, wh)) = (lattice_solve(6, alpha, &spec, &low), lattice_solve(6, alpha, &spec, &high));
        prop_assume!(wl <= 1.0 && wh <= 1.0);
        prop_assert!(yh >= yl - 1e-14, "{yh} < {yl}");
    }
}
