//! Subcommand orchestration and report emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jumpmfg::equilibrium::{solve_mfg, solve_reference_single_agent, Backend, EquilibriumResult, Pipeline, ReferenceSolution};
use jumpmfg::jbsde::BsdePathValues;
use jumpmfg::projection::PopulationBundle;
use serde::Serialize;
use thiserror::Error;

use crate::scenario::{Scenario, ScenarioError, Suite};
use crate::verify::{self, Check, OracleComparison, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    SolveSingle,
    SolveMfg,
    Verify,
    Oracle,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::SolveSingle => "solve-single",
            Command::SolveMfg => "solve-mfg",
            Command::Verify => "verify",
            Command::Oracle => "oracle",
        }
    }
}

/// Command-line values that replace scenario settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub agents: Option<usize>,
    pub backend: Option<Backend>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) | RunError::Config(_) => 2,
            RunError::Internal(_) | RunError::Output { .. } => 3,
        }
    }
}

impl From<jumpmfg::Error> for RunError {
    fn from(e: jumpmfg::Error) -> Self {
        use jumpmfg::Error as E;
        match e {
            E::Config(_) | E::ModelViolation(_) | E::Unsupported { .. } | E::TooLarge { .. } | E::SingularInteraction => {
                RunError::Config(e.to_string())
            }
            E::LinearAlgebra(_) | E::Solver { .. } => RunError::Internal(e.to_string()),
        }
    }
}

/// Applies overrides and re-validates.
pub fn apply_overrides(sc: &Scenario, o: &Overrides) -> Result<Scenario, RunError> {
    let mut f = sc.file.clone();
    if let Some(s) = o.seed {
        f.seed = s;
    }
    if let Some(p) = o.paths {
        f.population.common_paths = p;
    }
    if let Some(a) = o.agents {
        f.population.agents = a;
    }
    if let Some(b) = o.backend {
        f.solver.backend = b;
    }
    Scenario::from_file(f).map_err(|errors| RunError::Config(errors.join("; ")))
}

pub fn simulate_population(sc: &Scenario) -> Result<PopulationBundle, RunError> {
    let p = &sc.file.population;
    Ok(PopulationBundle::simulate(sc.grid, sc.file.market.d, &sc.spec, p.common_paths, p.agents, &sc.law, sc.file.seed)?)
}

pub fn pipeline<'a>(sc: &'a Scenario, pop: &'a PopulationBundle) -> Result<Pipeline<'a>, RunError> {
    Ok(Pipeline::new(&sc.file.market, &sc.spec, &sc.file.claim, pop, &sc.file.solver, sc.file.seed)?)
}

/// Files produced by a run, in write order.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub summary: String,
}

impl Artifacts {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[String]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Self { w }
    }

    fn row(&mut self, fields: &[String]) {
        self.w.write_record(fields).expect("in-memory write");
    }

    fn finish(self) -> String {
        String::from_utf8(self.w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

fn header(fixed: &[&str], prefix: &str, n: usize) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).chain((0..n).map(|j| format!("{prefix}{j}"))).collect()
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

fn exported(sc: &Scenario, pop: &PopulationBundle) -> Vec<(usize, usize)> {
    let o = &sc.file.output;
    let nc = o.export_common_paths.min(pop.n_common());
    let na = o.export_agents.min(pop.m());
    (0..nc).flat_map(|c| (0..na).map(move |a| (c, a))).collect()
}

fn checks_csv(checks: &[Check]) -> String {
    let mut t = Table::new(&header(&["suite", "check", "value", "tolerance", "status", "note"], "", 0));
    for c in checks {
        t.row(&[c.suite.into(), c.name.clone(), f(c.value), f(c.tolerance), c.status.label().into(), c.note.clone()]);
    }
    t.finish()
}

fn noise_csv(sc: &Scenario, pop: &PopulationBundle) -> String {
    let (d, k) = (sc.file.market.d, sc.spec.n_atoms());
    let mut h = header(&["common", "agent", "node"], "w", d);
    h.extend((0..k).map(|j| format!("n{j}")));
    let mut t = Table::new(&h);
    for (c, a) in exported(sc, pop) {
        let p = pop.bundle.agent_path(c, a);
        for i in 0..sc.grid.n_nodes() {
            let mut row = vec![c.to_string(), a.to_string(), i.to_string()];
            row.extend(p.w_at(i).iter().map(|v| f(*v)));
            row.extend(p.counts_at(i).iter().map(|v| v.to_string()));
            t.row(&row);
        }
    }
    t.finish()
}

fn wealth_csv(pl: &Pipeline<'_>, sc: &Scenario, theta: &[f64]) -> String {
    let (n, d, m) = (pl.n_cells(), pl.d(), pl.pop.m());
    let mut t = Table::new(&header(&["path", "node", "value"], "", 0));
    for (c, a) in exported(sc, pl.pop) {
        let s = c * m + a;
        let mut x = pl.pop.agent_of(s).x0;
        t.row(&[s.to_string(), "0".into(), f(x)]);
        for i in 0..n {
            for j in 0..d {
                x += theta[(s * n + i) * d + j] * pl.dw_hat[(c * n + i) * d + j];
            }
            t.row(&[s.to_string(), (i + 1).to_string(), f(x)]);
        }
    }
    t.finish()
}

fn bsde_rows(t: &mut Table, class: usize, path: usize, v: &BsdePathValues, d: usize, k: usize) {
    let n = v.y.len() - 1;
    for i in 0..=n {
        let (z_abs, u): (String, Vec<String>) = if i < n {
            let z = v.z[i * d..(i + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt();
            (f(z), v.u[i * k..(i + 1) * k].iter().map(|x| f(*x)).collect())
        } else {
            (String::new(), vec![String::new(); k])
        };
        let mut row = vec![class.to_string(), path.to_string(), i.to_string(), f(v.y[i]), z_abs];
        row.extend(u);
        t.row(&row);
    }
}

/// Y, |Z| and U along a few paths per class: lattice paths or regression samples.
fn bsde_csv(pl: &Pipeline<'_>, sc: &Scenario, reference: &ReferenceSolution) -> String {
    let (d, k) = (pl.d(), pl.spec.n_atoms());
    let mut t = Table::new(&header(&["class", "path", "node", "y", "z_abs"], "u", k));
    let count = (sc.file.output.export_common_paths * sc.file.output.export_agents).max(1);
    for (ci, cls) in reference.classes.iter().enumerate() {
        if let Some(sol) = &cls.lattice {
            for (j, p) in sol.lattice().paths(count, pl.seed).iter().take(count).enumerate() {
                bsde_rows(&mut t, ci, j, &sol.along(p), d, k);
            }
        } else if let Some(sol) = &cls.lsmc {
            let idx = pl.class_samples(&cls.class);
            for (j, s) in idx.iter().take(count).enumerate() {
                bsde_rows(&mut t, ci, *s, &sol.along(j, &pl.paths[*s]), d, k);
            }
        }
    }
    t.finish()
}

fn reference_classes_csv(reference: &ReferenceSolution) -> String {
    let mut t = Table::new(&header(
        &["class", "alpha", "rho", "agents", "y0", "y0_se", "max_abs_u", "terminal_mismatch", "ridge_fallbacks", "nodes"],
        "",
        0,
    ));
    for (ci, c) in reference.classes.iter().enumerate() {
        let dg = &c.diagnostics;
        t.row(&[
            ci.to_string(),
            f(c.class.alpha),
            f(c.class.rho),
            c.class.agents.len().to_string(),
            f(c.y0),
            f(c.y0_se),
            f(dg.max_abs_u),
            f(dg.terminal_mismatch),
            dg.ridge_fallbacks.to_string(),
            dg.nodes.to_string(),
        ]);
    }
    t.finish()
}

fn equilibrium_classes_csv(res: &EquilibriumResult) -> String {
    let mut t = Table::new(&header(
        &["class", "alpha", "rho", "agents", "y0_reference", "y0_reference_se", "y0_auxiliary", "tilted_c_nu", "theta_mean", "theta_se", "theta_min", "theta_max"],
        "",
        0,
    ));
    for (ci, ((c, a), th)) in res.reference.classes.iter().zip(&res.auxiliary.classes).zip(&res.class_theta).enumerate() {
        t.row(&[
            ci.to_string(),
            f(c.class.alpha),
            f(c.class.rho),
            c.class.agents.len().to_string(),
            f(c.y0),
            f(c.y0_se),
            f(a.y0),
            f(a.c_hat),
            f(th.theta_mean),
            f(th.theta_se),
            f(th.theta_min),
            f(th.theta_max),
        ]);
    }
    t.finish()
}

fn strategies_csv(pl: &Pipeline<'_>, sc: &Scenario, res: Option<&EquilibriumResult>, reference: &ReferenceSolution) -> String {
    let (n, d, m) = (pl.n_cells(), pl.d(), pl.pop.m());
    let mut h = header(&["common", "agent", "cell"], "theta_b", d);
    if res.is_some() {
        h.extend((0..d).map(|j| format!("z_tilde{j}")));
        h.extend((0..d).map(|j| format!("theta_tilde{j}")));
    }
    let mut t = Table::new(&h);
    for (c, a) in exported(sc, pl.pop) {
        let s = c * m + a;
        for i in 0..n {
            let r = (s * n + i) * d..(s * n + i + 1) * d;
            let mut row = vec![c.to_string(), a.to_string(), i.to_string()];
            row.extend(reference.theta[r.clone()].iter().map(|v| f(*v)));
            if let Some(res) = res {
                row.extend(res.auxiliary.z[r.clone()].iter().map(|v| f(*v)));
                row.extend(res.reconstruction.theta[r].iter().map(|v| f(*v)));
            }
            t.row(&row);
        }
    }
    t.finish()
}

fn mean_field_csv(res: &EquilibriumResult) -> String {
    let fp = &res.fixed_point;
    let mut t = Table::new(&header(&["common", "f_direct", "f_formula", "f_se"], "", 0));
    for c in 0..fp.f_direct.len() {
        t.row(&[c.to_string(), f(fp.f_direct[c]), f(fp.f_formula[c]), f(fp.f_se[c])]);
    }
    t.finish()
}

fn deviations_csv(res: &EquilibriumResult) -> String {
    let mut t = Table::new(&header(&["direction", "epsilon", "utility_change", "se", "pass"], "", 0));
    for d in &res.fixed_point.deviations {
        t.row(&[d.direction.name().into(), f(d.epsilon), f(d.gain.mean), f(d.gain.se), d.pass.to_string()]);
    }
    t.finish()
}

fn oracle_csv(o: &OracleComparison) -> String {
    let k = o.rows.first().map_or(0, |r| r.counts.len());
    let mut h = header(&["cell", "w"], "n", k);
    h.extend(["theta_brute_force", "theta_lattice", "y_brute_force"].map(String::from));
    let mut t = Table::new(&h);
    for r in &o.rows {
        let mut row = vec![r.cell.to_string(), f(r.w)];
        row.extend(r.counts.iter().map(|c| c.to_string()));
        row.extend([f(r.theta_dp), f(r.theta_lattice), f(r.y_dp)]);
        t.row(&row);
    }
    t.finish()
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    backend: &'static str,
    scenario: &'a crate::scenario::ScenarioFile,
    files: Vec<&'a str>,
}

fn summary(sc: &Scenario, cmd: Command, body: &str, checks: &[Check]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", sc.name());
    if !sc.file.description.is_empty() {
        let _ = writeln!(s, "description: {}", sc.file.description);
    }
    let p = &sc.file.population;
    let _ = writeln!(
        s,
        "command: {}  seed: {}  backend: {}  common paths: {}  agents: {}  steps: {}",
        cmd.name(),
        sc.file.seed,
        sc.file.solver.backend.name(),
        p.common_paths,
        p.agents,
        sc.grid.n_steps()
    );
    s.push_str(body);
    if !checks.is_empty() {
        let _ = writeln!(s, "\nchecks:");
        for c in checks {
            let note = if c.note.is_empty() { String::new() } else { format!("  ({})", c.note) };
            match c.status {
                Status::Skipped => {
                    let _ = writeln!(s, "  SKIP  [{}] {}", c.suite, c.note);
                }
                st => {
                    let tag = if st == Status::Pass { "PASS" } else { "FAIL" };
                    let _ = writeln!(s, "  {tag}  [{}] {}: {:.6e} <= {:.3e}{note}", c.suite, c.name, c.value, c.tolerance);
                }
            }
        }
        let failed = checks.iter().filter(|c| !c.passed()).count();
        let _ = writeln!(s, "\n{} checks, {} failed", checks.len(), failed);
    }
    s
}

fn class_lines(res: &EquilibriumResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "E[rho] = {}  E[x0] = {}  E[1/alpha] = {}", res.e_rho, res.e_x0, res.e_inv_alpha);
    for (ci, t) in res.class_theta.iter().enumerate() {
        let _ = writeln!(
            s,
            "class {ci}: alpha {} rho {}  Y0^B {:.8}  theta~ mean {:.6} (se {:.2e}, range {:.6} .. {:.6})",
            t.alpha, t.rho, t.y0, t.theta_mean, t.theta_se, t.theta_min, t.theta_max
        );
    }
    s
}

/// Runs a subcommand in memory.
pub fn execute(sc: &Scenario, cmd: Command) -> Result<Artifacts, RunError> {
    let mut files = Vec::new();
    let mut checks = Vec::new();
    let mut body = String::new();
    match cmd {
        Command::Simulate => {
            let pop = simulate_population(sc)?;
            let pl = pipeline(sc, &pop)?;
            checks.extend(verify::compensator_suite(&pl));
            let k = sc.spec.n_atoms();
            let n = pop.n_samples() as f64;
            for j in 0..k {
                let mean = pl.paths.iter().map(|p| p.terminal_counts()[j] as f64).sum::<f64>() / n;
                let _ = writeln!(body, "atom {j}: mean terminal count {mean:.6}");
            }
            files.push(("noise.csv".into(), noise_csv(sc, &pop)));
        }
        Command::SolveSingle => {
            let pop = simulate_population(sc)?;
            let pl = pipeline(sc, &pop)?;
            let reference = solve_reference_single_agent(&pl)?;
            for (ci, c) in reference.classes.iter().enumerate() {
                let _ = writeln!(body, "class {ci}: alpha {} rho {}  Y0^B {:.8} (se {:.2e})", c.class.alpha, c.class.rho, c.y0, c.y0_se);
            }
            checks.extend(verify::identity_suite(&pl, &reference));
            files.push(("classes.csv".into(), reference_classes_csv(&reference)));
            files.push(("strategies.csv".into(), strategies_csv(&pl, sc, None, &reference)));
            files.push(("bsde.csv".into(), bsde_csv(&pl, sc, &reference)));
            files.push(("wealth.csv".into(), wealth_csv(&pl, sc, &reference.theta)));
        }
        Command::SolveMfg | Command::Verify => {
            let pop = simulate_population(sc)?;
            let pl = pipeline(sc, &pop)?;
            let res = solve_mfg(&pl)?;
            body.push_str(&class_lines(&res));
            if cmd == Command::SolveMfg {
                checks.extend(verify::fixed_point_suite(&pl, &res));
                checks.extend(verify::degeneracy_suite(sc, &res));
            } else {
                let (c, oracle) = verify::run_suites(sc, &pl, &res);
                checks.extend(c);
                if let Some(o) = oracle {
                    if !o.rows.is_empty() {
                        files.push(("oracle.csv".into(), oracle_csv(&o)));
                    }
                }
            }
            files.push(("classes.csv".into(), equilibrium_classes_csv(&res)));
            files.push(("strategies.csv".into(), strategies_csv(&pl, sc, Some(&res), &res.reference)));
            files.push(("bsde.csv".into(), bsde_csv(&pl, sc, &res.reference)));
            files.push(("wealth.csv".into(), wealth_csv(&pl, sc, &res.reconstruction.theta)));
            files.push(("mean_field.csv".into(), mean_field_csv(&res)));
            files.push(("deviations.csv".into(), deviations_csv(&res)));
        }
        Command::Oracle => {
            // The comparison only needs the model, not a simulated population.
            let pop = PopulationBundle::simulate(sc.grid, sc.file.market.d, &sc.spec, 1, 1, &sc.law, sc.file.seed)?;
            let pl = pipeline(sc, &pop)?;
            let o = verify::oracle_suite(sc, &pl);
            if o.rows.is_empty() && o.checks.iter().any(|c| c.status == Status::Skipped) {
                return Err(RunError::Config(format!("oracle not applicable: {}", o.checks[0].note)));
            }
            let _ = writeln!(body, "brute-force Y0 {:.10}  lattice Y0 {:.10}  tree nodes {}", o.brute.y0, o.lattice_y0, o.rows.len());
            checks.extend(o.checks.clone());
            files.push(("oracle.csv".into(), oracle_csv(&o)));
        }
    }
    files.push(("checks.csv".into(), checks_csv(&checks)));
    let summary = summary(sc, cmd, &body, &checks);
    files.push(("summary.txt".into(), summary.clone()));
    Ok(Artifacts { files, checks, summary })
}

/// Runs a subcommand and writes its artifacts plus `manifest.json` to `out`.
pub fn run(sc: &Scenario, cmd: Command, out: &Path) -> Result<Artifacts, RunError> {
    let start = Instant::now();
    let mut art = execute(sc, cmd)?;
    let io = |path: &Path, e: &dyn std::fmt::Display| RunError::Output { path: path.to_path_buf(), message: e.to_string() };
    std::fs::create_dir_all(out).map_err(|e| io(out, &e))?;
    for (name, content) in &art.files {
        let p = out.join(name);
        std::fs::write(&p, content).map_err(|e| io(&p, &e))?;
    }
    let manifest = Manifest {
        tool: "jumpmfg",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name(),
        seed: sc.file.seed,
        backend: sc.file.solver.backend.name(),
        scenario: &sc.file,
        files: art.files.iter().map(|(n, _)| n.as_str()).collect(),
    };
    let mut value = serde_json::to_value(&manifest).map_err(|e| RunError::Internal(e.to_string()))?;
    value["wall_time_s"] = serde_json::json!(start.elapsed().as_secs_f64());
    let text = serde_json::to_string_pretty(&value).map_err(|e| RunError::Internal(e.to_string()))?;
    let p = out.join("manifest.json");
    std::fs::write(&p, &text).map_err(|e| io(&p, &e))?;
    art.files.push(("manifest.json".into(), text));
    Ok(art)
}

/// Suites that apply to a subcommand's checks, for documentation and tests.
pub fn suites_for(cmd: Command) -> &'static [Suite] {
    match cmd {
        Command::Simulate => &[Suite::Compensator],
        Command::SolveSingle => &[Suite::Identity],
        Command::SolveMfg => &[Suite::FixedPoint, Suite::Degeneracy],
        Command::Verify => &Suite::ALL,
        Command::Oracle => &[Suite::Oracle],
    }
}
