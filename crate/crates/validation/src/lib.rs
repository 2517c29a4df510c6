//! Acceptance criteria for the workspace, one runner per criterion.
//!
//! Each runner measures, compares against a fixed tolerance and returns a
//! [`Verdict`]. A verdict passes only when the measurement passes and the
//! runner finished inside its time budget.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dhl_cli::{Cli, Command, RunArgs, EXIT_OK};
use dhl_core::cutoff::{default_shells, direct_cutoff_optimum, optimal_radial_cutoff, shell_integrals, ShellProfile};
use dhl_core::exponents::profile_of_field;
use dhl_core::fields::{identity, make_checkerboard, make_constant, make_layered, make_radial_power, periodize, sample_random};
use dhl_core::homogenize::{corrector_campaign, effective_coefficient};
use dhl_core::regularity::{audit_boundary, audit_field, bound_2d_check, harnack_quotient};
use dhl_core::solver::{solve_dirichlet, weak_residual};
use dhl_core::{derive_exponents, ExtReal, Family, FieldSpec, Grid, Mesh, ScalarField, Topology};

#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u8,
    pub title: &'static str,
    pub measured: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
}

impl Verdict {
    pub fn in_budget(&self) -> bool {
        self.budget.is_none_or(|b| self.elapsed <= b)
    }

    pub fn pass(&self) -> bool {
        self.measured && self.in_budget()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let budget = match self.budget {
            Some(b) => format!(" / {:.0}s", b.as_secs_f64()),
            None => String::new(),
        };
        write!(
            f,
            "criterion {} {:<28} {}  [{:.2}s{budget}{}]  {}",
            self.id,
            self.title,
            if self.pass() { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64(),
            if self.in_budget() { "" } else { " over budget" },
            self.detail
        )
    }
}

type Measurement = Result<(bool, String), String>;

fn timed(id: u8, title: &'static str, budget: Option<Duration>, body: impl FnOnce() -> Measurement) -> Verdict {
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    let (measured, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    Verdict { id, title, measured, detail, elapsed, budget }
}

fn err(e: impl fmt::Display) -> String {
    e.to_string()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub const CRITERIA: [u8; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 9];

/// Runs one criterion; `scratch` receives the output directories of the
/// command-line runs.
pub fn run(id: u8, scratch: &Path) -> Option<Verdict> {
    Some(match id {
        1 => exponent_algebra(),
        2 => solver_convergence(),
        3 => cutoff_lemma(),
        4 => inequality_audits(),
        5 => harnack_sanity(),
        6 => borderline_2d(),
        7 => effective_coefficient_oracle(),
        8 => sublinearity(),
        9 => determinism(scratch),
        _ => return None,
    })
}

fn exponent_grid() -> (Vec<ExtReal>, Vec<ExtReal>) {
    // 50 × 50 pairs: p over (1, 100] and ∞, q over [0.5, 100] and ∞.
    let spaced = |lo: f64, hi: f64, k: usize| -> Vec<ExtReal> {
        let mut v: Vec<ExtReal> =
            (0..k).map(|i| ExtReal::Finite(lo * (hi / lo).powf(i as f64 / (k - 1) as f64))).collect();
        v.push(ExtReal::Infinite);
        v
    };
    (spaced(1.01, 100.0, 49), spaced(0.5, 100.0, 49))
}

pub fn exponent_algebra() -> Verdict {
    timed(1, "exponent algebra", Some(Duration::from_secs(1)), || {
        let (ps, qs) = exponent_grid();
        let mut checked = 0;
        let mut mismatches = Vec::new();
        for d in [2usize, 3, 4] {
            for &p in &ps {
                for &q in &qs {
                    let expected = p.recip() + q.recip() < 2.0 / (d as f64 - 1.0) && q.to_f64() > 1.0;
                    let positive = derive_exponents(d, p, q).map(|e| e.delta > 0.0).unwrap_or(false);
                    checked += 1;
                    if positive != expected {
                        mismatches.push(format!("(d={d}, p={p}, q={q})"));
                    }
                }
            }
        }
        let e = derive_exponents(3, ExtReal::Infinite, ExtReal::Infinite).map_err(err)?;
        let exact = e.delta == 0.5 && e.p_star == 1.0 && e.q_star == ExtReal::Finite(6.0) && e.kappa == ExtReal::Finite(3.0);
        Ok((
            mismatches.is_empty() && exact,
            format!(
                "{checked} triples, {} mismatches{}; d=3 p=q=inf: delta={} p*={} q*={} kappa={}",
                mismatches.len(),
                mismatches.first().map(|m| format!(" first {m}")).unwrap_or_default(),
                e.delta,
                e.p_star,
                e.q_star,
                e.kappa
            ),
        ))
    })
}

fn harmonic_error(n: usize) -> Result<f64, String> {
    let g = |x: &dhl_core::Point| x[0] * x[0] - x[1] * x[1];
    let field = make_constant(2, n, 2.0, &identity(2)).map_err(err)?;
    let mesh = Mesh::new(field.grid);
    let u = solve_dirichlet(&field, &mesh, g).map_err(err)?;
    Ok((0..field.grid.num_nodes()).map(|i| (u.values[i] - g(&field.grid.node_coord(i))).abs()).fold(0.0, f64::max))
}

pub fn solver_convergence() -> Verdict {
    timed(2, "solver convergence", Some(Duration::from_secs(10)), || {
        let coarse = harmonic_error(64)?;
        let fine = harmonic_error(128)?;
        let ratio = coarse / fine;
        Ok((
            (3.5..=4.5).contains(&ratio),
            format!("max nodal error n=64 {coarse:.3e}, n=128 {fine:.3e}, ratio {ratio:.3} (want [3.5, 4.5])"),
        ))
    })
}

/// Smooth positive test function with random phases.
fn random_v(rng: &mut ChaCha8Rng, grid: Grid) -> ScalarField {
    let modes: Vec<(f64, f64, f64, f64)> =
        (0..3).map(|_| (rng.random_range(-0.3..0.3), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0 * PI))).collect();
    ScalarField::from_fn(grid, move |x| 1.0 + modes.iter().map(|&(a, k0, k1, phase)| a * (k0 * x[0] + k1 * x[1] + phase).sin()).sum::<f64>())
}

pub fn cutoff_lemma() -> Verdict {
    timed(3, "cutoff lemma", Some(Duration::from_secs(60)), || {
        let (rho, sigma) = (1.0, 2.0);
        let exact = 2.0 * PI / 2f64.ln();

        let sp = ShellProfile::from_fn(rho, sigma, 20_000, |r| 2.0 * PI * r).map_err(err)?;
        let radial = optimal_radial_cutoff(&sp, 0.0).map_err(err)?.j1d;
        let radial_err = rel(radial, exact);

        let field = make_constant(2, 256, 4.5, &identity(2)).map_err(err)?;
        let profile = profile_of_field(&field).map_err(err)?;
        let one = ScalarField::from_fn(field.grid, |_| 1.0);
        let (_, direct) = direct_cutoff_optimum(&one, &profile, rho, sigma).map_err(err)?;
        let direct_err = rel(direct, exact);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for seed in 0..20u64 {
            let spec = FieldSpec::new(2, 128, 4.5, Family::Blocked { p0: ExtReal::Finite(3.0), q0: ExtReal::Finite(3.0), block: 8 }, seed);
            let mu = profile_of_field(&sample_random(&spec).map_err(err)?).map_err(err)?;
            let v = random_v(&mut rng, spec_grid(&spec)?);
            let (_, j_direct) = direct_cutoff_optimum(&v, &mu, rho, sigma).map_err(err)?;
            let shells = shell_integrals(&v, &mu, rho, sigma, default_shells(spec.n)).map_err(err)?;
            let j_radial = optimal_radial_cutoff(&shells, 0.0).map_err(err)?.j1d;
            worst = worst.max(j_direct / j_radial);
        }
        Ok((
            radial_err <= 1e-6 && direct_err <= 0.03 && worst <= 1.05,
            format!(
                "exact {exact:.6}; radial rel err {radial_err:.2e}; direct n=256 {direct:.4} rel err {direct_err:.3}; worst direct/radial over 20 pairs {worst:.4}"
            ),
        ))
    })
}

fn spec_grid(spec: &FieldSpec) -> Result<Grid, String> {
    Grid::new(spec.d, spec.n, spec.length, Topology::Box).map_err(err)
}

pub fn inequality_audits() -> Verdict {
    timed(4, "inequality audits", Some(Duration::from_secs(300)), || {
        let p = ExtReal::Finite(2.0);
        let mut corpus = vec![
            ("constant".to_string(), make_constant(2, 128, 2.0, &identity(2)).map_err(err)?),
            ("radial-power".to_string(), make_radial_power(2, 128, 2.0, 0.5, [0.0; 3]).map_err(err)?.field),
            ("checkerboard".to_string(), make_checkerboard(2, 128, 2.0, 1.0, 4.0).map_err(err)?),
        ];
        for seed in 0..16u64 {
            for n in [64usize, 128] {
                let spec = FieldSpec::new(2, n, 2.0, Family::Blocked { p0: ExtReal::Finite(3.0), q0: ExtReal::Finite(3.0), block: n / 16 }, seed);
                corpus.push((format!("blocked n={n} seed={seed}"), sample_random(&spec).map_err(err)?));
            }
        }
        let mut failed = Vec::new();
        for (name, field) in &corpus {
            let outcome = audit_field(field, p).map_err(|e| format!("{name}: {e}"))?;
            if !outcome.pass() {
                failed.push(name.clone());
            }
        }
        Ok((failed.is_empty(), format!("{} fields audited, failing: {:?}", corpus.len(), failed)))
    })
}

pub fn harnack_sanity() -> Verdict {
    timed(5, "harnack sanity", Some(Duration::from_secs(30)), || {
        let field = make_constant(2, 256, 2.0, &identity(2)).map_err(err)?;
        let mesh = Mesh::new(field.grid);
        let u = solve_dirichlet(&field, &mesh, |x| 2.0 + x[0]).map_err(err)?;
        let linear = harnack_quotient(&u, [0.0; 3], 1.0, 0.5).map_err(err)?.quotient;
        let linear_err = rel(linear, 5.0 / 3.0);

        let constant = ScalarField::from_fn(field.grid, |_| 3.0);
        let residual = weak_residual(&field, &mesh, &constant.values, None);
        let interior_residual = (0..field.grid.num_nodes())
            .filter(|&i| !field.grid.is_boundary_node(i))
            .map(|i| residual[i].abs())
            .fold(0.0, f64::max);
        let flat = harnack_quotient(&constant, [0.0; 3], 1.0, 0.5).map_err(err)?.quotient;
        let solved = solve_dirichlet(&field, &mesh, |_| 3.0).map_err(err)?;
        let solved_flat = harnack_quotient(&solved, [0.0; 3], 1.0, 0.5).map_err(err)?.quotient;
        Ok((
            linear_err <= 0.01 && interior_residual == 0.0 && flat == 1.0,
            format!(
                "2+x1 quotient {linear:.6} (rel err {linear_err:.2e}); constant: residual {interior_residual:e}, quotient {flat}; solver-produced constant quotient - 1 = {:.1e}",
                solved_flat - 1.0
            ),
        ))
    })
}

pub fn borderline_2d() -> Verdict {
    timed(6, "2d borderline", Some(Duration::from_secs(300)), || {
        let mut worst: f64 = 0.0;
        let mut lines = Vec::new();
        for seed in 0..8u64 {
            let mut values = Vec::new();
            for n in [64usize, 128, 256] {
                let spec = FieldSpec::new(2, n, 2.0, Family::Blocked { p0: ExtReal::Finite(1.05), q0: ExtReal::Finite(1.05), block: n / 16 }, seed);
                let field = sample_random(&spec).map_err(err)?;
                let u = solve_dirichlet(&field, &Mesh::new(field.grid), audit_boundary).map_err(err)?;
                values.push(bound_2d_check(&u, &field, [0.0; 3], 0.8).map_err(err)?.c_emp);
            }
            let hi = values.iter().copied().fold(f64::MIN, f64::max);
            let lo = values.iter().copied().fold(f64::MAX, f64::min);
            worst = worst.max(hi / lo);
            lines.push(format!("{:.3}", hi / lo));
        }
        Ok((worst < 2.0, format!("c_emp max/min across n per seed [{}], worst {worst:.3}", lines.join(", "))))
    })
}

pub fn effective_coefficient_oracle() -> Verdict {
    timed(7, "effective coefficient", Some(Duration::from_secs(120)), || {
        let board = periodize(&make_checkerboard(2, 256, 1.0, 1.0, 4.0).map_err(err)?, 1.0).map_err(err)?;
        let flux = effective_coefficient(&board, 0).map_err(err)?[0];
        let board_err = rel(flux, 2.0);

        let layers = [1.0, 5.0, 2.0, 0.5];
        let laminate = periodize(&make_layered(2, 256, 1.0, &layers).map_err(err)?, 1.0).map_err(err)?;
        let harmonic = layers.len() as f64 / layers.iter().map(|w| 1.0 / w).sum::<f64>();
        let arithmetic = layers.iter().sum::<f64>() / layers.len() as f64;
        let across = effective_coefficient(&laminate, 0).map_err(err)?[0];
        let along = effective_coefficient(&laminate, 1).map_err(err)?[1];
        let (across_err, along_err) = (rel(across, harmonic), rel(along, arithmetic));
        Ok((
            board_err <= 0.03 && across_err <= 0.01 && along_err <= 0.01,
            format!(
                "checkerboard {flux:.5} (rel err {board_err:.2e}); laminate across {across:.5} vs {harmonic:.5}, along {along:.5} vs {arithmetic:.5}"
            ),
        ))
    })
}

pub fn sublinearity() -> Verdict {
    timed(8, "sublinearity", Some(Duration::from_secs(1200)), || {
        let spec = FieldSpec::new(2, 16, 16.0, Family::IidParetoMixture { p0: ExtReal::Finite(4.0), q0: ExtReal::Finite(4.0) }, 0);
        let seeds: Vec<u64> = (0..16).collect();
        let curve = corrector_campaign(&spec, &[16, 32, 64, 128], &seeds, 0, 1).map_err(err)?;
        let means: Vec<String> = curve.summary.iter().map(|s| format!("L={} {:.4}", s.length, s.mean_sup)).collect();
        let worst = curve.rows.iter().filter_map(|r| r.energy_bound.as_ref()).map(|e| e.worst).fold(0.0, f64::max);
        Ok((
            curve.failures() == 0 && curve.mean_sup_decreasing() && curve.energy_bound_pass(),
            format!(
                "mean L^-1 sup|phi|: {}; E[mu] {}; worst window energy {worst:.4}; failed jobs {}",
                means.join(", "),
                curve.expected_mu.map(|m| m.to_string()).unwrap_or_default(),
                curve.failures()
            ),
        ))
    })
}

const CAMPAIGNS: [(&str, &str); 2] = [
    (
        "corrector",
        r#"kind = "corrector"
seeds = [0, 1, 2, 3, 4, 5]

[field]
family = "iid-pareto-mixture"
p0 = 4
q0 = 4

[corrector]
lengths = [8, 16, 32]
directions = [0, 1]
two_scale_rho = [0.25]
"#,
    ),
    (
        "solve",
        r#"kind = "solve"
mesh_sizes = [32, 64]
seeds = [0, 1, 2, 3]

[field]
family = "blocked"
p0 = 3
q0 = 3
blocks_per_side = 8
"#,
    ),
];

fn csv_files(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let bytes = fs::read(&path).map_err(err)?;
                out.push((path.strip_prefix(dir).map_err(err)?.to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn campaign_command(kind: &str, args: RunArgs) -> Command {
    match kind {
        "corrector" => Command::Corrector(args),
        _ => Command::Solve(args),
    }
}

pub fn determinism(scratch: &Path) -> Verdict {
    timed(9, "determinism", None, || {
        let mut compared = 0;
        let mut differing = Vec::new();
        for (kind, text) in CAMPAIGNS {
            let config = scratch.join(format!("{kind}.toml"));
            fs::write(&config, text).map_err(err)?;
            let mut reference: Option<Vec<(PathBuf, Vec<u8>)>> = None;
            for threads in [1usize, 4, 2] {
                let out = scratch.join(format!("{kind}-t{threads}"));
                let args = RunArgs { config: Some(config.clone()), out: Some(out.clone()), threads: Some(threads), seed_offset: 0 };
                let code = dhl_cli::run(&Cli { command: campaign_command(kind, args) });
                if code != EXIT_OK {
                    return Err(format!("{kind} with {threads} threads exited {code}"));
                }
                let tables = csv_files(&out)?;
                match &reference {
                    None => reference = Some(tables),
                    Some(first) => {
                        compared += tables.len();
                        if *first != tables {
                            differing.push(format!("{kind} threads={threads}"));
                        }
                    }
                }
            }
        }
        Ok((
            differing.is_empty() && compared > 0,
            format!("{compared} CSVs compared against the single-thread run, differing: {differing:?}"),
        ))
    })
}
