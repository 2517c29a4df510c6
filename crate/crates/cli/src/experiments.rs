//! One runner per subcommand. Jobs run on the current rayon pool and are
//! merged in job-key order.

use rayon::prelude::*;

use dhl_core::cutoff::verify_cutoff_bound;
use dhl_core::exponents::{lambda_of_region, profile_of_field};
use dhl_core::fields::sample_random;
use dhl_core::grid::Region;
use dhl_core::homogenize::{corrector_campaign_with, SublinearityCurve, TwoScalePlan};
use dhl_core::regularity::{
    bound_2d_check, caccioppoli_check, harnack_quotient, linear_cutoff, local_boundedness_ratio, max_principle_check,
    oscillation_decay, sharpness_sweep, weak_harnack_ratio,
};
use dhl_core::report::ExperimentReport;
use dhl_core::solver::{energy, solve_dirichlet};
use dhl_core::{derive_exponents, FieldSpec, MatrixField, Mesh, ScalarField};

use crate::config::{ExperimentConfig, Kind};
use crate::output::{fmt_f64, table_csv, JobFailure};

pub const SUBLINEARITY_HEADER: [&str; 6] = ["L", "seed", "sup_stat", "l1_stat", "energy", "residual"];
pub const SWEEP_HEADER: [&str; 8] = ["alpha", "n", "reciprocal_sum", "sharp_ok", "sup_norm", "residual", "class", "error"];

/// Everything a run produces before it touches the disk.
#[derive(Debug, Default)]
pub struct Outcome {
    pub reports: Vec<ExperimentReport>,
    /// `(relative path, bytes)` of tables other than the long-format CSV.
    pub tables: Vec<(String, Vec<u8>)>,
    pub binaries: Vec<(String, Vec<u8>)>,
    pub failures: Vec<JobFailure>,
    pub jobs: usize,
}

struct JobResult {
    report: ExperimentReport,
    binaries: Vec<(String, Vec<u8>)>,
    failure: Option<JobFailure>,
}

struct Job<'a> {
    kind: Kind,
    config: &'a ExperimentConfig,
    digest: &'a str,
    n: usize,
    seed: u64,
}

impl Job<'_> {
    fn report(&self) -> ExperimentReport {
        let c = self.config;
        ExperimentReport::new(self.kind.name(), self.digest, c.d, self.n, c.length)
            .with_exponents(c.p, c.q)
            .with_seed(self.seed)
    }

    fn label(&self) -> String {
        format!("{} n={} seed={}", self.kind.name(), self.n, self.seed)
    }

    fn field(&self) -> Result<(FieldSpec, MatrixField), String> {
        let c = self.config;
        let spec = c.field.spec(c.d, self.n, c.length, self.seed)?;
        let field = sample_random(&spec).map_err(|e| e.to_string())?;
        Ok((spec, field))
    }

    fn solve(&self, field: &MatrixField) -> Result<ScalarField, String> {
        let (boundary, length) = (self.config.boundary, self.config.length);
        let mut u = solve_dirichlet(field, &Mesh::new(field.grid), |x| boundary.eval(x, length)).map_err(|e| e.to_string())?;
        u.meta.seed = Some(self.seed);
        Ok(u)
    }

    fn run(&self) -> JobResult {
        let mut report = self.report();
        let mut binaries = Vec::new();
        let result = self.measure(&mut report, &mut binaries);
        let failure = result.err().map(|error| {
            report.push_flagged("error", f64::NAN, "error");
            JobFailure { job: self.label(), error }
        });
        JobResult { report, binaries, failure }
    }

    fn measure(&self, report: &mut ExperimentReport, binaries: &mut Vec<(String, Vec<u8>)>) -> Result<(), String> {
        let c = self.config;
        let (_, field) = self.field()?;
        if self.kind == Kind::Solve {
            binaries.push((format!("fields/field_n{}_s{}.dhl", self.n, self.seed), field.to_bytes()));
        }
        let u = self.solve(&field)?;
        report.push("residual", u.meta.residual);
        report.push("iterations", u.meta.iterations as f64);
        let profile = profile_of_field(&field).map_err(|e| e.to_string())?;
        let all: Vec<usize> = (0..field.grid.num_cells()).collect();
        let length = c.length;
        match self.kind {
            Kind::Solve => {
                binaries.push((format!("solutions/solution_n{}_s{}.dhs", self.n, self.seed), u.to_bytes()));
                report.push("energy", energy(&field, &Mesh::new(field.grid), &u.values, None));
                report.push("min", u.values.iter().cloned().fold(f64::INFINITY, f64::min));
                report.push("max", u.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                report.push_ext("lambda", lambda_of_region(&profile, &all, c.p, c.q).map_err(|e| e.to_string())?);
                let mp = max_principle_check(&u, [0.0; 3], 0.4 * length).map_err(|e| e.to_string())?;
                report.push("interior_sup", mp.interior_sup);
                report.push_check("max_principle", mp.boundary_sup, mp.pass);
            }
            Kind::Cutoff => {
                let (rho, sigma) = c.cutoff.radii(length);
                let r = verify_cutoff_bound(&u, &profile, c.p, rho, sigma).map_err(|e| e.to_string())?;
                report.push("rho", r.rho);
                report.push("sigma", r.sigma);
                report.push("p_star", r.p_star);
                report.push("j_direct", r.j_direct);
                report.push("j_radial", r.j_radial);
                report.push("j_radial_discrete", r.j_radial_discrete);
                report.push("holder_bound", r.holder_bound);
                report.push("mu_norm", r.mu_norm);
                report.push("grad_norm", r.grad_norm);
                report.push("value_norm", r.value_norm);
                report.push("rhs", r.rhs);
                let ann = Region::annulus([0.0; 3], rho, sigma).cells(&field.grid);
                report.push_ext("lambda", lambda_of_region(&profile, &ann, c.p, c.q).map_err(|e| e.to_string())?);
                match r.c_emp {
                    Some(v) => report.push_check("c_emp", v, r.pass),
                    None => report.push_flagged("c_emp", f64::NAN, "skipped"),
                }
            }
            Kind::Harnack => {
                let h = &c.harnack;
                let radius = h.radius.unwrap_or(0.4 * length);
                let exps = derive_exponents(c.d, c.p, c.q).map_err(|e| e.to_string())?;
                let hq = harnack_quotient(&u, [0.0; 3], radius, h.theta).map_err(|e| e.to_string())?;
                report.push("quotient", hq.quotient);
                report.push("sup", hq.sup);
                report.push("inf", hq.inf);
                report.push_check("nonnegative", hq.inf, !hq.undershoot);
                let ball = Region::ball([0.0; 3], radius).cells(&field.grid);
                report.push_ext("lambda", lambda_of_region(&profile, &ball, c.p, c.q).map_err(|e| e.to_string())?);
                let weak = weak_harnack_ratio(&u, &exps, [0.0; 3], radius, h.gamma, h.theta, h.tau).map_err(|e| e.to_string())?;
                report.push("weak_harnack", weak);
                if exps.sharp_ok {
                    match local_boundedness_ratio(&u, &field, [0.0; 3], radius, h.gamma, c.p, c.q).map_err(|e| e.to_string())? {
                        Some(lb) => {
                            report.push("sup_ratio", lb.ratio);
                            report.push("predicted_scale", lb.predicted_scale);
                            report.push("c_emp", lb.c_emp);
                        }
                        None => report.push_flagged("c_emp", f64::NAN, "skipped"),
                    }
                } else {
                    report.push_flagged("c_emp", f64::NAN, "skipped");
                }
                let fit = oscillation_decay(&u, [0.0; 3], radius, h.levels).map_err(|e| e.to_string())?;
                match fit.theta {
                    Some(t) => report.push("oscillation_exponent", t),
                    None => report.push_flagged("oscillation_exponent", f64::NAN, "skipped"),
                }
                let eta = linear_cutoff(field.grid, [0.0; 3], 0.5 * radius, radius);
                let cacc = caccioppoli_check(&u, &field, &eta).map_err(|e| e.to_string())?;
                report.push("caccioppoli_rhs", cacc.rhs);
                report.push_check("caccioppoli_lhs", cacc.lhs, cacc.pass);
            }
            Kind::Bound2d => {
                let radius = c.harnack.radius.unwrap_or(0.4 * length);
                let r = bound_2d_check(&u, &field, [0.0; 3], radius).map_err(|e| e.to_string())?;
                let ball = Region::ball([0.0; 3], radius).cells(&field.grid);
                let inv_lambda = ball.iter().map(|&i| 1.0 / profile.lambda[i]).sum::<f64>() / ball.len() as f64;
                let mu = ball.iter().map(|&i| profile.mu[i]).sum::<f64>() / ball.len() as f64;
                report.push("mean_inverse_lambda", inv_lambda);
                report.push("mean_mu", mu);
                report.push("lambda", (mu * inv_lambda).sqrt());
                report.push("lhs", r.lhs);
                report.push("rhs", r.rhs);
                report.push("c_emp", r.c_emp);
            }
            Kind::Exponents | Kind::Corrector | Kind::Sweep => unreachable!("not a mesh job"),
        }
        Ok(())
    }
}

fn mesh_jobs(kind: Kind, config: &ExperimentConfig, digest: &str) -> Outcome {
    let keys: Vec<(usize, u64)> = config.mesh_sizes.iter().flat_map(|&n| config.seeds.iter().map(move |&s| (n, s))).collect();
    let results: Vec<JobResult> =
        keys.par_iter().map(|&(n, seed)| Job { kind, config, digest, n, seed }.run()).collect();
    let mut out = Outcome { jobs: results.len(), ..Outcome::default() };
    for r in results {
        out.reports.push(r.report);
        out.binaries.extend(r.binaries);
        out.failures.extend(r.failure);
    }
    out
}

fn exponent_table(config: &ExperimentConfig, digest: &str) -> Outcome {
    let g = &config.exponents;
    let mut out = Outcome::default();
    for &d in &g.d {
        for &p in &g.p {
            for &q in &g.q {
                out.jobs += 1;
                let mut r = ExperimentReport::new("exponents", digest, d, 0, 0.0).with_exponents(p, q);
                match derive_exponents(d, p, q) {
                    Ok(e) => {
                        r.push("delta", e.delta);
                        r.push("s", e.s);
                        r.push("p_prime", e.p_prime);
                        r.push("chi", e.chi);
                        r.push("p_star", e.p_star);
                        r.push_ext("q_star", e.q_star);
                        r.push_ext("kappa", e.kappa);
                        r.push("sharp_ok", e.sharp_ok as u8 as f64);
                        r.push("classical_ok", e.classical_ok as u8 as f64);
                        r.push("borderline", e.borderline as u8 as f64);
                    }
                    Err(e) => {
                        r.push_flagged("error", f64::NAN, "error");
                        out.failures.push(JobFailure { job: format!("exponents d={d} p={p} q={q}"), error: e.to_string() });
                    }
                }
                out.reports.push(r);
            }
        }
    }
    out
}

fn curve_reports(curve: &SublinearityCurve, config: &ExperimentConfig, digest: &str, out: &mut Outcome) {
    let c = &config.corrector;
    let i = curve.direction;
    let d = config.d;
    for row in &curve.rows {
        out.jobs += 1;
        let mut r = ExperimentReport::new("corrector", digest, d, row.length * c.resolution, row.length as f64)
            .with_exponents(config.p, config.q)
            .with_seed(row.seed);
        r.push("direction", i as f64);
        if let Some(error) = &row.error {
            r.push_flagged("error", f64::NAN, "error");
            out.failures.push(JobFailure { job: format!("corrector L={} seed={} direction={i}", row.length, row.seed), error: error.clone() });
            out.reports.push(r);
            continue;
        }
        r.push("sup_stat", row.sup_stat);
        r.push("l1_stat", row.l1_stat);
        r.push("energy", row.energy);
        r.push("residual", row.residual);
        r.push("iterations", row.iterations as f64);
        for (j, f) in row.flux.iter().enumerate().take(d) {
            r.push(&format!("flux_{j}"), *f);
        }
        if let Some(eb) = &row.energy_bound {
            r.push_check("energy_window_max", eb.worst, eb.pass);
        }
        for t in &row.two_scale {
            let tag = format!("two_scale_rho{}", t.rho);
            r.push(&format!("{tag}_lhs"), t.lhs);
            r.push(&format!("{tag}_lambda_sup"), t.lambda_sup);
            r.push(&format!("{tag}_l1_piece"), t.l1_piece);
            r.push(&format!("{tag}_rhs"), t.rhs);
            r.push_check(&format!("{tag}_c_emp"), t.c_emp, t.pass);
        }
        out.reports.push(r);
    }
    for s in &curve.summary {
        let mut r = ExperimentReport::new("corrector", digest, d, s.length * c.resolution, s.length as f64)
            .with_exponents(config.p, config.q);
        r.push("direction", i as f64);
        r.push("seeds", s.seeds as f64);
        r.push("failures", s.failures as f64);
        r.push("mean_sup", s.mean_sup);
        r.push("max_sup", s.max_sup);
        r.push("mean_l1", s.mean_l1);
        r.push("max_l1", s.max_l1);
        out.reports.push(r);
    }
    let mut r = ExperimentReport::new("corrector", digest, d, 0, 0.0).with_exponents(config.p, config.q);
    r.push("direction", i as f64);
    if let Some(mu) = curve.expected_mu {
        r.push_ext("expected_mu", mu);
    }
    r.push_check("mean_sup_decreasing", curve.summary.last().map_or(f64::NAN, |s| s.mean_sup), curve.mean_sup_decreasing());
    r.push_check("energy_bound", curve.rows.iter().filter_map(|x| x.energy_bound.as_ref()).map(|e| e.worst).fold(0.0, f64::max), curve.energy_bound_pass());
    for &rho in &c.two_scale_rho {
        let max = curve
            .rows
            .iter()
            .flat_map(|x| x.two_scale.iter())
            .filter(|t| t.rho == rho)
            .map(|t| t.c_emp)
            .fold(0.0, f64::max);
        r.push(&format!("two_scale_rho{rho}_c_emp_max"), max);
    }
    out.reports.push(r);
}

fn corrector(config: &ExperimentConfig, digest: &str) -> Result<Outcome, String> {
    let c = &config.corrector;
    let l0 = c.lengths[0];
    let spec = config.field.spec(config.d, l0 * c.resolution, l0 as f64, config.seeds[0])?;
    let plan = (!c.two_scale_rho.is_empty())
        .then(|| TwoScalePlan { rhos: c.two_scale_rho.clone(), p: config.p, q: config.q });
    let mut out = Outcome::default();
    for &i in &c.directions {
        let curve = corrector_campaign_with(&spec, &c.lengths, &config.seeds, i, c.resolution, plan.as_ref())
            .map_err(|e| e.to_string())?;
        let rows = curve
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.length.to_string(),
                    r.seed.to_string(),
                    fmt_f64(r.sup_stat),
                    fmt_f64(r.l1_stat),
                    fmt_f64(r.energy),
                    fmt_f64(r.residual),
                ]
            })
            .collect();
        out.tables.push((format!("sublinearity_dir{i}.csv"), table_csv(&SUBLINEARITY_HEADER, rows).map_err(|e| e.to_string())?));
        curve_reports(&curve, config, digest, &mut out);
    }
    Ok(out)
}

fn sweep(config: &ExperimentConfig, digest: &str) -> Result<Outcome, String> {
    let rows = sharpness_sweep(config.d, &config.sweep.alphas, &config.mesh_sizes, config.length);
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let table = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.alpha),
                r.n.to_string(),
                fmt_f64(r.reciprocal_sum),
                (r.sharp_ok as u8).to_string(),
                opt(r.sup_norm),
                opt(r.residual),
                r.class.clone(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let mut out = Outcome { jobs: rows.len(), ..Outcome::default() };
    out.tables.push(("sweep.csv".into(), table_csv(&SWEEP_HEADER, table).map_err(|e| e.to_string())?));
    for row in &rows {
        let mut r = ExperimentReport::new("sweep", digest, config.d, row.n, config.length);
        r.push("alpha", row.alpha);
        r.push("reciprocal_sum", row.reciprocal_sum);
        r.push("sharp_ok", row.sharp_ok as u8 as f64);
        match (&row.error, row.sup_norm) {
            (Some(e), _) => {
                r.push_flagged("error", f64::NAN, "error");
                out.failures.push(JobFailure { job: format!("sweep alpha={} n={}", row.alpha, row.n), error: e.clone() });
            }
            (None, Some(sup)) => {
                r.push_flagged("sup_norm", sup, &row.class);
                r.push("residual", row.residual.unwrap_or(f64::NAN));
            }
            (None, None) => r.push_flagged("sup_norm", f64::NAN, "skipped"),
        }
        out.reports.push(r);
    }
    Ok(out)
}

/// Runs `kind` on the current rayon pool. `Err` only for problems that
/// invalidate the whole campaign.
pub fn execute(kind: Kind, config: &ExperimentConfig, digest: &str) -> Result<Outcome, String> {
    match kind {
        Kind::Exponents => Ok(exponent_table(config, digest)),
        Kind::Corrector => corrector(config, digest),
        Kind::Sweep => sweep(config, digest),
        _ => Ok(mesh_jobs(kind, config, digest)),
    }
}
