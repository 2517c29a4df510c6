//! Discrete audits of the regularity estimates on computed solutions.
//!
//! Suprema and infima over balls are nodal: taken over mesh nodes inside the
//! closed ball. Averages `⨍_B` are over the cells whose centre lies in `B`,
//! normalized by the measure of those cells, so averages of constants are
//! exact.

use serde::{Deserialize, Serialize};

use crate::cutoff::{verify_cutoff_bound, CutoffReport};
use crate::error::{Error, Result};
use crate::exponents::{
    check_condition, derive_exponents, lambda_of_region, profile_of_field, EllipticityProfile, ExponentSet, ExtReal,
};
use crate::fields::{make_radial_power, MatrixField};
use crate::grid::{norm, Grid, Point, Region};
use crate::mesh::{Mesh, ScalarField};
use crate::solver::{energy_in, solve_dirichlet};

/// Denominator floor for quotients by an infimum.
pub const FLOOR: f64 = 1e-300;
/// Tolerated negative undershoot, relative to the nodal maximum.
pub const UNDERSHOOT_TOL: f64 = 1e-10;
/// Relative slack of the Caccioppoli audit.
pub const CACCIOPPOLI_SLACK: f64 = 0.1;
/// Relative tolerance of the maximum-principle audit.
pub const MAX_PRINCIPLE_TOL: f64 = 1e-8;

fn require_inside(grid: &Grid, region: &Region) -> Result<()> {
    if !region.inside(grid) {
        return Err(Error::InvalidParameter(format!(
            "ball of radius {} around {:?} is not contained in the mesh",
            region.outer,
            &region.center[..grid.d]
        )));
    }
    Ok(())
}

fn nodal_extrema(u: &ScalarField, nodes: &[usize]) -> (f64, f64) {
    nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(u.values[i]), hi.max(u.values[i])))
}

/// `⨍_cells f(u)` with `f` averaged over element vertices.
fn cell_average(u: &ScalarField, mesh: &Mesh, cells: &[usize], f: impl Fn(f64) -> f64 + Copy) -> f64 {
    let nsimp = mesh.simplices_per_cell();
    let total: f64 = cells
        .iter()
        .map(|&c| (0..nsimp).map(|s| mesh.element_vertex_mean(&u.values, c, s, f)).sum::<f64>() / nsimp as f64)
        .sum();
    total / cells.len() as f64
}

fn profile_average(values: &[f64], cells: &[usize], f: impl Fn(f64) -> f64) -> f64 {
    cells.iter().map(|&c| f(values[c])).sum::<f64>() / cells.len() as f64
}

fn nonempty(cells: &[usize], what: &str) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::InvalidParameter(format!("{what} contains no cell centre")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackResult {
    pub quotient: f64,
    pub sup: f64,
    pub inf: f64,
    /// Nodal minimum on `B_R` fell below `-UNDERSHOOT_TOL · max`.
    pub undershoot: bool,
}

/// `sup_{B_θR} u / max(inf_{B_θR} u, FLOOR)`.
pub fn harnack_quotient(u: &ScalarField, center: Point, radius: f64, theta: f64) -> Result<HarnackResult> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta = {theta} not in (0, 1)")));
    }
    let outer = Region::ball(center, radius);
    require_inside(&u.grid, &outer)?;
    let (lo, hi) = nodal_extrema(u, &outer.nodes(&u.grid));
    let undershoot = lo < -UNDERSHOOT_TOL * hi.abs().max(FLOOR);
    let inner = Region::ball(center, theta * radius).nodes(&u.grid);
    if inner.is_empty() {
        return Err(Error::InvalidParameter("inner ball contains no node".into()));
    }
    let (inf, sup) = nodal_extrema(u, &inner);
    Ok(HarnackResult { quotient: sup / inf.max(FLOOR), sup, inf, undershoot })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalBoundednessReport {
    pub ratio: f64,
    pub lambda: f64,
    /// `Λ(B_R)^{p'(1+1/δ)/γ}`
    pub predicted_scale: f64,
    pub c_emp: f64,
}

/// `sup_{B_{R/2}} |u| / (⨍_{B_R} |u|^γ)^{1/γ}` against `Λ(B_R)^{p'(1+1/δ)/γ}`.
/// Returns `None` for `u ≡ 0` on the ball.
pub fn local_boundedness_ratio(
    u: &ScalarField,
    field: &MatrixField,
    center: Point,
    radius: f64,
    gamma: f64,
    p: ExtReal,
    q: ExtReal,
) -> Result<Option<LocalBoundednessReport>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} must be positive")));
    }
    let exps = derive_exponents(u.grid.d, p, q)?;
    if !exps.sharp_ok {
        return Err(Error::InvalidParameter(format!("(p, q) = ({p}, {q}) violates 1/p + 1/q < 2/(d-1)")));
    }
    let ball = Region::ball(center, radius);
    require_inside(&u.grid, &ball)?;
    let mesh = Mesh::new(u.grid);
    let cells = ball.cells(&u.grid);
    nonempty(&cells, "ball")?;
    let mean = cell_average(u, &mesh, &cells, |x| x.abs().powf(gamma)).powf(1.0 / gamma);
    if mean == 0.0 {
        return Ok(None);
    }
    let half = Region::ball(center, 0.5 * radius).nodes(&u.grid);
    let sup = half.iter().map(|&i| u.values[i].abs()).fold(0.0, f64::max);
    let profile = profile_of_field(field)?;
    let lambda = lambda_of_region(&profile, &cells, p, q)?.to_f64();
    let predicted_scale = lambda.powf(exps.lambda_power() / gamma);
    let ratio = sup / mean;
    Ok(Some(LocalBoundednessReport { ratio, lambda, predicted_scale, c_emp: ratio / predicted_scale }))
}

/// `(R^{-d} ∫_{B_τR} u^γ)^{1/γ} / max(inf_{B_θR} u, FLOOR)`; the integral is
/// the cell average times the exact ball measure.
pub fn weak_harnack_ratio(
    u: &ScalarField,
    exps: &ExponentSet,
    center: Point,
    radius: f64,
    gamma: f64,
    theta: f64,
    tau: f64,
) -> Result<f64> {
    if !(0.0 < theta && theta < tau && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 < theta < tau < 1, got ({theta}, {tau})")));
    }
    let limit = match exps.q_star {
        ExtReal::Infinite => f64::INFINITY,
        ExtReal::Finite(v) => 0.5 * v,
    };
    if !(gamma > 0.0 && gamma < limit) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} not in (0, q*/2) = (0, {limit})")));
    }
    let grid = u.grid;
    let d = grid.d;
    require_inside(&grid, &Region::ball(center, radius))?;
    let mesh = Mesh::new(grid);
    let outer = Region::ball(center, tau * radius);
    let cells = outer.cells(&grid);
    nonempty(&cells, "ball")?;
    let integral = cell_average(u, &mesh, &cells, |x| x.max(0.0).powf(gamma)) * outer.measure(d);
    let lhs = (integral / radius.powi(d as i32)).powf(1.0 / gamma);
    let inner = Region::ball(center, theta * radius).nodes(&grid);
    if inner.is_empty() {
        return Err(Error::InvalidParameter("inner ball contains no node".into()));
    }
    let (inf, _) = nodal_extrema(u, &inner);
    Ok(lhs / inf.max(FLOOR))
}

/// Nodal cutoff: 1 on `B_ρ`, linear in `|x|` down to 0 at `σ`.
pub fn linear_cutoff(grid: Grid, center: Point, rho: f64, sigma: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        let r = (0..grid.d).map(|k| (x[k] - center[k]).powi(2)).sum::<f64>().sqrt();
        ((sigma - r) / (sigma - rho)).clamp(0.0, 1.0)
    })
    .with_source("linear-cutoff")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliReport {
    /// `∫ η² λ |∇u₊|²`
    pub lhs: f64,
    /// `∫ u₊² μ |∇η|²`
    pub rhs: f64,
    pub pass: bool,
}

/// `∫η²λ|∇u₊|² ≤ 4∫u₊²μ|∇η|²` with `u₊` the nodal interpolant of
/// `max(u, 0)`. Passes when `lhs ≤ 4·rhs·(1 + CACCIOPPOLI_SLACK)`.
pub fn caccioppoli_check(u: &ScalarField, field: &MatrixField, eta: &ScalarField) -> Result<CaccioppoliReport> {
    if u.grid != eta.grid {
        return Err(Error::Incompatible("function and cutoff live on different meshes".into()));
    }
    let grid = u.grid;
    if eta.values.iter().any(|&e| !(-1e-12..=1.0 + 1e-12).contains(&e)) {
        return Err(Error::InvalidParameter("cutoff must take values in [0, 1]".into()));
    }
    if (0..grid.num_nodes()).any(|i| grid.is_boundary_node(i) && eta.values[i] != 0.0) {
        return Err(Error::InvalidParameter("cutoff must vanish on the mesh boundary".into()));
    }
    let profile = profile_of_field(field)?;
    let mesh = Mesh::new(grid);
    let d = grid.d;
    let plus: Vec<f64> = u.values.iter().map(|&v| v.max(0.0)).collect();
    let vol = mesh.element_volume();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for c in 0..grid.num_cells() {
        for s in 0..mesh.simplices_per_cell() {
            let gu = mesh.gradient(&plus, c, s);
            let ge = mesh.gradient(&eta.values, c, s);
            let eta_sq = mesh.element_vertex_mean(&eta.values, c, s, |x| x * x);
            lhs += profile.lambda[c] * eta_sq * norm(&gu, d).powi(2) * vol;
            rhs += profile.mu[c] * mesh.element_integral_sq(&plus, c, s) * norm(&ge, d).powi(2);
        }
    }
    let pass = lhs <= 4.0 * rhs * (1.0 + CACCIOPPOLI_SLACK) || lhs == 0.0;
    Ok(CaccioppoliReport { lhs, rhs, pass })
}

/// Ratio of `(⨍ μ|u|^{2κ})^{1/κ}` to
/// `R² (⨍μ^p)^{1/(κp)} (⨍λ^{-q})^{1/q} ⨍ a∇u·∇u` for `u` supported in
/// `B_R`. Needs `1/p + 1/q < 2/d`. Returns `None` for `u ≡ 0`.
pub fn weighted_poincare_ratio(
    u: &ScalarField,
    field: &MatrixField,
    center: Point,
    radius: f64,
    p: ExtReal,
    q: ExtReal,
) -> Result<Option<f64>> {
    let grid = u.grid;
    let d = grid.d;
    let flags = check_condition(d, p, q)?;
    if !flags.classical_ok {
        return Err(Error::InvalidParameter(format!(
            "the weighted Poincaré inequality needs 1/p + 1/q < 2/d; got (p, q) = ({p}, {q}), d = {d}"
        )));
    }
    let ball = Region::ball(center, radius);
    require_inside(&grid, &ball)?;
    let scale = u.max_abs();
    if scale == 0.0 {
        return Ok(None);
    }
    for i in 0..grid.num_nodes() {
        let x = grid.node_coord(i);
        let r = (0..d).map(|k| (x[k] - center[k]).powi(2)).sum::<f64>().sqrt();
        if r >= radius * (1.0 - 1e-12) && u.values[i].abs() > 1e-12 * scale {
            return Err(Error::InvalidParameter("function is not supported in the ball".into()));
        }
    }
    let kappa = derive_exponents(d, p, q)?.kappa;
    let profile = profile_of_field(field)?;
    let mesh = Mesh::new(grid);
    let cells = ball.cells(&grid);
    nonempty(&cells, "ball")?;
    let lhs = match kappa {
        ExtReal::Infinite => ball.nodes(&grid).iter().map(|&i| u.values[i].powi(2)).fold(0.0, f64::max),
        ExtReal::Finite(k) => {
            let nsimp = mesh.simplices_per_cell();
            let avg = cells
                .iter()
                .map(|&c| {
                    profile.mu[c]
                        * (0..nsimp).map(|s| mesh.element_vertex_mean(&u.values, c, s, |x| x.abs().powf(2.0 * k))).sum::<f64>()
                        / nsimp as f64
                })
                .sum::<f64>()
                / cells.len() as f64;
            avg.powf(1.0 / k)
        }
    };
    let mu_factor = match (p, kappa) {
        (_, ExtReal::Infinite) => 1.0,
        (ExtReal::Infinite, ExtReal::Finite(k)) => cells.iter().map(|&c| profile.mu[c]).fold(0.0, f64::max).powf(1.0 / k),
        (ExtReal::Finite(pp), ExtReal::Finite(k)) => profile_average(&profile.mu, &cells, |m| m.powf(pp)).powf(1.0 / (k * pp)),
    };
    let lambda_factor = match q {
        ExtReal::Infinite => cells.iter().map(|&c| 1.0 / profile.lambda[c]).fold(0.0, f64::max),
        ExtReal::Finite(qq) => profile_average(&profile.lambda, &cells, |l| l.powf(-qq)).powf(1.0 / qq),
    };
    let energy = energy_in(field, &mesh, &u.values, &cells, None) / (cells.len() as f64 * grid.cell_volume());
    let rhs = radius * radius * mu_factor * lambda_factor * energy;
    Ok(Some(lhs / rhs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub interior_sup: f64,
    /// Nodal sup of `u₊` over the ring `R - √d·h ≤ |x - c| ≤ R`.
    pub boundary_sup: f64,
    pub pass: bool,
}

/// `sup_{B_R} u ≤ sup_{∂B_R} u₊` with the boundary represented by a ring of
/// nodes of width `√d·h`.
pub fn max_principle_check(u: &ScalarField, center: Point, radius: f64) -> Result<MaxPrincipleReport> {
    let grid = u.grid;
    let ball = Region::ball(center, radius);
    require_inside(&grid, &ball)?;
    let width = (grid.d as f64).sqrt() * grid.h();
    if width >= radius {
        return Err(Error::InvalidParameter(format!("ball of radius {radius} is not resolved by h = {}", grid.h())));
    }
    let ring = Region::annulus(center, radius - width, radius).nodes(&grid);
    let interior = Region::ball(center, radius - width).nodes(&grid);
    let scale = ball.nodes(&grid).iter().map(|&i| u.values[i].abs()).fold(0.0, f64::max);
    let boundary_sup = ring.iter().map(|&i| u.values[i].max(0.0)).fold(0.0, f64::max);
    let interior_sup = interior.iter().map(|&i| u.values[i]).fold(f64::NEG_INFINITY, f64::max);
    let pass = interior_sup <= boundary_sup + MAX_PRINCIPLE_TOL * scale;
    Ok(MaxPrincipleReport { interior_sup, boundary_sup, pass })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound2dReport {
    /// `sup_{B_{R/2}} |u|`
    pub lhs: f64,
    /// `R (⨍λ^{-1})^{1/2} (⨍a∇u·∇u)^{1/2} + ⨍|u|`
    pub rhs: f64,
    pub c_emp: f64,
}

/// Two-dimensional local bound needing only `λ^{-1}, μ ∈ L¹`.
pub fn bound_2d_check(u: &ScalarField, field: &MatrixField, center: Point, radius: f64) -> Result<Bound2dReport> {
    let grid = u.grid;
    if grid.d != 2 {
        return Err(Error::InvalidParameter(format!("the two-dimensional bound needs d = 2, got {}", grid.d)));
    }
    let ball = Region::ball(center, radius);
    require_inside(&grid, &ball)?;
    let mesh = Mesh::new(grid);
    let profile = profile_of_field(field)?;
    let cells = ball.cells(&grid);
    nonempty(&cells, "ball")?;
    let measure = cells.len() as f64 * grid.cell_volume();
    let inv_lambda = profile_average(&profile.lambda, &cells, |l| 1.0 / l);
    let energy = energy_in(field, &mesh, &u.values, &cells, None) / measure;
    let mean_abs = cell_average(u, &mesh, &cells, f64::abs);
    let rhs = radius * (inv_lambda * energy).sqrt() + mean_abs;
    let lhs = Region::ball(center, 0.5 * radius).nodes(&grid).iter().map(|&i| u.values[i].abs()).fold(0.0, f64::max);
    Ok(Bound2dReport { lhs, rhs, c_emp: if rhs > 0.0 { lhs / rhs } else { f64::NAN } })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationFit {
    pub radii: Vec<f64>,
    pub oscillation: Vec<f64>,
    /// Least-squares slope of `log osc` against `log R`; `None` when fewer
    /// than two radii survive or the oscillation vanishes.
    pub theta: Option<f64>,
}

/// Oscillation on `B_R`, `R = R₀ 2^{-j}`, `j = 1..=levels`, keeping `R ≥ 8h`.
pub fn oscillation_decay(u: &ScalarField, center: Point, r0: f64, levels: usize) -> Result<OscillationFit> {
    let grid = u.grid;
    require_inside(&grid, &Region::ball(center, r0))?;
    let mut radii = Vec::new();
    let mut oscillation = Vec::new();
    for j in 1..=levels {
        let r = r0 * 0.5f64.powi(j as i32);
        if r < 8.0 * grid.h() {
            break;
        }
        let (lo, hi) = nodal_extrema(u, &Region::ball(center, r).nodes(&grid));
        radii.push(r);
        oscillation.push(hi - lo);
    }
    let usable = radii.len() >= 2 && oscillation.iter().all(|&o| o > 0.0);
    let theta = usable.then(|| {
        let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = oscillation.iter().map(|o| o.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(OscillationFit { radii, oscillation, theta })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub n: usize,
    /// `1/p + 1/q` at the integrability limits of `|x|^α`.
    pub reciprocal_sum: f64,
    pub sharp_ok: bool,
    /// `sup |u|` over nodes of `B_{L/4}`; `None` when the solve failed.
    pub sup_norm: Option<f64>,
    pub residual: Option<f64>,
    pub error: Option<String>,
    /// `stable`, `growing`, `first` (no coarser level) or `failed`.
    pub class: String,
}

/// Boundary data of the sharpness sweep.
pub fn sweep_boundary(x: &Point) -> f64 {
    1.0 + x[0]
}

/// Solves `-∇·|x|^α∇u = 0` with data `1 + x₁` on `[-L/2, L/2]^d` for each
/// `(α, n)` and classifies the interior sup norm under refinement.
pub fn sharpness_sweep(d: usize, alphas: &[f64], ns: &[usize], length: f64) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &alpha in alphas {
        let reciprocal_sum = alpha.abs() / d as f64;
        let sharp_ok = reciprocal_sum < 2.0 / (d as f64 - 1.0);
        let mut previous: Option<f64> = None;
        for &n in ns {
            let result = make_radial_power(d, n, length, alpha, [0.0; 3]).and_then(|w| {
                let mesh = Mesh::build(d, n, length, crate::grid::Topology::Box)?;
                solve_dirichlet(&w.field, &mesh, sweep_boundary)
            });
            let row = match result {
                Ok(u) => {
                    let sup = Region::ball([0.0; 3], 0.25 * length)
                        .nodes(&u.grid)
                        .iter()
                        .map(|&i| u.values[i].abs())
                        .fold(0.0, f64::max);
                    let class = match previous {
                        None => "first",
                        Some(prev) if (sup - prev).abs() <= 0.1 * prev.abs() => "stable",
                        Some(_) => "growing",
                    };
                    previous = Some(sup);
                    SweepRow {
                        alpha,
                        n,
                        reciprocal_sum,
                        sharp_ok,
                        sup_norm: Some(sup),
                        residual: Some(u.meta.residual),
                        error: None,
                        class: class.into(),
                    }
                }
                Err(e) => SweepRow {
                    alpha,
                    n,
                    reciprocal_sum,
                    sharp_ok,
                    sup_norm: None,
                    residual: None,
                    error: Some(e.to_string()),
                    class: "failed".into(),
                },
            };
            rows.push(row);
        }
    }
    rows
}

/// Boundary data of the inequality audit: sign-changing and non-linear.
pub fn audit_boundary(x: &Point) -> f64 {
    x[0] + 0.5 * x[1] * x[1] - 0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub caccioppoli: Vec<CaccioppoliReport>,
    pub max_principle: MaxPrincipleReport,
    pub cutoff: CutoffReport,
    pub residual: f64,
}

impl AuditOutcome {
    pub fn pass(&self) -> bool {
        self.caccioppoli.iter().all(|c| c.pass) && self.max_principle.pass && self.cutoff.pass
    }
}

/// Annuli `(ρ, σ)` relative to the box side used for the Caccioppoli audit.
pub const AUDIT_CUTOFFS: [(f64, f64); 5] = [(0.05, 0.2), (0.1, 0.3), (0.15, 0.35), (0.2, 0.45), (0.0, 0.4)];

/// Dirichlet solve with [`audit_boundary`] followed by the Caccioppoli
/// audit for `u₊` and `(-u)₊` over [`AUDIT_CUTOFFS`], the maximum principle
/// on `B_{0.4L}` and the cutoff bound on the annulus `(0.15L, 0.35L)`.
pub fn audit_field(field: &MatrixField, p: ExtReal) -> Result<AuditOutcome> {
    let grid = field.grid;
    let mesh = Mesh::new(grid);
    let u = solve_dirichlet(field, &mesh, audit_boundary)?;
    let l = grid.length;
    let mut caccioppoli = Vec::new();
    for &(rho, sigma) in &AUDIT_CUTOFFS {
        let eta = linear_cutoff(grid, [0.0; 3], rho * l, sigma * l);
        caccioppoli.push(caccioppoli_check(&u, field, &eta)?);
        caccioppoli.push(caccioppoli_check(&u.scaled(-1.0), field, &eta)?);
    }
    let max_principle = max_principle_check(&u, [0.0; 3], 0.4 * l)?;
    let profile: EllipticityProfile = profile_of_field(field)?;
    let cutoff = verify_cutoff_bound(&u, &profile, p, 0.15 * l, 0.35 * l)?;
    Ok(AuditOutcome { caccioppoli, max_principle, cutoff, residual: u.meta.residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{identity, make_constant};
    use crate::grid::Topology;
    use std::f64::consts::PI;

    fn box_grid(n: usize, l: f64) -> Grid {
        Grid::new(2, n, l, Topology::Box).unwrap()
    }

    fn unit_field(n: usize, l: f64) -> MatrixField {
        make_constant(2, n, l, &identity(2)).unwrap()
    }

    #[test]
    fn harnack_of_constants_and_linear() {
        let g = box_grid(64, 2.0);
        let one = ScalarField::from_fn(g, |_| 3.0);
        assert_eq!(harnack_quotient(&one, [0.0; 3], 1.0, 0.5).unwrap().quotient, 1.0);
        let lin = ScalarField::from_fn(g, |x| 2.0 + x[0]);
        let h = harnack_quotient(&lin, [0.0; 3], 1.0, 0.5).unwrap();
        assert!((h.quotient - 5.0 / 3.0).abs() < 1e-12);
        assert!(!h.undershoot);
        let neg = ScalarField::from_fn(g, |x| x[0]);
        assert!(harnack_quotient(&neg, [0.0; 3], 1.0, 0.5).unwrap().undershoot);
        assert!(harnack_quotient(&one, [0.5, 0.0, 0.0], 1.0, 0.5).is_err());
    }

    #[test]
    fn harnack_quotient_is_scale_invariant() {
        let g = box_grid(32, 2.0);
        let u = ScalarField::from_fn(g, |x| 1.5 + x[0] * x[1]);
        let a = harnack_quotient(&u, [0.0; 3], 1.0, 0.5).unwrap().quotient;
        let b = harnack_quotient(&u.scaled(7.3), [0.0; 3], 1.0, 0.5).unwrap().quotient;
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn local_boundedness_of_linear_function() {
        // ⨍_{B_1} |x₁| = 4/(3π) in the plane.
        let n = 256;
        let g = box_grid(n, 2.0);
        let u = ScalarField::from_fn(g, |x| x[0]);
        let r = local_boundedness_ratio(&u, &unit_field(n, 2.0), [0.0; 3], 1.0, 1.0, ExtReal::Infinite, ExtReal::Infinite)
            .unwrap()
            .unwrap();
        let exact = 0.5 / (4.0 / (3.0 * PI));
        assert!((r.ratio - exact).abs() / exact < 0.01, "{}", r.ratio);
        assert!((r.lambda - 1.0).abs() < 1e-12);
        assert_eq!(r.c_emp, r.ratio);
    }

    #[test]
    fn local_boundedness_of_constants() {
        let g = box_grid(32, 2.0);
        let field = crate::fields::make_checkerboard(2, 32, 2.0, 1.0, 4.0).unwrap();
        let one = ScalarField::from_fn(g, |_| 1.0);
        let (p, q) = (ExtReal::Finite(4.0), ExtReal::Finite(4.0));
        let r = local_boundedness_ratio(&one, &field, [0.0; 3], 1.0, 0.5, p, q).unwrap().unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        assert!(r.lambda > 1.0 && r.c_emp <= 1.0);
        let exps = derive_exponents(2, p, q).unwrap();
        assert!((r.c_emp - r.lambda.powf(-exps.lambda_power() / 0.5)).abs() < 1e-12);
        let zero = ScalarField::from_fn(g, |_| 0.0);
        assert!(local_boundedness_ratio(&zero, &field, [0.0; 3], 1.0, 0.5, p, q).unwrap().is_none());
    }

    #[test]
    fn weak_harnack_of_constant() {
        let g = box_grid(64, 2.0);
        let one = ScalarField::from_fn(g, |_| 1.0);
        let exps = derive_exponents(2, ExtReal::Finite(3.0), ExtReal::Finite(3.0)).unwrap();
        let (tau, gamma) = (0.75, 0.5);
        let r = weak_harnack_ratio(&one, &exps, [0.0; 3], 1.0, gamma, 0.5, tau).unwrap();
        let exact = (PI * tau * tau).powf(1.0 / gamma);
        assert!((r - exact).abs() < 1e-12 * exact);
        let limit = 0.5 * exps.q_star.to_f64();
        assert!(weak_harnack_ratio(&one, &exps, [0.0; 3], 1.0, limit, 0.5, tau).is_err());
        assert!(weak_harnack_ratio(&one, &exps, [0.0; 3], 1.0, gamma, 0.8, tau).is_err());
    }

    #[test]
    fn caccioppoli_closed_form() {
        // a = I, u = x₁, η linear in r on (ρ,σ) = (0.25, 0.75):
        // lhs = ∫_{x₁>0} η², rhs = ∫_{x₁>0} x₁² |∇η|².
        let n = 256;
        let g = box_grid(n, 2.0);
        let u = ScalarField::from_fn(g, |x| x[0]);
        let eta = linear_cutoff(g, [0.0; 3], 0.25, 0.75);
        let r = caccioppoli_check(&u, &unit_field(n, 2.0), &eta).unwrap();
        let lhs = 0.5 * PI * (0.25f64.powi(2) + 2.0 * quad(|r| ((0.75 - r) / 0.5).powi(2) * r, 0.25, 0.75));
        // ∫ x₁² over a half annulus = (π/2)·(σ⁴-ρ⁴)/4, |∇η|² = 4.
        let rhs = 4.0 * 0.5 * PI * (0.75f64.powi(4) - 0.25f64.powi(4)) / 4.0;
        assert!((r.lhs - lhs).abs() / lhs < 0.02, "{} vs {lhs}", r.lhs);
        assert!((r.rhs - rhs).abs() / rhs < 0.02, "{} vs {rhs}", r.rhs);
        assert!(r.pass);
        let neg = ScalarField::from_fn(g, |_| -1.0);
        let z = caccioppoli_check(&neg, &unit_field(n, 2.0), &eta).unwrap();
        assert_eq!((z.lhs, z.rhs, z.pass), (0.0, 0.0, true));
    }

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let m = 20000;
        let h = (b - a) / m as f64;
        (0..m).map(|k| f(a + (k as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn caccioppoli_rejects_bad_cutoffs() {
        let g = box_grid(16, 2.0);
        let u = ScalarField::from_fn(g, |x| x[0]);
        let f = unit_field(16, 2.0);
        assert!(caccioppoli_check(&u, &f, &ScalarField::from_fn(g, |_| 1.0)).is_err());
        assert!(caccioppoli_check(&u, &f, &ScalarField::from_fn(g, |_| 2.0)).is_err());
    }

    #[test]
    fn poincare_needs_classical_regime() {
        let g = box_grid(64, 2.0);
        let tent = ScalarField::from_fn(g, |x| (1.0 - norm(x, 2)).max(0.0));
        let f = unit_field(64, 2.0);
        let err = weighted_poincare_ratio(&tent, &f, [0.0; 3], 1.0, ExtReal::Finite(2.0), ExtReal::Finite(2.0));
        assert!(err.is_err());
        let zero = ScalarField::from_fn(g, |_| 0.0);
        assert_eq!(weighted_poincare_ratio(&zero, &f, [0.0; 3], 1.0, ExtReal::Finite(4.0), ExtReal::Finite(4.0)).unwrap(), None);
        assert!(weighted_poincare_ratio(&ScalarField::from_fn(g, |_| 1.0), &f, [0.0; 3], 1.0, ExtReal::Finite(4.0), ExtReal::Finite(4.0)).is_err());
    }

    #[test]
    fn poincare_tent_closed_form() {
        // a = I, p = q = ∞ in d = 2: κ = ∞, so the ratio is
        // sup u² / (R² ⨍|∇u|²) = 1 / (1 · 1) for the unit tent.
        let n = 256;
        let g = box_grid(n, 2.0);
        let tent = ScalarField::from_fn(g, |x| (1.0 - norm(x, 2)).max(0.0));
        let r = weighted_poincare_ratio(&tent, &unit_field(n, 2.0), [0.0; 3], 1.0, ExtReal::Infinite, ExtReal::Infinite)
            .unwrap()
            .unwrap();
        assert!((r - 1.0).abs() < 0.03, "{r}");
        // p = q = 8: 1/κ = 8/7 · 1/8, ⨍ u^{2κ} over the disc = 2/((2κ+1)(2κ+2)).
        let (p, q) = (ExtReal::Finite(8.0), ExtReal::Finite(8.0));
        let k = derive_exponents(2, p, q).unwrap().kappa.to_f64();
        let r = weighted_poincare_ratio(&tent, &unit_field(n, 2.0), [0.0; 3], 1.0, p, q).unwrap().unwrap();
        let exact = (2.0 / ((2.0 * k + 1.0) * (2.0 * k + 2.0))).powf(1.0 / k);
        assert!((r - exact).abs() / exact < 0.03, "{r} vs {exact}");
    }

    #[test]
    fn max_principle_on_linear_and_constant() {
        let g = box_grid(64, 2.0);
        let lin = ScalarField::from_fn(g, |x| x[0] + 0.3 * x[1]);
        assert!(max_principle_check(&lin, [0.0; 3], 0.8).unwrap().pass);
        let c = ScalarField::from_fn(g, |_| 2.0);
        let r = max_principle_check(&c, [0.0; 3], 0.8).unwrap();
        assert!(r.pass && r.interior_sup == r.boundary_sup);
        let bump = ScalarField::from_fn(g, |x| 1.0 - norm(x, 2));
        assert!(!max_principle_check(&bump, [0.0; 3], 0.8).unwrap().pass);
    }

    #[test]
    fn bound_2d_of_constant_and_linear() {
        let n = 128;
        let g = box_grid(n, 2.0);
        let f = unit_field(n, 2.0);
        let one = bound_2d_check(&ScalarField::from_fn(g, |_| 1.0), &f, [0.0; 3], 1.0).unwrap();
        assert!((one.lhs - 1.0).abs() < 1e-15 && (one.rhs - 1.0).abs() < 1e-12 && one.c_emp <= 1.0 + 1e-12);
        // u = x₁: lhs = 1/2, rhs = 1·1·1 + 4/(3π).
        let lin = bound_2d_check(&ScalarField::from_fn(g, |x| x[0]), &f, [0.0; 3], 1.0).unwrap();
        let rhs = 1.0 + 4.0 / (3.0 * PI);
        assert!((lin.lhs - 0.5).abs() < 1e-12);
        assert!((lin.rhs - rhs).abs() / rhs < 0.01);
        let g3 = Grid::new(3, 8, 2.0, Topology::Box).unwrap();
        let f3 = make_constant(3, 8, 2.0, &identity(3)).unwrap();
        assert!(bound_2d_check(&ScalarField::from_fn(g3, |_| 1.0), &f3, [0.0; 3], 0.5).is_err());
    }

    #[test]
    fn oscillation_of_linear_and_constant() {
        let g = box_grid(256, 2.0);
        let fit = oscillation_decay(&ScalarField::from_fn(g, |x| x[0]), [0.0; 3], 1.0, 6).unwrap();
        assert!((fit.theta.unwrap() - 1.0).abs() < 0.02);
        assert!(fit.radii.iter().all(|&r| r >= 8.0 * g.h()));
        let c = oscillation_decay(&ScalarField::from_fn(g, |_| 1.0), [0.0; 3], 1.0, 6).unwrap();
        assert!(c.theta.is_none());
    }

    #[test]
    fn flat_weight_sweep_is_stable() {
        let rows = sharpness_sweep(2, &[0.0, 1.0], &[16, 32], 2.0);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].class, "first");
        assert_eq!(rows[1].class, "stable");
        assert!(rows.iter().all(|r| r.sharp_ok));
    }

    #[test]
    fn audit_on_uniform_field_passes() {
        let out = audit_field(&unit_field(64, 2.0), ExtReal::Finite(2.0)).unwrap();
        assert!(out.pass(), "{out:?}");
    }
}
