//! Periodic corrector campaigns on growing tori.
//!
//! A box of side `L` with `resolution` cells per unit length is sampled,
//! made periodic and the corrector `φ_i` of `∇·a(e_i + ∇φ_i) = 0` is solved
//! with zero mean. Statistics are taken over the whole torus.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{derive_exponents, lambda_of_region, profile_of_field, ExtReal};
use crate::fields::{monte_carlo_moment, periodize, sample_random, FieldSpec, MatrixField};
use crate::grid::{Region, Topology};
use crate::mesh::{Mesh, ScalarField};
use crate::solver::{cell_energy, cell_flux, solve_corrector};

/// Relative slack of the energy bound.
pub const ENERGY_SLACK: f64 = 0.1;
/// Monte-Carlo sample count for `E[μ]`.
pub const MOMENT_SAMPLES: usize = 1 << 20;

fn unit(d: usize, i: usize) -> Result<[f64; 3]> {
    if i >= d {
        return Err(Error::InvalidParameter(format!("direction {i} out of range for d = {d}")));
    }
    let mut e = [0.0; 3];
    e[i] = 1.0;
    Ok(e)
}

fn require_torus(field: &MatrixField) -> Result<()> {
    if field.grid.topology != Topology::Torus {
        return Err(Error::Incompatible("corrector statistics need a periodic field".into()));
    }
    Ok(())
}

/// Periodic field of side `length` with `resolution` cells per unit length.
pub fn periodic_sample(spec: &FieldSpec, length: usize, resolution: usize) -> Result<MatrixField> {
    let sized = spec.with_size(length * resolution, length as f64);
    periodize(&sample_random(&sized)?, length as f64)
}

/// `⨍_torus a(e_i + ∇φ)`.
pub fn averaged_flux(field: &MatrixField, phi: &ScalarField, direction: usize) -> Result<[f64; 3]> {
    require_torus(field)?;
    let mesh = Mesh::new(field.grid);
    let e = unit(field.grid.d, direction)?;
    let mut total = [0.0; 3];
    for c in 0..field.grid.num_cells() {
        let f = cell_flux(field, &mesh, &phi.values, c, &e);
        for k in 0..3 {
            total[k] += f[k];
        }
    }
    let vol = field.grid.length.powi(field.grid.d as i32);
    Ok(total.map(|t| t / vol))
}

/// Homogenized flux `⨍ a(e_i + ∇φ_i)` of a periodic field.
pub fn effective_coefficient(field: &MatrixField, direction: usize) -> Result<[f64; 3]> {
    require_torus(field)?;
    let mesh = Mesh::new(field.grid);
    let phi = solve_corrector(field, &mesh, direction)?;
    averaged_flux(field, &phi, direction)
}

/// `⨍ a(e_i+∇φ)·(e_i+∇φ)` over the cells of a region (with torus
/// multiplicity).
pub fn window_energy(field: &MatrixField, phi: &ScalarField, direction: usize, cells: &[usize]) -> Result<f64> {
    let mesh = Mesh::new(field.grid);
    let e = unit(field.grid.d, direction)?;
    if cells.is_empty() {
        return Err(Error::InvalidParameter("window contains no cell centre".into()));
    }
    let total: f64 = cells.iter().map(|&c| cell_energy(field, &mesh, &phi.values, c, Some(&e))).sum();
    Ok(total / (cells.len() as f64 * field.grid.cell_volume()))
}

/// `E[μ]` of a spec: Monte-Carlo for random families, closed form
/// otherwise (scalar fields have `μ = ω`).
pub fn expected_mu(spec: &FieldSpec) -> Option<ExtReal> {
    let analytic = spec.expected_moment(1.0)?;
    if analytic.is_infinite() {
        return Some(analytic);
    }
    match monte_carlo_moment(spec, 1.0, MOMENT_SAMPLES, spec.seed ^ 0x9e37_79b9_7f4a_7c15) {
        Some((mean, _)) => Some(ExtReal::Finite(mean)),
        None => Some(analytic),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowValue {
    pub z: [f64; 3],
    pub radius: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBoundReport {
    pub windows: Vec<WindowValue>,
    pub expected_mu: ExtReal,
    /// Largest window value at the largest radius.
    pub worst: f64,
    pub pass: bool,
}

/// Window centres `z ∈ {0, ±e_j/2}`.
pub fn window_centres(d: usize) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]];
    for j in 0..d {
        for s in [0.5, -0.5] {
            let mut z = [0.0; 3];
            z[j] = s;
            out.push(z);
        }
    }
    out
}

/// Window averages on `B_R(Rz)` for `R ∈ {L/8, L/4}`; passes when every
/// window at the largest radius stays below `E[μ]·(1 + ENERGY_SLACK)`.
pub fn energy_bound_check(phi: &ScalarField, field: &MatrixField, direction: usize, expected_mu: ExtReal) -> Result<EnergyBoundReport> {
    require_torus(field)?;
    let grid = field.grid;
    let radii = [grid.length / 8.0, grid.length / 4.0];
    let mut windows = Vec::new();
    for &radius in &radii {
        for z in window_centres(grid.d) {
            let center = z.map(|c| c * radius);
            let cells = Region::ball(center, radius).cells(&grid);
            windows.push(WindowValue { z, radius, value: window_energy(field, phi, direction, &cells)? });
        }
    }
    let largest = radii[1];
    let worst = windows.iter().filter(|w| w.radius == largest).map(|w| w.value).fold(f64::NEG_INFINITY, f64::max);
    let pass = match expected_mu {
        ExtReal::Infinite => true,
        ExtReal::Finite(m) => worst <= m * (1.0 + ENERGY_SLACK),
    };
    Ok(EnergyBoundReport { windows, expected_mu, worst, pass })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleReport {
    pub radius: f64,
    pub rho: f64,
    /// Covering centres `z ∈ ρℤ^d ∩ B_1`.
    pub centres: usize,
    /// `sup_z Λ(B_{2dρR}(Rz))^{p'(1+1/δ)}`
    pub lambda_sup: f64,
    /// `ρ^{-d} ⨍_{B_{2dR}} |φ|`
    pub l1_piece: f64,
    /// `ρR`
    pub linear_piece: f64,
    pub rhs: f64,
    /// `‖φ‖_{L∞(B_R)}` (nodal)
    pub lhs: f64,
    pub c_emp: f64,
    pub pass: bool,
}

/// Evaluates the pieces of the covering estimate
/// `‖φ‖_{L∞(B_R)} ≲ (ρ^{-d}⨍_{B_{2dR}}|φ| + ρR) sup_z Λ(B_{2dρR}(Rz))^{p'(1+1/δ)} + ρR`
/// with unit constant. Balls wrap around the torus.
pub fn two_scale_audit(phi: &ScalarField, field: &MatrixField, radius: f64, rho: f64, p: ExtReal, q: ExtReal) -> Result<TwoScaleReport> {
    require_torus(field)?;
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(Error::InvalidParameter(format!("rho = {rho} not in (0, 1/2]")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius = {radius} must be positive")));
    }
    let grid = field.grid;
    let d = grid.d;
    let exps = derive_exponents(d, p, q)?;
    if !exps.sharp_ok {
        return Err(Error::InvalidParameter(format!("(p, q) = ({p}, {q}) violates 1/p + 1/q < 2/(d-1)")));
    }
    let profile = profile_of_field(field)?;
    let steps = (1.0 / rho).floor() as i64;
    let mut centres = Vec::new();
    for k2 in if d == 3 { -steps..=steps } else { 0..=0 } {
        for k1 in -steps..=steps {
            for k0 in -steps..=steps {
                let z = [k0 as f64 * rho, k1 as f64 * rho, k2 as f64 * rho];
                if z.iter().map(|c| c * c).sum::<f64>() <= 1.0 + 1e-12 {
                    centres.push(z);
                }
            }
        }
    }
    let small = 2.0 * d as f64 * rho * radius;
    let mut lambda_sup: f64 = 0.0;
    for z in &centres {
        let cells = Region::ball(z.map(|c| c * radius), small).cells(&grid);
        if cells.is_empty() {
            return Err(Error::InvalidParameter(format!("covering ball of radius {small} contains no cell centre")));
        }
        let lam = lambda_of_region(&profile, &cells, p, q)?.to_f64();
        lambda_sup = lambda_sup.max(lam.powf(exps.lambda_power()));
    }
    let mesh = Mesh::new(grid);
    let big = Region::ball([0.0; 3], 2.0 * d as f64 * radius).cells(&grid);
    let nsimp = mesh.simplices_per_cell();
    let mean_abs = big
        .iter()
        .map(|&c| (0..nsimp).map(|s| mesh.element_vertex_mean(&phi.values, c, s, f64::abs)).sum::<f64>() / nsimp as f64)
        .sum::<f64>()
        / big.len() as f64;
    let l1_piece = rho.powi(-(d as i32)) * mean_abs;
    let linear_piece = rho * radius;
    let rhs = (l1_piece + linear_piece) * lambda_sup + linear_piece;
    let lhs = Region::ball([0.0; 3], radius).nodes(&grid).iter().map(|&i| phi.values[i].abs()).fold(0.0, f64::max);
    let c_emp = lhs / rhs;
    Ok(TwoScaleReport {
        radius,
        rho,
        centres: centres.len(),
        lambda_sup,
        l1_piece,
        linear_piece,
        rhs,
        lhs,
        c_emp,
        pass: lhs <= rhs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub length: usize,
    pub seed: u64,
    /// `L^{-1} ‖φ‖_{L∞}`
    pub sup_stat: f64,
    /// `L^{-1} ⨍ |φ|`
    pub l1_stat: f64,
    /// `⨍ a(e_i+∇φ)·(e_i+∇φ)` over the torus.
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `⨍ a(e_i + ∇φ)` over the torus.
    pub flux: [f64; 3],
    pub energy_bound: Option<EnergyBoundReport>,
    pub two_scale: Vec<TwoScaleReport>,
    pub error: Option<String>,
}

impl CampaignRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub length: usize,
    pub seeds: usize,
    pub failures: usize,
    pub mean_sup: f64,
    pub max_sup: f64,
    pub mean_l1: f64,
    pub max_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublinearityCurve {
    pub digest: String,
    pub direction: usize,
    pub resolution: usize,
    pub expected_mu: Option<ExtReal>,
    /// Ordered by `(L, seed)`.
    pub rows: Vec<CampaignRow>,
    pub summary: Vec<LengthSummary>,
}

impl SublinearityCurve {
    /// Mean of `L^{-1}‖φ‖_∞` strictly decreasing over consecutive lengths.
    pub fn mean_sup_decreasing(&self) -> bool {
        self.summary.windows(2).all(|w| w[1].mean_sup < w[0].mean_sup)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }

    /// Every successful job passes the energy bound.
    pub fn energy_bound_pass(&self) -> bool {
        self.rows.iter().filter_map(|r| r.energy_bound.as_ref()).all(|e| e.pass)
    }
}

/// Two-scale audits run inside each campaign job at `R = L/8`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoScalePlan {
    pub rhos: Vec<f64>,
    pub p: ExtReal,
    pub q: ExtReal,
}

/// Ball radius of the in-campaign two-scale audit relative to `L`.
pub const TWO_SCALE_RADIUS: f64 = 0.125;

fn run_job(
    spec: &FieldSpec,
    (length, seed): (usize, u64),
    direction: usize,
    resolution: usize,
    mu: Option<ExtReal>,
    plan: Option<&TwoScalePlan>,
) -> CampaignRow {
    let attempt = || -> Result<CampaignRow> {
        let field = periodic_sample(&spec.with_seed(seed), length, resolution)?;
        let mesh = Mesh::new(field.grid);
        let mut phi = solve_corrector(&field, &mesh, direction)?;
        phi.meta.seed = Some(seed);
        let l = length as f64;
        let sup_stat = phi.max_abs() / l;
        let l1_stat = phi.values.iter().map(|v| v.abs()).sum::<f64>() / phi.values.len() as f64 / l;
        let all: Vec<usize> = (0..field.grid.num_cells()).collect();
        let energy = window_energy(&field, &phi, direction, &all)?;
        let energy_bound = match mu {
            Some(m) => Some(energy_bound_check(&phi, &field, direction, m)?),
            None => None,
        };
        let flux = averaged_flux(&field, &phi, direction)?;
        let two_scale = match plan {
            Some(plan) => plan
                .rhos
                .iter()
                .map(|&rho| two_scale_audit(&phi, &field, TWO_SCALE_RADIUS * l, rho, plan.p, plan.q))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(CampaignRow {
            length,
            seed,
            sup_stat,
            l1_stat,
            energy,
            residual: phi.meta.residual,
            iterations: phi.meta.iterations,
            flux,
            energy_bound,
            two_scale,
            error: None,
        })
    };
    attempt().unwrap_or_else(|e| CampaignRow {
        length,
        seed,
        sup_stat: f64::NAN,
        l1_stat: f64::NAN,
        energy: f64::NAN,
        residual: match &e {
            Error::NonConvergence { residual, .. } => *residual,
            _ => f64::NAN,
        },
        iterations: 0,
        flux: [f64::NAN; 3],
        energy_bound: None,
        two_scale: Vec::new(),
        error: Some(e.to_string()),
    })
}

/// Solves the corrector for every `(L, seed)` in parallel and aggregates
/// in key order. Per-job failures are recorded, not propagated.
pub fn corrector_campaign(spec: &FieldSpec, lengths: &[usize], seeds: &[u64], direction: usize, resolution: usize) -> Result<SublinearityCurve> {
    corrector_campaign_with(spec, lengths, seeds, direction, resolution, None)
}

/// [`corrector_campaign`] with optional two-scale audits per job.
pub fn corrector_campaign_with(
    spec: &FieldSpec,
    lengths: &[usize],
    seeds: &[u64],
    direction: usize,
    resolution: usize,
    plan: Option<&TwoScalePlan>,
) -> Result<SublinearityCurve> {
    unit(spec.d, direction)?;
    if let Some(plan) = plan {
        if plan.rhos.iter().any(|&r| !(r > 0.0 && r <= 0.5)) {
            return Err(Error::InvalidParameter(format!("two-scale rho values {:?} not in (0, 1/2]", plan.rhos)));
        }
        if !derive_exponents(spec.d, plan.p, plan.q)?.sharp_ok {
            return Err(Error::InvalidParameter(format!("(p, q) = ({}, {}) violates 1/p + 1/q < 2/(d-1)", plan.p, plan.q)));
        }
    }
    if resolution == 0 {
        return Err(Error::InvalidParameter("resolution must be positive".into()));
    }
    if lengths.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter("campaign needs at least one length and one seed".into()));
    }
    for &l in lengths {
        spec.with_size(l * resolution, l as f64).validate()?;
    }
    let mu = expected_mu(spec);
    let jobs: Vec<(usize, u64)> = lengths.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let rows: Vec<CampaignRow> =
        jobs.par_iter().map(|&job| run_job(spec, job, direction, resolution, mu, plan)).collect();
    let summary = lengths
        .iter()
        .map(|&l| {
            let ok: Vec<&CampaignRow> = rows.iter().filter(|r| r.length == l && !r.failed()).collect();
            let n = ok.len().max(1) as f64;
            LengthSummary {
                length: l,
                seeds: seeds.len(),
                failures: seeds.len() - ok.len(),
                mean_sup: ok.iter().map(|r| r.sup_stat).sum::<f64>() / n,
                max_sup: ok.iter().map(|r| r.sup_stat).fold(0.0, f64::max),
                mean_l1: ok.iter().map(|r| r.l1_stat).sum::<f64>() / n,
                max_l1: ok.iter().map(|r| r.l1_stat).fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(SublinearityCurve { digest: spec.digest(), direction, resolution, expected_mu: mu, rows, summary })
}

/// Cell translation of a nodal torus function.
pub fn shift_nodal(u: &ScalarField, by: [i64; 3]) -> ScalarField {
    let grid = u.grid;
    let mut out = u.clone();
    for i in 0..grid.num_nodes() {
        let m = grid.node_multi(i);
        let target = grid.node_at([m[0] as i64 + by[0], m[1] as i64 + by[1], m[2] as i64 + by[2]]).expect("torus wraps");
        out.values[target] = u.values[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_checkerboard, make_constant, make_layered, Family};

    #[test]
    fn constant_field_flux_and_energy() {
        let f = periodize(&make_constant(2, 8, 8.0, &[3.0, 0.0, 0.0, 3.0]).unwrap(), 8.0).unwrap();
        let eff = effective_coefficient(&f, 1).unwrap();
        assert!((eff[1] - 3.0).abs() < 1e-12 && eff[0].abs() < 1e-12);
        let phi = ScalarField::from_fn(f.grid, |_| 0.0);
        let r = energy_bound_check(&phi, &f, 0, ExtReal::Finite(3.0)).unwrap();
        assert!(r.windows.iter().all(|w| (w.value - 3.0).abs() < 1e-12));
        assert!(r.pass);
        assert_eq!(r.windows.len(), 10);
    }

    #[test]
    fn checkerboard_duality() {
        let f = periodize(&make_checkerboard(2, 64, 1.0, 1.0, 4.0).unwrap(), 1.0).unwrap();
        let eff = effective_coefficient(&f, 0).unwrap();
        assert!((eff[0] - 2.0).abs() < 0.03 * 2.0, "{eff:?}");
        assert!(eff[1].abs() < 1e-8);
    }

    #[test]
    fn layered_means() {
        let layers = [1.0, 5.0, 2.0, 0.5];
        let f = periodize(&make_layered(2, 32, 4.0, &layers).unwrap(), 4.0).unwrap();
        let harmonic = 4.0 / layers.iter().map(|w| 1.0 / w).sum::<f64>();
        let arithmetic = layers.iter().sum::<f64>() / 4.0;
        assert!((effective_coefficient(&f, 0).unwrap()[0] - harmonic).abs() < 0.01 * harmonic);
        assert!((effective_coefficient(&f, 1).unwrap()[1] - arithmetic).abs() < 0.01 * arithmetic);
        let mesh = Mesh::new(f.grid);
        let phi = solve_corrector(&f, &mesh, 0).unwrap();
        let r = energy_bound_check(&phi, &f, 0, ExtReal::Finite(arithmetic)).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn constant_campaign_is_zero() {
        let spec = FieldSpec::new(2, 8, 8.0, Family::Constant { value: 2.0 }, 0);
        let curve = corrector_campaign(&spec, &[8, 16], &[0, 1], 0, 1).unwrap();
        assert_eq!(curve.rows.len(), 4);
        assert!(curve.rows.iter().all(|r| r.sup_stat == 0.0 && r.l1_stat == 0.0));
        assert!(curve.energy_bound_pass());
    }

    #[test]
    fn checkerboard_campaign_halves() {
        let spec = FieldSpec::new(2, 8, 8.0, Family::Checkerboard { omega1: 1.0, omega2: 4.0, block: 2 }, 0);
        let curve = corrector_campaign(&spec, &[8, 16, 32], &[0], 0, 1).unwrap();
        for w in curve.summary.windows(2) {
            let ratio = w[1].mean_sup / w[0].mean_sup;
            assert!((ratio - 0.5).abs() < 0.1, "{ratio}");
        }
        assert!(curve.mean_sup_decreasing());
    }

    #[test]
    fn campaign_rows_are_key_ordered() {
        let spec = FieldSpec::new(2, 8, 8.0, Family::IidParetoMixture { p0: ExtReal::Finite(4.0), q0: ExtReal::Finite(4.0) }, 0);
        let curve = corrector_campaign(&spec, &[8, 16], &[3, 1], 1, 1).unwrap();
        let keys: Vec<(usize, u64)> = curve.rows.iter().map(|r| (r.length, r.seed)).collect();
        assert_eq!(keys, vec![(8, 3), (8, 1), (16, 3), (16, 1)]);
        assert_eq!(curve.failures(), 0);
        assert!(corrector_campaign(&spec, &[8], &[0], 2, 1).is_err());
    }

    #[test]
    fn campaign_runs_two_scale_audits() {
        let spec = FieldSpec::new(2, 8, 8.0, Family::IidParetoMixture { p0: ExtReal::Finite(4.0), q0: ExtReal::Finite(4.0) }, 0);
        let plan = TwoScalePlan { rhos: vec![0.25, 0.125], p: ExtReal::Finite(3.0), q: ExtReal::Finite(3.0) };
        let curve = corrector_campaign_with(&spec, &[32], &[0], 0, 1, Some(&plan)).unwrap();
        let row = &curve.rows[0];
        assert_eq!(row.two_scale.len(), 2);
        assert!(row.two_scale.iter().all(|t| t.lhs > 0.0 && t.rhs > 0.0 && t.lambda_sup >= 1.0));
        assert!(row.flux[0] > 0.0);
        let bad = TwoScalePlan { rhos: vec![0.75], ..plan };
        assert!(corrector_campaign_with(&spec, &[32], &[0], 0, 1, Some(&bad)).is_err());
    }

    #[test]
    fn two_scale_of_constant_field() {
        let f = periodize(&make_constant(2, 32, 32.0, &[1.0, 0.0, 0.0, 1.0]).unwrap(), 32.0).unwrap();
        let phi = ScalarField::from_fn(f.grid, |_| 0.0);
        let r = two_scale_audit(&phi, &f, 8.0, 0.25, ExtReal::Infinite, ExtReal::Infinite).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.pass);
        assert_eq!(r.centres, 49);
        assert!((r.lambda_sup - 1.0).abs() < 1e-12);
        assert!((r.rhs - 2.0 * 0.25 * 8.0).abs() < 1e-12);
        assert!(two_scale_audit(&phi, &f, 8.0, 0.75, ExtReal::Infinite, ExtReal::Infinite).is_err());
    }

    #[test]
    fn shift_moves_nodes() {
        let g = crate::grid::Grid::new(2, 4, 4.0, Topology::Torus).unwrap();
        let u = ScalarField::new(g, (0..16).map(|i| i as f64).collect()).unwrap();
        let s = shift_nodal(&u, [1, 0, 0]);
        assert_eq!(s.values[1], 0.0);
        assert_eq!(s.values[0], 3.0);
    }
}
