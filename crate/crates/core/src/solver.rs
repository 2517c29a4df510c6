//! P1 finite elements for `-∇·a∇u = 0` with piecewise-constant coefficients.
//!
//! Element integrals are exact: gradients are constant on each simplex and
//! the coefficient is constant on each cell. Dirichlet problems live on box
//! meshes; corrector problems `∇·a(ξ + ∇φ) = 0` live on torus meshes with a
//! mean-zero normalization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::MatrixField;
use crate::grid::{Point, Region, Topology};
use crate::krylov::{bicgstab, pcg, KrylovOptions, KrylovStats};
use crate::mesh::{FieldMeta, Mesh, ScalarField};
use crate::sparse::CsrMatrix;

pub const DEFAULT_RTOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryCondition {
    /// Nodal values; only entries on boundary nodes are read.
    Dirichlet(Vec<f64>),
    /// Corrector problem for the macroscopic gradient `ξ`.
    PeriodicMeanZero { direction: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub symmetric: bool,
    /// Per node: fixed by a Dirichlet condition.
    pub constrained: Vec<bool>,
    pub mean_zero: bool,
    /// Free rows without any non-zero entry.
    pub degenerate_rows: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    /// Overrides the default iteration cap.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rtol: DEFAULT_RTOL, max_iter: None }
    }
}

pub(crate) fn check_compatible(field: &MatrixField, mesh: &Mesh) -> Result<()> {
    let (f, m) = (&field.grid, &mesh.grid);
    if f.d != m.d || f.n != m.n || (f.length - m.length).abs() > 1e-12 * m.length {
        return Err(Error::Incompatible(format!(
            "field (d={}, n={}, L={}) does not match mesh (d={}, n={}, L={})",
            f.d, f.n, f.length, m.d, m.n, m.length
        )));
    }
    Ok(())
}

/// Generic element loop: `local(cell, s, out)` fills the `(d+1)²` element
/// matrix `out[i][j] = ∫_e (coefficient ∇ψ_j)·∇ψ_i`. Contributions are
/// summed in cell order.
pub(crate) fn assemble_elements<F>(mesh: &Mesh, local: F) -> CsrMatrix
where
    F: Fn(usize, usize, &mut [[f64; 4]; 4]) + Sync,
{
    let d = mesh.d();
    let nsimp = mesh.simplices_per_cell();
    let per_cell: Vec<Vec<(usize, usize, f64)>> = (0..mesh.grid.num_cells())
        .into_par_iter()
        .map(|cell| {
            let mut out = Vec::with_capacity(nsimp * (d + 1) * (d + 1));
            let mut k = [[0.0; 4]; 4];
            for s in 0..nsimp {
                local(cell, s, &mut k);
                let nodes = mesh.element_nodes(cell, s);
                for i in 0..=d {
                    for j in 0..=d {
                        out.push((nodes[i], nodes[j], k[i][j]));
                    }
                }
            }
            out
        })
        .collect();
    CsrMatrix::from_triplets(mesh.grid.num_nodes(), per_cell.into_iter().flatten().collect())
}

fn apply_coefficient(a: &[f64], d: usize, g: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..d {
        for j in 0..d {
            out[i] += a[i * d + j] * g[j];
        }
    }
    out
}

fn dot3(a: &[f64; 3], b: &[f64; 3], d: usize) -> f64 {
    (0..d).map(|k| a[k] * b[k]).sum()
}

/// Unconstrained stiffness operator `K[i][j] = ∫ a∇ψ_j·∇ψ_i`.
pub fn assemble_stiffness(field: &MatrixField, mesh: &Mesh) -> Result<CsrMatrix> {
    check_compatible(field, mesh)?;
    let d = mesh.d();
    let vol = mesh.element_volume();
    Ok(assemble_elements(mesh, |cell, s, k| {
        let a = field.cell(cell);
        let grads = &mesh.simplices()[s].grads;
        for j in 0..=d {
            let flux = apply_coefficient(a, d, &grads[j]);
            for i in 0..=d {
                k[i][j] = vol * dot3(&flux, &grads[i], d);
            }
        }
    }))
}

/// Load vector `b_j = -∫ a ξ·∇ψ_j` of the corrector problem.
pub fn corrector_rhs(field: &MatrixField, mesh: &Mesh, direction: &[f64; 3]) -> Result<Vec<f64>> {
    check_compatible(field, mesh)?;
    let d = mesh.d();
    let vol = mesh.element_volume();
    let mut rhs = vec![0.0; mesh.grid.num_nodes()];
    for cell in 0..mesh.grid.num_cells() {
        let flux = apply_coefficient(field.cell(cell), d, direction);
        for s in 0..mesh.simplices_per_cell() {
            let nodes = mesh.element_nodes(cell, s);
            let grads = &mesh.simplices()[s].grads;
            for k in 0..=d {
                rhs[nodes[k]] -= vol * dot3(&flux, &grads[k], d);
            }
        }
    }
    Ok(rhs)
}

fn zero_rows(matrix: &CsrMatrix, constrained: &[bool]) -> Vec<usize> {
    (0..matrix.n())
        .filter(|&i| !constrained[i] && matrix.row(i).1.iter().all(|&v| v == 0.0))
        .collect()
}

/// Applies boundary conditions to an assembled operator.
pub fn constrain(operator: &CsrMatrix, mesh: &Mesh, bc: &BoundaryCondition, rhs: Option<Vec<f64>>) -> Result<LinearSystem> {
    let n = operator.n();
    match bc {
        BoundaryCondition::Dirichlet(g) => {
            if mesh.grid.topology != Topology::Box {
                return Err(Error::Incompatible("Dirichlet conditions need a box mesh".into()));
            }
            if g.len() != n {
                return Err(Error::Incompatible(format!("{} boundary values for {n} nodes", g.len())));
            }
            let fixed: Vec<Option<f64>> =
                (0..n).map(|i| if mesh.grid.is_boundary_node(i) { Some(g[i]) } else { None }).collect();
            Ok(constrain_nodes(operator, &fixed, rhs))
        }
        BoundaryCondition::PeriodicMeanZero { .. } => {
            if mesh.grid.topology != Topology::Torus {
                return Err(Error::Incompatible("periodic conditions need a torus mesh".into()));
            }
            let constrained = vec![false; n];
            let degenerate_rows = zero_rows(operator, &constrained);
            Ok(LinearSystem {
                matrix: operator.clone(),
                rhs: rhs.unwrap_or_else(|| vec![0.0; n]),
                symmetric: operator.is_symmetric(),
                constrained,
                mean_zero: true,
                degenerate_rows,
            })
        }
    }
}

/// Pins the nodes with `Some(value)` by symmetric elimination: their rows
/// become identity rows and their columns move to the right-hand side.
pub fn constrain_nodes(operator: &CsrMatrix, fixed: &[Option<f64>], rhs: Option<Vec<f64>>) -> LinearSystem {
    let n = operator.n();
    let constrained: Vec<bool> = fixed.iter().map(Option::is_some).collect();
    let mut b = rhs.unwrap_or_else(|| vec![0.0; n]);
    for i in 0..n {
        if let Some(v) = fixed[i] {
            b[i] = v;
        } else {
            let (cols, vals) = operator.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                if let Some(g) = fixed[j] {
                    b[i] -= a * g;
                }
            }
        }
    }
    let matrix = operator.filter(|i, j| !constrained[i] && !constrained[j]).set_unit_rows(&constrained);
    let degenerate_rows = zero_rows(&matrix, &constrained);
    let symmetric = matrix.is_symmetric();
    LinearSystem { matrix, rhs: b, symmetric, constrained, mean_zero: false, degenerate_rows }
}

pub fn assemble(field: &MatrixField, mesh: &Mesh, bc: &BoundaryCondition) -> Result<LinearSystem> {
    let k = assemble_stiffness(field, mesh)?;
    let rhs = match bc {
        BoundaryCondition::PeriodicMeanZero { direction } => Some(corrector_rhs(field, mesh, direction)?),
        BoundaryCondition::Dirichlet(_) => None,
    };
    constrain(&k, mesh, bc, rhs)
}

/// Iteration cap `50 · N^{1/d} · (1 + ln(max diag / min diag))` over free
/// rows.
pub fn iteration_cap(system: &LinearSystem, d: usize) -> usize {
    let diag = system.matrix.diagonal();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (i, &v) in diag.iter().enumerate() {
        if !system.constrained[i] && v > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let spread = if lo.is_finite() && hi > 0.0 { 1.0 + (hi / lo).ln() } else { 1.0 };
    let nodes = system.rhs.len() as f64;
    (50.0 * nodes.powf(1.0 / d as f64) * spread).ceil() as usize
}

/// Solves an assembled system; `x0` supplies the initial guess (and the
/// constrained values, which are kept exactly).
pub fn solve_system(system: &LinearSystem, d: usize, x0: Vec<f64>, options: &SolverOptions) -> Result<(Vec<f64>, KrylovStats)> {
    if !system.degenerate_rows.is_empty() {
        return Err(Error::DegenerateSystem { rows: system.degenerate_rows.len() });
    }
    let opts = KrylovOptions {
        rtol: options.rtol,
        max_iter: options.max_iter.unwrap_or_else(|| iteration_cap(system, d)),
        project_mean: system.mean_zero,
    };
    let mut x = x0;
    let stats = if system.symmetric {
        pcg(&system.matrix, &system.rhs, &mut x, &opts)?
    } else {
        bicgstab(&system.matrix, &system.rhs, &mut x, &opts)?
    };
    if system.mean_zero {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    }
    Ok((x, stats))
}

pub fn solve_dirichlet(field: &MatrixField, mesh: &Mesh, g: impl Fn(&Point) -> f64) -> Result<ScalarField> {
    solve_dirichlet_with(field, mesh, g, &SolverOptions::default())
}

pub fn solve_dirichlet_with(
    field: &MatrixField,
    mesh: &Mesh,
    g: impl Fn(&Point) -> f64,
    options: &SolverOptions,
) -> Result<ScalarField> {
    let grid = mesh.grid;
    let boundary: Vec<f64> =
        (0..grid.num_nodes()).map(|i| if grid.is_boundary_node(i) { g(&grid.node_coord(i)) } else { 0.0 }).collect();
    let system = assemble(field, mesh, &BoundaryCondition::Dirichlet(boundary.clone()))?;
    let (values, stats) = solve_system(&system, grid.d, boundary, options)?;
    Ok(ScalarField {
        grid,
        values,
        meta: FieldMeta {
            source: "dirichlet".into(),
            seed: None,
            residual: stats.residual,
            iterations: stats.iterations,
        },
    })
}

/// Mean-zero corrector `φ_i` for the unit direction `e_i`.
pub fn solve_corrector(field: &MatrixField, mesh: &Mesh, direction: usize) -> Result<ScalarField> {
    if direction >= mesh.d() {
        return Err(Error::InvalidParameter(format!("direction {direction} out of range")));
    }
    let mut xi = [0.0; 3];
    xi[direction] = 1.0;
    solve_corrector_for(field, mesh, &xi, &SolverOptions::default())
}

/// Mean-zero corrector for an arbitrary macroscopic gradient `ξ`.
pub fn solve_corrector_for(field: &MatrixField, mesh: &Mesh, xi: &[f64; 3], options: &SolverOptions) -> Result<ScalarField> {
    if field.grid.topology != Topology::Torus {
        return Err(Error::Incompatible("corrector problems need a periodic field".into()));
    }
    let system = assemble(field, mesh, &BoundaryCondition::PeriodicMeanZero { direction: *xi })?;
    let (values, stats) = solve_system(&system, mesh.d(), vec![0.0; mesh.grid.num_nodes()], options)?;
    Ok(ScalarField {
        grid: mesh.grid,
        values,
        meta: FieldMeta {
            source: "corrector".into(),
            seed: None,
            residual: stats.residual,
            iterations: stats.iterations,
        },
    })
}

/// `∫ a∇u·∇u` (with `∇u` replaced by `ξ + ∇u` when `shift` is given).
pub fn energy(field: &MatrixField, mesh: &Mesh, u: &[f64], shift: Option<&[f64; 3]>) -> f64 {
    (0..mesh.grid.num_cells()).map(|cell| cell_energy(field, mesh, u, cell, shift)).sum()
}

/// `∫_region a(ξ+∇u)·(ξ+∇u)` over the given cells (whole cells, all simplices).
pub fn energy_in(field: &MatrixField, mesh: &Mesh, u: &[f64], cells: &[usize], shift: Option<&[f64; 3]>) -> f64 {
    cells.iter().map(|&c| cell_energy(field, mesh, u, c, shift)).sum()
}

/// Nodal values inside a region.
pub fn restrict(u: &ScalarField, region: &Region) -> Vec<f64> {
    region.nodes(&u.grid).into_iter().map(|i| u.values[i]).collect()
}

/// `∫_cell a(ξ+∇u)·(ξ+∇u)` over the simplices of one cell.
pub fn cell_energy(field: &MatrixField, mesh: &Mesh, u: &[f64], cell: usize, shift: Option<&[f64; 3]>) -> f64 {
    let d = mesh.d();
    let a = field.cell(cell);
    let mut total = 0.0;
    for s in 0..mesh.simplices_per_cell() {
        let mut g = mesh.gradient(u, cell, s);
        if let Some(xi) = shift {
            for k in 0..d {
                g[k] += xi[k];
            }
        }
        total += dot3(&apply_coefficient(a, d, &g), &g, d);
    }
    total * mesh.element_volume()
}

/// `∫_cell a(ξ+∇u)` over the simplices of one cell.
pub fn cell_flux(field: &MatrixField, mesh: &Mesh, u: &[f64], cell: usize, shift: &[f64; 3]) -> [f64; 3] {
    let d = mesh.d();
    let a = field.cell(cell);
    let mut total = [0.0; 3];
    for s in 0..mesh.simplices_per_cell() {
        let mut g = mesh.gradient(u, cell, s);
        for k in 0..d {
            g[k] += shift[k];
        }
        let f = apply_coefficient(a, d, &g);
        for k in 0..d {
            total[k] += f[k] * mesh.element_volume();
        }
    }
    total
}

/// Weak residual `r_j = ∫ a(ξ+∇u)·∇ψ_j` for every node.
pub fn weak_residual(field: &MatrixField, mesh: &Mesh, u: &[f64], shift: Option<&[f64; 3]>) -> Vec<f64> {
    let d = mesh.d();
    let vol = mesh.element_volume();
    let mut r = vec![0.0; mesh.grid.num_nodes()];
    for cell in 0..mesh.grid.num_cells() {
        let a = field.cell(cell);
        for s in 0..mesh.simplices_per_cell() {
            let mut g = mesh.gradient(u, cell, s);
            if let Some(xi) = shift {
                for k in 0..d {
                    g[k] += xi[k];
                }
            }
            let flux = apply_coefficient(a, d, &g);
            let nodes = mesh.element_nodes(cell, s);
            let grads = &mesh.simplices()[s].grads;
            for k in 0..=d {
                r[nodes[k]] += vol * dot3(&flux, &grads[k], d);
            }
        }
    }
    r
}
