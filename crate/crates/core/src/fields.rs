//! Coefficient fields on structured grids.
//!
//! Deterministic families (constant, radial power weights, checkerboards,
//! layered media) and a heavy-tailed random family whose upper and lower
//! tails have prescribed Pareto indices. Random fields are generated with a
//! ChaCha stream per (seed, cell or block) so a field does not depend on the
//! order in which its cells are visited.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exponents::{lambda_mu_of_matrix, EllipticityProfile, ExtReal};
use crate::grid::{distance, Grid, Point, Topology};

pub const FIELD_MAGIC: &[u8; 4] = b"DHL1";

/// Cell-sampled `d×d` coefficient matrices, row-major per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    pub grid: Grid,
    values: Vec<f64>,
}

impl MatrixField {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let dd = grid.d * grid.d;
        if values.len() != grid.num_cells() * dd {
            return Err(Error::Incompatible(format!(
                "field on {} cells needs {} values, got {}",
                grid.num_cells(),
                grid.num_cells() * dd,
                values.len()
            )));
        }
        for cell in 0..grid.num_cells() {
            lambda_mu_of_matrix(&values[cell * dd..(cell + 1) * dd], grid.d).map_err(|e| e.at_cell(cell))?;
        }
        Ok(Self { grid, values })
    }

    /// Scalar field `a = ω(x_c)·I` sampled at cell centres.
    pub fn from_scalar_fn(grid: Grid, omega: impl Fn(&Point) -> f64 + Sync) -> Result<Self> {
        let weights: Vec<f64> = (0..grid.num_cells()).into_par_iter().map(|c| omega(&grid.cell_center(c))).collect();
        Self::from_scalar_values(grid, &weights)
    }

    pub fn from_scalar_values(grid: Grid, weights: &[f64]) -> Result<Self> {
        if weights.len() != grid.num_cells() {
            return Err(Error::Incompatible(format!(
                "{} scalar weights for {} cells",
                weights.len(),
                grid.num_cells()
            )));
        }
        let d = grid.d;
        let mut values = vec![0.0; grid.num_cells() * d * d];
        for (cell, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParameter(format!("weight {w} must be finite and non-negative")).at_cell(cell));
            }
            for k in 0..d {
                values[cell * d * d + k * d + k] = w;
            }
        }
        Ok(Self { grid, values })
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        let dd = self.grid.d * self.grid.d;
        &self.values[idx * dd..(idx + 1) * dd]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.grid.d;
        self.values
            .chunks_exact(d * d)
            .all(|a| (0..d).all(|i| (0..i).all(|j| a[i * d + j] == a[j * d + i])))
    }

    /// Scalar weight of a cell when the field is of the form `ω·I`.
    pub fn scalar_weight(&self, idx: usize) -> Option<f64> {
        let d = self.grid.d;
        let a = self.cell(idx);
        let w = a[0];
        let scalar = (0..d).all(|i| (0..d).all(|j| a[i * d + j] == if i == j { w } else { 0.0 }));
        scalar.then_some(w)
    }

    pub fn scaled(&self, t: f64) -> MatrixField {
        MatrixField { grid: self.grid, values: self.values.iter().map(|v| v * t).collect() }
    }

    /// Cyclic shift by whole cells along each axis (torus translation).
    pub fn shifted(&self, by: [i64; 3]) -> MatrixField {
        let dd = self.grid.d * self.grid.d;
        let mut values = vec![0.0; self.values.len()];
        let n = self.grid.n as i64;
        for cell in 0..self.grid.num_cells() {
            let m = self.grid.cell_multi(cell);
            let mut t = [0i64; 3];
            for k in 0..self.grid.d {
                t[k] = (m[k] as i64 + by[k]).rem_euclid(n);
            }
            let target = self.grid.cell_at(t).expect("wrapped index");
            values[target * dd..(target + 1) * dd].copy_from_slice(self.cell(cell));
        }
        MatrixField { grid: self.grid, values }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_u32::<LittleEndian>(self.grid.d as u32)?;
        w.write_u32::<LittleEndian>(self.grid.n as u32)?;
        w.write_u8(self.grid.topology.code())?;
        w.write_f64::<LittleEndian>(self.grid.length)?;
        for v in &self.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(21 + 8 * self.values.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format(format!("bad field magic {magic:?}")));
        }
        let d = r.read_u32::<LittleEndian>()? as usize;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let topology = Topology::from_code(r.read_u8()?)?;
        let length = r.read_f64::<LittleEndian>()?;
        let grid = Grid::new(d, n, length, topology)?;
        let count = grid.num_cells() * d * d;
        let mut values = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        MatrixField::from_values(grid, values)
    }
}

pub fn make_constant(d: usize, n: usize, length: f64, a: &[f64]) -> Result<MatrixField> {
    let grid = Grid::new(d, n, length, Topology::Box)?;
    if a.len() != d * d {
        return Err(Error::Incompatible(format!("constant matrix needs {} entries", d * d)));
    }
    lambda_mu_of_matrix(a, d)?;
    let values = a.iter().copied().cycle().take(grid.num_cells() * d * d).collect();
    Ok(MatrixField { grid, values })
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for k in 0..d {
        a[k * d + k] = 1.0;
    }
    a
}

/// `a = |x - x₀|^α · I` sampled at cell centres, with the integrability of
/// the weight and of its inverse on the unit ball.
#[derive(Clone, Debug)]
pub struct RadialPowerField {
    pub field: MatrixField,
    pub alpha: f64,
    pub center: Point,
}

impl RadialPowerField {
    /// `ω ∈ L^p(B₁)` iff `α·p > -d` (`α ≥ 0` for `p = ∞`).
    pub fn weight_in_lp(&self, p: ExtReal) -> bool {
        let d = self.field.grid.d as f64;
        match p {
            ExtReal::Infinite => self.alpha >= 0.0,
            ExtReal::Finite(p) => self.alpha * p > -d,
        }
    }

    /// `ω^{-1} ∈ L^q(B₁)` iff `α·q < d` (`α ≤ 0` for `q = ∞`).
    pub fn inverse_in_lq(&self, q: ExtReal) -> bool {
        let d = self.field.grid.d as f64;
        match q {
            ExtReal::Infinite => self.alpha <= 0.0,
            ExtReal::Finite(q) => self.alpha * q < d,
        }
    }
}

pub fn make_radial_power(d: usize, n: usize, length: f64, alpha: f64, center: Point) -> Result<RadialPowerField> {
    let grid = Grid::new(d, n, length, Topology::Box)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}")));
    }
    if (0..d).any(|k| center[k].abs() > 0.5 * length) {
        return Err(Error::InvalidParameter("radial centre outside the box".into()));
    }
    let field = if alpha == 0.0 {
        make_constant(d, n, length, &identity(d))?
    } else {
        MatrixField::from_scalar_fn(grid, |x| distance(x, &center, d).powf(alpha))?
    };
    Ok(RadialPowerField { field, alpha, center })
}

/// Two-phase periodic checkerboard with `2^d` blocks of side `n/2` cells:
/// one period of the checkerboard fills the box.
pub fn make_checkerboard(d: usize, n: usize, length: f64, omega1: f64, omega2: f64) -> Result<MatrixField> {
    if n % 2 != 0 {
        return Err(Error::InvalidParameter(format!("checkerboard needs even n, got {n}")));
    }
    make_checkerboard_blocks(d, n, length, n / 2, omega1, omega2)
}

/// Checkerboard with blocks of `block` cells; `n` must be a multiple of
/// `2·block` so the pattern tiles the torus.
pub fn make_checkerboard_blocks(
    d: usize,
    n: usize,
    length: f64,
    block: usize,
    omega1: f64,
    omega2: f64,
) -> Result<MatrixField> {
    if !(omega1 > 0.0 && omega2 > 0.0 && omega1.is_finite() && omega2.is_finite()) {
        return Err(Error::InvalidParameter("checkerboard phases must be positive".into()));
    }
    if block == 0 || n % (2 * block) != 0 {
        return Err(Error::InvalidParameter(format!("n = {n} is not a multiple of 2 x block ({block})")));
    }
    let grid = Grid::new(d, n, length, Topology::Box)?;
    let weights: Vec<f64> = (0..grid.num_cells())
        .map(|c| {
            let m = grid.cell_multi(c);
            let parity: usize = (0..d).map(|k| m[k] / block).sum();
            if parity % 2 == 0 {
                omega1
            } else {
                omega2
            }
        })
        .collect();
    MatrixField::from_scalar_values(grid, &weights)
}

/// Laminate `a = ω(x₁)·I` with one weight per column of cells.
pub fn make_layered(d: usize, n: usize, length: f64, layers: &[f64]) -> Result<MatrixField> {
    let grid = Grid::new(d, n, length, Topology::Box)?;
    if layers.is_empty() || n % layers.len() != 0 {
        return Err(Error::InvalidParameter(format!("{} layers do not divide n = {n}", layers.len())));
    }
    let width = n / layers.len();
    let weights: Vec<f64> = (0..grid.num_cells()).map(|c| layers[grid.cell_multi(c)[0] / width]).collect();
    MatrixField::from_scalar_values(grid, &weights)
}

/// Marks a field as periodic on the torus of side `length`.
pub fn periodize(field: &MatrixField, length: f64) -> Result<MatrixField> {
    if (field.grid.length - length).abs() > 1e-12 * length.abs().max(1.0) {
        return Err(Error::Incompatible(format!(
            "field box has side {} but torus side {length} was requested",
            field.grid.length
        )));
    }
    Ok(MatrixField { grid: field.grid.with_topology(Topology::Torus), values: field.values.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Constant { value: f64 },
    RadialPower { alpha: f64 },
    Checkerboard { omega1: f64, omega2: f64, block: usize },
    /// `ω = U` or `ω = 1/V` with probability ½ each, `U ~ Pareto(p0)`,
    /// `V ~ Pareto(q0)`, one draw per cell.
    IidParetoMixture { p0: ExtReal, q0: ExtReal },
    /// Same law, one draw per `block^d` cells.
    Blocked { p0: ExtReal, q0: ExtReal, block: usize },
}

/// Recipe for a coefficient field. Identical specs produce bit-identical
/// fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub d: usize,
    pub n: usize,
    pub length: f64,
    #[serde(flatten)]
    pub family: Family,
    pub seed: u64,
}

impl FieldSpec {
    pub fn new(d: usize, n: usize, length: f64, family: Family, seed: u64) -> Self {
        Self { d, n, length, family, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_size(&self, n: usize, length: f64) -> Self {
        Self { n, length, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        Grid::new(self.d, self.n, self.length, Topology::Box)?;
        let tail = |name: &str, x: ExtReal| match x {
            ExtReal::Finite(v) if !(v > 0.0) => Err(Error::InvalidParameter(format!("tail index {name} = {v} must be positive"))),
            _ => Ok(()),
        };
        match self.family {
            Family::Constant { value } if !(value >= 0.0 && value.is_finite()) => {
                Err(Error::InvalidParameter(format!("constant value {value} must be non-negative")))
            }
            Family::Checkerboard { block, .. } if block == 0 || self.n % (2 * block) != 0 => Err(
                Error::InvalidParameter(format!("checkerboard block {block} does not tile n = {}", self.n)),
            ),
            Family::IidParetoMixture { p0, q0 } => {
                tail("p0", p0)?;
                tail("q0", q0)
            }
            Family::Blocked { p0, q0, block } => {
                tail("p0", p0)?;
                tail("q0", q0)?;
                if block == 0 || self.n % block != 0 {
                    return Err(Error::InvalidParameter(format!("block {block} does not divide n = {}", self.n)));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 of the canonical field description.
    pub fn digest(&self) -> String {
        let text = format!("{self:?}");
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn tails(&self) -> Option<(ExtReal, ExtReal)> {
        match self.family {
            Family::IidParetoMixture { p0, q0 } | Family::Blocked { p0, q0, .. } => Some((p0, q0)),
            _ => None,
        }
    }

    /// `E[ω^s]` for stationary families; `None` for the radial weight.
    pub fn expected_moment(&self, s: f64) -> Option<ExtReal> {
        match self.family {
            Family::Constant { value } => Some(ExtReal::Finite(value.powf(s))),
            Family::Checkerboard { omega1, omega2, .. } => {
                Some(ExtReal::Finite(0.5 * (omega1.powf(s) + omega2.powf(s))))
            }
            Family::RadialPower { .. } => None,
            Family::IidParetoMixture { p0, q0 } | Family::Blocked { p0, q0, .. } => {
                // E[U^t] = k/(k - t) for t < k, E[U^t] = ∞ otherwise.
                let pareto = |k: ExtReal, t: f64| match k {
                    ExtReal::Infinite => ExtReal::Finite(1.0),
                    ExtReal::Finite(k) if t < k => ExtReal::Finite(k / (k - t)),
                    ExtReal::Finite(_) => ExtReal::Infinite,
                };
                let (upper, lower) = (pareto(p0, s), pareto(q0, -s));
                Some(match (upper, lower) {
                    (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(0.5 * (a + b)),
                    _ => ExtReal::Infinite,
                })
            }
        }
    }
}

fn pareto_draw(rng: &mut ChaCha8Rng, shape: ExtReal) -> f64 {
    match shape {
        ExtReal::Infinite => {
            // Keep the stream layout independent of the tail index.
            let _: f64 = rng.random();
            1.0
        }
        ExtReal::Finite(k) => Pareto::new(1.0, k).expect("validated shape").sample(rng),
    }
}

/// One draw of the heavy-tailed mixture from the stream `key` of `seed`.
pub fn mixture_sample(seed: u64, key: u64, p0: ExtReal, q0: ExtReal) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    if rng.random_bool(0.5) {
        pareto_draw(&mut rng, p0)
    } else {
        1.0 / pareto_draw(&mut rng, q0)
    }
}

/// Builds the field described by `spec` (box topology).
pub fn sample_random(spec: &FieldSpec) -> Result<MatrixField> {
    spec.validate()?;
    let (d, n, length) = (spec.d, spec.n, spec.length);
    match spec.family {
        Family::Constant { value } => {
            let mut a = identity(d);
            a.iter_mut().for_each(|v| *v *= value);
            make_constant(d, n, length, &a)
        }
        Family::RadialPower { alpha } => Ok(make_radial_power(d, n, length, alpha, [0.0; 3])?.field),
        Family::Checkerboard { omega1, omega2, block } => {
            make_checkerboard_blocks(d, n, length, block, omega1, omega2)
        }
        Family::IidParetoMixture { p0, q0 } => blocked_mixture(spec, 1, p0, q0),
        Family::Blocked { p0, q0, block } => blocked_mixture(spec, block, p0, q0),
    }
}

fn blocked_mixture(spec: &FieldSpec, block: usize, p0: ExtReal, q0: ExtReal) -> Result<MatrixField> {
    let grid = Grid::new(spec.d, spec.n, spec.length, Topology::Box)?;
    let blocks_per_side = spec.n / block;
    let block_grid = Grid::new(spec.d, blocks_per_side.max(2), spec.length, Topology::Box)?;
    let weights: Vec<f64> = (0..grid.num_cells())
        .into_par_iter()
        .map(|c| {
            let m = grid.cell_multi(c);
            let bm = [m[0] / block, m[1] / block, m[2] / block];
            let key = if blocks_per_side >= 2 { block_grid.cell_index(bm) } else { 0 };
            mixture_sample(spec.seed, key as u64, p0, q0)
        })
        .collect();
    MatrixField::from_scalar_values(grid, &weights)
}

/// Monte-Carlo estimate of `E[ω^s]` for a random family: `(mean, standard
/// error)` from `samples` draws on streams disjoint from any field.
pub fn monte_carlo_moment(spec: &FieldSpec, s: f64, samples: usize, seed: u64) -> Option<(f64, f64)> {
    let (p0, q0) = spec.tails()?;
    let base = 1u64 << 62;
    let draws: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|k| mixture_sample(seed, base + k, p0, q0).powf(s))
        .collect();
    let mean = draws.iter().sum::<f64>() / samples as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
    Some((mean, (var / samples as f64).sqrt()))
}

/// Integrand of a spatial average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Quantity {
    /// `λ^{-q}`
    InverseLambda(f64),
    /// `μ^p`
    Mu(f64),
}

impl Quantity {
    fn eval(self, profile: &EllipticityProfile, cell: usize) -> f64 {
        match self {
            Quantity::InverseLambda(q) => profile.lambda[cell].powf(-q),
            Quantity::Mu(p) => profile.mu[cell].powf(p),
        }
    }
}

/// Averages `⨍_{B_R(Rz)}` of `quantity` for each radius. Balls leaving the
/// sampled box are tiled periodically.
pub fn ergodic_average(profile: &EllipticityProfile, quantity: Quantity, z: &Point, radii: &[f64]) -> Result<Vec<f64>> {
    let grid = profile.grid.with_topology(Topology::Torus);
    radii
        .iter()
        .map(|&r| {
            let center = [r * z[0], r * z[1], r * z[2]];
            let cells = grid.cells_in_ball(&center, r);
            if cells.is_empty() {
                return Err(Error::InvalidParameter(format!("ball of radius {r} contains no cell centre")));
            }
            Ok(cells.iter().map(|&c| quantity.eval(profile, c)).sum::<f64>() / cells.len() as f64)
        })
        .collect()
}

/// Spatial averages of a sampled field together with the reference value
/// `E[quantity]` (analytic for the built-in families).
pub fn ergodic_average_spec(
    spec: &FieldSpec,
    quantity: Quantity,
    z: &Point,
    radii: &[f64],
) -> Result<(Vec<f64>, Option<ExtReal>)> {
    if let Some((p0, q0)) = spec.tails() {
        let below = |k: ExtReal, t: f64| k.finite().map_or(true, |k| t < k);
        let ok = match quantity {
            Quantity::Mu(p) => below(p0, p),
            Quantity::InverseLambda(q) => below(q0, q),
        };
        if !ok {
            return Err(Error::InvalidParameter("moment exponent is not below the tail index".into()));
        }
    }
    let field = sample_random(spec)?;
    let profile = crate::exponents::profile_of_field(&field)?;
    let averages = ergodic_average(&profile, quantity, z, radii)?;
    let reference = match quantity {
        Quantity::Mu(p) => spec.expected_moment(p),
        Quantity::InverseLambda(q) => spec.expected_moment(-q),
    };
    Ok((averages, reference))
}
