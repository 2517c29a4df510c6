//! Ellipticity algebra: the pointwise ellipticity functions of a coefficient
//! matrix, the mixed-moment conditioning statistic over a set of cells, and
//! the exponents that enter the local boundedness, Harnack and Poincaré
//! estimates.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::MatrixField;
use crate::grid::Grid;

/// A value in `(0, ∞]`. Integrability exponents and a few derived exponents
/// change formulas structurally at infinity, so infinity is a variant rather
/// than a float sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExtRealRepr", into = "ExtRealRepr")]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

/// Serialized form: a number, or the string `"inf"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExtRealRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<ExtRealRepr> for ExtReal {
    type Error = String;

    fn try_from(r: ExtRealRepr) -> std::result::Result<Self, String> {
        match r {
            ExtRealRepr::Number(x) => Ok(ExtReal::from_f64(x)),
            ExtRealRepr::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(ExtReal::Infinite),
                other => other.parse::<f64>().map(ExtReal::from_f64).map_err(|_| format!("expected a number or \"inf\", got \"{t}\"")),
            },
        }
    }
}

impl From<ExtReal> for ExtRealRepr {
    fn from(x: ExtReal) -> Self {
        match x {
            ExtReal::Finite(v) => ExtRealRepr::Number(v),
            ExtReal::Infinite => ExtRealRepr::Text("inf".into()),
        }
    }
}

impl ExtReal {
    pub fn from_f64(x: f64) -> Self {
        if x.is_infinite() && x > 0.0 {
            ExtReal::Infinite
        } else {
            ExtReal::Finite(x)
        }
    }

    /// `1/x` with `1/∞ = 0`.
    pub fn recip(self) -> f64 {
        match self {
            ExtReal::Finite(x) => 1.0 / x,
            ExtReal::Infinite => 0.0,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::Infinite => None,
        }
    }

    /// Lossy conversion for output and plotting.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(x) => x,
            ExtReal::Infinite => f64::INFINITY,
        }
    }

    /// Builds a value from its reciprocal; a zero reciprocal is infinity.
    pub fn from_recip(r: f64) -> Self {
        if r == 0.0 {
            ExtReal::Infinite
        } else {
            ExtReal::Finite(1.0 / r)
        }
    }
}

impl From<f64> for ExtReal {
    fn from(x: f64) -> Self {
        ExtReal::from_f64(x)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => write!(f, "{x}"),
            ExtReal::Infinite => write!(f, "inf"),
        }
    }
}

/// Outcome of testing an integrability pair against the two thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionFlags {
    /// `1/p + 1/q < 2/(d-1)`
    pub sharp_ok: bool,
    /// `1/p + 1/q < 2/d`
    pub classical_ok: bool,
    /// `1/p + 1/q = 2/(d-1)` up to rounding. Nothing is asserted about
    /// boundedness in this case.
    pub borderline: bool,
}

const BORDERLINE_TOL: f64 = 1e-12;

fn validate_exponent(name: &str, x: ExtReal, min_exclusive: f64) -> Result<()> {
    match x {
        ExtReal::Infinite => Ok(()),
        ExtReal::Finite(v) if v.is_finite() && v > min_exclusive => Ok(()),
        ExtReal::Finite(v) => Err(Error::InvalidParameter(format!(
            "{name} = {v} must exceed {min_exclusive}"
        ))),
    }
}

fn validate_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("dimension d = {d} must be at least 2")));
    }
    Ok(())
}

pub fn check_condition(d: usize, p: ExtReal, q: ExtReal) -> Result<ConditionFlags> {
    validate_dim(d)?;
    validate_exponent("p", p, 1.0)?;
    validate_exponent("q", q, 1.0)?;
    let s = p.recip() + q.recip();
    let sharp = 2.0 / (d as f64 - 1.0);
    let classical = 2.0 / d as f64;
    Ok(ConditionFlags {
        sharp_ok: s < sharp,
        classical_ok: s < classical,
        borderline: (s - sharp).abs() <= BORDERLINE_TOL,
    })
}

/// Every exponent derived from `(d, p, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub d: usize,
    pub p: ExtReal,
    pub q: ExtReal,
    /// Hölder conjugate of `p`, equal to 1 when `p = ∞`.
    pub p_prime: f64,
    pub delta: f64,
    /// Exponent of the `(1 - θ)` factor in the sup bound. Meaningless when
    /// `delta <= 0`.
    pub s: f64,
    pub chi: f64,
    /// Sobolev exponent on spheres used by the cutoff lemma, in `[1, 2)`.
    pub p_star: f64,
    /// Upper end of the admissible weak Harnack range is `q_star / 2`.
    pub q_star: ExtReal,
    /// Gain exponent of the weighted Poincaré inequality; infinite when
    /// `d = 2, q = ∞`.
    pub kappa: ExtReal,
    pub sharp_ok: bool,
    pub classical_ok: bool,
    pub borderline: bool,
}

pub fn derive_exponents(d: usize, p: ExtReal, q: ExtReal) -> Result<ExponentSet> {
    let flags = check_condition(d, p, q)?;
    let df = d as f64;
    let ip = p.recip();
    let iq = q.recip();

    let p_prime = match p {
        ExtReal::Infinite => 1.0,
        ExtReal::Finite(p) => p / (p - 1.0),
    };
    let delta = (1.0 / (df - 1.0) - 0.5 * ip).min(0.5) - 0.5 * iq;
    let s = 1.0 + p_prime * (1.0 + 1.0 / delta) * (ip + iq);
    let inv_p_star = (0.5 - 0.5 * ip + 1.0 / (df - 1.0)).min(1.0);
    let q_star = if d == 2 && q.is_infinite() {
        ExtReal::Infinite
    } else {
        ExtReal::Finite(2.0 * df / (df - 2.0 + df * iq))
    };
    // Common denominators keep integer cases exact.
    let kappa_den = p_prime * (df - 2.0 + df * iq);
    let kappa = if kappa_den == 0.0 { ExtReal::Infinite } else { ExtReal::Finite(df / kappa_den) };

    Ok(ExponentSet {
        d,
        p,
        q,
        p_prime,
        delta,
        s,
        chi: 1.0 + delta,
        p_star: 1.0 / inv_p_star,
        q_star,
        kappa,
        sharp_ok: flags.sharp_ok,
        classical_ok: flags.classical_ok,
        borderline: flags.borderline,
    })
}

impl ExponentSet {
    /// Power `p'(1 + 1/δ)` carried by the conditioning statistic in the sup
    /// bound (before division by γ).
    pub fn lambda_power(&self) -> f64 {
        self.p_prime * (1.0 + 1.0 / self.delta)
    }
}

/// Pointwise ellipticity of a single matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipticity {
    pub lambda: f64,
    pub mu: ExtReal,
}

/// `lambda = inf ξ·Aξ/|ξ|²`, `mu = sup |Aξ|²/(ξ·Aξ)` for a row-major `d×d`
/// matrix.
pub fn lambda_mu_of_matrix(a: &[f64], d: usize) -> Result<Ellipticity> {
    if a.len() != d * d || d == 0 {
        return Err(Error::Incompatible(format!("expected {} entries, got {}", d * d, a.len())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }

    // Diagonal matrices: |Aξ|²/(ξ·Aξ) is a weighted mean of the entries.
    let off_diag_zero = (0..d).all(|i| (0..d).all(|j| i == j || a[i * d + j] == 0.0));
    if off_diag_zero {
        let diag = (0..d).map(|i| a[i * d + i]);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in diag {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo < 0.0 {
            return Err(Error::NotElliptic { eigenvalue: lo });
        }
        return Ok(Ellipticity { lambda: lo, mu: ExtReal::Finite(hi) });
    }

    let m = DMatrix::from_row_slice(d, d, a);
    let sym = (&m + m.transpose()) * 0.5;
    let scale = m.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let tol = 1e-13 * scale;

    let eig = SymmetricEigen::new(sym);
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -tol {
        return Err(Error::NotElliptic { eigenvalue: min_eig });
    }
    let lambda = min_eig.max(0.0);

    let mut range = Vec::new();
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k).clone_owned();
        if ev <= tol {
            if (&m * &v).norm() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return Ok(Ellipticity { lambda, mu: ExtReal::Infinite });
            }
        } else {
            range.push((ev, v));
        }
    }
    if range.is_empty() {
        return Ok(Ellipticity { lambda, mu: ExtReal::Finite(0.0) });
    }

    // Generalized eigenproblem on the range of the symmetric part:
    // max eig of D^{-1/2} Qᵀ AᵀA Q D^{-1/2}.
    let r = range.len();
    let images: Vec<_> = range.iter().map(|(ev, v)| (&m * v) / ev.sqrt()).collect();
    let gram = DMatrix::from_fn(r, r, |i, j| images[i].dot(&images[j]));
    let mu = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max);
    Ok(Ellipticity { lambda, mu: ExtReal::Finite(mu.max(lambda)) })
}

/// Cellwise `λ`, `μ` of a coefficient field.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipticityProfile {
    pub grid: Grid,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Errors carry the offending cell index. Cells with infinite `μ` are
/// reported as [`Error::InfiniteMu`].
pub fn profile_of_field(field: &MatrixField) -> Result<EllipticityProfile> {
    let d = field.grid.d;
    let mut lambda = Vec::with_capacity(field.grid.num_cells());
    let mut mu = Vec::with_capacity(field.grid.num_cells());
    for cell in 0..field.grid.num_cells() {
        let e = lambda_mu_of_matrix(field.cell(cell), d).map_err(|e| e.at_cell(cell))?;
        lambda.push(e.lambda);
        match e.mu {
            ExtReal::Finite(m) => mu.push(m),
            ExtReal::Infinite => return Err(Error::InfiniteMu { cell }),
        }
    }
    Ok(EllipticityProfile { grid: field.grid, lambda, mu })
}

impl EllipticityProfile {
    /// Profile on an arbitrary grid with given per-cell values.
    pub fn new(grid: Grid, lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        let n = grid.num_cells();
        if lambda.len() != n || mu.len() != n {
            return Err(Error::Incompatible(format!(
                "profile needs {n} cells, got lambda {} / mu {}",
                lambda.len(),
                mu.len()
            )));
        }
        if lambda.iter().chain(&mu).any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParameter("profile entries must be finite and non-negative".into()));
        }
        Ok(Self { grid, lambda, mu })
    }
}

fn check_region(cells: &[usize], len: usize) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::InvalidParameter("empty cell region".into()));
    }
    if let Some(&c) = cells.iter().find(|&&c| c >= len) {
        return Err(Error::Incompatible(format!("cell {c} out of range ({len} cells)")));
    }
    Ok(())
}

fn check_moment_exponent(name: &str, x: ExtReal) -> Result<()> {
    match x {
        ExtReal::Finite(v) if !(v >= 1.0 && v.is_finite()) => Err(Error::InvalidParameter(format!(
            "{name} = {v} must be at least 1"
        ))),
        _ => Ok(()),
    }
}

/// Power mean `(⨍ f^p)^{1/p}` or the maximum for `p = ∞`. Infinite values of
/// `f` propagate.
fn power_mean(values: impl Iterator<Item = f64>, p: ExtReal) -> ExtReal {
    match p {
        ExtReal::Infinite => ExtReal::from_f64(values.fold(0.0, f64::max)),
        ExtReal::Finite(p) => {
            let (mut sum, mut count) = (0.0, 0usize);
            for v in values {
                sum += v.powf(p);
                count += 1;
            }
            ExtReal::from_f64((sum / count as f64).powf(1.0 / p))
        }
    }
}

fn inverse(l: f64) -> f64 {
    if l == 0.0 {
        f64::INFINITY
    } else {
        1.0 / l
    }
}

fn product(a: ExtReal, b: ExtReal) -> ExtReal {
    match (a, b) {
        (ExtReal::Finite(x), ExtReal::Finite(y)) => ExtReal::from_f64(x * y),
        _ => ExtReal::Infinite,
    }
}

/// `Λ(S) = (⨍_S μ^p)^{1/p} (⨍_S λ^{-q})^{1/q}` with equal cell weights; cells
/// may repeat (periodic wrap counts multiplicity). `p` and `q` may be 1.
pub fn lambda_of_region(profile: &EllipticityProfile, cells: &[usize], p: ExtReal, q: ExtReal) -> Result<ExtReal> {
    check_region(cells, profile.mu.len())?;
    check_moment_exponent("p", p)?;
    check_moment_exponent("q", q)?;
    let mu = power_mean(cells.iter().map(|&c| profile.mu[c]), p);
    let inv_lambda = power_mean(cells.iter().map(|&c| inverse(profile.lambda[c])), q);
    Ok(product(mu, inv_lambda))
}

/// `(‖μ‖_{L^p(S)}, ‖λ^{-1}‖_{L^q(S)})` with cell measure `h^d`.
pub fn moment_norms(profile: &EllipticityProfile, cells: &[usize], p: ExtReal, q: ExtReal) -> Result<(ExtReal, ExtReal)> {
    check_region(cells, profile.mu.len())?;
    check_moment_exponent("p", p)?;
    check_moment_exponent("q", q)?;
    let measure = profile.grid.cell_volume() * cells.len() as f64;
    let scale = |m: ExtReal, e: ExtReal| match (m, e) {
        (ExtReal::Finite(v), ExtReal::Finite(e)) => ExtReal::Finite(v * measure.powf(1.0 / e)),
        (m, _) => m,
    };
    let mu = power_mean(cells.iter().map(|&c| profile.mu[c]), p);
    let inv_lambda = power_mean(cells.iter().map(|&c| inverse(profile.lambda[c])), q);
    Ok((scale(mu, p), scale(inv_lambda, q)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Topology;
    use approx::assert_relative_eq;

    fn inf() -> ExtReal {
        ExtReal::Infinite
    }
    fn fin(x: f64) -> ExtReal {
        ExtReal::Finite(x)
    }

    #[test]
    fn condition_examples() {
        let c = check_condition(2, inf(), inf()).unwrap();
        assert!(c.sharp_ok && c.classical_ok);
        let c = check_condition(3, fin(4.0), fin(4.0)).unwrap();
        assert!(c.sharp_ok && c.classical_ok);
        let c = check_condition(4, fin(2.0), fin(2.0)).unwrap();
        assert!(!c.sharp_ok && !c.classical_ok);
    }

    #[test]
    fn condition_rejects_bad_parameters() {
        assert!(check_condition(1, inf(), inf()).is_err());
        assert!(check_condition(3, fin(1.0), inf()).is_err());
        assert!(check_condition(3, inf(), fin(0.5)).is_err());
    }

    #[test]
    fn borderline_is_flagged() {
        // d = 3: 1/2 + 1/2 = 1 = 2/(d-1)
        let c = check_condition(3, fin(2.0), fin(2.0)).unwrap();
        assert!(c.borderline && !c.sharp_ok);
    }

    #[test]
    fn exponents_d3_infinite() {
        let e = derive_exponents(3, inf(), inf()).unwrap();
        assert_eq!(e.delta, 0.5);
        assert_eq!(e.p_prime, 1.0);
        assert_eq!(e.s, 1.0);
        assert_eq!(e.p_star, 1.0);
        assert_relative_eq!(e.q_star.finite().unwrap(), 6.0, max_relative = 1e-15);
        assert_relative_eq!(e.kappa.finite().unwrap(), 3.0, max_relative = 1e-15);
        assert_eq!(e.chi, 1.5);
    }

    #[test]
    fn exponents_d2_infinite() {
        let e = derive_exponents(2, inf(), inf()).unwrap();
        assert_eq!(e.delta, 0.5);
        assert_eq!(e.p_star, 1.0);
        assert_eq!(e.q_star, ExtReal::Infinite);
        assert_eq!(e.kappa, ExtReal::Infinite);
    }

    #[test]
    fn exponents_d3_p8_q8() {
        let e = derive_exponents(3, fin(8.0), fin(8.0)).unwrap();
        assert_relative_eq!(e.delta, 3.0 / 8.0, max_relative = 1e-15);
    }

    #[test]
    fn p_star_is_one_in_two_dimensions() {
        for p in [1.5, 2.0, 7.0, 100.0] {
            assert_eq!(derive_exponents(2, fin(p), fin(3.0)).unwrap().p_star, 1.0);
        }
    }

    #[test]
    fn lambda_mu_examples() {
        let e = lambda_mu_of_matrix(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!((e.lambda, e.mu), (1.0, fin(1.0)));
        let e = lambda_mu_of_matrix(&[4.0, 0.0, 0.0, 0.25], 2).unwrap();
        assert_eq!((e.lambda, e.mu), (0.25, fin(4.0)));
        let e = lambda_mu_of_matrix(&[1.0, 1.0, -1.0, 1.0], 2).unwrap();
        assert_relative_eq!(e.lambda, 1.0, max_relative = 1e-12);
        assert_relative_eq!(e.mu.finite().unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        assert!(matches!(
            lambda_mu_of_matrix(&[1.0, 0.0, 0.0, -1.0], 2),
            Err(Error::NotElliptic { .. })
        ));
        assert!(matches!(
            lambda_mu_of_matrix(&[1.0, 3.0, 3.0, 1.0], 2),
            Err(Error::NotElliptic { .. })
        ));
    }

    #[test]
    fn singular_symmetric_part_with_rotation_has_infinite_mu() {
        // Pure rotation generator: symmetric part is zero, Aξ ≠ 0.
        let e = lambda_mu_of_matrix(&[0.0, 1.0, -1.0, 0.0], 2).unwrap();
        assert_eq!(e.lambda, 0.0);
        assert_eq!(e.mu, ExtReal::Infinite);
        // Kernel of the symmetric part is also a kernel of A: finite.
        let e = lambda_mu_of_matrix(&[2.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!((e.lambda, e.mu), (0.0, fin(2.0)));
    }

    fn two_cell_profile(lambda: [f64; 2], mu: [f64; 2]) -> EllipticityProfile {
        // Any grid with two cells would do; use a 2x1 slice of a 2x2 grid.
        let grid = Grid::new(2, 2, 2.0, Topology::Box).unwrap();
        EllipticityProfile::new(grid, vec![lambda[0], lambda[1], lambda[0], lambda[1]], vec![mu[0], mu[1], mu[0], mu[1]])
            .unwrap()
    }

    #[test]
    fn region_statistic_examples() {
        let p = two_cell_profile([1.0, 1.0], [1.0, 1.0]);
        assert_eq!(lambda_of_region(&p, &[0, 1], fin(3.0), fin(2.0)).unwrap(), fin(1.0));
        let p = two_cell_profile([1.0, 1.0 / 3.0], [1.0, 3.0]);
        assert_relative_eq!(
            lambda_of_region(&p, &[0, 1], fin(1.0), fin(1.0)).unwrap().to_f64(),
            4.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            lambda_of_region(&p, &[0, 1], inf(), inf()).unwrap().to_f64(),
            9.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn region_statistic_with_vanishing_lambda_is_infinite() {
        let p = two_cell_profile([0.0, 1.0], [1.0, 1.0]);
        assert_eq!(lambda_of_region(&p, &[0, 1], fin(2.0), inf()).unwrap(), inf());
        assert_eq!(lambda_of_region(&p, &[0, 1], fin(2.0), fin(2.0)).unwrap(), inf());
        assert!(lambda_of_region(&p, &[], fin(2.0), fin(2.0)).is_err());
    }

    #[test]
    fn moment_norm_examples() {
        // Unit box split in four cells of measure 1/4 each.
        let grid = Grid::new(2, 2, 1.0, Topology::Box).unwrap();
        let p = EllipticityProfile::new(grid, vec![1.0; 4], vec![1.0; 4]).unwrap();
        let (m, l) = moment_norms(&p, &[0, 1, 2, 3], fin(2.0), fin(3.0)).unwrap();
        assert_relative_eq!(m.to_f64(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(l.to_f64(), 1.0, max_relative = 1e-15);

        let p = EllipticityProfile::new(grid, vec![1.0, 0.5, 1.0, 0.5], vec![1.0, 3.0, 1.0, 3.0]).unwrap();
        // ‖μ‖_{L¹} over two cells = (1 + 3)/4 = 1
        let (m, l) = moment_norms(&p, &[0, 1], fin(1.0), fin(1.0)).unwrap();
        assert_relative_eq!(m.to_f64(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(l.to_f64(), 0.75, max_relative = 1e-15);
        let (m, l) = moment_norms(&p, &[0, 1], inf(), inf()).unwrap();
        assert_eq!((m, l), (fin(3.0), fin(2.0)));
    }
}
