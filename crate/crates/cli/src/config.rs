//! Experiment configuration files.
//!
//! Grammar: TOML. Top-level `key = value` pairs, `[section]` headers for
//! `field`, `exponents`, `cutoff`, `harnack`, `corrector` and `sweep`, arrays
//! in brackets. Exponents accept a number or `"inf"`.
//!
//! ```toml
//! kind = "corrector"
//! d = 2
//! seeds = [0, 1, 2, 3]
//! p = 3.0
//! q = 3.0
//!
//! [field]
//! family = "iid-pareto-mixture"
//! p0 = 4.0
//! q0 = 4.0
//!
//! [corrector]
//! lengths = [16, 32, 64]
//! ```

use std::fmt;
use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::de::{DeTable, DeValue};

use dhl_core::exponents::check_condition;
use dhl_core::{derive_exponents, ExtReal, Family, FieldSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Exponents,
    Solve,
    Cutoff,
    Harnack,
    #[serde(alias = "bound")]
    Bound2d,
    Corrector,
    Sweep,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Exponents => "exponents",
            Kind::Solve => "solve",
            Kind::Cutoff => "cutoff",
            Kind::Harnack => "harnack",
            Kind::Bound2d => "bound2d",
            Kind::Corrector => "corrector",
            Kind::Sweep => "sweep",
        }
    }
}

/// Dirichlet data on the box boundary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// `2 + 2x₁/L`, between 1 and 3.
    #[default]
    Positive,
    /// `x₁`
    Linear,
    /// `x₁ + x₂²/2 - 1/4`
    Audit,
    /// `x₁² - x₂²`
    Saddle,
}

impl Boundary {
    pub fn eval(self, x: &[f64; 3], length: f64) -> f64 {
        match self {
            Boundary::Positive => 2.0 + 2.0 * x[0] / length,
            Boundary::Linear => x[0],
            Boundary::Audit => dhl_core::regularity::audit_boundary(x),
            Boundary::Saddle => x[0] * x[0] - x[1] * x[1],
        }
    }
}

/// Coefficient family. Block sizes are either in cells (`block`) or as a
/// count per box side (`blocks_per_side`), which keeps the physical field
/// fixed across mesh sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldConfig {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    RadialPower {
        alpha: f64,
    },
    Checkerboard {
        omega1: f64,
        omega2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        blocks_per_side: Option<usize>,
    },
    IidParetoMixture {
        p0: ExtReal,
        q0: ExtReal,
    },
    Blocked {
        p0: ExtReal,
        q0: ExtReal,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        blocks_per_side: Option<usize>,
    },
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::Constant { value: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

fn block_cells(n: usize, block: Option<usize>, per_side: Option<usize>) -> Result<usize, String> {
    match (block, per_side) {
        (Some(b), None) => Ok(b),
        (None, Some(k)) if k > 0 && n % k == 0 => Ok(n / k),
        (None, Some(k)) => Err(format!("blocks_per_side = {k} does not divide n = {n}")),
        (None, None) => Err("one of block or blocks_per_side is required".into()),
        (Some(_), Some(_)) => Err("block and blocks_per_side are mutually exclusive".into()),
    }
}

impl FieldConfig {
    /// Field recipe for an `n`-cell mesh of side `length`.
    pub fn spec(&self, d: usize, n: usize, length: f64, seed: u64) -> Result<FieldSpec, String> {
        let family = match *self {
            FieldConfig::Constant { value } => Family::Constant { value },
            FieldConfig::RadialPower { alpha } => Family::RadialPower { alpha },
            FieldConfig::Checkerboard { omega1, omega2, block, blocks_per_side } => {
                let block = match (block, blocks_per_side) {
                    (None, None) => n / 2,
                    _ => block_cells(n, block, blocks_per_side)?,
                };
                Family::Checkerboard { omega1, omega2, block }
            }
            FieldConfig::IidParetoMixture { p0, q0 } => Family::IidParetoMixture { p0, q0 },
            FieldConfig::Blocked { p0, q0, block, blocks_per_side } => {
                Family::Blocked { p0, q0, block: block_cells(n, block, blocks_per_side)? }
            }
        };
        let spec = FieldSpec::new(d, n, length, family, seed);
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    fn uses_blocks_per_side(&self) -> bool {
        matches!(
            self,
            FieldConfig::Checkerboard { blocks_per_side: Some(_), .. } | FieldConfig::Blocked { blocks_per_side: Some(_), .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentGrid {
    #[serde(default = "default_dims")]
    pub d: Vec<usize>,
    #[serde(default = "default_exponents")]
    pub p: Vec<ExtReal>,
    #[serde(default = "default_exponents")]
    pub q: Vec<ExtReal>,
}

impl Default for ExponentGrid {
    fn default() -> Self {
        Self { d: default_dims(), p: default_exponents(), q: default_exponents() }
    }
}

fn default_dims() -> Vec<usize> {
    vec![2, 3, 4]
}

fn default_exponents() -> Vec<ExtReal> {
    [1.5, 2.0, 3.0, 4.0, 8.0].into_iter().map(ExtReal::Finite).chain([ExtReal::Infinite]).collect()
}

/// Radii are absolute; unset values default to fractions of the box side.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl CutoffConfig {
    pub fn radii(&self, length: f64) -> (f64, f64) {
        (self.rho.unwrap_or(0.15 * length), self.sigma.unwrap_or(0.35 * length))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackConfig {
    /// Ball radius; defaults to `0.4 L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default = "half")]
    pub theta: f64,
    #[serde(default = "three_quarters")]
    pub tau: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

impl Default for HarnackConfig {
    fn default() -> Self {
        Self { radius: None, theta: half(), tau: three_quarters(), gamma: one(), levels: default_levels() }
    }
}

fn half() -> f64 {
    0.5
}

fn three_quarters() -> f64 {
    0.75
}

fn default_levels() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorConfig {
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "default_directions")]
    pub directions: Vec<usize>,
    /// Cells per unit length.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// `ρ` values of the two-scale audit; empty disables it.
    #[serde(default)]
    pub two_scale_rho: Vec<f64>,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            lengths: default_lengths(),
            directions: default_directions(),
            resolution: default_resolution(),
            two_scale_rho: Vec::new(),
        }
    }
}

fn default_lengths() -> Vec<usize> {
    vec![16, 32, 64]
}

fn default_directions() -> Vec<usize> {
    vec![0]
}

fn default_resolution() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { alphas: default_alphas() }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![-1.5, -1.0, -0.5, 0.5, 1.0, 1.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_mesh_sizes")]
    pub mesh_sizes: Vec<usize>,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "infinite")]
    pub p: ExtReal,
    #[serde(default = "infinite")]
    pub q: ExtReal,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub exponents: ExponentGrid,
    #[serde(default)]
    pub cutoff: CutoffConfig,
    #[serde(default)]
    pub harnack: HarnackConfig,
    #[serde(default)]
    pub corrector: CorrectorConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_d() -> usize {
    2
}

fn default_mesh_sizes() -> Vec<usize> {
    vec![64]
}

fn default_length() -> f64 {
    2.0
}

fn infinite() -> ExtReal {
    ExtReal::Infinite
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    /// Dotted key path, empty for syntax errors.
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, self.key.is_empty()) {
            (Some(line), false) => write!(f, "line {line}: `{}`: {}", self.key, self.message),
            (Some(line), true) => write!(f, "line {line}: {}", self.message),
            (None, false) => write!(f, "`{}`: {}", self.key, self.message),
            (None, true) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn find_key(table: &DeTable<'_>, prefix: &str, offset: usize) -> Option<(String, Range<usize>)> {
    for (k, v) in table.iter() {
        let path = if prefix.is_empty() { k.get_ref().to_string() } else { format!("{prefix}.{}", k.get_ref()) };
        if let DeValue::Table(inner) = v.get_ref() {
            if let Some(hit) = find_key(inner, &path, offset) {
                return Some(hit);
            }
        }
        if k.span().contains(&offset) || v.span().contains(&offset) {
            return Some((path, k.span()));
        }
    }
    None
}

fn span_of_path(table: &DeTable<'_>, path: &str) -> Option<Range<usize>> {
    let (head, rest) = match path.split_once('.') {
        Some((h, r)) => (h, Some(r)),
        None => (path, None),
    };
    let (k, v) = table.iter().find(|(k, _)| k.get_ref() == head)?;
    match (rest, v.get_ref()) {
        (None, _) => Some(k.span()),
        (Some(rest), DeValue::Table(inner)) => span_of_path(inner, rest).or(Some(k.span())),
        (Some(_), _) => Some(k.span()),
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { key: key.into(), line: None, message: message.into() }
}

/// Parses and validates a configuration; errors name the key and line.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let table = DeTable::parse(text).map_err(|e| ConfigError {
        key: String::new(),
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let offset = e.span().map(|s| s.start);
        let located = offset.and_then(|o| find_key(table.get_ref(), "", o));
        let unknown = e.message().strip_prefix("unknown field `").and_then(|m| m.split('`').next());
        let key = match (&located, unknown) {
            (Some((path, _)), Some(name)) if !path.ends_with(name) => format!("{path}.{name}"),
            (Some((path, _)), _) => path.clone(),
            (None, Some(name)) => name.to_string(),
            (None, None) => String::new(),
        };
        let line = span_of_path(table.get_ref(), &key).map(|s| s.start).or(offset).map(|o| line_of(text, o));
        ConfigError { key, line, message: e.message().trim().to_string() }
    })?;
    config.validate().map_err(|mut e| {
        e.line = span_of_path(table.get_ref(), &e.key).map(|s| line_of(text, s.start));
        e
    })?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn kind_or(&self, fallback: Kind) -> Kind {
        self.kind.unwrap_or(fallback)
    }

    /// Structural checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(2..=3).contains(&self.d) && self.kind != Some(Kind::Exponents) {
            return Err(invalid("d", format!("dimension {} not in {{2, 3}}", self.d)));
        }
        if self.mesh_sizes.is_empty() || self.mesh_sizes.iter().any(|&n| n < 2) {
            return Err(invalid("mesh_sizes", "need at least one mesh size, each >= 2"));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(invalid("length", format!("{} must be positive", self.length)));
        }
        for (key, x) in [("p", self.p), ("q", self.q)] {
            if let ExtReal::Finite(v) = x {
                if !(v > 1.0) {
                    return Err(invalid(key, format!("{v} must exceed 1")));
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        if self.kind != Some(Kind::Exponents) && self.kind != Some(Kind::Corrector) && self.kind != Some(Kind::Sweep) {
            for &n in &self.mesh_sizes {
                self.field.spec(self.d, n, self.length, 0).map_err(|m| invalid("field", m))?;
            }
        }
        let g = &self.exponents;
        if g.d.is_empty() || g.p.is_empty() || g.q.is_empty() {
            return Err(invalid("exponents", "d, p and q lists must be non-empty"));
        }
        if let Some(&d) = g.d.iter().find(|&&d| d < 2) {
            return Err(invalid("exponents.d", format!("dimension {d} must be at least 2")));
        }
        for (key, list) in [("exponents.p", &g.p), ("exponents.q", &g.q)] {
            if let Some(v) = list.iter().filter_map(|x| x.finite()).find(|&v| !(v > 1.0)) {
                return Err(invalid(key, format!("{v} must exceed 1")));
            }
        }
        let (rho, sigma) = self.cutoff.radii(self.length);
        if !(rho >= 0.0 && rho < sigma && sigma <= 0.5 * self.length) {
            return Err(invalid("cutoff", format!("need 0 <= rho < sigma <= L/2, got ({rho}, {sigma})")));
        }
        let h = &self.harnack;
        if let Some(r) = h.radius {
            if !(r > 0.0 && r <= 0.5 * self.length) {
                return Err(invalid("harnack.radius", format!("{r} not in (0, L/2]")));
            }
        }
        if !(0.0 < h.theta && h.theta < h.tau && h.tau < 1.0) {
            return Err(invalid("harnack", format!("need 0 < theta < tau < 1, got ({}, {})", h.theta, h.tau)));
        }
        if !(h.gamma > 0.0) {
            return Err(invalid("harnack.gamma", format!("{} must be positive", h.gamma)));
        }
        let c = &self.corrector;
        if c.lengths.is_empty() || c.lengths.iter().any(|&l| l < 2) {
            return Err(invalid("corrector.lengths", "need at least one length, each >= 2"));
        }
        if c.directions.is_empty() || c.directions.iter().any(|&i| i >= self.d) {
            return Err(invalid("corrector.directions", format!("directions must lie in 0..{}", self.d)));
        }
        if c.resolution == 0 {
            return Err(invalid("corrector.resolution", "must be at least 1"));
        }
        if let Some(r) = c.two_scale_rho.iter().find(|&&r| !(r > 0.0 && r <= 0.5)) {
            return Err(invalid("corrector.two_scale_rho", format!("{r} not in (0, 1/2]")));
        }
        if self.kind == Some(Kind::Corrector) {
            if self.field.uses_blocks_per_side() {
                return Err(invalid("field.blocks_per_side", "corrector campaigns need block sizes in cells"));
            }
            for &l in &c.lengths {
                self.field.spec(self.d, l * c.resolution, l as f64, 0).map_err(|m| invalid("field", m))?;
            }
            if !c.two_scale_rho.is_empty() {
                let flags = check_condition(self.d, self.p, self.q).map_err(|e| invalid("p", e.to_string()))?;
                if !flags.sharp_ok {
                    return Err(invalid("q", "two-scale audit needs 1/p + 1/q < 2/(d-1)"));
                }
            }
        }
        if self.sweep.alphas.is_empty() {
            return Err(invalid("sweep.alphas", "need at least one exponent"));
        }
        Ok(())
    }

    /// Validation specific to the subcommand being run.
    pub fn validate_for(&self, kind: Kind) -> Result<(), ConfigError> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(invalid("kind", format!("config is for `{}`, not `{}`", k.name(), kind.name())));
            }
        }
        let mut probe = self.clone();
        probe.kind = Some(kind);
        probe.validate()?;
        if kind == Kind::Bound2d && self.d != 2 {
            return Err(invalid("d", "bound2d needs d = 2"));
        }
        if kind == Kind::Harnack {
            if self.boundary != Boundary::Positive {
                return Err(invalid("boundary", "harnack needs positive boundary data"));
            }
            let exps = derive_exponents(self.d, self.p, self.q).map_err(|e| invalid("q", e.to_string()))?;
            if let ExtReal::Finite(q_star) = exps.q_star {
                if self.harnack.gamma >= 0.5 * q_star {
                    return Err(invalid("harnack.gamma", format!("{} must be below q*/2 = {}", self.harnack.gamma, 0.5 * q_star)));
                }
            }
        }
        Ok(())
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.seeds.iter_mut().for_each(|s| *s = s.wrapping_add(offset));
        self
    }

    /// TOML text that parses back to `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// Hex SHA-256 prefix of the canonical form, ignoring where and how the
    /// run executes (`output`, `threads`).
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        canonical.threads = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
