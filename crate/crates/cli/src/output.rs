//! Artifact writing: atomic files, long-format CSV and the manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dhl_core::report::ExperimentReport;
use dhl_core::ExtReal;

pub const MANIFEST: &str = "manifest.json";
pub const RESULTS: &str = "results.csv";

pub const LONG_HEADER: [&str; 11] = ["experiment", "digest", "d", "p", "q", "n", "L", "seed", "key", "value", "flag"];

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-trip text; exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn ext(x: Option<ExtReal>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// One row per measurement, in report order.
pub fn long_csv(reports: &[ExperimentReport]) -> io::Result<Vec<u8>> {
    let rows = reports.iter().flat_map(|r| {
        r.measurements.iter().map(move |m| {
            vec![
                r.experiment.clone(),
                r.digest.clone(),
                r.d.to_string(),
                ext(r.p),
                ext(r.q),
                if r.n == 0 { String::new() } else { r.n.to_string() },
                if r.length == 0.0 { String::new() } else { r.length.to_string() },
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                m.key.clone(),
                fmt_f64(m.value),
                m.flag.clone(),
            ]
        })
    });
    csv_bytes(&LONG_HEADER, rows)
}

/// Generic table with an explicit header.
pub fn table_csv(header: &[&str], rows: Vec<Vec<String>>) -> io::Result<Vec<u8>> {
    csv_bytes(header, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub job: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub versions: Versions,
    pub experiment: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub failures: Vec<JobFailure>,
    pub status: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    #[serde(rename = "dhl-cli")]
    pub cli: String,
    #[serde(rename = "dhl-core")]
    pub core: String,
}

impl Versions {
    pub fn current() -> Self {
        Self { cli: env!("CARGO_PKG_VERSION").into(), core: dhl_core::VERSION.into() }
    }
}

fn kind_of(rel: &str) -> &'static str {
    match Path::new(rel).extension().and_then(|e| e.to_str()) {
        Some("csv") => "table",
        Some("dhl") => "field",
        Some("dhs") => "solution",
        Some("py") => "plot",
        Some("toml") => "config",
        _ => "other",
    }
}

/// Seed encoded in a file name as `_s<seed>.`.
fn seed_of(rel: &str) -> Option<u64> {
    let stem = Path::new(rel).file_stem()?.to_str()?;
    stem.rsplit_once("_s")?.1.parse().ok()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            let name = rel.to_string_lossy();
            if name != MANIFEST && !path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')) {
                out.push(rel.to_path_buf());
            }
        }
    }
    Ok(())
}

/// Every file under `root` except the manifest itself and hidden
/// temporaries, sorted by path.
pub fn scan_artifacts(root: &Path, all_seeds: &[u64]) -> io::Result<Vec<Artifact>> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(root.join(&rel))?;
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/");
            let kind = kind_of(&path);
            let seeds = match (kind, seed_of(&path)) {
                ("field" | "solution", Some(s)) => vec![s],
                ("table", _) => all_seeds.to_vec(),
                _ => Vec::new(),
            };
            Ok(Artifact { sha256: sha256_hex(&bytes), bytes: bytes.len() as u64, kind: kind.into(), seeds, path })
        })
        .collect()
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(&root.join(MANIFEST), text.as_bytes())
}

pub fn read_manifest(root: &Path) -> io::Result<Manifest> {
    let text = fs::read_to_string(root.join(MANIFEST))?;
    serde_json::from_str(&text).map_err(io::Error::other)
}
