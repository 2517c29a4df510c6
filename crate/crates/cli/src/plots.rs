//! Plot scripts. Each script is standalone Python (csv + matplotlib), reads
//! its table relative to its own location and saves a PNG next to itself.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use crate::output::{write_atomic, RESULTS};

pub const PLOT_DIR: &str = "plots";

const PRELUDE: &str = r#"import csv
import pathlib
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = pathlib.Path(__file__).resolve().parent
"#;

fn sublinearity_script(table: &str, direction: &str) -> String {
    format!(
        r#"{PRELUDE}
TABLE = HERE / "../{table}"

rows = [r for r in csv.DictReader(open(TABLE)) if r["sup_stat"] not in ("", "NaN")]
by_length = {{}}
for r in rows:
    by_length.setdefault(int(r["L"]), []).append((float(r["sup_stat"]), float(r["l1_stat"])))
lengths = sorted(by_length)
if not lengths:
    sys.exit("no successful rows in " + str(TABLE))
sup = [sum(s for s, _ in by_length[L]) / len(by_length[L]) for L in lengths]
l1 = [sum(a for _, a in by_length[L]) / len(by_length[L]) for L in lengths]

fig, ax = plt.subplots(figsize=(5, 4))
for L in lengths:
    ax.scatter([L] * len(by_length[L]), [s for s, _ in by_length[L]], s=6, color="0.7")
ax.loglog(lengths, sup, "o-", label="mean L^-1 sup|phi|")
ax.loglog(lengths, l1, "s-", label="mean L^-1 avg|phi|")
ax.set_xlabel("L")
ax.set_title("corrector sublinearity, direction {direction}")
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "sublinearity_dir{direction}.png", dpi=150)
"#
    )
}

fn sweep_script() -> String {
    format!(
        r#"{PRELUDE}
TABLE = HERE / "../sweep.csv"

rows = list(csv.DictReader(open(TABLE)))
alphas = sorted({{float(r["alpha"]) for r in rows}})
sizes = sorted({{int(r["n"]) for r in rows}})
grid = [[float("nan")] * len(sizes) for _ in alphas]
for r in rows:
    if r["sup_norm"]:
        grid[alphas.index(float(r["alpha"]))][sizes.index(int(r["n"]))] = float(r["sup_norm"])

fig, ax = plt.subplots(figsize=(5, 4))
im = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis")
ax.set_xticks(range(len(sizes)), [str(n) for n in sizes])
ax.set_yticks(range(len(alphas)), [str(a) for a in alphas])
ax.set_xlabel("n")
ax.set_ylabel("alpha")
fig.colorbar(im, label="sup |u| on B_(L/4)")
fig.tight_layout()
fig.savefig(HERE / "sweep_heatmap.png", dpi=150)
"#
    )
}

fn scatter_script() -> String {
    format!(
        r#"{PRELUDE}
TABLE = HERE / "../{RESULTS}"

values = {{}}
for r in csv.DictReader(open(TABLE)):
    if r["key"] in ("c_emp", "lambda") and r["value"] not in ("", "NaN", "inf"):
        values.setdefault((r["experiment"], r["n"], r["seed"]), {{}})[r["key"]] = float(r["value"])
pairs = [(v["lambda"], v["c_emp"], k[1]) for k, v in sorted(values.items()) if len(v) == 2]

fig, ax = plt.subplots(figsize=(5, 4))
for n in sorted({{p[2] for p in pairs}}, key=lambda s: int(s or 0)):
    pts = [p for p in pairs if p[2] == n]
    ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o", label="n = " + n)
ax.set_xlabel("Lambda")
ax.set_ylabel("c_emp")
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "c_emp_vs_lambda.png", dpi=150)
"#
    )
}

fn sharpness_script() -> String {
    format!(
        r#"{PRELUDE}
TABLE = HERE / "../{RESULTS}"

cells = {{}}
for r in csv.DictReader(open(TABLE)):
    if r["experiment"] == "exponents" and r["key"] == "delta":
        cells[(int(r["d"]), r["p"], r["q"])] = float(r["value"])
dims = sorted({{k[0] for k in cells}})
order = lambda s: float("inf") if s == "inf" else float(s)
ps = sorted({{k[1] for k in cells}}, key=order)
qs = sorted({{k[2] for k in cells}}, key=order)

fig, axes = plt.subplots(1, len(dims), figsize=(4 * len(dims), 3.6), squeeze=False)
for ax, d in zip(axes[0], dims):
    grid = [[cells.get((d, p, q), float("nan")) for q in qs] for p in ps]
    im = ax.imshow(grid, origin="lower", cmap="coolwarm", vmin=-0.5, vmax=0.5)
    ax.set_xticks(range(len(qs)), qs)
    ax.set_yticks(range(len(ps)), ps)
    ax.set_xlabel("q")
    ax.set_ylabel("p")
    ax.set_title("delta, d = %d" % d)
    for i, p in enumerate(ps):
        for j, q in enumerate(qs):
            ax.text(j, i, "+" if grid[i][j] > 0 else "-", ha="center", va="center", fontsize=7)
fig.colorbar(im, ax=axes[0].tolist())
fig.savefig(HERE / "sharpness_table.png", dpi=150)
"#
    )
}

fn result_keys(root: &Path) -> io::Result<(BTreeSet<String>, BTreeSet<String>)> {
    let mut keys = BTreeSet::new();
    let mut experiments = BTreeSet::new();
    let path = root.join(RESULTS);
    if !path.exists() {
        return Ok((keys, experiments));
    }
    let mut reader = csv::Reader::from_path(&path).map_err(io::Error::other)?;
    for rec in reader.records() {
        let rec = rec.map_err(io::Error::other)?;
        experiments.insert(rec.get(0).unwrap_or_default().to_string());
        keys.insert(rec.get(8).unwrap_or_default().to_string());
    }
    Ok((keys, experiments))
}

/// Writes one script per recognised table under `root/plots` and returns
/// their relative paths. Nothing is written when no table is present.
pub fn emit_plots(root: &Path) -> io::Result<Vec<String>> {
    let mut scripts: Vec<(String, String)> = Vec::new();
    let mut names: Vec<String> = match fs::read_dir(root) {
        Ok(entries) => entries.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    names.sort();
    for name in &names {
        if let Some(dir) = name.strip_prefix("sublinearity_dir").and_then(|s| s.strip_suffix(".csv")) {
            scripts.push((format!("sublinearity_dir{dir}.py"), sublinearity_script(name, dir)));
        }
    }
    if names.iter().any(|n| n == "sweep.csv") {
        scripts.push(("sweep_heatmap.py".into(), sweep_script()));
    }
    let (keys, experiments) = result_keys(root)?;
    if keys.contains("c_emp") && keys.contains("lambda") {
        scripts.push(("c_emp_vs_lambda.py".into(), scatter_script()));
    }
    if experiments.contains("exponents") {
        scripts.push(("sharpness_table.py".into(), sharpness_script()));
    }
    let mut written = Vec::new();
    for (name, text) in scripts {
        let rel = format!("{PLOT_DIR}/{name}");
        write_atomic(&root.join(&rel), text.as_bytes())?;
        written.push(rel);
    }
    Ok(written)
}
