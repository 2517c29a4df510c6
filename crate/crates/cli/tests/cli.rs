use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dhl_cli::output::{read_manifest, sha256_hex, LONG_HEADER, MANIFEST};
use dhl_core::{MatrixField, ScalarField};

fn dhl(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dhl"));
    cmd.args(args).env_remove("DHL_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn dhl")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_with(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    dhl(&args, &[])
}

fn tables(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let manifest = read_manifest(dir).unwrap();
    manifest
        .artifacts
        .iter()
        .filter(|a| a.kind == "table")
        .map(|a| (a.path.clone(), fs::read(dir.join(&a.path)).unwrap()))
        .collect()
}

const EXPONENTS: &str = r#"kind = "exponents"

[exponents]
d = [2, 3]
p = [2, "inf"]
q = [1.5, 4]
"#;

const SOLVE: &str = r#"kind = "solve"
mesh_sizes = [16, 32]
seeds = [0, 1]

[field]
family = "blocked"
p0 = 3
q0 = 3
blocks_per_side = 4
"#;

const CORRECTOR: &str = r#"kind = "corrector"
seeds = [0, 1, 2]

[field]
family = "iid-pareto-mixture"
p0 = 4
q0 = 4

[corrector]
lengths = [8, 16]
directions = [0, 1]
"#;

#[test]
fn exponents_run_writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "e.toml", EXPONENTS);
    let out = dir.path().join("out");
    let o = run_with("exponents", &config, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), LONG_HEADER.join(","));
    assert!(text.lines().any(|l| l.starts_with("exponents,") && l.contains(",3,inf,4,") && l.contains(",delta,")));

    let manifest = read_manifest(&out).unwrap();
    assert_eq!(manifest.status, "ok");
    assert_eq!(manifest.experiment, "exponents");
    assert_eq!(manifest.config_digest.len(), 16);
    let paths: Vec<&str> = manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
    assert!(paths.contains(&"results.csv") && paths.contains(&"config.toml") && paths.contains(&"plots/sharpness_table.py"));
}

#[test]
fn manifest_lists_every_file_with_its_digest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "s.toml", SOLVE);
    let out = dir.path().join("out");
    assert_eq!(run_with("solve", &config, &out, &[]).status.code(), Some(0));

    let manifest = read_manifest(&out).unwrap();
    let mut on_disk = Vec::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.ends_with(MANIFEST) {
                on_disk.push(p.strip_prefix(&out).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    on_disk.sort();
    let listed: Vec<String> = manifest.artifacts.iter().map(|a| a.path.clone()).collect();
    assert_eq!(listed, on_disk);
    for a in &manifest.artifacts {
        let bytes = fs::read(out.join(&a.path)).unwrap();
        assert_eq!(a.sha256, sha256_hex(&bytes), "{}", a.path);
        assert_eq!(a.bytes, bytes.len() as u64);
    }
    let field = manifest.artifacts.iter().find(|a| a.path == "fields/field_n32_s1.dhl").unwrap();
    assert_eq!(field.seeds, vec![1]);
}

#[test]
fn binaries_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "s.toml", SOLVE);
    let out = dir.path().join("out");
    assert_eq!(run_with("solve", &config, &out, &[]).status.code(), Some(0));

    let field_bytes = fs::read(out.join("fields/field_n16_s0.dhl")).unwrap();
    assert_eq!(&field_bytes[..4], b"DHL1");
    let field = MatrixField::read_from(&mut field_bytes.as_slice()).unwrap();
    assert_eq!((field.grid.d, field.grid.n), (2, 16));

    let solution_bytes = fs::read(out.join("solutions/solution_n16_s0.dhs")).unwrap();
    assert_eq!(&solution_bytes[..4], b"DHS1");
    let u = ScalarField::read_from(&mut solution_bytes.as_slice(), field.grid.length).unwrap();
    assert_eq!(u.values.len(), 17 * 17);
    assert!(u.meta.residual < 1e-9);
}

#[test]
fn degenerate_jobs_exit_two_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "z.toml", "kind = \"solve\"\nmesh_sizes = [8]\n\n[field]\nfamily = \"constant\"\nvalue = 0\n");
    let out = dir.path().join("out");
    let o = run_with("solve", &config, &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_manifest(&out).unwrap();
    assert_eq!(manifest.status, "partial");
    assert_eq!(manifest.failures.len(), 1);
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(text.lines().any(|l| l.ends_with(",error,NaN,error")), "{text}");
}

#[test]
fn invalid_config_exits_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = write_config(dir.path(), "bad.toml", "kind = \"solve\"\nq = 0.5\n");
    let o = run_with("solve", &bad, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("`q`"), "{err}");
    assert!(!out.exists());

    let unknown = write_config(dir.path(), "unknown.toml", "kind = \"solve\"\n\n[field]\nfamily = \"constant\"\nvalu = 2\n");
    let err = String::from_utf8_lossy(&run_with("solve", &unknown, &out, &[]).stderr).into_owned();
    assert!(err.contains("line 5") && err.contains("valu"), "{err}");

    let missing = dir.path().join("absent.toml");
    assert_eq!(run_with("solve", &missing, &out, &[]).status.code(), Some(1));

    let mismatch = write_config(dir.path(), "m.toml", "kind = \"sweep\"\n");
    assert_eq!(run_with("solve", &mismatch, &out, &[]).status.code(), Some(1));
}

#[test]
fn tables_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.toml", CORRECTOR);
    let one = dir.path().join("t1");
    let four = dir.path().join("t4");
    assert_eq!(run_with("corrector", &config, &one, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run_with("corrector", &config, &four, &["--threads", "4"]).status.code(), Some(0));
    let a = tables(&one);
    assert_eq!(a.len(), 3);
    assert_eq!(a, tables(&four));
    let header = String::from_utf8(a.iter().find(|t| t.0 == "sublinearity_dir1.csv").unwrap().1.clone()).unwrap();
    assert_eq!(header.lines().next().unwrap(), "L,seed,sup_stat,l1_stat,energy,residual");
    assert!(one.join("plots/sublinearity_dir0.py").exists() && one.join("plots/sublinearity_dir1.py").exists());
    assert_eq!(run_with("corrector", &config, &four, &["--threads", "0"]).status.code(), Some(1));
}

#[test]
fn rerun_replaces_artifacts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "s.toml", SOLVE);
    let out = dir.path().join("out");
    assert_eq!(run_with("solve", &config, &out, &[]).status.code(), Some(0));
    let first = read_manifest(&out).unwrap();
    assert_eq!(run_with("solve", &config, &out, &[]).status.code(), Some(0));
    assert_eq!(read_manifest(&out).unwrap(), first);

    let smaller = write_config(dir.path(), "s1.toml", &SOLVE.replace("mesh_sizes = [16, 32]", "mesh_sizes = [16]"));
    assert_eq!(run_with("solve", &smaller, &out, &[]).status.code(), Some(0));
    assert!(!out.join("fields/field_n32_s0.dhl").exists());
}

#[test]
fn seed_offset_shifts_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "s.toml", SOLVE);
    let out = dir.path().join("out");
    assert_eq!(run_with("solve", &config, &out, &["--seed-offset", "10"]).status.code(), Some(0));
    let manifest = read_manifest(&out).unwrap();
    assert_eq!(manifest.seeds, vec![10, 11]);
    assert!(out.join("fields/field_n16_s11.dhl").exists());
    assert!(!out.join("fields/field_n16_s0.dhl").exists());
}

#[test]
fn output_root_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "e.toml", EXPONENTS);
    let root = dir.path().join("root");
    let o = dhl(&["exponents", "--config", config.to_str().unwrap()], &[("DHL_OUT", &root)]);
    assert_eq!(o.status.code(), Some(0));
    let printed = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert_eq!(printed.parent().unwrap(), root);
    let name = printed.file_name().unwrap().to_string_lossy().into_owned();
    let digest = read_manifest(&printed).unwrap().config_digest;
    assert_eq!(name, format!("exponents-{digest}"));
}

#[test]
fn plots_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = dhl(&["plots", "--out", empty.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_dir(&empty).unwrap().count(), 0);

    let config = write_config(dir.path(), "c.toml", CORRECTOR);
    let out = dir.path().join("out");
    assert_eq!(run_with("corrector", &config, &out, &[]).status.code(), Some(0));
    fs::remove_dir_all(out.join("plots")).unwrap();
    let o = dhl(&["plots", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("plots/sublinearity_dir1.py").exists());
    let manifest = read_manifest(&out).unwrap();
    assert!(manifest.artifacts.iter().any(|a| a.path == "plots/sublinearity_dir0.py"));

    assert_eq!(dhl(&["plots"], &[]).status.code(), Some(1));
}
