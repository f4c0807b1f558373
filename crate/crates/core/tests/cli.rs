use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mccpde_core::convex::read_dump;

const SMALL: &str = r#"
fem_n = 128
coarse_levels = [8]
validated_levels = [16, 32]
w_lo = -4.0
w_hi = 4.0
alpha = 2.5e-4
modes = ["mcc", "mcch_sweep", "obbt", "certificates", "ub_continuous", "ub_integer"]
f = { kind = "constant", value = 6.0 }
u_d = { kind = "constant", value = 0.5 }

[upper_bounds]
grid = 16
"#;

fn mccpde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mccpde")).args(args).env("MCCPDE_THREADS", "2").output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn empty_modes_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "empty.toml",
        &SMALL.replace(
            r#"modes = ["mcc", "mcch_sweep", "obbt", "certificates", "ub_continuous", "ub_integer"]"#,
            "modes = []",
        ),
    );
    let out = mccpde(&["run", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("modes"));

    let bad = write_config(dir.path(), "typo.toml", &format!("{SMALL}\nfem_m = 3\n"));
    assert_eq!(mccpde(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
    let odd = write_config(dir.path(), "odd.toml", &SMALL.replace("coarse_levels = [8]", "coarse_levels = [12]"));
    assert_eq!(mccpde(&["run", odd.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        let out = mccpde(&["run", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("lower <= upper: PASS"));
    }
    let mut csvs = 0;
    for entry in fs::read_dir(&a).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_owned();
        if path.extension().is_some_and(|e| e == "csv" || e == "svg") {
            assert_eq!(fs::read(&path).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?} differs");
            csvs += 1;
        }
    }
    assert!(csvs >= 6, "only {csvs} tables written");
    let table1 = fs::read_to_string(a.join("table1_bounds.csv")).unwrap();
    assert!(table1.starts_with("column,value,rel_gap_minlp,rel_gap_nlp\n"));
    let table4 = fs::read_to_string(a.join("table4_mcch.csv")).unwrap();
    assert!(table4.starts_with("n_h,h,m_mcch,m_mcchh,m_mcchh_obbt,sweeps,bound_updates\n"));
    assert!(a.join("timings.json").exists() && a.join("constants.json").exists());
}

#[test]
fn toy_oracle_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("toy_oracle.toml");
    let out = mccpde(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("bound validity: PASS (10/10 instances)"), "{stdout}");
    let rows = fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert_eq!(rows.lines().count(), 11);
}

#[test]
fn dump_qp_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let qp = dir.path().join("relax.qp");
    let out = mccpde(&["dump-qp", cfg.to_str().unwrap(), qp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed = read_dump(BufReader::new(fs::File::open(&qp).unwrap())).unwrap();
    assert!(!parsed.q.is_empty() && parsed.l.len() == parsed.u.len());
    let layout: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("relax.layout.json")).unwrap()).unwrap();
    assert!(layout.is_object());
}

#[test]
fn check_reports_every_suite() {
    let out = mccpde(&["check", "--seed", "5"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 7, "{stdout}");
}
