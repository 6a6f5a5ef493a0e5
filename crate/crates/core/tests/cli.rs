use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_nlsescat");

const WELL: &str = r#"
[potential]
kind = "rectangular-well"
depth = 50.0
half_width = 20.0

[params]
g = -1.0
mu_range = [0.5, 4.0]
"#;

const BARRIER: &str = r#"
[potential]
kind = "double-gaussian"
height = 1.0
offset = 7.35
width = 1.47

[params]
g = 0.005
mu_range = [0.70, 0.85]
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn nlsescat(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of a CSV body, skipping the hash comment and column header.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("not a number: {s:?}"))
}

#[test]
fn sweep_finds_transparent_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", WELL);
    let o = nlsescat(&["sweep", "--config", cfg.to_str().unwrap(), "--g", "0", "--mu-range", "1.5,2.5", "--points", "41"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("# config-hash: "));
    assert_eq!(text.lines().nth(1), Some("mu,T2,status"));
    let r = rows(&text);
    assert_eq!(r.len(), 41);
    let best = r.iter().filter(|r| r[2] == "ok").map(|r| num(&r[1])).fold(0.0, f64::max);
    assert!(best > 0.9, "{best}");
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", WELL);
    let run = |threads: &str| stdout(&nlsescat(&["sweep", "--config", cfg.to_str().unwrap(), "--points", "30", "--threads", threads]));
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("3"));
}

#[test]
fn overrides_change_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", WELL);
    let a = stdout(&nlsescat(&["sweep", "--config", cfg.to_str().unwrap(), "--points", "5"]));
    let b = stdout(&nlsescat(&["sweep", "--config", cfg.to_str().unwrap(), "--points", "5", "--g", "-0.5"]));
    assert_ne!(a.lines().next(), b.lines().next());
    assert_ne!(rows(&a)[2][1], rows(&b)[2][1]);
}

#[test]
fn resonance_reports_mu() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", WELL);
    let o = nlsescat(&["resonance", "--config", cfg.to_str().unwrap(), "--bracket", "1.5,2.5"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mu = text.lines().find_map(|l| l.strip_prefix("mu_res=")).map(num).unwrap();
    assert!((mu - 2.1345894).abs() < 1e-5, "{mu}");
}

#[test]
fn split_check_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", WELL);
    let o = nlsescat(&["split-check", "--config", cfg.to_str().unwrap(), "--mu", "2.1345894", "--cut", "-10"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().nth(1), Some("cut,mu,T2_full_LR,T2_full_RL,T2_L_LR,T2_L_RL,T2_R_LR,T2_R_RL,r1,r2,status"));
    let r = rows(&text);
    assert_eq!(r.len(), 1);
    assert!(num(&r[0][8]) < 1e-6);
}

#[test]
fn wavefunction_current_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", WELL);
    let out = dir.path().join("psi.csv");
    let o = nlsescat(&["wavefunction", "--config", cfg.to_str().unwrap(), "--mu", "2.0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let r = rows(&fs::read_to_string(&out).unwrap());
    assert_eq!(r.len(), 1000);
    let j: Vec<f64> = r.iter().map(|r| num(&r[4])).collect();
    let spread = j.iter().cloned().fold(f64::MIN, f64::max) - j.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1e-8 * j[0].abs(), "{spread}");
}

#[test]
fn linear_oracle_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let well = write(dir.path(), "w.toml", &format!("{WELL}\n[linear_oracle]\nenergies = 40\n"));
    let barrier = write(dir.path(), "b.toml", &format!("{BARRIER}\n[linear_oracle]\nenergies = 20\ne_max = 2.0\n"));
    for (cfg, tol) in [(well, 1e-8), (barrier, 1e-6)] {
        let o = nlsescat(&["linear-oracle", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        for r in rows(&stdout(&o)) {
            assert_eq!(r[4], "ok");
            assert!(num(&r[3]) < tol, "{r:?}");
        }
    }
}

#[test]
fn tabulated_potential_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let table: String = (0..=400)
        .map(|i| {
            let x = -20.0 + 0.1 * i as f64;
            format!("{x} {}\n", (-x * x).exp())
        })
        .collect();
    write(dir.path(), "bump.dat", &table);
    let cfg = write(dir.path(), "t.toml", "[potential]\nkind = \"tabulated\"\npath = \"bump.dat\"\n[params]\nmu = 1.0\n");
    let o = nlsescat(&["sweep", "--config", cfg.to_str().unwrap(), "--mu-range", "0.5,2", "--points", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for r in rows(&stdout(&o)) {
        let t = num(&r[1]);
        assert!(t > 0.0 && t < 1.0);
    }
}

#[test]
fn propagate_writes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", &format!("{BARRIER}\n[propagate]\nsnapshot_every = 500\n"));
    let out = dir.path().join("td.txt");
    let o = nlsescat(&["propagate", "--config", cfg.to_str().unwrap(), "--mu", "0.9", "--g", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let get = |k: &str| text.lines().find_map(|l| l.strip_prefix(k)).map(num).unwrap();
    let (ts, td) = (get("T2_stationary="), get("T2_td="));
    assert!((ts - td).abs() < 0.02 * ts, "{ts} {td}");
    let snaps = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("td_snap_")).count();
    assert!(snaps > 0);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[potential]\nkind = \"rectangular-well\"\ndepth = 1.0\nhalf_width = 1.0\ncolour = 3\n");
    assert_eq!(nlsescat(&["sweep", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let cfg = write(dir.path(), "w.toml", WELL);
    let c = cfg.to_str().unwrap();
    assert_eq!(nlsescat(&["sweep", "--config", c, "--mu-range", "1"]).status.code(), Some(2));
    assert_eq!(nlsescat(&["sweep", "--config", c, "--threads", "0"]).status.code(), Some(2));
    assert_eq!(nlsescat(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(nlsescat(&["sweep", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
}

#[test]
fn compute_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", WELL);
    // Evanescent output channel: mu below g|C|² has no propagating wave.
    let o = nlsescat(&["wavefunction", "--config", cfg.to_str().unwrap(), "--g", "2", "--mu", "1"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
