use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
master_seed = 11

[problem]
d = 1
alpha = 3.0
lambda = -1.0
datum = { kind = "gaussian", amplitude = 1.0, width = 1.0 }

[grid]
n = 128
length = 40.0

[time]
t_end = 0.2
dt = 0.01

[[noise.channels]]
spatial = { kind = "gaussian_decay", re = 0.4, im = 0.6, width = 3.0 }
temporal = { kind = "constant", c0 = 1.0 }
"#;

fn snls(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snls"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn exponents_prints_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "e.toml", "master_seed = 0\n[problem]\nd = 3\nalpha = 3.0\nlambda = -1.0\n");
    let o = snls(&["exponents"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for line in ["strauss = 1", "q_tilde = 8", "h_power = 1"] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["exponents"]["q_tilde"], 8.0);
    assert_eq!(summary["seed"], 0);
}

#[test]
fn invalid_alpha_exits_2_with_field_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &BASE.replace("alpha = 3.0", "alpha = 1.0"));
    let o = snls(&["simulate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("alpha"), "{err}");
}

#[test]
fn unknown_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "typo.toml", &BASE.replace("dt = 0.01", "dt = 0.01\nstrides = 3"));
    let o = snls(&["simulate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("strides"));
    let missing = snls(&["simulate"], &tmp.path().join("nope.toml"), &tmp.path().join("out"));
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn focusing_blow_up_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BASE
        .replace("lambda = -1.0", "lambda = 1.0")
        .replace("amplitude = 1.0", "amplitude = 4.0")
        .replace("dt = 0.01", "dt = 0.01\nblowup_cap = 5.0");
    let cfg = write(tmp.path(), "blow.toml", &text);
    let o = snls(&["simulate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_reproducible_and_stamped() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", BASE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(snls(&["simulate"], &cfg, &a).status.code(), Some(0));
    assert_eq!(snls(&["simulate"], &cfg, &b).status.code(), Some(0));
    for name in ["ledger_mass.csv", "ledger_hamiltonian.csv", "noise_paths.csv", "summary.json", "snapshots/manifest.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let ledger = std::fs::read_to_string(a.join("ledger_mass.csv")).unwrap();
    let first = ledger.lines().next().unwrap();
    assert!(first.starts_with("# snls ") && first.contains("config_hash=") && first.ends_with("seed=11"), "{first}");
    assert_eq!(ledger.lines().nth(1).unwrap(), "t,value,drift_cum,stoch_cum_0,residual");
    assert_eq!(ledger.lines().count(), 2 + 21);

    // the snapshot round-trips through the binary reader
    let f = snls_core::field::io::load_field(&a.join("snapshots/snapshot_00000.bin")).unwrap();
    assert_eq!(f.grid().n(), 128);

    // a different seed changes the path and the stamp
    let c = tmp.path().join("c");
    let o = Command::new(env!("CARGO_BIN_EXE_snls"))
        .args(["simulate", "--seed", "12", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&c)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(a.join("noise_paths.csv")).unwrap(), std::fs::read(c.join("noise_paths.csv")).unwrap());
}

#[test]
fn sweep_rejects_varying_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{BASE}\n[experiment.sweep]\nv1_re = [0.0, 1.0]\npaths = 2\n");
    let cfg = write(tmp.path(), "sweep.toml", &text);
    let o = snls(&["sweep"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("constant spatial"));
}

#[test]
fn transforms_battery_passes_on_gaussian() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BASE.replace("n = 128", "n = 256");
    let cfg = write(tmp.path(), "t.toml", &text);
    let o = snls(&["transforms"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("out/transforms.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 6, "{csv}");
}
