use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpt"))
        .args(args)
        .env_remove("QPT_OUT_DIR")
        .output()
        .expect("qpt runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn data_rows(csv: &str) -> usize {
    csv.lines().count() - 1
}

#[test]
fn bands_of_the_golden_approximant() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d");
    let o = qpt(&["bands", "--sampling", "amo", "--lambda", "2", "--freq", "8/13", "--theta", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("bands.csv"));
    assert!(csv.starts_with("j,a_j,b_j,width,center\n"));
    assert_eq!(data_rows(&csv), 13);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1);
    // 17 significant digits
    let field = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    assert_eq!(field.split('e').next().unwrap().replace(['-', '.'], "").len(), 17);
    let m: Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["command"], "bands");
    assert!(m["timings"]["total_seconds"].as_f64().is_some());
}

#[test]
fn liouville_frequency_json() {
    let dir = TempDir::new().unwrap();
    let o = qpt(&["freq", "--liouville", "beta=2,q1=2,depth=3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&o.stdout).trim()).unwrap();
    for key in ["value_num", "value_den", "convergents", "beta_hat"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let conv = v["convergents"].as_array().unwrap();
    assert_eq!(conv.len(), 3);
    assert_eq!(conv[0], serde_json::json!([1, 2]));
    let beta = v["beta_hat"].as_f64().unwrap();
    assert!((beta - 2.0).abs() < 0.2, "beta_hat {beta}");
    assert_eq!(v, serde_json::from_str::<Value>(&read(dir.path().join("freq.json"))).unwrap());
}

#[test]
fn floquet_suite_exits_zero() {
    let dir = TempDir::new().unwrap();
    let o = qpt(&["verify", "floquet", "--q-max", "12", "--trials", "100", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r: Value = serde_json::from_str(&read(dir.path().join("floquet.json"))).unwrap();
    assert_eq!(r["violations"], 0);
    assert!(dir.path().join("floquet.csv").exists());
}

#[test]
fn violations_exit_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[verify.floquet]\ntrials = 5\nq_max = 5\n[verify.floquet_tolerances]\ncorner_phase_error = 1e-3\nkappa_points = 0\n").unwrap();
    let o = qpt(&["verify", "floquet", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&qpt(&["bands", "--freq", "8/13", "--no-such-flag", "--out", d])), 2);
    assert_eq!(code(&qpt(&["bands", "--out", d])), 2);
    assert_eq!(code(&qpt(&["bands", "--freq", "golden", "--out", d])), 2);
    assert_eq!(code(&qpt(&["transport", "--freq", "1/2", "--method", "magic", "--out", d])), 2);
    assert_eq!(code(&qpt(&["verify", "nope", "--out", d])), 2);
    assert_eq!(code(&qpt(&["freq", "--liouville", "beta=0", "--out", d])), 2);
    assert_eq!(code(&qpt(&["no-such-command"])), 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "frq = \"1/2\"\n").unwrap();
    assert_eq!(code(&qpt(&["bands", "--config", cfg.to_str().unwrap(), "--out", d])), 2);
}

#[test]
fn flags_override_config_and_env_sets_output() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "freq = \"3/5\"\ntheta = 0.25\n[sampling]\nkind = \"amo\"\nlambda = 1.0\n").unwrap();
    let env_out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_qpt"))
        .args(["bands", "--config", cfg.to_str().unwrap(), "--lambda", "2"])
        .env("QPT_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let m: Value = serde_json::from_str(&read(env_out.join("manifest.json"))).unwrap();
    assert_eq!(m["config"]["sampling"]["lambda"], 2.0);
    assert_eq!(m["config"]["theta"], 0.25);
    assert_eq!(data_rows(&read(env_out.join("bands.csv"))), 5);

    let flag_out = dir.path().join("from_flag");
    let o = Command::new(env!("CARGO_BIN_EXE_qpt"))
        .args(["bands", "--config", cfg.to_str().unwrap(), "--out", flag_out.to_str().unwrap()])
        .env("QPT_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(flag_out.join("bands.csv").exists());
}

#[test]
fn manifest_reproduces_artifacts() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = ["moments", "--freq", "golden", "--lambda", "1.5", "--theta", "0.3", "-T", "4", "--p", "1,2,3"];
    let mut first: Vec<&str> = args.to_vec();
    first.extend(["--out", a.to_str().unwrap()]);
    assert_eq!(code(&qpt(&first)), 0);
    let manifest = a.join("manifest.json");
    assert_eq!(code(&qpt(&["moments", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()])), 0);
    for f in ["moments.csv", "moments.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(data_rows(&read(a.join("moments.csv"))), 3);
}

#[test]
fn transport_routes_from_the_command_line() {
    let dir = TempDir::new().unwrap();
    let mut results = Vec::new();
    for method in ["time", "resolvent", "floquet"] {
        let out = dir.path().join(method);
        let o = qpt(&[
            "transport", "--freq", "1/2", "--lambda", "0.5", "-T", "10", "--n-max", "3", "--method", method, "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        results.push(read(out.join("transport.csv")));
    }
    // The Floquet route reports cells n (site 2n); compare P at site 2.
    let at = |csv: &str, n: &str| -> f64 {
        csv.lines().find(|l| l.split(',').next() == Some(n)).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    let (t, r, f) = (at(&results[0], "2"), at(&results[1], "2"), at(&results[2], "1"));
    assert!((t - r).abs() < 1e-6 * t, "{t} {r}");
    assert!((t - f).abs() < 1e-3 * t, "{t} {f}");
}

#[test]
fn sweep_theta_grid_for_moments() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("s.toml");
    fs::write(
        &cfg,
        "freq = \"golden\"\n[sampling]\nlambda = 1.5\n[moments]\nt = 2.0\np = [1.0]\n[sweep]\ncommand = \"moments\"\ntheta_grid = 64\n",
    )
    .unwrap();
    let run = |out: &Path, threads: &str| {
        qpt(&["sweep", "--config", cfg.to_str().unwrap(), "--threads", threads, "--out", out.to_str().unwrap()])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run(&a, "0")), 0);
    assert_eq!(code(&run(&b, "1")), 0);
    let agg = read(a.join("aggregate.csv"));
    assert_eq!(data_rows(&agg), 64);
    let header: Vec<&str> = agg.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "min_theta_M_1").expect("min_theta column");
    let m_col = header.iter().position(|h| *h == "M_1").unwrap();
    let rows: Vec<Vec<f64>> = agg.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect()).collect();
    let min = rows.iter().map(|r| r[m_col]).fold(f64::INFINITY, f64::min);
    assert!(rows.iter().all(|r| r[col] == min));
    assert_eq!(data_rows(&read(a.join("index.csv"))), 64);
    for f in ["aggregate.csv", "index.csv", "points/point_0000.csv", "points/point_0063.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn sweep_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, "freq = \"1/2\"\n[sweep]\ncommand = \"bands\"\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&qpt(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);

    // One point asks for a convergent the frequency does not have.
    let cfg = dir.path().join("partial.toml");
    fs::write(&cfg, "freq = \"8/13\"\n[sweep]\ncommand = \"bands\"\ndepth = [3, 4, 40]\n").unwrap();
    let o = qpt(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let index = read(out.join("index.csv"));
    let status: Vec<&str> = index.lines().skip(1).map(|l| l.split(',').nth(6).unwrap()).collect();
    assert_eq!(status, ["ok", "ok", "failed"]);
    assert_eq!(data_rows(&read(out.join("points/point_0001.csv"))), 5);
}
