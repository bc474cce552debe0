//! Runs the built binary and compares its files against direct library calls.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rigidlab::heatflow::{default_dt, smooth};
use rigidlab::killing::korn_nullspace;
use rigidlab::piola::{degree, piola_residual};
use rigidlab::rigidity::{nearest_isometry, scaling_study};
use rigidlab_cli::family::build_family;
use rigidlab_cli::ExperimentConfig;
use tempfile::TempDir;

struct Run {
    code: i32,
    stderr: String,
}

fn rigidlab(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_rigidlab")).args(args).output().unwrap();
    Run { code: out.status.code().unwrap_or(-1), stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let r = rigidlab(&args);
    assert_eq!(r.code, 0, "{cmd} failed: {}", r.stderr);
}

/// Rows of a CSV file as header-keyed string maps.
fn read_csv(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let bytes = fs::read(path).unwrap();
    assert!(bytes.windows(2).any(|w| w == b"\r\n"), "CSV lines end in CRLF");
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    rdr.records()
        .map(|r| header.iter().cloned().zip(r.unwrap().iter().map(String::from)).collect())
        .collect()
}

fn f(row: &std::collections::HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

const BATCH: &str = r#"
manifold = "sphere"
level = 2
seed = 21
[family]
kind = "exp_field"
count = 5
epsilons = [0.05, 0.1]
base = "random"
"#;

#[test]
fn torus_doubling_energy_is_four_pi_squared() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "t.toml", "manifold = \"flat_torus\"\n[family]\nkind = \"torus_doubling\"\n");
    run_ok("energy", &cfg, &dir.path().join("out"), &[]);
    let rows = read_csv(&dir.path().join("out/energy.csv"));
    assert_eq!(rows.len(), 1);
    let e2 = f(&rows[0], "energy_integral");
    assert!((e2 / (4.0 * PI * PI) - 1.0).abs() <= 0.01, "{e2}");
    assert!((f(&rows[0], "degree") - 2.0).abs() <= 0.04);
}

#[test]
fn identity_energy_is_at_the_quadrature_floor() {
    let dir = TempDir::new().unwrap();
    for (name, text) in [("s.toml", "manifold = \"sphere\"\n"), ("t.toml", "manifold = \"flat_torus\"\ngrid = 16\n")] {
        let cfg = write_config(dir.path(), name, text);
        let out = dir.path().join(name);
        run_ok("energy", &cfg, &out.with_extension("out"), &[]);
        let rows = read_csv(&out.with_extension("out").join("energy.csv"));
        assert!(f(&rows[0], "energy_e") < 1e-12, "{name}: {}", rows[0]["energy_e"]);
        assert!((f(&rows[0], "degree") - 1.0).abs() <= 0.02);
    }
}

#[test]
fn energy_matches_the_library_and_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), "b.toml", BATCH);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_ok("energy", &cfg_path, &a, &[]);
    run_ok("energy", &cfg_path, &b, &["--threads", "1"]);
    run_ok("energy", &cfg_path, &c, &["--seed", "22"]);
    let bytes = fs::read(a.join("energy.csv")).unwrap();
    assert_eq!(bytes, fs::read(b.join("energy.csv")).unwrap());
    assert_ne!(bytes, fs::read(c.join("energy.csv")).unwrap());

    let cfg = ExperimentConfig::from_toml(BATCH).unwrap();
    let family = build_family(&cfg).unwrap();
    let rows = read_csv(&a.join("energy.csv"));
    assert_eq!(rows.len(), 10);
    let xi = family.test_field.sample(&family.mesh);
    for (m, row) in family.members.iter().zip(&rows) {
        let e = m.map.energy(cfg.p).unwrap();
        assert!(close(f(row, "energy_integral"), e.integral));
        assert!(close(f(row, "energy_e"), e.e));
        assert!(close(f(row, "degree"), degree(&m.map).unwrap()));
        assert!(close(f(row, "piola_residual"), piola_residual(&m.map, &xi).unwrap()));
        assert!(close(f(row, "epsilon"), m.epsilon.unwrap()));
    }
    let leftovers: Vec<_> = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.')).collect();
    assert!(leftovers.is_empty());
}

#[test]
fn recover_and_scaling_match_the_library() {
    let text = r#"
manifold = "sphere"
level = 1
seed = 3
[family]
kind = "exp_field"
count = 1
epsilons = [0.01, 0.04]
base = "random"
"#;
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), "r.toml", text);
    let out = dir.path().join("out");
    run_ok("recover", &cfg_path, &out, &[]);
    run_ok("scaling", &cfg_path, &out, &[]);

    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let family = build_family(&cfg).unwrap();
    let pcfg = cfg.pipeline_config();
    let rows = read_csv(&out.join("recover.csv"));
    for (m, row) in family.members.iter().zip(&rows) {
        let report = nearest_isometry(&m.map, &pcfg).unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("recover_{:03}.json", m.index))).unwrap()).unwrap();
        assert!(close(json["distance"].as_f64().unwrap(), report.distance));
        assert!(close(f(row, "distance"), report.distance));
        assert!(close(f(row, "energy_e"), report.e));
        assert!(close(f(row, "base_group_distance"), report.phi.group_distance(&m.base)));
        assert!(out.join(format!("deficit_{:03}.svg", m.index)).exists());
    }

    let study = scaling_study(&family.mesh, &family.fields[0], &family.bases[0], &cfg.family.epsilon_values(), &pcfg).unwrap();
    let rows = read_csv(&out.join("scaling.csv"));
    assert_eq!(rows.len(), study.rows.len());
    for (r, row) in study.rows.iter().zip(&rows) {
        assert!(close(f(row, "dist_w1p"), r.dist_w1p));
        assert!(close(f(row, "ratio"), r.ratio));
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("scaling.json")).unwrap()).unwrap();
    assert!(close(summary["fields"][0]["slope"].as_f64().unwrap(), study.slope));
    let svg = fs::read_to_string(out.join("scaling.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("fitted slope"));
}

#[test]
fn nullspace_and_heatflow_match_the_library() {
    let text = "manifold = \"flat_torus\"\ngrid = 8\n[family]\nkind = \"isometry\"\ncount = 2\n[pipeline]\nt1 = 0.01\n";
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), "n.toml", text);
    let out = dir.path().join("out");
    run_ok("nullspace", &cfg_path, &out, &[]);
    run_ok("heatflow", &cfg_path, &out, &[]);

    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let family = build_family(&cfg).unwrap();
    let spec = korn_nullspace(&family.mesh, cfg.nullspace.count).unwrap();
    let rows = read_csv(&out.join("nullspace_eigenvalues.csv"));
    for (l, row) in spec.eigenvalues.iter().zip(&rows) {
        assert!((f(row, "eigenvalue") - l).abs() <= 1e-12 * (1.0 + l.abs()));
    }
    assert_eq!(read_csv(&out.join("nullspace_basis.csv")).len(), spec.basis.len() * family.mesh.num_vertices());
    assert!(fs::read_to_string(out.join("mesh.off")).unwrap().starts_with("4OFF"));
    assert!(fs::read_to_string(out.join("mesh.obj")).unwrap().contains("\nf "));

    for m in &family.members {
        let (_, report) = smooth(&m.map, cfg.pipeline.t1, default_dt(&family.mesh), cfg.p, cfg.pipeline.lambda).unwrap();
        let rows = read_csv(&out.join(format!("heatflow_{:03}.csv", m.index)));
        assert_eq!(rows.len(), report.history.len());
        for (h, row) in report.history.iter().zip(&rows) {
            assert!(close(f(row, "dirichlet_energy"), h.dirichlet_energy));
            assert!(close(f(row, "w1p_dist_to_initial"), h.w1p_dist_to_initial));
            assert!(f(row, "constraint_residual") < 1e-12);
        }
    }
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cases = [
        "manifold = \"sphere\"\nunknown = 1\n",
        "manifold = \"sphere\"\np = 1.05\n",
        "manifold = \"sphere\"\nlevel = 7\n",
        "manifold = \"sphere\"\n[family]\nkind = \"exp_field\"\nepsilons = [0.9]\n",
        "manifold = \"cube\"\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("{i}.toml"), text);
        let r = rigidlab(&["energy", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(r.code, 2, "{text}: {}", r.stderr);
    }
    let r = rigidlab(&["energy", "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    let ok = write_config(dir.path(), "ok.toml", "manifold = \"sphere\"\nlevel = 1\n");
    let r = rigidlab(&["scaling", "--config", ok.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, 2, "scaling without an exp_field family");
    let r = rigidlab(&["energy", "--config", ok.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(r.code, 2);
    assert!(!out.join("energy.csv").exists());
}

#[test]
fn stage_failures_exit_with_three_and_keep_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "manifold = \"sphere\"\nlevel = 2\n[family]\nkind = \"constant\"\n");
    let out = dir.path().join("out");
    let r = rigidlab(&["recover", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("log_field"));
    let rows = read_csv(&out.join("recover.csv"));
    assert_eq!(rows[0]["failure_stage"], "log_field");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("recover_000.json")).unwrap()).unwrap();
    assert_eq!(report["failure"]["stage"], "log_field");
}
