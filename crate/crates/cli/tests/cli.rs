use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CUBE: &str = r#"
[mesh]
cells = [2, 2, 2]

[[dirichlet]]
face = "z_min"
component = 2

[[dirichlet]]
face = "x_min"
component = 0

[[dirichlet]]
face = "y_min"
component = 1

[[dirichlet]]
face = "z_max"
component = 2
value = -0.01
"#;

fn run(cmd: &str, config: &str, dir: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{cmd}.toml"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("out_{cmd}_{}", extra.join("_")));
    let o = Command::new(env!("CARGO_BIN_EXE_hexfem"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .env_remove("HEXFEM_THREADS")
        .output()
        .unwrap();
    (o, out)
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(ext))
        .collect();
    v.sort();
    v
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records()
        .map(|rec| rec.unwrap()[idx].parse().unwrap())
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn cube_smoke_writes_one_vtk_and_one_csv() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run("solve", CUBE, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(files_with_ext(&out, ".vtk"), ["solution_0001.vtk"]);
    assert_eq!(files_with_ext(&out, ".csv"), ["force_displacement.csv"]);
    // uniaxial stress: σ_zz = E ε, reaction = σ_zz × area
    let szz = column(&out.join("force_displacement.csv"), "sigma_zz");
    let reaction = column(&out.join("force_displacement.csv"), "reaction");
    assert!((szz[0] + 700.0).abs() < 1e-8);
    assert!((reaction[0] + 700.0).abs() < 1e-8);
}

#[test]
fn misspelled_key_is_a_config_error_naming_it() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{CUBE}\n[solver]\nnewton_rel_tolerance = 1e-9\n");
    let (o, out) = run("solve", &text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("newton_rel_tolerance"),
        "{}",
        stderr(&o)
    );
    assert!(
        !out.exists(),
        "nothing may run before the config is accepted"
    );
}

#[test]
fn plasticity_curve_has_one_row_per_step() {
    let tmp = TempDir::new().unwrap();
    let text = CUBE
        .replace("cells = [2, 2, 2]", "cells = [1, 1, 1]")
        .replace("value = -0.01", "value = 0.01")
        + "\n[material]\nkind = \"j2_plastic\"\n\n[schedule]\nsteps = 6\nunload_steps = 4\n";
    let (o, out) = run("solve", &text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let szz = column(&out.join("force_displacement.csv"), "sigma_zz");
    assert_eq!(szz.len(), 10);
    // perfectly plastic: the average stress never exceeds the yield strength
    assert!(szz.iter().all(|s| s.abs() <= 250.0 + 1e-9));
    assert!((szz[5] - 250.0).abs() < 1e-9);
}

#[test]
fn convergence_csv_is_opt_in() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{CUBE}\n[output]\nconvergence_csv = true\n");
    let (o, out) = run("solve", &text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&out.join("convergence.csv"));
    // linear problem: initial residual plus one Newton update
    assert_eq!(rows.len(), 2);
}

#[test]
fn manifest_lists_every_file_with_its_hash() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run("solve", CUBE, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let listed: BTreeSet<String> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap().to_string())
        .collect();
    let on_disk: BTreeSet<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    assert_eq!(listed, on_disk);
    let resolved = std::fs::read(out.join("resolved_config.toml")).unwrap();
    use sha2::Digest;
    let h = hex::encode(sha2::Sha256::digest(&resolved));
    assert_eq!(m["config_sha256"].as_str().unwrap(), h);
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn resolved_config_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run("solve", CUBE, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    let (o2, out2) = run("solve", &resolved, tmp.path(), &["--seed", "0"]);
    assert_eq!(o2.status.code(), Some(0), "{}", stderr(&o2));
    for f in [
        "force_displacement.csv",
        "resolved_config.toml",
        "solution_0001.vtk",
    ] {
        assert_eq!(
            std::fs::read(out.join(f)).unwrap(),
            std::fs::read(out2.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = TempDir::new().unwrap();
    let text = "[topopt]\ncells = [6, 3, 1]\nsteps = 4\n";
    let (a, out_a) = run("topopt", text, tmp.path(), &["--threads", "1"]);
    let (b, out_b) = run("topopt", text, tmp.path(), &["--threads", "3"]);
    assert_eq!((a.status.code(), b.status.code()), (Some(0), Some(0)));
    for f in ["history.csv", "design_final.vtk"] {
        assert_eq!(
            std::fs::read(out_a.join(f)).unwrap(),
            std::fs::read(out_b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn topopt_smoke_keeps_volume_bound() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run("topopt", "[topopt]\nsteps = 5\n", tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let vol = column(&out.join("history.csv"), "volume");
    assert_eq!(vol.len(), 5);
    assert!(vol.iter().all(|v| *v <= 0.5 + 1e-6 && *v >= 1e-3));
}

#[test]
fn taylor_on_poisson_demo_passes() {
    let tmp = TempDir::new().unwrap();
    let text = "[taylor]\nproblem = \"poisson\"\ncells = [6, 6, 3]\nobservations = 60\n";
    let (o, out) = run("taylor-test", text, tmp.path(), &["--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let z = column(&out.join("taylor.csv"), "fitted_zeroth");
    let f = column(&out.join("taylor.csv"), "fitted_first");
    assert!((z[0] - 1.0).abs() < 0.1 && (f[0] - 2.0).abs() < 0.1);
}

#[test]
fn taylor_on_compliance_passes() {
    let tmp = TempDir::new().unwrap();
    let text = "[taylor]\nproblem = \"compliance\"\ncells = [4, 2, 1]\nh = [1e-1, 5e-2, 2.5e-2, 1.25e-2]\n";
    let (o, _) = run("taylor-test", text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn taylor_below_roundoff_fails_with_exit_one() {
    // at h ~ 1e-9 the first-order remainder is pure roundoff
    let tmp = TempDir::new().unwrap();
    let text = "[taylor]\ncells = [3, 3, 1]\nobservations = 10\nh = [1e-8, 1e-9, 1e-10]\n";
    let (o, out) = run("taylor-test", text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(out.join("taylor.csv").exists());
}

#[test]
fn infer_with_zero_observations_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let (o, _) = run("infer", "[inference]\nobservations = 0\n", tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("observations"));
}

#[test]
fn infer_small_run_writes_history() {
    let tmp = TempDir::new().unwrap();
    let text = "[mesh]\ncells = [6, 6, 2]\n\n[inference]\nobservations = 40\nmax_iters = 15\n";
    let (o, out) = run("infer", text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = column(&out.join("history.csv"), "objective");
    assert!(j.len() > 1 && j.last().unwrap() < &j[0]);
    assert_eq!(csv_rows(&out.join("observations.csv")).len(), 40);
}

#[test]
fn newton_failure_exits_with_solver_code() {
    let tmp = TempDir::new().unwrap();
    let text = CUBE.replace("value = -0.01", "value = 0.2")
        + "\n[material]\nkind = \"neo_hookean\"\n\n[solver]\nnewton_max_iters = 1\n";
    let (o, out) = run("solve", &text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let m = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(m.contains("\"failed\""));
}

#[test]
fn missing_files_are_io_errors() {
    let o = Command::new(env!("CARGO_BIN_EXE_hexfem"))
        .args(["solve", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));

    let tmp = TempDir::new().unwrap();
    let text = CUBE.replace("cells = [2, 2, 2]", "file = \"missing.msh\"");
    let (o, _) = run("solve", &text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn solves_imported_gmsh_mesh() {
    let tmp = TempDir::new().unwrap();
    let msh = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n8\n\
1 0 0 0\n2 2 0 0\n3 2 1 0\n4 0 1 0\n5 0 0 1\n6 2 0 1\n7 2 1 1\n8 0 1 1\n$EndNodes\n\
$Elements\n2\n1 3 2 1 1 1 2 3 4\n2 5 2 1 1 1 2 3 4 5 6 7 8\n$EndElements\n";
    std::fs::write(tmp.path().join("bar.msh"), msh).unwrap();
    let text = CUBE.replace("cells = [2, 2, 2]", "file = \"bar.msh\"");
    let (o, out) = run("solve", &text, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // 2 × 1 cross-section under σ_zz = -700
    let reaction = column(&out.join("force_displacement.csv"), "reaction");
    assert!((reaction[0] + 1400.0).abs() < 1e-8, "{}", reaction[0]);
}

#[test]
fn threads_env_var_is_honored() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, CUBE).unwrap();
    let out = tmp.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_hexfem"))
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("HEXFEM_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["threads"], 2);
}
