use std::path::Path;
use std::process::Command;

fn ivpinn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ivpinn"))
}

fn run_config(dir: &Path, name: &str, toml: &str) -> (i32, std::path::PathBuf) {
    let cfg = dir.join(format!("{name}.toml"));
    std::fs::write(&cfg, toml).unwrap();
    let out = dir.join(name);
    let status = ivpinn()
        .args(["run", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])
        .status()
        .unwrap();
    (status.code().unwrap(), out)
}

/// Data rows of a convergence CSV, skipping comment and header lines.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn oracle_interp_writes_four_rows_and_a_rate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_config(
        dir.path(),
        "oracle",
        "mode = \"oracle-interp\"\ncase = \"smooth\"\n[mesh]\ninitial_nx = 4\nrefinements = 3\n",
    );
    assert_eq!(code, 0);
    let csv = out.join("smooth_1_3.csv");
    assert_eq!(rows(&csv).len(), 4);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rate: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("# rate="))
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((rate - 4.0).abs() < 0.4, "{rate}");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["mode"], "oracle-interp");
}

#[test]
fn zero_data_solutions_vanish_on_every_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_config(
        dir.path(),
        "zero",
        "mode = \"zero-data\"\ncase = \"zero-1d\"\nseed = 3\n[mesh]\nnx = [1, 2, 4, 8]\n",
    );
    assert_eq!(code, 0);
    let table = rows(&out.join("zero-1d_1_3.csv"));
    assert_eq!(table.len(), 4);
    for r in &table {
        let norm: f64 = r[3].parse().unwrap();
        assert!(norm <= 1e-5, "{norm}");
    }
    assert!(out.join("zero-1d_1_3_nx8_history.csv").exists());
    assert!(out.join("zero-1d_1_3_nx8.net").exists());
}

#[test]
fn sweep_writes_an_error_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_config(
        dir.path(),
        "sweep",
        "mode = \"hyperparam-sweep\"\ncase = \"smooth\"\n[mesh]\nnx = [2]\n[sweep]\nlayers = [1, 2]\nwidths = [1, 4, 8]\n[training]\nadam_epochs = 100\nmax_iterations = 50\n",
    );
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("smooth-sweep_1_3.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "layers,width_1,width_4,width_8");
    assert_eq!(lines.len(), 3);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
}

#[test]
fn reruns_reproduce_the_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "mode = \"ivpinn\"\ncase = \"corner\"\nseed = 5\n[mesh]\nnx = [1, 2]\n[network]\nhidden = 2\nwidth = 6\n[training]\nadam_epochs = 200\nmax_iterations = 100\n";
    let (a, out_a) = run_config(dir.path(), "a", toml);
    let (b, out_b) = run_config(dir.path(), "b", toml);
    assert_eq!((a, b), (0, 0));
    // Everything but the timing column agrees.
    let strip = |rows: Vec<Vec<String>>| -> Vec<Vec<String>> {
        rows.into_iter()
            .map(|mut r| {
                r.remove(6);
                r
            })
            .collect()
    };
    assert_eq!(strip(rows(&out_a.join("corner_1_3.csv"))), strip(rows(&out_b.join("corner_1_3.csv"))));
    let losses = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p).unwrap().lines().map(|l| l.split(',').nth(1).unwrap().to_string()).collect()
    };
    assert_eq!(losses(&out_a.join("corner_1_3_nx2_history.csv")), losses(&out_b.join("corner_1_3_nx2_history.csv")));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run_config(dir.path(), "bad", "mode = \"ivpinn\"\nk_test = 4\nq = 3\n[mesh]\nnx = [2]\n");
    assert_eq!(code, 2);
    let (code, _) = run_config(dir.path(), "bad2", "mode = \"no-such-mode\"\n");
    assert_eq!(code, 2);
    let missing = ivpinn().args(["run", "/nonexistent/config.toml"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));
}

#[test]
fn failing_rows_give_partial_status() {
    let dir = tempfile::tempdir().unwrap();
    // The second mesh exceeds the dense inf-sup size limit.
    let (code, out) = run_config(dir.path(), "infsup", "mode = \"infsup\"\ncase = \"smooth\"\n[mesh]\nnx = [1, 20]\n");
    assert_eq!(code, 1);
    let text = std::fs::read_to_string(out.join("smooth-infsup_1_3.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("nx = 20"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "mode = \"oracle-interp\"\ncase = \"corner\"\n[mesh]\nnx = [2, 4, 8]\n").unwrap();
    let out = dir.path().join("from-env");
    let status = ivpinn().arg("run").arg(&cfg).env("IVPINN_OUT", &out).status().unwrap();
    assert!(status.success());
    assert!(out.join("corner_1_3.csv").exists());
}

#[test]
fn list_cases_and_self_check() {
    let list = ivpinn().arg("list-cases").output().unwrap();
    assert!(list.status.success());
    let text = String::from_utf8(list.stdout).unwrap();
    for name in ["smooth", "corner", "zero-1d", "zero-2d", "parametric"] {
        assert!(text.contains(name));
    }
    let check = ivpinn().arg("check").output().unwrap();
    assert!(check.status.success(), "{}", String::from_utf8_lossy(&check.stdout));
    assert!(!String::from_utf8(check.stdout).unwrap().contains("FAIL"));
}
