use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn gwpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwpd")).arg("--quiet").args(args).output().expect("spawn gwpd")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

const HARMONIC: &str = r#"
[setup]
dim = 1
hbar = 1.0

[potential]
kind = "harmonic"
omega = 1.0

[method]
id = "tgwd_variational"

[scheme]
base = "TVT"
dt = 0.01
steps = 200

[initial]
q = 1.0
p = 0.5
re_a = 0.2
im_a = 0.8

[output]
save_every = 4
"#;

const MORSE_SQ: &str = r#"
[setup]
dim = 1
hbar = 0.1

[potential]
kind = "morse"
depth = 1.0
stiffness = 1.0

[method]
id = "tgwd_single_quartic_var"

[scheme]
base = "TVT"
order = 4
dt = 0.01
steps = 2000

[initial]
q = 0.3
p = 0.0
re_a = 0.1
im_a = 1.697

[checks]
max_e_eff_drift = 1e-8
"#;

#[test]
fn harmonic_run_writes_trajectory_and_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "h.toml", HARMONIC);
    let out = tmp.path().join("out");
    let o = gwpd(&["run", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (header, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(
        header,
        ["t", "q_0", "p_0", "ReA_0_0", "ImA_0_0", "Re_gamma", "Im_gamma", "norm", "E", "E_eff"]
    );
    assert_eq!(rows.len(), 200 / 4 + 1);
    assert_eq!(rows[0][0], 0.0);
    assert!((rows[1][0] - 0.04).abs() < 1e-12);
    for r in &rows {
        assert!((r[7] - 1.0).abs() < 1e-12);
    }

    let sm = summary(&out);
    assert_eq!(sm["method"], "tgwd_variational");
    assert_eq!(sm["parametrization"], "heller");
    assert_eq!(sm["steps"], 200);
    assert!(sm["norm_drift"].as_f64().unwrap() < 1e-12);
    assert!(sm["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert!(sm.get("reversibility_residual").is_none());
}

#[test]
fn runs_are_bit_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "m.toml", MORSE_SQ);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(gwpd(&["run", "--config", s(&cfg), "--output", s(&a)]).status.success());
    assert!(gwpd(&["run", "--config", s(&cfg), "--output", s(&b)]).status.success());
    assert_eq!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
}

#[test]
fn single_quartic_morse_conserves_effective_energy() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "m.toml", MORSE_SQ);
    let out = tmp.path().join("out");
    let o = gwpd(&["run", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sm = summary(&out);
    assert!(sm["E_eff_drift"].as_f64().unwrap() < 1e-8);
    // E itself is not conserved by this method.
    assert!(sm["E_drift"].as_f64().unwrap() > 1e-4);
    assert_eq!(sm["checks"]["passed"], true);
}

#[test]
fn failed_check_is_reported_without_error_exit() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "m.toml", &MORSE_SQ.replace("max_e_eff_drift = 1e-8", "max_e_drift = 1e-8"));
    let out = tmp.path().join("out");
    let o = gwpd(&["run", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success());
    assert_eq!(summary(&out)["checks"]["passed"], false);
}

#[test]
fn reverse_returns_to_initial_state() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "m.toml", MORSE_SQ);
    let out = tmp.path().join("out");
    let o = gwpd(&["reverse", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = summary(&out)["reversibility_residual"].as_f64().unwrap();
    assert!(r < 1e-10, "residual {r}");
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn frozen_method_rejects_real_width() {
    let tmp = TempDir::new().unwrap();
    let text = MORSE_SQ.replace("tgwd_single_quartic_var", "fgwd_variational");
    let cfg = write_config(&tmp, "f.toml", &text);
    let o = gwpd(&["run", "--config", s(&cfg), "--output", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("imaginary"), "{err}");
}

#[test]
fn frozen_method_runs_with_imaginary_width() {
    let tmp = TempDir::new().unwrap();
    let text = MORSE_SQ.replace("tgwd_single_quartic_var", "fgwd_variational").replace("re_a = 0.1\n", "");
    let cfg = write_config(&tmp, "f.toml", &text);
    let out = tmp.path().join("out");
    let o = gwpd(&["run", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("trajectory.csv"));
    let im = header.iter().position(|h| h == "ImA_0_0").unwrap();
    assert!(rows.iter().all(|r| r[im] == rows[0][im]));
}

#[test]
fn config_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        HARMONIC.replace("dt = 0.01", "dt = 0.01\nbogus = 1"),
        HARMONIC.replace("tgwd_variational", "no_such_method"),
        HARMONIC.replace("base = \"TVT\"", "base = \"TVT\"\norder = 3"),
        HARMONIC.replace("omega = 1.0", ""),
        HARMONIC.replace("q = 1.0", "q = [1.0, 2.0]"),
    ];
    for (k, text) in cases.iter().enumerate() {
        let cfg = write_config(&tmp, &format!("bad{k}.toml"), text);
        let o = gwpd(&["run", "--config", s(&cfg), "--output", s(&out)]);
        assert_eq!(o.status.code(), Some(2), "case {k}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = gwpd(&["run", "--config", s(&tmp.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_three() {
    // An inverted quartic throws the packet out; the state blows up.
    let text = r#"
[setup]
dim = 1

[potential]
kind = "polynomial"
terms = [{ c = -1.0, powers = [4] }]

[method]
id = "tgwd_local_harmonic"

[scheme]
base = "TVT"
dt = 0.05
steps = 100000

[initial]
q = 2.0
p = 0.0
re_a = 0.0
im_a = 0.5
"#;
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "inv.toml", text);
    let o = gwpd(&["run", "--config", s(&cfg), "--output", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn thread_count_must_be_positive() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "h.toml", HARMONIC);
    let o = Command::new(env!("CARGO_BIN_EXE_gwpd"))
        .env("GWPD_THREADS", "zero")
        .args(["run", "--config", s(&cfg), "--output", s(&tmp.path().join("out"))])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn converge_slope(base: &str, order: u32, dt_list: &str) -> f64 {
    let text = HARMONIC
        .replace("base = \"TVT\"", &format!("base = \"{base}\"\norder = {order}"))
        .replace("steps = 200", "steps = 170");
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &text);
    let out = tmp.path().join("out");
    let o = gwpd(&["converge", "--config", s(&cfg), "--output", s(&out), "--dt-list", dt_list]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("convergence.csv"));
    assert_eq!(header, ["dt", "error", "slope"]);
    assert_eq!(rows.len(), dt_list.split(',').count());
    rows[0][2]
}

#[test]
fn converge_recovers_orders_on_harmonic() {
    let tv = converge_slope("TV", 1, "0.01,0.005,0.0025,0.00125");
    let tvt = converge_slope("TVT", 2, "0.01,0.005,0.0025,0.00125");
    let tj4 = converge_slope("TVT", 4, "0.1,0.05,0.025,0.0125");
    assert!((tv - 1.0).abs() < 0.1, "TV slope {tv}");
    assert!((tvt - 2.0).abs() < 0.1, "TVT slope {tvt}");
    assert!((tj4 - 4.0).abs() < 0.2, "TJ4 slope {tj4}");
}

#[test]
fn converge_rejects_non_dividing_step() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "h.toml", HARMONIC);
    let o = gwpd(&["converge", "--config", s(&cfg), "--output", s(&tmp.path().join("o")), "--dt-list", "0.03,0.01"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_grid_on_harmonic() {
    let text = HARMONIC.replace("save_every = 4", "save_every = 20") + "\n[grid]\npoints = [256]\n";
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "g.toml", &text);
    let out = tmp.path().join("out");
    let o = gwpd(&["compare-grid", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("fidelity.csv"));
    assert_eq!(header, ["t", "fidelity", "grid_norm"]);
    assert_eq!(rows.len(), 11);
    assert!((rows[0][1] - 1.0).abs() < 1e-10);
    for r in &rows {
        assert!((r[1] - 1.0).abs() < 1e-6, "fidelity {} at t = {}", r[1], r[0]);
        assert!((r[2] - 1.0).abs() < 1e-10);
    }
}

#[test]
fn hagedorn_parametrization_matches_heller() {
    let tmp = TempDir::new().unwrap();
    let heller = write_config(&tmp, "m.toml", MORSE_SQ);
    let hag = write_config(
        &tmp,
        "mh.toml",
        &MORSE_SQ.replace("steps = 2000", "steps = 2000\nparametrization = \"hagedorn\""),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(gwpd(&["run", "--config", s(&heller), "--output", s(&a)]).status.success());
    let o = gwpd(&["run", "--config", s(&hag), "--output", s(&b)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (ha, ra) = read_csv(&a.join("trajectory.csv"));
    let (hb, rb) = read_csv(&b.join("trajectory.csv"));
    assert!(hb.contains(&"ReQ_0_0".to_string()) && hb.contains(&"winding".to_string()));
    assert_eq!(summary(&b)["parametrization"], "hagedorn");
    let col = |h: &[String], name: &str| h.iter().position(|x| x == name).unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        for name in ["q_0", "p_0", "norm", "E_eff"] {
            assert!((x[col(&ha, name)] - y[col(&hb, name)]).abs() < 1e-9, "{name}");
        }
    }
}

#[test]
fn list_methods_names_all_ids() {
    let o = gwpd(&["list-methods"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let ids = [
        "tgwd_variational",
        "tgwd_local_harmonic",
        "tgwd_single_hessian",
        "tgwd_global_harmonic",
        "tgwd_local_cubic_var",
        "tgwd_single_quartic_var",
        "fgwd_variational",
        "fgwd_classical_var",
        "fgwd_local_harmonic",
        "fgwd_global_harmonic",
    ];
    for id in ids {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(id)), "missing {id}");
    }
}

#[test]
fn emit_coeffs_from_trajectory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "h.toml", HARMONIC);
    let out = tmp.path().join("out");
    assert!(gwpd(&["run", "--config", s(&cfg), "--output", s(&out)]).status.success());
    let traj = out.join("trajectory.csv");

    let o = gwpd(&["list-methods", "--emit-coeffs", "--config", s(&cfg), "--input", s(&traj)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "V0", "V1_0", "V2_0_0"]);
    let rows: Vec<Vec<f64>> = r.records().map(|x| x.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 51);
    // For V = x²/2 the variational V1 is q and V2 is 1.
    let (_, traj_rows) = read_csv(&traj);
    for (c, t) in rows.iter().zip(&traj_rows) {
        assert!((c[3] - 1.0).abs() < 1e-12);
        assert!((c[2] - t[1]).abs() < 1e-12);
    }

    let dir = tmp.path().join("coeffs");
    let o = gwpd(&["list-methods", "--emit-coeffs", "--config", s(&cfg), "--input", s(&traj), "--output", s(&dir)]);
    assert!(o.status.success());
    assert_eq!(read_csv(&dir.join("coeffs.csv")).1.len(), 51);

    let o = gwpd(&["list-methods", "--emit-coeffs", "--input", s(&traj)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse_and_run_briefly() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = TempDir::new().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        // Shorten the run; keep everything else as shipped.
        let text = fs::read_to_string(&path).unwrap();
        let text: String = text
            .lines()
            .map(|l| if l.trim_start().starts_with("steps =") { "steps = 20".to_string() } else { l.to_string() })
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = tmp.path().join(path.file_name().unwrap());
        fs::write(&cfg, text).unwrap();
        // Table files resolve next to the config.
        let _ = fs::copy(root.join("morse_table.dat"), tmp.path().join("morse_table.dat"));
        let out = tmp.path().join(path.file_stem().unwrap());
        let o = gwpd(&["run", "--config", s(&cfg), "--output", s(&out)]);
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
        seen += 1;
    }
    assert!(seen >= 5);
}
