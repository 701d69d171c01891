use std::path::Path;
use std::process::{Command, Output};

use powernorm::matcore::io::{read_sym, write_feat};
use powernorm::matcore::{FeatureBlock, RngStream};

fn powernorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powernorm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn time_reports_counts() {
    let o = powernorm(&["time", "--op", "maxexp-fast", "--d", "16", "--eta", "8,50", "--reps", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[0].join(","), "op,d,param,reps,fwd_mean_s,fwd_std_s,bwd_mean_s,bwd_std_s,mm_forward,mm_backward");
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][2], "50");
    assert_eq!((rows[2][8].as_str(), rows[2][9].as_str()), ("8", "11"));
}

#[test]
fn time_newton_schulz_sixty_products() {
    let o = powernorm(&["time", "--op", "newton-schulz", "--d", "12", "--iters", "20", "--reps", "1"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[1][8], "60");
    assert_eq!(rows[1][9], "");
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["time", "--reps", "0"][..],
        &["time", "--op", "maxexp-fast", "--eta", "2.5"],
        &["time", "--op", "warp-speed"],
        &["kappa", "--n", "0"],
        &["pool", "--input", "x.feat", "--op", "hdp", "--param", "0.3", "--engine", "fast"],
        &["frobnicate"],
    ] {
        assert_eq!(powernorm(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn bounds_default_grid_clean() {
    let o = powernorm(&["bounds"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 101);
    assert!(rows[1..].iter().all(|r| r[6] == "0"));
}

#[test]
fn bounds_wrong_parametrization_exits_one() {
    let o = powernorm(&["bounds", "--t-scale", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation"));
}

#[test]
fn bounds_single_eta_row() {
    let o = powernorm(&["bounds", "--eta", "2"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    let e1: f64 = rows[1][2].parse().unwrap();
    let e2: f64 = rows[1][3].parse().unwrap();
    assert!(e1 <= e2);
}

#[test]
fn kappa_table() {
    let o = powernorm(&["kappa", "--j", "0,1,2", "--n", "1,3"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[0].join(","), "j,n,kappa,variance_ratio");
    assert_eq!(rows[1], ["0", "1", "1", "1"]);
    assert_eq!(rows[3], ["1", "1", "1", "1"]);
    let k: Vec<f64> = rows[1..].iter().filter(|r| r[1] == "3").map(|r| r[2].parse().unwrap()).collect();
    assert!(k.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn pushforward_identity_is_point_mass() {
    let o = powernorm(&["pushforward", "--law", "identity", "--d", "6", "--op", "maxexp", "--param", "4"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 51);
    for r in &rows[1..] {
        let want = if r[2] == "49" { "1" } else { "0" };
        assert_eq!(r[6], want);
    }
}

#[test]
fn pushforward_is_deterministic_and_whitens() {
    let args = ["--seed", "7", "pushforward", "--d", "64", "--param", "5,20,80"];
    let a = stdout(&powernorm(&args));
    assert_eq!(a, stdout(&powernorm(&args)));
    let vars: Vec<f64> = csv_rows(&a)[1..]
        .iter()
        .filter(|r| r[2] == "0")
        .map(|r| r[9].parse().unwrap())
        .collect();
    assert_eq!(vars.len(), 3);
    assert!(vars.windows(2).all(|w| w[1] <= w[0]));
}

fn write_block(dir: &Path, name: &str, b: &FeatureBlock) -> String {
    let p = dir.join(name);
    write_feat(&p, b).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn pool_single_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_block(dir.path(), "a.feat", &FeatureBlock::new(2, 1, vec![1.0, 2.0]).unwrap());
    let out = dir.path().join("m.sym");
    let o = powernorm(&["--out", out.to_str().unwrap(), "pool", "--input", &input]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_sym(&out).unwrap().as_slice(), &[1.0, 2.0, 2.0, 4.0]);
}

#[test]
fn pool_engines_agree_on_diagonal_output() {
    let dir = tempfile::tempdir().unwrap();
    let b = FeatureBlock::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
    let input = write_block(dir.path(), "d.feat", &b);
    let mut got = Vec::new();
    for engine in ["elementwise", "spectral"] {
        let out = dir.path().join(format!("{engine}.sym"));
        let o = powernorm(&[
            "--out", out.to_str().unwrap(), "pool", "--input", &input, "--op", "gamma", "--param", "0.5",
            "--eps", "0", "--engine", engine,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        got.push(read_sym(&out).unwrap());
    }
    assert!(got[0].rel_distance(&got[1]) < 1e-14);
}

#[test]
fn pool_spectral_and_fast_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngStream::new(16);
    let data = (0..16 * 64).map(|_| rng.uniform()).collect();
    let input = write_block(dir.path(), "r.feat", &FeatureBlock::new(16, 64, data).unwrap());
    let mut got = Vec::new();
    for engine in ["spectral", "fast"] {
        let out = dir.path().join(format!("{engine}.sym"));
        let o = powernorm(&[
            "--out", out.to_str().unwrap(), "pool", "--input", &input, "--op", "maxexp", "--param", "50",
            "--eps", "0", "--engine", engine,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        got.push(read_sym(&out).unwrap());
    }
    assert!(got[0].rel_distance(&got[1]) < 1e-9);
}

#[test]
fn pool_with_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_block(dir.path(), "c.feat", &FeatureBlock::new(2, 6, vec![0.5; 12]).unwrap());
    let out = dir.path().join("c.sym");
    let o = powernorm(&[
        "--out", out.to_str().unwrap(), "pool", "--input", &input, "--beta", "0.5", "--pivots", "4",
        "--width", "3", "--height", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_sym(&out).unwrap().dim(), 2 + 8);
    let o = powernorm(&["pool", "--input", &input, "--pivots", "4", "--width", "2", "--height", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pool_missing_file_fails() {
    let o = powernorm(&["pool", "--input", "/nonexistent/in.feat"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_catches_sign_flip() {
    let o = powernorm(&["gradcheck", "--dims", "4", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&stdout(&o))[0].join(","), "op,d,param,seed,max_rel_error,step");
    let o = powernorm(&["gradcheck", "--dims", "4", "--seeds", "1", "--broken-sign"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn csv_uses_lf_endings() {
    let o = powernorm(&["kappa"]);
    assert!(!o.stdout.contains(&b'\r'));
}
