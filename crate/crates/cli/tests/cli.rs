use std::path::Path;
use std::process::{Command, Output};

const TWO_REGIME: &str = r#"{"p":2,"M":2,"alpha":[0.5,0.5],"phi":[[0.4,0.6],[0.7,0.3]],
"Q":[[[null,0.5],[0.3,null]],[[null,3.0],[2.0,null]]]}"#;
const ONE_REGIME: &str = r#"{"p":2,"M":1,"alpha":[0.5,0.5],"phi":[[1.0],[1.0]],
"Q":[[[null,1.2],[0.7,null]]]}"#;

fn rscmjp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rscmjp")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("two.json"), TWO_REGIME).unwrap();
    std::fs::write(dir.path().join("one.json"), ONE_REGIME).unwrap();
    dir
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn simulate_single_path() {
    let dir = setup();
    let d = dir.path();
    ok(&rscmjp(&["simulate", "--model", "two.json", "--n-paths", "1", "--out", "s"], d));
    assert_eq!(String::from_utf8(read(d.join("s/paths.jsonl"))).unwrap().lines().count(), 1);
    assert_eq!(String::from_utf8(read(d.join("s/stats.csv"))).unwrap().lines().count(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(&rscmjp(&["simulate", "--model", "two.json", "--n-paths", "150", "--seed", "7", "--out", out], d));
        ok(&rscmjp(&["estimate", "--stats", &format!("{out}/stats.csv"), "--regimes", "2", "--out", out], d));
    }
    for f in ["paths.jsonl", "stats.csv", "fit.json", "theta_hat.json", "trace.csv"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f} differs");
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = setup();
    let d = dir.path();
    let base = ["reproduce", "--model", "two.json", "--replicates", "5", "--n-paths", "100"];
    ok(&rscmjp(&[&base[..], &["--threads", "1", "--out", "t1"]].concat(), d));
    ok(&rscmjp(&[&base[..], &["--out", "t2"]].concat(), d));
    for f in ["mle_report.csv", "m_estimator_report.csv", "properties.json"] {
        assert_eq!(read(d.join("t1").join(f)), read(d.join("t2").join(f)), "{f} differs");
    }
}

#[test]
fn single_regime_estimate_is_closed_form() {
    let dir = setup();
    let d = dir.path();
    ok(&rscmjp(&["simulate", "--model", "one.json", "--n-paths", "200", "--out", "s"], d));
    ok(&rscmjp(&["estimate", "--stats", "s/stats.csv", "--regimes", "1", "--out", "s"], d));
    let fit: serde_json::Value = serde_json::from_slice(&read(d.join("s/fit.json"))).unwrap();
    assert_eq!(fit["iterations"], 1);
    assert_eq!(fit["converged"], true);

    let stats = rscmjp::io::read_stats_csv(std::fs::File::open(d.join("s/stats.csv")).unwrap()).unwrap();
    let theta = rscmjp::io::read_params(d.join("s/theta_hat.json")).unwrap();
    for x in 0..2 {
        let y = 1 - x;
        let n: f64 = stats.iter().map(|s| s.n(x, y)).sum();
        let t: f64 = stats.iter().map(|s| s.t(x)).sum();
        let q = theta.q(x, y, 0);
        assert!((q - n / t).abs() <= 1e-12 * q, "q_{x}{y} = {q}, closed form {}", n / t);
    }
}

#[test]
fn trace_has_one_row_per_iteration_plus_start() {
    let dir = setup();
    let d = dir.path();
    ok(&rscmjp(&["simulate", "--model", "two.json", "--n-paths", "200", "--out", "s"], d));
    ok(&rscmjp(&["estimate", "--stats", "s/stats.csv", "--regimes", "2", "--out", "s"], d));
    let fit: serde_json::Value = serde_json::from_slice(&read(d.join("s/fit.json"))).unwrap();
    let iters = fit["iterations"].as_u64().unwrap() as usize;
    let rows = String::from_utf8(read(d.join("s/trace.csv"))).unwrap().lines().count() - 1;
    assert_eq!(rows, iters + 1);
}

#[test]
fn em_and_em_gradient_agree() {
    let dir = setup();
    let d = dir.path();
    ok(&rscmjp(&["simulate", "--model", "two.json", "--n-paths", "400", "--seed", "3", "--out", "s"], d));
    for (m, out) in [("em", "em"), ("em-gradient", "emg")] {
        ok(&rscmjp(
            &["estimate", "--stats", "s/stats.csv", "--model", "two.json", "--method", m, "--max-iter", "2000", "--out", out],
            d,
        ));
    }
    let a = rscmjp::io::read_params(d.join("em/theta_hat.json")).unwrap();
    let b = rscmjp::io::read_params(d.join("emg/theta_hat.json")).unwrap();
    let b = rscmjp::estimators::align_regimes(&b, &a);
    let (va, vb) = (rscmjp::pack(&a), rscmjp::pack(&b));
    let diff = va.values().iter().zip(vb.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-5, "max difference {diff}");
}

#[test]
fn invert_info_writes_matrices() {
    let dir = setup();
    let d = dir.path();
    ok(&rscmjp(&["simulate", "--model", "two.json", "--n-paths", "300", "--out", "s"], d));
    let out = rscmjp(&["invert-info", "--stats", "s/stats.csv", "--model", "two.json", "--out", "i"], d);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("converged"));
    let (labels, psi) = rscmjp::io::read_matrix_csv(std::fs::File::open(d.join("i/psi.csv")).unwrap()).unwrap();
    let (_, jy) = rscmjp::io::read_matrix_csv(std::fs::File::open(d.join("i/jy.csv")).unwrap()).unwrap();
    assert_eq!(labels.len(), 6);
    let resid = (&jy * &psi - nalgebra::DMatrix::<f64>::identity(6, 6)).amax();
    assert!(resid < 1e-6, "|Jy Psi - I| = {resid}");
}

#[test]
fn reproduce_smoke() {
    let dir = setup();
    let d = dir.path();
    let out = rscmjp(&["reproduce", "--model", "two.json", "--replicates", "2", "--n-paths", "50", "--out", "r"], d);
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 1, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for f in ["mle_report.csv", "mle_report.txt", "m_estimator_report.csv", "m_estimator_report.txt", "properties.json"] {
        assert!(d.join("r").join(f).exists(), "{f} missing");
    }
    let props: serde_json::Value = serde_json::from_slice(&read(d.join("r/properties.json"))).unwrap();
    assert_eq!(props["all_required_passed"].as_bool().unwrap(), code == 0);
    let csv = String::from_utf8(read(d.join("r/mle_report.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn config_file_supplies_command_and_paths() {
    let dir = setup();
    let d = dir.path();
    std::fs::create_dir(d.join("cfg")).unwrap();
    std::fs::write(
        d.join("cfg/run.json"),
        r#"{"command":"simulate","model":"../two.json","n_paths":4,"out":"sim"}"#,
    )
    .unwrap();
    ok(&rscmjp(&["--config", "cfg/run.json", "--n-paths", "3"], d));
    assert_eq!(String::from_utf8(read(d.join("cfg/sim/paths.jsonl"))).unwrap().lines().count(), 3);
}

#[test]
fn kstest_reads_values() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("v.txt"), "0.1 -0.3 1.2\n0.5,-1.1\n0.7\n").unwrap();
    let out = rscmjp(&["kstest", "--input", "v.txt"], d);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("n = 6, D = "));
}

#[test]
fn bad_input_is_reported() {
    let dir = setup();
    let d = dir.path();
    let out = rscmjp(&["estimate", "--stats", "missing.csv", "--regimes", "2"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    let out = rscmjp(&["simulate"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}
