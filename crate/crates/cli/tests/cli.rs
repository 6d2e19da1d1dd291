use std::path::Path;
use std::process::Command;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    let text = r#"
gammas = [1.0]
n_draws = 1
cov_samples = 100
n_mc = 50

[scenario]
n_tx = 4
n_ris = 4
dt_error_links = ["h1"]

[ao]
max_iters = 3
n_cand = 20
"#;
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_twinbeam"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--mode",
            "all",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "cdf.csv",
            "draws.csv",
            "manifest.toml",
            "statistics.toml",
            "summary.csv"
        ]
    );
    for n in names {
        assert_eq!(
            std::fs::read(a.join(&n)).unwrap(),
            std::fs::read(b.join(&n)).unwrap(),
            "{n:?} differs"
        );
    }
    let manifest = std::fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 3"));
}

#[test]
fn bad_config_fails_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "n_draws = 2\nwrong_key = 1\n").unwrap();
    let o = run(&["--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn imported_channels_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let sc =
        twinbeam::experiment::ExperimentConfig::from_toml(&std::fs::read_to_string(&cfg).unwrap())
            .unwrap()
            .scenario;
    let (u1, u2) = twinbeam::scenario::draw_users(&sc, 0);
    let (dt, real) = twinbeam::scenario::generate_scenario(&sc, &u1, &u2, 0).unwrap();
    let ch = tmp.path().join("ch.toml");
    std::fs::write(
        &ch,
        twinbeam::textio::channels_to_string(&[&dt, &real]).unwrap(),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "perfect",
        "--import-channels",
        ch.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let draws = twinbeam::experiment::read_draws(&out.join("draws.csv")).unwrap();
    assert_eq!(draws.len(), 1);
}
