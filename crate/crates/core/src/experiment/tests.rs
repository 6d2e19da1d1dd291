use super::*;
use proptest::prelude::*;

fn small_config(dir: &Path) -> ExperimentConfig {
    let scenario = ScenarioConfig {
        n_tx: 4,
        n_ris: 4,
        ..ScenarioConfig::default()
    };
    ExperimentConfig {
        scenario,
        gammas: vec![1.0],
        n_draws: 2,
        cov_samples: 200,
        n_mc: 100,
        output_dir: dir.to_path_buf(),
        ao: AoOptions {
            max_iters: 4,
            n_cand: 30,
            ..AoOptions::default()
        },
        ..ExperimentConfig::default()
    }
}

fn rec(mode: Mode, sum_se: f64, outage: bool) -> DrawRecord {
    DrawRecord {
        draw: 0,
        mode,
        gamma: 1.0,
        se1: sum_se / 2.0,
        se2: sum_se / 2.0,
        sum_se,
        p1: 0.5,
        p2: 0.25,
        power: 0.75,
        feasible: true,
        outage1: outage,
        outage2: false,
        outage,
        mc_outage: None,
        iterations: 3,
        error: String::new(),
    }
}

#[test]
fn two_sample_cdf() {
    assert_eq!(empirical_cdf(&[2.0, 1.0]), vec![(1.0, 0.5), (2.0, 1.0)]);
    assert_eq!(
        empirical_cdf(&[3.0, 3.0, 1.0, 3.0]),
        vec![(1.0, 0.25), (3.0, 1.0)]
    );
    assert!(empirical_cdf(&[]).is_empty());
}

#[test]
fn single_record_csv_has_header_and_row() {
    let text = String::from_utf8(csv_bytes(&[rec(Mode::Perfect, 2.5, false)]).unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "draw,mode,gamma,se1,se2,sum_se,p1,p2,power,feasible,outage1,outage2,outage,mc_outage,iterations,error"
    );
    assert!(lines[1].starts_with("0,perfect,1.0,1.25,1.25,2.5,"));
}

#[test]
fn summaries_count_outages() {
    let rs = vec![
        rec(Mode::Sweep, 1.0, true),
        rec(Mode::Sweep, 3.0, false),
        rec(Mode::Perfect, 2.0, false),
    ];
    let s = summarize(&rs);
    assert_eq!(s.len(), 2);
    let sweep = s.iter().find(|s| s.mode == Mode::Sweep).unwrap();
    assert_eq!(
        (sweep.draws, sweep.outage, sweep.mean_sum_se),
        (2, 0.5, 2.0)
    );
}

#[test]
fn config_rejects_unknown_keys() {
    assert!(matches!(
        ExperimentConfig::from_toml("n_draws = 3\nbogus = 1\n"),
        Err(Error::Parse { line: 2, .. })
    ));
    assert!(ExperimentConfig::from_toml("[scenario]\nn_tx = 4\nantennas = 2\n").is_err());
    assert!(ExperimentConfig::from_toml("[ao]\nmax_iter = 4\n").is_err());
}

#[test]
fn config_round_trips_and_defaults() {
    let cfg = ExperimentConfig::from_toml("").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    let text =
        "modes = [\"robust\", \"sweep\"]\ngammas = [1.0]\nn_draws = 5\n[robust]\nrho = 0.1\n";
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.modes, vec![Mode::Robust, Mode::Sweep]);
    assert_eq!(cfg.robust.rho, 0.1);
    assert_eq!(
        ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(),
        cfg
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let base = ExperimentConfig::default();
    assert!(ExperimentConfig {
        n_draws: 0,
        ..base.clone()
    }
    .validate()
    .is_err());
    assert!(ExperimentConfig {
        modes: vec![],
        ..base.clone()
    }
    .validate()
    .is_err());
    assert!(ExperimentConfig {
        gammas: vec![-1.0],
        ..base.clone()
    }
    .validate()
    .is_err());
    assert!(ExperimentConfig {
        cov_samples: 0,
        ..base.clone()
    }
    .validate()
    .is_err());
    assert!(ExperimentConfig {
        cov_samples: 0,
        modes: vec![Mode::Perfect],
        ..base
    }
    .validate()
    .is_ok());
}

#[test]
fn unwritable_directory_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let result = ExperimentResult {
        records: vec![rec(Mode::Perfect, 2.0, false)],
        summaries: vec![],
        statistics: None,
    };
    let cfg = ExperimentConfig::default();
    assert!(emit_outputs(&result, &cfg, &blocker.join("out")).is_err());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);
    let empty = ExperimentResult {
        records: vec![],
        summaries: vec![],
        statistics: None,
    };
    assert!(emit_outputs(&empty, &cfg, tmp.path()).is_err());
}

#[test]
fn small_run_is_deterministic_and_consistent() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_config(a.path());
    let ra = run_experiment(&cfg).unwrap();
    let files = emit_outputs(&ra, &cfg, a.path()).unwrap();
    let rb = run_experiment(&cfg).unwrap();
    emit_outputs(&rb, &cfg, b.path()).unwrap();
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(
            std::fs::read(f).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name:?} differs"
        );
    }
    assert_eq!(ra.records.len(), 2 * 3);

    // rows re-parsed from disk reproduce the aggregates
    let parsed = read_draws(&a.path().join(DRAWS_FILE)).unwrap();
    assert_eq!(parsed, ra.records);
    for (x, y) in summarize(&parsed).iter().zip(&ra.summaries) {
        assert_eq!((x.mode, x.draws, x.feasible), (y.mode, y.draws, y.feasible));
        assert!((x.outage - y.outage).abs() <= 1e-9 || (x.outage.is_nan() && y.outage.is_nan()));
    }
    let mut r = csv::Reader::from_path(a.path().join(CDF_FILE)).unwrap();
    let cdf: Vec<CdfPoint> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(cdf, cdf_points(&parsed));

    for r in &parsed {
        if r.failed() {
            continue;
        }
        assert_eq!(r.outage, r.se1 < r.gamma - 1e-9 || r.se2 < r.gamma - 1e-9);
        assert_eq!(r.mc_outage.is_some(), r.mode == Mode::Robust);
    }
    let st = textio::statistics_from_str(
        &std::fs::read_to_string(a.path().join(STATISTICS_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(st.n, 200);
}

#[test]
fn error_free_twin_gives_no_perfect_outage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.scenario.l_dt = cfg.scenario.l_real;
    cfg.modes = vec![Mode::Perfect];
    cfg.n_draws = 4;
    let res = run_experiment(&cfg).unwrap();
    for r in &res.records {
        assert!(r.feasible && !r.outage, "{r:?}");
    }
}

#[test]
fn imported_channels_replace_synthesis() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    let sc = cfg.effective_scenario();
    let (u1, u2) = draw_users(&sc, 0);
    let (dt, real) = generate_scenario(&sc, &u1, &u2, 0).unwrap();
    let path = tmp.path().join("channels.toml");
    std::fs::write(&path, textio::channels_to_string(&[&dt, &real]).unwrap()).unwrap();
    cfg.import_channels = Some(path);
    cfg.modes = vec![Mode::Perfect];
    let imported = run_experiment(&cfg).unwrap();
    cfg.import_channels = None;
    cfg.n_draws = 1;
    let synthesized = run_experiment(&cfg).unwrap();
    assert_eq!(imported.records, synthesized.records);
}

#[test]
fn mostly_failing_runs_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    // the robust design needs a single receive antenna
    cfg.scenario.n_rx = 2;
    cfg.modes = vec![Mode::Robust];
    cfg.statistics_file = None;
    cfg.cov_samples = 0;
    cfg.n_blocks = 0;
    let st_path = tmp.path().join("st.toml");
    std::fs::write(
        &st_path,
        textio::statistics_to_string(&ErrorStatistics::new(4)).unwrap(),
    )
    .unwrap();
    cfg.statistics_file = Some(st_path);
    assert!(matches!(run_experiment(&cfg), Err(Error::Aborted(_))));
}

proptest! {
    #[test]
    fn cdf_is_monotone_and_ends_at_one(values in proptest::collection::vec(-5.0f64..5.0, 1..50)) {
        let cdf = empirical_cdf(&values);
        prop_assert!((cdf.last().unwrap().1 - 1.0).abs() < 1e-15);
        for w in cdf.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
        for &(x, f) in &cdf {
            let below = values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64;
            prop_assert!((below - f).abs() < 1e-12);
        }
    }
}
