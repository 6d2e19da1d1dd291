//! Batch experiments over user-position draws: run the selected designs on
//! the twin channels, score them on the real channels, and write results.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{build_bs_codebook, build_ris_codebook, sweep, BsCodebook, Codebook};
use crate::error::{invalid, Error, Result};
use crate::optimizer::{
    alternating_optimize, solution_se, AoOptions, DesignSolution, DesignTargets,
};
use crate::robust::{
    learning_run, monte_carlo_outage, robust_optimize, update_covariance, user1_stacked, Block,
    ErrorSampler, ErrorStatistics, RobustOptions, OUTAGE_SLACK,
};
use crate::scenario::{draw_users, generate_scenario, ChannelSet, Provenance, ScenarioConfig};
use crate::textio;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Perfect,
    Robust,
    Sweep,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Perfect, Mode::Robust, Mode::Sweep];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Perfect => "perfect",
            Mode::Robust => "robust",
            Mode::Sweep => "sweep",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Offsets of the draw-index ranges used for covariance estimation and
/// learning, kept clear of the evaluation draws.
const COVARIANCE_DRAWS: u64 = 1 << 40;
const LEARNING_DRAWS: u64 = 2 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// SE targets in bit/s/Hz, applied to both users.
    pub gammas: Vec<f64>,
    pub modes: Vec<Mode>,
    pub n_draws: usize,
    /// Coherence blocks of the learning run that supplies the robust
    /// statistics; 0 uses `cov_samples` offline error draws instead.
    pub n_blocks: usize,
    pub cov_samples: usize,
    /// Monte-Carlo error samples per robust design; 0 disables the estimate.
    pub n_mc: usize,
    /// Master seed; also replaces `scenario.seed`.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Channel file replacing synthesis (a single draw).
    pub import_channels: Option<PathBuf>,
    /// Error statistics to start from instead of estimating them.
    pub statistics_file: Option<PathBuf>,
    pub robust: RobustOptions,
    pub ao: AoOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            gammas: vec![0.5, 1.0, 1.5, 2.0],
            modes: Mode::ALL.to_vec(),
            n_draws: 20,
            n_blocks: 0,
            cov_samples: 10_000,
            n_mc: 2000,
            seed: 1,
            output_dir: PathBuf::from("results"),
            import_channels: None,
            statistics_file: None,
            robust: RobustOptions::default(),
            ao: AoOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        textio::parse(text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return Err(Error::Config("n_draws must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::Config(
                "gammas must be a nonempty list of finite values >= 0".into(),
            ));
        }
        let no_stats =
            self.n_blocks == 0 && self.cov_samples == 0 && self.statistics_file.is_none();
        if self.modes.contains(&Mode::Robust) && no_stats {
            return Err(Error::Config(
                "robust mode needs n_blocks, cov_samples or a statistics file".into(),
            ));
        }
        self.scenario.validate()?;
        self.robust.validate()?;
        self.ao.validate()
    }

    fn effective_scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            seed: self.seed,
            ..self.scenario.clone()
        }
    }
}

/// One design evaluated on the real channels of one draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub draw: u64,
    pub mode: Mode,
    pub gamma: f64,
    pub se1: f64,
    pub se2: f64,
    pub sum_se: f64,
    pub p1: f64,
    pub p2: f64,
    pub power: f64,
    pub feasible: bool,
    pub outage1: bool,
    pub outage2: bool,
    pub outage: bool,
    /// Monte-Carlo outage under the error statistics (robust designs only).
    pub mc_outage: Option<f64>,
    pub iterations: usize,
    /// Non-empty when the design failed; the SE columns are then zero.
    pub error: String,
}

impl DrawRecord {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub gamma: f64,
    pub draws: usize,
    pub failures: usize,
    pub feasible: usize,
    /// Over all non-failed draws.
    pub outage: f64,
    /// Over draws whose design was feasible on the twin.
    pub outage_feasible: f64,
    pub mean_power: f64,
    pub mean_sum_se: f64,
    pub mean_mc_outage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub mode: Mode,
    pub gamma: f64,
    pub sum_se: f64,
    pub cdf: f64,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub records: Vec<DrawRecord>,
    pub summaries: Vec<ModeSummary>,
    pub statistics: Option<ErrorStatistics>,
}

/// Empirical CDF with ties merged: `(value, fraction <= value)`.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (i, x) in v.into_iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    out
}

/// Outage decision on real channels, shared by every mode.
pub fn is_outage(se: f64, gamma: f64) -> bool {
    se < gamma - OUTAGE_SLACK
}

fn record(
    draw: u64,
    mode: Mode,
    tg: &DesignTargets,
    real: &ChannelSet,
    sol: &DesignSolution,
) -> DrawRecord {
    let (se1, se2) = solution_se(real, sol, tg);
    let (p1, p2) = (sol.f1.norm_squared(), sol.f2.norm_squared());
    let (outage1, outage2) = (is_outage(se1, tg.gamma1), is_outage(se2, tg.gamma2));
    DrawRecord {
        draw,
        mode,
        gamma: tg.gamma1,
        se1,
        se2,
        sum_se: se1 + se2,
        p1,
        p2,
        power: p1 + p2,
        feasible: sol.feasible,
        outage1,
        outage2,
        outage: outage1 || outage2,
        mc_outage: None,
        iterations: sol.iterations,
        error: String::new(),
    }
}

fn failure(draw: u64, mode: Mode, gamma: f64, err: &Error) -> DrawRecord {
    DrawRecord {
        draw,
        mode,
        gamma,
        se1: 0.0,
        se2: 0.0,
        sum_se: 0.0,
        p1: 0.0,
        p2: 0.0,
        power: 0.0,
        feasible: false,
        outage1: true,
        outage2: true,
        outage: true,
        mc_outage: None,
        iterations: 0,
        error: err.to_string(),
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    stats: Option<&'a ErrorStatistics>,
    sampler: Option<ErrorSampler>,
    codebooks: Option<(BsCodebook, Codebook)>,
}

impl Context<'_> {
    fn run_draw(&self, draw: u64, dt: &ChannelSet, real: &ChannelSet) -> Vec<DrawRecord> {
        let cfg = self.cfg;
        let opt = AoOptions {
            seed: cfg.ao.seed.wrapping_add(draw),
            ..cfg.ao.clone()
        };
        let has = |m: Mode| cfg.modes.contains(&m);
        let mut out = Vec::new();
        for &gamma in &cfg.gammas {
            let tg = DesignTargets::new(gamma, cfg.scenario.noise_power);
            let mut perfect = None;
            if has(Mode::Perfect) || (has(Mode::Sweep) && !has(Mode::Robust)) {
                perfect = Some(alternating_optimize(dt, &tg, &opt));
            }
            if has(Mode::Perfect) {
                out.push(match perfect.as_ref().expect("perfect design ran") {
                    Ok(sol) => record(draw, Mode::Perfect, &tg, real, sol),
                    Err(e) => failure(draw, Mode::Perfect, gamma, e),
                });
            }
            let mut robust = None;
            if has(Mode::Robust) {
                let stats = self.stats.expect("robust statistics prepared");
                let res = robust_optimize(dt, &tg, stats, &opt, &cfg.robust);
                out.push(match &res {
                    Ok(sol) => {
                        let mut r = record(draw, Mode::Robust, &tg, real, sol);
                        if let (Some(sampler), true) = (&self.sampler, cfg.n_mc > 0) {
                            match monte_carlo_outage(
                                dt,
                                sol,
                                sampler,
                                &tg,
                                cfg.n_mc,
                                cfg.seed ^ draw,
                            ) {
                                Ok(est) => r.mc_outage = Some(est.outage),
                                Err(e) => r.error = e.to_string(),
                            }
                        }
                        r
                    }
                    Err(e) => failure(draw, Mode::Robust, gamma, e),
                });
                robust = Some(res);
            }
            if has(Mode::Sweep) {
                // sweep at the per-user powers of the model-based design
                let base = robust
                    .as_ref()
                    .or(perfect.as_ref())
                    .expect("a model-based design ran");
                let rec = match base {
                    Ok(sol) if sol.feasible => {
                        let (bs, ris) = self.codebooks.as_ref().expect("codebooks prepared");
                        match sweep(
                            real,
                            bs,
                            ris,
                            (sol.f1.norm_squared(), sol.f2.norm_squared()),
                            &tg,
                        ) {
                            Ok(r) => record(draw, Mode::Sweep, &tg, real, &r.solution),
                            Err(e) => failure(draw, Mode::Sweep, gamma, &e),
                        }
                    }
                    Ok(_) => failure(
                        draw,
                        Mode::Sweep,
                        gamma,
                        &invalid("no feasible design to take sweep powers from"),
                    ),
                    Err(e) => failure(draw, Mode::Sweep, gamma, e),
                };
                out.push(rec);
            }
        }
        out
    }
}

/// Error statistics for the robust mode: loaded, learned over a block
/// stream, or estimated from offline error draws.
fn prepare_statistics(cfg: &ExperimentConfig, sc: &ScenarioConfig) -> Result<ErrorStatistics> {
    let mut st = match &cfg.statistics_file {
        Some(p) => textio::statistics_from_str(&std::fs::read_to_string(p)?)?,
        None => ErrorStatistics::new(sc.n_tx),
    };
    let pair = |draw: u64| -> Result<(ChannelSet, ChannelSet)> {
        let (u1, u2) = draw_users(sc, draw);
        generate_scenario(sc, &u1, &u2, draw)
    };
    if cfg.n_blocks > 0 {
        let stream = (0..cfg.n_blocks as u64)
            .map(|k| pair(LEARNING_DRAWS + k).map(|(dt, real)| Block { dt, real }))
            .collect::<Result<Vec<_>>>()?;
        let tg = DesignTargets::new(cfg.gammas[0], sc.noise_power);
        return Ok(learning_run(&stream, &tg, &cfg.ao, &cfg.robust, st)?.stats);
    }
    if cfg.statistics_file.is_none() {
        for k in 0..cfg.cov_samples as u64 {
            let (dt, real) = pair(COVARIANCE_DRAWS + k)?;
            st = update_covariance(&st, &(user1_stacked(&real)? - user1_stacked(&dt)?))?;
        }
    }
    Ok(st)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let sc = cfg.effective_scenario();
    let imported = cfg
        .import_channels
        .as_deref()
        .map(textio::read_channels)
        .transpose()?;
    let stats = if cfg.modes.contains(&Mode::Robust) {
        Some(prepare_statistics(cfg, &sc)?)
    } else {
        None
    };
    let sampler = stats
        .as_ref()
        .map(|s| ErrorSampler::new(&s.sigma))
        .transpose()?;
    let codebooks = if cfg.modes.contains(&Mode::Sweep) {
        Some((build_bs_codebook(&sc)?, build_ris_codebook(&sc)?))
    } else {
        None
    };
    let ctx = Context {
        cfg,
        stats: stats.as_ref(),
        sampler,
        codebooks,
    };

    let records: Vec<DrawRecord> = match &imported {
        Some(imp) => {
            let real = imp.real.clone().unwrap_or_else(|| ChannelSet {
                provenance: Provenance::Real,
                ..imp.dt.clone()
            });
            ctx.run_draw(0, &imp.dt, &real)
        }
        None => {
            let per_draw: Vec<Vec<DrawRecord>> = (0..cfg.n_draws as u64)
                .into_par_iter()
                .map(|draw| {
                    let (u1, u2) = draw_users(&sc, draw);
                    match generate_scenario(&sc, &u1, &u2, draw) {
                        Ok((dt, real)) => ctx.run_draw(draw, &dt, &real),
                        Err(e) => cfg
                            .gammas
                            .iter()
                            .flat_map(|&g| cfg.modes.iter().map(move |&m| (g, m)))
                            .map(|(g, m)| failure(draw, m, g, &e))
                            .collect(),
                    }
                })
                .collect();
            per_draw.into_iter().flatten().collect()
        }
    };
    let summaries = summarize(&records);
    let failed = records.iter().filter(|r| r.failed()).count();
    if 2 * failed > records.len() {
        let detail: Vec<String> = summaries
            .iter()
            .map(|s| {
                format!(
                    "{} gamma {}: {}/{} failed",
                    s.mode.name(),
                    s.gamma,
                    s.failures,
                    s.draws
                )
            })
            .collect();
        return Err(Error::Aborted(format!(
            "{failed} of {} designs failed ({})",
            records.len(),
            detail.join("; ")
        )));
    }
    Ok(ExperimentResult {
        records,
        summaries,
        statistics: stats,
    })
}

fn groups(records: &[DrawRecord]) -> BTreeMap<(Mode, u64), Vec<&DrawRecord>> {
    let mut g: BTreeMap<(Mode, u64), Vec<&DrawRecord>> = BTreeMap::new();
    for r in records {
        g.entry((r.mode, r.gamma.to_bits())).or_default().push(r);
    }
    g
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn summarize(records: &[DrawRecord]) -> Vec<ModeSummary> {
    groups(records)
        .into_iter()
        .map(|((mode, g), rs)| {
            let ok: Vec<&&DrawRecord> = rs.iter().filter(|r| !r.failed()).collect();
            let feas: Vec<&&DrawRecord> = ok.iter().copied().filter(|r| r.feasible).collect();
            let frac = |v: &[&&DrawRecord]| mean(v.iter().map(|r| r.outage as u8 as f64));
            let mc: Vec<f64> = ok.iter().filter_map(|r| r.mc_outage).collect();
            ModeSummary {
                mode,
                gamma: f64::from_bits(g),
                draws: rs.len(),
                failures: rs.len() - ok.len(),
                feasible: feas.len(),
                outage: frac(&ok),
                outage_feasible: frac(&feas),
                mean_power: mean(feas.iter().map(|r| r.power)),
                mean_sum_se: mean(ok.iter().map(|r| r.sum_se)),
                mean_mc_outage: (!mc.is_empty()).then(|| mean(mc.iter().copied())),
            }
        })
        .collect()
}

/// CDF points of the sum-SE per mode and target, over non-failed draws.
pub fn cdf_points(records: &[DrawRecord]) -> Vec<CdfPoint> {
    let mut out = Vec::new();
    for ((mode, g), rs) in groups(records) {
        let vals: Vec<f64> = rs
            .iter()
            .filter(|r| !r.failed())
            .map(|r| r.sum_se)
            .collect();
        for (sum_se, cdf) in empirical_cdf(&vals) {
            out.push(CdfPoint {
                mode,
                gamma: f64::from_bits(g),
                sum_se,
                cdf,
            });
        }
    }
    out
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub const DRAWS_FILE: &str = "draws.csv";
pub const CDF_FILE: &str = "cdf.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const STATISTICS_FILE: &str = "statistics.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    seed: u64,
    files: Vec<&'a str>,
    config: &'a ExperimentConfig,
}

/// Writes all outputs into `dir`. Every file is first written to a
/// temporary file in `dir`; none is renamed into place unless all were
/// written.
pub fn emit_outputs(
    result: &ExperimentResult,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if result.records.is_empty() {
        return Err(invalid("no records to write"));
    }
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(&str, Vec<u8>)> = vec![
        (DRAWS_FILE, csv_bytes(&result.records)?),
        (CDF_FILE, csv_bytes(&cdf_points(&result.records))?),
        (SUMMARY_FILE, csv_bytes(&result.summaries)?),
    ];
    if let Some(st) = &result.statistics {
        files.push((
            STATISTICS_FILE,
            textio::statistics_to_string(st)?.into_bytes(),
        ));
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
    // the manifest lives in the output directory, so its path is not echoed
    let echo = ExperimentConfig {
        output_dir: PathBuf::from("."),
        ..cfg.clone()
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        files: names,
        config: &echo,
    };
    let manifest = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    files.push((MANIFEST_FILE, manifest.into_bytes()));

    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_draws(path: &Path) -> Result<Vec<DrawRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<DrawRecord>, _>>()?)
}

#[cfg(test)]
mod tests;
