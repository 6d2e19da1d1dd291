//! Geometry and narrowband multipath channels.
//!
//! Every link is a ray sum `H = sum_l g_l a_rx(aoa_l) a_tx(aod_l)^H` over
//! uniform linear arrays. The first path of a link is line of sight (unit
//! magnitude, phase from the travelled distance); the remaining paths are
//! scattered with complex Gaussian gains whose mean power decays as
//! `exp(-p / 2)`. The digital-twin channel keeps only the `l_dt` strongest
//! paths of the same list.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{randn_c, CMatrix, CVector, C64};

pub type Position = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    H1,
    G1,
    G2,
    HBr,
}

impl Link {
    pub const ALL: [Link; 4] = [Link::H1, Link::G1, Link::G2, Link::HBr];

    pub fn name(self) -> &'static str {
        match self {
            Link::H1 => "h1",
            Link::G1 => "g1",
            Link::G2 => "g2",
            Link::HBr => "h_br",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Dt,
    Real,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Dt => "dt",
            Provenance::Real => "real",
        }
    }
}

/// Rectangular user region at a fixed height, sampled on a square lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub spacing: f64,
    pub height: f64,
}

impl Grid {
    fn counts(&self) -> (usize, usize) {
        let n = |e: f64| (e / self.spacing + 1e-9).floor() as usize + 1;
        (n(self.extent[0]), n(self.extent[1]))
    }

    pub fn point_count(&self) -> usize {
        let (nx, ny) = self.counts();
        nx * ny
    }

    pub fn point(&self, idx: usize) -> Position {
        let (nx, _) = self.counts();
        let (ix, iy) = (idx % nx, idx / nx);
        [
            self.origin[0] + ix as f64 * self.spacing,
            self.origin[1] + iy as f64 * self.spacing,
            self.height,
        ]
    }

    pub fn contains(&self, p: &Position) -> bool {
        let tol = 1e-9 * (1.0 + self.extent[0].abs() + self.extent[1].abs());
        (0..2)
            .all(|k| p[k] >= self.origin[k] - tol && p[k] <= self.origin[k] + self.extent[k] + tol)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        self.point(rng.random_range(0..self.point_count()))
    }

    pub fn center(&self) -> Position {
        [
            self.origin[0] + self.extent[0] / 2.0,
            self.origin[1] + self.extent[1] / 2.0,
            self.height,
        ]
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.spacing > 0.0) || self.extent.iter().any(|&e| !(e >= 0.0)) {
            return Err(invalid(format!(
                "{name}: spacing must be positive and extents nonnegative"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_ris: usize,
    pub bs_position: Position,
    pub ris_position: Position,
    pub bs_grid: Grid,
    pub ris_grid: Grid,
    /// Antenna spacing in wavelengths.
    pub element_spacing: f64,
    /// Carrier wavelength in meters (sets line-of-sight phases).
    pub wavelength: f64,
    pub l_real: usize,
    pub l_dt: usize,
    pub noise_power: f64,
    /// Links whose twin is truncated to `l_dt` paths; the others are exact.
    pub dt_error_links: Vec<Link>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_tx: 16,
            n_rx: 1,
            n_ris: 16,
            bs_position: [0.0, 0.0, 6.0],
            ris_position: [40.0, 30.0, 6.0],
            bs_grid: Grid {
                origin: [20.0, -30.0],
                extent: [30.0, 20.0],
                spacing: 0.2,
                height: 1.5,
            },
            ris_grid: Grid {
                origin: [60.0, 35.0],
                extent: [20.0, 20.0],
                spacing: 0.2,
                height: 1.5,
            },
            element_spacing: 0.5,
            wavelength: 0.1,
            l_real: 10,
            l_dt: 2,
            noise_power: 1e-3,
            dt_error_links: vec![Link::H1, Link::G1, Link::G2],
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 || self.n_ris == 0 {
            return Err(invalid("antenna and element counts must be at least 1"));
        }
        if self.l_real == 0 || self.l_dt == 0 || self.l_dt > self.l_real {
            return Err(invalid(format!(
                "need 1 <= l_dt <= l_real, got l_dt = {}, l_real = {}",
                self.l_dt, self.l_real
            )));
        }
        if !(self.element_spacing > 0.0) || !(self.wavelength > 0.0) {
            return Err(invalid("element spacing and wavelength must be positive"));
        }
        if !(self.noise_power > 0.0) {
            return Err(invalid("noise power must be positive"));
        }
        self.bs_grid.validate("bs_grid")?;
        self.ris_grid.validate("ris_grid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub gain: C64,
    pub aod: f64,
    pub aoa: f64,
}

impl Path {
    pub fn power(&self) -> f64 {
        self.gain.norm_sqr()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    /// `N_r x N_t`, BS to user 1.
    pub h1: CMatrix,
    /// `N_r x M`, RIS to user 1.
    pub g1: CMatrix,
    /// `N_r x M`, RIS to user 2.
    pub g2: CMatrix,
    /// `M x N_t`, BS to RIS.
    pub h_br: CMatrix,
    pub provenance: Provenance,
}

impl ChannelSet {
    pub fn link(&self, l: Link) -> &CMatrix {
        match l {
            Link::H1 => &self.h1,
            Link::G1 => &self.g1,
            Link::G2 => &self.g2,
            Link::HBr => &self.h_br,
        }
    }

    pub fn link_mut(&mut self, l: Link) -> &mut CMatrix {
        match l {
            Link::H1 => &mut self.h1,
            Link::G1 => &mut self.g1,
            Link::G2 => &mut self.g2,
            Link::HBr => &mut self.h_br,
        }
    }

    pub fn n_tx(&self) -> usize {
        self.h1.ncols()
    }

    pub fn n_ris(&self) -> usize {
        self.h_br.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (nr, nt, m) = (self.h1.nrows(), self.h1.ncols(), self.h_br.nrows());
        let ok = self.g1.shape() == (nr, m)
            && self.g2.shape() == (nr, m)
            && self.h_br.shape() == (m, nt);
        if !ok || nr == 0 || nt == 0 || m == 0 {
            return Err(invalid(format!(
                "inconsistent channel shapes: h1 {:?}, g1 {:?}, g2 {:?}, h_br {:?}",
                self.h1.shape(),
                self.g1.shape(),
                self.g2.shape(),
                self.h_br.shape()
            )));
        }
        for l in Link::ALL {
            crate::linalg::ensure_finite(self.link(l), l.name())?;
        }
        Ok(())
    }
}

/// Path lists of every link, sorted by descending power.
#[derive(Clone, Debug)]
pub struct LinkPaths {
    pub h1: Vec<Path>,
    pub g1: Vec<Path>,
    pub g2: Vec<Path>,
    pub h_br: Vec<Path>,
}

impl LinkPaths {
    pub fn get(&self, l: Link) -> &[Path] {
        match l {
            Link::H1 => &self.h1,
            Link::G1 => &self.g1,
            Link::G2 => &self.g2,
            Link::HBr => &self.h_br,
        }
    }
}

/// `a[i] = exp(j 2 pi spacing i sin(angle))`.
pub fn steering_ula(n: usize, angle: f64, spacing: f64) -> CVector {
    let k = 2.0 * PI * spacing * angle.sin();
    CVector::from_fn(n, |i, _| C64::from_polar(1.0, k * i as f64))
}

pub fn synth_channel(paths: &[Path], rx_n: usize, tx_n: usize, spacing: f64) -> CMatrix {
    let mut h = CMatrix::zeros(rx_n, tx_n);
    for p in paths {
        let ar = steering_ula(rx_n, p.aoa, spacing);
        let at = steering_ula(tx_n, p.aod, spacing);
        h += (ar * at.adjoint()) * p.gain;
    }
    h
}

pub fn channel_error(real: &CMatrix, dt: &CMatrix) -> Result<CMatrix> {
    if real.shape() != dt.shape() {
        return Err(invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            real.shape(),
            dt.shape()
        )));
    }
    Ok(real - dt)
}

/// Azimuth of `to` seen from `from`, measured from the array broadside (x axis).
pub fn azimuth(from: &Position, to: &Position) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

fn distance(a: &Position, b: &Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn link_paths<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    tx: &Position,
    rx: &Position,
    rng: &mut R,
) -> Vec<Path> {
    let phase = -2.0 * PI * distance(tx, rx) / cfg.wavelength;
    let mut paths = Vec::with_capacity(cfg.l_real);
    paths.push(Path {
        gain: C64::from_polar(1.0, phase),
        aod: azimuth(tx, rx),
        aoa: azimuth(rx, tx),
    });
    for p in 1..cfg.l_real {
        let std = (-(p as f64) / 2.0).exp().sqrt();
        let gain = randn_c(rng) * std;
        let aod = rng.random_range(-PI / 2.0..PI / 2.0);
        let aoa = rng.random_range(-PI / 2.0..PI / 2.0);
        paths.push(Path { gain, aod, aoa });
    }
    // stable sort keeps generation order among equal powers
    paths.sort_by(|a, b| b.power().total_cmp(&a.power()));
    paths
}

/// RNG for user-dependent links of draw `draw`; the BS-RIS link always uses
/// stream 0 so it is shared by every draw.
pub fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw.wrapping_add(1));
    rng
}

pub fn generate_paths(
    cfg: &ScenarioConfig,
    user1: &Position,
    user2: &Position,
    draw: u64,
) -> Result<LinkPaths> {
    cfg.validate()?;
    if !cfg.bs_grid.contains(user1) {
        return Err(invalid(format!(
            "user 1 at {user1:?} is outside the BS service grid"
        )));
    }
    if !cfg.ris_grid.contains(user2) {
        return Err(invalid(format!(
            "user 2 at {user2:?} is outside the RIS service grid"
        )));
    }
    let mut fixed = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h_br = link_paths(cfg, &cfg.bs_position, &cfg.ris_position, &mut fixed);
    let mut rng = draw_rng(cfg.seed, draw);
    let h1 = link_paths(cfg, &cfg.bs_position, user1, &mut rng);
    let g1 = link_paths(cfg, &cfg.ris_position, user1, &mut rng);
    let g2 = link_paths(cfg, &cfg.ris_position, user2, &mut rng);
    Ok(LinkPaths { h1, g1, g2, h_br })
}

pub fn channels_from_paths(
    cfg: &ScenarioConfig,
    paths: &LinkPaths,
    provenance: Provenance,
) -> ChannelSet {
    let take = |l: Link| -> &[Path] {
        let all = paths.get(l);
        let truncate =
            provenance == Provenance::Dt && l != Link::HBr && cfg.dt_error_links.contains(&l);
        if truncate {
            &all[..cfg.l_dt.min(all.len())]
        } else {
            all
        }
    };
    let s = cfg.element_spacing;
    ChannelSet {
        h1: synth_channel(take(Link::H1), cfg.n_rx, cfg.n_tx, s),
        g1: synth_channel(take(Link::G1), cfg.n_rx, cfg.n_ris, s),
        g2: synth_channel(take(Link::G2), cfg.n_rx, cfg.n_ris, s),
        h_br: synth_channel(take(Link::HBr), cfg.n_ris, cfg.n_tx, s),
        provenance,
    }
}

/// Digital-twin and real channel sets for one pair of user positions.
pub fn generate_scenario(
    cfg: &ScenarioConfig,
    user1: &Position,
    user2: &Position,
    draw: u64,
) -> Result<(ChannelSet, ChannelSet)> {
    let paths = generate_paths(cfg, user1, user2, draw)?;
    Ok((
        channels_from_paths(cfg, &paths, Provenance::Dt),
        channels_from_paths(cfg, &paths, Provenance::Real),
    ))
}

/// User positions for draw `draw`, independent of the channel streams.
pub fn draw_users(cfg: &ScenarioConfig, draw: u64) -> (Position, Position) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7573_6572);
    rng.set_stream(draw.wrapping_add(1));
    (cfg.bs_grid.sample(&mut rng), cfg.ris_grid.sample(&mut rng))
}

/// A pure line-of-sight channel set (used for geometric oracles).
pub fn los_channels(cfg: &ScenarioConfig, user1: &Position, user2: &Position) -> ChannelSet {
    let one = |tx: &Position, rx: &Position| {
        let phase = -2.0 * PI * distance(tx, rx) / cfg.wavelength;
        vec![Path {
            gain: C64::from_polar(1.0, phase),
            aod: azimuth(tx, rx),
            aoa: azimuth(rx, tx),
        }]
    };
    let s = cfg.element_spacing;
    ChannelSet {
        h1: synth_channel(&one(&cfg.bs_position, user1), cfg.n_rx, cfg.n_tx, s),
        g1: synth_channel(&one(&cfg.ris_position, user1), cfg.n_rx, cfg.n_ris, s),
        g2: synth_channel(&one(&cfg.ris_position, user2), cfg.n_rx, cfg.n_ris, s),
        h_br: synth_channel(
            &one(&cfg.bs_position, &cfg.ris_position),
            cfg.n_ris,
            cfg.n_tx,
            s,
        ),
        provenance: Provenance::Real,
    }
}
