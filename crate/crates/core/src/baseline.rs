//! Beam-sweeping baseline: a BS angular codebook, an RIS conjugate-phase
//! codebook built from geometry only, and an exhaustive pair search.

use crate::error::{invalid, Result};
use crate::linalg::{c64, CVector};
use crate::optimizer::{effective_se, DesignSolution, DesignTargets};
use crate::scenario::{azimuth, steering_ula, ChannelSet, Position, ScenarioConfig};

pub const BS_SPAN_BEAMS: usize = 15;
pub const RIS_SEGMENTS_PER_SIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    /// Steering azimuth in radians.
    Angle(f64),
    /// Row-major index of an RIS service-grid segment.
    Segment(usize),
}

#[derive(Clone, Debug)]
pub struct Codebook {
    pub entries: Vec<CVector>,
    pub labels: Vec<Label>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// BS codebook and the index of its RIS-aligned entry.
#[derive(Clone, Debug)]
pub struct BsCodebook {
    pub codebook: Codebook,
    pub ris_index: usize,
}

fn unit_beam(n: usize, angle: f64, spacing: f64) -> CVector {
    // channels are a_rx a_tx^H, so a_tx itself is the matched beam
    steering_ula(n, angle, spacing) / c64((n as f64).sqrt(), 0.0)
}

/// Azimuth interval covered by the BS service grid, seen from the BS.
pub fn bs_grid_interval(cfg: &ScenarioConfig) -> (f64, f64) {
    let g = &cfg.bs_grid;
    let corners = [
        [g.origin[0], g.origin[1]],
        [g.origin[0] + g.extent[0], g.origin[1]],
        [g.origin[0], g.origin[1] + g.extent[1]],
        [g.origin[0] + g.extent[0], g.origin[1] + g.extent[1]],
    ];
    let angles = corners.map(|c| azimuth(&cfg.bs_position, &[c[0], c[1], g.height]));
    let lo = angles.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = angles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn build_bs_codebook(cfg: &ScenarioConfig) -> Result<BsCodebook> {
    cfg.validate()?;
    let (lo, hi) = bs_grid_interval(cfg);
    let step = (hi - lo) / (BS_SPAN_BEAMS - 1) as f64;
    let ris_angle = azimuth(&cfg.bs_position, &cfg.ris_position);
    let mut angles: Vec<(f64, bool)> = (0..BS_SPAN_BEAMS)
        .map(|i| (lo + step * i as f64, false))
        .collect();
    angles.push((ris_angle, true));
    angles.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ris_index = angles.iter().position(|a| a.1).expect("RIS entry present");
    let entries = angles
        .iter()
        .map(|&(a, _)| unit_beam(cfg.n_tx, a, cfg.element_spacing))
        .collect();
    let labels = angles.iter().map(|&(a, _)| Label::Angle(a)).collect();
    Ok(BsCodebook {
        codebook: Codebook { entries, labels },
        ris_index,
    })
}

/// Centers of the `4 x 4` RIS service-grid segments, row-major in (x, y).
pub fn ris_segment_centers(cfg: &ScenarioConfig) -> Vec<Position> {
    let g = &cfg.ris_grid;
    let k = RIS_SEGMENTS_PER_SIDE;
    let mut out = Vec::with_capacity(k * k);
    for ix in 0..k {
        for iy in 0..k {
            let x = g.origin[0] + g.extent[0] * (ix as f64 + 0.5) / k as f64;
            let y = g.origin[1] + g.extent[1] * (iy as f64 + 0.5) / k as f64;
            out.push([x, y, g.height]);
        }
    }
    out
}

/// Phases that co-phase the LoS BS-RIS arrival with the LoS departure
/// towards each segment center.
pub fn build_ris_codebook(cfg: &ScenarioConfig) -> Result<Codebook> {
    cfg.validate()?;
    let m = cfg.n_ris;
    let s = cfg.element_spacing;
    let arrival = steering_ula(m, azimuth(&cfg.ris_position, &cfg.bs_position), s);
    let (mut entries, mut labels) = (Vec::new(), Vec::new());
    for (idx, center) in ris_segment_centers(cfg).iter().enumerate() {
        let depart = steering_ula(m, azimuth(&cfg.ris_position, center), s);
        let theta = CVector::from_fn(m, |i, _| {
            let z = depart[i] * arrival[i].conj();
            z / z.norm()
        });
        entries.push(theta);
        labels.push(Label::Segment(idx));
    }
    Ok(Codebook { entries, labels })
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub solution: DesignSolution,
    pub bs_index: usize,
    pub ris_index: usize,
    /// `min(SE_1 - gamma_1, SE_2 - gamma_2)` of the selected pair.
    pub score: f64,
    pub pairs_evaluated: usize,
}

/// Exhaustive search over (user-1 BS beam, RIS entry) pairs at fixed powers;
/// user 2 is always served through the RIS-aligned BS beam.
pub fn sweep(
    ch: &ChannelSet,
    bs: &BsCodebook,
    ris: &Codebook,
    power: (f64, f64),
    tg: &DesignTargets,
) -> Result<SweepResult> {
    ch.validate()?;
    tg.validate()?;
    let (p1, p2) = power;
    if !(p1 >= 0.0 && p2 >= 0.0) || !(p1 + p2 > 0.0) {
        return Err(invalid(
            "sweep powers must be nonnegative and not both zero",
        ));
    }
    if bs.codebook.is_empty() || ris.is_empty() || bs.ris_index >= bs.codebook.len() {
        return Err(invalid("empty codebook"));
    }
    let scale = |w: &CVector, p: f64| w * c64(p.sqrt(), 0.0);
    let f2 = scale(&bs.codebook.entries[bs.ris_index], p2);
    let mut best: Option<(f64, usize, usize, f64, f64)> = None;
    let mut pairs = 0;
    for (i, w) in bs.codebook.entries.iter().enumerate() {
        let f1 = scale(w, p1);
        for (j, theta) in ris.entries.iter().enumerate() {
            pairs += 1;
            let (s1, s2) = effective_se(ch, &f1, &f2, theta, tg);
            let score = (s1 - tg.gamma1).min(s2 - tg.gamma2);
            if best.is_none_or(|b| score > b.0) {
                best = Some((score, i, j, s1, s2));
            }
        }
    }
    let (score, i, j, _, _) = best.expect("non-empty codebooks");
    let f1 = scale(&bs.codebook.entries[i], p1);
    let power = f1.norm_squared() + f2.norm_squared();
    let solution = DesignSolution {
        f1,
        f2,
        theta: ris.entries[j].clone(),
        eps1: f64::NAN,
        eps2: f64::NAN,
        power,
        feasible: score >= -crate::robust::OUTAGE_SLACK,
        iterations: 1,
        power_history: vec![power],
        note: "beam sweep".into(),
    };
    Ok(SweepResult {
        solution,
        bs_index: i,
        ris_index: j,
        score,
        pairs_evaluated: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::los_channels;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    #[test]
    fn bs_codebook_shape() {
        let c = cfg();
        let bs = build_bs_codebook(&c).unwrap();
        assert_eq!(bs.codebook.len(), 16);
        for w in &bs.codebook.entries {
            assert!((w.norm() - 1.0).abs() <= 1e-12);
        }
        let angles: Vec<f64> = bs
            .codebook
            .labels
            .iter()
            .map(|l| match l {
                Label::Angle(a) => *a,
                Label::Segment(_) => panic!("BS labels are angles"),
            })
            .collect();
        assert!(angles.windows(2).all(|w| w[0] <= w[1]));
        // independent geometry: angles to the four grid corners
        let g = &c.bs_grid;
        let mut corner = Vec::new();
        for dx in [0.0, g.extent[0]] {
            for dy in [0.0, g.extent[1]] {
                let (x, y) = (
                    g.origin[0] + dx - c.bs_position[0],
                    g.origin[1] + dy - c.bs_position[1],
                );
                corner.push(y.atan2(x));
            }
        }
        let lo = corner.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = corner.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span: Vec<f64> = angles
            .iter()
            .copied()
            .filter(|a| *a >= lo - 1e-12 && *a <= hi + 1e-12)
            .collect();
        assert!((span[0] - lo).abs() < 1e-12 && (span[span.len() - 1] - hi).abs() < 1e-12);
        let max_gap = span.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!(max_gap <= 2.0 * (hi - lo) / 15.0);
    }

    #[test]
    fn broadside_ris_entry() {
        let mut c = cfg();
        c.ris_position = [40.0, 0.0, 6.0];
        let bs = build_bs_codebook(&c).unwrap();
        let w = &bs.codebook.entries[bs.ris_index];
        let expect = CVector::from_element(c.n_tx, c64(1.0 / (c.n_tx as f64).sqrt(), 0.0));
        assert!((w - expect).camax() <= 1e-12);
    }

    #[test]
    fn ris_codebook_entries_are_unit_modulus() {
        let mut c = cfg();
        let cb = build_ris_codebook(&c).unwrap();
        assert_eq!(cb.len(), 16);
        assert!(cb
            .entries
            .iter()
            .all(|t| t.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-15)));
        c.n_ris = 1;
        let cb = build_ris_codebook(&c).unwrap();
        assert!(cb
            .entries
            .iter()
            .all(|t| t.len() == 1 && (t[0].norm() - 1.0).abs() <= 1e-15));
    }

    fn cascade_gain(c: &ScenarioConfig, ch: &ChannelSet, f: &CVector, t: &CVector) -> f64 {
        let gt = crate::linalg::CMatrix::from_fn(1, c.n_ris, |_, j| ch.g2[(0, j)] * t[j]);
        (gt * &ch.h_br * f)[0].norm()
    }

    #[test]
    fn segment_entry_maximizes_los_cascade() {
        let c = cfg();
        let cb = build_ris_codebook(&c).unwrap();
        let bs = build_bs_codebook(&c).unwrap();
        let f = &bs.codebook.entries[bs.ris_index];
        let u1 = c.bs_grid.center();
        for (k, center) in ris_segment_centers(&c).iter().enumerate() {
            let ch = los_channels(&c, &u1, center);
            let own = cascade_gain(&c, &ch, f, &cb.entries[k]);
            // coherent sum of M unit terms times the BS array gain
            assert!((own - c.n_ris as f64 * (c.n_tx as f64).sqrt()).abs() < 1e-9);
            for t in &cb.entries {
                assert!(cascade_gain(&c, &ch, f, t) <= own + 1e-9);
            }
        }
    }

    #[test]
    fn sweep_selects_segment_and_is_exhaustive() {
        let c = cfg();
        let tg = DesignTargets::new(1.0, c.noise_power);
        let bs = build_bs_codebook(&c).unwrap();
        let cb = build_ris_codebook(&c).unwrap();
        let (p1, p2) = (1e-2, 1e-6);
        for (k, center) in ris_segment_centers(&c).iter().enumerate() {
            let ch = los_channels(&c, &c.bs_grid.center(), center);
            let r = sweep(&ch, &bs, &cb, (p1, p2), &tg).unwrap();
            assert_eq!(r.pairs_evaluated, 256);
            // segments on the same azimuth from the RIS are indistinguishable
            // to a linear array; the lowest index wins the tie
            let f = &bs.codebook.entries[bs.ris_index];
            let g = |j: usize| cascade_gain(&c, &ch, f, &cb.entries[j]);
            assert!(
                (g(r.ris_index) - g(k)).abs() < 1e-9,
                "segment {k} selected {}",
                r.ris_index
            );
            assert!(r.ris_index <= k);
            let f2 = f * c64(p2.sqrt(), 0.0);
            for w in &bs.codebook.entries {
                for t in &cb.entries {
                    let (s1, s2) = effective_se(&ch, &(w * c64(p1.sqrt(), 0.0)), &f2, t, &tg);
                    assert!((s1 - 1.0).min(s2 - 1.0) <= r.score + 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_entry_codebooks() {
        let c = cfg();
        let tg = DesignTargets::new(1.0, c.noise_power);
        let full = build_bs_codebook(&c).unwrap();
        let bs = BsCodebook {
            codebook: Codebook {
                entries: vec![full.codebook.entries[3].clone()],
                labels: vec![full.codebook.labels[3]],
            },
            ris_index: 0,
        };
        let ris = build_ris_codebook(&c).unwrap();
        let one = Codebook {
            entries: vec![ris.entries[2].clone()],
            labels: vec![ris.labels[2]],
        };
        let ch = los_channels(&c, &c.bs_grid.center(), &c.ris_grid.center());
        let r = sweep(&ch, &bs, &one, (1e-3, 2e-3), &tg).unwrap();
        assert_eq!((r.bs_index, r.ris_index, r.pairs_evaluated), (0, 0, 1));
        assert!((r.solution.power - 3e-3).abs() < 1e-15);
        assert!(sweep(&ch, &bs, &one, (0.0, 0.0), &tg).is_err());
    }

    #[test]
    fn codebooks_ignore_channels() {
        // geometry-only: changing the seed (channel realizations) changes nothing
        let mut c = cfg();
        let a = build_ris_codebook(&c).unwrap();
        c.seed = 99;
        let b = build_ris_codebook(&c).unwrap();
        assert_eq!(a.entries, b.entries);
    }
}
