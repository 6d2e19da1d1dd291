//! Structured text files for channels, error statistics and codebooks.
//!
//! Every matrix is a record with `rows`, `cols` and `entries`, the entries
//! being interleaved real/imaginary pairs in column-major order:
//!
//! ```text
//! [[link]]
//! link = "h1"
//! provenance = "dt"
//! rows = 1
//! cols = 2
//! entries = [0.5, -1.0, 0.25, 0.0]
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baseline::{Codebook, Label};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c64, CMatrix, CVector};
use crate::robust::ErrorStatistics;
use crate::scenario::{ChannelSet, Link, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkRecord {
    link: Link,
    provenance: Provenance,
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    #[serde(default)]
    link: Vec<LinkRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatisticsFile {
    n: usize,
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookEntry {
    /// Steering azimuth (BS beams) or segment index (RIS phases).
    #[serde(skip_serializing_if = "Option::is_none")]
    angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    segment: Option<usize>,
    len: usize,
    entries: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookFile {
    entry: Vec<CodebookEntry>,
}

fn interleave(values: impl Iterator<Item = num_complex::Complex64>) -> Vec<f64> {
    values.flat_map(|z| [z.re, z.im]).collect()
}

fn matrix_from(rows: usize, cols: usize, entries: &[f64], what: &str) -> Result<CMatrix> {
    if entries.len() != 2 * rows * cols {
        return Err(invalid(format!(
            "{what}: expected {} numbers for a {rows}x{cols} matrix, found {}",
            2 * rows * cols,
            entries.len()
        )));
    }
    if entries.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what}: entries must be finite")));
    }
    Ok(CMatrix::from_iterator(
        rows,
        cols,
        entries.chunks_exact(2).map(|p| c64(p[0], p[1])),
    ))
}

/// Parses TOML, reporting failures with the 1-based line of the offending
/// span.
pub(crate) fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| {
            1 + text.as_bytes()[..s.start.min(text.len())]
                .iter()
                .filter(|&&b| b == b'\n')
                .count()
        });
        Error::Parse {
            line,
            msg: e.message().to_string(),
        }
    })
}

fn render<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Numerical(format!("text serialization failed: {e}")))
}

fn link_record(link: Link, provenance: Provenance, m: &CMatrix) -> LinkRecord {
    LinkRecord {
        link,
        provenance,
        rows: m.nrows(),
        cols: m.ncols(),
        entries: interleave(m.iter().copied()),
    }
}

/// Writes one or more channel sets, one record per link.
pub fn channels_to_string(sets: &[&ChannelSet]) -> Result<String> {
    let mut link = Vec::new();
    for ch in sets {
        for (l, m) in [
            (Link::H1, &ch.h1),
            (Link::G1, &ch.g1),
            (Link::G2, &ch.g2),
            (Link::HBr, &ch.h_br),
        ] {
            link.push(link_record(l, ch.provenance, m));
        }
    }
    render(&ChannelFile { link })
}

/// Parsed channel file: the twin set and, if present, the real set.
#[derive(Clone, Debug)]
pub struct ImportedChannels {
    pub dt: ChannelSet,
    pub real: Option<ChannelSet>,
}

pub fn channels_from_str(text: &str) -> Result<ImportedChannels> {
    let file: ChannelFile = parse(text)?;
    let assemble = |prov: Provenance| -> Result<Option<ChannelSet>> {
        let recs: Vec<&LinkRecord> = file.link.iter().filter(|r| r.provenance == prov).collect();
        if recs.is_empty() {
            return Ok(None);
        }
        let get = |l: Link| -> Result<CMatrix> {
            let mut it = recs.iter().filter(|r| r.link == l);
            let r = it.next().ok_or_else(|| {
                invalid(format!("{} channels lack link {}", prov.name(), l.name()))
            })?;
            if it.next().is_some() {
                return Err(invalid(format!(
                    "duplicate {} record for link {}",
                    prov.name(),
                    l.name()
                )));
            }
            matrix_from(r.rows, r.cols, &r.entries, l.name())
        };
        let ch = ChannelSet {
            h1: get(Link::H1)?,
            g1: get(Link::G1)?,
            g2: get(Link::G2)?,
            h_br: get(Link::HBr)?,
            provenance: prov,
        };
        ch.validate()?;
        Ok(Some(ch))
    };
    let dt = assemble(Provenance::Dt)?.ok_or_else(|| invalid("channel file has no dt records"))?;
    let real = assemble(Provenance::Real)?;
    if let Some(r) = &real {
        if r.h1.shape() != dt.h1.shape() || r.h_br.shape() != dt.h_br.shape() {
            return Err(invalid("dt and real channels differ in shape"));
        }
    }
    Ok(ImportedChannels { dt, real })
}

pub fn statistics_to_string(st: &ErrorStatistics) -> Result<String> {
    let s = &st.sigma;
    render(&StatisticsFile {
        n: st.n,
        rows: s.nrows(),
        cols: s.ncols(),
        entries: interleave(s.iter().copied()),
    })
}

pub fn statistics_from_str(text: &str) -> Result<ErrorStatistics> {
    let f: StatisticsFile = parse(text)?;
    let st = ErrorStatistics {
        sigma: matrix_from(f.rows, f.cols, &f.entries, "sigma")?,
        n: f.n,
    };
    st.validate()?;
    Ok(st)
}

pub fn codebook_to_string(cb: &Codebook) -> Result<String> {
    let entry = cb
        .entries
        .iter()
        .zip(&cb.labels)
        .map(|(v, l)| {
            let (angle, segment) = match *l {
                Label::Angle(a) => (Some(a), None),
                Label::Segment(s) => (None, Some(s)),
            };
            CodebookEntry {
                angle,
                segment,
                len: v.len(),
                entries: interleave(v.iter().copied()),
            }
        })
        .collect();
    render(&CodebookFile { entry })
}

pub fn codebook_from_str(text: &str) -> Result<Codebook> {
    let f: CodebookFile = parse(text)?;
    let mut cb = Codebook {
        entries: Vec::new(),
        labels: Vec::new(),
    };
    for (i, e) in f.entry.into_iter().enumerate() {
        let label = match (e.angle, e.segment) {
            (Some(a), None) => Label::Angle(a),
            (None, Some(s)) => Label::Segment(s),
            _ => {
                return Err(invalid(format!(
                    "codebook entry {i} needs exactly one of angle and segment"
                )))
            }
        };
        let v = matrix_from(e.len, 1, &e.entries, "codebook entry")?;
        cb.entries.push(CVector::from_column_slice(v.as_slice()));
        cb.labels.push(label);
    }
    Ok(cb)
}

pub fn read_channels(path: &Path) -> Result<ImportedChannels> {
    channels_from_str(&std::fs::read_to_string(path)?)
}
