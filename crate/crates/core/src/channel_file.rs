//! Matrix file format shared by channels and precoders.
//!
//! A file is one JSON document:
//!
//! ```text
//! {
//!   "format": "xtalk-matrices",
//!   "format_version": 1,
//!   "kind": "channel",
//!   "p": 2,
//!   "tone_count": 3,
//!   "f_start": 0.0,
//!   "spacing": 4312.5,
//!   "f_end": 8625.0,
//!   "tones": [
//!     [[1.0,0.0],[0.01,-0.02],[0.0,0.03],[0.98,0.1]],
//!     ...
//!   ]
//! }
//! ```
//!
//! `tones[k]` holds the `p * p` entries of tone `k` in row-major order, each
//! as `[re, im]`. Tone `k` is at `f_start + k * spacing`. `kind` is
//! `"channel"` or `"precoder"`; `f_end` is optional and defaults to the last
//! tone. Numbers are written in shortest round-trip form, so saving and
//! loading reproduces every entry bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Deserialize;

use crate::channel::{ChannelEnsemble, ChannelSnapshot, ChannelSource, ToneGrid};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

pub const FORMAT_NAME: &str = "xtalk-matrices";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    Channel,
    Precoder,
}

impl MatrixKind {
    fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Channel => "channel",
            MatrixKind::Precoder => "precoder",
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    format: String,
    format_version: u32,
    #[serde(default)]
    kind: Option<String>,
    p: usize,
    tone_count: usize,
    f_start: f64,
    spacing: f64,
    #[serde(default)]
    f_end: Option<f64>,
    tones: Vec<Vec<[f64; 2]>>,
}

fn number(x: f64) -> String {
    // serde_json prints the shortest representation that parses back exactly.
    serde_json::to_string(&x).expect("finite float")
}

/// Writes `matrices` (one per tone of `grid`) in the matrix file format.
pub fn write_matrices<W: Write>(
    mut out: W,
    kind: MatrixKind,
    grid: &ToneGrid,
    matrices: &[CMatrix],
) -> Result<()> {
    if matrices.len() != grid.count() {
        return Err(Error::InvalidParams(format!(
            "{} matrices for a {}-tone grid",
            matrices.len(),
            grid.count()
        )));
    }
    let p = matrices.first().map(|m| m.nrows()).unwrap_or(0);
    if matrices.iter().any(|m| m.nrows() != p || m.ncols() != p) {
        return Err(Error::InvalidParams("matrices must all be p x p".into()));
    }
    if matrices
        .iter()
        .flat_map(|m| m.iter())
        .any(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::InvalidParams("cannot write non-finite entries".into()));
    }

    let mut text = String::new();
    text.push_str("{\n");
    let _ = writeln!(text, "  \"format\": \"{FORMAT_NAME}\",");
    let _ = writeln!(text, "  \"format_version\": {FORMAT_VERSION},");
    let _ = writeln!(text, "  \"kind\": \"{}\",", kind.as_str());
    let _ = writeln!(text, "  \"p\": {p},");
    let _ = writeln!(text, "  \"tone_count\": {},", grid.count());
    let _ = writeln!(text, "  \"f_start\": {},", number(grid.f_start()));
    let _ = writeln!(text, "  \"spacing\": {},", number(grid.spacing()));
    let _ = writeln!(text, "  \"f_end\": {},", number(grid.f_end()));
    text.push_str("  \"tones\": [\n");
    for (k, m) in matrices.iter().enumerate() {
        text.push_str("    [");
        for i in 0..p {
            for j in 0..p {
                if i + j > 0 {
                    text.push(',');
                }
                let z = m[(i, j)];
                let _ = write!(text, "[{},{}]", number(z.re), number(z.im));
            }
        }
        text.push(']');
        if k + 1 < matrices.len() {
            text.push(',');
        }
        text.push('\n');
    }
    text.push_str("  ]\n}\n");
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// Parsed matrix file: grid, kind and one matrix per tone.
pub struct MatrixFile {
    pub kind: MatrixKind,
    pub grid: ToneGrid,
    pub matrices: Vec<CMatrix>,
}

fn parse_error(msg: impl Into<String>) -> Error {
    Error::ParseError {
        line: None,
        tone: None,
        msg: msg.into(),
    }
}

pub fn parse_matrices(text: &str) -> Result<MatrixFile> {
    let raw: RawFile = serde_json::from_str(text).map_err(|e| Error::ParseError {
        line: Some(e.line()),
        tone: None,
        msg: e.to_string(),
    })?;
    if raw.format != FORMAT_NAME {
        return Err(parse_error(format!("unknown format {:?}", raw.format)));
    }
    if raw.format_version != FORMAT_VERSION {
        return Err(parse_error(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            raw.format_version
        )));
    }
    let kind = match raw.kind.as_deref() {
        None | Some("channel") => MatrixKind::Channel,
        Some("precoder") => MatrixKind::Precoder,
        Some(other) => return Err(parse_error(format!("unknown kind {other:?}"))),
    };
    if raw.p == 0 {
        return Err(parse_error("p must be positive"));
    }
    if raw.tones.len() != raw.tone_count {
        return Err(parse_error(format!(
            "tone_count is {} but {} tones are present",
            raw.tone_count,
            raw.tones.len()
        )));
    }
    let mut grid = ToneGrid::from_count(raw.f_start, raw.spacing, raw.tone_count)
        .map_err(|e| parse_error(e.to_string()))?;
    if let Some(f_end) = raw.f_end {
        if raw.tone_count > 1 {
            let stated = ToneGrid::new(raw.f_start, f_end, raw.spacing)
                .map_err(|e| parse_error(e.to_string()))?;
            if stated.count() != raw.tone_count {
                return Err(parse_error(format!(
                    "f_end {f_end} implies {} tones, header says {}",
                    stated.count(),
                    raw.tone_count
                )));
            }
            grid = stated;
        }
    }
    let p = raw.p;
    let matrices = raw
        .tones
        .iter()
        .enumerate()
        .map(|(k, entries)| {
            if entries.len() != p * p {
                return Err(Error::ParseError {
                    line: None,
                    tone: Some(k),
                    msg: format!("expected {} entries, found {}", p * p, entries.len()),
                });
            }
            Ok(CMatrix::from_row_iterator(
                p,
                p,
                entries.iter().map(|[re, im]| C64::new(*re, *im)),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MatrixFile {
        kind,
        grid,
        matrices,
    })
}

pub fn parse_channel(text: &str, source: ChannelSource) -> Result<ChannelEnsemble> {
    let file = parse_matrices(text)?;
    if file.kind != MatrixKind::Channel {
        return Err(parse_error("file holds precoders, not channels"));
    }
    let snapshots = file
        .matrices
        .into_iter()
        .enumerate()
        .map(|(k, h)| ChannelSnapshot::new(file.grid.freq(k), h).map_err(|e| e.at_tone(k)))
        .collect::<Result<Vec<_>>>()?;
    ChannelEnsemble::new(file.grid, snapshots, source)
}

pub fn load_channel(path: &Path) -> Result<ChannelEnsemble> {
    let text = fs::read_to_string(path)?;
    parse_channel(
        &text,
        ChannelSource::Loaded {
            path: path.to_path_buf(),
        },
    )
}

pub fn save_channel(path: &Path, ensemble: &ChannelEnsemble) -> Result<()> {
    let matrices: Vec<CMatrix> = ensemble.snapshots.iter().map(|s| s.h.clone()).collect();
    let file = io::BufWriter::new(fs::File::create(path)?);
    write_matrices(file, MatrixKind::Channel, &ensemble.grid, &matrices)
}
