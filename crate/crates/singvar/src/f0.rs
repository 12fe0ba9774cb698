//! Continuous fundamental-frequency contours at a fixed frame shift.
//!
//! Pitch is kept in MIDI semitone units (69 + 12*log2(f/440)) everywhere;
//! Hz only appears at the file-format and synthesis boundaries.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_FRAME_SHIFT_MS: f64 = 5.0;

/// Convert a frequency in Hz to MIDI semitones.
pub fn hz_to_semitone(hz: f64) -> Result<f64> {
    if !(hz > 0.0) {
        return Err(Error::NonPositiveHz(hz));
    }
    Ok(69.0 + 12.0 * (hz / 440.0).log2())
}

/// Convert MIDI semitones back to Hz.
pub fn semitone_to_hz(semitone: f64) -> f64 {
    440.0 * ((semitone - 69.0) / 12.0).exp2()
}

/// A continuous per-frame pitch contour with its voicing mask.
///
/// Every frame carries a semitone value, including unvoiced frames (those are
/// interpolated at construction time). Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    values: Vec<f64>,
    voicing: Vec<bool>,
    frame_shift_ms: f64,
}

impl F0Contour {
    pub fn new(values: Vec<f64>, voicing: Vec<bool>, frame_shift_ms: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if values.len() != voicing.len() {
            return Err(Error::DimensionMismatch(format!(
                "values ({}) vs voicing ({})",
                values.len(),
                voicing.len()
            )));
        }
        if !(frame_shift_ms > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frame_shift_ms must be positive, got {frame_shift_ms}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("contour value {v}")));
        }
        Ok(Self {
            values,
            voicing,
            frame_shift_ms,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn voicing(&self) -> &[bool] {
        &self.voicing
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    /// Subtract the arithmetic mean, keeping it for exact restoration.
    pub fn remove_mean(&self) -> MeanRemovedContour {
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        let centered = self.values.iter().map(|v| v - mean).collect();
        MeanRemovedContour {
            centered,
            mean,
            voicing: self.voicing.clone(),
            frame_shift_ms: self.frame_shift_ms,
        }
    }
}

/// A contour with its mean split off, as fed to the STFT analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRemovedContour {
    centered: Vec<f64>,
    mean: f64,
    voicing: Vec<bool>,
    frame_shift_ms: f64,
}

impl MeanRemovedContour {
    pub fn centered(&self) -> &[f64] {
        &self.centered
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.centered.len()
    }

    pub fn voicing(&self) -> &[bool] {
        &self.voicing
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    /// Exact inverse of [`F0Contour::remove_mean`].
    pub fn restore_mean(&self) -> F0Contour {
        F0Contour {
            values: self.centered.iter().map(|c| c + self.mean).collect(),
            voicing: self.voicing.clone(),
            frame_shift_ms: self.frame_shift_ms,
        }
    }
}

/// Build a continuous contour from raw (hz, voiced) frames.
///
/// Voiced frames are converted to semitones; unvoiced gaps are filled by
/// linear interpolation in the semitone domain between the flanking voiced
/// frames, and leading/trailing unvoiced runs hold the nearest voiced value.
pub fn interpolate_unvoiced(raw: &[(f64, bool)], frame_shift_ms: f64) -> Result<F0Contour> {
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let voiced_idx: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| *v)
        .map(|(i, _)| i)
        .collect();
    if voiced_idx.is_empty() {
        return Err(Error::NoVoicedFrames);
    }

    let mut values = vec![0.0; raw.len()];
    for &i in &voiced_idx {
        values[i] = hz_to_semitone(raw[i].0)?;
    }

    let first = voiced_idx[0];
    let last = *voiced_idx.last().unwrap();
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..raw.len() {
        values[i] = values[last];
    }
    for w in voiced_idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a > 1 {
            let step = (values[b] - values[a]) / (b - a) as f64;
            for i in a + 1..b {
                values[i] = values[a] + step * (i - a) as f64;
            }
        }
    }

    let voicing = raw.iter().map(|(_, v)| *v).collect();
    F0Contour::new(values, voicing, frame_shift_ms)
}

const F0_HEADER: &str = "#F0 v1";

/// Write a contour in the F0 text format v1.
///
/// Unvoiced frames are stored as `0 0`; their interpolated values are
/// reproduced on read because the interpolation is deterministic.
pub fn write_f0<W: Write>(out: &mut W, contour: &F0Contour) -> Result<()> {
    writeln!(
        out,
        "{F0_HEADER} frame_shift_ms={}",
        contour.frame_shift_ms()
    )?;
    for (v, &voiced) in contour.values().iter().zip(contour.voicing()) {
        if voiced {
            writeln!(out, "{} 1", semitone_to_hz(*v))?;
        } else {
            writeln!(out, "0 0")?;
        }
    }
    Ok(())
}

pub fn write_f0_file(path: &Path, contour: &F0Contour) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_f0(&mut f, contour)
}

/// Parse the F0 text format v1 and interpolate unvoiced gaps.
pub fn read_f0<R: BufRead>(input: R) -> Result<F0Contour> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty f0 file".into()))??;
    let rest = header
        .strip_prefix(F0_HEADER)
        .ok_or_else(|| Error::Version(format!("expected `{F0_HEADER}` header, got `{header}`")))?;
    let frame_shift_ms: f64 = rest
        .trim()
        .strip_prefix("frame_shift_ms=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad f0 header `{header}`")))?;

    let mut raw = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let hz: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad f0 line `{line}`")))?;
        let voiced = match it.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(Error::Parse(format!("bad voicing flag in `{line}`"))),
        };
        if !hz.is_finite() {
            return Err(Error::NonFinite(format!("f0 value in `{line}`")));
        }
        raw.push((hz, voiced));
    }
    interpolate_unvoiced(&raw, frame_shift_ms)
}

pub fn read_f0_file(path: &Path) -> Result<F0Contour> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_f0(f)
}
