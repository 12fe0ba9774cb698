//! Modulation spectrum of pitch contours.
//!
//! The modulation spectrum (MS) is the log-scaled power spectrum of a
//! parameter trajectory, taken segment-by-segment with an STFT. A periodic
//! Hann window at 50% overlap satisfies the constant-overlap-add condition
//! exactly, so analysis followed by plain overlap-add resynthesis with the
//! stored phase reconstructs the contour to machine precision.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::f0::{F0Contour, MeanRemovedContour, DEFAULT_FRAME_SHIFT_MS};

/// Power floor added before the log and subtracted on reconstruction.
pub const POWER_FLOOR: f64 = 1e-12;
/// Magnitudes below this are treated as zero and get phase 0.
const PHASE_EPS: f64 = 1e-15;

/// STFT segmentation parameters. Window is periodic Hann, always.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_frames: usize,
    pub hop_frames: usize,
}

impl StftConfig {
    pub fn new(window_frames: usize, hop_frames: usize) -> Result<Self> {
        if window_frames < 4 || window_frames % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "window_frames must be even and >= 4, got {window_frames}"
            )));
        }
        if window_frames != 2 * hop_frames {
            return Err(Error::InvalidConfig(format!(
                "window_frames ({window_frames}) must equal 2 * hop_frames ({hop_frames})"
            )));
        }
        Ok(Self {
            window_frames,
            hop_frames,
        })
    }

    /// Highest retained modulation-frequency bin index.
    pub fn max_bin(&self) -> usize {
        self.window_frames / 2
    }

    /// Number of retained bins (0..=M).
    pub fn n_bins(&self) -> usize {
        self.max_bin() + 1
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        // 480 ms window, 240 ms hop at a 5 ms frame shift.
        Self {
            window_frames: 96,
            hop_frames: 48,
        }
    }
}

fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
}

/// Number of segments covering `head + len` samples at the given hop.
fn n_segments(head: usize, len: usize, hop: usize) -> usize {
    (head + len - 1) / hop + 1
}

/// Segments away from the zero-padded analysis edges. The first and last two
/// segments are dominated by padding, so their power sits at the floor and
/// would stretch normalizer and training statistics over a meaningless range.
pub fn interior_segments(n: usize) -> std::ops::Range<usize> {
    2.min(n)..n.saturating_sub(2).max(2.min(n))
}

/// Windowed STFT of a mean-removed contour.
///
/// The contour is pre-padded with `window - hop + offset` zeros at the head
/// and zero-padded at the tail so every source sample is covered by two
/// overlapping windows. Only bins 0..=M are returned; the rest follow by
/// conjugate symmetry.
pub fn stft(
    mrc: &MeanRemovedContour,
    cfg: &StftConfig,
    offset_frames: usize,
) -> Result<Vec<Vec<Complex<f64>>>> {
    if mrc.len() == 0 {
        return Err(Error::EmptyInput);
    }
    if offset_frames >= cfg.hop_frames {
        return Err(Error::InvalidConfig(format!(
            "offset {offset_frames} must be < hop {}",
            cfg.hop_frames
        )));
    }
    let w = cfg.window_frames;
    let hop = cfg.hop_frames;
    let head = w - hop + offset_frames;
    let t_seg = n_segments(head, mrc.len(), hop);

    let mut padded = vec![0.0; (t_seg - 1) * hop + w];
    padded[head..head + mrc.len()].copy_from_slice(mrc.centered());

    let window = hann_periodic(w);
    let (fwd, _) = fft_pair(w);
    let mut frames = Vec::with_capacity(t_seg);
    let mut buf = vec![Complex::new(0.0, 0.0); w];
    for seg in 0..t_seg {
        let start = seg * hop;
        for i in 0..w {
            buf[i] = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fwd.process(&mut buf);
        frames.push(buf[..=cfg.max_bin()].to_vec());
    }
    Ok(frames)
}

/// Modulation spectrum of one contour at one analysis offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSpectrum {
    /// T' x (M+1) natural-log power values.
    pub log_power: Vec<Vec<f64>>,
    /// T' x (M+1) phases in (-pi, pi].
    pub phase: Vec<Vec<f64>>,
    pub config: StftConfig,
    pub offset: usize,
    /// Semitone mean removed before analysis.
    pub source_mean: f64,
    /// Original frame count, used to trim padding on reconstruction.
    pub source_length: usize,
    /// Carried from the source contour; not part of the serialized format.
    pub frame_shift_ms: f64,
}

impl ModulationSpectrum {
    pub fn n_segments(&self) -> usize {
        self.log_power.len()
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    fn check_shapes(&self) -> Result<()> {
        let bins = self.n_bins();
        if self.log_power.len() != self.phase.len()
            || self.log_power.is_empty()
            || self
                .log_power
                .iter()
                .chain(self.phase.iter())
                .any(|row| row.len() != bins)
        {
            return Err(Error::DimensionMismatch(
                "modulation spectrum matrices are inconsistent".into(),
            ));
        }
        Ok(())
    }
}

/// Extract the MS (log power + phase) of a mean-removed contour.
pub fn extract_ms(
    mrc: &MeanRemovedContour,
    cfg: &StftConfig,
    offset_frames: usize,
) -> Result<ModulationSpectrum> {
    let frames = stft(mrc, cfg, offset_frames)?;
    let mut log_power = Vec::with_capacity(frames.len());
    let mut phase = Vec::with_capacity(frames.len());
    for frame in &frames {
        let mut lp = Vec::with_capacity(frame.len());
        let mut ph = Vec::with_capacity(frame.len());
        for x in frame {
            lp.push((x.norm_sqr() + POWER_FLOOR).ln());
            ph.push(if x.norm() < PHASE_EPS { 0.0 } else { x.arg() });
        }
        log_power.push(lp);
        phase.push(ph);
    }
    Ok(ModulationSpectrum {
        log_power,
        phase,
        config: *cfg,
        offset: offset_frames,
        source_mean: mrc.mean(),
        source_length: mrc.len(),
        frame_shift_ms: mrc.frame_shift_ms(),
    })
}

/// Inverse STFT: rebuild the contour from (possibly modified) log power and
/// the stored phase, trim the analysis padding, and restore the mean.
///
/// The returned voicing mask is all-voiced; callers that track voicing
/// reattach the source mask.
pub fn reconstruct(ms: &ModulationSpectrum) -> Result<F0Contour> {
    ms.check_shapes()?;
    let w = ms.config.window_frames;
    let hop = ms.config.hop_frames;
    let m = ms.config.max_bin();
    let head = w - hop + ms.offset;
    let t_seg = ms.n_segments();

    let expected = n_segments(head, ms.source_length, hop);
    if t_seg != expected {
        return Err(Error::DimensionMismatch(format!(
            "{t_seg} segments cannot cover source_length {} (expected {expected})",
            ms.source_length
        )));
    }

    let (_, inv) = fft_pair(w);
    let window = hann_periodic(w);
    let mut acc = vec![0.0; (t_seg - 1) * hop + w];
    let mut norm = vec![0.0; acc.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); w];
    for seg in 0..t_seg {
        for bin in 0..=m {
            let mag = (ms.log_power[seg][bin].exp() - POWER_FLOOR).max(0.0).sqrt();
            buf[bin] = Complex::from_polar(mag, ms.phase[seg][bin]);
        }
        for bin in m + 1..w {
            buf[bin] = buf[w - bin].conj();
        }
        inv.process(&mut buf);
        let start = seg * hop;
        for i in 0..w {
            // Weighted overlap-add: the synthesis window tapers spectral
            // edits to zero at segment boundaries; rustfft's inverse is
            // unnormalized, hence the /w.
            acc[start + i] += window[i] * buf[i].re / w as f64;
            norm[start + i] += window[i] * window[i];
        }
    }

    let values = acc[head..head + ms.source_length]
        .iter()
        .zip(&norm[head..head + ms.source_length])
        .map(|(v, n)| v / n + ms.source_mean)
        .collect();
    F0Contour::new(values, vec![true; ms.source_length], ms.frame_shift_ms)
}

/// One MS per analysis offset in `0..hop`, the training-time augmentation.
pub fn augment_offsets(
    mrc: &MeanRemovedContour,
    cfg: &StftConfig,
) -> Result<Vec<ModulationSpectrum>> {
    (0..cfg.hop_frames)
        .map(|off| extract_ms(mrc, cfg, off))
        .collect()
}

/// Per-bin affine map of log-power values onto [0.01, 0.99], fitted on a
/// corpus of natural MS. Values outside the fitted range extrapolate
/// linearly; there is no clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct MsNormalizer {
    pub bin_min: Vec<f64>,
    pub bin_max: Vec<f64>,
}

pub const NORM_LO: f64 = 0.01;
pub const NORM_HI: f64 = 0.99;

impl MsNormalizer {
    pub fn fit(corpus: &[&ModulationSpectrum]) -> Result<Self> {
        let first = corpus.first().ok_or(Error::EmptyInput)?;
        let bins = first.n_bins();
        let mut bin_min = vec![f64::INFINITY; bins];
        let mut bin_max = vec![f64::NEG_INFINITY; bins];
        for ms in corpus {
            if ms.n_bins() != bins {
                return Err(Error::DimensionMismatch("mixed bin counts in corpus".into()));
            }
            for row in &ms.log_power {
                for (b, v) in row.iter().enumerate() {
                    bin_min[b] = bin_min[b].min(*v);
                    bin_max[b] = bin_max[b].max(*v);
                }
            }
        }
        for b in 0..bins {
            if !(bin_max[b] > bin_min[b]) {
                return Err(Error::DegenerateBin {
                    bin: b,
                    value: bin_min[b],
                });
            }
        }
        Ok(Self { bin_min, bin_max })
    }

    /// Fit over interior segments only, skipping the padding-floored edges.
    pub fn fit_interior(corpus: &[&ModulationSpectrum]) -> Result<Self> {
        let first = corpus.first().ok_or(Error::EmptyInput)?;
        let bins = first.n_bins();
        let mut bin_min = vec![f64::INFINITY; bins];
        let mut bin_max = vec![f64::NEG_INFINITY; bins];
        for ms in corpus {
            if ms.n_bins() != bins {
                return Err(Error::DimensionMismatch("mixed bin counts in corpus".into()));
            }
            for seg in interior_segments(ms.n_segments()) {
                for (b, v) in ms.log_power[seg].iter().enumerate() {
                    bin_min[b] = bin_min[b].min(*v);
                    bin_max[b] = bin_max[b].max(*v);
                }
            }
        }
        for b in 0..bins {
            if !(bin_max[b] > bin_min[b]) {
                return Err(Error::DegenerateBin {
                    bin: b,
                    value: bin_min[b],
                });
            }
        }
        Ok(Self { bin_min, bin_max })
    }

    pub fn n_bins(&self) -> usize {
        self.bin_min.len()
    }

    pub fn apply_value(&self, bin: usize, v: f64) -> f64 {
        let (lo, hi) = (self.bin_min[bin], self.bin_max[bin]);
        NORM_LO + (v - lo) / (hi - lo) * (NORM_HI - NORM_LO)
    }

    pub fn invert_value(&self, bin: usize, v: f64) -> f64 {
        let (lo, hi) = (self.bin_min[bin], self.bin_max[bin]);
        lo + (v - NORM_LO) / (NORM_HI - NORM_LO) * (hi - lo)
    }

    /// Normalize every log-power entry, leaving phase untouched.
    pub fn apply(&self, ms: &ModulationSpectrum) -> Result<ModulationSpectrum> {
        self.mapped(ms, |b, v| self.apply_value(b, v))
    }

    pub fn invert(&self, ms: &ModulationSpectrum) -> Result<ModulationSpectrum> {
        self.mapped(ms, |b, v| self.invert_value(b, v))
    }

    fn mapped(
        &self,
        ms: &ModulationSpectrum,
        f: impl Fn(usize, f64) -> f64,
    ) -> Result<ModulationSpectrum> {
        if ms.n_bins() != self.n_bins() {
            return Err(Error::DimensionMismatch(format!(
                "normalizer has {} bins, MS has {}",
                self.n_bins(),
                ms.n_bins()
            )));
        }
        let mut out = ms.clone();
        for row in &mut out.log_power {
            for (b, v) in row.iter_mut().enumerate() {
                *v = f(b, *v);
            }
        }
        Ok(out)
    }
}

const MS_HEADER: &str = "#MS v1";

/// Write the MS text format v1: header, T' log-power rows, T' phase rows.
pub fn write_ms<W: Write>(out: &mut W, ms: &ModulationSpectrum) -> Result<()> {
    ms.check_shapes()?;
    writeln!(
        out,
        "{MS_HEADER} T'={} M={} window={} hop={} offset={} mean={} srclen={}",
        ms.n_segments(),
        ms.config.max_bin(),
        ms.config.window_frames,
        ms.config.hop_frames,
        ms.offset,
        ms.source_mean,
        ms.source_length
    )?;
    for matrix in [&ms.log_power, &ms.phase] {
        for row in matrix {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

pub fn write_ms_file(path: &Path, ms: &ModulationSpectrum) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ms(&mut f, ms)
}

pub fn read_ms<R: BufRead>(input: R) -> Result<ModulationSpectrum> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty MS file".into()))??;
    let rest = header
        .strip_prefix(MS_HEADER)
        .ok_or_else(|| Error::Version(format!("expected `{MS_HEADER}` header, got `{header}`")))?;

    let mut fields = std::collections::HashMap::new();
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad MS header token `{tok}`")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        fields
            .get(k)
            .ok_or_else(|| Error::Parse(format!("MS header missing `{k}`")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Parse(format!("bad MS header field `{k}`")))
    };
    let t_seg = parse_usize("T'")?;
    let m = parse_usize("M")?;
    let window = parse_usize("window")?;
    let hop = parse_usize("hop")?;
    let offset = parse_usize("offset")?;
    let source_length = parse_usize("srclen")?;
    let source_mean: f64 = get("mean")?
        .parse()
        .map_err(|_| Error::Parse("bad MS header field `mean`".into()))?;
    let config = StftConfig::new(window, hop)?;
    if config.max_bin() != m {
        return Err(Error::Parse(format!(
            "header M={m} does not match window/2={}",
            config.max_bin()
        )));
    }

    let mut read_matrix = |name: &str| -> Result<Vec<Vec<f64>>> {
        let mut matrix = Vec::with_capacity(t_seg);
        for _ in 0..t_seg {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("truncated MS file in {name}")))??;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("bad float in {name} row")))?;
            if row.len() != m + 1 {
                return Err(Error::Parse(format!(
                    "{name} row has {} values, expected {}",
                    row.len(),
                    m + 1
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} row")));
            }
            matrix.push(row);
        }
        Ok(matrix)
    };
    let log_power = read_matrix("log_power")?;
    let phase = read_matrix("phase")?;

    Ok(ModulationSpectrum {
        log_power,
        phase,
        config,
        offset,
        source_mean,
        source_length,
        frame_shift_ms: DEFAULT_FRAME_SHIFT_MS,
    })
}

pub fn read_ms_file(path: &Path) -> Result<ModulationSpectrum> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_ms(f)
}
