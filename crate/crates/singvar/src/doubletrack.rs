//! Artificial and neural double-tracking.
//!
//! ADT modulates the pitch contour with a sine LFO; NDT modulates it with the
//! GMMN post-filter. Either way the modulated track is synthesized, delayed,
//! attenuated and mixed under the original. Synthesis uses a simple additive
//! harmonic generator; it stands in for a full vocoder so pitch differences
//! are audible and measurable.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::f0::{semitone_to_hz, F0Contour};
use crate::gmmn::model::GmmnModel;
use crate::postfilter::{filter_contour, PostfilterConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdtConfig {
    pub lfo_rate_hz: f64,
    /// Peak amplitude of the LFO in semitones (0.1 = 10% of a semitone).
    pub lfo_depth_semitones: f64,
    pub lfo_phase_rad: f64,
}

impl Default for AdtConfig {
    fn default() -> Self {
        Self {
            lfo_rate_hz: 0.775,
            lfo_depth_semitones: 0.1,
            lfo_phase_rad: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    pub delay_ms: f64,
    /// Gain applied to the modulated (secondary) track. NEG_INFINITY mutes it.
    pub gain_db: f64,
    pub sample_rate_hz: u32,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            delay_ms: 20.0,
            gain_db: -3.0,
            sample_rate_hz: 16000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_harmonics: usize,
    pub amp_rolloff: f64,
    pub sample_rate_hz: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_harmonics: 10,
            amp_rolloff: 0.7,
            sample_rate_hz: 16000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    /// Samples clamped into [-1, 1] during mixing; never silently dropped.
    pub clipped: usize,
}

impl Waveform {
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Add a sine LFO to the contour in the semitone domain. Voicing unchanged.
pub fn adt_modulate(contour: &F0Contour, cfg: &AdtConfig) -> Result<F0Contour> {
    if !(cfg.lfo_rate_hz > 0.0) || cfg.lfo_depth_semitones < 0.0 {
        return Err(Error::InvalidConfig(
            "ADT requires rate > 0 and depth >= 0".into(),
        ));
    }
    let dt = contour.frame_shift_ms() / 1000.0;
    let values = contour
        .values()
        .iter()
        .enumerate()
        .map(|(t, v)| {
            v + cfg.lfo_depth_semitones
                * (2.0 * std::f64::consts::PI * cfg.lfo_rate_hz * t as f64 * dt
                    + cfg.lfo_phase_rad)
                    .sin()
        })
        .collect();
    F0Contour::new(values, contour.voicing().to_vec(), contour.frame_shift_ms())
}

/// Additive harmonic synthesis with per-sample f0 interpolation.
///
/// Harmonic h gets amplitude rolloff^(h-1) and phase h times the integrated
/// base phase, which keeps every partial phase-continuous. Unvoiced frames
/// are silent with 5 ms linear fades; the result is peak-normalized to 0.9.
pub fn synthesize_harmonic(contour: &F0Contour, cfg: &SynthConfig) -> Result<Waveform> {
    if cfg.n_harmonics == 0 || !(cfg.amp_rolloff > 0.0) || cfg.sample_rate_hz == 0 {
        return Err(Error::InvalidConfig("bad synthesizer parameters".into()));
    }
    let sr = cfg.sample_rate_hz as f64;
    let frame_hz: Vec<f64> = contour.values().iter().map(|v| semitone_to_hz(*v)).collect();
    for (hz, voiced) in frame_hz.iter().zip(contour.voicing()) {
        if *voiced && !(50.0..=2000.0).contains(hz) {
            return Err(Error::F0OutOfRange(*hz));
        }
    }

    let frame_len = contour.frame_shift_ms() / 1000.0 * sr;
    let n_samples = (contour.len() as f64 * frame_len).round() as usize;
    let fade_step = 1.0 / (0.005 * sr); // 5 ms linear fades
    let nyquist = sr / 2.0;

    let mut samples = Vec::with_capacity(n_samples);
    let mut phase = 0.0f64;
    let mut env: f64 = if contour.voicing()[0] { 1.0 } else { 0.0 };
    for s in 0..n_samples {
        let pos = s as f64 / frame_len;
        let i = (pos.floor() as usize).min(contour.len() - 1);
        let j = (i + 1).min(contour.len() - 1);
        let frac = pos - i as f64;
        let hz = frame_hz[i] * (1.0 - frac) + frame_hz[j] * frac;

        phase += 2.0 * std::f64::consts::PI * hz / sr;
        let target = if contour.voicing()[i] { 1.0 } else { 0.0 };
        env += (target - env).clamp(-fade_step, fade_step);

        let mut v = 0.0;
        let mut amp = 1.0;
        for h in 1..=cfg.n_harmonics {
            if h as f64 * hz >= nyquist {
                break;
            }
            v += amp * (h as f64 * phase).sin();
            amp *= cfg.amp_rolloff;
        }
        samples.push(env * v);
    }

    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let k = 0.9 / peak;
        for s in &mut samples {
            *s *= k;
        }
    }
    Ok(Waveform {
        samples,
        sample_rate_hz: cfg.sample_rate_hz,
        clipped: 0,
    })
}

/// Mix the delayed, attenuated secondary under the primary.
pub fn mix_tracks(primary: &Waveform, secondary: &Waveform, cfg: &MixConfig) -> Result<Waveform> {
    if primary.sample_rate_hz != secondary.sample_rate_hz {
        return Err(Error::SampleRateMismatch(
            primary.sample_rate_hz,
            secondary.sample_rate_hz,
        ));
    }
    if cfg.delay_ms < 0.0 {
        return Err(Error::InvalidConfig("delay must be >= 0".into()));
    }
    let sr = primary.sample_rate_hz as f64;
    let shift = (cfg.delay_ms * sr / 1000.0).round() as usize;
    let gain = if cfg.gain_db == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(cfg.gain_db / 20.0)
    };

    let len = primary.samples.len().max(shift + secondary.samples.len());
    let mut samples = vec![0.0; len];
    samples[..primary.samples.len()].copy_from_slice(&primary.samples);
    for (i, s) in secondary.samples.iter().enumerate() {
        samples[shift + i] += gain * s;
    }
    let mut clipped = 0;
    for s in &mut samples {
        if s.abs() > 1.0 {
            clipped += 1;
            *s = s.clamp(-1.0, 1.0);
        }
    }
    if clipped > 0 {
        log::warn!("mix clipped {clipped} samples");
    }
    Ok(Waveform {
        samples,
        sample_rate_hz: primary.sample_rate_hz,
        clipped,
    })
}

/// ADT render: original track mixed with its LFO-modulated copy.
pub fn render_adt(
    contour: &F0Contour,
    adt: &AdtConfig,
    mix: &MixConfig,
    synth: &SynthConfig,
) -> Result<Waveform> {
    let primary = synthesize_harmonic(contour, synth)?;
    let secondary = synthesize_harmonic(&adt_modulate(contour, adt)?, synth)?;
    mix_tracks(&primary, &secondary, mix)
}

/// NDT render: original track mixed with its post-filtered copy.
pub fn render_ndt(
    model: &GmmnModel,
    contour: &F0Contour,
    pf: &PostfilterConfig,
    mix: &MixConfig,
    synth: &SynthConfig,
) -> Result<Waveform> {
    let primary = synthesize_harmonic(contour, synth)?;
    let secondary = synthesize_harmonic(&filter_contour(model, contour, pf)?, synth)?;
    mix_tracks(&primary, &secondary, mix)
}

/// Write mono 16-bit signed PCM RIFF.
pub fn write_wav<W: Write>(out: &mut W, wave: &Waveform) -> Result<()> {
    let data_len = (wave.samples.len() * 2) as u32;
    let sr = wave.sample_rate_hz;
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?; // PCM
    out.write_all(&1u16.to_le_bytes())?; // mono
    out.write_all(&sr.to_le_bytes())?;
    out.write_all(&(sr * 2).to_le_bytes())?; // byte rate
    out.write_all(&2u16.to_le_bytes())?; // block align
    out.write_all(&16u16.to_le_bytes())?; // bits per sample
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    for s in &wave.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.write_all(&q.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_wav_file(path: &Path, wave: &Waveform) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wav(&mut f, wave)
}

pub fn read_wav<R: Read>(input: &mut R) -> Result<Waveform> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let err = |m: &str| Error::Parse(format!("wav: {m}"));
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err("not a RIFF/WAVE file"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at =
        |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    // walk chunks for fmt and data
    let mut pos = 12;
    let mut sample_rate = None;
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(err("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if u16_at(body) != 1 || u16_at(body + 2) != 1 || u16_at(body + 14) != 16 {
                    return Err(err("only mono 16-bit PCM is supported"));
                }
                sample_rate = Some(u32_at(body + 4));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        pos = body + size + (size % 2);
    }
    let sr = sample_rate.ok_or_else(|| err("missing fmt chunk"))?;
    let (start, size) = data.ok_or_else(|| err("missing data chunk"))?;
    let samples = bytes[start..start + size]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate_hz: sr,
        clipped: 0,
    })
}

pub fn read_wav_file(path: &Path) -> Result<Waveform> {
    let mut f = std::fs::File::open(path)?;
    read_wav(&mut f)
}
