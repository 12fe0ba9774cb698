//! Synthetic paired corpus: a deterministic "generated" contour and
//! randomized "natural" takes rendered from the same score.
//!
//! Natural takes add vibrato, note-boundary overshoot and low-passed drift on
//! top of the smoothed note step function; the generated contour is the same
//! renderer with every style parameter pinned at its distribution mean and no
//! drift. Shared note timing keeps segments aligned across takes by
//! construction.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::f0::{read_f0_file, write_f0_file, F0Contour, DEFAULT_FRAME_SHIFT_MS};
use crate::gmmn::noise::derive_seed;
use crate::modspec::{augment_offsets, interior_segments, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Note {
    pub midi_pitch: i32,
    pub duration_ms: f64,
    pub rest: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub notes: Vec<Note>,
}

impl Score {
    pub fn total_duration_ms(&self) -> f64 {
        self.notes.iter().map(|n| n.duration_ms).sum()
    }
}

/// Minimum score duration: two default STFT windows (2 * 480 ms).
const MIN_SCORE_MS: f64 = 960.0;

/// Deterministic random score: stepwise-biased pitch walk in [40, 90],
/// durations in [200, 1000] ms, occasional rests.
pub fn gen_score(seed: u64, n_notes: usize) -> Result<Score> {
    if n_notes == 0 {
        return Err(Error::InvalidConfig("n_notes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pitch: i32 = rng.gen_range(55..=75);
    let mut notes = Vec::with_capacity(n_notes);
    for i in 0..n_notes {
        let step: i32 = if rng.gen_bool(0.8) {
            rng.gen_range(-2..=2)
        } else {
            rng.gen_range(-7..=7)
        };
        pitch = (pitch + step).clamp(40, 90);
        let rest = i > 0 && rng.gen_bool(0.1);
        notes.push(Note {
            midi_pitch: pitch,
            duration_ms: rng.gen_range(200.0..1000.0),
            rest,
        });
    }
    // pad the last sung note so even a single-note score covers two windows
    let total: f64 = notes.iter().map(|n| n.duration_ms).sum();
    if total < MIN_SCORE_MS {
        if let Some(n) = notes.iter_mut().rev().find(|n| !n.rest) {
            n.duration_ms += MIN_SCORE_MS - total;
        }
    }
    Ok(Score { notes })
}

/// Per-take rendering style. Field ranges are artifact choices sized so the
/// variation is measurable at the modulation-spectrum level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalStyle {
    pub vibrato_rate_hz: f64,
    pub vibrato_depth_semitones: f64,
    pub vibrato_phase_rad: f64,
    pub overshoot_semitones: f64,
    pub drift_std_semitones: f64,
    pub seed: u64,
}

impl NaturalStyle {
    /// Draw a style from the documented ranges.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            vibrato_rate_hz: rng.gen_range(5.0..7.0),
            vibrato_depth_semitones: rng.gen_range(0.2..0.8),
            vibrato_phase_rad: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
            overshoot_semitones: rng.gen_range(0.0..0.5),
            drift_std_semitones: rng.gen_range(0.05..0.2),
            seed,
        }
    }

    /// Distribution means, zero drift, zero phase: the deterministic style.
    pub fn mean() -> Self {
        Self {
            vibrato_rate_hz: 6.0,
            vibrato_depth_semitones: 0.5,
            vibrato_phase_rad: 0.0,
            overshoot_semitones: 0.25,
            drift_std_semitones: 0.0,
            seed: 0,
        }
    }
}

/// Render a contour: note step function, second-order smoothing (40 ms time
/// constant), boundary overshoot, vibrato, drift. Rests become unvoiced
/// frames with interpolated values so the contour stays continuous.
pub fn render_natural(score: &Score, style: &NaturalStyle) -> Result<F0Contour> {
    let dt = DEFAULT_FRAME_SHIFT_MS / 1000.0;
    let total_frames = (score.total_duration_ms() / DEFAULT_FRAME_SHIFT_MS).round() as usize;
    if total_frames == 0 {
        return Err(Error::EmptyInput);
    }

    // step function + note boundary bookkeeping
    let mut step = Vec::with_capacity(total_frames);
    let mut voicing = Vec::with_capacity(total_frames);
    let mut onsets: Vec<(usize, f64)> = Vec::new(); // (frame, pitch jump)
    let mut cursor_ms = 0.0;
    let mut prev_pitch: Option<f64> = None;
    for note in &score.notes {
        let start = (cursor_ms / DEFAULT_FRAME_SHIFT_MS).round() as usize;
        cursor_ms += note.duration_ms;
        let end = ((cursor_ms / DEFAULT_FRAME_SHIFT_MS).round() as usize).min(total_frames);
        let pitch = note.midi_pitch as f64;
        if !note.rest {
            if let Some(p) = prev_pitch {
                if start < total_frames && (pitch - p).abs() > 0.0 {
                    onsets.push((start, pitch - p));
                }
            }
            prev_pitch = Some(pitch);
        }
        for _ in start..end {
            step.push(prev_pitch.unwrap_or(pitch));
            voicing.push(!note.rest && prev_pitch.is_some());
        }
    }
    step.resize(total_frames, *step.last().unwrap_or(&60.0));
    voicing.resize(total_frames, voicing.last().copied().unwrap_or(true));
    if !voicing.iter().any(|v| *v) {
        return Err(Error::NoVoicedFrames);
    }

    // second-order smoothing: one-pole applied twice, 40 ms time constant
    let alpha = 1.0 - (-dt / 0.040).exp();
    let mut smooth = step.clone();
    for _ in 0..2 {
        let mut y = smooth[0];
        for v in smooth.iter_mut() {
            y += alpha * (*v - y);
            *v = y;
        }
    }

    // overshoot: decaying bump after each pitch jump (80 ms decay)
    for &(frame, jump) in &onsets {
        let mag = style.overshoot_semitones * jump.signum();
        for t in frame..total_frames {
            let age = (t - frame) as f64 * dt;
            if age > 0.4 {
                break;
            }
            smooth[t] += mag * (-age / 0.080).exp();
        }
    }

    // vibrato
    for (t, v) in smooth.iter_mut().enumerate() {
        *v += style.vibrato_depth_semitones
            * (2.0 * std::f64::consts::PI * style.vibrato_rate_hz * t as f64 * dt
                + style.vibrato_phase_rad)
                .sin();
    }

    // drift: low-passed white noise rescaled to the target std
    if style.drift_std_semitones > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(style.seed, 0xD21F7));
        let alpha_d = 1.0 - (-dt / 0.120).exp();
        let mut y = 0.0;
        let drift: Vec<f64> = (0..total_frames)
            .map(|_| {
                y += alpha_d * (rng.gen_range(-1.0..1.0) - y);
                y
            })
            .collect();
        let mean = drift.iter().sum::<f64>() / total_frames as f64;
        let std =
            (drift.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / total_frames as f64).sqrt();
        if std > 0.0 {
            let k = style.drift_std_semitones / std;
            for (v, d) in smooth.iter_mut().zip(&drift) {
                *v += k * (d - mean);
            }
        }
    }

    // rest frames take the interpolated values the file format reproduces,
    // so a corpus written to disk and read back matches the in-memory one
    let voiced_idx: Vec<usize> = voicing
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(i, _)| i)
        .collect();
    let first = voiced_idx[0];
    let last = *voiced_idx.last().unwrap();
    for i in 0..first {
        smooth[i] = smooth[first];
    }
    for i in last + 1..total_frames {
        smooth[i] = smooth[last];
    }
    for w in voiced_idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a > 1 {
            let step = (smooth[b] - smooth[a]) / (b - a) as f64;
            for i in a + 1..b {
                smooth[i] = smooth[a] + step * (i - a) as f64;
            }
        }
    }

    F0Contour::new(smooth, voicing, DEFAULT_FRAME_SHIFT_MS)
}

/// The deterministic contour a conventional synthesizer would emit: one fixed
/// output per score.
pub fn render_generated(score: &Score) -> Result<F0Contour> {
    render_natural(score, &NaturalStyle::mean())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSong {
    pub id: usize,
    pub generated: F0Contour,
    pub naturals: Vec<F0Contour>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub songs: Vec<CorpusSong>,
}

const STREAM_SCORE: u64 = 0x5C02E;
const STREAM_STYLE: u64 = 0x57A1E;

/// Build a paired corpus: one generated contour and `takes_per_song` natural
/// takes per song, all deterministic from `seed`.
pub fn build_corpus(
    n_songs: usize,
    takes_per_song: usize,
    seed: u64,
    n_notes: usize,
) -> Result<Corpus> {
    if n_songs == 0 || takes_per_song == 0 {
        return Err(Error::InvalidConfig(
            "n_songs and takes_per_song must be >= 1".into(),
        ));
    }
    let mut songs = Vec::with_capacity(n_songs);
    for id in 0..n_songs {
        let score = gen_score(derive_seed(derive_seed(seed, STREAM_SCORE), id as u64), n_notes)?;
        let generated = render_generated(&score)?;
        let naturals = (0..takes_per_song)
            .map(|k| {
                let style_seed =
                    derive_seed(derive_seed(seed, STREAM_STYLE), (id * 1_000_003 + k) as u64);
                render_natural(&score, &NaturalStyle::sample(style_seed))
            })
            .collect::<Result<_>>()?;
        songs.push(CorpusSong {
            id,
            generated,
            naturals,
        });
    }
    Ok(Corpus { songs })
}

impl Corpus {
    /// Segment-aligned (condition, target) pairs over all takes and all STFT
    /// offsets: condition = generated-MS values at the selected bins, target =
    /// natural-MS values at the same segment and offset. Only interior
    /// segments contribute; edge segments sit at the padding floor. Raw log
    /// power; the caller normalizes.
    pub fn training_pairs(
        &self,
        cfg: &StftConfig,
        bins: &[usize],
    ) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let mut pairs = Vec::new();
        for song in &self.songs {
            if song.generated.len() < cfg.window_frames {
                return Err(Error::InvalidConfig(format!(
                    "song {} is shorter than one analysis window",
                    song.id
                )));
            }
            let gen_ms = augment_offsets(&song.generated.remove_mean(), cfg)?;
            for take in &song.naturals {
                let nat_ms = augment_offsets(&take.remove_mean(), cfg)?;
                for (g, n) in gen_ms.iter().zip(&nat_ms) {
                    for seg in interior_segments(g.n_segments().min(n.n_segments())) {
                        let cond = bins.iter().map(|&b| g.log_power[seg][b]).collect();
                        let target = bins.iter().map(|&b| n.log_power[seg][b]).collect();
                        pairs.push((cond, target));
                    }
                }
            }
        }
        Ok(pairs)
    }
}

const MANIFEST_HEADER: &str = "#CORPUS v1";

/// Write all contours as F0 files plus a manifest listing them.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(MANIFEST_HEADER);
    manifest.push('\n');
    manifest.push_str(&format!(
        "songs {} takes {}\n",
        corpus.songs.len(),
        corpus.songs.first().map_or(0, |s| s.naturals.len())
    ));
    for song in &corpus.songs {
        let gen_name = format!("song{}_gen.f0", song.id);
        write_f0_file(&dir.join(&gen_name), &song.generated)?;
        let mut line = format!("song {} generated {gen_name} natural", song.id);
        for (k, take) in song.naturals.iter().enumerate() {
            let name = format!("song{}_nat{}.f0", song.id, k);
            write_f0_file(&dir.join(&name), take)?;
            line.push(' ');
            line.push_str(&name);
        }
        manifest.push_str(&line);
        manifest.push('\n');
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Manifest entry: paths are relative to the corpus directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestSong {
    pub id: usize,
    pub generated: PathBuf,
    pub naturals: Vec<PathBuf>,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestSong>> {
    let file = std::fs::File::open(dir.join("manifest.txt"))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty manifest".into()))??;
    if header.trim() != MANIFEST_HEADER {
        return Err(Error::Version(format!("bad manifest header `{header}`")));
    }
    let mut songs = Vec::new();
    for line in lines {
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() || toks[0] == "songs" {
            continue;
        }
        if toks.len() < 6 || toks[0] != "song" || toks[2] != "generated" || toks[4] != "natural" {
            return Err(Error::Parse(format!("bad manifest line `{line}`")));
        }
        let id: usize = toks[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad song id in `{line}`")))?;
        songs.push(ManifestSong {
            id,
            generated: dir.join(toks[3]),
            naturals: toks[5..].iter().map(|t| dir.join(t)).collect(),
        });
    }
    if songs.is_empty() {
        return Err(Error::Parse("manifest lists no songs".into()));
    }
    Ok(songs)
}

/// Load a corpus previously written by [`write_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let songs = read_manifest(dir)?
        .into_iter()
        .map(|m| {
            Ok(CorpusSong {
                id: m.id,
                generated: read_f0_file(&m.generated)?,
                naturals: m
                    .naturals
                    .iter()
                    .map(|p| read_f0_file(p))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Corpus { songs })
}
