//! GMMN post-filter: perturb selected low-modulation-frequency MS bins of a
//! generated contour with sampled prior noise and resynthesize.
//!
//! Only the log power of the selected bins changes; every phase and every
//! unselected bin passes through the analysis untouched, so the filtered
//! contour stays continuous.

use std::path::Path;

use crate::error::{Error, Result};
use crate::f0::F0Contour;
use crate::gmmn::io::{load_model_file, save_model_with_blocks, Block};
use crate::gmmn::model::GmmnModel;
use crate::gmmn::noise::{derive_seed, NoiseVector};
use crate::modspec::{extract_ms, reconstruct, MsNormalizer, StftConfig};

/// Bin m=0 is never filtered by default: after mean removal it still carries
/// per-segment offsets whose perturbation would shift whole segments.
pub const DEFAULT_BINS: &[usize] = &[1];

#[derive(Debug, Clone, PartialEq)]
pub struct PostfilterConfig {
    /// Modulation-frequency bins replaced by the network.
    pub bins: Vec<usize>,
    /// Explicit noise seed; takes are addressed from it.
    pub noise_seed: u64,
    pub normalizer: MsNormalizer,
    pub stft: StftConfig,
}

impl PostfilterConfig {
    fn validate(&self, model: &GmmnModel) -> Result<()> {
        if self.bins.is_empty() && model.cond_dim != 0 {
            // empty bin set short-circuits to the identity; nothing to check
            return Ok(());
        }
        if model.cond_dim != self.bins.len() {
            return Err(Error::DimensionMismatch(format!(
                "model condition dim {} vs {} selected bins",
                model.cond_dim,
                self.bins.len()
            )));
        }
        if let Some(b) = self.bins.iter().find(|b| **b > self.stft.max_bin()) {
            return Err(Error::InvalidConfig(format!(
                "bin {b} exceeds max modulation bin {}",
                self.stft.max_bin()
            )));
        }
        if self.normalizer.n_bins() != self.stft.n_bins() {
            return Err(Error::DimensionMismatch(format!(
                "normalizer covers {} bins, STFT has {}",
                self.normalizer.n_bins(),
                self.stft.n_bins()
            )));
        }
        Ok(())
    }
}

/// Run the post-filter once: analysis at offset 0, per-segment replacement of
/// the selected bins, resynthesis with the original phase, voicing preserved.
pub fn filter_contour(
    model: &GmmnModel,
    contour: &F0Contour,
    cfg: &PostfilterConfig,
) -> Result<F0Contour> {
    cfg.validate(model)?;
    let mrc = contour.remove_mean();
    let mut ms = extract_ms(&mrc, &cfg.stft, 0)?;
    if !cfg.bins.is_empty() {
        for seg in 0..ms.n_segments() {
            let cond: Vec<f64> = cfg
                .bins
                .iter()
                .map(|&b| cfg.normalizer.apply_value(b, ms.log_power[seg][b]))
                .collect();
            let noise = NoiseVector::generate(cfg.noise_seed, seg, model.noise_dim);
            let out = model.forward(&cond, &noise.0)?;
            for (&b, v) in cfg.bins.iter().zip(&out) {
                ms.log_power[seg][b] = cfg.normalizer.invert_value(b, *v);
            }
        }
    }
    let filtered = reconstruct(&ms)?;
    F0Contour::new(
        filtered.values().to_vec(),
        contour.voicing().to_vec(),
        contour.frame_shift_ms(),
    )
}

/// Deterministic per-take seed: take i of base seed s is addressable as
/// derive_seed(s, i).
pub fn take_seed(noise_seed: u64, take: usize) -> u64 {
    derive_seed(noise_seed, take as u64)
}

/// Draw `n_takes` independent filtered contours, one per derived take seed.
pub fn sample_variations(
    model: &GmmnModel,
    contour: &F0Contour,
    cfg: &PostfilterConfig,
    n_takes: usize,
) -> Result<Vec<F0Contour>> {
    if n_takes == 0 {
        return Err(Error::InvalidConfig("n_takes must be >= 1".into()));
    }
    (0..n_takes)
        .map(|i| {
            let take_cfg = PostfilterConfig {
                noise_seed: take_seed(cfg.noise_seed, i),
                ..cfg.clone()
            };
            filter_contour(model, contour, &take_cfg)
        })
        .collect()
}

/// A trained post-filter as stored on disk: the network plus the bin
/// selection and the normalizer ranges it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct PostfilterModel {
    pub gmmn: GmmnModel,
    pub bins: Vec<usize>,
    pub normalizer: MsNormalizer,
}

impl PostfilterModel {
    pub fn config(&self, noise_seed: u64, stft: StftConfig) -> PostfilterConfig {
        PostfilterConfig {
            bins: self.bins.clone(),
            noise_seed,
            normalizer: self.normalizer.clone(),
            stft,
        }
    }
}

pub fn save_postfilter(path: &Path, pf: &PostfilterModel) -> Result<()> {
    let bins: Vec<f64> = pf.bins.iter().map(|b| *b as f64).collect();
    let extras = vec![
        Block::from_values("pf.bins", &bins),
        Block::from_values("pf.norm.min", &pf.normalizer.bin_min),
        Block::from_values("pf.norm.max", &pf.normalizer.bin_max),
    ];
    save_model_with_blocks(path, &pf.gmmn, &extras)
}

pub fn load_postfilter(path: &Path) -> Result<PostfilterModel> {
    let file = load_model_file(path)?;
    let get = |name: &str| -> Result<&Block> {
        file.extras
            .get(name)
            .ok_or_else(|| Error::Parse(format!("model file missing block `{name}`")))
    };
    let bins: Vec<usize> = get("pf.bins")?.data.iter().map(|v| *v as usize).collect();
    let normalizer = MsNormalizer {
        bin_min: get("pf.norm.min")?.data.clone(),
        bin_max: get("pf.norm.max")?.data.clone(),
    };
    if normalizer.bin_min.len() != normalizer.bin_max.len() {
        return Err(Error::Parse("normalizer blocks disagree on bin count".into()));
    }
    Ok(PostfilterModel {
        gmmn: file.model,
        bins,
        normalizer,
    })
}
