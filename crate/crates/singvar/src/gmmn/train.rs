//! CMMD training loop with AdaGrad.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gmmn::cmmd::{
    condition_weight_exact, condition_weight_rff, grad_given_weight, loss_given_weight,
    CmmdConfig, CmmdMode, RffBasis,
};
use crate::gmmn::model::{GmmnGrads, GmmnModel};
use crate::gmmn::noise::{derive_seed, NoiseVector, NOISE_DIM};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Stream labels for seed derivation, so initialization, the fixed training
/// noise table and the RFF basis draw from independent streams.
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN_NOISE: u64 = 2;
const STREAM_RFF: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub cmmd: CmmdConfig,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub noise_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cmmd: CmmdConfig::default(),
            hidden_units: 128,
            hidden_layers: 3,
            noise_dim: NOISE_DIM,
            learning_rate: 0.005,
            epochs: 10,
            batch_size: 13000,
        }
    }
}

/// One AdaGrad update over a parameter tensor (flattened view):
/// acc += g^2; w -= lr * g / (sqrt(acc) + eps).
pub fn adagrad_step(param: &mut [f64], acc: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(acc.len(), grad.len());
    for ((w, a), g) in param.iter_mut().zip(acc.iter_mut()).zip(grad) {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient value {g}")));
        }
        *a += g * g;
        *w -= lr * g / (a.sqrt() + ADAGRAD_EPS);
    }
    Ok(())
}

/// Mutable training state: AdaGrad accumulators plus the noise table that is
/// generated once per segment and reused every epoch.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub acc: GmmnGrads,
    pub learning_rate: f64,
    pub epoch: usize,
    pub noise_table: Vec<NoiseVector>,
}

impl TrainState {
    pub fn new(model: &GmmnModel, lr: f64, n_segments: usize, noise_seed: u64) -> Self {
        Self {
            acc: GmmnGrads::zeros_like(model),
            learning_rate: lr,
            epoch: 0,
            noise_table: (0..n_segments)
                .map(|seg| NoiseVector::generate(noise_seed, seg, model.noise_dim))
                .collect(),
        }
    }

    fn apply(&mut self, model: &mut GmmnModel, grads: &GmmnGrads) -> Result<()> {
        let lr = self.learning_rate;
        for (l, (g, a)) in model
            .layers
            .iter_mut()
            .zip(grads.layers.iter().zip(self.acc.layers.iter_mut()))
        {
            adagrad_step(l.lin_w.as_mut_slice(), a.lin_w.as_mut_slice(), g.lin_w.as_slice(), lr)?;
            adagrad_step(l.lin_b.as_mut_slice(), a.lin_b.as_mut_slice(), g.lin_b.as_slice(), lr)?;
            adagrad_step(l.gate_w.as_mut_slice(), a.gate_w.as_mut_slice(), g.gate_w.as_slice(), lr)?;
            adagrad_step(l.gate_b.as_mut_slice(), a.gate_b.as_mut_slice(), g.gate_b.as_slice(), lr)?;
        }
        adagrad_step(
            model.out_w.as_mut_slice(),
            self.acc.out_w.as_mut_slice(),
            grads.out_w.as_slice(),
            lr,
        )?;
        adagrad_step(
            model.out_b.as_mut_slice(),
            self.acc.out_b.as_mut_slice(),
            grads.out_b.as_slice(),
            lr,
        )
    }
}

/// Train a GMMN on pre-normalized (condition, natural target) segment pairs.
///
/// Deterministic given (pairs, cfg, seed): initialization, the per-segment
/// noise table and the RFF basis all derive from `seed`. Returns the model
/// and the mean batch loss per epoch.
pub fn train(
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(GmmnModel, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    cfg.cmmd.validate()?;
    let cond_dim = pairs[0].0.len();
    if pairs.iter().any(|(c, t)| c.len() != cond_dim || t.len() != cond_dim) {
        return Err(Error::DimensionMismatch(
            "all pairs must share the condition dimensionality".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
    }

    let mut model = GmmnModel::new(
        cond_dim,
        cfg.noise_dim,
        cfg.hidden_units,
        cfg.hidden_layers,
        derive_seed(seed, STREAM_INIT),
    )?;
    let mut state = TrainState::new(
        &model,
        cfg.learning_rate,
        pairs.len(),
        derive_seed(seed, STREAM_TRAIN_NOISE),
    );
    let basis = match cfg.cmmd.mode {
        CmmdMode::Rff => Some(RffBasis::new(
            cond_dim,
            cfg.cmmd.rff_dim,
            cfg.cmmd.sigma_in,
            derive_seed(seed, STREAM_RFF),
        )?),
        CmmdMode::Exact => None,
    };

    let batch = cfg.batch_size.min(pairs.len());
    let mut grads = GmmnGrads::zeros_like(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, chunk) in pairs.chunks(batch).enumerate() {
            let seg0 = batch_idx * batch;
            if chunk.len() < 2 && cfg.cmmd.mode == CmmdMode::Exact {
                log::warn!("batch {batch_idx} has a single segment; CMMD is still defined");
            }

            let cond: Vec<Vec<f64>> = chunk.iter().map(|(c, _)| c.clone()).collect();
            let nat: Vec<Vec<f64>> = chunk.iter().map(|(_, t)| t.clone()).collect();
            let caches: Vec<_> = chunk
                .iter()
                .enumerate()
                .map(|(i, (c, _))| {
                    model.forward_cached(c, &state.noise_table[seg0 + i].0)
                })
                .collect::<Result<_>>()?;
            let filt: Vec<Vec<f64>> = caches.iter().map(|c| c.output.clone()).collect();

            let weight: DMatrix<f64> = match &basis {
                Some(b) => condition_weight_rff(&cond, &cfg.cmmd, b)?,
                None => condition_weight_exact(&cond, &cfg.cmmd)?,
            };
            let loss = loss_given_weight(&weight, &nat, &filt, cfg.cmmd.sigma_out)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            epoch_loss += loss;
            n_batches += 1;

            let out_grads = grad_given_weight(&weight, &nat, &filt, cfg.cmmd.sigma_out);
            grads.fill_zero();
            for (cache, g) in caches.iter().zip(&out_grads) {
                model.backward(cache, g, &mut grads);
            }
            state.apply(&mut model, &grads)?;
        }
        state.epoch = epoch + 1;
        history.push(epoch_loss / n_batches as f64);
    }
    Ok((model, history))
}
