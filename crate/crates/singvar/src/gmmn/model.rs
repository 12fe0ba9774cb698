//! GLU feed-forward generator with an input-to-output residual.
//!
//! The network maps [condition, noise] to a filtered MS value. Each hidden
//! layer computes (W1 x + b1) .* sigmoid(W2 x + b2); the final linear layer
//! adds the condition slice of the input, so a zero-weight network is the
//! identity on the condition.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GluLayer {
    pub lin_w: DMatrix<f64>,
    pub lin_b: DVector<f64>,
    pub gate_w: DMatrix<f64>,
    pub gate_b: DVector<f64>,
}

impl GluLayer {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            lin_w: DMatrix::zeros(out_dim, in_dim),
            lin_b: DVector::zeros(out_dim),
            gate_w: DMatrix::zeros(out_dim, in_dim),
            gate_b: DVector::zeros(out_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmnModel {
    pub cond_dim: usize,
    pub noise_dim: usize,
    pub layers: Vec<GluLayer>,
    pub out_w: DMatrix<f64>,
    pub out_b: DVector<f64>,
    pub seed: u64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn glorot_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}

impl GmmnModel {
    /// Glorot-uniform initialization from a recorded seed. Biases start at 0.
    pub fn new(
        cond_dim: usize,
        noise_dim: usize,
        hidden_units: usize,
        hidden_layers: usize,
        seed: u64,
    ) -> Result<Self> {
        if cond_dim == 0 || hidden_units == 0 || hidden_layers == 0 {
            return Err(Error::InvalidConfig(
                "cond_dim, hidden_units and hidden_layers must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden_layers);
        let mut in_dim = cond_dim + noise_dim;
        for _ in 0..hidden_layers {
            layers.push(GluLayer {
                lin_w: glorot_uniform(&mut rng, hidden_units, in_dim),
                lin_b: DVector::zeros(hidden_units),
                gate_w: glorot_uniform(&mut rng, hidden_units, in_dim),
                gate_b: DVector::zeros(hidden_units),
            });
            in_dim = hidden_units;
        }
        let out_w = glorot_uniform(&mut rng, cond_dim, hidden_units);
        Ok(Self {
            cond_dim,
            noise_dim,
            layers,
            out_w,
            out_b: DVector::zeros(cond_dim),
            seed,
        })
    }

    /// All-zero weights: the residual identity model.
    pub fn zeros(
        cond_dim: usize,
        noise_dim: usize,
        hidden_units: usize,
        hidden_layers: usize,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers);
        let mut in_dim = cond_dim + noise_dim;
        for _ in 0..hidden_layers {
            layers.push(GluLayer::zeros(hidden_units, in_dim));
            in_dim = hidden_units;
        }
        Self {
            cond_dim,
            noise_dim,
            layers,
            out_w: DMatrix::zeros(cond_dim, in_dim),
            out_b: DVector::zeros(cond_dim),
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.cond_dim + self.noise_dim
    }

    fn check_io(&self, cond: &[f64], noise: &[f64]) -> Result<()> {
        if cond.len() != self.cond_dim || noise.len() != self.noise_dim {
            return Err(Error::DimensionMismatch(format!(
                "model expects condition {} + noise {}, got {} + {}",
                self.cond_dim,
                self.noise_dim,
                cond.len(),
                noise.len()
            )));
        }
        if cond.iter().chain(noise).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, cond: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(cond, noise)?.output)
    }

    /// Forward pass keeping per-layer activations for backprop.
    pub fn forward_cached(&self, cond: &[f64], noise: &[f64]) -> Result<ForwardCache> {
        self.check_io(cond, noise)?;
        let mut x = DVector::from_iterator(
            self.input_dim(),
            cond.iter().chain(noise.iter()).copied(),
        );
        let mut acts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let u = &layer.lin_w * &x + &layer.lin_b;
            let v = &layer.gate_w * &x + &layer.gate_b;
            let s = v.map(sigmoid);
            let y = u.component_mul(&s);
            acts.push(LayerCache {
                input: x,
                linear: u,
                gate_sig: s,
            });
            x = y;
        }
        let mut out = &self.out_w * &x + &self.out_b;
        for i in 0..self.cond_dim {
            out[i] += cond[i];
        }
        Ok(ForwardCache {
            hidden: x,
            acts,
            output: out.iter().copied().collect(),
        })
    }

    /// Accumulate parameter gradients for one segment, given the gradient of
    /// the loss with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut GmmnGrads) {
        let d_out = DVector::from_column_slice(d_out);
        grads.out_w += &d_out * cache.hidden.transpose();
        grads.out_b += &d_out;
        let mut da = self.out_w.transpose() * &d_out;
        for (layer, (lc, g)) in self
            .layers
            .iter()
            .zip(cache.acts.iter().zip(grads.layers.iter_mut()))
            .rev()
        {
            let s = &lc.gate_sig;
            let du = da.component_mul(s);
            let dv = da
                .component_mul(&lc.linear)
                .component_mul(&s.map(|v| v * (1.0 - v)));
            g.lin_w += &du * lc.input.transpose();
            g.lin_b += &du;
            g.gate_w += &dv * lc.input.transpose();
            g.gate_b += &dv;
            da = layer.lin_w.transpose() * &du + layer.gate_w.transpose() * &dv;
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: DVector<f64>,
    pub linear: DVector<f64>,
    pub gate_sig: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<LayerCache>,
    pub hidden: DVector<f64>,
    pub output: Vec<f64>,
}

/// Parameter-shaped gradient (or accumulator) storage.
#[derive(Debug, Clone)]
pub struct GmmnGrads {
    pub layers: Vec<GluLayer>,
    pub out_w: DMatrix<f64>,
    pub out_b: DVector<f64>,
}

impl GmmnGrads {
    pub fn zeros_like(model: &GmmnModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| GluLayer::zeros(l.lin_w.nrows(), l.lin_w.ncols()))
                .collect(),
            out_w: DMatrix::zeros(model.out_w.nrows(), model.out_w.ncols()),
            out_b: DVector::zeros(model.out_b.nrows()),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.lin_w.fill(0.0);
            l.lin_b.fill(0.0);
            l.gate_w.fill(0.0);
            l.gate_b.fill(0.0);
        }
        self.out_w.fill(0.0);
        self.out_b.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmmn::noise::NoiseVector;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_weights_are_the_identity_on_the_condition() {
        let model = GmmnModel::zeros(3, 10, 16, 2);
        let noise = NoiseVector::generate(5, 0, 10);
        let cond = [0.3, -0.7, 0.11];
        let out = model.forward(&cond, &noise.0).unwrap();
        for (o, c) in out.iter().zip(cond.iter()) {
            assert_abs_diff_eq!(*o, *c, epsilon = 0.0);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = GmmnModel::new(1, 10, 32, 3, 9).unwrap();
        let noise = NoiseVector::generate(1, 3, 10);
        let a = model.forward(&[0.5], &noise.0).unwrap();
        let b = model.forward(&[0.5], &noise.0).unwrap();
        assert_eq!(a, b);
    }

    /// Independent hand-rolled forward pass on a tiny model.
    #[test]
    fn tiny_model_matches_hand_rolled_forward() {
        let mut model = GmmnModel::zeros(1, 1, 2, 1);
        // input dim 2 (1 cond + 1 noise), one hidden GLU of 2 units, output 1
        model.layers[0].lin_w = DMatrix::from_row_slice(2, 2, &[0.5, -0.2, 0.1, 0.4]);
        model.layers[0].lin_b = DVector::from_column_slice(&[0.05, -0.1]);
        model.layers[0].gate_w = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, -0.5, 0.6]);
        model.layers[0].gate_b = DVector::from_column_slice(&[0.0, 0.2]);
        model.out_w = DMatrix::from_row_slice(1, 2, &[1.5, -0.7]);
        model.out_b = DVector::from_column_slice(&[0.01]);

        let (c, n) = (0.4, -0.3);
        let out = model.forward(&[c], &[n]).unwrap()[0];

        // oracle: scalar arithmetic only
        let u = [
            0.5 * c + -0.2 * n + 0.05,
            0.1 * c + 0.4 * n + -0.1,
        ];
        let v = [0.3 * c + 0.2 * n, -0.5 * c + 0.6 * n + 0.2];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let h = [u[0] * sig(v[0]), u[1] * sig(v[1])];
        let expect = 1.5 * h[0] + -0.7 * h[1] + 0.01 + c;
        assert_abs_diff_eq!(out, expect, epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = GmmnModel::new(1, 10, 8, 1, 0).unwrap();
        assert!(matches!(
            model.forward(&[0.1, 0.2], &[0.0; 10]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            model.forward(&[0.1], &[0.0; 9]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn glu_reduces_to_linear_branch_when_gate_saturates() {
        let mut model = GmmnModel::zeros(1, 0, 4, 1);
        let mut rng_vals = [0.37, -0.81, 0.22, 0.6];
        model.layers[0].lin_w = DMatrix::from_column_slice(4, 1, &rng_vals);
        model.layers[0].gate_b = DVector::from_element(4, 50.0); // sigmoid ~ 1
        rng_vals.iter_mut().for_each(|v| *v *= 1.0);
        model.out_w = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]);
        let x = 0.9;
        let out = model.forward(&[x], &[]).unwrap()[0];
        let linear: f64 = rng_vals.iter().map(|w| w * x).sum::<f64>() + x;
        assert_abs_diff_eq!(out, linear, epsilon = 1e-6);
    }
}
