//! Conditional maximum mean discrepancy.
//!
//! The training loss between natural and filtered MS sample sets, reweighted
//! by the regularized inverse Gram matrix of the shared conditions:
//!
//!   L_cmmd = (1/T'^2) { tr(L K_nn) + tr(L K_ff) - 2 tr(L K_nf) }
//!   L = Htilde^-1 H Htilde^-1,  Htilde = H + lambda I
//!
//! where H is the condition Gram matrix (bandwidth sigma_in) and the K
//! matrices are natural/filtered Gram matrices (bandwidth sigma_out). L
//! depends only on the conditions, so it is a constant during backprop.
//! The RFF path approximates H with random Fourier features and inverts
//! Htilde through the Woodbury identity.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::gmmn::kernel::{gaussian_kernel, gram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmmdMode {
    Exact,
    Rff,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmmdConfig {
    /// Ridge regularizer on the condition Gram matrix.
    pub lambda: f64,
    /// Bandwidth of the condition (input) kernel.
    pub sigma_in: f64,
    /// Bandwidth of the output kernel.
    pub sigma_out: f64,
    /// Random Fourier feature dimensionality for the approximate path.
    pub rff_dim: usize,
    pub mode: CmmdMode,
}

impl Default for CmmdConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            sigma_in: 100.0,
            sigma_out: 1.0,
            rff_dim: 1024,
            mode: CmmdMode::Exact,
        }
    }
}

impl CmmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.sigma_in > 0.0 && self.sigma_out > 0.0)
            || self.rff_dim == 0
        {
            return Err(Error::InvalidConfig(
                "cmmd requires lambda > 0, sigma > 0, rff_dim >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_sets(cond: &[Vec<f64>], nat: &[Vec<f64>], filt: &[Vec<f64>]) -> Result<()> {
    if cond.is_empty() {
        return Err(Error::EmptyInput);
    }
    if cond.len() != nat.len() || cond.len() != filt.len() {
        return Err(Error::DimensionMismatch(format!(
            "segment counts differ: cond {}, natural {}, filtered {}",
            cond.len(),
            nat.len(),
            filt.len()
        )));
    }
    Ok(())
}

/// Exact condition weight matrix L = Htilde^-1 H Htilde^-1.
pub fn condition_weight_exact(cond: &[Vec<f64>], cfg: &CmmdConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let t = cond.len();
    let h = gram(cond, cond, cfg.sigma_in)?;
    let mut h_tilde = h.clone();
    for i in 0..t {
        h_tilde[(i, i)] += cfg.lambda;
    }
    let chol = h_tilde
        .cholesky()
        .ok_or_else(|| Error::NonFinite("condition Gram matrix is not SPD".into()))?;
    let a = chol.solve(&h); // Htilde^-1 H
    let l = chol.solve(&a.transpose()); // Htilde^-1 (H Htilde^-1)
    Ok(symmetrize(l))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = &m.transpose();
    (m + t) * 0.5
}

/// Trace of L * K where K[i][j] = k(A_i, B_j): sum_ij L_ij K_ji.
fn trace_product(l: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    let t = l.nrows();
    let mut acc = 0.0;
    for i in 0..t {
        for j in 0..t {
            acc += l[(i, j)] * k[(j, i)];
        }
    }
    acc
}

/// CMMD value given a precomputed condition weight matrix.
pub fn loss_given_weight(
    l: &DMatrix<f64>,
    nat: &[Vec<f64>],
    filt: &[Vec<f64>],
    sigma_out: f64,
) -> Result<f64> {
    let t = nat.len() as f64;
    let k_nn = gram(nat, nat, sigma_out)?;
    let k_ff = gram(filt, filt, sigma_out)?;
    let k_nf = gram(nat, filt, sigma_out)?;
    Ok((trace_product(l, &k_nn) + trace_product(l, &k_ff) - 2.0 * trace_product(l, &k_nf))
        / (t * t))
}

/// Exact CMMD between natural and filtered sets under shared conditions.
pub fn cmmd_exact(
    cond: &[Vec<f64>],
    nat: &[Vec<f64>],
    filt: &[Vec<f64>],
    cfg: &CmmdConfig,
) -> Result<f64> {
    check_sets(cond, nat, filt)?;
    let l = condition_weight_exact(cond, cfg)?;
    loss_given_weight(&l, nat, filt, cfg.sigma_out)
}

/// Gradient of the CMMD with respect to each filtered vector, given L.
///
/// d/db exp(-||a-b||^2/s^2) = (2/s^2) (a - b) k(a, b); L is symmetric and
/// constant, so
///   dLoss/df_p = (1/T'^2) (4/s^2) sum_i L_ip [ (f_i - f_p) k(f_i, f_p)
///                                            - (n_i - f_p) k(n_i, f_p) ].
pub fn grad_given_weight(
    l: &DMatrix<f64>,
    nat: &[Vec<f64>],
    filt: &[Vec<f64>],
    sigma_out: f64,
) -> Vec<Vec<f64>> {
    let t = filt.len();
    let dim = filt[0].len();
    let scale = 4.0 / (sigma_out * sigma_out) / (t as f64 * t as f64);
    let mut grads = vec![vec![0.0; dim]; t];
    for p in 0..t {
        let g = &mut grads[p];
        for i in 0..t {
            let w = l[(i, p)];
            if w == 0.0 {
                continue;
            }
            let kf = gaussian_kernel(&filt[i], &filt[p], sigma_out);
            let kn = gaussian_kernel(&nat[i], &filt[p], sigma_out);
            for d in 0..dim {
                g[d] += w
                    * ((filt[i][d] - filt[p][d]) * kf - (nat[i][d] - filt[p][d]) * kn);
            }
        }
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    grads
}

/// Gradient of `cmmd_exact` with respect to each filtered vector.
pub fn cmmd_grad(
    cond: &[Vec<f64>],
    nat: &[Vec<f64>],
    filt: &[Vec<f64>],
    cfg: &CmmdConfig,
) -> Result<Vec<Vec<f64>>> {
    check_sets(cond, nat, filt)?;
    let l = condition_weight_exact(cond, cfg)?;
    Ok(grad_given_weight(&l, nat, filt, cfg.sigma_out))
}

/// Random Fourier feature basis for the Gaussian kernel
/// exp(-||x-x'||^2/sigma^2): rows w ~ N(0, (2/sigma^2) I), phases b ~ U[0, 2pi).
#[derive(Debug, Clone)]
pub struct RffBasis {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl RffBasis {
    pub fn new(input_dim: usize, rff_dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || rff_dim == 0 || !(sigma > 0.0) {
            return Err(Error::InvalidConfig("bad RFF basis parameters".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = std::f64::consts::SQRT_2 / sigma;
        let w = DMatrix::from_fn(rff_dim, input_dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        });
        let phase = Uniform::new(0.0, 2.0 * std::f64::consts::PI);
        let b = DVector::from_fn(rff_dim, |_, _| phase.sample(&mut rng));
        Ok(Self { w, b, sigma, seed })
    }

    /// phi(x) = sqrt(2/D) cos(W x + b); <phi(x), phi(x')> estimates the kernel.
    pub fn map(&self, x: &[f64]) -> DVector<f64> {
        let xv = DVector::from_column_slice(x);
        let mut z = &self.w * xv + &self.b;
        let scale = (2.0 / self.w.nrows() as f64).sqrt();
        z.apply(|v| *v = scale * v.cos());
        z
    }
}

/// Condition weight matrix through the RFF + Woodbury route.
///
/// H ~= Phi^T Phi with Phi the D x T' feature matrix, and
/// Htilde^-1 = (1/lambda) (I - Phi^T (lambda I_D + Phi Phi^T)^-1 Phi).
pub fn condition_weight_rff(
    cond: &[Vec<f64>],
    cfg: &CmmdConfig,
    basis: &RffBasis,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    if cond.is_empty() {
        return Err(Error::EmptyInput);
    }
    let t = cond.len();
    let d = basis.w.nrows();
    let mut phi = DMatrix::zeros(d, t);
    for (j, c) in cond.iter().enumerate() {
        phi.set_column(j, &basis.map(c));
    }
    let h = phi.transpose() * &phi;
    let mut inner = &phi * phi.transpose();
    for i in 0..d {
        inner[(i, i)] += cfg.lambda;
    }
    let chol = inner
        .cholesky()
        .ok_or_else(|| Error::NonFinite("RFF Woodbury matrix is not SPD".into()))?;
    let s = chol.solve(&phi); // (lambda I + Phi Phi^T)^-1 Phi
    let mut h_tilde_inv = DMatrix::identity(t, t) - phi.transpose() * s;
    h_tilde_inv /= cfg.lambda;
    let l = &h_tilde_inv * &h * &h_tilde_inv;
    Ok(symmetrize(l))
}

/// CMMD with the RFF-approximated condition weight; the output-side Gram
/// matrices stay exact.
pub fn cmmd_rff(
    cond: &[Vec<f64>],
    nat: &[Vec<f64>],
    filt: &[Vec<f64>],
    cfg: &CmmdConfig,
    basis: &RffBasis,
) -> Result<f64> {
    check_sets(cond, nat, filt)?;
    let l = condition_weight_rff(cond, cfg, basis)?;
    loss_given_weight(&l, nat, filt, cfg.sigma_out)
}
