//! Objective evaluation: unconditional MMD between MS sample sets and
//! per-frame variation statistics across takes.

use std::fmt;

use crate::error::{Error, Result};
use crate::f0::F0Contour;
use crate::gmmn::kernel::gaussian_kernel;
use crate::modspec::{extract_ms, reconstruct, StftConfig};

/// Biased V-statistic estimate of squared MMD between two vector sets:
/// mean k(a,a') + mean k(b,b') - 2 mean k(a,b).
pub fn eval_mmd(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch(
            "MMD inputs have mixed dimensions".into(),
        ));
    }
    let mean_gram = |x: &[Vec<f64>], y: &[Vec<f64>]| -> f64 {
        let mut acc = 0.0;
        for xi in x {
            for yj in y {
                acc += gaussian_kernel(xi, yj, sigma);
            }
        }
        acc / (x.len() * y.len()) as f64
    };
    Ok(mean_gram(a, a) + mean_gram(b, b) - 2.0 * mean_gram(a, b))
}

/// Per-frame statistics across equal-length takes.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationStats {
    /// Population std of the take values at each frame.
    pub per_frame_std: Vec<f64>,
    pub std_mean: f64,
    pub std_max: f64,
    /// Max |take - first take| over all frames and takes.
    pub max_deviation: f64,
}

pub fn eval_variation(takes: &[F0Contour]) -> Result<VariationStats> {
    if takes.len() < 2 {
        return Err(Error::InvalidConfig("need at least 2 takes".into()));
    }
    let len = takes[0].len();
    if takes.iter().any(|t| t.len() != len) {
        return Err(Error::DimensionMismatch("takes differ in length".into()));
    }
    let n = takes.len() as f64;
    let mut per_frame_std = Vec::with_capacity(len);
    let mut max_deviation = 0.0f64;
    for frame in 0..len {
        // shift by the first take: shift-invariant, and exactly zero when
        // every take agrees bit for bit
        let base = takes[0].values()[frame];
        let diffs: Vec<f64> = takes.iter().map(|t| t.values()[frame] - base).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        per_frame_std.push(var.sqrt());
        for d in &diffs[1..] {
            max_deviation = max_deviation.max(d.abs());
        }
    }
    let std_mean = per_frame_std.iter().sum::<f64>() / len as f64;
    let std_max = per_frame_std.iter().copied().fold(0.0, f64::max);
    Ok(VariationStats {
        per_frame_std,
        std_mean,
        std_max,
        max_deviation,
    })
}

/// Max round-trip error of MS analysis/resynthesis over a set of contours.
pub fn reconstruction_error(contours: &[F0Contour], cfg: &StftConfig) -> Result<f64> {
    let mut max_err = 0.0f64;
    for c in contours {
        let ms = extract_ms(&c.remove_mean(), cfg, 0)?;
        let back = reconstruct(&ms)?;
        for (a, b) in back.values().iter().zip(c.values()) {
            max_err = max_err.max((a - b).abs());
        }
    }
    Ok(max_err)
}

/// Labeled scalar summary written by the `eval` command.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mmd_squared: f64,
    pub std_mean: f64,
    pub std_max: f64,
    pub max_deviation: f64,
    pub reconstruction_error: f64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mmd_squared {}", self.mmd_squared)?;
        writeln!(f, "per_frame_std_mean {}", self.std_mean)?;
        writeln!(f, "per_frame_std_max {}", self.std_max)?;
        writeln!(f, "max_deviation {}", self.max_deviation)?;
        writeln!(f, "reconstruction_error {}", self.reconstruction_error)
    }
}

/// Per-segment log-power rows, the sample vectors fed to [`eval_mmd`].
pub fn ms_vectors(contour: &F0Contour, cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    let ms = extract_ms(&contour.remove_mean(), cfg, 0)?;
    Ok(ms.log_power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn identical_sets_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_set(&mut rng, 8, 5);
        let mmd = eval_mmd(&a, &a, 1.0).unwrap();
        assert!(mmd.abs() < 1e-12);
    }

    #[test]
    fn singleton_closed_form() {
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![1.0, 0.0]];
        let mmd = eval_mmd(&a, &b, 1.0).unwrap();
        assert_abs_diff_eq!(mmd, 2.0 - 2.0 * (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn matches_brute_force_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(&mut rng, 7, 4);
        let b = random_set(&mut rng, 11, 4);
        let sigma = 1.3;
        let mmd = eval_mmd(&a, &b, sigma).unwrap();

        let mut aa = 0.0;
        for x in &a {
            for y in &a {
                aa += gaussian_kernel(x, y, sigma);
            }
        }
        let mut bb = 0.0;
        for x in &b {
            for y in &b {
                bb += gaussian_kernel(x, y, sigma);
            }
        }
        let mut ab = 0.0;
        for x in &a {
            for y in &b {
                ab += gaussian_kernel(x, y, sigma);
            }
        }
        let oracle = aa / (a.len() * a.len()) as f64 + bb / (b.len() * b.len()) as f64
            - 2.0 * ab / (a.len() * b.len()) as f64;
        assert_abs_diff_eq!(mmd, oracle, epsilon = 1e-12);
    }

    #[test]
    fn mmd_is_nearly_nonnegative_and_separates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_set(&mut rng, 10, 3);
            let b = random_set(&mut rng, 10, 3);
            assert!(eval_mmd(&a, &b, 1.0).unwrap() >= -1e-10);
        }
        let near = random_set(&mut rng, 10, 3);
        let far: Vec<Vec<f64>> = near
            .iter()
            .map(|v| v.iter().map(|x| x + 5.0).collect())
            .collect();
        let close: Vec<Vec<f64>> = near
            .iter()
            .map(|v| v.iter().map(|x| x + 0.01).collect())
            .collect();
        assert!(
            eval_mmd(&near, &far, 1.0).unwrap() > eval_mmd(&near, &close, 1.0).unwrap()
        );
    }

    #[test]
    fn mmd_rejects_bad_input() {
        assert!(matches!(
            eval_mmd(&[], &[vec![1.0]], 1.0),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            eval_mmd(&[vec![1.0]], &[vec![1.0, 2.0]], 1.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn contour(values: Vec<f64>) -> F0Contour {
        let n = values.len();
        F0Contour::new(values, vec![true; n], 5.0).unwrap()
    }

    #[test]
    fn identical_takes_give_zero_stats() {
        let c = contour(vec![60.0, 61.0, 62.0]);
        let stats = eval_variation(&[c.clone(), c.clone(), c]).unwrap();
        assert!(stats.per_frame_std.iter().all(|s| *s == 0.0));
        assert_eq!(stats.std_mean, 0.0);
        assert_eq!(stats.std_max, 0.0);
        assert_eq!(stats.max_deviation, 0.0);
    }

    #[test]
    fn one_semitone_offset_gives_half_std() {
        let a = contour(vec![60.0; 10]);
        let b = contour(vec![61.0; 10]);
        let stats = eval_variation(&[a, b]).unwrap();
        for s in &stats.per_frame_std {
            assert_abs_diff_eq!(*s, 0.5, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(stats.std_mean, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.max_deviation, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn variation_rejects_bad_input() {
        let a = contour(vec![60.0; 10]);
        assert!(matches!(
            eval_variation(std::slice::from_ref(&a)),
            Err(Error::InvalidConfig(_))
        ));
        let b = contour(vec![60.0; 9]);
        assert!(matches!(
            eval_variation(&[a, b]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn reconstruction_error_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let contours: Vec<F0Contour> = (0..3)
            .map(|_| contour((0..300).map(|_| rng.gen_range(40.0..90.0)).collect()))
            .collect();
        let err = reconstruction_error(&contours, &StftConfig::default()).unwrap();
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn report_lists_every_labeled_scalar() {
        let report = EvalReport {
            mmd_squared: 0.25,
            std_mean: 0.1,
            std_max: 0.2,
            max_deviation: 0.5,
            reconstruction_error: 1e-12,
        };
        let text = report.to_string();
        for label in [
            "mmd_squared",
            "per_frame_std_mean",
            "per_frame_std_max",
            "max_deviation",
            "reconstruction_error",
        ] {
            assert!(text.contains(label), "missing {label}");
        }
        assert!(text.contains("0.25"));
    }
}
