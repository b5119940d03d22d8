//! Intrinsic reward: the square root of the posterior's KL to `N(0, I)`,
//! and its running-std normalisation.

use serde::{Deserialize, Serialize};

use crate::dbmodel::{Branch, DBModel};
use crate::error::Result;
use crate::numcore::{kl_to_standard_normal, GaussianDiag, RunningMoments, Tensor};

pub const BONUS_STD_FLOOR: f64 = 1e-8;
pub const DEFAULT_WARMUP: u64 = 100;

pub fn bonus_from_posterior(g: &GaussianDiag) -> f64 {
    kl_to_standard_normal(g).sqrt()
}

/// Bonus of one observation/action pair.
pub fn db_bonus(model: &DBModel, obs: &Tensor, action: usize) -> Result<f64> {
    Ok(db_bonus_batch(model, obs, &[action])?[0])
}

/// Bonuses for a batch of observations (rows of `obs`) and actions.
pub fn db_bonus_batch(model: &DBModel, obs: &Tensor, actions: &[usize]) -> Result<Vec<f64>> {
    let s = model.encode(obs, Branch::Online)?;
    let (mean, std) = model.posterior_batch(&s, actions)?;
    let n = mean.cols();
    Ok((0..mean.rows())
        .map(|i| {
            let kl: f64 = (0..n)
                .map(|j| {
                    let (mu, sd) = (mean.get(i, j), std.get(i, j));
                    0.5 * (mu * mu + sd * sd - 1.0 - 2.0 * sd.ln())
                })
                .sum();
            kl.max(0.0).sqrt()
        })
        .collect())
}

/// Divides bonuses by a streaming estimate of their std.
///
/// Until `warmup` samples have been seen the values pass through unscaled,
/// so the first batches are not divided by a near-zero std.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonusNormalizer {
    pub moments: RunningMoments,
    pub enabled: bool,
    pub warmup: u64,
}

impl Default for BonusNormalizer {
    fn default() -> Self {
        BonusNormalizer {
            moments: RunningMoments::new(),
            enabled: true,
            warmup: DEFAULT_WARMUP,
        }
    }
}

impl BonusNormalizer {
    pub fn disabled() -> Self {
        BonusNormalizer {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn divisor(&self) -> f64 {
        self.moments.std().max(BONUS_STD_FLOOR)
    }

    pub fn normalize(&mut self, raw: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return raw.to_vec();
        }
        self.moments.update(raw);
        if self.moments.count < self.warmup {
            return raw.to_vec();
        }
        let d = self.divisor();
        raw.iter().map(|r| r / d).collect()
    }
}

pub fn normalize_bonuses(raw: &Tensor, norm: BonusNormalizer) -> (Tensor, BonusNormalizer) {
    let mut norm = norm;
    let out = norm.normalize(raw.data());
    let t = Tensor::new(raw.shape().to_vec(), out).expect("same shape");
    (t, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbmodel::DBConfig;
    use crate::numcore::RngStream;

    #[test]
    fn closed_form_examples() {
        assert_eq!(bonus_from_posterior(&GaussianDiag::standard(4)), 0.0);
        let g =
            GaussianDiag::new(Tensor::vector(&[1.0, 0.0, 0.0]), Tensor::vector(&[1.0; 3])).unwrap();
        assert!((bonus_from_posterior(&g) - 0.5f64.sqrt()).abs() < 1e-15);
        let mean = Tensor::vector(&[0.3, -0.7, 1.1]);
        let a = GaussianDiag::new(mean.clone(), Tensor::vector(&[1.0; 3])).unwrap();
        let b = GaussianDiag::new(mean.scale(2.0), Tensor::vector(&[1.0; 3])).unwrap();
        assert!((kl_to_standard_normal(&b) - 4.0 * kl_to_standard_normal(&a)).abs() < 1e-12);
        assert!((bonus_from_posterior(&b) - 2.0 * bonus_from_posterior(&a)).abs() < 1e-12);
    }

    #[test]
    fn batch_matches_posterior_path() {
        let m = DBModel::new(6, 3, &DBConfig::default(), &mut RngStream::new(0)).unwrap();
        let obs = RngStream::new(1).normal_tensor(&[5, 6]);
        let actions = [0, 1, 2, 1, 0];
        let batch = db_bonus_batch(&m, &obs, &actions).unwrap();
        for i in 0..5 {
            let s = m.encode(&obs.select_rows(&[i]), Branch::Online).unwrap();
            let post = m.posterior(&s, actions[i]).unwrap();
            assert!((batch[i] - bonus_from_posterior(&post)).abs() < 1e-12);
            let single = db_bonus(&m, &obs.select_rows(&[i]), actions[i]).unwrap();
            assert_eq!(single, batch[i]);
            assert!(single >= 0.0);
        }
    }

    #[test]
    fn disabled_passes_through() {
        let raw = Tensor::vector(&[1.0, 5.0, -2.0]);
        let (out, _) = normalize_bonuses(&raw, BonusNormalizer::disabled());
        assert_eq!(out, raw);
    }

    #[test]
    fn warmup_then_degenerate_floor() {
        let mut n = BonusNormalizer::default();
        let c = 0.25;
        assert_eq!(n.normalize(&[c; 50]), vec![c; 50]);
        let out = n.normalize(&[c; 60]);
        assert!(out.iter().all(|&v| v == c / BONUS_STD_FLOOR));
    }

    #[test]
    fn gaussian_stream_normalises_to_unit_std() {
        let mut rng = RngStream::new(2);
        let mut n = BonusNormalizer::default();
        let mut out = Vec::new();
        for _ in 0..100 {
            let batch: Vec<f64> = (0..100).map(|_| 2.0 * rng.normal()).collect();
            out.extend(n.normalize(&batch));
        }
        let tail = &out[200..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let sd = (tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / tail.len() as f64).sqrt();
        assert!((0.9..=1.1).contains(&sd), "{sd}");
    }
}
