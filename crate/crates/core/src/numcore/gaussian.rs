//! Diagonal Gaussians and their closed forms.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower bound added to every softplus-produced standard deviation.
pub const STD_FLOOR: f64 = 1e-3;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps an unconstrained pre-activation to a valid standard deviation.
pub fn floored_softplus(x: f64) -> f64 {
    softplus(x) + STD_FLOOR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiag {
    mean: Tensor,
    std: Tensor,
}

impl GaussianDiag {
    /// Builds a Gaussian, rejecting mismatched shapes and any std below the floor.
    pub fn new(mean: Tensor, std: Tensor) -> Result<Self> {
        if !mean.same_shape(&std) {
            return Err(Error::dim(
                "GaussianDiag::new",
                format!("{:?}", mean.shape()),
                format!("{:?}", std.shape()),
            ));
        }
        if let Some(s) = std
            .data()
            .iter()
            .find(|s| !(**s >= STD_FLOOR) || !s.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "std entry {s} below floor {STD_FLOOR}"
            )));
        }
        if !mean.is_finite() {
            return Err(Error::NonFinite("GaussianDiag mean".into()));
        }
        Ok(GaussianDiag { mean, std })
    }

    pub fn standard(n: usize) -> Self {
        GaussianDiag {
            mean: Tensor::zeros(&[n]),
            std: Tensor::full(&[n], 1.0),
        }
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn std(&self) -> &Tensor {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `sum_i [ -ln(2 pi)/2 - ln sigma_i - (x_i - mu_i)^2 / (2 sigma_i^2) ]`.
pub fn gaussian_log_density(x: &Tensor, g: &GaussianDiag) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::dim("gaussian_log_density", g.dim(), x.len()));
    }
    let v = x
        .data()
        .iter()
        .zip(g.mean.data())
        .zip(g.std.data())
        .map(|((&xi, &mu), &sd)| {
            let z = (xi - mu) / sd;
            -HALF_LN_2PI - sd.ln() - 0.5 * z * z
        })
        .sum();
    Ok(v)
}

/// Closed-form `KL(g || N(0, I))`, summed over dimensions.
pub fn kl_to_standard_normal(g: &GaussianDiag) -> f64 {
    let kl: f64 = g
        .mean
        .data()
        .iter()
        .zip(g.std.data())
        .map(|(&mu, &sd)| mu * mu + sd * sd - 1.0 - 2.0 * sd.ln())
        .sum::<f64>()
        * 0.5;
    // Exact-zero cases can round to a tiny negative.
    kl.max(0.0)
}

/// `mean + std * eps`.
pub fn reparameterize(g: &GaussianDiag, eps: &Tensor) -> Result<Tensor> {
    if eps.len() != g.dim() {
        return Err(Error::dim("reparameterize", g.dim(), eps.len()));
    }
    let data = g
        .mean
        .data()
        .iter()
        .zip(g.std.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    Tensor::new(g.mean.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;

    fn g(mean: &[f64], std: &[f64]) -> GaussianDiag {
        GaussianDiag::new(Tensor::vector(mean), Tensor::vector(std)).unwrap()
    }

    #[test]
    fn log_density_at_mode() {
        let v = gaussian_log_density(&Tensor::vector(&[0.0]), &g(&[0.0], &[1.0])).unwrap();
        assert!((v + 0.918_938_5).abs() < 1e-7);
        let n = 5;
        let m: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - 1.0).collect();
        let v = gaussian_log_density(&Tensor::vector(&m), &g(&m, &vec![1.0; n])).unwrap();
        assert!((v + n as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn log_density_closed_form_matches_monte_carlo() {
        // x=1, mean 0, std 2: closed form -ln(2pi)/2 - ln 2 - 1/8.
        let gd = g(&[0.0], &[2.0]);
        let closed = gaussian_log_density(&Tensor::vector(&[1.0]), &gd).unwrap();
        let formula = -HALF_LN_2PI - 2f64.ln() - 0.125;
        assert!((closed - formula).abs() < 1e-14);
        // Histogram density estimate in a window around x=1.
        let mut rng = RngStream::new(11);
        let n = 1_000_000;
        let half = 0.05;
        let hits = (0..n)
            .filter(|_| ((2.0 * rng.normal()) - 1.0_f64).abs() < half)
            .count();
        let density = hits as f64 / (n as f64 * 2.0 * half);
        assert!(
            (density.ln() - closed).abs() < 0.02,
            "{} vs {}",
            density.ln(),
            closed
        );
    }

    #[test]
    fn log_density_rejects_shape_mismatch() {
        assert!(gaussian_log_density(&Tensor::vector(&[0.0, 1.0]), &g(&[0.0], &[1.0])).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_to_standard_normal(&g(&[0.0, 0.0], &[1.0, 1.0])), 0.0);
        assert!((kl_to_standard_normal(&g(&[1.0], &[1.0])) - 0.5).abs() < 1e-15);
        // std 2: (4 - 1 - ln 4) / 2
        let k = kl_to_standard_normal(&g(&[0.0], &[2.0]));
        assert!((k - (3.0 - 4f64.ln()) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn kl_matches_monte_carlo_for_wide_posterior() {
        let gd = g(&[0.0], &[2.0]);
        let mut rng = RngStream::new(5);
        let n = 1_000_000;
        let std_normal = GaussianDiag::standard(1);
        let mut acc = 0.0;
        for _ in 0..n {
            let x = Tensor::vector(&[2.0 * rng.normal()]);
            acc += gaussian_log_density(&x, &gd).unwrap()
                - gaussian_log_density(&x, &std_normal).unwrap();
        }
        let mc = acc / n as f64;
        assert!((mc - kl_to_standard_normal(&gd)).abs() < 1e-2);
    }

    #[test]
    fn reparameterize_examples() {
        let gd = g(&[0.5, -1.0], &[2.0, 0.1]);
        assert_eq!(
            reparameterize(&gd, &Tensor::vector(&[0.0, 0.0])).unwrap(),
            *gd.mean()
        );
        let unit = g(&[0.0], &[1.0]);
        assert_eq!(
            reparameterize(&unit, &Tensor::vector(&[1.0]))
                .unwrap()
                .data(),
            &[1.0]
        );
        assert!(reparameterize(&unit, &Tensor::vector(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn reparameterized_moments_within_three_standard_errors() {
        let gd = g(&[1.5], &[0.7]);
        let mut rng = RngStream::new(9);
        let n = 100_000;
        let zs: Vec<f64> = (0..n)
            .map(|_| {
                reparameterize(&gd, &Tensor::vector(&[rng.normal()]))
                    .unwrap()
                    .data()[0]
            })
            .collect();
        let mean = zs.iter().sum::<f64>() / n as f64;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = 0.7 / (n as f64).sqrt();
        // Standard error of the sample std is about sigma / sqrt(2n).
        let se_std = 0.7 / (2.0 * n as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * se_mean);
        assert!((var.sqrt() - 0.7).abs() < 3.0 * se_std);
    }

    #[test]
    fn std_floor_enforced() {
        assert!(GaussianDiag::new(Tensor::vector(&[0.0]), Tensor::vector(&[1e-4])).is_err());
        assert!((floored_softplus(0.0) - (2f64.ln() + STD_FLOOR)).abs() < 1e-15);
        assert!(floored_softplus(-1e3) >= STD_FLOOR);
    }
}
