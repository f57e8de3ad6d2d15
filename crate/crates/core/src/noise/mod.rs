//! Data distributions, DP noise calibration and noise sampling.

mod rng;
pub mod special;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

pub use rng::{SeedTree, SimRng, StreamTag};
pub use special::{
    ln_lower_incomplete_gamma, lower_incomplete_gamma, std_normal_cdf, std_normal_quantile,
    student_t_cdf, student_t_quantile, student_t_two_sided_tail,
};

/// Distribution family of the additive privacy noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Laplace,
}

/// Privacy level `(epsilon, delta)` for data confined to `[mu - L, mu + L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
    half_range: f64,
    kind: NoiseKind,
}

impl PrivacyParams {
    /// Validates and builds the parameters.
    ///
    /// Gaussian noise needs `0 < epsilon <= 1` and `0 < delta <= 1`; Laplace noise
    /// accepts any positive `epsilon` and ignores `delta` (stored as 0).
    pub fn new(epsilon: f64, delta: f64, half_range: f64, kind: NoiseKind) -> Result<Self> {
        if !(half_range > 0.0 && half_range.is_finite()) {
            return Err(param_err(format!("half range L must be positive and finite, got {half_range}")));
        }
        let delta = match kind {
            NoiseKind::Gaussian => {
                if !(epsilon > 0.0 && epsilon <= 1.0) {
                    return Err(param_err(format!("Gaussian mechanism needs 0 < epsilon <= 1, got {epsilon}")));
                }
                if !(delta > 0.0 && delta <= 1.0) {
                    return Err(param_err(format!("Gaussian mechanism needs 0 < delta <= 1, got {delta}")));
                }
                delta
            }
            NoiseKind::Laplace => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(param_err(format!("Laplace mechanism needs epsilon > 0, got {epsilon}")));
                }
                0.0
            }
        };
        Ok(Self { epsilon, delta, half_range, kind })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn half_range(&self) -> f64 {
        self.half_range
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// Same parameters with `epsilon` and `delta` multiplied by `factor` (revalidated).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.epsilon * factor, self.delta * factor, self.half_range, self.kind)
    }

    /// Per-subsum noise variance for mean releases.
    pub fn sigma_dp_squared(&self) -> f64 {
        sigma_dp_squared(self)
    }

    /// Per-subsum noise variance for partial sample-variance releases.
    pub fn sigma2_dp_squared(&self) -> f64 {
        sigma2_dp_squared(self)
    }
}

/// `8 L^2 ln(1.25/delta) / eps^2` (Gaussian) or `8 L^2 / eps^2` (Laplace).
pub fn sigma_dp_squared(p: &PrivacyParams) -> f64 {
    let l2 = p.half_range * p.half_range;
    let eps2 = p.epsilon * p.epsilon;
    match p.kind {
        NoiseKind::Gaussian => 8.0 * l2 * (1.25 / p.delta).ln() / eps2,
        NoiseKind::Laplace => 8.0 * l2 / eps2,
    }
}

/// `32 L^4 ln(1.25/delta) / eps^2` (Gaussian) or `32 L^4 / eps^2` (Laplace).
pub fn sigma2_dp_squared(p: &PrivacyParams) -> f64 {
    let l4 = p.half_range.powi(4);
    let eps2 = p.epsilon * p.epsilon;
    match p.kind {
        NoiseKind::Gaussian => 32.0 * l4 * (1.25 / p.delta).ln() / eps2,
        NoiseKind::Laplace => 32.0 * l4 / eps2,
    }
}

/// A zero-mean noise draw together with the variance it was drawn at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    pub value: f64,
    pub variance: f64,
}

/// Draws zero-mean noise with the given variance.
///
/// Laplace draws use scale `sqrt(variance / 2)`. Zero variance returns exactly 0
/// without consuming randomness.
pub fn sample_noise<R: Rng + ?Sized>(variance: f64, kind: NoiseKind, rng: &mut R) -> Result<NoiseDraw> {
    if !(variance >= 0.0) || variance.is_infinite() {
        return Err(param_err(format!("noise variance must be finite and >= 0, got {variance}")));
    }
    Ok(NoiseDraw { value: draw_noise(variance, kind, rng), variance })
}

/// Unchecked variant of [`sample_noise`] for hot loops; `variance` must be finite and >= 0.
pub(crate) fn draw_noise<R: Rng + ?Sized>(variance: f64, kind: NoiseKind, rng: &mut R) -> f64 {
    if variance == 0.0 {
        return 0.0;
    }
    match kind {
        NoiseKind::Gaussian => {
            let z: f64 = StandardNormal.sample(rng);
            z * variance.sqrt()
        }
        NoiseKind::Laplace => {
            let scale = (0.5 * variance).sqrt();
            // Inverse CDF on u in (-1/2, 1/2).
            let u: f64 = rng.random::<f64>() - 0.5;
            let mag = -(1.0 - 2.0 * u.abs()).ln();
            if mag.is_infinite() {
                return 0.0;
            }
            scale * mag.copysign(u)
        }
    }
}

/// Distribution of one agent's data stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataDistribution {
    /// Uniform on `[mean - std*sqrt(3), mean + std*sqrt(3)]`.
    Uniform { mean: f64, std: f64 },
    /// Degenerate distribution; useful for tests.
    PointMass { value: f64 },
}

impl DataDistribution {
    pub fn uniform(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) || !mean.is_finite() {
            return Err(param_err(format!("uniform distribution needs finite mean and std > 0, got ({mean}, {std})")));
        }
        Ok(DataDistribution::Uniform { mean, std })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DataDistribution::Uniform { mean, .. } => mean,
            DataDistribution::PointMass { value } => value,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            DataDistribution::Uniform { std, .. } => std,
            DataDistribution::PointMass { .. } => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        self.std() * self.std()
    }

    /// Half-width `L` of the support.
    pub fn half_range(&self) -> f64 {
        match *self {
            DataDistribution::Uniform { std, .. } => std * 3f64.sqrt(),
            DataDistribution::PointMass { .. } => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DataDistribution::Uniform { mean, .. } => {
                let l = self.half_range();
                mean - l + 2.0 * l * rng.random::<f64>()
            }
            DataDistribution::PointMass { value } => value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::rng::{SeedTree, StreamTag};
    use approx::assert_relative_eq;

    #[test]
    fn sigma_dp_examples() {
        let l = 0.75f64.sqrt();
        let p = PrivacyParams::new(1.0, 1e-6, l, NoiseKind::Gaussian).unwrap();
        assert_relative_eq!(sigma_dp_squared(&p), 8.0 * 0.75 * (1.25e6f64).ln(), max_relative = 1e-12);
        assert!((sigma_dp_squared(&p) - 84.232).abs() < 1e-3);

        let lap = PrivacyParams::new(2.0, 0.5, 1.0, NoiseKind::Laplace).unwrap();
        assert_eq!(lap.delta(), 0.0);
        assert_relative_eq!(sigma_dp_squared(&lap), 2.0, max_relative = 1e-15);
        assert_relative_eq!(sigma2_dp_squared(&lap), 8.0, max_relative = 1e-15);

        let g1 = PrivacyParams::new(1.0, 1e-6, 1.0, NoiseKind::Gaussian).unwrap();
        assert!((sigma2_dp_squared(&g1) - 449.24).abs() < 1e-2);
    }

    #[test]
    fn invalid_privacy_params() {
        assert!(PrivacyParams::new(1.0, 1.25, 1.0, NoiseKind::Gaussian).is_err());
        assert!(PrivacyParams::new(1.5, 1e-6, 1.0, NoiseKind::Gaussian).is_err());
        assert!(PrivacyParams::new(0.0, 1e-6, 1.0, NoiseKind::Gaussian).is_err());
        assert!(PrivacyParams::new(1.0, 0.0, 1.0, NoiseKind::Gaussian).is_err());
        assert!(PrivacyParams::new(3.0, 0.0, 1.0, NoiseKind::Laplace).is_ok());
        assert!(PrivacyParams::new(-1.0, 0.0, 1.0, NoiseKind::Laplace).is_err());
        assert!(PrivacyParams::new(1.0, 1e-6, 0.0, NoiseKind::Gaussian).is_err());
        assert!(PrivacyParams::new(1.0, 1e-6, f64::INFINITY, NoiseKind::Gaussian).is_err());
    }

    #[test]
    fn variance_release_ratio_is_four_l_squared() {
        for &(eps, delta, l) in &[(1.0, 1e-6, 0.3), (0.2, 0.01, 2.0), (0.7, 1e-9, 1.0)] {
            let p = PrivacyParams::new(eps, delta, l, NoiseKind::Gaussian).unwrap();
            assert_relative_eq!(p.sigma2_dp_squared() / p.sigma_dp_squared(), 4.0 * l * l, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_variance_draw_is_exactly_zero() {
        let mut rng = SeedTree::new(1).stream(StreamTag::Validation, 0, 0);
        for kind in [NoiseKind::Gaussian, NoiseKind::Laplace] {
            assert_eq!(sample_noise(0.0, kind, &mut rng).unwrap().value, 0.0);
        }
        assert!(sample_noise(-1.0, NoiseKind::Gaussian, &mut rng).is_err());
    }

    #[test]
    fn noise_moments_match_requested_variance() {
        let n = 1_000_000;
        for kind in [NoiseKind::Gaussian, NoiseKind::Laplace] {
            let mut rng = SeedTree::new(7).stream(StreamTag::Validation, kind as u64, 0);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let z = sample_noise(2.0, kind, &mut rng).unwrap().value;
                s += z;
                s2 += z * z;
            }
            let mean = s / n as f64;
            let var = s2 / n as f64 - mean * mean;
            assert!(mean.abs() < 0.01, "{kind:?} mean {mean}");
            assert!((1.99..=2.01).contains(&var), "{kind:?} var {var}");
        }
    }

    #[test]
    fn uniform_support_and_moments() {
        let d = DataDistribution::uniform(0.4, 0.5).unwrap();
        let l = 0.5 * 3f64.sqrt();
        let mut rng = SeedTree::new(3).stream(StreamTag::Data, 0, 0);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = d.sample(&mut rng);
            assert!(x >= 0.4 - l && x <= 0.4 + l);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.4).abs() < 2e-3);
        assert!((var / 0.25 - 1.0).abs() < 0.01);
    }
}
