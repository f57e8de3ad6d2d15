//! Continual-release mechanisms for running means.
//!
//! Agent `b` answers agent `a`'s queries through one [`ReleaseChannel`] per ordered
//! pair. Each release privatizes the prefix sum `X_1 + ... + X_t` by splitting the
//! index range into subsums and adding one noise draw per subsum. A subsum that
//! reappears in a later split keeps its noise value, bit for bit.
//!
//! - PM1 splits at every query time: `kappa` subsums, O(1) state.
//! - PM2 joins those pieces following the binary representation of `kappa`:
//!   `w_H(kappa)` subsums, O(log kappa) state, budget growing with `log2 kappa`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{protocol_err, Result};
use crate::noise::{draw_noise, NoiseKind, PrivacyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Pm1,
    Pm2,
}

/// One noisy subsum over the stream indices `(start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subsum {
    /// Exclusive lower boundary (`tau_{i-1}`).
    pub start: u64,
    /// Inclusive upper boundary (`tau_i`).
    pub end: u64,
    /// Number of query intervals joined into this subsum.
    pub releases: u64,
    pub noise: f64,
}

impl Subsum {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// A privatized running mean as received by the querier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Release {
    pub noisy_mean: f64,
    pub time: u64,
    pub kappa: u64,
    /// Variance of the noise part of `noisy_mean`: `k sigma_dp^2 / t^2`.
    pub noise_variance: f64,
}

#[derive(Debug, Clone)]
enum ChannelState {
    Pm1 { cumulative_noise: f64, last_fresh: Option<Subsum> },
    Pm2 { stack: Vec<Subsum> },
}

/// Mechanism state for one ordered pair `b -> a`.
#[derive(Debug, Clone)]
pub struct ReleaseChannel {
    kind: MechanismKind,
    noise_kind: NoiseKind,
    sigma_dp_sq: f64,
    kappa: u64,
    last_time: u64,
    state: ChannelState,
}

impl ReleaseChannel {
    /// `sigma_dp_sq` may be 0, which turns the channel into an exact passthrough.
    pub fn new(kind: MechanismKind, noise_kind: NoiseKind, sigma_dp_sq: f64) -> Self {
        assert!(sigma_dp_sq >= 0.0 && sigma_dp_sq.is_finite(), "sigma_dp^2 must be finite and >= 0");
        let state = match kind {
            MechanismKind::Pm1 => ChannelState::Pm1 { cumulative_noise: 0.0, last_fresh: None },
            MechanismKind::Pm2 => ChannelState::Pm2 { stack: Vec::new() },
        };
        Self { kind, noise_kind, sigma_dp_sq, kappa: 0, last_time: 0, state }
    }

    pub fn from_params(kind: MechanismKind, params: &PrivacyParams) -> Self {
        Self::new(kind, params.kind(), params.sigma_dp_squared())
    }

    pub fn kind(&self) -> MechanismKind {
        self.kind
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.noise_kind
    }

    pub fn sigma_dp_sq(&self) -> f64 {
        self.sigma_dp_sq
    }

    pub fn kappa(&self) -> u64 {
        self.kappa
    }

    pub fn last_time(&self) -> u64 {
        self.last_time
    }

    /// Sum of the noises currently covering `[1 : last_time]`.
    pub fn total_noise(&self) -> f64 {
        match &self.state {
            ChannelState::Pm1 { cumulative_noise, .. } => *cumulative_noise,
            ChannelState::Pm2 { stack } => stack.iter().map(|s| s.noise).sum(),
        }
    }

    /// Number of subsums in the current split.
    pub fn subsum_count(&self) -> u64 {
        match &self.state {
            ChannelState::Pm1 { .. } => self.kappa,
            ChannelState::Pm2 { stack } => stack.len() as u64,
        }
    }

    /// Current PM2 split, oldest subsum first. Empty for PM1, whose split is
    /// not retained.
    pub fn subsums(&self) -> &[Subsum] {
        match &self.state {
            ChannelState::Pm1 { .. } => &[],
            ChannelState::Pm2 { stack } => stack,
        }
    }

    /// The subsum formed by the most recent PM1 release.
    pub fn last_fresh(&self) -> Option<Subsum> {
        match &self.state {
            ChannelState::Pm1 { last_fresh, .. } => *last_fresh,
            ChannelState::Pm2 { stack } => stack.last().copied(),
        }
    }

    /// Privatizes `prefix_sum = X_1 + ... + X_t` and returns the noisy mean.
    pub fn release_mean<R: Rng + ?Sized>(&mut self, prefix_sum: f64, t: u64, rng: &mut R) -> Result<Release> {
        if t <= self.last_time {
            return Err(protocol_err(format!(
                "release time {t} does not exceed previous release time {}",
                self.last_time
            )));
        }
        let fresh = Subsum {
            start: self.last_time,
            end: t,
            releases: 1,
            noise: draw_noise(self.sigma_dp_sq, self.noise_kind, rng),
        };
        match &mut self.state {
            ChannelState::Pm1 { cumulative_noise, last_fresh } => {
                *cumulative_noise += fresh.noise;
                *last_fresh = Some(fresh);
            }
            ChannelState::Pm2 { stack } => {
                stack.push(fresh);
                while stack.len() >= 2 && stack[stack.len() - 1].releases == stack[stack.len() - 2].releases {
                    let top = stack.pop().expect("len >= 2");
                    let below = stack.pop().expect("len >= 2");
                    // The joined interval is a new subsum and gets its own noise.
                    stack.push(Subsum {
                        start: below.start,
                        end: top.end,
                        releases: below.releases + top.releases,
                        noise: draw_noise(self.sigma_dp_sq, self.noise_kind, rng),
                    });
                }
            }
        }
        self.kappa += 1;
        self.last_time = t;
        let tf = t as f64;
        Ok(Release {
            noisy_mean: (prefix_sum + self.total_noise()) / tf,
            time: t,
            kappa: self.kappa,
            noise_variance: self.subsum_count() as f64 * self.sigma_dp_sq / (tf * tf),
        })
    }
}

/// Number of set bits of `n`.
pub fn hamming_weight(n: u64) -> u32 {
    n.count_ones()
}

/// `floor(log2 n) + 1` for `n >= 1`.
pub fn bit_length(n: u64) -> u32 {
    64 - n.leading_zeros()
}

/// Effective `(epsilon, delta)` per sample after `kappa` releases on one channel.
pub fn privacy_budget(kind: MechanismKind, kappa: u64, p: &PrivacyParams) -> (f64, f64) {
    match kind {
        MechanismKind::Pm1 => (p.epsilon(), p.delta()),
        MechanismKind::Pm2 => {
            let m = bit_length(kappa.max(1)) as f64;
            (m * p.epsilon(), m * p.delta())
        }
    }
}

/// Divides `(epsilon, delta)` by `floor(log2 t_max) + 1`, so that PM2 run for
/// `t_max` releases ends at the unscaled level.
pub fn scale_budget_for_pm2(p: &PrivacyParams, t_max: u64) -> Result<PrivacyParams> {
    let m = bit_length(t_max.max(1)) as f64;
    p.scaled(1.0 / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{SeedTree, StreamTag};
    use approx::assert_relative_eq;

    fn rng() -> crate::noise::SimRng {
        SeedTree::new(11).stream(StreamTag::Validation, 0, 0)
    }

    #[test]
    fn hamming_weight_examples() {
        assert_eq!(hamming_weight(13), 3);
        assert_eq!(hamming_weight(0), 0);
        for k in 0..=62 {
            assert_eq!(hamming_weight(1u64 << k), 1);
        }
    }

    #[test]
    fn pm2_kappa_five_splits_in_two() {
        let mut ch = ReleaseChannel::new(MechanismKind::Pm2, NoiseKind::Gaussian, 1.0);
        let mut r = rng();
        let times = [3, 7, 10, 15, 22];
        let mut last = None;
        for &t in &times {
            last = Some(ch.release_mean(0.0, t, &mut r).unwrap());
        }
        let subs = ch.subsums();
        assert_eq!(subs.len(), 2);
        assert_eq!((subs[0].start, subs[0].end), (0, 15));
        assert_eq!((subs[1].start, subs[1].end), (15, 22));
        let rel = last.unwrap();
        assert_relative_eq!(rel.noise_variance, 2.0 / (22.0 * 22.0), max_relative = 1e-15);
    }

    #[test]
    fn pm1_noise_variance_example() {
        let mut ch = ReleaseChannel::new(MechanismKind::Pm1, NoiseKind::Gaussian, 84.232);
        let mut r = rng();
        let mut rel = None;
        for i in 1..=10 {
            rel = Some(ch.release_mean(0.0, 10 * i, &mut r).unwrap());
        }
        assert_relative_eq!(rel.unwrap().noise_variance, 0.084_232, max_relative = 1e-12);
    }

    #[test]
    fn zero_noise_is_passthrough() {
        for kind in [MechanismKind::Pm1, MechanismKind::Pm2] {
            let mut ch = ReleaseChannel::new(kind, NoiseKind::Laplace, 0.0);
            let mut r = rng();
            let mut sum = 0.0;
            for t in 1..=40u64 {
                sum += (t as f64).sin();
                if t % 3 == 0 {
                    let rel = ch.release_mean(sum, t, &mut r).unwrap();
                    assert_eq!(rel.noisy_mean, sum / t as f64);
                }
            }
        }
    }

    #[test]
    fn non_increasing_time_is_rejected() {
        let mut ch = ReleaseChannel::new(MechanismKind::Pm1, NoiseKind::Gaussian, 1.0);
        let mut r = rng();
        ch.release_mean(1.0, 5, &mut r).unwrap();
        assert!(matches!(ch.release_mean(1.0, 5, &mut r), Err(crate::Error::Protocol(_))));
        assert!(ch.release_mean(1.0, 4, &mut r).is_err());
        let mut ch2 = ReleaseChannel::new(MechanismKind::Pm2, NoiseKind::Gaussian, 1.0);
        assert!(ch2.release_mean(0.0, 0, &mut r).is_err());
    }

    #[test]
    fn pm2_stack_follows_binary_representation() {
        let mut ch = ReleaseChannel::new(MechanismKind::Pm2, NoiseKind::Gaussian, 1.0);
        let mut r = rng();
        for kappa in 1..=1024u64 {
            ch.release_mean(0.0, 2 * kappa + 1, &mut r).unwrap();
            let subs = ch.subsums();
            assert_eq!(subs.len() as u32, hamming_weight(kappa));
            let counts: Vec<u64> = subs.iter().map(|s| s.releases).collect();
            assert!(counts.iter().all(|c| c.is_power_of_two()));
            assert!(counts.windows(2).all(|w| w[0] > w[1]));
            assert_eq!(counts.iter().sum::<u64>(), kappa);
            // Contiguous cover of [1, t].
            assert_eq!(subs[0].start, 0);
            assert!(subs.windows(2).all(|w| w[0].end == w[1].start));
            assert_eq!(subs.last().unwrap().end, 2 * kappa + 1);
        }
    }

    #[test]
    fn pm2_reuses_noise_of_shared_subsum() {
        let mut ch = ReleaseChannel::new(MechanismKind::Pm2, NoiseKind::Gaussian, 1.0);
        let mut r = rng();
        for t in 1..=4 {
            ch.release_mean(0.0, t, &mut r).unwrap();
        }
        let head = ch.subsums()[0];
        assert_eq!((head.start, head.end), (0, 4));
        for t in 5..=7 {
            ch.release_mean(0.0, t, &mut r).unwrap();
            assert_eq!(ch.subsums()[0].noise.to_bits(), head.noise.to_bits());
        }
    }

    #[test]
    fn budget_examples() {
        let p = PrivacyParams::new(1.0, 1e-6, 1.0, NoiseKind::Gaussian).unwrap();
        assert_eq!(privacy_budget(MechanismKind::Pm1, 1_000_000, &p), (1.0, 1e-6));
        assert_eq!(privacy_budget(MechanismKind::Pm2, 1, &p), (1.0, 1e-6));
        let lap = PrivacyParams::new(1.0, 0.0, 1.0, NoiseKind::Laplace).unwrap();
        assert_eq!(privacy_budget(MechanismKind::Pm2, 13, &lap), (4.0, 0.0));

        let s = scale_budget_for_pm2(&p, 30_000).unwrap();
        assert_relative_eq!(s.epsilon(), 1.0 / 15.0, max_relative = 1e-15);
        assert_relative_eq!(s.delta(), 1e-6 / 15.0, max_relative = 1e-15);
        assert_eq!(scale_budget_for_pm2(&p, 1).unwrap(), p);
        let lap2 = PrivacyParams::new(2.0, 0.0, 1.0, NoiseKind::Laplace).unwrap();
        assert_eq!(scale_budget_for_pm2(&lap2, 8).unwrap().epsilon(), 0.5);
    }
}
