//! Data-variance estimation: the agent's own sample variance, the two private
//! schemes for a peer's variance, and the posterior-mean correction for negative
//! estimates.

use rand::Rng;

use crate::error::{param_err, protocol_err, unsupported_err, Error, Result};
use crate::noise::{draw_noise, ln_lower_incomplete_gamma, NoiseKind};
use crate::privacy::{MechanismKind, Release, ReleaseChannel, Subsum};

/// Running count, sum and centered sum of squares of a data stream.
#[derive(Debug, Clone, Default)]
pub struct OwnVarianceAccumulator {
    count: u64,
    sum: f64,
    mean: f64,
    m2: f64,
}

impl OwnVarianceAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    /// Running mean; 0 for an empty stream.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample variance; `+inf` for fewer than two samples.
    pub fn variance(&self) -> f64 {
        own_sample_variance(self)
    }
}

/// `V_a^{(t)} = sum (X - Xbar)^2 / (t - 1)`, or `+inf` for `t < 2`.
pub fn own_sample_variance(acc: &OwnVarianceAccumulator) -> f64 {
    if acc.count < 2 {
        f64::INFINITY
    } else {
        (acc.m2 / (acc.count - 1) as f64).max(0.0)
    }
}

/// Replaces a negative estimate by `+inf`, as a negative variance carries no information.
pub fn nonnegative_or_infinite(v: f64) -> f64 {
    if v < 0.0 || v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Prefix sums of `X` and `X^2`, indexed by time (`[0]` is the empty prefix).
#[derive(Debug, Clone)]
pub struct PrefixSums {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Default for PrefixSums {
    fn default() -> Self {
        Self { s1: vec![0.0], s2: vec![0.0] }
    }
}

impl PrefixSums {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n = self.s1.len() - 1;
        self.s1.push(self.s1[n] + x);
        self.s2.push(self.s2[n] + x * x);
    }

    pub fn len(&self) -> u64 {
        (self.s1.len() - 1) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(sum X, sum X^2)` over the interval `(start, end]`.
    pub fn range(&self, start: u64, end: u64) -> (f64, f64) {
        let (s, e) = (start as usize, end as usize);
        (self.s1[e] - self.s1[s], self.s2[e] - self.s2[s])
    }
}

#[derive(Debug, Clone, Copy)]
struct Sv1Entry {
    start: u64,
    end: u64,
    /// `V-double-tilde` of the subsum.
    vbar: f64,
}

/// The responder-side state of the partial-variance channel paired with one mean channel.
///
/// Each subsum `(s, e]` of the mean channel carries one variance noise `W`, drawn
/// when the subsum is formed and reused for as long as the subsum exists.
#[derive(Debug, Clone)]
pub struct SchVar1State {
    sigma2_dp_sq: f64,
    noise_kind: NoiseKind,
    // PM1 keeps only running sums, PM2 mirrors the mean channel's stack.
    sum_vbar: f64,
    sum_inv_len: f64,
    count: u64,
    last_end: u64,
    entries: Vec<Sv1Entry>,
}

impl SchVar1State {
    pub fn new(sigma2_dp_sq: f64, noise_kind: NoiseKind) -> Self {
        assert!(sigma2_dp_sq >= 0.0 && sigma2_dp_sq.is_finite());
        Self {
            sigma2_dp_sq,
            noise_kind,
            sum_vbar: 0.0,
            sum_inv_len: 0.0,
            count: 0,
            last_end: 0,
            entries: Vec::new(),
        }
    }

    pub fn sigma2_dp_sq(&self) -> f64 {
        self.sigma2_dp_sq
    }

    fn entry<R: Rng + ?Sized>(&self, sub: &Subsum, data: &PrefixSums, rng: &mut R) -> Sv1Entry {
        let n = sub.len() as f64;
        let (s1, s2) = data.range(sub.start, sub.end);
        let w = draw_noise(self.sigma2_dp_sq, self.noise_kind, rng);
        let vtilde = s2 - s1 * s1 / n + (n - 1.0) / n * w;
        let noisy = s1 + sub.noise;
        Sv1Entry { start: sub.start, end: sub.end, vbar: vtilde + noisy * noisy / n }
    }

    /// Assembles the raw (possibly negative) variance estimate released together
    /// with `release`, which `channel` has just produced. `+inf` for `t < 2`.
    pub fn release<R: Rng + ?Sized>(
        &mut self,
        channel: &ReleaseChannel,
        release: &Release,
        data: &PrefixSums,
        rng: &mut R,
    ) -> Result<f64> {
        let t = release.time;
        if channel.last_time() != t || data.len() < t {
            return Err(protocol_err(format!(
                "variance release at t={t} does not match mean channel at t={} with {} samples",
                channel.last_time(),
                data.len()
            )));
        }
        match channel.kind() {
            MechanismKind::Pm1 => {
                let sub = channel
                    .last_fresh()
                    .ok_or_else(|| protocol_err("mean channel has no subsum"))?;
                if sub.start != self.last_end || sub.end != t {
                    return Err(protocol_err(format!(
                        "subsum ({}, {}] does not extend the variance channel ending at {}",
                        sub.start, sub.end, self.last_end
                    )));
                }
                let e = self.entry(&sub, data, rng);
                self.sum_vbar += e.vbar;
                self.sum_inv_len += 1.0 / sub.len() as f64;
                self.count += 1;
                self.last_end = t;
            }
            MechanismKind::Pm2 => {
                let stack = channel.subsums();
                let keep = self
                    .entries
                    .iter()
                    .zip(stack)
                    .take_while(|(e, s)| e.start == s.start && e.end == s.end)
                    .count();
                self.entries.truncate(keep);
                for sub in &stack[keep..] {
                    let e = self.entry(sub, data, rng);
                    self.entries.push(e);
                }
                let mut prev = 0;
                for e in &self.entries {
                    if e.start != prev || e.end <= e.start {
                        return Err(protocol_err(format!(
                            "variance subsums are not contiguous at ({}, {}]",
                            e.start, e.end
                        )));
                    }
                    prev = e.end;
                }
                if prev != t {
                    return Err(protocol_err(format!("variance subsums end at {prev}, expected {t}")));
                }
                self.sum_vbar = self.entries.iter().map(|e| e.vbar).sum();
                self.sum_inv_len = self.entries.iter().map(|e| 1.0 / (e.end - e.start) as f64).sum();
                self.count = self.entries.len() as u64;
                self.last_end = t;
            }
        }
        if t < 2 {
            return Ok(f64::INFINITY);
        }
        let tf = t as f64;
        let k = self.count as f64;
        let r = release.noisy_mean;
        Ok(self.sum_vbar / (tf - 1.0)
            - tf / (tf - 1.0) * r * r
            - channel.sigma_dp_sq() / (tf - 1.0) * (self.sum_inv_len - k / tf))
    }
}

/// Querier-side variance estimate rebuilt from consecutive PM1 releases.
///
/// `t_i r_i - t_{i-1} r_{i-1}` is the sum of the fresh samples plus the one fresh
/// noise of that gap; dividing by the square root of the gap length gives values
/// with variance `sigma_b^2 + sigma_dp^2 / gap`.
#[derive(Debug, Clone, Default)]
pub struct SchVar2State {
    prev_time: u64,
    prev_scaled: f64,
    k: u64,
    mean: f64,
    m2: f64,
    sum_inv_gap: f64,
}

impl SchVar2State {
    pub fn new(mechanism: MechanismKind) -> Result<Self> {
        match mechanism {
            MechanismKind::Pm1 => Ok(Self::default()),
            MechanismKind::Pm2 => Err(unsupported_err(
                "variance reconstruction from releases requires the PM1 mechanism",
            )),
        }
    }

    pub fn count(&self) -> u64 {
        self.k
    }

    /// Adds the value reconstructed from `r` and returns it.
    pub fn push(&mut self, r: &Release) -> Result<f64> {
        if r.time <= self.prev_time {
            return Err(protocol_err(format!(
                "release at t={} does not follow t={}",
                r.time, self.prev_time
            )));
        }
        let scaled = r.noisy_mean * r.time as f64;
        let gap = (r.time - self.prev_time) as f64;
        let v = (scaled - self.prev_scaled) / gap.sqrt();
        self.prev_time = r.time;
        self.prev_scaled = scaled;
        self.k += 1;
        let delta = v - self.mean;
        self.mean += delta / self.k as f64;
        self.m2 += delta * (v - self.mean);
        self.sum_inv_gap += 1.0 / gap;
        Ok(v)
    }

    /// Sample variance of the reconstructed values (`+inf` while `k < 2`).
    pub fn v_prime(&self) -> f64 {
        if self.k < 2 {
            f64::INFINITY
        } else {
            self.m2 / (self.k - 1) as f64
        }
    }

    /// `K = (1/k) sum 1/gap_i`.
    pub fn k_factor(&self) -> f64 {
        if self.k == 0 {
            f64::INFINITY
        } else {
            self.sum_inv_gap / self.k as f64
        }
    }

    /// Unbiased, possibly negative estimate `V' - K sigma_dp^2` (`+inf` while `k < 2`).
    pub fn raw_estimate(&self, sigma_dp_sq: f64) -> f64 {
        if self.k < 2 {
            return f64::INFINITY;
        }
        self.v_prime() - sigma_dp_sq * self.k_factor()
    }
}

/// Prior used by the posterior-mean correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariancePrior {
    /// Uniform prior on `sigma_b^2 / (sigma_b^2 + K sigma_dp^2)`; shape `(kappa + 2)/2`.
    #[default]
    Uniform,
    /// Jeffreys prior; shape `(kappa + 1)/2`.
    Jeffreys,
}

impl VariancePrior {
    pub fn shape(&self, kappa: u64) -> f64 {
        match self {
            VariancePrior::Uniform => (kappa as f64 + 2.0) / 2.0,
            VariancePrior::Jeffreys => (kappa as f64 + 1.0) / 2.0,
        }
    }
}

/// Posterior mean of `sigma_b^2` under a truncated inverse-gamma posterior, used
/// in place of a negative raw estimate. A nonnegative `v_raw` is returned unchanged.
pub fn bayesian_improve(v_raw: f64, v_prime: f64, kappa: u64, k: f64, sigma_dp_sq: f64) -> Result<f64> {
    bayesian_improve_with_prior(v_raw, v_prime, kappa, k, sigma_dp_sq, VariancePrior::Uniform)
}

pub fn bayesian_improve_with_prior(
    v_raw: f64,
    v_prime: f64,
    kappa: u64,
    k: f64,
    sigma_dp_sq: f64,
    prior: VariancePrior,
) -> Result<f64> {
    if v_raw >= 0.0 {
        return Ok(v_raw);
    }
    if sigma_dp_sq == 0.0 {
        return Err(Error::ImpossibleState(format!(
            "negative variance estimate {v_raw} without privacy noise"
        )));
    }
    if kappa < 2 || !(k > 0.0) || !(sigma_dp_sq > 0.0) || !(v_prime >= 0.0) || !v_prime.is_finite() {
        return Err(param_err(format!(
            "bayesian_improve needs kappa >= 2, K > 0, sigma_dp^2 > 0, finite V' >= 0 (got {kappa}, {k}, {sigma_dp_sq}, {v_prime})"
        )));
    }
    let a = prior.shape(kappa);
    let noise = k * sigma_dp_sq;
    let beta = (kappa as f64 - 1.0) * v_prime / 2.0;
    let value = if beta == 0.0 {
        // gamma(a-1, x) / gamma(a, x) ~ a / ((a-1) x) as x -> 0.
        noise / (a - 1.0)
    } else {
        let x = beta / noise;
        let ratio = (ln_lower_incomplete_gamma(a - 1.0, x)? - ln_lower_incomplete_gamma(a, x)?).exp();
        beta * ratio - noise
    };
    if !value.is_finite() || value < -1e-10 {
        return Err(Error::ImpossibleState(format!(
            "posterior mean {value} is not a valid variance (V'={v_prime}, kappa={kappa}, K={k}, sigma_dp^2={sigma_dp_sq})"
        )));
    }
    Ok(value.max(0.0))
}
