//! The linear statistic `T_{b->a} = sum_i w_i (noisy mean at t_i)` and its variance.
//!
//! `Var(T) = sigma_b^2 * D + N` where the data coefficient
//! `D = sum_i (t_i - t_{i-1}) (sum_{j>=i} w_j / t_j)^2` (with `t_0 = 0`) does not
//! depend on the mechanism, and `N` is the variance of `sum_j w_j Z^{(t_j)}`.

use serde::{Deserialize, Serialize};

use crate::error::{protocol_err, Result};
use crate::privacy::{bit_length, MechanismKind, Release};

/// How the releases received from one peer are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Keep only the newest release.
    NonMom,
    /// Plain average of all releases.
    Mom,
    /// Average over the dyadic window `[2^floor(log2 kappa), kappa]`.
    #[serde(rename = "wmom")]
    WMom,
}

impl WeightScheme {
    /// One-based index of the first release with nonzero weight.
    pub fn window_start(&self, kappa: usize) -> usize {
        match self {
            WeightScheme::NonMom => kappa,
            WeightScheme::Mom => 1,
            WeightScheme::WMom => 1 << (bit_length(kappa as u64) - 1),
        }
    }

    /// Weights `w_1..w_kappa`; empty for `kappa = 0`.
    pub fn weights(&self, kappa: usize) -> Vec<f64> {
        if kappa == 0 {
            return Vec::new();
        }
        let start = self.window_start(kappa);
        let w = 1.0 / (kappa - start + 1) as f64;
        (1..=kappa).map(|i| if i >= start { w } else { 0.0 }).collect()
    }

    pub fn needs_history(&self) -> bool {
        !matches!(self, WeightScheme::NonMom)
    }
}

/// `c_i = sum_{j >= i} w_j / t_j`.
fn suffix_coefficients(times: &[u64], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; times.len()];
    let mut acc = 0.0;
    for i in (0..times.len()).rev() {
        acc += weights[i] / times[i] as f64;
        out[i] = acc;
    }
    out
}

fn check_inputs(times: &[u64], weights: &[f64]) {
    assert_eq!(times.len(), weights.len(), "times and weights differ in length");
    debug_assert!(times.windows(2).all(|w| w[0] < w[1]), "times must increase strictly");
    debug_assert!(times.first().is_none_or(|&t| t > 0));
}

/// The data coefficient `D` (the data term with `sigma_b^2 = 1`).
pub fn data_variance_coefficient(times: &[u64], weights: &[f64]) -> f64 {
    check_inputs(times, weights);
    let c = suffix_coefficients(times, weights);
    let mut prev = 0u64;
    let mut acc = 0.0;
    for (&t, ci) in times.iter().zip(&c) {
        acc += (t - prev) as f64 * ci * ci;
        prev = t;
    }
    acc
}

/// `sigma_b^2 sum_i (t_i - t_{i-1}) (sum_{j>=i} w_j/t_j)^2`.
pub fn data_variance_term(sigma_b_sq: f64, times: &[u64], weights: &[f64]) -> f64 {
    sigma_b_sq * data_variance_coefficient(times, weights)
}

/// Noise variance with `sigma_dp^2 = 1`.
///
/// PM1: subsum `i` covers `(t_{i-1}, t_i]` and appears in every release `j >= i`.
/// PM2: release `j` uses one subsum per set bit `r` of `j`, and two releases share
/// that subsum exactly when they agree on bit `r` and on all higher bits; the
/// coefficients are grouped by `(r, j >> (r+1))`.
pub fn noise_variance_coefficient(kind: MechanismKind, times: &[u64], weights: &[f64]) -> f64 {
    check_inputs(times, weights);
    match kind {
        MechanismKind::Pm1 => suffix_coefficients(times, weights).iter().map(|c| c * c).sum(),
        MechanismKind::Pm2 => {
            let kappa = times.len() as u64;
            if kappa == 0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for r in 0..bit_length(kappa) {
                let mut group: Option<u64> = None;
                let mut coef = 0.0;
                for j in 1..=kappa {
                    if (j >> r) & 1 == 0 {
                        continue;
                    }
                    let key = j >> (r + 1);
                    if group != Some(key) {
                        acc += coef * coef;
                        coef = 0.0;
                        group = Some(key);
                    }
                    let idx = (j - 1) as usize;
                    coef += weights[idx] / times[idx] as f64;
                }
                acc += coef * coef;
            }
            acc
        }
    }
}

/// `Var(sum_j w_j Z^{(t_j)})` for the given mechanism.
pub fn noise_variance_term(kind: MechanismKind, times: &[u64], weights: &[f64], sigma_dp_sq: f64) -> f64 {
    sigma_dp_sq * noise_variance_coefficient(kind, times, weights)
}

/// Closed forms of the data and noise terms for the keep-last and plain-average schemes.
pub mod closed_form {
    use crate::privacy::hamming_weight;

    /// Keep-last data term: `sigma_b^2 / t_kappa`.
    pub fn non_mom_data(sigma_b_sq: f64, t_last: u64) -> f64 {
        sigma_b_sq / t_last as f64
    }

    /// Plain-average data term: `(sigma_b^2 / kappa^2) sum_i (2i - 1) / t_i`.
    pub fn mom_data(sigma_b_sq: f64, times: &[u64]) -> f64 {
        let k = times.len() as f64;
        let s: f64 = times.iter().enumerate().map(|(i, &t)| (2 * i + 1) as f64 / t as f64).sum();
        sigma_b_sq * s / (k * k)
    }

    /// PM1 keep-last noise: `kappa sigma_dp^2 / t_kappa^2`.
    pub fn pm1_non_mom_noise(kappa: u64, t_last: u64, sigma_dp_sq: f64) -> f64 {
        kappa as f64 * sigma_dp_sq / (t_last as f64).powi(2)
    }

    /// PM1 plain-average noise: `(sigma_dp^2 / kappa^2) sum_i (sum_{j>=i} 1/t_j)^2`.
    pub fn pm1_mom_noise(times: &[u64], sigma_dp_sq: f64) -> f64 {
        let k = times.len() as f64;
        let mut acc = 0.0;
        let mut tail = 0.0;
        for &t in times.iter().rev() {
            tail += 1.0 / t as f64;
            acc += tail * tail;
        }
        sigma_dp_sq * acc / (k * k)
    }

    /// PM2 keep-last noise: `w_H(kappa) sigma_dp^2 / t_kappa^2`.
    pub fn pm2_non_mom_noise(kappa: u64, t_last: u64, sigma_dp_sq: f64) -> f64 {
        hamming_weight(kappa) as f64 * sigma_dp_sq / (t_last as f64).powi(2)
    }
}

/// Agent `a`'s record of everything received from one peer `b`.
#[derive(Debug, Clone)]
pub struct PeerStatistic {
    scheme: WeightScheme,
    mechanism: MechanismKind,
    sigma_dp_sq: f64,
    kappa: u64,
    last_time: u64,
    times: Vec<u64>,
    means: Vec<f64>,
    keep_history: bool,
    max_history: Option<usize>,
    t_value: f64,
    data_coef: f64,
    noise_var: f64,
    v_estimate: f64,
}

impl PeerStatistic {
    pub fn new(scheme: WeightScheme, mechanism: MechanismKind, sigma_dp_sq: f64) -> Self {
        Self {
            scheme,
            mechanism,
            sigma_dp_sq,
            kappa: 0,
            last_time: 0,
            times: Vec::new(),
            means: Vec::new(),
            keep_history: scheme.needs_history(),
            max_history: None,
            t_value: 0.0,
            data_coef: f64::INFINITY,
            noise_var: f64::INFINITY,
            v_estimate: f64::INFINITY,
        }
    }

    /// Caps the number of retained releases; exceeding it is an error.
    pub fn with_max_history(mut self, cap: Option<usize>) -> Self {
        self.max_history = cap;
        self
    }

    /// Retains the release history even when the scheme does not need it.
    pub fn with_history(mut self) -> Self {
        self.keep_history = true;
        self
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn mechanism(&self) -> MechanismKind {
        self.mechanism
    }

    pub fn kappa(&self) -> u64 {
        self.kappa
    }

    pub fn last_time(&self) -> u64 {
        self.last_time
    }

    /// Retained query times (empty when history is not kept).
    pub fn query_times(&self) -> &[u64] {
        &self.times
    }

    pub fn noisy_means(&self) -> &[f64] {
        &self.means
    }

    pub fn t_value(&self) -> f64 {
        self.t_value
    }

    /// `D`, so that the data part of `Var(T)` is `sigma_b^2 * D`. `+inf` before the first release.
    pub fn data_coefficient(&self) -> f64 {
        self.data_coef
    }

    /// Noise part of `Var(T)`. `+inf` before the first release.
    pub fn noise_variance(&self) -> f64 {
        self.noise_var
    }

    /// `Var(T)` given the true data variance of the peer.
    pub fn variance(&self, sigma_b_sq: f64) -> f64 {
        if self.kappa == 0 {
            return f64::INFINITY;
        }
        sigma_b_sq * self.data_coef + self.noise_var
    }

    /// Current data-variance estimate `V_{b->a}` (`+inf` when unavailable).
    pub fn v_estimate(&self) -> f64 {
        self.v_estimate
    }

    pub fn set_v_estimate(&mut self, v: f64) {
        debug_assert!(!v.is_nan());
        self.v_estimate = v;
    }

    /// `Var(T)` with the data variance replaced by `V_{b->a}`.
    pub fn estimated_variance(&self) -> f64 {
        estimated_variance(self, self.v_estimate)
    }

    /// Folds a new release into `T` and its variance decomposition.
    pub fn update(&mut self, r: &Release) -> Result<()> {
        if r.time <= self.last_time {
            return Err(protocol_err(format!(
                "release at t={} does not follow last query time {}",
                r.time, self.last_time
            )));
        }
        self.kappa += 1;
        self.last_time = r.time;
        if self.keep_history {
            if let Some(cap) = self.max_history {
                if self.times.len() >= cap {
                    return Err(protocol_err(format!("release history exceeds configured cap {cap}")));
                }
            }
            self.times.push(r.time);
            self.means.push(r.noisy_mean);
        }
        if self.scheme == WeightScheme::NonMom {
            // Only the newest release carries weight.
            self.t_value = r.noisy_mean;
            self.data_coef = 1.0 / r.time as f64;
            self.noise_var = r.noise_variance;
        } else {
            let w = self.scheme.weights(self.times.len());
            self.t_value = w.iter().zip(&self.means).map(|(wi, m)| wi * m).sum();
            self.data_coef = data_variance_coefficient(&self.times, &w);
            self.noise_var = noise_variance_term(self.mechanism, &self.times, &w, self.sigma_dp_sq);
        }
        Ok(())
    }
}

/// `V * D + N`, or `+inf` if `V` is not finite or nothing was received yet.
pub fn estimated_variance(ps: &PeerStatistic, v_estimate: f64) -> f64 {
    if ps.kappa == 0 || !v_estimate.is_finite() {
        return f64::INFINITY;
    }
    v_estimate * ps.data_coef + ps.noise_var
}
