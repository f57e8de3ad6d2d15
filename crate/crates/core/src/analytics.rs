//! Closed-form error curves: the local and ideal baselines and the oracle-class
//! curves for round robin and restricted round robin.

use rand::seq::index::sample;

use crate::error::{config_err, param_err, Result};
use crate::noise::{SeedTree, StreamTag};
use crate::privacy::MechanismKind;
use crate::protocol::{ClassAssignment, SimConfig};
use crate::stats::{data_variance_coefficient, noise_variance_term, WeightScheme};

/// `(1 / (M t)) sum_a sigma_a^2`.
pub fn local_mse(sigmas: &[f64], t: u64) -> f64 {
    let m = sigmas.len() as f64;
    sigmas.iter().map(|s| s * s).sum::<f64>() / (m * t as f64)
}

/// `(1 / (M t)) sum_a sigma_a^2 / |C_a|`.
pub fn ideal_mse(sigmas: &[f64], class_sizes: &[usize], t: u64) -> f64 {
    assert_eq!(sigmas.len(), class_sizes.len());
    let m = sigmas.len() as f64;
    sigmas.iter().zip(class_sizes).map(|(s, &c)| s * s / c as f64).sum::<f64>() / (m * t as f64)
}

/// `E[1/|C_a|]` when each of the other `M - 1` agents shares the class with
/// probability `p`: `(1 - (1-p)^M) / (M p)`.
pub fn expected_inverse_class_size(m: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    (1.0 - (1.0 - p).powi(m as i32)) / (m as f64 * p)
}

/// Parameters of the oracle-class curves.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCurveConfig {
    pub agents: usize,
    /// Probability that another agent shares the class.
    pub p: f64,
    pub sigma: f64,
    pub mechanism: MechanismKind,
    pub weights: WeightScheme,
    pub sigma_dp_sq: f64,
    /// Only `n` within this distance of `p M` are summed; all when `None`.
    pub n_half_width: Option<f64>,
    /// Above this many peer subsets per `n`, a uniform sample of this size is averaged.
    pub combination_budget: usize,
    pub sample_seed: u64,
}

impl OracleCurveConfig {
    pub fn new(
        agents: usize,
        p: f64,
        sigma: f64,
        mechanism: MechanismKind,
        weights: WeightScheme,
        sigma_dp_sq: f64,
    ) -> Result<Self> {
        if agents < 2 {
            return Err(param_err(format!("need at least 2 agents, got {agents}")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(param_err(format!("p must lie in (0, 1], got {p}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) || !(sigma_dp_sq >= 0.0) {
            return Err(param_err("sigma must be positive and sigma_dp^2 nonnegative"));
        }
        Ok(Self {
            agents,
            p,
            sigma,
            mechanism,
            weights,
            sigma_dp_sq,
            n_half_width: Some(15.0),
            combination_budget: 10_000,
            sample_seed: 0,
        })
    }

    /// Curve parameters matching a simulation config with random class assignment
    /// and one common data standard deviation.
    pub fn from_sim(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let ClassAssignment::UniformRandom { classes } = cfg.assignment else {
            return Err(config_err("oracle curves need a uniformly random class assignment"));
        };
        if !cfg.homogeneous_sigma() {
            return Err(config_err("oracle curves need the same data variance for every agent"));
        }
        let plan = cfg.noise_plan()?;
        Self::new(cfg.agents, 1.0 / classes as f64, cfg.class_std(0), cfg.mechanism, cfg.weights, plan.sigma_dp_sq)
    }

    fn n_range(&self, m: usize) -> (usize, usize) {
        match self.n_half_width {
            None => (1, m),
            Some(h) => {
                let pm = self.p * m as f64;
                let lo = ((pm - h).floor().max(1.0)) as usize;
                let hi = ((pm + h).ceil() as usize).min(m);
                (lo.min(m), hi)
            }
        }
    }
}

/// `ln C(n, k)`.
fn ln_choose(n: usize, k: usize) -> f64 {
    crate::noise::special::ln_gamma(n as f64 + 1.0)
        - crate::noise::special::ln_gamma(k as f64 + 1.0)
        - crate::noise::special::ln_gamma((n - k) as f64 + 1.0)
}

/// `p^{n-1} (1-p)^{M-n}` with `0^0 = 1`.
fn class_probability(p: f64, m: usize, n: usize) -> f64 {
    let a = if n == 1 { 1.0 } else { p.powi((n - 1) as i32) };
    let b = if m == n { 1.0 } else { (1.0 - p).powi((m - n) as i32) };
    a * b
}

/// Query times of the peer at position `pos` (1-based) when `period` peers are
/// cycled: `pos + (i - 1) period` up to `t`.
pub fn round_robin_times(pos: usize, period: usize, t: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut s = pos as u64;
    while s <= t {
        out.push(s);
        s += period as u64;
    }
    out
}

/// `1 / Var(T)` of a peer queried at `times`; zero before its first release.
pub fn peer_precision(cfg: &OracleCurveConfig, times: &[u64]) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let w = cfg.weights.weights(times.len());
    let var = cfg.sigma * cfg.sigma * data_variance_coefficient(times, &w)
        + noise_variance_term(cfg.mechanism, times, &w, cfg.sigma_dp_sq);
    1.0 / var
}

fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    if k == 0 {
        f(&idx);
        return;
    }
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Average over `(n-1)`-subsets of the peers of `1 / (t/sigma^2 + sum precision)`.
fn subset_average(cfg: &OracleCurveConfig, prec: &[f64], k: usize, own: f64) -> f64 {
    let peers = prec.len();
    let ln_count = ln_choose(peers, k);
    if ln_count <= (cfg.combination_budget as f64).ln() + 1e-9 {
        let mut total = 0.0;
        let mut count = 0usize;
        for_each_subset(peers, k, &mut |s| {
            total += 1.0 / (own + s.iter().map(|&j| prec[j]).sum::<f64>());
            count += 1;
        });
        total / count as f64
    } else {
        let mut rng = SeedTree::new(cfg.sample_seed).stream(StreamTag::Subsample, peers as u64, k as u64);
        let draws = cfg.combination_budget;
        let mut total = 0.0;
        for _ in 0..draws {
            let s = sample(&mut rng, peers, k);
            total += 1.0 / (own + s.iter().map(|j| prec[j]).sum::<f64>());
        }
        total / draws as f64
    }
}

/// Average squared error with oracle classes and round robin over all peers.
pub fn oracle_rr_mse(cfg: &OracleCurveConfig, t: u64) -> f64 {
    let m = cfg.agents;
    let own = t as f64 / (cfg.sigma * cfg.sigma);
    let prec: Vec<f64> = (1..m).map(|pos| peer_precision(cfg, &round_robin_times(pos, m - 1, t))).collect();
    let (lo, hi) = cfg.n_range(m);
    let mut total = 0.0;
    for n in lo..=hi {
        let weight = (ln_choose(m - 1, n - 1)).exp() * class_probability(cfg.p, m, n);
        if weight == 0.0 {
            continue;
        }
        total += weight * subset_average(cfg, &prec, n - 1, own);
    }
    total
}

/// Average squared error with oracle classes and round robin restricted to the class:
/// the `n - 1` class peers are cycled with period `n - 1`.
pub fn oracle_rrr_mse(cfg: &OracleCurveConfig, t: u64) -> f64 {
    let m = cfg.agents;
    let own = t as f64 / (cfg.sigma * cfg.sigma);
    let (lo, hi) = cfg.n_range(m);
    let mut total = 0.0;
    for n in lo..=hi {
        let weight = (ln_choose(m - 1, n - 1)).exp() * class_probability(cfg.p, m, n);
        if weight == 0.0 {
            continue;
        }
        let e: f64 = own + (1..n).map(|j| peer_precision(cfg, &round_robin_times(j, n - 1, t))).sum::<f64>();
        total += weight / e;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseKind, PrivacyParams};
    use approx::assert_relative_eq;

    fn pm1(m: usize, p: f64) -> OracleCurveConfig {
        let sdp = PrivacyParams::new(1.0, 1e-6, 0.5 * 3f64.sqrt(), NoiseKind::Gaussian).unwrap().sigma_dp_squared();
        OracleCurveConfig::new(m, p, 0.5, MechanismKind::Pm1, WeightScheme::NonMom, sdp).unwrap()
    }

    #[test]
    fn baseline_examples() {
        assert_relative_eq!(local_mse(&[0.5; 7], 100), 0.0025, max_relative = 1e-15);
        assert_eq!(local_mse(&[1.0], 1), 1.0);
        assert_relative_eq!(local_mse(&[0.0, 1.0], 10), 0.05, max_relative = 1e-15);
        assert_relative_eq!(ideal_mse(&[0.5; 5], &[5; 5], 100), 0.0005, max_relative = 1e-15);
        assert_eq!(ideal_mse(&[0.5, 0.3], &[1, 1], 9), local_mse(&[0.5, 0.3], 9));
        assert_relative_eq!(ideal_mse(&[0.5; 4], &[4; 4], 9), local_mse(&[0.5; 4], 9) / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn inverse_class_size_matches_binomial_sum() {
        for m in [2usize, 5, 15] {
            for p in [0.2, 1.0 / 3.0, 1.0] {
                let direct: f64 =
                    (1..=m).map(|n| ln_choose(m - 1, n - 1).exp() * class_probability(p, m, n) / n as f64).sum();
                assert_relative_eq!(expected_inverse_class_size(m, p), direct, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn subsets_enumerated_once() {
        let mut seen = Vec::new();
        for_each_subset(5, 2, &mut |s| seen.push(s.to_vec()));
        assert_eq!(seen.len(), 10);
        assert_eq!(seen[0], vec![0, 1]);
        assert_eq!(seen[9], vec![3, 4]);
        let mut n = 0;
        for_each_subset(4, 0, &mut |_| n += 1);
        assert_eq!(n, 1);
    }

    #[test]
    fn small_t_inner_term_by_hand() {
        // M = 2, p = 1: the only peer is queried at t = 1, 2, ... every step.
        let cfg = pm1(2, 1.0);
        let t = 1;
        let s2 = 0.25;
        let want = 1.0 / (t as f64 / s2 + 1.0 / (s2 / 1.0 + cfg.sigma_dp_sq / 1.0));
        assert_relative_eq!(oracle_rr_mse(&cfg, t), want, max_relative = 1e-14);
    }

    #[test]
    fn probability_mass_sums_to_one() {
        for m in 2..=12 {
            for &p in &[0.1, 1.0 / 3.0, 0.5, 0.9, 1.0] {
                let total: f64 = (1..=m).map(|n| ln_choose(m - 1, n - 1).exp() * class_probability(p, m, n)).sum();
                assert_relative_eq!(total, 1.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn huge_noise_gives_local_curve() {
        let mut cfg = pm1(6, 0.5);
        cfg.sigma_dp_sq = 1e30;
        for t in [1, 10, 100] {
            assert_relative_eq!(oracle_rr_mse(&cfg, t), 0.25 / t as f64, max_relative = 1e-12);
            assert_relative_eq!(oracle_rrr_mse(&cfg, t), 0.25 / t as f64, max_relative = 1e-12);
        }
    }

    #[test]
    fn rr_and_rrr_agree_with_one_class() {
        let cfg = pm1(4, 1.0);
        for t in 1..=50 {
            assert_relative_eq!(oracle_rr_mse(&cfg, t), oracle_rrr_mse(&cfg, t), max_relative = 1e-13);
        }
    }

    #[test]
    fn singleton_class_term() {
        // With p -> tiny, only n = 1 matters: (1-p)^{M-1} sigma^2 / t.
        let cfg = pm1(5, 1e-9);
        let t = 40;
        let want = (1.0 - 1e-9f64).powi(4) * 0.25 / 40.0;
        assert_relative_eq!(oracle_rr_mse(&cfg, t), want, max_relative = 1e-6);
        assert_relative_eq!(oracle_rrr_mse(&cfg, t), want, max_relative = 1e-6);
    }

    #[test]
    fn expanded_pm1_formula_matches() {
        let cfg = pm1(7, 0.4);
        let m = cfg.agents;
        for t in [3u64, 20, 77, 300] {
            for pos in 1..m {
                let kappa = if t as usize >= pos { (t as usize - pos) / (m - 1) + 1 } else { 0 };
                let want = if kappa == 0 {
                    0.0
                } else {
                    let tk = (pos + (kappa - 1) * (m - 1)) as f64;
                    1.0 / (0.25 / tk + kappa as f64 * cfg.sigma_dp_sq / (tk * tk))
                };
                let got = peer_precision(&cfg, &round_robin_times(pos, m - 1, t));
                assert_relative_eq!(got, want, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn truncation_is_negligible() {
        for m in [8usize, 14, 20] {
            let mut full = pm1(m, 1.0 / 3.0);
            full.n_half_width = None;
            let trunc = pm1(m, 1.0 / 3.0);
            for t in [10, 200] {
                assert_relative_eq!(oracle_rr_mse(&trunc, t), oracle_rr_mse(&full, t), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn oracle_between_ideal_and_local_when_settled() {
        let cfg = pm1(10, 1.0 / 3.0);
        for t in [500u64, 2000, 8000] {
            let o = oracle_rr_mse(&cfg, t);
            let local = 0.25 / t as f64;
            // E[1/|C|] for a binomial class size.
            let ideal: f64 = (1..=10)
                .map(|n| ln_choose(9, n - 1).exp() * class_probability(cfg.p, 10, n) * local / n as f64)
                .sum();
            assert!(o < local && o > ideal, "t={t}: {ideal} {o} {local}");
        }
    }
}
