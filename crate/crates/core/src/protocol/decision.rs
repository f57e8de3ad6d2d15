//! Per-peer tests, the inverse-variance combination and peer scheduling.

use crate::noise::{std_normal_quantile, student_t_two_sided_tail};

use super::config::Schedule;

/// Known-variance test: accept iff `|xbar_a - T| < z_{1-theta/2} sqrt(sigma_a^2/t + Var(T))`.
/// A peer with infinite `Var(T)` is accepted.
pub fn decide_known(xbar_a: f64, t: u64, sigma_a_sq: f64, t_value: f64, var_t: f64, theta: f64) -> bool {
    if !var_t.is_finite() {
        return true;
    }
    let z = std_normal_quantile(1.0 - theta / 2.0).unwrap_or(f64::INFINITY);
    accept_with_quantile(xbar_a - t_value, sigma_a_sq / t as f64 + var_t, z)
}

/// Same as [`decide_known`] with a precomputed `z_{1-theta/2}`.
pub fn decide_known_with_z(xbar_a: f64, t: u64, sigma_a_sq: f64, t_value: f64, var_t: f64, z: f64) -> bool {
    if !var_t.is_finite() {
        return true;
    }
    accept_with_quantile(xbar_a - t_value, sigma_a_sq / t as f64 + var_t, z)
}

fn accept_with_quantile(diff: f64, var: f64, q: f64) -> bool {
    if var <= 0.0 {
        return diff == 0.0;
    }
    diff.abs() < q * var.sqrt()
}

/// Welch degrees of freedom for the own-mean term `v_a / t` and the peer term `var_t`
/// built from `t_kappa` samples. `None` when either side has fewer than two samples.
pub fn welch_dof(v_a: f64, t: u64, var_t: f64, t_kappa: u64) -> Option<f64> {
    if t < 2 || t_kappa < 2 {
        return None;
    }
    let own = v_a / t as f64;
    let num = (own + var_t).powi(2);
    let den = own * own / (t - 1) as f64 + var_t * var_t / (t_kappa - 1) as f64;
    if den == 0.0 {
        return Some(f64::INFINITY);
    }
    Some((num / den).max(1.0))
}

/// Welch test with estimated variances: accept iff
/// `|xbar_a - T| < t_{nu, 1-theta/2} sqrt(v_a/t + hat_var_t)`.
/// Missing or infinite estimates and degenerate degrees of freedom accept.
pub fn decide_unknown(
    xbar_a: f64,
    t: u64,
    v_a: f64,
    t_value: f64,
    hat_var_t: f64,
    t_kappa: u64,
    theta: f64,
) -> bool {
    let z = std_normal_quantile(1.0 - theta / 2.0).unwrap_or(f64::INFINITY);
    decide_unknown_with_z(xbar_a, t, v_a, t_value, hat_var_t, t_kappa, theta, z)
}

/// Same as [`decide_unknown`] with a precomputed normal quantile `z_{1-theta/2}`.
#[allow(clippy::too_many_arguments)]
pub fn decide_unknown_with_z(
    xbar_a: f64,
    t: u64,
    v_a: f64,
    t_value: f64,
    hat_var_t: f64,
    t_kappa: u64,
    theta: f64,
    z: f64,
) -> bool {
    if !v_a.is_finite() || !hat_var_t.is_finite() {
        return true;
    }
    let Some(nu) = welch_dof(v_a, t, hat_var_t, t_kappa) else {
        return true;
    };
    let var = v_a / t as f64 + hat_var_t;
    let diff = xbar_a - t_value;
    if var <= 0.0 {
        return diff == 0.0;
    }
    let stat = diff.abs() / var.sqrt();
    // t quantiles exceed the normal one, so small statistics accept without the tail.
    if stat < z {
        return true;
    }
    if !nu.is_finite() {
        return false;
    }
    match student_t_two_sided_tail(stat, nu) {
        Ok(p) => p > theta,
        Err(_) => true,
    }
}

/// Result of an inverse-variance combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub estimate: f64,
    /// `1 / sum(1/var)`; zero when some entry is exact.
    pub variance: f64,
    /// One weight per input entry; sums to one.
    pub weights: Vec<f64>,
}

/// Inverse-variance weighting of `(value, variance)` pairs. The first entry is the
/// agent's own mean and is used alone when its variance is not finite. Entries
/// with infinite variance get weight zero; entries with zero variance share all
/// the weight equally.
pub fn combine_estimate(entries: &[(f64, f64)]) -> Combination {
    assert!(!entries.is_empty(), "combine_estimate needs the own mean");
    let n = entries.len();
    let mut weights = vec![0.0; n];
    if !entries[0].1.is_finite() {
        weights[0] = 1.0;
        return Combination { estimate: entries[0].0, variance: entries[0].1, weights };
    }
    let exact = entries.iter().filter(|e| e.1 == 0.0).count();
    if exact > 0 {
        let w = 1.0 / exact as f64;
        let mut est = 0.0;
        for (i, e) in entries.iter().enumerate() {
            if e.1 == 0.0 {
                weights[i] = w;
                est += w * e.0;
            }
        }
        return Combination { estimate: est, variance: 0.0, weights };
    }
    let mut total = 0.0;
    for (i, e) in entries.iter().enumerate() {
        if e.1.is_finite() {
            weights[i] = 1.0 / e.1;
            total += weights[i];
        }
    }
    let mut est = 0.0;
    for (w, e) in weights.iter_mut().zip(entries) {
        *w /= total;
        est += *w * e.0;
    }
    Combination { estimate: est, variance: 1.0 / total, weights }
}

/// Peer order of one agent: all other agents by index, and a cursor into it.
#[derive(Debug, Clone)]
pub struct PeerCursor {
    order: Vec<usize>,
    next: usize,
}

impl PeerCursor {
    pub fn new(agents: usize, me: usize) -> Self {
        Self { order: (0..agents).filter(|&b| b != me).collect(), next: 0 }
    }

    /// Next peer to query. Under restricted round robin, peers for which
    /// `eligible` is false are skipped; `None` if there is none.
    pub fn choose(&mut self, schedule: Schedule, eligible: impl Fn(usize) -> bool) -> Option<usize> {
        let n = self.order.len();
        if n == 0 {
            return None;
        }
        match schedule {
            Schedule::RoundRobin => {
                let b = self.order[self.next];
                self.next = (self.next + 1) % n;
                Some(b)
            }
            Schedule::RestrictedRoundRobin => {
                for step in 0..n {
                    let idx = (self.next + step) % n;
                    let b = self.order[idx];
                    if eligible(b) {
                        self.next = (idx + 1) % n;
                        return Some(b);
                    }
                }
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::student_t_quantile;
    use approx::assert_relative_eq;

    #[test]
    fn known_test_examples() {
        assert!(decide_known(0.3, 10, 0.25, 0.3, 0.01, 0.05));
        let var: f64 = 0.25 / 10.0 + 0.01;
        assert!(!decide_known(0.3 + 3.0 * var.sqrt(), 10, 0.25, 0.3, 0.01, 0.05));
        assert!(decide_known(0.3 + 1.9 * var.sqrt(), 10, 0.25, 0.3, 0.01, 0.05));
        assert!(decide_known(100.0, 10, 0.25, 0.3, f64::INFINITY, 0.05));
    }

    #[test]
    fn welch_symmetric_dof() {
        // v_a / t = var_t = s with t = t_kappa = n gives nu = 2 (n - 1).
        let nu = welch_dof(0.5 * 20.0, 20, 0.5, 20).unwrap();
        assert_relative_eq!(nu, 38.0, max_relative = 1e-14);
        assert!(welch_dof(1.0, 1, 1.0, 5).is_none());
        assert!(welch_dof(1.0, 5, 1.0, 1).is_none());
    }

    #[test]
    fn unknown_test_conventions() {
        assert!(decide_unknown(0.0, 10, 0.25, 50.0, f64::INFINITY, 10, 0.05));
        assert!(decide_unknown(0.0, 10, f64::INFINITY, 50.0, 0.1, 10, 0.05));
        assert!(decide_unknown(0.0, 1, 0.25, 50.0, 0.1, 10, 0.05));
        assert!(!decide_unknown(0.0, 10, 0.25, 50.0, 0.1, 10, 0.05));
    }

    #[test]
    fn tail_form_matches_quantile_form() {
        let mut checked = 0;
        for i in 0..400 {
            let t = 2 + (i * 7) % 90;
            let tk = 2 + (i * 13) % 70;
            let v_a = 0.05 + (i % 11) as f64 * 0.03;
            let var_t = 0.001 + (i % 17) as f64 * 0.002;
            let theta = 0.01 + (i % 9) as f64 * 0.02;
            let nu = welch_dof(v_a, t, var_t, tk).unwrap();
            let s = (v_a / t as f64 + var_t).sqrt();
            let q = student_t_quantile(1.0 - theta / 2.0, nu).unwrap();
            for f in [0.5, 0.97, 0.999, 1.001, 1.03, 2.0] {
                let diff = f * q * s;
                let want = diff < q * s;
                assert_eq!(decide_unknown(diff, t, v_a, 0.0, var_t, tk, theta), want, "i={i} f={f}");
                checked += 1;
            }
        }
        assert_eq!(checked, 2400);
    }

    #[test]
    fn combination_examples() {
        let c = combine_estimate(&[(0.4, 0.1)]);
        assert_eq!(c.estimate, 0.4);
        let c = combine_estimate(&[(0.0, 0.1), (1.0, 0.1)]);
        assert_relative_eq!(c.weights[0], 0.5);
        assert_relative_eq!(c.variance, 0.05, max_relative = 1e-15);
        let c = combine_estimate(&[(0.0, 1.0), (1.0, 2.0), (2.0, 2.0)]);
        assert_relative_eq!(c.weights[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(c.weights[1], 0.25, max_relative = 1e-15);
        assert_relative_eq!(c.weights[2], 0.25, max_relative = 1e-15);
        let c = combine_estimate(&[(0.0, 1.0), (5.0, f64::INFINITY)]);
        assert_eq!(c.weights, vec![1.0, 0.0]);
        let c = combine_estimate(&[(0.3, f64::INFINITY), (5.0, 0.1)]);
        assert_eq!(c.estimate, 0.3);
    }

    #[test]
    fn round_robin_order() {
        let mut c = PeerCursor::new(4, 0);
        let got: Vec<_> = (0..6).map(|_| c.choose(Schedule::RoundRobin, |_| true).unwrap()).collect();
        assert_eq!(got, vec![1, 2, 3, 1, 2, 3]);
        let mut c = PeerCursor::new(5, 2);
        for t in 1..=40usize {
            let b = c.choose(Schedule::RoundRobin, |_| true).unwrap();
            let pos = (t - 1) % 4;
            assert_eq!(b, if pos < 2 { pos } else { pos + 1 });
        }
    }

    #[test]
    fn restricted_round_robin_skips() {
        let mut c = PeerCursor::new(5, 0);
        let got: Vec<_> = (0..4).map(|_| c.choose(Schedule::RestrictedRoundRobin, |b| b % 2 == 0).unwrap()).collect();
        assert_eq!(got, vec![2, 4, 2, 4]);
        assert_eq!(c.choose(Schedule::RestrictedRoundRobin, |_| false), None);
    }
}
