//! Slow reference computations used to cross-check the closed forms and
//! special-function evaluations elsewhere in the crate.

use std::collections::BTreeMap;

use crate::privacy::MechanismKind;

/// Noise intervals `(start, end]` used by release `j = 1..=times.len()`, obtained by
/// replaying the mechanism's bookkeeping without any arithmetic shortcuts.
pub fn release_intervals(kind: MechanismKind, times: &[u64]) -> Vec<Vec<(u64, u64)>> {
    let mut out = Vec::with_capacity(times.len());
    match kind {
        MechanismKind::Pm1 => {
            let mut parts: Vec<(u64, u64)> = Vec::new();
            let mut prev = 0;
            for &t in times {
                parts.push((prev, t));
                prev = t;
                out.push(parts.clone());
            }
        }
        MechanismKind::Pm2 => {
            // (start, end, number of releases merged)
            let mut stack: Vec<(u64, u64, u64)> = Vec::new();
            let mut prev = 0;
            for &t in times {
                stack.push((prev, t, 1));
                prev = t;
                loop {
                    let n = stack.len();
                    if n < 2 || stack[n - 1].2 != stack[n - 2].2 {
                        break;
                    }
                    let top = stack.pop().unwrap();
                    let below = stack.pop().unwrap();
                    stack.push((below.0, top.1, below.2 + top.2));
                }
                out.push(stack.iter().map(|&(s, e, _)| (s, e)).collect());
            }
        }
    }
    out
}

/// `Var(sum_j w_j Z^{(t_j)})` by collecting, for every distinct noise interval,
/// the total coefficient `sum w_j / t_j` over the releases that contain it.
pub fn brute_force_noise_variance(kind: MechanismKind, times: &[u64], weights: &[f64], sigma_dp_sq: f64) -> f64 {
    let mut coef: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for (j, parts) in release_intervals(kind, times).iter().enumerate() {
        for p in parts {
            *coef.entry(*p).or_insert(0.0) += weights[j] / times[j] as f64;
        }
    }
    sigma_dp_sq * coef.values().map(|c| c * c).sum::<f64>()
}

/// `Var(sum_j w_j Xbar^{(t_j)})` by summing, sample by sample, the squared total
/// coefficient `sum_{j : t_j >= s} w_j / t_j` of `X^{(s)}`.
pub fn brute_force_data_variance(times: &[u64], weights: &[f64], sigma_sq: f64) -> f64 {
    let last = times.last().copied().unwrap_or(0);
    let mut acc = 0.0;
    for s in 1..=last {
        let c: f64 = times
            .iter()
            .zip(weights)
            .filter(|(&t, _)| t >= s)
            .map(|(&t, &w)| w / t as f64)
            .sum();
        acc += c * c;
    }
    sigma_sq * acc
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Posterior mean of `s = sigma_b^2 >= 0` under the density proportional to
/// `(s + c)^{-shape-1} exp(-beta / (s + c))`, with `c = K sigma_dp^2` and
/// `beta = (kappa - 1) V' / 2`, by direct numerical integration.
///
/// The half line is mapped to `(0, 1]` with `s = c (1 - u) / u`.
pub fn posterior_mean_quadrature(v_prime: f64, kappa: u64, k: f64, sigma_dp_sq: f64, shape: f64) -> f64 {
    let c = k * sigma_dp_sq;
    let beta = (kappa as f64 - 1.0) * v_prime / 2.0;
    // Density of s at s(u), times ds/du = c / u^2, normalized by its value scale.
    let log_dens = |u: f64| {
        let s = c * (1.0 - u) / u;
        let y = s + c;
        (-shape - 1.0) * y.ln() - beta / y + (c / (u * u)).ln()
    };
    // Log-density peak, to keep the integrands well scaled.
    let mut peak = f64::NEG_INFINITY;
    for i in 1..=4000 {
        let u = i as f64 / 4000.0;
        peak = peak.max(log_dens(u));
    }
    let dens = |u: f64| if u <= 0.0 { 0.0 } else { (log_dens(u) - peak).exp() };
    let moment = |u: f64| if u <= 0.0 { 0.0 } else { c * (1.0 - u) / u * dens(u) };
    // Geometric panels resolve mass that piles up near u = 0.
    let mut edges = vec![0.0];
    let mut e = 1e-12;
    while e < 1.0 {
        edges.push(e);
        e *= 10.0;
    }
    edges.push(1.0);
    let mut z = 0.0;
    let mut m1 = 0.0;
    for w in edges.windows(2) {
        z += integrate(dens, w[0], w[1], 1e-15);
        m1 += integrate(moment, w[0], w[1], 1e-15);
    }
    m1 / z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{data_variance_term, noise_variance_term, WeightScheme};
    use approx::assert_relative_eq;

    #[test]
    fn pm2_intervals_follow_binary_counting() {
        let times: Vec<u64> = (1..=7).collect();
        let iv = release_intervals(MechanismKind::Pm2, &times);
        assert_eq!(iv[4], vec![(0, 4), (4, 5)]);
        assert_eq!(iv[5], vec![(0, 4), (4, 6)]);
        assert_eq!(iv[6], vec![(0, 4), (4, 6), (6, 7)]);
    }

    #[test]
    fn matches_stats_on_small_cases() {
        let times = [2u64, 3, 7, 8, 12, 13, 20, 21, 30];
        for kind in [MechanismKind::Pm1, MechanismKind::Pm2] {
            for s in [WeightScheme::NonMom, WeightScheme::Mom, WeightScheme::WMom] {
                let w = s.weights(times.len());
                assert_relative_eq!(
                    brute_force_noise_variance(kind, &times, &w, 1.3),
                    noise_variance_term(kind, &times, &w, 1.3),
                    max_relative = 1e-12
                );
                assert_relative_eq!(
                    brute_force_data_variance(&times, &w, 0.7),
                    data_variance_term(0.7, &times, &w),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn quadrature_basics() {
        assert_relative_eq!(integrate(|x| x * x, 0.0, 3.0, 1e-14), 9.0, max_relative = 1e-12);
        assert_relative_eq!(integrate(|x: f64| x.exp(), 0.0, 1.0, 1e-14), 1f64.exp() - 1.0, max_relative = 1e-12);
    }
}
