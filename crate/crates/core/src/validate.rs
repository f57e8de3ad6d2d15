//! Self-checks comparing the implementation against independent references:
//! noise calibration, mechanism variance laws, closed forms versus enumeration,
//! estimator unbiasedness, the posterior-mean correction and test calibration.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::noise::{sample_noise, DataDistribution, NoiseKind, PrivacyParams, SeedTree, SimRng, StreamTag};
use crate::oracle::{brute_force_data_variance, brute_force_noise_variance, posterior_mean_quadrature};
use crate::privacy::{hamming_weight, MechanismKind, ReleaseChannel};
use crate::protocol::{decide_known, decide_unknown};
use crate::stats::{closed_form, data_variance_term, noise_variance_term, WeightScheme};
use crate::varest::{bayesian_improve, PrefixSums, SchVar1State, SchVar2State, VariancePrior};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: measured {:.6e}, expected {:.6e}, tolerance {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.expected,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Sizes and fault injection for [`run_validation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub quick: bool,
    pub seed: u64,
    /// Multiplies the noise variance actually drawn by the mechanisms under test.
    /// Anything other than 1 must make the mechanism-variance checks fail.
    pub sigma_dp_fault: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { quick: false, seed: 20_240_601, sigma_dp_fault: 1.0 }
    }
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Sample variance around a known zero mean, and its standard error.
fn zero_mean_variance(xs: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    mean_and_stderr(&sq)
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

fn stream(seed: u64, i: u64, j: u64) -> SimRng {
    SeedTree::new(seed).stream(StreamTag::Validation, i, j)
}

/// Noise variances against the calibration formulas written from scratch:
/// `sigma = sqrt(2 ln(1.25/delta)) Delta / eps` (Gaussian), `2 (Delta/eps)^2` (Laplace),
/// with `Delta = 2L` for means and `4L^2` for partial variances.
pub fn check_noise_formulas() -> CheckReport {
    let points = [
        (1.0, 1e-6, 0.5 * 3f64.sqrt()),
        (0.5, 1e-6, 0.5 * 3f64.sqrt()),
        (0.9, 1e-5, 1.0),
        (0.1, 1e-3, 0.25),
        (1.0 / 14.0, 1e-6 / 14.0, 0.866),
        (0.3, 0.4, 2.0),
        (0.75, 1e-9, 0.1),
        (0.6, 1e-2, 5.0),
        (0.25, 1e-7, 0.7),
        (1.0, 1e-4, 1.3),
    ];
    let mut worst: f64 = 0.0;
    for &(eps, delta, l) in &points {
        for kind in [NoiseKind::Gaussian, NoiseKind::Laplace] {
            let p = PrivacyParams::new(eps, delta, l, kind).expect("valid point");
            let (d1, d2) = (2.0 * l, 4.0 * l * l);
            let (e1, e2) = match kind {
                NoiseKind::Gaussian => {
                    let c = (2.0 * (1.25f64 / delta).ln()).sqrt();
                    ((c * d1 / eps).powi(2), (c * d2 / eps).powi(2))
                }
                NoiseKind::Laplace => (2.0 * (d1 / eps).powi(2), 2.0 * (d2 / eps).powi(2)),
            };
            worst = worst.max(rel_err(p.sigma_dp_squared(), e1)).max(rel_err(p.sigma2_dp_squared(), e2));
        }
    }
    CheckReport {
        name: "noise calibration formulas".into(),
        passed: worst <= 1e-12,
        measured: worst,
        expected: 0.0,
        tolerance: 1e-12,
        detail: format!("max relative error over {} points and both noise kinds", points.len()),
    }
}

/// Empirical variance of Laplace draws at the calibrated variance.
pub fn check_laplace_draws(draws: usize, seed: u64, fault: f64) -> CheckReport {
    let p = PrivacyParams::new(1.0, 1e-6, 0.5 * 3f64.sqrt(), NoiseKind::Laplace).unwrap();
    let target = p.sigma_dp_squared();
    let mut rng = stream(seed, 1, 0);
    let xs: Vec<f64> = (0..draws)
        .map(|_| sample_noise(target * fault, NoiseKind::Laplace, &mut rng).unwrap().value)
        .collect();
    let (v, se) = zero_mean_variance(&xs);
    CheckReport {
        name: "laplace draw variance".into(),
        passed: (v - target).abs() <= 3.0 * se,
        measured: v,
        expected: target,
        tolerance: 3.0 * se,
        detail: format!("{draws} draws, 3 standard errors"),
    }
}

/// `Var(t_kappa Z^{(t_kappa)})` over independent channels against `kappa sigma^2` (PM1)
/// or `w_H(kappa) sigma^2` (PM2).
pub fn check_mechanism_variance(
    kind: MechanismKind,
    noise: NoiseKind,
    kappa: u64,
    channels: usize,
    seed: u64,
    fault: f64,
) -> CheckReport {
    let sigma_sq = 2.0;
    let mut rng = stream(seed, 2, kappa * 2 + kind as u64);
    let mut xs = Vec::with_capacity(channels);
    for _ in 0..channels {
        let mut ch = ReleaseChannel::new(kind, noise, sigma_sq * fault);
        let mut last = None;
        for j in 1..=kappa {
            last = Some(ch.release_mean(0.0, 3 * j, &mut rng).expect("increasing times"));
        }
        let r = last.expect("kappa >= 1");
        xs.push(r.noisy_mean * r.time as f64);
    }
    let expected = match kind {
        MechanismKind::Pm1 => kappa as f64,
        MechanismKind::Pm2 => hamming_weight(kappa) as f64,
    } * sigma_sq;
    let (v, se) = zero_mean_variance(&xs);
    CheckReport {
        name: format!("{kind:?} {noise:?} noise variance at kappa={kappa}"),
        passed: (v - expected).abs() <= 3.0 * se,
        measured: v,
        expected,
        tolerance: 3.0 * se,
        detail: format!("{channels} channels, 3 standard errors"),
    }
}

/// General variance formulas against per-sample/per-interval enumeration and,
/// where they exist, the closed forms, on random instances.
pub fn check_closed_forms(instances: usize, seed: u64) -> CheckReport {
    let mut rng = stream(seed, 3, 0);
    let schemes = [WeightScheme::NonMom, WeightScheme::Mom, WeightScheme::WMom];
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let kind = if rng.random::<bool>() { MechanismKind::Pm1 } else { MechanismKind::Pm2 };
        let scheme = schemes[rng.random_range(0..3)];
        let kappa = rng.random_range(1..=64usize);
        let mut times = Vec::with_capacity(kappa);
        let mut t = 0u64;
        for _ in 0..kappa {
            t += rng.random_range(1..=20u64);
            times.push(t);
        }
        let sigma_sq = rng.random_range(0.01..2.0);
        let dp = rng.random_range(0.01..100.0);
        let w = scheme.weights(kappa);
        let data = data_variance_term(sigma_sq, &times, &w);
        let noise = noise_variance_term(kind, &times, &w, dp);
        worst = worst
            .max(rel_err(data, brute_force_data_variance(&times, &w, sigma_sq)))
            .max(rel_err(noise, brute_force_noise_variance(kind, &times, &w, dp)));
        let k = kappa as u64;
        match scheme {
            WeightScheme::NonMom => {
                worst = worst.max(rel_err(data, closed_form::non_mom_data(sigma_sq, t)));
                let cf = match kind {
                    MechanismKind::Pm1 => closed_form::pm1_non_mom_noise(k, t, dp),
                    MechanismKind::Pm2 => closed_form::pm2_non_mom_noise(k, t, dp),
                };
                worst = worst.max(rel_err(noise, cf));
            }
            WeightScheme::Mom => {
                worst = worst.max(rel_err(data, closed_form::mom_data(sigma_sq, &times)));
                if kind == MechanismKind::Pm1 {
                    worst = worst.max(rel_err(noise, closed_form::pm1_mom_noise(&times, dp)));
                }
            }
            WeightScheme::WMom => {}
        }
    }
    CheckReport {
        name: "variance closed forms vs enumeration".into(),
        passed: worst <= 1e-12,
        measured: worst,
        expected: 0.0,
        tolerance: 1e-12,
        detail: format!("{instances} random instances, kappa <= 64"),
    }
}

fn simplex_points(dim: usize, steps: usize, f: &mut impl FnMut(&[f64])) {
    fn rec(dim: usize, left: usize, steps: usize, cur: &mut Vec<f64>, f: &mut impl FnMut(&[f64])) {
        if cur.len() + 1 == dim {
            cur.push(left as f64 / steps as f64);
            f(cur);
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k as f64 / steps as f64);
            rec(dim, left - k, steps, cur, f);
            cur.pop();
        }
    }
    rec(dim, steps, steps, &mut Vec::with_capacity(dim), f);
}

/// Under PM1 with round-robin query times, the smallest `Var(T)` over a grid on
/// the weight simplex is attained by keeping only the newest release.
pub fn check_keep_last_optimal(max_kappa: usize, steps: usize) -> CheckReport {
    let sigma_sq = 0.25;
    let dp = PrivacyParams::new(1.0, 1e-6, 0.5 * 3f64.sqrt(), NoiseKind::Gaussian).unwrap().sigma_dp_squared();
    let mut failures = Vec::new();
    let mut worst_gap = f64::INFINITY;
    for kappa in 1..=max_kappa {
        // Peer at position 2 of 4 in a round robin over 5 agents.
        let times: Vec<u64> = (0..kappa as u64).map(|i| 2 + 4 * i).collect();
        let var = |w: &[f64]| {
            data_variance_term(sigma_sq, &times, w) + noise_variance_term(MechanismKind::Pm1, &times, w, dp)
        };
        let vertex = var(&WeightScheme::NonMom.weights(kappa));
        let mut best = f64::INFINITY;
        let mut best_w = Vec::new();
        simplex_points(kappa, steps, &mut |w| {
            let v = var(w);
            if v < best {
                best = v;
                best_w = w.to_vec();
            }
        });
        let at_vertex = best_w.last().copied() == Some(1.0);
        if !at_vertex || best < vertex * (1.0 - 1e-12) {
            failures.push(kappa);
        }
        // Closest non-vertex competitor relative to the vertex.
        if kappa > 1 {
            let mut second = f64::INFINITY;
            simplex_points(kappa, steps, &mut |w| {
                if w[kappa - 1] < 1.0 {
                    second = second.min(var(w));
                }
            });
            worst_gap = worst_gap.min(second / vertex - 1.0);
        }
    }
    CheckReport {
        name: "keep-last weights minimize Var(T) under PM1".into(),
        passed: failures.is_empty(),
        measured: if worst_gap.is_finite() { worst_gap } else { 0.0 },
        expected: 0.0,
        tolerance: 0.0,
        detail: if failures.is_empty() {
            format!("kappa <= {max_kappa}, grid step 1/{steps}; measured = smallest relative excess of any other grid point")
        } else {
            format!("minimum away from the vertex at kappa {failures:?}")
        },
    }
}

/// Mean of the raw partial-variance estimate over independent trials.
pub fn check_schvar1_unbiased(
    trials: usize,
    kind: MechanismKind,
    noise: NoiseKind,
    epsilon: f64,
    release_times: &[u64],
    seed: u64,
) -> CheckReport {
    let dist = DataDistribution::uniform(0.4, 0.5).unwrap();
    let p = PrivacyParams::new(epsilon, 1e-6, 0.5 * 3f64.sqrt(), noise).unwrap();
    let mut rng = stream(seed, 4, release_times.len() as u64 * 4 + noise as u64 * 2 + kind as u64);
    let t_end = *release_times.last().expect("at least one release");
    let mut xs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut ch = ReleaseChannel::new(kind, noise, p.sigma_dp_squared());
        let mut sv = SchVar1State::new(p.sigma2_dp_squared(), noise);
        let mut data = PrefixSums::new();
        let mut v = f64::NAN;
        let mut next = 0;
        for t in 1..=t_end {
            data.push(dist.sample(&mut rng));
            if release_times[next] == t {
                let r = ch.release_mean(data.range(0, t).0, t, &mut rng).unwrap();
                v = sv.release(&ch, &r, &data, &mut rng).unwrap();
                next += 1;
            }
        }
        xs.push(v);
    }
    let (m, se) = mean_and_stderr(&xs);
    CheckReport {
        name: format!("partial-variance estimate unbiased ({kind:?}, {noise:?}, eps={epsilon}, {} subsums)", release_times.len()),
        passed: (m - 0.25).abs() <= 3.0 * se,
        measured: m,
        expected: 0.25,
        tolerance: 3.0 * se,
        detail: format!("{trials} trials, 3 standard errors"),
    }
}

/// Mean of the raw release-reconstruction estimate over independent trials.
pub fn check_schvar2_unbiased(
    trials: usize,
    noise: NoiseKind,
    epsilon: f64,
    release_times: &[u64],
    seed: u64,
) -> CheckReport {
    let dist = DataDistribution::uniform(0.4, 0.5).unwrap();
    let p = PrivacyParams::new(epsilon, 1e-6, 0.5 * 3f64.sqrt(), noise).unwrap();
    let sdp = p.sigma_dp_squared();
    let mut rng = stream(seed, 5, release_times[0] * 4 + noise as u64);
    let t_end = *release_times.last().expect("at least two releases");
    let mut xs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut ch = ReleaseChannel::new(MechanismKind::Pm1, noise, sdp);
        let mut st = SchVar2State::new(MechanismKind::Pm1).unwrap();
        let mut sum = 0.0;
        let mut next = 0;
        for t in 1..=t_end {
            sum += dist.sample(&mut rng);
            if release_times[next] == t {
                let r = ch.release_mean(sum, t, &mut rng).unwrap();
                st.push(&r).unwrap();
                next += 1;
            }
        }
        xs.push(st.raw_estimate(sdp));
    }
    let (m, se) = mean_and_stderr(&xs);
    CheckReport {
        name: format!("reconstructed variance estimate unbiased ({noise:?}, eps={epsilon}, first gap {})", release_times[0]),
        passed: (m - 0.25).abs() <= 3.0 * se,
        measured: m,
        expected: 0.25,
        tolerance: 3.0 * se,
        detail: format!("{trials} trials, {} releases, 3 standard errors", release_times.len()),
    }
}

/// Posterior-mean correction against direct quadrature of the posterior, on random
/// cases with a negative raw estimate.
pub fn check_bayes_quadrature(cases: usize, seed: u64) -> CheckReport {
    let mut rng = stream(seed, 6, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let kappa = rng.random_range(2..=200u64);
        let m = rng.random_range(3..=200u64);
        let k = 1.0 / (m - 1) as f64;
        let sdp = 10f64.powf(rng.random_range(-1.0..2.5));
        let v_prime = k * sdp * rng.random_range(0.001..0.999);
        let v_raw = v_prime - k * sdp;
        let got = bayesian_improve(v_raw, v_prime, kappa, k, sdp).expect("valid case");
        let want = posterior_mean_quadrature(v_prime, kappa, k, sdp, VariancePrior::Uniform.shape(kappa));
        worst = worst.max(rel_err(got, want));
    }
    CheckReport {
        name: "posterior-mean correction vs quadrature".into(),
        passed: worst <= 1e-6,
        measured: worst,
        expected: 0.0,
        tolerance: 1e-6,
        detail: format!("{cases} random cases, max relative error"),
    }
}

/// Rejection rates of both tests on same-mean Gaussian streams of length `n`.
pub fn check_type_one(trials: usize, theta: f64, n: usize, seed: u64) -> (CheckReport, CheckReport) {
    let mut rng = stream(seed, 7, n as u64);
    let (sa, sb) = (1.0, 2.0);
    let mut rej_known = 0usize;
    let mut rej_welch = 0usize;
    let summary = |rng: &mut SimRng, s: f64| {
        let xs: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); 0.3 + s * z }).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        (m, v)
    };
    for _ in 0..trials {
        let (ma, va) = summary(&mut rng, sa);
        let (mb, vb) = summary(&mut rng, sb);
        let t = n as u64;
        if !decide_known(ma, t, sa * sa, mb, sb * sb / n as f64, theta) {
            rej_known += 1;
        }
        if !decide_unknown(ma, t, va, mb, vb / n as f64, t, theta) {
            rej_welch += 1;
        }
    }
    let make = |name: &str, rej: usize| {
        let rate = rej as f64 / trials as f64;
        CheckReport {
            name: format!("{name} test type-I rate"),
            passed: (rate - theta).abs() <= 0.01,
            measured: rate,
            expected: theta,
            tolerance: 0.01,
            detail: format!("{trials} same-mean pairs of {n} samples"),
        }
    };
    (make("known-variance", rej_known), make("welch", rej_welch))
}

/// Runs every check; `quick` shrinks the Monte Carlo sizes.
pub fn run_validation(opts: &ValidationOptions) -> Vec<CheckReport> {
    let scale = if opts.quick { 10 } else { 1 };
    let seed = opts.seed;
    let mut out = vec![check_noise_formulas(), check_laplace_draws(1_000_000 / scale, seed, opts.sigma_dp_fault)];
    for kind in [MechanismKind::Pm1, MechanismKind::Pm2] {
        for kappa in [1, 2, 3, 5, 8, 13] {
            out.push(check_mechanism_variance(kind, NoiseKind::Gaussian, kappa, 100_000 / scale, seed, opts.sigma_dp_fault));
        }
    }
    out.push(check_closed_forms(200, seed));
    out.push(check_keep_last_optimal(if opts.quick { 4 } else { 6 }, 20));
    for noise in [NoiseKind::Gaussian, NoiseKind::Laplace] {
        out.push(check_schvar1_unbiased(100_000 / scale, MechanismKind::Pm1, noise, 1.0, &[50], seed));
        out.push(check_schvar1_unbiased(100_000 / scale, MechanismKind::Pm2, noise, 0.5, &[7, 19, 30, 50], seed));
        let equal: Vec<u64> = (1..=10).map(|i| 4 * i).collect();
        let offset: Vec<u64> = (0..10).map(|i| 1 + 4 * i).collect();
        out.push(check_schvar2_unbiased(100_000 / scale, noise, 1.0, &equal, seed));
        out.push(check_schvar2_unbiased(100_000 / scale, noise, 0.5, &offset, seed));
    }
    out.push(check_bayes_quadrature(100, seed));
    let (k, w) = check_type_one(10_000, 0.05, 200, seed);
    out.push(k);
    out.push(w);
    out
}
