//! Special functions used by the decision rules and the Bayesian variance estimator.
//!
//! Distribution functions come from `statrs`. The lower incomplete gamma is kept in log
//! space here because the Bayesian correction takes ratios of values that overflow or
//! underflow the regularized forms.

use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma as sgamma;

use crate::error::{param_err, Result};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    sgamma::ln_gamma(x)
}

/// Gamma function for moderate positive arguments.
pub fn gamma(x: f64) -> f64 {
    sgamma::gamma(x)
}

/// `sum_{n>=0} x^n / (s (s+1) ... (s+n))`, the series factor of gamma(s, x).
fn lower_gamma_series(s: f64, x: f64) -> f64 {
    let mut ap = s;
    let mut term = 1.0 / s;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum
}

fn check_gamma_args(s: f64, x: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(param_err(format!("incomplete gamma needs s > 0, got {s}")));
    }
    if !(x >= 0.0) {
        return Err(param_err(format!("incomplete gamma needs x >= 0, got {x}")));
    }
    Ok(())
}

/// Natural log of the (unnormalized) lower incomplete gamma `gamma(s, x)`.
///
/// Returns `-inf` at `x = 0`.
pub fn ln_lower_incomplete_gamma(s: f64, x: f64) -> Result<f64> {
    check_gamma_args(s, x)?;
    if x == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if x.is_infinite() {
        return Ok(ln_gamma(s));
    }
    if x < s + 1.0 {
        // The regularized value can underflow here, so sum the series directly.
        Ok(s * x.ln() - x + lower_gamma_series(s, x).ln())
    } else {
        Ok(ln_gamma(s) + (-sgamma::gamma_ur(s, x)).ln_1p())
    }
}

/// Lower incomplete gamma `gamma(s, x) = int_0^x t^{s-1} e^{-t} dt` (unnormalized).
pub fn lower_incomplete_gamma(s: f64, x: f64) -> Result<f64> {
    Ok(ln_lower_incomplete_gamma(s, x)?.exp())
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Quantile of the standard normal distribution, `Phi^{-1}(q)` for `q` in (0, 1).
pub fn std_normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(param_err(format!("normal quantile needs q in (0,1), got {q}")));
    }
    if q > 0.5 {
        // 1 - q is exact here, so the upper half mirrors the lower half.
        return Ok(-lower_normal_quantile(1.0 - q));
    }
    Ok(lower_normal_quantile(q))
}

fn lower_normal_quantile(q: f64) -> f64 {
    let n = std_normal();
    let x = n.inverse_cdf(q);
    // One Newton step on the CDF takes the result to full precision.
    x - (n.cdf(x) - q) / n.pdf(x)
}

fn student_t(nu: f64) -> Result<StudentsT> {
    if !(nu > 0.0) || nu.is_nan() {
        return Err(param_err(format!("degrees of freedom must be positive, got {nu}")));
    }
    StudentsT::new(0.0, 1.0, nu).map_err(|e| param_err(format!("student t with {nu} degrees of freedom: {e}")))
}

/// Two-sided tail probability `P(|T| >= |x|)` of Student's t with `nu` degrees of freedom.
pub fn student_t_two_sided_tail(x: f64, nu: f64) -> Result<f64> {
    let t = student_t(nu)?;
    if nu.is_infinite() {
        return Ok(2.0 * std_normal().sf(x.abs()));
    }
    Ok(2.0 * t.sf(x.abs()))
}

/// Student-t CDF.
pub fn student_t_cdf(x: f64, nu: f64) -> Result<f64> {
    let t = student_t(nu)?;
    if nu.is_infinite() {
        return Ok(std_normal_cdf(x));
    }
    Ok(t.cdf(x))
}

/// Quantile of Student's t distribution; `nu` may be non-integer.
pub fn student_t_quantile(q: f64, nu: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(param_err(format!("t quantile needs q in (0,1), got {q}")));
    }
    let t = student_t(nu)?;
    if nu.is_infinite() {
        return std_normal_quantile(q);
    }
    Ok(t.inverse_cdf(q))
}
