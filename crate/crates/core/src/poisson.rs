//! Poisson probability masses and the truncated series behind pivot
//! probabilities.
//!
//! Everything works in log space so that vote-count gaps in the thousands
//! (Table-style sizings need d in the 10^3..10^4 range) never overflow, and
//! series are summed outward from the term-wise mode with a relative-tail
//! stopping rule.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Termination policy for the infinite sums.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SeriesTolerance {
    /// Relative threshold: summation stops once consecutive terms fall below
    /// `rel_tol` times the running partial sum.
    pub rel_tol: f64,
    /// Hard cap on the number of terms summed on either side of the mode.
    pub max_terms: usize,
}

impl Default for SeriesTolerance {
    fn default() -> Self {
        SeriesTolerance {
            rel_tol: 1e-14,
            max_terms: 100_000,
        }
    }
}

impl SeriesTolerance {
    pub fn new(rel_tol: f64, max_terms: usize) -> Result<Self> {
        if rel_tol.is_nan() || rel_tol <= 0.0 || rel_tol >= 1e-6 {
            return Err(Error::invalid(format!(
                "rel_tol must satisfy 0 < rel_tol < 1e-6, got {rel_tol}"
            )));
        }
        if max_terms == 0 {
            return Err(Error::invalid("max_terms must be at least 1"));
        }
        Ok(SeriesTolerance { rel_tol, max_terms })
    }
}

/// Inputs to the pivot-probability evaluators: expected second-round vote
/// counts for each side and the published first-round gap.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PivotQuery {
    /// Expected second-round votes for the leading side.
    pub x_a: f64,
    /// Expected second-round votes for the trailing side.
    pub x_b: f64,
    /// First-round vote-count gap (non-negative by convention).
    pub deficit: u64,
}

impl PivotQuery {
    pub fn new(x_a: f64, x_b: f64, deficit: u64) -> Result<Self> {
        if !x_a.is_finite() || x_a < 0.0 {
            return Err(Error::invalid(format!(
                "x_a must be finite and >= 0, got {x_a}"
            )));
        }
        if !x_b.is_finite() || x_b < 0.0 {
            return Err(Error::invalid(format!(
                "x_b must be finite and >= 0, got {x_b}"
            )));
        }
        Ok(PivotQuery { x_a, x_b, deficit })
    }
}

fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// Natural log of the Poisson pmf at count `k` with mean `lambda`.
///
/// `lambda = 0` is the degenerate distribution with all mass at zero, so the
/// result is 0 for `k = 0` and negative infinity otherwise.
pub fn log_poisson_pmf(k: u64, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(if k == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(k as f64 * lambda.ln() - lambda - ln_factorial(k))
}

/// Poisson pmf in linear space; underflows cleanly to zero.
pub fn poisson_pmf(k: u64, lambda: f64) -> Result<f64> {
    Ok(log_poisson_pmf(k, lambda)?.exp())
}

/// Poisson CDF `P(X <= k)` through the regularized upper incomplete gamma.
pub fn poisson_cdf(k: u64, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_ur(k as f64 + 1.0, lambda))
}

/// `sum_k Pois(k; x_a) * Pois(k + offset; x_b)`.
///
/// The summand is unimodal in `k`; terms are accumulated outward from the
/// mode until three consecutive terms drop below `rel_tol` times the partial
/// sum on each side.
pub fn cross_sum(x_a: f64, x_b: f64, offset: u64, tol: &SeriesTolerance) -> Result<f64> {
    if !x_a.is_finite() || x_a < 0.0 || !x_b.is_finite() || x_b < 0.0 {
        return Err(Error::invalid(format!(
            "cross_sum intensities must be finite and >= 0, got ({x_a}, {x_b})"
        )));
    }
    // Degenerate sides collapse the series to a single term.
    if x_a == 0.0 {
        return poisson_pmf(offset, x_b);
    }
    if x_b == 0.0 {
        return Ok(if offset == 0 { (-x_a).exp() } else { 0.0 });
    }

    let prod = x_a * x_b;
    let off = offset as f64;
    // Term ratio t_{k+1}/t_k = prod / ((k+1)(k+1+off)) crosses 1 at the mode.
    let mode = ((prod + 0.25 * off * off).sqrt() - 0.5 * off - 1.0)
        .ceil()
        .max(0.0) as u64;

    let ln_prod = prod.ln();
    let l_mode = log_poisson_pmf(mode, x_a)? + log_poisson_pmf(mode + offset, x_b)?;
    // the mode term is the largest; if it underflows, the whole sum is below
    // f64 range
    if l_mode < -745.0 {
        return Ok(0.0);
    }

    let mut acc = l_mode.exp();
    let mut spent = 1usize;

    // Upward sweep.
    let mut l = l_mode;
    let mut k = mode;
    let mut small = 0u32;
    loop {
        l += ln_prod - ((k + 1) as f64).ln() - ((k + 1 + offset) as f64).ln();
        k += 1;
        let t = l.exp();
        acc += t;
        spent += 1;
        if t < tol.rel_tol * acc {
            small += 1;
            if small >= 3 {
                break;
            }
        } else {
            small = 0;
        }
        if spent >= tol.max_terms {
            let ratio = (prod / ((k + 1) as f64 * (k + 1 + offset) as f64)).min(0.5);
            return Err(Error::Truncation {
                partial: acc,
                tail_bound: t * ratio / (1.0 - ratio),
                max_terms: tol.max_terms,
            });
        }
    }

    // Downward sweep to k = 0.
    let mut l = l_mode;
    let mut k = mode;
    let mut small = 0u32;
    while k > 0 {
        l -= ln_prod - (k as f64).ln() - ((k + offset) as f64).ln();
        k -= 1;
        let t = l.exp();
        acc += t;
        spent += 1;
        if t < tol.rel_tol * acc {
            small += 1;
            if small >= 3 {
                break;
            }
        } else {
            small = 0;
        }
        if spent >= tol.max_terms {
            return Err(Error::Truncation {
                partial: acc,
                tail_bound: t,
                max_terms: tol.max_terms,
            });
        }
    }

    Ok(acc.min(1.0))
}

/// Expected gain for a supporter of the leading side from casting a vote:
/// half the tie-keeping mass plus half the tie-breaking mass.
pub fn pivot_benefit_a(q: &PivotQuery, tol: &SeriesTolerance) -> Result<f64> {
    let tie = cross_sum(q.x_a, q.x_b, q.deficit, tol)?;
    let make = cross_sum(q.x_a, q.x_b, q.deficit + 1, tol)?;
    Ok(0.5 * (tie + make))
}

/// Expected gain for a supporter of the trailing side from casting a vote.
///
/// For `deficit >= 1` the pivotal events put the trailing side `deficit` or
/// `deficit - 1` votes short; at `deficit = 0` the tie-breaking event swaps
/// roles instead.
pub fn pivot_benefit_b(q: &PivotQuery, tol: &SeriesTolerance) -> Result<f64> {
    if q.deficit >= 1 {
        let tie = cross_sum(q.x_a, q.x_b, q.deficit, tol)?;
        let make = cross_sum(q.x_a, q.x_b, q.deficit - 1, tol)?;
        Ok(0.5 * (tie + make))
    } else {
        let tie = cross_sum(q.x_a, q.x_b, 0, tol)?;
        let make = cross_sum(q.x_b, q.x_a, 1, tol)?;
        Ok(0.5 * (tie + make))
    }
}

/// Index window covering all but ~1e-30 of a Poisson distribution's mass.
pub(crate) fn poisson_window(lambda: f64) -> (u64, u64) {
    if lambda == 0.0 {
        return (0, 0);
    }
    let sd = lambda.sqrt();
    let lo = (lambda - 12.0 * sd - 60.0).floor().max(0.0) as u64;
    let hi = (lambda + 12.0 * sd + 60.0).ceil() as u64;
    (lo, hi)
}

/// Poisson pmf over its effective window, anchored at the mode and extended
/// by the two-term recurrence, then normalized over the window.
///
/// The recurrence keeps neighboring masses consistent to machine precision
/// even when `k ln(lambda)` is in the millions, where a per-term log-gamma
/// evaluation would carry absolute log errors far above 1e-12.
pub(crate) fn poisson_pmf_window(lambda: f64) -> Result<(u64, Vec<f64>)> {
    let (lo, hi) = poisson_window(lambda);
    let n = (hi - lo + 1) as usize;
    let mut pmf = vec![0.0f64; n];
    if lambda == 0.0 {
        pmf[0] = 1.0;
        return Ok((lo, pmf));
    }
    let mode = (lambda.floor() as u64).clamp(lo, hi);
    let anchor = (mode - lo) as usize;
    pmf[anchor] = log_poisson_pmf(mode, lambda)?.exp();
    for i in anchor + 1..n {
        let k = lo + i as u64;
        pmf[i] = pmf[i - 1] * lambda / k as f64;
    }
    for i in (0..anchor).rev() {
        let k = lo + i as u64 + 1;
        pmf[i] = pmf[i + 1] * k as f64 / lambda;
    }
    let total: f64 = pmf.iter().sum();
    for v in &mut pmf {
        *v /= total;
    }
    Ok((lo, pmf))
}

/// Win probability for side A when A-votes ~ Poisson(`lambda_a`), B-votes ~
/// Poisson(`lambda_b`) and A starts `head_start` votes ahead; ties count 1/2.
pub fn skellam_a_wins(
    lambda_a: f64,
    lambda_b: f64,
    head_start: i64,
    tol: &SeriesTolerance,
) -> Result<f64> {
    if !lambda_a.is_finite() || lambda_a < 0.0 || !lambda_b.is_finite() || lambda_b < 0.0 {
        return Err(Error::invalid(format!(
            "intensities must be finite and >= 0, got ({lambda_a}, {lambda_b})"
        )));
    }

    let (lo_b, pmf_b) = poisson_pmf_window(lambda_b)?;
    let nb = pmf_b.len();
    if nb > tol.max_terms {
        return Err(Error::Truncation {
            partial: 0.0,
            tail_bound: 1.0,
            max_terms: tol.max_terms,
        });
    }
    let hi_b = lo_b + nb as u64 - 1;
    // cumulative mass of the B count over its window; mass outside the
    // window is below 1e-30 and is dropped
    let mut cdf_b = vec![0.0f64; nb];
    let mut run = 0.0;
    for (i, v) in pmf_b.iter().enumerate() {
        run += v;
        cdf_b[i] = run;
    }
    let cdf_at = |m: i64| -> f64 {
        if m < lo_b as i64 {
            0.0
        } else if m >= hi_b as i64 {
            1.0
        } else {
            cdf_b[(m - lo_b as i64) as usize]
        }
    };
    let pmf_at = |m: i64| -> f64 {
        if m < lo_b as i64 || m > hi_b as i64 {
            0.0
        } else {
            pmf_b[(m - lo_b as i64) as usize]
        }
    };

    let (lo_a, pmf_a) = poisson_pmf_window(lambda_a)?;
    if pmf_a.len() > tol.max_terms {
        return Err(Error::Truncation {
            partial: 0.0,
            tail_bound: 1.0,
            max_terms: tol.max_terms,
        });
    }
    let mut p = 0.0;
    for (i, pa) in pmf_a.iter().enumerate() {
        if *pa == 0.0 {
            continue;
        }
        let lead = (lo_a + i as u64) as i64 + head_start;
        p += pa * (cdf_at(lead - 1) + 0.5 * pmf_at(lead));
    }
    Ok(p.clamp(0.0, 1.0))
}
