//! Assessment-group sizing and welfare comparison.
//!
//! The sizing formula inverts a Hoeffding tail bound: it returns the smallest
//! group size whose first-round vote gap reaches the no-show threshold with
//! probability at least `1 - epsilon`. The welfare side compares the
//! two-round procedure against one-round voluntary and compulsory voting.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::equilibrium::{d_star, solve_symmetric, CostParam};
use crate::error::{Error, Result};
use crate::poisson::{poisson_pmf_window, skellam_a_wins, SeriesTolerance};

/// Population and cost primitives for one election instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElectionParams {
    /// Probability a citizen prefers side A; must exceed 1/2.
    pub p_a: f64,
    pub c: CostParam,
    /// Assessment-group size.
    pub n1: u64,
    /// Poisson mean of the second-round population.
    pub n2: f64,
}

impl ElectionParams {
    pub fn new(p_a: f64, c: CostParam, n1: u64, n2: f64) -> Result<Self> {
        if !(p_a > 0.5 && p_a < 1.0) {
            return Err(Error::invalid(format!(
                "p_a must satisfy 1/2 < p_a < 1, got {p_a}"
            )));
        }
        if n1 < 1 {
            return Err(Error::invalid("n1 must be at least 1"));
        }
        if n2.is_nan() || n2 <= 0.0 || !n2.is_finite() {
            return Err(Error::invalid(format!("n2 must be positive, got {n2}")));
        }
        Ok(ElectionParams { p_a, c, n1, n2 })
    }

    pub fn p_b(&self) -> f64 {
        1.0 - self.p_a
    }

    /// Expected total number of citizens.
    pub fn n_total(&self) -> f64 {
        self.n1 as f64 + self.n2
    }
}

/// Output of the group-size formula, with the three summands kept for audit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SizingResult {
    pub epsilon: f64,
    pub d_star: u64,
    pub n1_star: u64,
    pub terms: [f64; 3],
}

/// Smallest assessment-group size such that the first-round gap reaches the
/// no-show threshold with probability at least `1 - epsilon`:
/// `ceil(d*/g + L/g^2 + sqrt(2 d* g L + L^2)/g^2)` with `L = ln(2/epsilon)`
/// and `g` the preference gap.
pub fn n1_star(epsilon: f64, c: CostParam, gap: f64) -> Result<SizingResult> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(gap > 0.0 && gap < 1.0) {
        return Err(Error::invalid(format!(
            "preference gap must lie in (0, 1), got {gap}"
        )));
    }
    let ds = d_star(c);
    let dsf = ds as f64;
    let l = (2.0 / epsilon).ln();
    let t1 = dsf / gap;
    let t2 = l / (gap * gap);
    let t3 = (2.0 * dsf * gap * l + l * l).sqrt() / (gap * gap);
    Ok(SizingResult {
        epsilon,
        d_star: ds,
        n1_star: (t1 + t2 + t3).ceil() as u64,
        terms: [t1, t2, t3],
    })
}

/// One cell of the sizing table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Table2Row {
    pub c: f64,
    pub d_star: u64,
    pub gap: f64,
    pub epsilon: f64,
    pub n1_star: u64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
}

pub const TABLE2_COSTS: [f64; 4] = [0.005, 0.01, 0.1, 0.3];
pub const TABLE2_GAPS: [f64; 2] = [0.05, 0.15];
pub const TABLE2_EPSILONS: [f64; 2] = [0.1, 0.01];

/// Recomputes the full sizing table: sixteen cells, row-major by cost, then
/// gap, then epsilon.
pub fn reproduce_table2() -> Result<Vec<Table2Row>> {
    let mut rows = Vec::with_capacity(16);
    for &c in &TABLE2_COSTS {
        let cost = CostParam::new(c)?;
        for &gap in &TABLE2_GAPS {
            for &epsilon in &TABLE2_EPSILONS {
                let s = n1_star(epsilon, cost, gap)?;
                rows.push(Table2Row {
                    c,
                    d_star: s.d_star,
                    gap,
                    epsilon,
                    n1_star: s.n1_star,
                    term1: s.terms[0],
                    term2: s.terms[1],
                    term3: s.terms[2],
                });
            }
        }
    }
    Ok(rows)
}

/// Hoeffding upper bound `2 exp(-(n1 g - d*)^2 / (2 n1))` on the probability
/// that the first-round gap falls short of `d_star`. Only valid when the
/// expected gap exceeds the threshold.
pub fn hoeffding_failure_bound(n1: u64, gap: f64, d_star: u64) -> Result<f64> {
    let n1f = n1 as f64;
    if !(gap > 0.0 && gap < 1.0) {
        return Err(Error::invalid(format!(
            "preference gap must lie in (0, 1), got {gap}"
        )));
    }
    if n1f * gap <= d_star as f64 {
        return Err(Error::precondition(format!(
            "bound direction requires n1 * gap > d_star ({} * {} <= {})",
            n1, gap, d_star
        )));
    }
    let dev = n1f * gap - d_star as f64;
    Ok(2.0 * (-(dev * dev) / (2.0 * n1f)).exp())
}

/// Probability that a majority of `n1` independent Bernoulli(`p`) draws falls
/// on the success side, with even-split ties counting one half.
pub fn binomial_majority_prob(n1: u64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must lie in (0, 1), got {p}")));
    }
    let n = n1 as f64;
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let ln_cn = ln_gamma(n + 1.0);
    // only a +-12 sigma window carries mass above 1e-30
    let mean = n * p;
    let sd = (n * p * (1.0 - p)).sqrt();
    let lo = (mean - 12.0 * sd - 60.0).floor().max(0.0) as u64;
    let hi = ((mean + 12.0 * sd + 60.0).ceil() as u64).min(n1);
    let mut prob = 0.0;
    for k in lo..=hi {
        let kf = k as f64;
        let lp = ln_cn - ln_gamma(kf + 1.0) - ln_gamma(n - kf + 1.0) + kf * ln_p + (n - kf) * ln_q;
        let pk = lp.exp();
        if 2 * k > n1 {
            prob += pk;
        } else if 2 * k == n1 {
            prob += 0.5 * pk;
        }
    }
    Ok(prob.clamp(0.0, 1.0))
}

/// Exact expected share of the assessment group in the realized population:
/// `n1 * sum_k Pois(k; n2) / (n1 + k)`.
pub fn f_exact(n1: u64, n2: f64) -> Result<f64> {
    if n2.is_nan() || n2 <= 0.0 || !n2.is_finite() {
        return Err(Error::invalid(format!("n2 must be positive, got {n2}")));
    }
    let (lo, pmf) = poisson_pmf_window(n2)?;
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p / (n1 as f64 + (lo + i as u64) as f64);
    }
    Ok(n1 as f64 * acc)
}

/// Closed-form upper bound `(n1 / n2)(1 - e^{-n2})` on [`f_exact`].
pub fn f_bound(n1: u64, n2: f64) -> Result<f64> {
    if n2.is_nan() || n2 <= 0.0 || !n2.is_finite() {
        return Err(Error::invalid(format!("n2 must be positive, got {n2}")));
    }
    Ok(n1 as f64 / n2 * (1.0 - (-n2).exp()))
}

/// Which turnout enters the voluntary-voting cost term. The expected number
/// of voters is twice the per-side intensity, which is the default; the
/// single-intensity variant reproduces the display-equation form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoluntaryCostTerm {
    BothSides,
    SingleIntensity,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WelfareOptions {
    pub voluntary_cost: VoluntaryCostTerm,
}

impl Default for WelfareOptions {
    fn default() -> Self {
        WelfareOptions {
            voluntary_cost: VoluntaryCostTerm::BothSides,
        }
    }
}

/// The three welfare figures plus their ingredients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WelfareReport {
    /// Two-round procedure, exact group-majority tally with the silent
    /// second round.
    pub w_av: f64,
    /// One-round voluntary voting.
    pub w_vol: f64,
    /// One-round compulsory voting.
    pub w_com: f64,
    /// Worst-case floor `-c`.
    pub w_lower: f64,
    pub f_exact: f64,
    pub f_bound: f64,
    pub p_a_wins_com: f64,
    pub p_a_wins_av: f64,
    /// Tail-probability-weighted guarantee
    /// `(1 - eps)(w_decided - c f) - eps c`, valid once the group is sized
    /// for `eps`.
    pub w_av_guarantee: f64,
    pub epsilon: f64,
}

pub fn welfare_report(
    params: &ElectionParams,
    epsilon: f64,
    tol: &SeriesTolerance,
) -> Result<WelfareReport> {
    welfare_report_with(params, epsilon, WelfareOptions::default(), tol)
}

pub fn welfare_report_with(
    params: &ElectionParams,
    epsilon: f64,
    opts: WelfareOptions,
    tol: &SeriesTolerance,
) -> Result<WelfareReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let c = params.c.get();
    let n = params.n_total();
    let p_a = params.p_a;
    let p_b = params.p_b();

    let x = solve_symmetric(params.c, tol)?;
    let turnout = match opts.voluntary_cost {
        VoluntaryCostTerm::BothSides => 2.0 * x,
        VoluntaryCostTerm::SingleIntensity => x,
    };
    let w_vol = 0.5 - turnout * c / n;

    let p_a_wins_com = skellam_a_wins(n * p_a, n * p_b, 0, tol)?;
    let w_com = p_a_wins_com * p_a + (1.0 - p_a_wins_com) * p_b - c;

    let p_a_wins_av = binomial_majority_prob(params.n1, p_a)?;
    let fe = f_exact(params.n1, params.n2)?;
    let fb = f_bound(params.n1, params.n2)?;
    let w_decided = p_a_wins_av * p_a + (1.0 - p_a_wins_av) * p_b;
    let w_av = w_decided - fe * c;
    let w_av_guarantee = (1.0 - epsilon) * (w_decided - fe * c) + epsilon * (-c);

    Ok(WelfareReport {
        w_av,
        w_vol,
        w_com,
        w_lower: -c,
        f_exact: fe,
        f_bound: fb,
        p_a_wins_com,
        p_a_wins_av,
        w_av_guarantee,
        epsilon,
    })
}

/// One verified ordering from the monotonicity report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub axis: String,
    pub fixed: String,
    pub lower: u64,
    pub higher: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub comparisons: usize,
    pub violations: Vec<MonotonicityViolation>,
}

/// Verifies that the group size is non-increasing along each of the three
/// parameter axes over the supplied grids (all strictly increasing).
pub fn n1_star_monotonicity_report(
    epsilons: &[f64],
    costs: &[f64],
    gaps: &[f64],
) -> Result<MonotonicityReport> {
    for grid in [epsilons, gaps] {
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grids must be strictly increasing"));
        }
    }
    if costs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("grids must be strictly increasing"));
    }
    let mut report = MonotonicityReport {
        comparisons: 0,
        violations: Vec::new(),
    };
    let push = |axis: &str, fixed: String, lo: u64, hi: u64, report: &mut MonotonicityReport| {
        report.comparisons += 1;
        if hi > lo {
            report.violations.push(MonotonicityViolation {
                axis: axis.to_string(),
                fixed,
                lower: lo,
                higher: hi,
            });
        }
    };
    for &c in costs {
        let cost = CostParam::new(c)?;
        for &g in gaps {
            for w in epsilons.windows(2) {
                let a = n1_star(w[0], cost, g)?.n1_star;
                let b = n1_star(w[1], cost, g)?.n1_star;
                // larger epsilon must not need a larger group
                push("epsilon", format!("c={c}, gap={g}"), a, b, &mut report);
            }
        }
    }
    for &e in epsilons {
        for &c in costs {
            let cost = CostParam::new(c)?;
            for w in gaps.windows(2) {
                let a = n1_star(e, cost, w[0])?.n1_star;
                let b = n1_star(e, cost, w[1])?.n1_star;
                push("gap", format!("c={c}, eps={e}"), a, b, &mut report);
            }
        }
    }
    for &e in epsilons {
        for &g in gaps {
            for w in costs.windows(2) {
                let a = n1_star(e, CostParam::new(w[0])?, g)?.n1_star;
                let b = n1_star(e, CostParam::new(w[1])?, g)?.n1_star;
                push("cost", format!("eps={e}, gap={g}"), a, b, &mut report);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: SeriesTolerance = SeriesTolerance {
        rel_tol: 1e-14,
        max_terms: 100_000,
    };

    fn c(v: f64) -> CostParam {
        CostParam::new(v).unwrap()
    }

    #[test]
    fn sizing_matches_published_cells() {
        assert_eq!(n1_star(0.1, c(0.1), 0.05).unwrap().n1_star, 3003);
        assert_eq!(n1_star(0.01, c(0.1), 0.05).unwrap().n1_star, 4858);
        assert_eq!(n1_star(0.1, c(0.3), 0.15).unwrap().n1_star, 293);
        assert_eq!(n1_star(0.1, c(0.005), 0.05).unwrap().n1_star, 146049);
    }

    #[test]
    fn sizing_terms_are_audited() {
        let s = n1_star(0.1, c(0.1), 0.05).unwrap();
        assert_eq!(s.d_star, 16);
        assert!((s.terms[0] - 320.0).abs() < 1e-9);
        let total: f64 = s.terms.iter().sum();
        assert_eq!(total.ceil() as u64, s.n1_star);
        assert!(s.n1_star as f64 >= s.d_star as f64 / 0.05);
    }

    #[test]
    fn sizing_validates_inputs() {
        assert!(n1_star(0.0, c(0.1), 0.05).is_err());
        assert!(n1_star(1.0, c(0.1), 0.05).is_err());
        assert!(n1_star(0.1, c(0.1), 0.0).is_err());
    }

    #[test]
    fn table_is_row_major_and_complete() {
        let rows = reproduce_table2().unwrap();
        assert_eq!(rows.len(), 16);
        assert_eq!(rows[0].c, 0.005);
        assert_eq!(rows[0].gap, 0.05);
        assert_eq!(rows[0].epsilon, 0.1);
        assert_eq!(rows[1].epsilon, 0.01);
        assert_eq!(rows[2].gap, 0.15);
        let d_stars: Vec<u64> = rows.iter().step_by(4).map(|r| r.d_star).collect();
        assert_eq!(d_stars, vec![6367, 1592, 16, 2]);
    }

    #[test]
    fn hoeffding_bound_examples() {
        let b = hoeffding_failure_bound(3003, 0.05, 16).unwrap();
        assert!(b <= 0.1, "got {b}");
        assert!(b > 0.0999, "the sizing is tight, got {b}");
        // diverging group size kills the bound
        let tiny = hoeffding_failure_bound(1_000_000_000, 0.1, 16).unwrap();
        assert!(tiny < 1e-300);
        // invalid direction
        assert!(hoeffding_failure_bound(100, 0.05, 16).is_err());
    }

    #[test]
    fn majority_prob_edge_cases() {
        assert!((binomial_majority_prob(1, 0.9).unwrap() - 0.9).abs() < 1e-14);
        // frozen oracle values
        assert!((binomial_majority_prob(293, 0.575).unwrap() - 0.9951227994415402).abs() < 1e-12);
        assert!((binomial_majority_prob(2, 0.575).unwrap() - 0.575).abs() < 1e-14);
        assert!((binomial_majority_prob(4, 0.575).unwrap() - 0.61165625).abs() < 1e-12);
    }

    #[test]
    fn majority_prob_monotone_in_odd_sizes() {
        let mut prev = 0.0;
        for n in (1..=41).step_by(2) {
            let p = binomial_majority_prob(n, 0.575).unwrap();
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn f_exact_and_bound() {
        // frozen oracle values
        assert!((f_exact(293, 1e5).unwrap() - 0.002921469224803352).abs() < 1e-13);
        assert!((f_exact(1, 1.0).unwrap() - 0.6321205588285577).abs() < 1e-13);
        for &n1 in &[1u64, 10, 293, 3003] {
            for &n2 in &[1.0f64, 100.0, 1e4, 1e6] {
                let fe = f_exact(n1, n2).unwrap();
                let fb = f_bound(n1, n2).unwrap();
                assert!(fe <= fb, "f_exact {fe} > bound {fb} at ({n1}, {n2})");
            }
        }
        // vanishing share for a huge second round
        assert!(f_exact(293, 1e6).unwrap() < 1e-3);
    }

    #[test]
    fn welfare_report_theorem_comparison() {
        let params = ElectionParams::new(0.575, c(0.3), 293, 1e5).unwrap();
        let r = welfare_report(&params, 0.1, &TOL).unwrap();
        assert!(r.w_av > r.w_vol.max(r.w_com), "failed: {r:?}");
        // frozen oracle values
        assert!((r.w_av - 0.57339197914879).abs() < 1e-9);
        assert!((r.w_vol - 0.499995782076101).abs() < 1e-9);
        assert!((r.w_com - 0.275).abs() < 1e-9);
        assert_eq!(r.w_lower, -0.3);
        assert!(r.f_exact <= r.f_bound);
        assert!(r.w_av <= 1.0 && r.w_av >= -0.3);
        assert!(r.w_av_guarantee < r.w_av);
    }

    #[test]
    fn compulsory_welfare_converges() {
        // at total mean 1e6 the leading side wins almost surely
        let params = ElectionParams::new(0.525, c(0.3), 1, 1e6 - 1.0).unwrap();
        let r = welfare_report(&params, 0.1, &TOL).unwrap();
        assert!((r.w_com - (0.525 - 0.3)).abs() < 1e-6);
    }

    #[test]
    fn voluntary_cost_variant_flag() {
        let params = ElectionParams::new(0.575, c(0.3), 293, 1e5).unwrap();
        let both = welfare_report(&params, 0.1, &TOL).unwrap();
        let single = welfare_report_with(
            &params,
            0.1,
            WelfareOptions {
                voluntary_cost: VoluntaryCostTerm::SingleIntensity,
            },
            &TOL,
        )
        .unwrap();
        assert!(single.w_vol > both.w_vol);
        let n = params.n_total();
        let x = solve_symmetric(params.c, &TOL).unwrap();
        assert!((both.w_vol - (0.5 - 2.0 * x * 0.3 / n)).abs() < 1e-12);
        assert!((single.w_vol - (0.5 - x * 0.3 / n)).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_report_empty_violations() {
        let r = n1_star_monotonicity_report(
            &[0.01, 0.05, 0.1, 0.2],
            &[0.01, 0.05, 0.1, 0.2, 0.3],
            &[0.05, 0.1, 0.15],
        )
        .unwrap();
        assert!(r.comparisons > 0);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
    }

    #[test]
    fn table2_published_comparisons() {
        // published orderings across cells
        assert!(
            n1_star(0.1, c(0.1), 0.05).unwrap().n1_star
                <= n1_star(0.01, c(0.1), 0.05).unwrap().n1_star
        );
        assert!(
            n1_star(0.1, c(0.3), 0.05).unwrap().n1_star
                >= n1_star(0.1, c(0.3), 0.15).unwrap().n1_star
        );
        assert!(
            n1_star(0.1, c(0.01), 0.05).unwrap().n1_star
                >= n1_star(0.1, c(0.1), 0.05).unwrap().n1_star
        );
    }
}
