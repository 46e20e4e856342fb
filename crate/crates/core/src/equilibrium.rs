//! Second-round equilibrium analysis for a published first-round gap `d`.
//!
//! The second-round game has three equilibrium families: the no-show profile
//! (nobody votes, an equilibrium whenever `|d| >= 2`), one-sided profiles
//! where only the trailing side randomizes, and totally-mixed profiles where
//! both sides randomize. This module solves and classifies all of them, and
//! computes the gap threshold `d_star` above which the no-show profile is the
//! unique prediction, together with the cost threshold `c_star` below which
//! one-sided equilibria exist.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poisson::{
    log_poisson_pmf, pivot_benefit_a, pivot_benefit_b, PivotQuery, SeriesTolerance,
};

/// Per-vote participation cost, restricted to the open interval (0, 1/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostParam(f64);

impl CostParam {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c < 0.5) {
            return Err(Error::invalid(format!(
                "cost must satisfy 0 < c < 1/2, got {c}"
            )));
        }
        Ok(CostParam(c))
    }

    pub fn get(&self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    NoShow,
    OnlyBVotes,
    OnlyAVotes,
    TotallyMixed,
}

/// A classified second-round equilibrium.
///
/// `residual` is the largest absolute violation of the defining equalities.
/// `slack_check` is the margin in the inactive side's optimality inequality:
/// for one-sided equilibria it is the slack in the non-voting side's
/// condition, for the no-show profile it is `c` itself (a lone deviator gains
/// nothing when `|d| >= 2`), and it is zero for totally-mixed profiles where
/// no inequality is inactive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub x_a: f64,
    pub x_b: f64,
    pub residual: f64,
    pub slack_check: f64,
    /// Implied turnout probability for each side, `x / (n2 * p_type)`.
    pub alpha_a: f64,
    pub alpha_b: f64,
    /// False when an implied turnout probability exceeds one (the intensity
    /// cannot be realized with the given population scale).
    pub feasible: bool,
}

/// Root of the one-sided indifference equation together with its residual and
/// the non-voting side's inequality slack.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AsymmetricRoot {
    pub x_b: f64,
    pub residual: f64,
    /// Margin in the leading side's no-vote condition; negative means the
    /// root is not an equilibrium.
    pub slack: f64,
}

/// All roots of the one-sided indifference equation, split into genuine
/// equilibria and roots rejected by the leading side's condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymmetricRoots {
    pub equilibria: Vec<AsymmetricRoot>,
    pub rejected: Vec<AsymmetricRoot>,
    pub search_hi: f64,
}

/// A solution of the two-sided indifference system.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TotallyMixedRoot {
    pub x_a: f64,
    pub x_b: f64,
    pub residual: f64,
}

/// The classified equilibria of the second-round game at gap `d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSet {
    pub d: i64,
    pub c: f64,
    pub items: Vec<Equilibrium>,
    /// One-sided roots that fail the leading side's inequality; kept for
    /// diagnostics, never counted as equilibria.
    pub rejected_roots: Vec<AsymmetricRoot>,
    pub search_domain_hi: f64,
}

/// `Pois(d; y) + Pois(d - 1; y)` evaluated in log space.
///
/// This is the trailing side's pivotal mass when the leading side casts no
/// second-round votes; the indifference equation sets it equal to `2c`.
pub fn one_sided_pivot_mass(d: u64, y: f64) -> f64 {
    debug_assert!(d >= 1);
    if y == 0.0 {
        return if d == 1 { 1.0 } else { 0.0 };
    }
    let a = log_poisson_pmf(d, y).unwrap_or(f64::NEG_INFINITY);
    let b = log_poisson_pmf(d - 1, y).unwrap_or(f64::NEG_INFINITY);
    // log-sum-exp of the two terms
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        0.0
    } else {
        m.exp() * ((a - m).exp() + (b - m).exp())
    }
}

/// Argmax and maximum of [`one_sided_pivot_mass`] over `y >= 0`.
///
/// The derivative of the mass vanishes only at `y = sqrt(d (d-1))`, so a
/// single evaluation there bounds the whole curve.
pub fn one_sided_pivot_mass_peak(d: u64) -> (f64, f64) {
    if d == 1 {
        return (0.0, 1.0);
    }
    let ystar = ((d as f64) * (d as f64 - 1.0)).sqrt();
    (ystar, one_sided_pivot_mass(d, ystar))
}

/// Certifies that the one-sided indifference equation at gap `d` has no root:
/// the pivotal mass stays strictly below `2c` everywhere.
pub fn asym_nonexistence_certificate(c: CostParam, d: u64) -> bool {
    let (_, peak) = one_sided_pivot_mass_peak(d);
    peak < 2.0 * c.get()
}

/// Certifies that the two-sided system at gap `d` has no solution, using the
/// per-term bound from the non-existence proof: every cross term of the
/// leading side's equation is at most the peak of the `(d, d+1)` pivotal
/// mass, so the equation cannot reach `2c` once that peak is below `2c`.
pub fn totally_mixed_nonexistence_certificate(c: CostParam, d: u64) -> bool {
    let (_, peak) = one_sided_pivot_mass_peak(d + 1);
    peak < 2.0 * c.get()
}

/// Solves the symmetric zero-gap fixed point: the unique `x >= 0` at which a
/// voter's pivot benefit at intensities `(x, x)` equals the cost.
pub fn solve_symmetric(c: CostParam, tol: &SeriesTolerance) -> Result<f64> {
    let cost = c.get();
    let benefit = |x: f64| -> Result<f64> { pivot_benefit_a(&PivotQuery::new(x, x, 0)?, tol) };
    // benefit(0) = 1/2 > c and the benefit decreases to zero, so expand the
    // bracket upward until it crosses.
    let mut hi = 1.0;
    let mut tries = 0;
    while benefit(hi)? > cost {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Bracket { lo: 0.0, hi });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if benefit(mid)? > cost {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn bisect_root<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (flo > 0.0) == (fm > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Finds every root of the one-sided indifference equation at gap `d >= 2`
/// and checks each against the leading side's no-vote inequality.
///
/// Roots are located by sign-scanning over `(0, 4 (d + 10)]`; the scan grid
/// always contains the peak location `sqrt(d (d-1))`, so the dip below `2c`
/// cannot fall between grid points even when it is narrow.
pub fn asymmetric_roots(c: CostParam, d: u64, tol: &SeriesTolerance) -> Result<AsymmetricRoots> {
    if d < 2 {
        return Err(Error::invalid(format!(
            "one-sided equilibria are analyzed for d >= 2 only, got {d}"
        )));
    }
    let cost2 = 2.0 * c.get();
    let x_max = 4.0 * (d as f64 + 10.0);
    let f = |y: f64| one_sided_pivot_mass(d, y) - cost2;

    let (ystar, _) = one_sided_pivot_mass_peak(d);
    let n = 4000usize;
    let mut grid: Vec<f64> = (1..=n).map(|i| x_max * i as f64 / n as f64).collect();
    grid.push(ystar);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let mut roots = Vec::new();
    let mut prev_y = f64::MIN_POSITIVE;
    let mut prev_f = f(prev_y);
    for &y in &grid {
        let fy = f(y);
        if (prev_f > 0.0) != (fy > 0.0) {
            roots.push(bisect_root(&f, prev_y, y));
        }
        prev_y = y;
        prev_f = fy;
    }

    let mut out = AsymmetricRoots {
        equilibria: Vec::new(),
        rejected: Vec::new(),
        search_hi: x_max,
    };
    for y in roots {
        let residual = (0.5 * one_sided_pivot_mass(d, y) - c.get()).abs();
        // Leading side's condition: its own pivot benefit must not exceed c.
        let benefit_lead = pivot_benefit_a(&PivotQuery::new(0.0, y, d)?, tol)?;
        let slack = 2.0 * (c.get() - benefit_lead);
        let root = AsymmetricRoot {
            x_b: y,
            residual,
            slack,
        };
        if slack >= 0.0 {
            out.equilibria.push(root);
        } else {
            out.rejected.push(root);
        }
    }
    Ok(out)
}

/// Fused evaluation of both indifference residuals at `(x_a, x_b)` for gap
/// `d >= 1`: returns `(benefit_lead - c, benefit_trail - c)`.
///
/// A single linear-space sweep with pmf recurrences covers the three adjacent
/// cross sums. Degenerate intensities and sums large enough to underflow the
/// k = 0 term fall back to the mode-anchored log-space evaluators.
fn mixed_residuals_fast(c: f64, d: u64, x_a: f64, x_b: f64, tol: &SeriesTolerance) -> (f64, f64) {
    debug_assert!(d >= 1);
    if x_a == 0.0 || x_b == 0.0 || x_a + x_b > 600.0 {
        let q = PivotQuery::new(x_a, x_b, d).unwrap();
        let fa = pivot_benefit_a(&q, tol).map(|v| v - c).unwrap_or(f64::NAN);
        let fb = pivot_benefit_b(&q, tol).map(|v| v - c).unwrap_or(f64::NAN);
        return (fa, fb);
    }
    let mut s_lo = 0.0f64; // offset d-1
    let mut s_mid = 0.0f64; // offset d
    let mut s_hi = 0.0f64; // offset d+1
    let mut a = (-x_a).exp(); // Pois(k; x_a), k = 0
                              // rolling pmf values Pois(k + d - 1 .. k + d + 1; x_b)
    let mut b0 = log_poisson_pmf(d - 1, x_b).unwrap().exp();
    let mut b1 = b0 * x_b / d as f64;
    let mut b2 = b1 * x_b / (d + 1) as f64;
    let k_past_mode = (x_a * x_b).sqrt() as usize + 2;
    let mut quiet = 0u32;
    for k in 0..tol.max_terms {
        let t0 = a * b0;
        let t1 = a * b1;
        let t2 = a * b2;
        s_lo += t0;
        s_mid += t1;
        s_hi += t2;
        let total = s_lo + s_mid + s_hi;
        if k > k_past_mode && t0 + t1 + t2 < tol.rel_tol * total {
            quiet += 1;
            if quiet >= 3 {
                break;
            }
        } else {
            quiet = 0;
        }
        a *= x_a / (k + 1) as f64;
        b0 = b1;
        b1 = b2;
        b2 *= x_b / (k as u64 + d + 2) as f64;
    }
    (0.5 * (s_mid + s_hi) - c, 0.5 * (s_mid + s_lo) - c)
}

/// Finds all solutions of the two-sided indifference system at gap `d >= 1`
/// by a dense grid scan over `[0, 4 (d + 10)]^2` with damped Newton
/// refinement. Every returned solution is re-verified against the plain
/// series evaluators with residual below 1e-10. An empty result is a valid
/// outcome; for gaps at or above the no-show threshold it is the expected
/// one.
pub fn totally_mixed_roots(
    c: CostParam,
    d: u64,
    tol: &SeriesTolerance,
) -> Result<Vec<TotallyMixedRoot>> {
    if d < 1 {
        return Err(Error::invalid(
            "the two-sided system is indexed by d >= 1; use solve_symmetric for d = 0",
        ));
    }
    let cost = c.get();
    let x_max = 4.0 * (d as f64 + 10.0);
    let n = 400usize;
    let h = x_max / n as f64;

    // residual surface on the grid, rows in parallel
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x_a = h * (i + 1) as f64;
            (0..n)
                .map(|j| {
                    let x_b = h * (j + 1) as f64;
                    let (fa, fb) = mixed_residuals_fast(cost, d, x_a, x_b, tol);
                    fa.abs().max(fb.abs())
                })
                .collect()
        })
        .collect();

    // local minima of the residual surface below a loose gate
    let mut seeds: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let r = rows[i][j];
            if r >= 0.02 {
                continue;
            }
            let mut is_min = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii >= 0
                        && jj >= 0
                        && (ii as usize) < n
                        && (jj as usize) < n
                        && rows[ii as usize][jj as usize] < r
                    {
                        is_min = false;
                    }
                }
            }
            if is_min {
                seeds.push((h * (i + 1) as f64, h * (j + 1) as f64, r));
            }
        }
    }
    // near-axis solutions sit left of the first grid column; seed them from
    // the one-sided roots as well
    if let Ok(asym) = asymmetric_roots(c, d.max(2), tol) {
        for r in asym.equilibria.iter().chain(asym.rejected.iter()) {
            seeds.push((h / 16.0, r.x_b, f64::MAX));
        }
    }
    seeds.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
    seeds.truncate(128);

    let mut sols: Vec<TotallyMixedRoot> = Vec::new();
    for &(x0, y0, _) in &seeds {
        if let Some((x, y)) = refine_mixed(cost, d, x0, y0, tol) {
            // verified residual from the plain evaluators
            let q = PivotQuery::new(x, y, d)?;
            let fa = pivot_benefit_a(&q, tol)? - cost;
            let fb = pivot_benefit_b(&q, tol)? - cost;
            let res = fa.abs().max(fb.abs());
            if res < 1e-10
                && x > 1e-8
                && y > 1e-8
                && !sols
                    .iter()
                    .any(|s| (s.x_a - x).abs() < 1e-6 && (s.x_b - y).abs() < 1e-6)
            {
                {
                    sols.push(TotallyMixedRoot {
                        x_a: x,
                        x_b: y,
                        residual: res,
                    });
                }
            }
        }
    }
    sols.sort_by(|a, b| (a.x_b, a.x_a).partial_cmp(&(b.x_b, b.x_a)).unwrap());
    Ok(sols)
}

/// Damped Newton iteration on the fused residuals with a finite-difference
/// Jacobian; `None` when the iteration leaves the domain or stalls.
fn refine_mixed(
    c: f64,
    d: u64,
    mut x: f64,
    mut y: f64,
    tol: &SeriesTolerance,
) -> Option<(f64, f64)> {
    let eval = |x: f64, y: f64| mixed_residuals_fast(c, d, x, y, tol);
    let (mut fa, mut fb) = eval(x, y);
    let mut res = fa.abs().max(fb.abs());
    for _ in 0..120 {
        if !res.is_finite() {
            return None;
        }
        if res < 1e-13 {
            break;
        }
        let hx = 1e-7 * x.max(1e-3);
        let hy = 1e-7 * y.max(1e-3);
        let (fax, fbx) = eval(x + hx, y);
        let (fay, fby) = eval(x, y + hy);
        let j11 = (fax - fa) / hx;
        let j12 = (fay - fa) / hy;
        let j21 = (fbx - fb) / hx;
        let j22 = (fby - fb) / hy;
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-300 {
            return None;
        }
        let dx = (fa * j22 - fb * j12) / det;
        let dy = (fb * j11 - fa * j21) / det;
        // backtracking damping
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let nx = (x - step * dx).max(1e-12);
            let ny = (y - step * dy).max(1e-12);
            let (na, nb) = eval(nx, ny);
            let nres = na.abs().max(nb.abs());
            if nres < res {
                x = nx;
                y = ny;
                fa = na;
                fb = nb;
                res = nres;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res < 1e-11 {
        Some((x, y))
    } else {
        None
    }
}

/// Stirling-criterion gap threshold: the smallest integer `d >= 2` with
/// `c > 1 / (sqrt(2 pi d) e^{1/(12 d)})`.
pub fn d_star(c: CostParam) -> u64 {
    let cost = c.get();
    let bound = |d: u64| -> f64 {
        let df = d as f64;
        1.0 / ((2.0 * std::f64::consts::PI * df).sqrt() * (1.0 / (12.0 * df)).exp())
    };
    // bound is strictly decreasing, so binary search the predicate boundary
    let mut hi = 2u64;
    while cost <= bound(hi) {
        hi *= 2;
    }
    let mut lo = 2u64; // smallest admissible value
    if cost > bound(lo) {
        return lo;
    }
    // invariant: bound(lo) >= cost > bound(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if cost > bound(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Empirical no-show threshold: the smallest `d >= 2` at which the one-sided
/// pivotal mass stays below `2c` for every intensity, found by direct
/// evaluation of the peak. For most costs this equals [`d_star`]; near the
/// Stirling boundary it can exceed it by one (the bound is not quite sharp),
/// e.g. it is 17 rather than 16 at c = 0.1 and 5 rather than 4 at c = 0.2.
pub fn d_star_empirical(c: CostParam) -> u64 {
    let mut d = 2u64;
    loop {
        if asym_nonexistence_certificate(c, d) {
            return d;
        }
        d += 1;
    }
}

/// Cost threshold below which a one-sided equilibrium exists at gap `d`:
/// half the pivotal mass evaluated at `y = d`.
pub fn c_star(d: u64) -> Result<f64> {
    if d < 2 {
        return Err(Error::invalid(format!("c_star requires d >= 2, got {d}")));
    }
    Ok(0.5 * one_sided_pivot_mass(d, d as f64))
}

/// Single-term form `d^d / (e^d d!)` of the cost threshold.
///
/// Algebraically identical to [`c_star`]: the two summands there are the
/// same number (`d^{d-1}/(d-1)! = d^d/d!`), so the apparent two-term versus
/// one-term discrepancy between the defining display and the closing remark
/// is no discrepancy at all. Both names are kept so each written form has a
/// direct counterpart.
pub fn c_star_one_term(d: u64) -> Result<f64> {
    if d < 2 {
        return Err(Error::invalid(format!(
            "c_star_one_term requires d >= 2, got {d}"
        )));
    }
    Ok(log_poisson_pmf(d, d as f64)?.exp())
}

/// Enumerates and classifies all second-round equilibria at signed gap `d`.
///
/// Negative gaps are handled by symmetry: the roles of the two sides swap.
/// Implied turnout probabilities use the population scale `n2` and type
/// split `p_a`; intensities that would need a turnout probability above one
/// are flagged infeasible but kept.
pub fn enumerate_equilibria(
    c: CostParam,
    d: i64,
    n2: f64,
    p_a: f64,
    tol: &SeriesTolerance,
) -> Result<EquilibriumSet> {
    if n2.is_nan() || n2 <= 0.0 || !n2.is_finite() {
        return Err(Error::invalid(format!("n2 must be positive, got {n2}")));
    }
    if !(p_a > 0.0 && p_a < 1.0) {
        return Err(Error::invalid(format!("p_a must lie in (0, 1), got {p_a}")));
    }
    let cost = c.get();
    let abs_d = d.unsigned_abs();
    let swapped = d < 0;
    let p_b = 1.0 - p_a;
    let x_max = 4.0 * (abs_d as f64 + 10.0);

    // Build in the canonical orientation (leading side = "A").
    let mut canonical: Vec<(EquilibriumKind, f64, f64, f64, f64)> = Vec::new();
    let mut rejected = Vec::new();

    if abs_d == 0 {
        let x = solve_symmetric(c, tol)?;
        let res = (pivot_benefit_a(&PivotQuery::new(x, x, 0)?, tol)? - cost).abs();
        canonical.push((EquilibriumKind::TotallyMixed, x, x, res, 0.0));
    } else {
        if abs_d >= 2 {
            canonical.push((EquilibriumKind::NoShow, 0.0, 0.0, 0.0, cost));
            if !asym_nonexistence_certificate(c, abs_d) {
                let asym = asymmetric_roots(c, abs_d, tol)?;
                for r in asym.equilibria {
                    canonical.push((EquilibriumKind::OnlyBVotes, 0.0, r.x_b, r.residual, r.slack));
                }
                rejected = asym.rejected;
            }
        }
        // the per-term bound proves emptiness outright; the scan only runs
        // where two-sided solutions are possible
        if !totally_mixed_nonexistence_certificate(c, abs_d) {
            for r in totally_mixed_roots(c, abs_d, tol)? {
                canonical.push((EquilibriumKind::TotallyMixed, r.x_a, r.x_b, r.residual, 0.0));
            }
        }
    }

    let mut items: Vec<Equilibrium> = canonical
        .into_iter()
        .map(|(kind, xa, xb, residual, slack)| {
            // map back to the requested orientation
            let (kind, x_a, x_b) = if swapped {
                let kind = match kind {
                    EquilibriumKind::OnlyBVotes => EquilibriumKind::OnlyAVotes,
                    EquilibriumKind::OnlyAVotes => EquilibriumKind::OnlyBVotes,
                    k => k,
                };
                (kind, xb, xa)
            } else {
                (kind, xa, xb)
            };
            let alpha_a = x_a / (n2 * p_a);
            let alpha_b = x_b / (n2 * p_b);
            Equilibrium {
                kind,
                x_a,
                x_b,
                residual,
                slack_check: slack,
                alpha_a,
                alpha_b,
                feasible: alpha_a <= 1.0 && alpha_b <= 1.0,
            }
        })
        .collect();
    items.sort_by(|a, b| (a.x_b, a.x_a).partial_cmp(&(b.x_b, b.x_a)).unwrap());

    Ok(EquilibriumSet {
        d,
        c: cost,
        items,
        rejected_roots: rejected,
        search_domain_hi: x_max,
    })
}
