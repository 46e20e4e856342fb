//! Robustness extensions: many subtypes per side, and elections with three or
//! more alternatives.
//!
//! The subtype analysis shows that splitting a side into subtypes with
//! separate strategies changes nothing: the multi-index indifference sum
//! collapses to the two-type expression at the aggregated intensities. The
//! m-alternative analysis provides a sufficiency check (an upper bound on a
//! trailing supporter's gain from voting) under which nobody votes in the
//! second round; the gap threshold that makes the check succeed is the
//! two-alternative threshold at half the cost.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{d_star, CostParam};
use crate::error::{Error, Result};
use crate::poisson::{log_poisson_pmf, pivot_benefit_a, poisson_cdf, PivotQuery, SeriesTolerance};
use crate::simulator::run_rng;

/// Per-subtype second-round intensities for the two sides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubtypeProfile {
    pub x_a_list: Vec<f64>,
    pub x_b_list: Vec<f64>,
}

impl SubtypeProfile {
    pub fn new(x_a_list: Vec<f64>, x_b_list: Vec<f64>) -> Result<Self> {
        if x_a_list.is_empty() || x_b_list.is_empty() {
            return Err(Error::invalid("subtype lists must be non-empty"));
        }
        for x in x_a_list.iter().chain(x_b_list.iter()) {
            if !x.is_finite() || *x < 0.0 {
                return Err(Error::invalid(format!(
                    "subtype intensities must be finite and >= 0, got {x}"
                )));
            }
        }
        Ok(SubtypeProfile { x_a_list, x_b_list })
    }

    pub fn sigma_a(&self) -> f64 {
        self.x_a_list.iter().sum()
    }

    pub fn sigma_b(&self) -> f64 {
        self.x_b_list.iter().sum()
    }
}

/// Leading-side indifference sum with subtypes, collapsed through the
/// multinomial identity: it equals twice the two-type pivot benefit at the
/// aggregated intensities.
pub fn multitype_pivot_lhs(profile: &SubtypeProfile, d: u64, tol: &SeriesTolerance) -> Result<f64> {
    if d < 1 {
        return Err(Error::invalid("the subtype analysis is indexed by d >= 1"));
    }
    let q = PivotQuery::new(profile.sigma_a(), profile.sigma_b(), d)?;
    Ok(2.0 * pivot_benefit_a(&q, tol)?)
}

/// Reference evaluation of the same sum by explicit multi-index enumeration
/// over both sides (no multinomial collapse anywhere). Exponential in the
/// number of subtypes, so limited to three per side.
pub fn multitype_pivot_lhs_direct(
    profile: &SubtypeProfile,
    d: u64,
    tol: &SeriesTolerance,
) -> Result<f64> {
    if d < 1 {
        return Err(Error::invalid("the subtype analysis is indexed by d >= 1"));
    }
    if profile.x_a_list.len() > 3 || profile.x_b_list.len() > 3 {
        return Err(Error::invalid(
            "direct multi-index evaluation supports at most 3 subtypes per side",
        ));
    }
    let cap = |x: f64| -> usize {
        let k = (x + 12.0 * x.sqrt() + 40.0).ceil() as usize;
        k.min(tol.max_terms)
    };
    let pmf_table = |x: f64, n: usize| -> Result<Vec<f64>> {
        (0..=n)
            .map(|k| Ok(log_poisson_pmf(k as u64, x)?.exp()))
            .collect()
    };

    // per-subtype truncated pmf tables
    let ka: Vec<usize> = profile.x_a_list.iter().map(|&x| cap(x)).collect();
    let kb: Vec<usize> = profile.x_b_list.iter().map(|&x| cap(x)).collect();
    let ta: Vec<Vec<f64>> = profile
        .x_a_list
        .iter()
        .zip(&ka)
        .map(|(&x, &k)| pmf_table(x, k))
        .collect::<Result<_>>()?;
    let tb: Vec<Vec<f64>> = profile
        .x_b_list
        .iter()
        .zip(&kb)
        .map(|(&x, &k)| pmf_table(x, k))
        .collect::<Result<_>>()?;

    // trailing-side mass at each exact total, by explicit tuple enumeration
    let max_total: usize = kb.iter().sum::<usize>() + d as usize + 2;
    let mut mass_b = vec![0.0f64; max_total + 1];
    fn fill(tables: &[Vec<f64>], idx: usize, total: usize, prod: f64, out: &mut Vec<f64>) {
        if idx == tables.len() {
            if total < out.len() {
                out[total] += prod;
            }
            return;
        }
        for (k, &p) in tables[idx].iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            fill(tables, idx + 1, total + k, prod * p, out);
        }
    }
    fill(&tb, 0, 0, 1.0, &mut mass_b);

    // leading-side tuples against the two shifted trailing totals
    fn sweep(
        tables: &[Vec<f64>],
        idx: usize,
        total: usize,
        prod: f64,
        d: usize,
        mass_b: &[f64],
        acc: &mut f64,
    ) {
        if idx == tables.len() {
            let lo = total + d;
            if lo < mass_b.len() {
                *acc += prod * mass_b[lo];
            }
            if lo + 1 < mass_b.len() {
                *acc += prod * mass_b[lo + 1];
            }
            return;
        }
        for (k, &p) in tables[idx].iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            sweep(tables, idx + 1, total + k, prod * p, d, mass_b, acc);
        }
    }
    let mut acc = 0.0;
    sweep(&ta, 0, 0, 1.0, d as usize, &mass_b, &mut acc);
    Ok(acc)
}

/// An election among `m` alternatives: the focal supporter's rank utilities
/// (normalized, non-increasing, from 1 down to 0) and per-alternative
/// second-round vote intensities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiAltSpec {
    pub m: usize,
    /// `utilities[0] = 1` is the focal supporter's top alternative;
    /// `utilities[m-1] = 0` the bottom.
    pub utilities: Vec<f64>,
    pub vote_intensities: Vec<f64>,
}

impl MultiAltSpec {
    pub fn new(utilities: Vec<f64>, vote_intensities: Vec<f64>) -> Result<Self> {
        let m = utilities.len();
        if m < 2 {
            return Err(Error::invalid("need at least two alternatives"));
        }
        if vote_intensities.len() != m {
            return Err(Error::invalid(
                "utilities and vote_intensities must have the same length",
            ));
        }
        if (utilities[0] - 1.0).abs() > 1e-12 || utilities[m - 1].abs() > 1e-12 {
            return Err(Error::invalid(
                "utilities must be normalized with top 1 and bottom 0",
            ));
        }
        if utilities.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("utilities must be non-increasing"));
        }
        for x in &vote_intensities {
            if !x.is_finite() || *x < 0.0 {
                return Err(Error::invalid(format!(
                    "intensities must be finite and >= 0, got {x}"
                )));
            }
        }
        Ok(MultiAltSpec {
            m,
            utilities,
            vote_intensities,
        })
    }
}

/// First-round vote counts per alternative, pre-sorted ascending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirstRoundTally {
    pub a: Vec<u64>,
}

impl FirstRoundTally {
    pub fn new(a: Vec<u64>) -> Result<Self> {
        if a.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("tallies must be sorted ascending"));
        }
        Ok(FirstRoundTally { a })
    }
}

/// `prod_j P(Pois(eta_j) < x - a_j)`, the probability that every listed
/// alternative ends strictly below the level `x`; impossible requirements
/// (level at or below the first-round count) contribute zero.
pub fn strictly_fewer_prob(x: u64, others: &[(u64, f64)], _tol: &SeriesTolerance) -> Result<f64> {
    let mut p = 1.0;
    for &(a_j, eta_j) in others {
        if x <= a_j {
            return Ok(0.0);
        }
        let need = x - a_j - 1; // strictly fewer than x - a_j second-round votes
        p *= poisson_cdf(need, eta_j)?;
        if p == 0.0 {
            break;
        }
    }
    Ok(p)
}

/// Expected gain of a focal-alternative supporter from voting, with the
/// event probabilities broken out. The no-show condition holds when
/// `gain < c`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GainBreakdown {
    pub gain: f64,
    pub p_equal_total: f64,
    pub p_low_total: f64,
    /// Gap between the top and the focal (bottom) first-round tallies.
    pub gap_top_to_focal: u64,
    /// Gap between the top two first-round tallies.
    pub gap_top_to_second: u64,
}

/// Upper bound on the expected gain a supporter of the focal (tally-minimal)
/// alternative derives from casting a second-round vote.
///
/// Sums, over every non-empty set of rival alternatives, the probability
/// that the focal alternative ties the leaders (times the tie-breaking gain)
/// or trails them by one (times the tie-making gain). Levels run from one
/// below the top tally upward so that configurations with zero second-round
/// votes for the leaders are included.
pub fn no_show_gain_upper(
    spec: &MultiAltSpec,
    tally: &FirstRoundTally,
    focal: usize,
    tol: &SeriesTolerance,
) -> Result<GainBreakdown> {
    let m = spec.m;
    if m > 8 {
        return Err(Error::invalid(
            "subset enumeration is capped at 8 alternatives",
        ));
    }
    if tally.a.len() != m {
        return Err(Error::invalid("tally length must match the spec"));
    }
    if focal >= m || tally.a[focal] != tally.a[0] {
        return Err(Error::precondition(
            "the focal alternative must hold the minimal first-round tally",
        ));
    }
    let a = &tally.a;
    let eta = &spec.vote_intensities;
    let a_top = *a.last().unwrap();
    let a_focal = a[focal];
    let eta_focal = eta[focal];

    // the focal supporter ranks the focal first; remaining alternatives keep
    // their index order in the rank list
    let util_of_alt = |j: usize| -> f64 {
        if j == focal {
            spec.utilities[0]
        } else if j < focal {
            spec.utilities[j + 1]
        } else {
            spec.utilities[j]
        }
    };

    let rivals: Vec<usize> = (0..m).filter(|&j| j != focal).collect();
    let eta_max = eta.iter().cloned().fold(0.0f64, f64::max);
    let x_lo = a_focal.max(a_top.saturating_sub(1));
    let x_hi = a_top + (eta_max + 12.0 * eta_max.sqrt() + 80.0).ceil() as u64;
    if (x_hi - x_lo) as usize > tol.max_terms {
        return Err(Error::Truncation {
            partial: 0.0,
            tail_bound: 1.0,
            max_terms: tol.max_terms,
        });
    }

    let mut gain = 0.0;
    let mut pe_total = 0.0;
    let mut pl_total = 0.0;
    for mask in 1u32..(1 << rivals.len()) {
        let set: Vec<usize> = rivals
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &j)| j)
            .collect();
        let rest: Vec<(u64, f64)> = rivals
            .iter()
            .filter(|j| !set.contains(j))
            .map(|&j| (a[j], eta[j]))
            .collect();
        let k = set.len() as f64;
        let sum_v: f64 = set.iter().map(|&j| util_of_alt(j)).sum();
        let h_gain = 1.0 - (1.0 + sum_v) / (1.0 + k);
        let f_gain = (1.0 + sum_v) / (1.0 + k) - sum_v / k;

        let mut p_equal = 0.0;
        let mut p_low = 0.0;
        for x in x_lo..=x_hi {
            // tie at level x: focal and the set share x, the rest stay below
            let mut t = pois_at(x, a_focal, eta_focal)?;
            if t > 0.0 {
                for &j in &set {
                    t *= pois_at(x, a[j], eta[j])?;
                    if t == 0.0 {
                        break;
                    }
                }
            }
            if t > 0.0 {
                t *= strictly_fewer_prob(x, &rest, tol)?;
                p_equal += t;
            }
            // one short: focal at x, the set at x + 1, the rest below x + 1
            let mut t = pois_at(x, a_focal, eta_focal)?;
            if t > 0.0 {
                for &j in &set {
                    t *= pois_at(x + 1, a[j], eta[j])?;
                    if t == 0.0 {
                        break;
                    }
                }
            }
            if t > 0.0 {
                t *= strictly_fewer_prob(x + 1, &rest, tol)?;
                p_low += t;
            }
        }
        gain += p_equal * h_gain + p_low * f_gain;
        pe_total += p_equal;
        pl_total += p_low;
    }
    Ok(GainBreakdown {
        gain,
        p_equal_total: pe_total,
        p_low_total: pl_total,
        gap_top_to_focal: a_top - a_focal,
        gap_top_to_second: a_top - a[m - 2],
    })
}

/// `Pois(x - a; eta)` as a function of the combined level `x`; zero when the
/// level is below the first-round count.
fn pois_at(x: u64, a: u64, eta: f64) -> Result<f64> {
    if x < a {
        return Ok(0.0);
    }
    Ok(log_poisson_pmf(x - a, eta)?.exp())
}

/// Gap threshold for the m-alternative no-show condition: the two-way
/// threshold evaluated at half the cost.
pub fn d_double_star(c: f64) -> Result<u64> {
    let cost = CostParam::new(c)?;
    Ok(d_star(CostParam::new(cost.get() / 2.0)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiwayConfig {
    pub spec: MultiAltSpec,
    /// First-round vote shares per alternative (sincere plurality ballot),
    /// summing to one.
    pub first_round_probs: Vec<f64>,
    pub n1: u64,
    pub c: f64,
    pub runs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiwaySummary {
    pub runs: u64,
    /// Runs in which the no-show condition held for every alternative in the
    /// elimination order.
    pub certified_runs: u64,
    pub uncertified_runs: u64,
    /// First-round plurality wins per alternative, counted over certified
    /// runs only.
    pub win_counts: Vec<u64>,
    pub win_rates: Vec<f64>,
    pub seed: u64,
}

/// Multinomial draw by a chain of binomials.
fn draw_tally(n: u64, probs: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = vec![0u64; probs.len()];
    for (j, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == probs.len() {
            out[j] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = if q >= 1.0 {
            left
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(left, q).unwrap().sample(rng)
        };
        out[j] = k;
        left -= k;
        mass -= p;
    }
    out
}

/// Simulates first-round plurality tallies and certifies, alternative by
/// alternative from the bottom of the tally upward, that no second-round
/// supporter wants to vote. Certification uses the worst-case utility
/// profile (all rival utilities zero), so a certified run is certified for
/// every admissible utility vector. Uncertified runs are counted and left
/// unadjudicated.
pub fn simulate_multiway(
    config: &MultiwayConfig,
    tol: &SeriesTolerance,
) -> Result<MultiwaySummary> {
    let m = config.spec.m;
    if config.first_round_probs.len() != m {
        return Err(Error::invalid("first_round_probs length must match m"));
    }
    let psum: f64 = config.first_round_probs.iter().sum();
    if (psum - 1.0).abs() > 1e-9 || config.first_round_probs.iter().any(|p| *p < 0.0) {
        return Err(Error::invalid("first_round_probs must be a distribution"));
    }
    let cost = CostParam::new(config.c)?.get();

    let results: Vec<(bool, Option<usize>)> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(config.seed, run);
            let tally = draw_tally(config.n1, &config.first_round_probs, &mut rng);

            // elimination order: ascending tally, ties by index
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by_key(|&j| (tally[j], j));

            let mut certified = true;
            for step in 0..(m - 1) {
                let remaining = &order[step..];
                let mut pairs: Vec<(u64, f64)> = remaining
                    .iter()
                    .map(|&j| (tally[j], config.spec.vote_intensities[j]))
                    .collect();
                pairs.sort_by_key(|p| p.0);
                let tallies: Vec<u64> = pairs.iter().map(|p| p.0).collect();
                let etas: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let mm = tallies.len();
                let mut utils = vec![0.0; mm];
                utils[0] = 1.0;
                let reduced = MultiAltSpec::new(utils, etas).expect("reduced spec");
                let reduced_tally = FirstRoundTally::new(tallies).expect("sorted");
                match no_show_gain_upper(&reduced, &reduced_tally, 0, tol) {
                    Ok(b) if b.gain < cost => {}
                    _ => {
                        certified = false;
                        break;
                    }
                }
            }
            if !certified {
                return (false, None);
            }
            // plurality winner with the uniform tie rule
            let top = *tally.iter().max().unwrap();
            let leaders: Vec<usize> = (0..m).filter(|&j| tally[j] == top).collect();
            let w = leaders[rng.gen_range(0..leaders.len())];
            (true, Some(w))
        })
        .collect();

    let mut summary = MultiwaySummary {
        runs: config.runs,
        certified_runs: 0,
        uncertified_runs: 0,
        win_counts: vec![0; m],
        win_rates: vec![0.0; m],
        seed: config.seed,
    };
    for (certified, winner) in results {
        if certified {
            summary.certified_runs += 1;
            if let Some(w) = winner {
                summary.win_counts[w] += 1;
            }
        } else {
            summary.uncertified_runs += 1;
        }
    }
    let denom = summary.certified_runs.max(1) as f64;
    for j in 0..m {
        summary.win_rates[j] = summary.win_counts[j] as f64 / denom;
    }
    Ok(summary)
}
