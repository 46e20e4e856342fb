//! Seeded Monte-Carlo runs of the two-round procedure and the two one-round
//! benchmarks.
//!
//! Reproducibility contract: every run draws from its own counter-derived
//! ChaCha stream `(seed, run_index)`, so serial and parallel execution (and
//! re-runs with the same config) produce bit-identical summaries.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    asym_nonexistence_certificate, asymmetric_roots, solve_symmetric,
    totally_mixed_nonexistence_certificate, totally_mixed_roots,
};
use crate::error::Result;
use crate::poisson::SeriesTolerance;
use crate::sizing_welfare::ElectionParams;

/// How to resolve the second round when several equilibria coexist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Select the no-show profile whenever it exists (always, once the gap
    /// magnitude reaches two).
    NoShowPreferred,
    /// Among equilibria with voting, select the one with the lowest total
    /// turnout intensity; fall back to no-show.
    SmallestRoot,
    /// Among equilibria with voting, select the one with the highest total
    /// turnout intensity; fall back to no-show.
    LargestRoot,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ElectionParams,
    pub runs: u64,
    pub seed: u64,
    pub policy: Policy,
    pub record_detail: bool,
}

impl SimConfig {
    pub fn new(params: ElectionParams, runs: u64, seed: u64, policy: Policy) -> Result<Self> {
        if runs < 1 {
            return Err(crate::error::Error::invalid("runs must be at least 1"));
        }
        Ok(SimConfig {
            params,
            runs,
            seed,
            policy,
            record_detail: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

/// Per-run record. `second_round_pop_*` are the realized second-round type
/// counts, kept so that welfare can be recomputed from the record alone.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimOutcome {
    pub run_index: u64,
    pub d: i64,
    pub n2_realized: u64,
    pub second_round_pop_a: u64,
    pub second_round_pop_b: u64,
    pub second_round_votes_a: u64,
    pub second_round_votes_b: u64,
    pub winner: Winner,
    pub total_cost: f64,
    pub realized_welfare: f64,
    /// False when the realized gap admits no usable equilibrium under the
    /// policy (the run is excluded from outcome statistics).
    pub resolved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub runs: u64,
    pub resolved_runs: u64,
    pub unresolved_runs: u64,
    /// Fraction of resolved runs won by side A, with its binomial standard
    /// error.
    pub a_win_rate: f64,
    pub a_win_se: f64,
    /// Fraction of resolved runs with zero second-round votes.
    pub no_show_rate: f64,
    pub mean_welfare: f64,
    pub mean_total_cost: f64,
    /// Mean number of ballots cast per run.
    pub mean_voters: f64,
    /// Realized first-round gaps over all runs (for one-round benchmarks:
    /// final vote margins).
    pub d_histogram: BTreeMap<i64, u64>,
    /// Set when a turnout probability had to be clamped to one.
    pub alpha_clamped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub summary: SimSummary,
    pub outcomes: Option<Vec<SimOutcome>>,
}

/// Per-run RNG stream: one master seed, one counter per run.
pub fn run_rng(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

/// Second-round prescription selected for one gap value.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Selected {
    NoShow,
    Mixed { alpha_a: f64, alpha_b: f64 },
    Unresolved,
}

/// Resolve the second-round game at signed gap `d` under `policy`.
///
/// Candidate profiles are the one-sided roots and the two-sided solutions
/// (skipped without scanning when the per-term bound certifies emptiness),
/// restricted to turnout probabilities at most one.
fn select_equilibrium(
    params: &ElectionParams,
    policy: Policy,
    d: i64,
    tol: &SeriesTolerance,
) -> Result<Selected> {
    let abs_d = d.unsigned_abs();
    let c = params.c;
    let n2 = params.n2;
    let (p_lead, p_trail) = if d >= 0 {
        (params.p_a, params.p_b())
    } else {
        (params.p_b(), params.p_a)
    };

    // canonical orientation: "lead" is the side ahead by |d|
    let mut voting: Vec<(f64, f64)> = Vec::new(); // (x_lead, x_trail)
    if abs_d == 0 {
        let x = solve_symmetric(c, tol)?;
        voting.push((x, x));
    } else {
        if abs_d >= 2 && policy != Policy::NoShowPreferred {
            if !asym_nonexistence_certificate(c, abs_d) {
                for r in asymmetric_roots(c, abs_d, tol)?.equilibria {
                    voting.push((0.0, r.x_b));
                }
            }
            if !totally_mixed_nonexistence_certificate(c, abs_d) {
                for r in totally_mixed_roots(c, abs_d, tol)? {
                    voting.push((r.x_a, r.x_b));
                }
            }
        }
        if abs_d == 1 {
            for r in totally_mixed_roots(c, 1, tol)? {
                voting.push((r.x_a, r.x_b));
            }
        }
    }

    // keep realizable profiles only and map intensities to probabilities
    let mut mixed: Vec<(f64, Selected)> = Vec::new();
    for (x_lead, x_trail) in voting {
        let a_lead = x_lead / (n2 * p_lead);
        let a_trail = x_trail / (n2 * p_trail);
        if a_lead <= 1.0 && a_trail <= 1.0 {
            let (alpha_a, alpha_b) = if d >= 0 {
                (a_lead, a_trail)
            } else {
                (a_trail, a_lead)
            };
            mixed.push((x_lead + x_trail, Selected::Mixed { alpha_a, alpha_b }));
        }
    }
    mixed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let no_show_available = abs_d >= 2;
    Ok(match policy {
        Policy::NoShowPreferred => {
            if no_show_available {
                Selected::NoShow
            } else if let Some((_, s)) = mixed.first() {
                *s
            } else {
                Selected::Unresolved
            }
        }
        Policy::SmallestRoot => {
            if let Some((_, s)) = mixed.first() {
                *s
            } else if no_show_available {
                Selected::NoShow
            } else {
                Selected::Unresolved
            }
        }
        Policy::LargestRoot => {
            if let Some((_, s)) = mixed.last() {
                *s
            } else if no_show_available {
                Selected::NoShow
            } else {
                Selected::Unresolved
            }
        }
    })
}

fn draw_first_round(params: &ElectionParams, rng: &mut ChaCha8Rng) -> (u64, i64) {
    let k = Binomial::new(params.n1, params.p_a).unwrap().sample(rng);
    let d = 2 * k as i64 - params.n1 as i64;
    (k, d)
}

fn draw_poisson(lambda: f64, rng: &mut ChaCha8Rng) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).unwrap().sample(rng) as u64
}

fn draw_thinned(pop: u64, alpha: f64, rng: &mut ChaCha8Rng) -> u64 {
    if alpha <= 0.0 || pop == 0 {
        0
    } else if alpha >= 1.0 {
        pop
    } else {
        Binomial::new(pop, alpha).unwrap().sample(rng)
    }
}

/// Full two-round simulation.
///
/// Per run: the assessment group votes sincerely (its subsidy is charged as
/// a social cost), the gap is published, the selected second-round
/// equilibrium is played by Poisson-thinned type counts, and the combined
/// tally decides with a fair coin on ties.
pub fn simulate_av(config: &SimConfig, tol: &SeriesTolerance) -> Result<SimReport> {
    let params = config.params;
    let c = params.c.get();

    // pass 1: realized gaps (cheap, serial) so equilibrium selection is
    // computed once per distinct gap
    let mut selections: BTreeMap<i64, Selected> = BTreeMap::new();
    for run in 0..config.runs {
        let mut rng = run_rng(config.seed, run);
        let (_, d) = draw_first_round(&params, &mut rng);
        selections.entry(d).or_insert(Selected::Unresolved);
    }
    let gaps: Vec<i64> = selections.keys().copied().collect();
    let resolved: Vec<(i64, Selected)> = gaps
        .into_iter()
        .map(|d| Ok((d, select_equilibrium(&params, config.policy, d, tol)?)))
        .collect::<Result<Vec<_>>>()?;
    let selections: BTreeMap<i64, Selected> = resolved.into_iter().collect();

    // pass 2: full runs, parallel, deterministic through per-run streams
    let outcomes: Vec<SimOutcome> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(config.seed, run);
            let (k, d) = draw_first_round(&params, &mut rng);
            let pop_a = draw_poisson(params.n2 * params.p_a, &mut rng);
            let pop_b = draw_poisson(params.n2 * params.p_b(), &mut rng);
            let selected = selections[&d];
            let (votes_a, votes_b, resolved) = match selected {
                Selected::NoShow => (0, 0, true),
                Selected::Mixed { alpha_a, alpha_b } => (
                    draw_thinned(pop_a, alpha_a, &mut rng),
                    draw_thinned(pop_b, alpha_b, &mut rng),
                    true,
                ),
                Selected::Unresolved => (0, 0, false),
            };
            let total_a = k + votes_a;
            let total_b = (params.n1 - k) + votes_b;
            let winner = match total_a.cmp(&total_b) {
                std::cmp::Ordering::Greater => Winner::A,
                std::cmp::Ordering::Less => Winner::B,
                std::cmp::Ordering::Equal => {
                    if rng.gen::<bool>() {
                        Winner::A
                    } else {
                        Winner::B
                    }
                }
            };
            let voters = params.n1 + votes_a + votes_b;
            let population = params.n1 + pop_a + pop_b;
            let winners_count = match winner {
                Winner::A => k + pop_a,
                Winner::B => (params.n1 - k) + pop_b,
            };
            let total_cost = c * voters as f64;
            let realized_welfare = (winners_count as f64 - total_cost) / population as f64;
            SimOutcome {
                run_index: run,
                d,
                n2_realized: pop_a + pop_b,
                second_round_pop_a: pop_a,
                second_round_pop_b: pop_b,
                second_round_votes_a: votes_a,
                second_round_votes_b: votes_b,
                winner,
                total_cost,
                realized_welfare,
                resolved,
            }
        })
        .collect();

    let mut summary = summarize(&outcomes, false);
    // every assessment-group member casts a ballot
    summary.mean_voters += params.n1 as f64;
    Ok(SimReport {
        summary,
        outcomes: if config.record_detail {
            Some(outcomes)
        } else {
            None
        },
    })
}

fn summarize(outcomes: &[SimOutcome], alpha_clamped: bool) -> SimSummary {
    let runs = outcomes.len() as u64;
    let mut hist = BTreeMap::new();
    let mut resolved_runs = 0u64;
    let mut wins_a = 0u64;
    let mut no_show = 0u64;
    let mut welfare = 0.0;
    let mut cost = 0.0;
    let mut voters = 0.0;
    for o in outcomes {
        *hist.entry(o.d).or_insert(0u64) += 1;
        if !o.resolved {
            continue;
        }
        resolved_runs += 1;
        if o.winner == Winner::A {
            wins_a += 1;
        }
        if o.second_round_votes_a + o.second_round_votes_b == 0 {
            no_show += 1;
        }
        welfare += o.realized_welfare;
        cost += o.total_cost;
        voters += (o.second_round_votes_a + o.second_round_votes_b) as f64;
    }
    let n = resolved_runs.max(1) as f64;
    let rate = wins_a as f64 / n;
    SimSummary {
        runs,
        resolved_runs,
        unresolved_runs: runs - resolved_runs,
        a_win_rate: rate,
        a_win_se: (rate * (1.0 - rate) / n).sqrt(),
        no_show_rate: no_show as f64 / n,
        mean_welfare: welfare / n,
        mean_total_cost: cost / n,
        mean_voters: voters / n,
        d_histogram: hist,
        alpha_clamped,
    }
}

/// One-round voluntary benchmark: the whole electorate (expected size
/// `n1 + n2`) plays the symmetric zero-gap equilibrium.
pub fn simulate_one_round_voluntary(
    params: &ElectionParams,
    runs: u64,
    seed: u64,
    tol: &SeriesTolerance,
) -> Result<SimSummary> {
    let x = solve_symmetric(params.c, tol)?;
    let n = params.n_total();
    let raw_a = x / (n * params.p_a);
    let raw_b = x / (n * params.p_b());
    let clamped = raw_a > 1.0 || raw_b > 1.0;
    let alpha_a = raw_a.min(1.0);
    let alpha_b = raw_b.min(1.0);
    let c = params.c.get();

    let outcomes: Vec<SimOutcome> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(seed, run);
            let pop_a = draw_poisson(n * params.p_a, &mut rng);
            let pop_b = draw_poisson(n * params.p_b(), &mut rng);
            let votes_a = draw_thinned(pop_a, alpha_a, &mut rng);
            let votes_b = draw_thinned(pop_b, alpha_b, &mut rng);
            one_round_outcome(run, pop_a, pop_b, votes_a, votes_b, c, &mut rng)
        })
        .collect();
    Ok(summarize_one_round(&outcomes, clamped))
}

/// One-round compulsory benchmark: every realized citizen votes and pays.
pub fn simulate_one_round_compulsory(
    params: &ElectionParams,
    runs: u64,
    seed: u64,
) -> Result<SimSummary> {
    let n = params.n_total();
    let c = params.c.get();
    let outcomes: Vec<SimOutcome> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(seed, run);
            let pop_a = draw_poisson(n * params.p_a, &mut rng);
            let pop_b = draw_poisson(n * params.p_b(), &mut rng);
            one_round_outcome(run, pop_a, pop_b, pop_a, pop_b, c, &mut rng)
        })
        .collect();
    Ok(summarize_one_round(&outcomes, false))
}

fn one_round_outcome(
    run: u64,
    pop_a: u64,
    pop_b: u64,
    votes_a: u64,
    votes_b: u64,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> SimOutcome {
    let winner = match votes_a.cmp(&votes_b) {
        std::cmp::Ordering::Greater => Winner::A,
        std::cmp::Ordering::Less => Winner::B,
        std::cmp::Ordering::Equal => {
            if rng.gen::<bool>() {
                Winner::A
            } else {
                Winner::B
            }
        }
    };
    let population = pop_a + pop_b;
    let winners_count = match winner {
        Winner::A => pop_a,
        Winner::B => pop_b,
    };
    let total_cost = c * (votes_a + votes_b) as f64;
    let realized_welfare = if population == 0 {
        0.0
    } else {
        (winners_count as f64 - total_cost) / population as f64
    };
    SimOutcome {
        run_index: run,
        d: votes_a as i64 - votes_b as i64,
        n2_realized: population,
        second_round_pop_a: pop_a,
        second_round_pop_b: pop_b,
        second_round_votes_a: votes_a,
        second_round_votes_b: votes_b,
        winner,
        total_cost,
        realized_welfare,
        resolved: true,
    }
}

fn summarize_one_round(outcomes: &[SimOutcome], alpha_clamped: bool) -> SimSummary {
    let mut s = summarize(outcomes, alpha_clamped);
    // for one-round runs every ballot is a "second round" ballot already;
    // the histogram key is the final margin
    s.no_show_rate = outcomes
        .iter()
        .filter(|o| o.second_round_votes_a + o.second_round_votes_b == 0)
        .count() as f64
        / outcomes.len().max(1) as f64;
    s
}
