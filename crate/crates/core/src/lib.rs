//! Numerical toolkit for two-round assessment voting in Poisson electorates.
//!
//! An assessment group of `N1` randomly selected citizens votes first (with
//! their participation cost subsidized); the vote-count gap is published, and
//! the remaining citizens decide whether to pay the cost and vote. This crate
//! computes the second-round equilibria as a function of the published gap,
//! the gap and cost thresholds past which nobody votes in the second round,
//! the group size that clinches the election in the first round with a given
//! confidence, welfare comparisons against one-round voluntary and compulsory
//! voting, and seeded Monte-Carlo validation of all of it.
//!
//! Modules:
//! - [`poisson`]: log-space Poisson masses, pivot-probability series, win
//!   probabilities for Poisson vote-count differences.
//! - [`equilibrium`]: second-round equilibrium enumeration, thresholds
//!   `d_star` / `c_star`, non-existence certificates.
//! - [`sizing_welfare`]: Hoeffding group sizing, the sizing table, welfare
//!   reports.
//! - [`simulator`]: reproducible Monte-Carlo runs of the full procedure and
//!   the one-round benchmarks.
//! - [`multiway`]: subtype-robustness identities and elections with three or
//!   more alternatives.
//!
//! ```
//! use av_core::*;
//!
//! let tol = SeriesTolerance::default();
//! let c = CostParam::new(0.1).unwrap();
//!
//! // gap threshold and the group size that reaches it with 90% confidence
//! assert_eq!(d_star(c), 16);
//! let sizing = n1_star(0.1, c, 0.05).unwrap();
//! assert_eq!(sizing.n1_star, 3003);
//!
//! // a sized group decides the election and silences the second round
//! let params = ElectionParams::new(0.525, c, sizing.n1_star, 1e4).unwrap();
//! let config = SimConfig::new(params, 200, 7, Policy::NoShowPreferred).unwrap();
//! let report = simulate_av(&config, &tol).unwrap();
//! assert!(report.summary.no_show_rate > 0.9);
//! ```

pub mod equilibrium;
pub mod error;
pub mod multiway;
pub mod poisson;
pub mod simulator;
pub mod sizing_welfare;

pub use equilibrium::{
    asym_nonexistence_certificate, asymmetric_roots, c_star, c_star_one_term, d_star,
    d_star_empirical, enumerate_equilibria, solve_symmetric,
    totally_mixed_nonexistence_certificate, totally_mixed_roots, AsymmetricRoot, AsymmetricRoots,
    CostParam, Equilibrium, EquilibriumKind, EquilibriumSet, TotallyMixedRoot,
};
pub use error::{Error, Result};
pub use multiway::{
    d_double_star, multitype_pivot_lhs, multitype_pivot_lhs_direct, no_show_gain_upper,
    simulate_multiway, strictly_fewer_prob, FirstRoundTally, GainBreakdown, MultiAltSpec,
    MultiwayConfig, MultiwaySummary, SubtypeProfile,
};
pub use poisson::{
    cross_sum, log_poisson_pmf, pivot_benefit_a, pivot_benefit_b, poisson_cdf, poisson_pmf,
    skellam_a_wins, PivotQuery, SeriesTolerance,
};
pub use simulator::{
    simulate_av, simulate_one_round_compulsory, simulate_one_round_voluntary, Policy, SimConfig,
    SimOutcome, SimReport, SimSummary, Winner,
};
pub use sizing_welfare::{
    binomial_majority_prob, f_bound, f_exact, hoeffding_failure_bound, n1_star,
    n1_star_monotonicity_report, reproduce_table2, welfare_report, welfare_report_with,
    ElectionParams, MonotonicityReport, SizingResult, Table2Row, VoluntaryCostTerm, WelfareOptions,
    WelfareReport, TABLE2_COSTS, TABLE2_EPSILONS, TABLE2_GAPS,
};
