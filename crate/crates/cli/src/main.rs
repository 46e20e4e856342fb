//! `av` — command-line front end for the assessment-voting toolkit.
//!
//! Every invocation resolves to a single `RunConfig` (flags over config file
//! over defaults), dispatches to the library, and emits the resolved config
//! together with the result so any output can be replayed bit-exactly with
//! `av --config <file>`.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use av_core::{
    c_star, c_star_one_term, d_double_star, d_star, d_star_empirical, no_show_gain_upper,
    reproduce_table2, simulate_av, simulate_multiway, simulate_one_round_compulsory,
    simulate_one_round_voluntary, solve_symmetric, welfare_report_with, CostParam, ElectionParams,
    Error as CoreError, FirstRoundTally, MultiAltSpec, MultiwayConfig, PivotQuery, Policy,
    SeriesTolerance, SimConfig, VoluntaryCostTerm, WelfareOptions,
};

const EXIT_ARGUMENT: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "av",
    about = "Equilibria, sizing, welfare, and Monte-Carlo simulation for two-round assessment voting",
    version
)]
struct Cli {
    /// JSON config file holding a full run configuration; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output format: json, csv, or tsv
    #[arg(long, global = true)]
    format: Option<String>,

    /// Output file (relative paths resolve against $AV_OUT_DIR when set)
    #[arg(long, global = true)]
    out: Option<String>,

    /// Relative tail tolerance for series truncation
    #[arg(long, global = true)]
    rel_tol: Option<f64>,

    /// Hard cap on summed series terms
    #[arg(long, global = true)]
    max_terms: Option<usize>,

    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Solve the symmetric zero-gap turnout fixed point
    Solve {
        /// Participation cost, 0 < c < 1/2
        #[arg(long)]
        c: f64,
    },
    /// Gap threshold above which only the no-show equilibrium survives
    Dstar {
        /// Participation cost, 0 < c < 1/2
        #[arg(long)]
        c: f64,
    },
    /// Cost threshold below which a one-sided equilibrium exists at gap d
    Cstar {
        /// First-round gap, d >= 2
        #[arg(long)]
        d: u64,
    },
    /// Assessment-group size for a target failure probability
    Size {
        /// Failure probability, 0 < epsilon < 1
        #[arg(long)]
        epsilon: f64,
        /// Participation cost, 0 < c < 1/2
        #[arg(long)]
        c: f64,
        /// Preference gap p_a - p_b, 0 < gap < 1
        #[arg(long)]
        gap: f64,
    },
    /// Recompute the full sizing table (16 cells)
    Table2,
    /// Welfare comparison of the two-round procedure and both benchmarks
    Welfare {
        /// Participation cost, 0 < c < 1/2
        #[arg(long)]
        c: f64,
        /// Probability a citizen prefers side A, 1/2 < p_a < 1
        #[arg(long)]
        p_a: f64,
        /// Assessment-group size
        #[arg(long)]
        n1: u64,
        /// Expected second-round population
        #[arg(long)]
        n2: f64,
        /// Failure probability used for the guarantee line
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Use the single-intensity voluntary cost term instead of both sides
        #[arg(long, action = ArgAction::SetTrue)]
        voluntary_cost_single: bool,
    },
    /// Seeded Monte-Carlo simulation
    Simulate {
        /// What to simulate: av, voluntary, or compulsory
        #[arg(long, default_value = "av")]
        mode: String,
        /// Participation cost, 0 < c < 1/2
        #[arg(long)]
        c: f64,
        /// Probability a citizen prefers side A, 1/2 < p_a < 1
        #[arg(long)]
        p_a: f64,
        /// Assessment-group size
        #[arg(long)]
        n1: u64,
        /// Expected second-round population
        #[arg(long)]
        n2: f64,
        /// Number of Monte-Carlo runs
        #[arg(long)]
        runs: u64,
        /// Master seed; per-run streams derive from (seed, run index)
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Equilibrium selection: no-show, smallest-root, or largest-root
        #[arg(long, default_value = "no-show")]
        policy: String,
        /// Stream one JSON line per run before the summary
        #[arg(long, action = ArgAction::SetTrue)]
        record_detail: bool,
    },
    /// Elections with three or more alternatives (spec file driven)
    Multiway {
        /// gain (no-show condition for one tally) or simulate
        #[arg(long, default_value = "gain")]
        mode: String,
        /// JSON file with utilities, vote_intensities, c, and per mode:
        /// tally/focal (gain) or first_round_probs/n1 (simulate)
        #[arg(long)]
        spec_file: PathBuf,
        /// Number of Monte-Carlo runs (simulate mode)
        #[arg(long)]
        runs: Option<u64>,
        /// Master seed (simulate mode)
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Fully resolved invocation; serialized into every output so results can be
/// replayed exactly. Unknown keys in a config file are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n1: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    runs: Option<u64>,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<String>,
    #[serde(default)]
    record_detail: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec_file: Option<String>,
    #[serde(default)]
    voluntary_cost_single: bool,
    format: String,
    rel_tol: f64,
    max_terms: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tol = SeriesTolerance::default();
        RunConfig {
            command: String::new(),
            c: None,
            d: None,
            epsilon: None,
            gap: None,
            p_a: None,
            n1: None,
            n2: None,
            runs: None,
            seed: 0,
            policy: None,
            record_detail: false,
            mode: None,
            spec_file: None,
            voluntary_cost_single: false,
            format: "json".to_string(),
            rel_tol: tol.rel_tol,
            max_terms: tol.max_terms,
        }
    }
}

/// Input file for the multiway commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiwayFile {
    utilities: Vec<f64>,
    vote_intensities: Vec<f64>,
    c: f64,
    #[serde(default)]
    tally: Option<Vec<u64>>,
    #[serde(default)]
    focal: Option<usize>,
    #[serde(default)]
    first_round_probs: Option<Vec<f64>>,
    #[serde(default)]
    n1: Option<u64>,
    /// Optional list of top-tally gaps; gain mode then emits one
    /// certification row per gap instead of a single evaluation.
    #[serde(default)]
    gap_grid: Option<Vec<u64>>,
}

#[derive(Debug)]
enum CliError {
    Argument(String),
    Precondition(String),
    Numerical(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(m) => CliError::Argument(m),
            CoreError::Precondition(m) => CliError::Precondition(m),
            CoreError::Truncation { .. } | CoreError::Bracket { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Argument(m)) => {
            eprintln!("error (argument): {m}");
            ExitCode::from(EXIT_ARGUMENT)
        }
        Err(CliError::Precondition(m)) => {
            eprintln!("error (precondition): {m}");
            ExitCode::from(EXIT_PRECONDITION)
        }
        Err(CliError::Numerical(m)) => {
            eprintln!("error (numerical): {m}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Argument(format!("cannot read config {path:?}: {e}")))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| CliError::Argument(format!("invalid config file: {e}")))?
        }
        None => RunConfig::default(),
    };
    apply_flags(&mut config, &cli)?;
    if config.command.is_empty() {
        return Err(CliError::Argument(
            "no command given (pass a subcommand or a config file with one)".into(),
        ));
    }
    let tol = SeriesTolerance::new(config.rel_tol, config.max_terms).map_err(CliError::from)?;

    // simulate with per-run detail streams JSON lines instead of one document
    if config.command == "simulate" && config.record_detail {
        return stream_simulation(&config, cli.out.as_deref(), &tol);
    }

    let result = dispatch(&config, &tol)?;
    emit(&config, cli.out.as_deref(), &result)
}

fn apply_flags(config: &mut RunConfig, cli: &Cli) -> Result<(), CliError> {
    if let Some(f) = &cli.format {
        if !matches!(f.as_str(), "json" | "csv" | "tsv") {
            return Err(CliError::Argument(format!(
                "format must be json, csv, or tsv, got {f}"
            )));
        }
        config.format = f.clone();
    }
    if let Some(v) = cli.rel_tol {
        config.rel_tol = v;
    }
    if let Some(v) = cli.max_terms {
        config.max_terms = v;
    }
    match &cli.command {
        None => {}
        Some(Cmd::Solve { c }) => {
            config.command = "solve".into();
            config.c = Some(*c);
        }
        Some(Cmd::Dstar { c }) => {
            config.command = "dstar".into();
            config.c = Some(*c);
        }
        Some(Cmd::Cstar { d }) => {
            config.command = "cstar".into();
            config.d = Some(*d);
        }
        Some(Cmd::Size { epsilon, c, gap }) => {
            config.command = "size".into();
            config.epsilon = Some(*epsilon);
            config.c = Some(*c);
            config.gap = Some(*gap);
        }
        Some(Cmd::Table2) => {
            config.command = "table2".into();
        }
        Some(Cmd::Welfare {
            c,
            p_a,
            n1,
            n2,
            epsilon,
            voluntary_cost_single,
        }) => {
            config.command = "welfare".into();
            config.c = Some(*c);
            config.p_a = Some(*p_a);
            config.n1 = Some(*n1);
            config.n2 = Some(*n2);
            config.epsilon = Some(*epsilon);
            config.voluntary_cost_single = *voluntary_cost_single;
        }
        Some(Cmd::Simulate {
            mode,
            c,
            p_a,
            n1,
            n2,
            runs,
            seed,
            policy,
            record_detail,
        }) => {
            config.command = "simulate".into();
            config.mode = Some(mode.clone());
            config.c = Some(*c);
            config.p_a = Some(*p_a);
            config.n1 = Some(*n1);
            config.n2 = Some(*n2);
            config.runs = Some(*runs);
            config.seed = *seed;
            config.policy = Some(policy.clone());
            config.record_detail = *record_detail;
        }
        Some(Cmd::Multiway {
            mode,
            spec_file,
            runs,
            seed,
        }) => {
            config.command = "multiway".into();
            config.mode = Some(mode.clone());
            config.spec_file = Some(spec_file.display().to_string());
            if let Some(r) = runs {
                config.runs = Some(*r);
            }
            config.seed = *seed;
        }
    }
    Ok(())
}

fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Argument(format!("missing required parameter: {name}")))
}

fn parse_policy(s: &str) -> Result<Policy, CliError> {
    match s {
        "no-show" | "noshow" | "no_show" => Ok(Policy::NoShowPreferred),
        "smallest-root" | "smallest_root" => Ok(Policy::SmallestRoot),
        "largest-root" | "largest_root" => Ok(Policy::LargestRoot),
        other => Err(CliError::Argument(format!(
            "policy must be no-show, smallest-root, or largest-root, got {other}"
        ))),
    }
}

fn dispatch(config: &RunConfig, tol: &SeriesTolerance) -> Result<Value, CliError> {
    match config.command.as_str() {
        "solve" => {
            let c = CostParam::new(need(config.c, "c")?)?;
            let x = solve_symmetric(c, tol)?;
            let residual = av_core::pivot_benefit_a(&PivotQuery::new(x, x, 0)?, tol)? - c.get();
            Ok(json!({ "x": x, "expected_voters": 2.0 * x, "residual": residual }))
        }
        "dstar" => {
            let c = CostParam::new(need(config.c, "c")?)?;
            Ok(json!({
                "d_star": d_star(c),
                "d_star_empirical": d_star_empirical(c),
                "d_double_star": d_double_star(c.get())?,
            }))
        }
        "cstar" => {
            let d = need(config.d, "d")?;
            Ok(json!({
                "c_star": c_star(d)?,
                "c_star_one_term": c_star_one_term(d)?,
            }))
        }
        "size" => {
            let c = CostParam::new(need(config.c, "c")?)?;
            let s = av_core::n1_star(
                need(config.epsilon, "epsilon")?,
                c,
                need(config.gap, "gap")?,
            )?;
            Ok(serde_json::to_value(s).unwrap())
        }
        "table2" => {
            let rows = reproduce_table2()?;
            Ok(serde_json::to_value(rows).unwrap())
        }
        "welfare" => {
            let params = ElectionParams::new(
                need(config.p_a, "p_a")?,
                CostParam::new(need(config.c, "c")?)?,
                need(config.n1, "n1")?,
                need(config.n2, "n2")?,
            )?;
            let opts = WelfareOptions {
                voluntary_cost: if config.voluntary_cost_single {
                    VoluntaryCostTerm::SingleIntensity
                } else {
                    VoluntaryCostTerm::BothSides
                },
            };
            let r = welfare_report_with(&params, need(config.epsilon, "epsilon")?, opts, tol)?;
            Ok(serde_json::to_value(r).unwrap())
        }
        "simulate" => {
            let summary = run_simulation(config, tol)?.0;
            Ok(serde_json::to_value(summary).unwrap())
        }
        "multiway" => run_multiway(config, tol),
        other => Err(CliError::Argument(format!("unknown command: {other}"))),
    }
}

fn run_simulation(
    config: &RunConfig,
    tol: &SeriesTolerance,
) -> Result<(av_core::SimSummary, Option<Vec<av_core::SimOutcome>>), CliError> {
    let params = ElectionParams::new(
        need(config.p_a, "p_a")?,
        CostParam::new(need(config.c, "c")?)?,
        need(config.n1, "n1")?,
        need(config.n2, "n2")?,
    )?;
    let runs = need(config.runs, "runs")?;
    let mode = config.mode.as_deref().unwrap_or("av");
    match mode {
        "av" => {
            let policy = parse_policy(config.policy.as_deref().unwrap_or("no-show"))?;
            let mut sim = SimConfig::new(params, runs, config.seed, policy)?;
            sim.record_detail = config.record_detail;
            let rep = simulate_av(&sim, tol)?;
            Ok((rep.summary, rep.outcomes))
        }
        "voluntary" => Ok((
            simulate_one_round_voluntary(&params, runs, config.seed, tol)?,
            None,
        )),
        "compulsory" => Ok((
            simulate_one_round_compulsory(&params, runs, config.seed)?,
            None,
        )),
        other => Err(CliError::Argument(format!(
            "mode must be av, voluntary, or compulsory, got {other}"
        ))),
    }
}

fn run_multiway(config: &RunConfig, tol: &SeriesTolerance) -> Result<Value, CliError> {
    let path = config
        .spec_file
        .as_ref()
        .ok_or_else(|| CliError::Argument("missing required parameter: spec_file".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Argument(format!("cannot read spec file {path}: {e}")))?;
    let file: MultiwayFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Argument(format!("invalid multiway spec: {e}")))?;
    let spec = MultiAltSpec::new(file.utilities.clone(), file.vote_intensities.clone())?;
    let mode = config.mode.as_deref().unwrap_or("gain");
    match mode {
        "gain" => {
            let tally_vec = file
                .tally
                .clone()
                .ok_or_else(|| CliError::Argument("gain mode needs a tally".into()))?;
            let focal = file.focal.unwrap_or(0);
            if let Some(grid) = &file.gap_grid {
                // certification grid: shift the top tally across the grid
                let mut rows = Vec::new();
                for &gap in grid {
                    let mut t = tally_vec.clone();
                    let base = t[focal];
                    *t.last_mut().unwrap() = base + gap;
                    let mut sorted = t.clone();
                    sorted.sort();
                    let tally = FirstRoundTally::new(sorted)?;
                    let b = no_show_gain_upper(&spec, &tally, focal, tol)?;
                    rows.push(json!({
                        "gap": gap,
                        "gain": b.gain,
                        "certified": b.gain < file.c,
                        "p_equal_total": b.p_equal_total,
                        "p_low_total": b.p_low_total,
                    }));
                }
                Ok(Value::Array(rows))
            } else {
                let tally = FirstRoundTally::new(tally_vec)?;
                let b = no_show_gain_upper(&spec, &tally, focal, tol)?;
                let mut v = serde_json::to_value(b).unwrap();
                v["certified"] = Value::Bool(b.gain < file.c);
                Ok(v)
            }
        }
        "simulate" => {
            let cfg = MultiwayConfig {
                spec,
                first_round_probs: file.first_round_probs.clone().ok_or_else(|| {
                    CliError::Argument("simulate mode needs first_round_probs".into())
                })?,
                n1: file
                    .n1
                    .ok_or_else(|| CliError::Argument("simulate mode needs n1".into()))?,
                c: file.c,
                runs: config
                    .runs
                    .ok_or_else(|| CliError::Argument("missing required parameter: runs".into()))?,
                seed: config.seed,
            };
            let s = simulate_multiway(&cfg, tol)?;
            Ok(serde_json::to_value(s).unwrap())
        }
        other => Err(CliError::Argument(format!(
            "mode must be gain or simulate, got {other}"
        ))),
    }
}

/// JSON-lines streaming for detailed simulation runs: a config header line,
/// one line per run, then the summary line.
fn stream_simulation(
    config: &RunConfig,
    out: Option<&str>,
    tol: &SeriesTolerance,
) -> Result<(), CliError> {
    let (summary, outcomes) = run_simulation(config, tol)?;
    let mut out = open_output(out)?;
    let mut write = |v: &Value| -> Result<(), CliError> {
        writeln!(out, "{}", serde_json::to_string(v).unwrap())
            .map_err(|e| CliError::Argument(format!("write failed: {e}")))
    };
    write(&json!({ "config": config }))?;
    if let Some(outcomes) = outcomes {
        for o in &outcomes {
            write(&serde_json::to_value(o).unwrap())?;
        }
    }
    write(&json!({ "summary": summary }))?;
    Ok(())
}

fn open_output(out: Option<&str>) -> Result<Box<dyn Write>, CliError> {
    match out {
        None => Ok(Box::new(std::io::stdout().lock())),
        Some(out) => {
            let mut path = PathBuf::from(out);
            // relative outputs land in the directory named by AV_OUT_DIR
            if path.is_relative() {
                if let Ok(dir) = std::env::var("AV_OUT_DIR") {
                    path = PathBuf::from(dir).join(path);
                }
            }
            let f = fs::File::create(&path)
                .map_err(|e| CliError::Argument(format!("cannot create {path:?}: {e}")))?;
            Ok(Box::new(f))
        }
    }
}

fn emit(config: &RunConfig, out: Option<&str>, result: &Value) -> Result<(), CliError> {
    let mut out = open_output(out)?;
    let text = match config.format.as_str() {
        "json" => {
            let envelope = json!({ "config": config, "result": result });
            serde_json::to_string_pretty(&envelope).unwrap() + "\n"
        }
        "csv" => tabular(config, result, ","),
        "tsv" => tabular(config, result, "\t"),
        other => {
            return Err(CliError::Argument(format!(
                "format must be json, csv, or tsv, got {other}"
            )))
        }
    };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Argument(format!("write failed: {e}")))?;
    Ok(())
}

/// Tables keep full precision (17 significant digits) next to a rounded
/// display column; the resolved config rides along as comment lines.
fn tabular(config: &RunConfig, result: &Value, sep: &str) -> String {
    let mut text = format!(
        "# config{}{}\n",
        sep,
        serde_json::to_string(config).unwrap()
    );
    match result {
        Value::Array(rows) if rows.iter().all(|r| r.is_object()) && !rows.is_empty() => {
            let keys: Vec<&String> = match &rows[0] {
                Value::Object(m) => m.keys().collect(),
                _ => unreachable!(),
            };
            text.push_str(&keys_line(&keys, sep));
            for row in rows {
                if let Value::Object(m) = row {
                    let cells: Vec<String> = keys.iter().map(|k| cell(&m[*k])).collect();
                    text.push_str(&cells.join(sep));
                    text.push('\n');
                }
            }
        }
        Value::Object(m) => {
            text.push_str(&format!("field{sep}value{sep}display\n"));
            for (k, v) in m {
                text.push_str(&format!("{k}{sep}{}{sep}{}\n", cell(v), display_cell(v)));
            }
        }
        other => {
            text.push_str(&format!("value\n{}\n", cell(other)));
        }
    }
    text
}

fn keys_line(keys: &[&String], sep: &str) -> String {
    let mut s = keys
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(sep);
    s.push('\n');
    s
}

fn cell(v: &Value) -> String {
    match v {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    format!("{f:.16e}")
                } else {
                    n.to_string()
                }
            } else {
                n.to_string()
            }
        }
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        other => serde_json::to_string(other).unwrap(),
    }
}

fn display_cell(v: &Value) -> String {
    match v {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    return format!("{f:.6}");
                }
            }
            n.to_string()
        }
        other => cell(other),
    }
}

/// Exposed for the help-reflection test: every argument must carry help text.
#[allow(dead_code)]
fn command_for_reflection() -> clap::Command {
    Cli::command()
}
