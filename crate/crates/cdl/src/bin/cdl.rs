//! Command-line front end: instance generation, dynamics execution,
//! per-covering analysis and reproducible experiment batches.
//!
//! Exit codes: 0 on success, 1 on usage or I/O errors, 2 when a
//! theorem-grade inequality fails against an exact optimum (an outcome that
//! signals an implementation bug, not a property of the instance), and 3
//! when a scripted move is rejected in strict mode.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cdl::analysis::{
    check_lemma_suite, compute_opt, heuristic_opt, theorem1_ratio_curve, AnalysisError,
    CoveringReport, OptReference, DEFAULT_OPT_BUDGET,
};
use cdl::dynamics::{
    run_dynamics, validate_fairness, DynamicsError, FairnessSpec, Mode, MoveTrace, SchedulePolicy,
};
use cdl::files::{
    load_game, load_schedule, load_trace, save_game, save_schedule, save_trace, GameFile,
    LoadedGame, ScheduleFile, TraceMeta,
};
use cdl::game::StrategyProfile;
use cdl::generator::{random_game, random_profile, RandomGameSpec};
use cdl::lowerbound::{
    build_algorithm1_schedule, build_gprime, corollary_params, gprime_opt, ratio_trajectory,
    verify_blocking_claims, LowerBoundParams,
};
use cdl::rng::Rng;

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_THEOREM_VIOLATION: i32 = 2;
const EXIT_SCRIPT_ILLEGAL: i32 = 3;

#[derive(Parser)]
#[command(
    name = "cdl",
    version,
    about = "Congestion dynamics lab: generate linear congestion games, run fair best-response dynamics, and machine-check the per-covering inequalities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a game instance (and, for scripted kinds, its schedule).
    #[command(subcommand)]
    Gen(GenKind),
    /// Run best-response dynamics on a game and record the trace.
    Run(RunArgs),
    /// Check the per-covering inequalities and ratio curve of a trace.
    Analyze(AnalyzeArgs),
    /// Execute a batch of seeded experiments described by a config file.
    Experiment(ExperimentArgs),
}

#[derive(Subcommand)]
enum GenKind {
    /// Seeded random instance.
    Random(GenRandomArgs),
    /// Leveled blocking instance with its scripted run.
    LowerboundGprime(GenLowerboundArgs),
    /// Two-level liveness-focused instance (beta near sqrt of the target
    /// player count) with its scripted run.
    Corollary(GenCorollaryArgs),
}

#[derive(Args)]
struct GenRandomArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    max_strategies: usize,
    #[arg(long, default_value_t = 3)]
    max_strategy_size: usize,
    #[arg(long, default_value_t = 2)]
    coeff_max: u64,
    #[arg(long)]
    symmetric: bool,
    /// Force identity delays f(x) = x.
    #[arg(long)]
    identity: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenLowerboundArgs {
    #[arg(long)]
    beta: u64,
    #[arg(long)]
    levels: u64,
    /// Main resources per level; defaults to the smallest feasible value.
    #[arg(long)]
    m: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    schedule_out: PathBuf,
}

#[derive(Args)]
struct GenCorollaryArgs {
    #[arg(long)]
    n_target: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    schedule_out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    RoundRobin,
    RandomFair,
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    Permissive,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Strict => Mode::Strict,
            ModeArg::Permissive => Mode::Permissive,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long, value_enum)]
    policy: PolicyKind,
    /// Round-robin order as comma-separated player ids (default 0..n).
    #[arg(long)]
    order: Option<String>,
    /// Covering length T (random-fair; scripted uses the schedule file).
    #[arg(long)]
    t: Option<usize>,
    /// Per-player move bound beta (random-fair; also used for validation).
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Schedule file for the scripted policy.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    coverings: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Strict)]
    mode: ModeArg,
    /// Initial profile as comma-separated strategy indices (default all 0;
    /// scripted runs default to the schedule file's initial state).
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Covering length; defaults to the trace sidecar's value.
    #[arg(long)]
    t: Option<usize>,
    /// Move bound; defaults to the trace sidecar's value.
    #[arg(long)]
    beta: Option<usize>,
    /// Exhaustive optimum budget; default from CDL_BUDGET or 2*10^7.
    #[arg(long)]
    opt_budget: Option<u64>,
    /// Fall back to best-response-descent bound when the budget is exceeded
    /// (downgrades every verdict to advisory).
    #[arg(long)]
    heuristic_opt: bool,
    #[arg(long, default_value_t = 0)]
    opt_seed: u64,
    /// Externally known optimum upper bound; only replaces the ratio
    /// denominator, verdicts still use the best profile found.
    #[arg(long)]
    opt_bound: Option<u64>,
    /// Flag the first covering with ratio <= factor * beta.
    #[arg(long, default_value_t = 4)]
    ratio_factor: u64,
    /// Per-covering report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify_error(&err)
        }
    };
    std::process::exit(code);
}

fn classify_error(err: &anyhow::Error) -> i32 {
    if let Some(dyn_err) = err.downcast_ref::<DynamicsError>() {
        match dyn_err {
            DynamicsError::IllegalScriptedMove { .. }
            | DynamicsError::IndifferentInStrictMode { .. } => return EXIT_SCRIPT_ILLEGAL,
            _ => {}
        }
    }
    EXIT_USAGE
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen(kind) => cmd_gen(kind),
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .with_context(|| format!("bad index {part:?}"))
        })
        .collect()
}

fn meta_object(pairs: &[(&str, serde_json::Value)]) -> serde_json::Map<String, serde_json::Value> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

// ---------------------------------------------------------------------------
// gen

fn cmd_gen(kind: GenKind) -> Result<i32> {
    match kind {
        GenKind::Random(args) => {
            let spec = RandomGameSpec {
                n: args.n,
                m: args.m,
                max_strategies: args.max_strategies,
                max_strategy_size: args.max_strategy_size,
                coeff_max: args.coeff_max,
                symmetric: args.symmetric,
                identity: args.identity,
            };
            let game = random_game(&spec, args.seed);
            let meta = meta_object(&[
                ("kind", "random".into()),
                ("seed", args.seed.into()),
                ("coeff_max", args.coeff_max.into()),
            ]);
            save_game(&args.out, &GameFile::from_game(&game, meta))?;
            println!(
                "wrote {} (n={}, m={}, symmetric={})",
                args.out.display(),
                game.n(),
                game.resource_count(),
                game.is_symmetric()
            );
            Ok(EXIT_OK)
        }
        GenKind::LowerboundGprime(args) => {
            let m = match args.m {
                Some(m) => m,
                None => LowerBoundParams::smallest_m(args.beta, args.levels)?,
            };
            let params = LowerBoundParams::new(args.beta, args.levels, m)?;
            gen_lowerbound(&params, &args.out, &args.schedule_out, "lowerbound-gprime")
        }
        GenKind::Corollary(args) => {
            let params = corollary_params(args.n_target)?;
            gen_lowerbound(&params, &args.out, &args.schedule_out, "corollary")
        }
    }
}

fn gen_lowerbound(
    params: &LowerBoundParams,
    out: &Path,
    schedule_out: &Path,
    kind: &str,
) -> Result<i32> {
    let gp = build_gprime(params)?;
    let schedule = build_algorithm1_schedule(&gp.layout);
    let opt = gprime_opt(&gp);
    let meta = meta_object(&[
        ("kind", kind.into()),
        ("beta", params.beta.into()),
        ("levels", params.levels.into()),
        ("m", params.m.into()),
        (
            "f",
            (0..=params.levels)
                .map(|i| params.f(i))
                .collect::<Vec<_>>()
                .into(),
        ),
        ("opt", opt.value().into()),
        ("opt_exact", opt.is_exact().into()),
    ]);
    save_game(out, &GameFile::from_game(&gp.game, meta))?;
    let schedule_file = ScheduleFile {
        initial: gp.initial.choices().to_vec(),
        meta: meta_object(&[
            ("kind", kind.into()),
            ("beta", params.beta.into()),
            ("run_length", (schedule.len() as u64).into()),
        ]),
        moves: schedule,
        t: params.run_length() as usize,
    };
    save_schedule(schedule_out, &schedule_file)?;
    println!(
        "wrote {} (n={}, m'={}) and {} ({} moves, one covering)",
        out.display(),
        gp.game.n(),
        gp.game.resource_count(),
        schedule_out.display(),
        schedule_file.moves.len()
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// run

fn cmd_run(args: RunArgs) -> Result<i32> {
    let loaded = load_game(&args.game)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let game = &loaded.game;
    let n = game.n();

    let (policy, policy_json, initial_default, coverings) = match args.policy {
        PolicyKind::RoundRobin => {
            let order = match &args.order {
                Some(text) => parse_index_list(text)?,
                None => (0..n).collect(),
            };
            let json = serde_json::json!({"kind": "round-robin", "order": order});
            (
                SchedulePolicy::RoundRobin { order },
                json,
                None,
                args.coverings,
            )
        }
        PolicyKind::RandomFair => {
            let t = args.t.ok_or_else(|| anyhow!("--t is required for random-fair"))?;
            let beta = args
                .beta
                .ok_or_else(|| anyhow!("--beta is required for random-fair"))?;
            let seed = args.seed.unwrap_or(0);
            let json = serde_json::json!({"kind": "random-fair", "t": t, "beta": beta});
            (
                SchedulePolicy::RandomFair { t, beta, seed },
                json,
                None,
                args.coverings,
            )
        }
        PolicyKind::Scripted => {
            let path = args
                .schedule
                .as_ref()
                .ok_or_else(|| anyhow!("--schedule is required for scripted runs"))?;
            let schedule = load_schedule(path)?;
            let json = serde_json::json!({
                "kind": "scripted",
                "schedule": path.display().to_string(),
                "t": schedule.t,
            });
            (
                SchedulePolicy::Scripted {
                    moves: schedule.moves.clone(),
                    t: Some(schedule.t),
                },
                json,
                Some(schedule.initial.clone()),
                1,
            )
        }
    };

    let initial = match &args.initial {
        Some(text) => StrategyProfile::new(parse_index_list(text)?),
        None => match initial_default {
            Some(choices) => StrategyProfile::new(choices),
            None => StrategyProfile::uniform(n, 0),
        },
    };

    let mode: Mode = args.mode.into();
    let trace = run_dynamics(game, &initial, &policy, coverings, mode)?;

    // Validate against the policy's own fairness parameters (overridable).
    let mut spec = policy.fairness_spec(n);
    if let Some(beta) = args.beta {
        spec.beta = beta;
    }
    let report = validate_fairness(&trace, n, &spec)?;
    let meta = TraceMeta {
        beta: spec.beta,
        game_hash: loaded.hash.clone(),
        initial: trace.initial.choices().to_vec(),
        mode,
        policy: policy_json,
        seed: args.seed,
        t: trace.t,
    };
    save_trace(&args.out, &trace, &meta)?;
    let final_cost = game.social_cost(&trace.final_state())?;
    println!(
        "wrote {} ({} moves, {} coverings, final social cost {final_cost})",
        args.out.display(),
        trace.len(),
        trace.num_coverings()
    );
    if report.is_valid() {
        println!(
            "fairness: valid (T={}, beta={}) across {} coverings",
            spec.t, spec.beta, report.coverings
        );
    } else {
        println!("fairness: VIOLATIONS in {} coverings", report.violations.len());
        for v in &report.violations {
            println!(
                "  covering {}: silent players {:?}, over-beta {:?}",
                v.covering, v.silent_players, v.over_beta
            );
        }
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// analyze

fn ratio_str(r: &Option<cdl::analysis::ExactRatio>) -> String {
    match r {
        Some(r) => format!("{}/{}", r.numer(), r.denom()),
        None => String::new(),
    }
}

fn opt_budget(cli_value: Option<u64>) -> u64 {
    cli_value
        .or_else(|| {
            std::env::var("CDL_BUDGET")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(DEFAULT_OPT_BUDGET)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<i32> {
    let loaded = load_game(&args.game)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let game = &loaded.game;
    let (trace, meta) = load_trace(&args.trace, game, &loaded.hash)?;
    let spec = FairnessSpec::new(args.t.unwrap_or(meta.t), args.beta.unwrap_or(meta.beta));

    let budget = opt_budget(args.opt_budget);
    let opt = match compute_opt(game, budget) {
        Ok(cert) => OptReference::Exact(cert),
        Err(AnalysisError::BudgetExceeded { space, budget }) => {
            if !args.heuristic_opt && args.opt_bound.is_none() {
                bail!(
                    "profile space {space} exceeds budget {budget}; pass --heuristic-opt (or raise --opt-budget / CDL_BUDGET)"
                );
            }
            eprintln!(
                "note: profile space {space} exceeds budget {budget}; using best-response-descent bound, verdicts are advisory"
            );
            OptReference::Bound(heuristic_opt(game, args.opt_seed))
        }
        Err(other) => return Err(other.into()),
    };
    let reports = check_lemma_suite(game, &trace, &opt, &spec)?;
    let curve = theorem1_ratio_curve(game, &trace, &opt, &spec, args.ratio_factor)?;

    let ratio_denominator = args.opt_bound.unwrap_or_else(|| opt.value());
    println!(
        "optimum {}: {} (profile cost {})",
        if opt.is_exact() {
            "certified"
        } else {
            "upper bound only"
        },
        ratio_denominator,
        opt.value()
    );
    let mut failures = 0usize;
    for r in &reports {
        let verdicts = r.verdicts();
        let failed: Vec<&str> = verdicts
            .iter()
            .filter(|v| !v.pass)
            .map(|v| v.name)
            .collect();
        failures += failed.len() + usize::from(!r.sandwich_ok);
        println!(
            "covering {}: C {} -> {}, rho {}, H {}, ratio {}{}",
            r.covering,
            r.c_start,
            r.c_end,
            r.rho,
            r.h,
            ratio_str(&r.ratio_end),
            if failed.is_empty() && r.sandwich_ok {
                ", all inequalities hold".to_string()
            } else {
                format!(", FAILED: {failed:?}")
            }
        );
    }
    if let Some(first) = curve.first_within_factor {
        println!(
            "first covering with ratio <= {}*beta: {first}",
            args.ratio_factor
        );
    }

    // Blocking instances carry their parameters in the game file; check the
    // cost floor and the blocking claims along the replay as well.
    if let Some(floor_failures) = analyze_lowerbound(&loaded, &trace)? {
        failures += floor_failures;
    }

    if let Some(out) = &args.out {
        write_report_csv(out, &reports)?;
        println!("wrote {}", out.display());
    }

    if failures > 0 {
        if opt.is_exact() {
            eprintln!("{failures} theorem-grade inequality failure(s): this indicates an implementation bug");
            return Ok(EXIT_THEOREM_VIOLATION);
        }
        eprintln!("{failures} advisory inequality failure(s) against a non-certified optimum");
    }
    Ok(EXIT_OK)
}

/// When the game file's metadata identifies a generated blocking instance,
/// rebuild it, cross-check the game, and verify the trajectory floor and
/// blocking claims along the trace. Returns the number of failed checks,
/// or `None` when the game is not a blocking instance.
fn analyze_lowerbound(loaded: &LoadedGame, trace: &MoveTrace) -> Result<Option<usize>> {
    let meta = &loaded.meta;
    let kind = meta.get("kind").and_then(|v| v.as_str());
    if !matches!(kind, Some("lowerbound-gprime") | Some("corollary")) {
        return Ok(None);
    }
    let param = |name: &str| -> Result<u64> {
        meta.get(name)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| anyhow!("blocking-instance metadata lacks {name}"))
    };
    let params = LowerBoundParams::new(param("beta")?, param("levels")?, param("m")?)?;
    let gp = build_gprime(&params)?;
    if gp.game != loaded.game {
        bail!("game file does not match the blocking instance its metadata describes");
    }
    let mut failures = 0usize;
    let opt = gprime_opt(&gp);
    let floor = ratio_trajectory(&gp, trace, &opt)?;
    println!(
        "cost floor: min ratio {}/{} vs floor {}/{} -> {}",
        floor.min_ratio.numer(),
        floor.min_ratio.denom(),
        floor.floor.numer(),
        floor.floor.denom(),
        if floor.ok { "holds" } else { "VIOLATED" }
    );
    if !floor.ok {
        failures += 1;
    }
    match verify_blocking_claims(&gp, trace) {
        Ok(report) => println!(
            "blocking claims: {} balanced moves, {} deviations and {} blocked strategies checked",
            report.p_moves, report.deviations_checked, report.blocked_s0_checked
        ),
        Err(err) => {
            println!("blocking claims: VIOLATED ({err})");
            failures += 1;
        }
    }
    Ok(Some(failures))
}

fn write_report_csv(path: &Path, reports: &[CoveringReport]) -> Result<()> {
    let mut out = String::new();
    out.push_str("covering,c_start,c_end,phi_start,phi_end,rho,prev_rho,h,gamma,ratio,");
    out.push_str("cost_vs_rho_lhs,cost_vs_rho_rhs,cost_vs_rho_pass,");
    out.push_str("mixing_lhs,mixing_rhs,mixing_pass,");
    out.push_str("rho_vs_h_lhs,rho_vs_h_rhs,rho_vs_h_pass,");
    out.push_str("contraction_lhs,contraction_rhs,contraction_pass,");
    out.push_str("sym_cost_vs_gamma_lhs,sym_cost_vs_gamma_rhs,sym_cost_vs_gamma_pass,");
    out.push_str("sym_contraction_lhs,sym_contraction_rhs,sym_contraction_pass,");
    out.push_str("sandwich_ok,advisory\n");
    let verdict_cols = |v: &cdl::analysis::Verdict| format!("{},{},{}", v.lhs, v.rhs, v.pass);
    let opt_verdict_cols = |v: &Option<cdl::analysis::Verdict>| match v {
        Some(v) => verdict_cols(v),
        None => ",,".to_string(),
    };
    for r in reports {
        let cols = [
            r.covering.to_string(),
            r.c_start.to_string(),
            r.c_end.to_string(),
            r.phi_start.to_string(),
            r.phi_end.to_string(),
            r.rho.to_string(),
            r.prev_rho.map(|v| v.to_string()).unwrap_or_default(),
            r.h.to_string(),
            ratio_str(&r.gamma),
            ratio_str(&r.ratio_end),
            verdict_cols(&r.final_cost_vs_rho),
            verdict_cols(&r.mixing_bound),
            verdict_cols(&r.rho_vs_h),
            opt_verdict_cols(&r.contraction),
            opt_verdict_cols(&r.sym_final_cost_vs_gamma),
            opt_verdict_cols(&r.sym_start_contraction),
            r.sandwich_ok.to_string(),
            r.advisory.to_string(),
        ];
        writeln!(out, "{}", cols.join(","))?;
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment

#[derive(Deserialize)]
struct ExperimentConfig {
    #[serde(default)]
    experiments: Vec<ExperimentSpec>,
}

#[derive(Deserialize)]
struct ExperimentSpec {
    name: String,
    game: GameGenSpec,
    policy: PolicySpec,
    coverings: usize,
    #[serde(default = "default_mode")]
    mode: Mode,
    seeds: SeedSpec,
    #[serde(default)]
    opt_budget: Option<u64>,
    /// Fall back to the heuristic bound when enumeration is over budget.
    #[serde(default)]
    heuristic_opt: bool,
}

fn default_mode() -> Mode {
    Mode::Strict
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum GameGenSpec {
    Random {
        n: usize,
        m: usize,
        #[serde(default = "default_max_strategies")]
        max_strategies: usize,
        #[serde(default = "default_max_strategy_size")]
        max_strategy_size: usize,
        #[serde(default = "default_coeff_max")]
        coeff_max: u64,
        #[serde(default)]
        symmetric: bool,
        #[serde(default)]
        identity: bool,
    },
}

fn default_max_strategies() -> usize {
    3
}
fn default_max_strategy_size() -> usize {
    3
}
fn default_coeff_max() -> u64 {
    2
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum PolicySpec {
    RoundRobin,
    RandomFair { t: usize, beta: usize },
}

#[derive(Deserialize)]
struct SeedSpec {
    base: u64,
    count: u64,
}

struct ExperimentRow {
    seed: u64,
    covering: usize,
    ratio: Option<cdl::analysis::ExactRatio>,
    cost_vs_rho_slack: i128,
    rho_vs_h_slack: i128,
    contraction_ok: Option<bool>,
    sym_ok: Option<bool>,
    all_pass: bool,
}

fn cmd_experiment(args: ExperimentArgs) -> Result<i32> {
    let bytes = std::fs::read(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config: ExperimentConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let mut summary = String::from("experiment,n,t,beta,runs,failures,worst_final_ratio\n");
    let mut exact_violation = false;

    for exp in &config.experiments {
        let mut rows_csv = String::from(
            "seed,covering,n,t,beta,c_end,opt,ratio,cost_vs_rho_slack,rho_vs_h_slack,contraction_ok,sym_ok,all_pass,error\n",
        );
        let mut worst_final: Option<cdl::analysis::ExactRatio> = None;
        let mut failures = 0usize;
        let (n, t, beta) = experiment_shape(exp);
        for i in 0..exp.seeds.count {
            let seed = exp.seeds.base + i;
            match run_experiment_row(exp, seed) {
                Ok((rows, opt_value, c_end, exact)) => {
                    for row in &rows {
                        writeln!(
                            rows_csv,
                            "{},{},{},{},{},{},{},{},{},{},{},{},{},",
                            row.seed,
                            row.covering,
                            n,
                            t,
                            beta,
                            c_end,
                            opt_value,
                            ratio_str(&row.ratio),
                            row.cost_vs_rho_slack,
                            row.rho_vs_h_slack,
                            row.contraction_ok
                                .map(|b| b.to_string())
                                .unwrap_or_default(),
                            row.sym_ok.map(|b| b.to_string()).unwrap_or_default(),
                            row.all_pass
                        )?;
                        if !row.all_pass {
                            failures += 1;
                            if exact {
                                exact_violation = true;
                            }
                        }
                    }
                    if let Some(last) = rows.last() {
                        if let Some(r) = last.ratio {
                            if worst_final.map_or(true, |w| r > w) {
                                worst_final = Some(r);
                            }
                        }
                    }
                }
                Err(err) => {
                    failures += 1;
                    writeln!(
                        rows_csv,
                        "{seed},,,,,,,,,,,,,\"{}\"",
                        err.to_string().replace('"', "'")
                    )?;
                }
            }
        }
        let file = args.out_dir.join(format!("{}.csv", exp.name));
        std::fs::write(&file, rows_csv).with_context(|| format!("writing {}", file.display()))?;
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            exp.name,
            n,
            t,
            beta,
            exp.seeds.count,
            failures,
            worst_final
                .map(|r| format!("{}/{}", r.numer(), r.denom()))
                .unwrap_or_default()
        )?;
    }
    let summary_path = args.out_dir.join("summary.csv");
    std::fs::write(&summary_path, summary)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    println!("wrote {}", summary_path.display());
    Ok(if exact_violation {
        EXIT_THEOREM_VIOLATION
    } else {
        EXIT_OK
    })
}

fn experiment_shape(exp: &ExperimentSpec) -> (usize, usize, usize) {
    let n = match exp.game {
        GameGenSpec::Random { n, .. } => n,
    };
    match exp.policy {
        PolicySpec::RoundRobin => (n, n, 1),
        PolicySpec::RandomFair { t, beta } => (n, t, beta),
    }
}

fn run_experiment_row(
    exp: &ExperimentSpec,
    seed: u64,
) -> Result<(Vec<ExperimentRow>, u64, u64, bool)> {
    // Derive independent streams for the game, the start and the schedule.
    let mut derive = Rng::new(seed);
    let game_seed = derive.next_u64();
    let policy_seed = derive.next_u64();

    let game = match &exp.game {
        GameGenSpec::Random {
            n,
            m,
            max_strategies,
            max_strategy_size,
            coeff_max,
            symmetric,
            identity,
        } => random_game(
            &RandomGameSpec {
                n: *n,
                m: *m,
                max_strategies: *max_strategies,
                max_strategy_size: *max_strategy_size,
                coeff_max: *coeff_max,
                symmetric: *symmetric,
                identity: *identity,
            },
            game_seed,
        ),
    };
    let initial = random_profile(&game, &mut derive);
    let (policy, spec) = match exp.policy {
        PolicySpec::RoundRobin => (
            SchedulePolicy::round_robin(game.n()),
            FairnessSpec::new(game.n(), 1),
        ),
        PolicySpec::RandomFair { t, beta } => (
            SchedulePolicy::RandomFair {
                t,
                beta,
                seed: policy_seed,
            },
            FairnessSpec::new(t, beta),
        ),
    };
    let trace = run_dynamics(&game, &initial, &policy, exp.coverings, exp.mode)?;

    let budget = exp.opt_budget.unwrap_or_else(|| opt_budget(None));
    let opt = match compute_opt(&game, budget) {
        Ok(cert) => OptReference::Exact(cert),
        Err(AnalysisError::BudgetExceeded { .. }) if exp.heuristic_opt => {
            OptReference::Bound(heuristic_opt(&game, policy_seed))
        }
        Err(err) => return Err(err.into()),
    };
    let reports = check_lemma_suite(&game, &trace, &opt, &spec)?;
    let c_end = reports.last().map(|r| r.c_end).unwrap_or_default();
    let rows = reports
        .iter()
        .map(|r| ExperimentRow {
            seed,
            covering: r.covering,
            ratio: r.ratio_end,
            cost_vs_rho_slack: r.final_cost_vs_rho.rhs - r.final_cost_vs_rho.lhs,
            rho_vs_h_slack: r.rho_vs_h.rhs - r.rho_vs_h.lhs,
            contraction_ok: r.contraction.as_ref().map(|v| v.pass),
            sym_ok: r
                .sym_final_cost_vs_gamma
                .as_ref()
                .map(|v| v.pass && r.sym_start_contraction.as_ref().is_some_and(|w| w.pass)),
            all_pass: r.all_pass(),
        })
        .collect();
    Ok((rows, opt.value(), c_end, opt.is_exact()))
}
