//! Command-line front end: allocation queries, parameter sweeps, CSP
//! scenario comparisons, coefficient dumps, and the Monte-Carlo
//! verification suite.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or
//! validation failure, 3 coefficient singularity.

mod config;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use couple_merton::allocation::{
    allocate, allocate_fixed_y, allocate_with_family, AllocationResult, HFamily,
};
use couple_merton::mc_verify::{report_to_csv, verification_report};
use couple_merton::model::{simulate_antithetic, validate, ProblemSpec, Severity};
use couple_merton::num::fmt_g17;
use couple_merton::riccati::{a1_closed, residual_at, solve_system_partial, DEFAULT_GRID};
use couple_merton::ModelError;

use config::RunConfig;

const DEFAULT_CONFIG: &str = include_str!("../../../config/default.cfg");

const USAGE: &str = "couple-merton: optimal wealth split and verification for a shared portfolio

USAGE:
    couple-merton <COMMAND> [FLAGS]

COMMANDS:
    allocate       print the optimal initial split, CSP, and diagnostics
    sweep          sweep one variable and emit per-point fractions as CSV
    csp-compare    CSP across eight labeled discount/risk-aversion scenarios
    verify         run the Monte-Carlo verification suite, emit a CSV report
    riccati        dump one agent's affine coefficients A1, A2, A3 as CSV

GLOBAL FLAGS:
    --config <path>   configuration file (flat key = value; built-in default)
    --out <path>      write CSV output to a file instead of stdout
    --seed <u64>      override the configured random seed

COMMAND FLAGS:
    allocate:     --x <f64>            total endowment (overrides fixed_y)
    sweep:        --var <name>         one of x, theta0, gammaN, rhoN
                  --from <f64> --to <f64> --steps <n>
    csp-compare:  --scenario <rho|gamma>
    verify:       --paths <n>          override the configured path count
    riccati:      --agent <n>          1-based agent index

EXIT CODES:
    0 success, 1 verification failure, 2 config/validation, 3 singularity
";

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        let code = match err {
            ModelError::SingularityDetected { .. } => 3,
            _ => 2,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

#[derive(Default)]
struct Args {
    command: String,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    x: Option<f64>,
    var: Option<String>,
    from: Option<f64>,
    to: Option<f64>,
    steps: Option<usize>,
    scenario: Option<String>,
    paths: Option<usize>,
    agent: Option<usize>,
}

fn parse_args(argv: &[String]) -> Result<Args, CliError> {
    let mut args = Args {
        command: argv[0].clone(),
        ..Args::default()
    };
    let mut it = argv[1..].iter();
    while let Some(flag) = it.next() {
        let mut value = || {
            it.next()
                .ok_or_else(|| CliError::config(format!("flag {flag} needs a value")))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value()?)),
            "--out" => args.out = Some(PathBuf::from(value()?)),
            "--seed" => args.seed = Some(parse_flag(flag, value()?)?),
            "--x" => args.x = Some(parse_flag(flag, value()?)?),
            "--var" => args.var = Some(value()?.clone()),
            "--from" => args.from = Some(parse_flag(flag, value()?)?),
            "--to" => args.to = Some(parse_flag(flag, value()?)?),
            "--steps" => args.steps = Some(parse_flag(flag, value()?)?),
            "--scenario" => args.scenario = Some(value()?.clone()),
            "--paths" => args.paths = Some(parse_flag(flag, value()?)?),
            "--agent" => args.agent = Some(parse_flag(flag, value()?)?),
            other => return Err(CliError::config(format!("unknown flag: {other}"))),
        }
    }
    Ok(args)
}

fn parse_flag<T: std::str::FromStr>(flag: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::config(format!("flag {flag}: cannot parse `{raw}`")))
}

fn load_config(args: &Args) -> Result<RunConfig, CliError> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut cfg = RunConfig::parse(&text).map_err(CliError::config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Validates the spec; errors are fatal, warnings go to stderr.
fn check_spec(spec: &ProblemSpec) -> Result<(), CliError> {
    let violations = validate(spec);
    let mut fatal = Vec::new();
    for v in violations {
        match v.severity {
            Severity::Warning => eprintln!("warning: {}", v.message),
            Severity::Error => fatal.push(v.message),
        }
    }
    if fatal.is_empty() {
        Ok(())
    } else {
        Err(CliError::config(fatal.join("; ")))
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Resolves the allocation entry point: an explicit --x overrides the
/// configured fixed marginal-utility level.
fn resolve_allocation(
    cfg: &RunConfig,
    x_override: Option<f64>,
) -> Result<(ProblemSpec, AllocationResult), CliError> {
    let mut spec = cfg.to_problem_spec();
    if let Some(x) = x_override {
        spec.total_wealth_x = x;
    }
    check_spec(&spec)?;
    let alloc = match (x_override, cfg.fixed_y) {
        (None, Some(y)) => allocate_fixed_y(&spec, y)?,
        _ => allocate(&spec)?,
    };
    Ok((spec, alloc))
}

fn cmd_allocate(args: &Args) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let (spec, alloc) = resolve_allocation(&cfg, args.x)?;
    let x: f64 = alloc.x_alloc.iter().sum();

    println!("total wealth x   = {}", fmt_g17(x));
    println!("marginal level y = {}", fmt_g17(alloc.y));
    let n_consumers = spec.consumers.len();
    for (i, xi) in alloc.x_alloc.iter().enumerate() {
        if i < n_consumers {
            println!("x{} (consumer)    = {}", i + 1, fmt_g17(*xi));
        } else {
            println!("x_terminal       = {}", fmt_g17(*xi));
        }
    }
    println!("csp              = {}", fmt_g17(alloc.csp));
    println!("residual         = {}", fmt_g17(alloc.residual));

    if args.out.is_some() {
        let mut csv = String::from("y");
        for i in 1..=n_consumers {
            write!(csv, ",x{i}").unwrap();
        }
        csv.push_str(",x_terminal,csp,residual\n");
        csv.push_str(&fmt_g17(alloc.y));
        for xi in &alloc.x_alloc {
            write!(csv, ",{}", fmt_g17(*xi)).unwrap();
        }
        writeln!(csv, ",{},{}", fmt_g17(alloc.csp), fmt_g17(alloc.residual)).unwrap();
        emit(&args.out, &csv)?;
    }
    Ok(())
}

enum SweepVar {
    TotalWealth,
    Theta0,
    Gamma(usize),
    Rho(usize),
}

fn parse_var(raw: &str, n_agents: usize) -> Result<SweepVar, CliError> {
    let var = match raw {
        "x" => SweepVar::TotalWealth,
        "theta0" => SweepVar::Theta0,
        other => {
            let (kind, idx) = if let Some(rest) = other.strip_prefix("gamma") {
                ("gamma", rest)
            } else if let Some(rest) = other.strip_prefix("rho") {
                ("rho", rest)
            } else {
                return Err(CliError::config(format!("unknown sweep variable: {other}")));
            };
            let idx: usize = idx
                .trim_start_matches('.')
                .parse()
                .map_err(|_| CliError::config(format!("bad agent index in --var {other}")))?;
            if idx == 0 || idx > n_agents {
                return Err(CliError::config(format!("--var {other}: no such agent")));
            }
            if kind == "gamma" {
                SweepVar::Gamma(idx - 1)
            } else {
                SweepVar::Rho(idx - 1)
            }
        }
    };
    Ok(var)
}

fn cmd_sweep(args: &Args) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let var_name = args
        .var
        .clone()
        .ok_or_else(|| CliError::config("sweep needs --var"))?;
    let from = args
        .from
        .ok_or_else(|| CliError::config("sweep needs --from"))?;
    let to = args
        .to
        .ok_or_else(|| CliError::config("sweep needs --to"))?;
    let steps = args
        .steps
        .ok_or_else(|| CliError::config("sweep needs --steps"))?;
    if steps < 2 {
        return Err(CliError::config("--steps must be at least 2"));
    }
    if from >= to {
        return Err(CliError::config("--from must be below --to"));
    }
    let var = parse_var(&var_name, cfg.agents.len())?;

    let base_spec = cfg.to_problem_spec();
    let n_consumers = base_spec.consumers.len();
    // The x sweep leaves the coefficient layer untouched; reuse one family.
    let shared_family = match var {
        SweepVar::TotalWealth => {
            check_spec(&base_spec)?;
            Some(HFamily::build(&base_spec, DEFAULT_GRID)?)
        }
        _ => None,
    };

    let mut csv = String::from("var");
    for i in 1..=n_consumers {
        write!(csv, ",x{i}_frac").unwrap();
    }
    csv.push_str(",x_terminal_frac,csp,y\n");

    for k in 0..steps {
        let v = from + (to - from) * k as f64 / (steps - 1) as f64;
        let mut spec = base_spec.clone();
        match var {
            SweepVar::TotalWealth => spec.total_wealth_x = v,
            SweepVar::Theta0 => spec.market.theta0 = v,
            SweepVar::Gamma(i) | SweepVar::Rho(i) => {
                let mut point_cfg = cfg.clone();
                match var {
                    SweepVar::Gamma(_) => point_cfg.agents[i].gamma = v,
                    SweepVar::Rho(_) => point_cfg.agents[i].rho = v,
                    _ => unreachable!(),
                }
                spec = point_cfg.to_problem_spec();
            }
        }
        check_spec(&spec)?;
        let alloc = match (&shared_family, cfg.fixed_y) {
            (Some(family), _) => allocate_with_family(&spec, family)?,
            (None, Some(y)) => allocate_fixed_y(&spec, y)?,
            (None, None) => allocate(&spec)?,
        };
        let x: f64 = alloc.x_alloc.iter().sum();
        write!(csv, "{}", fmt_g17(v)).unwrap();
        for xi in &alloc.x_alloc {
            write!(csv, ",{}", fmt_g17(if x > 0.0 { xi / x } else { 0.0 })).unwrap();
        }
        writeln!(csv, ",{},{}", fmt_g17(alloc.csp), fmt_g17(alloc.y)).unwrap();
    }

    emit(&args.out, &csv)
}

fn cmd_csp_compare(args: &Args) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let scenario = args
        .scenario
        .clone()
        .ok_or_else(|| CliError::config("csp-compare needs --scenario <rho|gamma>"))?;
    // Scenario grids: digit d_i in {1, 2} of the label picks agent i's
    // parameter level.
    let (gammas, rhos): ([f64; 2], [f64; 2]) = match scenario.as_str() {
        "rho" => ([-3.0, -3.0], [0.0052, 0.3]),
        "gamma" => ([-3.0, -9.0], [0.0052, 0.0052]),
        other => return Err(CliError::config(format!("unknown scenario set: {other}"))),
    };

    let mut csv = String::from("label,gamma1,gamma2,gamma3,rho1,rho2,rho3,csp\n");
    for label in ["111", "121", "122", "112", "211", "212", "221", "222"] {
        let picks: Vec<usize> = label
            .chars()
            .map(|c| c.to_digit(10).unwrap() as usize - 1)
            .collect();
        let g: Vec<f64> = picks.iter().map(|&d| gammas[d]).collect();
        let r: Vec<f64> = picks.iter().map(|&d| rhos[d]).collect();
        let spec = ProblemSpec {
            market: cfg.market,
            consumers: vec![
                couple_merton::model::AgentSpec::consumer(g[0], r[0]),
                couple_merton::model::AgentSpec::consumer(g[1], r[1]),
            ],
            terminal: couple_merton::model::AgentSpec::terminal(g[2], r[2]),
            total_wealth_x: cfg.total_wealth_x,
        };
        check_spec(&spec)?;
        let alloc = match cfg.fixed_y {
            Some(y) => allocate_fixed_y(&spec, y)?,
            None => allocate(&spec)?,
        };
        writeln!(
            csv,
            "{label},{},{},{},{},{},{},{}",
            fmt_g17(g[0]),
            fmt_g17(g[1]),
            fmt_g17(g[2]),
            fmt_g17(r[0]),
            fmt_g17(r[1]),
            fmt_g17(r[2]),
            fmt_g17(alloc.csp)
        )
        .unwrap();
    }
    emit(&args.out, &csv)
}

fn cmd_verify(args: &Args) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let spec = cfg.to_problem_spec();
    check_spec(&spec)?;
    let n_paths = args.paths.unwrap_or(cfg.n_paths);
    if n_paths == 0 || n_paths % 2 != 0 {
        return Err(CliError::config("path count must be positive and even"));
    }
    let ensemble = simulate_antithetic(&spec.market, n_paths, cfg.n_steps, cfg.seed)?;
    let rows = verification_report(&spec, cfg.fixed_y, &ensemble, DEFAULT_GRID)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    emit(&args.out, &report_to_csv(&rows))?;
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", rows.len());
        return Err(CliError {
            code: 1,
            message: String::new(),
        });
    }
    Ok(())
}

fn cmd_riccati(args: &Args) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let idx = args
        .agent
        .ok_or_else(|| CliError::config("riccati needs --agent <n>"))?;
    if idx == 0 || idx > cfg.agents.len() {
        return Err(CliError::config(format!("--agent {idx}: no such agent")));
    }
    let agent = cfg.agents[idx - 1];
    let spec = cfg.to_problem_spec();
    check_spec(&spec)?;

    let (coeffs, blowup) =
        solve_system_partial(agent.gamma, &cfg.market, cfg.market.horizon_t, DEFAULT_GRID)?;
    let mut csv = String::from("s,A1,A2,A3,A1_closed,residual\n");
    for k in 0..coeffs.grid.len() {
        let closed = match a1_closed(agent.gamma, &cfg.market, coeffs.grid[k]) {
            Ok(v) => fmt_g17(v),
            Err(_) => String::new(),
        };
        let res = match residual_at(&coeffs, &cfg.market, k) {
            Some(v) => fmt_g17(v),
            None => String::new(),
        };
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            fmt_g17(coeffs.grid[k]),
            fmt_g17(coeffs.a1[k]),
            fmt_g17(coeffs.a2[k]),
            fmt_g17(coeffs.a3[k]),
            closed,
            res
        )
        .unwrap();
    }
    emit(&args.out, &csv)?;
    if let Some(t) = blowup {
        eprintln!("coefficient A1 diverges near s = {t:.6}; dump truncated");
        return Err(CliError {
            code: 3,
            message: String::new(),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() || argv[0] == "--help" || argv[0] == "-h" || argv[0] == "help" {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.message);
            return ExitCode::from(e.code);
        }
    };
    let result = match args.command.as_str() {
        "allocate" => cmd_allocate(&args),
        "sweep" => cmd_sweep(&args),
        "csp-compare" => cmd_csp_compare(&args),
        "verify" => cmd_verify(&args),
        "riccati" => cmd_riccati(&args),
        other => {
            eprintln!("error: unknown command: {other}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}
