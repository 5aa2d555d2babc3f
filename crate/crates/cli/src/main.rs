//! `cogcoop`: batch experiment runner.
//!
//! Every subcommand reads one system configuration, writes its artifacts to
//! the output directory and records a `manifest.json` describing the run.
//! Exit codes: 2 bad configuration, 3 infeasible instance, 4 no convergence,
//! 5 numeric failure.

mod artifacts;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cogcoop::admm::{admm_solve, AdmmConfig, WarmStart};
use cogcoop::io::{self, PolicyFile};
use cogcoop::model::{self, ConditionalPolicy, SystemParams};
use cogcoop::optimizer::{self, FwOptions, Method, Objective, SolveOptions, SolveStatus};
use cogcoop::regions::{self, quarter_circle_directions};
use cogcoop::sensing::{self, Search, SensingModel};
use cogcoop::sim::{self, Arrival, SimConfig};
use cogcoop::{CoopError, Parallelism};

use artifacts::{fmt_opt, OutDir};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "cogcoop",
    version,
    about = "Cooperation policies for cognitive-radio channels"
)]
struct Cli {
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true, env = "COGCOOP_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Run parallel fan-out sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
struct Common {
    /// System configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the configured PU arrival rate; `scan` also accepts
    /// `start:stop:step` with both ends inclusive.
    #[arg(long, value_parser = parse_lambda)]
    lambda_p: Option<LambdaSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
struct LambdaSpec(Vec<f64>);

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ObjectiveArg {
    /// Sum of SU rates.
    Sum,
    /// Sum of log rates (proportional fairness).
    Log,
}

impl ObjectiveArg {
    fn build(self, num_sus: usize) -> Objective {
        match self {
            ObjectiveArg::Sum => Objective::sum_rate(num_sus),
            ObjectiveArg::Log => Objective::log_utility(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Auto,
    FrankWolfe,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SearchArg {
    Grid,
    Ternary,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ArrivalArg {
    Bernoulli,
    Poisson,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScanPolicyArg {
    Opt0,
    NoCooperation,
}

#[derive(Debug, Args, Serialize)]
struct SensingArgs {
    /// Detection probability P_D; perfect sensing when both are omitted.
    #[arg(long)]
    p_detect: Option<f64>,
    /// False-alarm probability P_F.
    #[arg(long)]
    p_false_alarm: Option<f64>,
}

impl SensingArgs {
    fn model(&self) -> Result<Option<SensingModel>> {
        if self.p_detect.is_none() && self.p_false_alarm.is_none() {
            return Ok(None);
        }
        Ok(Some(SensingModel::new(
            self.p_detect.unwrap_or(1.0),
            self.p_false_alarm.unwrap_or(0.0),
        )?))
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "name", rename_all = "lowercase")]
enum Command {
    /// Check a configuration and list every violated assumption.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Compute the stability threshold λ̂ and its LP certificate.
    Stability {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the perfect-sensing problem centrally.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "sum")]
        objective: ObjectiveArg,
        #[arg(long, value_enum, default_value = "auto")]
        method: MethodArg,
    },
    /// Maximize throughput with exogenous SU arrivals.
    Throughput {
        #[command(flatten)]
        common: Common,
        /// Comma-separated SU arrival rates, one per SU.
        #[arg(long, value_delimiter = ',', required = true)]
        arrivals: Vec<f64>,
        #[arg(long, value_enum, default_value = "sum")]
        objective: ObjectiveArg,
    },
    /// Solve with the distributed ADMM scheme.
    Admm {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "sum")]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        residual_tol: f64,
        /// Policy file (TOML, as written by a previous `admm` run) to warm start from.
        #[arg(long)]
        warm: Option<PathBuf>,
    },
    /// Solve the imperfect-sensing problem by a search over q_b.
    Sensing {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        p_detect: f64,
        #[arg(long, default_value_t = 0.0)]
        p_false_alarm: f64,
        #[arg(long, value_enum, default_value = "sum")]
        objective: ObjectiveArg,
        #[arg(long, value_enum, default_value = "grid")]
        search: SearchArg,
        /// Grid points for `--search grid`.
        #[arg(long, default_value_t = sensing::DEFAULT_GRID_POINTS)]
        points: usize,
        /// Bracket width for `--search ternary`.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Simulate a policy slot by slot.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Joint policy CSV; defaults to the sum-rate optimum.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        slots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        replications: u64,
        #[arg(long, value_enum, default_value = "bernoulli")]
        arrivals: ArrivalArg,
        #[command(flatten)]
        sensing: SensingArgs,
    },
    /// Simulate the optimal policy over a grid of PU arrival rates.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "opt0")]
        policy: ScanPolicyArg,
        #[arg(long, value_enum, default_value = "sum")]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 1_000_000)]
        slots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Trace the SU rate region by weighted-sum solves.
    Region {
        #[command(flatten)]
        common: Common,
        /// Directions on the quarter circle (two SUs only).
        #[arg(long, default_value_t = 33)]
        directions: usize,
    },
}

fn parse_lambda(s: &str) -> std::result::Result<LambdaSpec, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [single] => Ok(LambdaSpec(vec![single])),
        [start, stop, step] => {
            if !(step > 0.0 && start.is_finite() && stop.is_finite() && start <= stop) {
                return Err("need finite start <= stop and step > 0".into());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok(LambdaSpec(
                (0..=n)
                    .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
                    .collect(),
            ))
        }
        _ => Err("expected a rate or start:stop:step".into()),
    }
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Validate { common }
            | Command::Stability { common }
            | Command::Solve { common, .. }
            | Command::Throughput { common, .. }
            | Command::Admm { common, .. }
            | Command::Sensing { common, .. }
            | Command::Simulate { common, .. }
            | Command::Scan { common, .. }
            | Command::Region { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Stability { .. } => "stability",
            Command::Solve { .. } => "solve",
            Command::Throughput { .. } => "throughput",
            Command::Admm { .. } => "admm",
            Command::Sensing { .. } => "sensing",
            Command::Simulate { .. } => "simulate",
            Command::Scan { .. } => "scan",
            Command::Region { .. } => "region",
        }
    }
}

/// Non-convergence is reported after artifacts are written.
struct NotConverged(String);

fn load_params(common: &Common, allow_grid: bool) -> Result<SystemParams> {
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let mut p = io::params_from_str(&text)?;
    if let Some(LambdaSpec(grid)) = &common.lambda_p {
        if grid.len() > 1 && !allow_grid {
            return Err(CoopError::InvalidConfig(
                "--lambda-p grids are only accepted by scan".into(),
            )
            .into());
        }
        p.pu_arrival_rate = grid[0];
    }
    Ok(p)
}

fn run(cli: &Cli, out: &mut OutDir) -> Result<Option<NotConverged>> {
    let mode = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    let common = cli.command.common();
    let params = load_params(common, matches!(cli.command, Command::Scan { .. }))?;
    out.manifest.params = Some(params.clone());

    match &cli.command {
        Command::Validate { .. } => {
            let violations = params.validate();
            for v in &violations {
                println!("{v}");
            }
            params.check()?;
            println!(
                "ok: {} SUs, λ_p = {}",
                params.num_sus, params.pu_arrival_rate
            );
        }
        Command::Stability { .. } => {
            let cert = regions::stability_lp(&params)?;
            println!("λ̂ = {}", cert.lambda_hat);
            out.json("stability.json", &cert)?;
        }
        Command::Solve {
            objective, method, ..
        } => {
            let opts = SolveOptions {
                method: match method {
                    MethodArg::Auto => Method::Auto,
                    MethodArg::FrankWolfe => Method::FrankWolfe,
                },
                frank_wolfe: FwOptions::default(),
            };
            let report =
                optimizer::solve_opt0_with(&params, &objective.build(params.num_sus), &opts)?;
            println!("objective = {}", report.objective);
            out.json("report.json", &report)?;
            out.policy_csv("policy.csv", &report.policy)?;
            if report.status == SolveStatus::IterationLimit {
                return Ok(Some(NotConverged(
                    "Frank-Wolfe hit its iteration cap".into(),
                )));
            }
        }
        Command::Throughput {
            arrivals,
            objective,
            ..
        } => {
            let report =
                optimizer::solve_throughput(&params, arrivals, &objective.build(params.num_sus))?;
            println!("throughput objective = {}", report.objective);
            out.json("report.json", &report)?;
            out.policy_csv("policy.csv", &report.policy)?;
        }
        Command::Admm {
            objective,
            rho,
            eps,
            max_iters,
            residual_tol,
            warm,
            ..
        } => {
            let warm_start = match warm {
                Some(path) => {
                    out.manifest.inputs.push(path.clone());
                    let file = io::read_policy_file(path)?;
                    Some(WarmStart {
                        policy: file.policy(),
                        duals: file.duals,
                    })
                }
                None => None,
            };
            let cfg = AdmmConfig {
                rho: *rho,
                eps: *eps,
                max_iters: *max_iters,
                residual_tol: *residual_tol,
                warm_start,
                ..AdmmConfig::default()
            };
            let res = admm_solve(&params, &objective.build(params.num_sus), &cfg)?;
            println!(
                "objective = {} after {} iterations ({} data messages)",
                res.report.objective,
                res.iterations,
                res.log.total_data()
            );
            out.json("admm.json", &artifacts::AdmmSummary::of(&res))?;
            out.csv_rows("admm_trace.csv", &res.trace)?;
            out.text(
                "policy.toml",
                &io::policy_file_to_string(&PolicyFile::new(
                    &res.report.policy,
                    Some(res.duals.clone()),
                ))?,
            )?;
            out.policy_csv("policy.csv", &res.report.policy)?;
            if !res.converged {
                return Ok(Some(NotConverged(format!(
                    "ADMM stopped at the {max_iters}-iteration cap"
                ))));
            }
        }
        Command::Sensing {
            p_detect,
            p_false_alarm,
            objective,
            search,
            points,
            tol,
            ..
        } => {
            let model = SensingModel::new(*p_detect, *p_false_alarm)?;
            let search = match search {
                SearchArg::Grid => Search::Grid { points: *points },
                SearchArg::Ternary => Search::Ternary { tol: *tol },
            };
            let rep = sensing::solve_opt1(
                &params,
                &model,
                &objective.build(params.num_sus),
                search,
                mode,
            )?;
            println!(
                "q_b* = {}, objective = {}, interval [{}, {}]",
                rep.best.q_b, rep.best.value, rep.interval.lo, rep.interval.hi
            );
            if !rep.concavity.passes() {
                eprintln!(
                    "note: {} of {} midpoint concavity checks failed",
                    rep.concavity.violations, rep.concavity.checked
                );
            }
            out.csv_rows("sensing_curve.csv", &artifacts::curve_rows(&rep.curve))?;
            out.policy_csv("policy.csv", &model::to_joint(&rep.best.policy)?)?;
            out.json("sensing.json", &rep)?;
        }
        Command::Simulate {
            policy,
            slots,
            seed,
            replications,
            arrivals,
            sensing,
            ..
        } => {
            let cond = match policy {
                Some(path) => {
                    out.manifest.inputs.push(path.clone());
                    let file = std::fs::File::open(path)
                        .with_context(|| format!("opening {}", path.display()))?;
                    model::to_conditional(&io::read_policy_csv(file)?)?.normalized()
                }
                None => default_policy(&params)?,
            };
            let rate = params.pu_arrival_rate;
            let cfg = SimConfig {
                pu_arrival: match arrivals {
                    ArrivalArg::Bernoulli => Arrival::Bernoulli { rate },
                    ArrivalArg::Poisson => Arrival::Poisson { rate },
                },
                sensing: sensing.model()?,
                ..SimConfig::new(&params, *slots, *seed)
            };
            out.manifest.seeds.push(*seed);
            let reports = sim::replicate(&params, &cond, &cfg, *replications, mode)?;
            for r in &reports {
                println!(
                    "stream {}: SU throughput {:.6}, busy {:.6}, Q(T)/T {:.3e}",
                    r.stream,
                    r.su_throughput.iter().sum::<f64>(),
                    r.busy_fraction,
                    r.backlog_growth
                );
            }
            out.json("simulate.json", &reports)?;
        }
        Command::Scan {
            common,
            policy,
            objective,
            slots,
            seed,
            ..
        } => {
            let grid = match &common.lambda_p {
                Some(LambdaSpec(g)) => g.clone(),
                None => vec![params.pu_arrival_rate],
            };
            let cfg = SimConfig::new(&params, *slots, *seed);
            out.manifest.seeds.push(*seed);
            let rows = match policy {
                ScanPolicyArg::Opt0 => sim::stability_scan(
                    &params,
                    sim::opt0_factory(objective.build(params.num_sus)),
                    &grid,
                    &cfg,
                    mode,
                )?,
                ScanPolicyArg::NoCooperation => {
                    sim::stability_scan(&params, sim::no_cooperation_factory, &grid, &cfg, mode)?
                }
            };
            let csv_rows = artifacts::scan_rows(&rows);
            for r in &csv_rows {
                println!(
                    "λ_p = {:.4}: throughput {} (analytic {}), Q(T)/T {}",
                    r.lambda_p,
                    fmt_opt(r.sim_throughput),
                    fmt_opt(r.analytic_objective),
                    fmt_opt(r.backlog_growth)
                );
            }
            out.csv_rows("scan.csv", &csv_rows)?;
        }
        Command::Region { directions, .. } => {
            if params.num_sus != 2 {
                return Err(CoopError::InvalidConfig(
                    "region tracing uses quarter-circle directions and needs exactly 2 SUs".into(),
                )
                .into());
            }
            let points = regions::rate_region_boundary(
                &params,
                &quarter_circle_directions(*directions),
                mode,
            )?;
            out.region_csv("region.csv", &points)?;
            println!("{} boundary points", points.len());
        }
    }
    Ok(None)
}

fn default_policy(params: &SystemParams) -> Result<ConditionalPolicy> {
    let report = optimizer::solve_opt0(params, &Objective::sum_rate(params.num_sus))?;
    Ok(model::to_conditional(&report.policy)?.normalized())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoopError>() {
        Some(CoopError::Infeasible(_)) => 3,
        Some(CoopError::Numeric(_)) | Some(CoopError::Lp(_)) => 5,
        Some(_) => 2,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let mut out = match OutDir::create(&cli.out_dir, &cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = run(&cli, &mut out);
    let status = match &result {
        Ok(None) => 0,
        Ok(Some(NotConverged(msg))) => {
            eprintln!("error: {msg}");
            4
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(e)
        }
    };
    out.manifest.exit_code = status;
    out.manifest.wall_seconds = started.elapsed().as_secs_f64();
    if let Err(e) = out.finish(cli.command.name()) {
        eprintln!("error: writing manifest: {e:#}");
        return ExitCode::from(2);
    }
    ExitCode::from(status)
}
