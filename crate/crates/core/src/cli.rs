//! Command-line front end.
//!
//! Every subcommand loads a JSON configuration, runs one computation and
//! writes either an aligned table or CSV to the given writer. Diagnostics go
//! to standard error. The process exit status encodes the outcome:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | invalid configuration or arguments |
//! | 2 | solver failure (numerical trouble, unbounded program) |
//! | 3 | infeasible program, i.e. data inconsistent with no arbitrage on `[0, B]^n` |

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::inner::{
    min_feasible_epsilon, solve_inner, InnerBasis, InnerError, InnerInstance, DEFAULT_EPSILON_TOL,
};
use crate::model::{load_problem, GmpProblem};
use crate::oracle::{lp_bound_with_limit, OracleError};
use crate::partition::{build_cells, partition_csv};
use crate::relaxation::{
    build_outer, report_from_solution, sweep_strikes, BoundReport, BoundStatus, Direction,
    ProgramStats, RelaxError,
};
use crate::solver::{export_sdpa, solve_conic, SolverSettings};
use crate::support::suggest_b;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Column header of the CSV report.
pub const CSV_HEADER: &str = "K,direction,level,value,status,gap,seconds";

#[derive(Debug, Parser)]
#[command(name = "optbounds", version, about = "Model-free bounds on European option prices")]
pub struct Cli {
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Emit::Table, global = true)]
    pub emit: Emit,
    /// Significant digits of printed numbers.
    #[arg(long, default_value_t = 6, global = true)]
    pub precision: usize,
    /// Leave the `seconds` column empty, making output byte-stable.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Table,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Lower,
    Upper,
    Both,
}

impl DirectionArg {
    fn directions(self) -> Vec<Direction> {
        match self {
            DirectionArg::Lower => vec![Direction::Lower],
            DirectionArg::Upper => vec![Direction::Upper],
            DirectionArg::Both => vec![Direction::Lower, Direction::Upper],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Laguerre,
    Monomial,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Outer (moment) relaxation bound for the configured strike.
    Bound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        level: u32,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        direction: DirectionArg,
        /// Write the assembled program in SDPA sparse format. With both
        /// directions the direction name is inserted before the extension.
        #[arg(long)]
        export_sdpa: Option<PathBuf>,
    },
    /// Outer bounds in both directions for a list of payoff strikes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        strikes: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        level: u32,
    },
    /// Inner (SOS density) bound.
    Inner {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2)]
        level: u32,
        /// Constraint relaxation: `auto` uses the smallest feasible value.
        #[arg(long, default_value = "auto")]
        eps: String,
        #[arg(long, value_enum, default_value_t = BasisArg::Laguerre)]
        basis: BasisArg,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        direction: DirectionArg,
    },
    /// Grid linear-program bound (inner bound on a discretized support).
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Uniform points per axis; strikes are added to the grid.
        #[arg(long, default_value_t = 201)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        direction: DirectionArg,
        #[arg(long, default_value_t = crate::oracle::DEFAULT_MAX_ASSETS)]
        max_assets: usize,
    },
    /// Data-derived box bound `B`.
    SuggestB {
        #[arg(long)]
        config: PathBuf,
    },
    /// Partition of `[0, B]^n` as CSV.
    DumpCells {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command, writing
/// the report to `out`. Returns the process exit status.
pub fn run_with<I, T, W>(args: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            code
        }
    }
}

/// Runs with the process arguments and standard output.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with(std::env::args_os(), &mut lock)
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn validation(message: impl ToString) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: message.to_string(),
        }
    }

    fn solver(message: impl ToString) -> Self {
        Failure {
            code: EXIT_SOLVER,
            message: message.to_string(),
        }
    }
}

impl From<RelaxError> for Failure {
    fn from(e: RelaxError) -> Self {
        match e {
            RelaxError::Program(_) => Failure::solver(e),
            _ => Failure::validation(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::validation(e)
    }
}

fn load(path: &Path) -> Result<GmpProblem, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    load_problem(&text).map_err(Failure::validation)
}

fn execute<W: Write>(cli: &Cli, out: &mut W) -> Result<i32, Failure> {
    let fmt = Formatter::new(&cli.output);
    match &cli.command {
        Command::Bound {
            config,
            level,
            direction,
            export_sdpa: export,
        } => {
            let p = load(config)?;
            let dirs = direction.directions();
            let mut reports = Vec::new();
            for &d in &dirs {
                let start = Instant::now();
                let op = build_outer(&p, *level, d)?;
                if let Some(path) = export {
                    let target = if dirs.len() > 1 { tagged_path(path, d) } else { path.clone() };
                    std::fs::write(&target, export_sdpa(&op.program))?;
                }
                let sol = solve_conic(&op.program, &SolverSettings::default())
                    .map_err(Failure::solver)?;
                reports.push(report_from_solution(
                    &p,
                    &op,
                    &sol,
                    *level,
                    d,
                    start.elapsed().as_secs_f64(),
                ));
            }
            fmt.write_summary(out, &reports[0].stats)?;
            fmt.write_reports(out, &reports)?;
            Ok(exit_code(&reports))
        }
        Command::Sweep {
            config,
            strikes,
            level,
        } => {
            let p = load(config)?;
            let results = sweep_strikes(&p, strikes, *level);
            let mut reports = Vec::new();
            for (k, res) in results {
                let pair = res.map_err(|e| {
                    let f = Failure::from(e);
                    Failure {
                        message: format!("K={k}: {}", f.message),
                        ..f
                    }
                })?;
                reports.push(pair.lower);
                reports.push(pair.upper);
            }
            if let Some(first) = reports.first() {
                fmt.write_summary(out, &first.stats)?;
            }
            fmt.write_reports(out, &reports)?;
            Ok(exit_code(&reports))
        }
        Command::Inner {
            config,
            level,
            eps,
            basis,
            direction,
        } => {
            let p = load(config)?;
            let basis = match basis {
                BasisArg::Laguerre => InnerBasis::Laguerre,
                BasisArg::Monomial => InnerBasis::Monomial,
            };
            let mut inst = InnerInstance::new(p, *level, 0.0, basis);
            inst.epsilon = if eps == "auto" {
                min_feasible_epsilon(&inst, DEFAULT_EPSILON_TOL).map_err(inner_failure)?
            } else {
                let v: f64 = eps
                    .parse()
                    .map_err(|_| Failure::validation(format!("--eps expects `auto` or a number, got {eps:?}")))?;
                if !(v >= 0.0) {
                    return Err(Failure::validation("--eps must be >= 0"));
                }
                v
            };
            let mut reports = Vec::new();
            for d in direction.directions() {
                reports.push(solve_inner(&inst, d).map_err(inner_failure)?.report);
            }
            if fmt.emit == Emit::Table {
                writeln!(out, "epsilon {}", fmt.num(inst.epsilon))?;
            }
            fmt.write_summary(out, &reports[0].stats)?;
            fmt.write_reports(out, &reports)?;
            Ok(exit_code(&reports))
        }
        Command::Oracle {
            config,
            grid,
            direction,
            max_assets,
        } => {
            let p = load(config)?;
            let mut rows = Vec::new();
            for d in direction.directions() {
                let r = lp_bound_with_limit(&p, *grid, d, *max_assets).map_err(oracle_failure)?;
                rows.push(r);
            }
            match fmt.emit {
                Emit::Csv => writeln!(out, "K,direction,grid_points,value,seconds")?,
                Emit::Table => writeln!(
                    out,
                    "{:>10} {:>9} {:>11} {:>14} {:>9}",
                    "K", "direction", "grid_points", "value", "seconds"
                )?,
            }
            for r in &rows {
                let fields = [
                    fmt.num(p.payoff.strike),
                    r.direction.as_str().to_string(),
                    r.grid_points.to_string(),
                    fmt.num(r.value),
                    fmt.seconds(r.wall_time),
                ];
                match fmt.emit {
                    Emit::Csv => writeln!(out, "{}", fields.join(","))?,
                    Emit::Table => writeln!(
                        out,
                        "{:>10} {:>9} {:>11} {:>14} {:>9}",
                        fields[0], fields[1], fields[2], fields[3], fields[4]
                    )?,
                }
            }
            Ok(EXIT_OK)
        }
        Command::SuggestB { config } => {
            let p = load(config)?;
            let s = suggest_b(&p).map_err(Failure::validation)?;
            let opt = |v: Option<f64>| v.map(|x| fmt.num(x)).unwrap_or_else(|| "none".into());
            match fmt.emit {
                Emit::Csv => {
                    writeln!(out, "asset,bound")?;
                    for (name, v) in p.asset_names.iter().zip(&s.per_asset) {
                        writeln!(out, "{name},{}", opt(*v))?;
                    }
                    writeln!(out, "computed,{}", opt(s.computed))?;
                    writeln!(out, "B,{}", fmt.num(s.value))?;
                }
                Emit::Table => {
                    for (name, v) in p.asset_names.iter().zip(&s.per_asset) {
                        writeln!(out, "{name:>12}  {}", opt(*v))?;
                    }
                    writeln!(out, "{:>12}  {}", "computed", opt(s.computed))?;
                    let origin = if s.user_override { " (configured)" } else { "" };
                    writeln!(out, "{:>12}  {}{origin}", "B", fmt.num(s.value))?;
                }
            }
            if let Some(w) = &s.warning {
                eprintln!("warning: {w}");
            }
            Ok(EXIT_OK)
        }
        Command::DumpCells { config } => {
            let p = load(config)?;
            let part = build_cells(&p).map_err(Failure::validation)?;
            write!(out, "{}", partition_csv(&part))?;
            Ok(EXIT_OK)
        }
    }
}

fn inner_failure(e: InnerError) -> Failure {
    match e {
        InnerError::InfeasibleAtCap { .. } => Failure {
            code: EXIT_INFEASIBLE,
            message: e.to_string(),
        },
        InnerError::Solver(_) | InnerError::Program(_) | InnerError::Overflow(_) => Failure::solver(e),
        InnerError::Invalid(_) | InnerError::Unsupported(_) => Failure::validation(e),
    }
}

fn oracle_failure(e: OracleError) -> Failure {
    match e {
        OracleError::LpInfeasible => Failure {
            code: EXIT_INFEASIBLE,
            message: e.to_string(),
        },
        OracleError::Solver(_) | OracleError::Program(_) => Failure::solver(e),
        OracleError::TooManyAssets { .. } | OracleError::InvalidGrid(_) => Failure::validation(e),
    }
}

/// Infeasibility wins over other solver trouble.
fn exit_code(reports: &[BoundReport]) -> i32 {
    if reports.iter().any(|r| r.status == BoundStatus::Infeasible) {
        EXIT_INFEASIBLE
    } else if reports.iter().all(|r| r.status == BoundStatus::Optimal) {
        EXIT_OK
    } else {
        EXIT_SOLVER
    }
}

fn tagged_path(path: &Path, d: Direction) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{}.{}", d.as_str(), ext.to_string_lossy()),
        None => format!("{stem}_{}", d.as_str()),
    };
    path.with_file_name(name)
}

struct Formatter {
    emit: Emit,
    precision: usize,
    timing: bool,
}

impl Formatter {
    fn new(o: &OutputArgs) -> Self {
        Formatter {
            emit: o.emit,
            precision: o.precision.max(1),
            timing: !o.no_timing,
        }
    }

    fn num(&self, v: f64) -> String {
        format_significant(v, self.precision)
    }

    fn seconds(&self, s: f64) -> String {
        if self.timing {
            format!("{s:.3}")
        } else {
            String::new()
        }
    }

    fn write_summary<W: Write>(&self, out: &mut W, s: &ProgramStats) -> std::io::Result<()> {
        if self.emit == Emit::Table {
            writeln!(
                out,
                "cells {}, variables {}, psd blocks {}, equalities {}, inequalities {}, largest block {}",
                s.cells, s.variables, s.psd_blocks, s.equalities, s.inequalities, s.max_block_order
            )?;
        }
        Ok(())
    }

    fn write_reports<W: Write>(&self, out: &mut W, reports: &[BoundReport]) -> std::io::Result<()> {
        match self.emit {
            Emit::Csv => writeln!(out, "{CSV_HEADER}")?,
            Emit::Table => writeln!(
                out,
                "{:>10} {:>9} {:>5} {:>14} {:>18} {:>10} {:>9}",
                "K", "direction", "level", "value", "status", "gap", "seconds"
            )?,
        }
        for r in reports {
            let fields = [
                self.num(r.strike),
                r.direction.as_str().to_string(),
                r.level.to_string(),
                self.num(r.value),
                r.status.as_str().to_string(),
                self.num(r.duality_gap),
                self.seconds(r.wall_time),
            ];
            match self.emit {
                Emit::Csv => writeln!(out, "{}", fields.join(","))?,
                Emit::Table => writeln!(
                    out,
                    "{:>10} {:>9} {:>5} {:>14} {:>18} {:>10} {:>9}",
                    fields[0], fields[1], fields[2], fields[3], fields[4], fields[5], fields[6]
                )?,
            }
        }
        Ok(())
    }
}

/// `v` rounded to `digits` significant digits, without trailing zeros.
/// Very large or small magnitudes use exponent notation.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    // Exponent after rounding, so that 9.9999996 becomes 10 and not 10.0000.
    let rounded: f64 = format!("{:.*e}", digits - 1, v).parse().unwrap_or(v);
    let exp = rounded.abs().log10().floor() as i32;
    if exp < -4 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits - 1, v);
        let (mantissa, e) = s.split_once('e').unwrap_or((&s, "0"));
        return format!("{}e{e}", trim_zeros(mantissa));
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = trim_zeros(&format!("{rounded:.decimals$}"));
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}
