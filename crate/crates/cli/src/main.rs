//! `loanrate`: pricing, comparative statics, loan-rate mixtures and overdraft
//! spread panels from the command line.

mod empirical;
mod error;
mod model;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use loanrate_core::data::Indicator;
use loanrate_core::mixture::{Categorical, Criterion};
use loanrate_core::panel::{Benchmark, ClusterScheme};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "loanrate",
    version,
    about = "Loan pricing under inflation-belief uncertainty and loan-rate regime analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the optimal loan rate of one bank.
    Price(PriceArgs),
    /// Run the comparative-statics checks.
    Statics(StaticsArgs),
    /// Fit a regression mixture to a loan file and report indicator effects.
    Fit(FitArgs),
    /// Refit with a Gaussian placebo in place of the indicator.
    Placebo(PlaceboArgs),
    /// Write a synthetic loan or overdraft file.
    Simulate(SimulateArgs),
    /// Fixed-effects regressions of overdraft spreads.
    Spread(SpreadArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct PriceArgs {
    /// TOML file with `params`, `measure`, `x`, `ambiguity`, `quad_nodes`, `market`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Macro state, 0 (normal) or 1 (adverse).
    #[arg(long)]
    pub x: Option<u8>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub ambiguity: Option<bool>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Replace the belief measure with one Gaussian belief.
    #[arg(long, requires = "sd")]
    pub mean: Option<f64>,
    #[arg(long, requires = "mean")]
    pub sd: Option<f64>,
    /// Replace the belief measure with a discrete grid read from a `point,prob` CSV.
    #[arg(long, conflicts_with_all = ["mean", "sd"])]
    pub belief_grid: Option<PathBuf>,
    #[arg(long)]
    pub quad_nodes: Option<usize>,
    #[arg(long, default_value = "price.json")]
    pub out: PathBuf,
    /// Also write two-column CSVs of the objective and the supply schedule.
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropositionArg {
    Mps,
    Skew,
    Rationing,
    Ambiguity,
    Neutrality,
    NegativeSkew,
    All,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct StaticsArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub proposition: PropositionArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<u8>,
    /// Use the ambiguity-averse objective where the check allows it.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub ambiguity: Option<bool>,
    #[arg(long, default_value = "statics.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub emit_plot_data: bool,
}

/// `k` or `a..b` (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ComponentRange {
    pub lo: usize,
    pub hi: usize,
}

impl FromStr for ComponentRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad component count `{v}`"));
        let (lo, hi) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let k = parse(s)?;
                (k, k)
            }
        };
        if lo == 0 || hi < lo {
            return Err(format!("component range `{s}` must satisfy 1 <= lo <= hi"));
        }
        Ok(ComponentRange { lo, hi })
    }
}

impl TryFrom<String> for ComponentRange {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<ComponentRange> for String {
    fn from(r: ComponentRange) -> String {
        format!("{}..{}", r.lo, r.hi)
    }
}

fn parse_categorical(s: &str) -> Result<Categorical, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "bank" => Ok(Categorical::Bank),
        "sector" => Ok(Categorical::Sector),
        "size_class" | "size" => Ok(Categorical::SizeClass),
        "department" => Ok(Categorical::Department),
        other => Err(format!("unknown categorical `{other}` (expected bank, sector, size_class or department)")),
    }
}

fn parse_benchmark(s: &str) -> Result<Benchmark, String> {
    match s.to_ascii_lowercase().as_str() {
        "column" | "benchmark_pct" => Ok(Benchmark::Column),
        "ecb_dfr" | "dfr" => Ok(Benchmark::EcbDfr),
        other => Err(format!("unknown benchmark `{other}` (expected column or ecb_dfr)")),
    }
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Component count `k` or range `a..b` searched by the criterion.
    #[arg(long)]
    pub components: Option<ComponentRange>,
    #[arg(long)]
    pub criterion: Option<Criterion>,
    #[arg(long)]
    pub indicator: Option<Indicator>,
    /// Fit without any uncertainty indicator.
    #[arg(long, conflicts_with = "indicator")]
    pub no_indicator: bool,
    /// Categorical dummies, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_categorical)]
    pub fixed_effects: Option<Vec<Categorical>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub pd_cutoff: Option<f64>,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct PlaceboArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Indicator whose moments the placebo matches and whose column it replaces.
    #[arg(long)]
    pub indicator: Option<Indicator>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, default_value = "placebo.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Loans,
    Overdrafts,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "loans")]
    pub kind: DataKind,
    /// TOML generator settings for the chosen kind.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of loans (loan files only).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Injected indicator effect in basis points (loan files only).
    #[arg(long)]
    pub indicator_effect_bp: Option<f64>,
    /// Give every overdraft its own borrower.
    #[arg(long)]
    pub one_obs_per_borrower: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SpreadArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub indicator: Option<Indicator>,
    /// `bank` or `bank_borrower` (two-way).
    #[arg(long)]
    pub cluster: Option<ClusterScheme>,
    /// Fit all four rungs instead of the bank fixed-effects model alone.
    #[arg(long)]
    pub ladder: bool,
    #[arg(long, value_parser = parse_benchmark)]
    pub benchmark: Option<Benchmark>,
    #[arg(long, default_value = "estimates.csv")]
    pub out: PathBuf,
}

/// Reads a TOML config, or the defaults when no file is given.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C, CliError> {
    match path {
        None => Ok(C::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Price(a) => model::price(a),
        Command::Statics(a) => model::statics(a),
        Command::Fit(a) => empirical::fit(a),
        Command::Placebo(a) => empirical::placebo(a),
        Command::Simulate(a) => empirical::simulate(a),
        Command::Spread(a) => empirical::spread(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_ranges() {
        assert_eq!("3".parse::<ComponentRange>().unwrap(), ComponentRange { lo: 3, hi: 3 });
        assert_eq!("1..8".parse::<ComponentRange>().unwrap(), ComponentRange { lo: 1, hi: 8 });
        assert_eq!("2..=4".parse::<ComponentRange>().unwrap(), ComponentRange { lo: 2, hi: 4 });
        assert!("0..3".parse::<ComponentRange>().is_err());
        assert!("4..2".parse::<ComponentRange>().is_err());
    }

    #[test]
    fn cli_shape_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
