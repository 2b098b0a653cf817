use serde::{Deserialize, Serialize};

use loanrate_core::bank::{BankParameters, MacroState};
use loanrate_core::beliefs::{InflationBelief, SecondOrderMeasure};
use loanrate_core::pricing::{solve_optimal_rate, supply_schedule, MarketConfig, Problem, SolveReport, SolverConfig};
use loanrate_core::statics::{self, defaults, StaticsConfig, StaticsReport};

use crate::error::CliError;
use crate::output::{json_bytes, sibling, xy_csv, Run};
use crate::{load_config, PriceArgs, PropositionArg, StaticsArgs};

fn macro_state(x: u8) -> Result<MacroState, CliError> {
    MacroState::try_from(x).map_err(|e| CliError::Validation(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceConfig {
    pub params: BankParameters<f64>,
    pub measure: SecondOrderMeasure<f64>,
    pub x: MacroState,
    pub ambiguity: bool,
    pub quad_nodes: usize,
    pub market: MarketConfig<f64>,
    /// Points in the plotted rate grid.
    pub grid_points: usize,
}

impl Default for PriceConfig {
    fn default() -> Self {
        PriceConfig {
            params: BankParameters::default(),
            measure: defaults::gaussian_measure(),
            x: MacroState::Normal,
            ambiguity: false,
            quad_nodes: 64,
            market: MarketConfig::default(),
            grid_points: 50,
        }
    }
}

#[derive(Debug, Serialize)]
struct PriceOutput {
    report: SolveReport<f64>,
    /// `(V_i, φ'(V_i))` per belief model at the optimum.
    model_weights: Vec<(f64, f64)>,
}

pub fn price(a: PriceArgs) -> Result<(), CliError> {
    let mut cfg: PriceConfig = load_config(a.config.as_deref())?;
    if let Some(x) = a.x {
        cfg.x = macro_state(x)?;
    }
    if let Some(amb) = a.ambiguity {
        cfg.ambiguity = amb;
    }
    if let Some(eta) = a.eta {
        cfg.params = cfg.params.with_eta(eta).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    if let (Some(mean), Some(sd)) = (a.mean, a.sd) {
        cfg.measure = SecondOrderMeasure::single(InflationBelief::gaussian(mean, sd)?);
    }
    if let Some(path) = &a.belief_grid {
        cfg.measure = SecondOrderMeasure::single(InflationBelief::grid_from_csv(path)?);
    }
    if let Some(n) = a.quad_nodes {
        cfg.quad_nodes = n;
    }

    let mut run = Run::new("price", &a.out, None, &cfg)?;
    if let Some(path) = &a.belief_grid {
        run.input(path)?;
    }
    let solver = SolverConfig { quad_nodes: cfg.quad_nodes, ..SolverConfig::for_params(&cfg.params, cfg.x) };
    let problem =
        Problem::new(&cfg.measure, &cfg.params).with_x(cfg.x).with_ambiguity(cfg.ambiguity).with_nodes(cfg.quad_nodes);
    let report = solve_optimal_rate(&problem, &solver)?;
    let model_weights = problem.ambiguity_weights(report.r_star_loan)?;
    println!("r_star_loan = {:.10}", report.r_star_loan);
    println!(
        "foc_residual = {:.3e}  v2 = {:.6e}  iterations = {}",
        report.foc_residual, report.v2_at_opt, report.iterations
    );
    run.write(&a.out, &json_bytes(&PriceOutput { report, model_weights })?)?;

    if a.emit_plot_data {
        if cfg.grid_points < 2 {
            return Err(CliError::Validation("grid_points must be at least 2".into()));
        }
        let grid = loanrate_core::pricing::linspace(solver.r_lo, solver.r_hi, cfg.grid_points);
        let schedule = supply_schedule(&problem, &grid, &cfg.market)?;
        run.write(&sibling(&a.out, "objective.csv"), &xy_csv("r_l", "v", schedule.iter().map(|p| (p.r_l, p.v))))?;
        run.write(
            &sibling(&a.out, "supply.csv"),
            &xy_csv("r_l", "supply", schedule.iter().map(|p| (p.r_l, p.supply))),
        )?;
    }
    run.finish()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticsFileConfig {
    pub params: BankParameters<f64>,
    pub x: MacroState,
    pub ambiguity: bool,
    pub margin: f64,
    pub quad_nodes: usize,
    pub library_seed: u64,
    /// Base measure for the spread, rationing and neutrality checks.
    pub base_measure: SecondOrderMeasure<f64>,
    /// Base measure for the skew checks.
    pub skew_measure: SecondOrderMeasure<f64>,
    /// Multi-model measure for the ambiguity check.
    pub ambiguity_measure: SecondOrderMeasure<f64>,
    pub s_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub eta_grid: Vec<f64>,
    pub theta_c_grid: Vec<(f64, f64)>,
    /// Spread scale for the rationing and ambiguity checks.
    pub spread: f64,
    pub market: MarketConfig<f64>,
}

impl Default for StaticsFileConfig {
    fn default() -> Self {
        StaticsFileConfig {
            params: BankParameters::default(),
            x: MacroState::Normal,
            ambiguity: false,
            margin: statics::DEFAULT_MARGIN,
            quad_nodes: 64,
            library_seed: 7,
            base_measure: defaults::gaussian_measure(),
            skew_measure: defaults::three_point_measure(),
            ambiguity_measure: defaults::two_model_measure(),
            s_grid: defaults::s_grid(),
            lambda_grid: defaults::lambda_grid(),
            eta_grid: defaults::eta_grid(),
            theta_c_grid: defaults::theta_c_grid(),
            spread: 1.5,
            market: MarketConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct StaticsRun {
    proposition: PropositionArg,
    reports: Vec<StaticsReport>,
}

fn run_one(which: PropositionArg, c: &StaticsFileConfig) -> Result<StaticsReport, CliError> {
    let sc =
        StaticsConfig::<f64> { margin: c.margin, solver: None, library_seed: c.library_seed, quad_nodes: c.quad_nodes };
    let (p, x) = (&c.params, c.x);
    Ok(match which {
        PropositionArg::Mps => statics::verify_mps_tightening(&c.base_measure, &c.s_grid, p, x, c.ambiguity, &sc)?,
        PropositionArg::Skew => statics::verify_skew_tightening(&c.skew_measure, &c.lambda_grid, p, x, &sc)?,
        PropositionArg::NegativeSkew => statics::explore_negative_skew(&c.skew_measure, &c.lambda_grid, p, x, &sc)?,
        PropositionArg::Rationing => {
            let grid = defaults::rate_grid(p, x);
            statics::verify_rationing(&c.base_measure, c.spread, p, x, &c.market, &grid, c.ambiguity, &sc)?
        }
        PropositionArg::Ambiguity => {
            statics::verify_ambiguity_amplification(&c.ambiguity_measure, c.spread, p, x, &c.eta_grid, &sc)?
        }
        PropositionArg::Neutrality => {
            statics::verify_neutrality(&c.base_measure, p, x, &c.theta_c_grid, c.ambiguity, &sc)?
        }
        PropositionArg::All => unreachable!("expanded by the caller"),
    })
}

fn plot_points(r: &StaticsReport) -> Vec<(f64, f64)> {
    r.grid
        .iter()
        .enumerate()
        .zip(&r.r_star_by_level)
        .filter_map(|((i, level), rs)| {
            let x = if level.len() == 1 { level[0] } else { i as f64 };
            rs.map(|v| (x, v))
        })
        .collect()
}

fn proposition_name(r: &StaticsReport) -> String {
    serde_json::to_value(r.proposition).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn statics(a: StaticsArgs) -> Result<(), CliError> {
    let mut cfg: StaticsFileConfig = load_config(a.config.as_deref())?;
    if let Some(x) = a.x {
        cfg.x = macro_state(x)?;
    }
    if let Some(amb) = a.ambiguity {
        cfg.ambiguity = amb;
    }
    let which = match a.proposition {
        PropositionArg::All => vec![
            PropositionArg::Mps,
            PropositionArg::Skew,
            PropositionArg::Rationing,
            PropositionArg::Ambiguity,
            PropositionArg::Neutrality,
            PropositionArg::NegativeSkew,
        ],
        one => vec![one],
    };
    let mut run = Run::new("statics", &a.out, Some(cfg.library_seed), &(a.proposition, &cfg))?;
    let mut reports = Vec::new();
    for w in which {
        let rep = run_one(w, &cfg)?;
        let verdict = match rep.verdict {
            statics::Verdict::Pass => "pass",
            statics::Verdict::Fail => "fail",
            statics::Verdict::Exploratory => "exploratory",
        };
        let margin = rep.margins.map(|m| format!("{m:.3e}")).unwrap_or_else(|| "n/a".into());
        println!("{}: {verdict} (margin {margin})", proposition_name(&rep));
        reports.push(rep);
    }
    run.write(&a.out, &json_bytes(&StaticsRun { proposition: a.proposition, reports: reports.clone() })?)?;

    if a.emit_plot_data {
        for rep in &reports {
            let name = proposition_name(rep);
            if let Some(detail) = &rep.rationing {
                let base = detail.base.iter().map(|p| (p.r_l, p.supply));
                run.write(&sibling(&a.out, &format!("{name}.base.csv")), &xy_csv("r_l", "supply", base))?;
                let spread = detail.spread.iter().map(|p| (p.r_l, p.supply));
                run.write(&sibling(&a.out, &format!("{name}.spread.csv")), &xy_csv("r_l", "supply", spread))?;
            } else if let Some(detail) = &rep.amplification {
                let pts = rep.grid.iter().zip(&detail.delta_r_star).filter_map(|(g, d)| d.map(|d| (g[0], d)));
                run.write(&sibling(&a.out, &format!("{name}.csv")), &xy_csv("eta", "delta_r_star", pts))?;
            } else {
                run.write(&sibling(&a.out, &format!("{name}.csv")), &xy_csv("level", "r_star", plot_points(rep)))?;
            }
        }
    }
    run.finish()?;
    Ok(())
}
