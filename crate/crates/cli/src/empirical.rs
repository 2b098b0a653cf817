use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use loanrate_core::data::{
    filter_pd, load_loans, load_overdrafts, simulate_loans, simulate_overdrafts, write_loans, write_overdrafts,
    GeneratorConfig, Indicator, LoanFile, OverdraftConfig, PD_CUTOFF,
};
use loanrate_core::mixture::{
    em_fit, interest_cost_impact, placebo_series, placebo_statistic, quantile_shift, select_components_in, Categorical,
    Criterion, Design, DesignSpec, EmConfig, FitReport, MixtureModel, QuantileTable, SelectionRow, DEFAULT_PROBS,
};
use loanrate_core::panel::{
    build_spread, fe_within, ladder_specs, saturation_ladder, Benchmark, ClusterScheme, FEEstimate,
};

use crate::error::CliError;
use crate::output::{csv_bytes, json_bytes, sibling, xy_csv, Run};
use crate::{load_config, ComponentRange, DataKind, FitArgs, PlaceboArgs, SimulateArgs, SpreadArgs};

/// Monthly new-lending flow and horizon used for the printed cost figure.
const COST_FLOW_EUR: f64 = 5e9;
const COST_YEARS: f64 = 5.0;

fn loan_design(path: &std::path::Path, cutoff: f64, spec: &DesignSpec) -> Result<(Design, usize), CliError> {
    let file = load_loans(path)?;
    let filtered = filter_pd(file.rows, cutoff);
    let design = Design::from_loans(&filtered.rows, spec)?;
    Ok((design, filtered.removed))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub components: ComponentRange,
    pub criterion: Criterion,
    pub indicator: Option<Indicator>,
    pub fixed_effects: Vec<Categorical>,
    pub pd_cutoff: f64,
    pub em: EmConfig,
    pub probs: Vec<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            components: ComponentRange { lo: 1, hi: 8 },
            criterion: Criterion::Bic,
            indicator: Some(Indicator::Niu),
            fixed_effects: Vec::new(),
            pd_cutoff: PD_CUTOFF,
            em: EmConfig::default(),
            probs: DEFAULT_PROBS.to_vec(),
        }
    }
}

#[derive(Debug, Serialize)]
struct NamedValue {
    name: String,
    value: f64,
}

#[derive(Debug, Serialize)]
struct ComponentOut {
    weight: f64,
    sigma: f64,
    coefficients: Vec<NamedValue>,
}

#[derive(Debug, Serialize)]
struct ModelOut<'a> {
    g: usize,
    criterion: Criterion,
    n: usize,
    removed_by_pd_filter: usize,
    components: Vec<ComponentOut>,
    fit: &'a FitReport,
    selection: &'a [SelectionRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    effects: Option<&'a QuantileTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost_impact_eur: Option<f64>,
}

fn components_out(m: &MixtureModel) -> Vec<ComponentOut> {
    m.components
        .iter()
        .map(|c| ComponentOut {
            weight: c.weight,
            sigma: c.sigma,
            coefficients: m.names.iter().zip(&c.beta).map(|(n, v)| NamedValue { name: n.clone(), value: *v }).collect(),
        })
        .collect()
}

fn quantile_csv(t: &QuantileTable) -> Vec<u8> {
    let mut header: Vec<String> = vec!["scenario".into(), "level".into()];
    header.extend(t.probs.iter().map(|p| format!("q{}", (p * 100.0).round())));
    header.push("mean".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let row = |s: &loanrate_core::mixture::ScenarioQuantiles| {
        let mut r = vec![s.scenario.clone(), s.level.to_string()];
        r.extend(s.quantiles.iter().map(|q| q.to_string()));
        r.push(s.mean.to_string());
        r
    };
    csv_bytes(&header, [row(&t.low), row(&t.high)])
}

/// Effect of moving `column` from its 25th to its 75th percentile, other regressors at their means.
fn indicator_effect(m: &MixtureModel, d: &Design, column: &str, probs: &[f64]) -> Result<QuantileTable, CliError> {
    let lo = d.column_quantile(column, 0.25)?;
    let hi = d.column_quantile(column, 0.75)?;
    Ok(quantile_shift(m, &d.column_means(), column, lo, hi, probs)?)
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let mut cfg: FitConfig = load_config(a.config.as_deref())?;
    if let Some(c) = a.components {
        cfg.components = c;
    }
    if let Some(c) = a.criterion {
        cfg.criterion = c;
    }
    if let Some(i) = a.indicator {
        cfg.indicator = Some(i);
    }
    if a.no_indicator {
        cfg.indicator = None;
    }
    if let Some(fe) = a.fixed_effects {
        cfg.fixed_effects = fe;
    }
    if let Some(s) = a.seed {
        cfg.em.seed = s;
    }
    if let Some(r) = a.restarts {
        cfg.em.restarts = r;
    }
    if let Some(p) = a.pd_cutoff {
        cfg.pd_cutoff = p;
    }

    let mut run = Run::new("fit", &a.out, Some(cfg.em.seed), &cfg)?;
    run.input(&a.data)?;
    let spec = DesignSpec { indicator: cfg.indicator, fixed_effects: cfg.fixed_effects.clone() };
    let (design, removed) = loan_design(&a.data, cfg.pd_cutoff, &spec)?;
    let sel = select_components_in(&design, cfg.components.lo..=cfg.components.hi, cfg.criterion, &cfg.em)?;
    println!("n = {} (pd filter removed {removed}), selected G = {} by {}", design.n(), sel.best, cfg.criterion);

    let effects = match cfg.indicator {
        Some(ind) => Some(indicator_effect(&sel.model, &design, ind.column(), &cfg.probs)?),
        None => None,
    };
    let cost = effects.as_ref().map(|t| interest_cost_impact(t.mean_shift_bp, COST_FLOW_EUR, COST_YEARS));
    if let (Some(t), Some(c)) = (&effects, cost) {
        println!(
            "{}: mean shift {:.2} bp, upper-quantile shift {:.2} bp, cost {:.4e} eur",
            t.indicator, t.mean_shift_bp, t.tail_shift_bp, c
        );
    }
    let out = ModelOut {
        g: sel.best,
        criterion: cfg.criterion,
        n: design.n(),
        removed_by_pd_filter: removed,
        components: components_out(&sel.model),
        fit: &sel.report,
        selection: &sel.table,
        effects: effects.as_ref(),
        cost_impact_eur: cost,
    };
    run.write(&a.out, &json_bytes(&out)?)?;

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let table = sel.table.iter().map(|r| {
        vec![
            r.g.to_string(),
            r.n_params.map(|k| k.to_string()).unwrap_or_default(),
            opt(r.loglik),
            opt(r.aic),
            opt(r.bic),
            r.converged.map(|c| c.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default().replace(',', ";"),
        ]
    });
    run.write(
        &sibling(&a.out, "selection.csv"),
        &csv_bytes(&["g", "n_params", "loglik", "aic", "bic", "converged", "error"], table),
    )?;
    if let Some(t) = &effects {
        run.write(&sibling(&a.out, "quantiles.csv"), &quantile_csv(t))?;
    }

    if a.emit_plot_data {
        let trace = sel.report.loglik_trace.iter().enumerate().map(|(i, v)| (i as f64, *v));
        run.write(&sibling(&a.out, "loglik.csv"), &xy_csv("iteration", "loglik", trace))?;
        let crit = sel.table.iter().filter_map(|r| {
            let v = match cfg.criterion {
                Criterion::Aic => r.aic,
                Criterion::Bic => r.bic,
            };
            v.map(|v| (r.g as f64, v))
        });
        run.write(&sibling(&a.out, "criterion.csv"), &xy_csv("g", &cfg.criterion.to_string(), crit))?;
        if let (Some(t), Some(ind)) = (&effects, cfg.indicator) {
            let j = design.column_index(ind.column())?;
            let lo = t.low.quantiles.first().copied().unwrap_or(0.0) - 2.0;
            let hi = t.high.quantiles.last().copied().unwrap_or(0.0) + 2.0;
            for (name, level) in [("density_low.csv", t.low.level), ("density_high.csv", t.high.level)] {
                let mut x = design.column_means();
                x[j] = level;
                let pts = (0..=400).map(|i| {
                    let r = lo + (hi - lo) * i as f64 / 400.0;
                    (r, sel.model.density(r, &x))
                });
                run.write(&sibling(&a.out, name), &xy_csv("rate_pct", "density", pts))?;
            }
        }
    }
    run.finish()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboConfig {
    pub indicator: Indicator,
    pub trials: usize,
    pub components: usize,
    pub seed: u64,
    pub fixed_effects: Vec<Categorical>,
    pub pd_cutoff: f64,
    pub em: EmConfig,
}

impl Default for PlaceboConfig {
    fn default() -> Self {
        PlaceboConfig {
            indicator: Indicator::Niu,
            trials: 50,
            components: 3,
            seed: 1,
            fixed_effects: Vec::new(),
            pd_cutoff: PD_CUTOFF,
            em: EmConfig { restarts: 2, ..EmConfig::default() },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Trial {
    trial: usize,
    seed: u64,
    estimate: f64,
    se: f64,
    t: f64,
    quantile_shift_bp: Vec<f64>,
    mean_shift_bp: f64,
}

#[derive(Debug, Serialize)]
struct PlaceboOut {
    trials: usize,
    placebo_mean: f64,
    placebo_variance: f64,
    share_abs_t_below_2: f64,
    max_abs_quantile_shift_bp: f64,
    first_trial_quantiles: QuantileTable,
    rows: Vec<Trial>,
}

pub fn placebo(a: PlaceboArgs) -> Result<(), CliError> {
    let mut cfg: PlaceboConfig = load_config(a.config.as_deref())?;
    if let Some(i) = a.indicator {
        cfg.indicator = i;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(g) = a.components {
        cfg.components = g;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.restarts {
        cfg.em.restarts = r;
    }
    if cfg.trials == 0 {
        return Err(CliError::Validation("trials must be at least 1".into()));
    }

    let mut run = Run::new("placebo", &a.out, Some(cfg.seed), &cfg)?;
    run.input(&a.data)?;
    let spec = DesignSpec { indicator: Some(cfg.indicator), fixed_effects: cfg.fixed_effects.clone() };
    let (design, _) = loan_design(&a.data, cfg.pd_cutoff, &spec)?;
    let col = design.column(cfg.indicator.column())?;
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);

    let results: Vec<Result<(Trial, QuantileTable), CliError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.seed.wrapping_add(k as u64);
            let series = placebo_series(design.n(), mean, var, seed)?;
            let mut d = design.clone();
            d.replace_column(cfg.indicator.column(), "placebo", &series)?;
            let (m, _) = em_fit(&d, cfg.components, &cfg.em)?;
            let stat = placebo_statistic(&m, &d, "placebo")?;
            let table = indicator_effect(&m, &d, "placebo", &DEFAULT_PROBS)?;
            let trial = Trial {
                trial: k,
                seed,
                estimate: stat.estimate,
                se: stat.se,
                t: stat.t,
                quantile_shift_bp: table.quantile_shift_bp.clone(),
                mean_shift_bp: table.mean_shift_bp,
            };
            Ok((trial, table))
        })
        .collect();
    let mut rows = Vec::with_capacity(cfg.trials);
    let mut first = None;
    for r in results {
        let (trial, table) = r?;
        first.get_or_insert(table);
        rows.push(trial);
    }
    let first = first.expect("at least one trial");
    let share = rows.iter().filter(|t| t.t.abs() < 2.0).count() as f64 / rows.len() as f64;
    let max_q = rows.iter().flat_map(|t| t.quantile_shift_bp.iter().map(|v| v.abs())).fold(0.0, f64::max);
    println!("placebo trials = {}, share |t| < 2 = {share:.3}, max |quantile shift| = {max_q:.4} bp", rows.len());

    let csv_rows = rows.iter().map(|t| {
        let mut r =
            vec![t.trial.to_string(), t.seed.to_string(), t.estimate.to_string(), t.se.to_string(), t.t.to_string()];
        r.extend(t.quantile_shift_bp.iter().map(|v| v.to_string()));
        r
    });
    let header = ["trial", "seed", "estimate", "se", "t", "q25_shift_bp", "q50_shift_bp", "q75_shift_bp"];
    run.write(&sibling(&a.out, "trials.csv"), &csv_bytes(&header, csv_rows))?;
    run.write(&sibling(&a.out, "quantiles.csv"), &quantile_csv(&first))?;
    if a.emit_plot_data {
        run.write(&sibling(&a.out, "t.csv"), &xy_csv("trial", "t", rows.iter().map(|t| (t.trial as f64, t.t))))?;
    }
    let out = PlaceboOut {
        trials: rows.len(),
        placebo_mean: mean,
        placebo_variance: var,
        share_abs_t_below_2: share,
        max_abs_quantile_shift_bp: max_q,
        first_trial_quantiles: first,
        rows,
    };
    run.write(&a.out, &json_bytes(&out)?)?;
    run.finish()?;
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    match a.kind {
        DataKind::Loans => {
            if a.one_obs_per_borrower {
                return Err(CliError::Validation("--one-obs-per-borrower applies to overdraft files".into()));
            }
            let mut cfg: GeneratorConfig = load_config(a.config.as_deref())?;
            if let Some(n) = a.n {
                cfg.n = n;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(bp) = a.indicator_effect_bp {
                cfg.indicator_effect_bp = bp;
            }
            let out = a.out.unwrap_or_else(|| PathBuf::from("loans.csv"));
            let mut run = Run::new("simulate", &out, Some(cfg.seed), &(DataKind::Loans, &cfg))?;
            let (rows, truth) = simulate_loans(&cfg)?;
            let mut buf = Vec::new();
            write_loans(&mut buf, &LoanFile { rows, extra_columns: vec![], extra_values: vec![] })?;
            run.write(&out, &buf)?;
            run.write(&sibling(&out, "truth.json"), &json_bytes(&truth)?)?;
            println!("wrote {} loans to {}", cfg.n, out.display());
            run.finish()?;
        }
        DataKind::Overdrafts => {
            if a.n.is_some() || a.indicator_effect_bp.is_some() {
                return Err(CliError::Validation(
                    "--n and --indicator-effect-bp apply to loan files; size overdraft panels in the config".into(),
                ));
            }
            let mut cfg: OverdraftConfig = load_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if a.one_obs_per_borrower {
                cfg.one_obs_per_borrower = true;
            }
            let out = a.out.unwrap_or_else(|| PathBuf::from("overdrafts.csv"));
            let mut run = Run::new("simulate", &out, Some(cfg.seed), &(DataKind::Overdrafts, &cfg))?;
            let (rows, truth) = simulate_overdrafts(&cfg)?;
            let mut buf = Vec::new();
            write_overdrafts(&mut buf, &rows)?;
            run.write(&out, &buf)?;
            run.write(&sibling(&out, "truth.json"), &json_bytes(&truth)?)?;
            println!("wrote {} overdrafts to {}", rows.len(), out.display());
            run.finish()?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpreadConfig {
    pub indicator: Indicator,
    pub cluster: ClusterScheme,
    pub ladder: bool,
    pub benchmark: Benchmark,
}

impl Default for SpreadConfig {
    fn default() -> Self {
        SpreadConfig {
            indicator: Indicator::Niu,
            cluster: ClusterScheme::Bank,
            ladder: false,
            benchmark: Benchmark::Column,
        }
    }
}

pub fn spread(a: SpreadArgs) -> Result<(), CliError> {
    let mut cfg: SpreadConfig = load_config(a.config.as_deref())?;
    if let Some(i) = a.indicator {
        cfg.indicator = i;
    }
    if let Some(c) = a.cluster {
        cfg.cluster = c;
    }
    if a.ladder {
        cfg.ladder = true;
    }
    if let Some(b) = a.benchmark {
        cfg.benchmark = b;
    }
    let mut run = Run::new("spread", &a.out, None, &cfg)?;
    run.input(&a.data)?;
    let rows = build_spread(&load_overdrafts(&a.data)?, cfg.benchmark)?;
    let estimates: Vec<FEEstimate> = if cfg.ladder {
        saturation_ladder(&rows, cfg.indicator, cfg.cluster)?
    } else {
        let (label, spec) = ladder_specs(cfg.indicator, cfg.cluster).swap_remove(2);
        vec![FEEstimate { label, ..fe_within(&rows, &spec)? }]
    };

    let mut table = Vec::new();
    for e in &estimates {
        let clusters = e.dof.iter().map(|d| d.clusters.to_string()).collect::<Vec<_>>().join("|");
        if let Some((b, s)) = e.coef(cfg.indicator.column()) {
            println!("{:<10} {} = {b:.4} (se {s:.4}, t {:.2})", e.label, cfg.indicator, b / s);
        }
        for ((name, b), s) in e.names.iter().zip(&e.coefficients).zip(&e.std_errors) {
            table.push(vec![
                e.label.clone(),
                name.clone(),
                b.to_string(),
                s.to_string(),
                (b / s).to_string(),
                e.n.to_string(),
                e.n_banks.to_string(),
                clusters.clone(),
                e.cluster.to_string(),
                e.r2.to_string(),
            ]);
        }
    }
    let header = ["rung", "term", "estimate", "se", "t", "n", "banks", "clusters", "cluster", "r2"];
    run.write(&a.out, &csv_bytes(&header, table))?;
    run.write(&sibling(&a.out, "json"), &json_bytes(&estimates)?)?;
    run.finish()?;
    Ok(())
}
