use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::em::{responsibilities, weighted_moments};
use super::{Design, MixtureError, MixtureModel};

pub const DEFAULT_PROBS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioQuantiles {
    pub scenario: String,
    /// Value of the indicator in this scenario.
    pub level: f64,
    pub quantiles: Vec<f64>,
    pub mean: f64,
}

/// Conditional rate quantiles at a low and a high indicator level, with all
/// other regressors held at `x_base`. Shifts are in basis points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileTable {
    pub indicator: String,
    pub probs: Vec<f64>,
    pub low: ScenarioQuantiles,
    pub high: ScenarioQuantiles,
    pub quantile_shift_bp: Vec<f64>,
    pub mean_shift_bp: f64,
    /// Shift at the highest requested probability.
    pub tail_shift_bp: f64,
}

pub fn quantile_shift(
    m: &MixtureModel,
    x_base: &[f64],
    indicator: &str,
    low: f64,
    high: f64,
    probs: &[f64],
) -> Result<QuantileTable, MixtureError> {
    m.validate()?;
    if x_base.len() != m.names.len() {
        return Err(MixtureError::InvalidInput("baseline regressors do not match the model".into()));
    }
    if probs.is_empty() || !low.is_finite() || !high.is_finite() {
        return Err(MixtureError::InvalidInput("need finite indicator levels and at least one probability".into()));
    }
    let j = m.names.iter().position(|n| n == indicator).ok_or_else(|| MixtureError::UnknownColumn(indicator.into()))?;
    let scenario = |name: &str, level: f64| -> Result<ScenarioQuantiles, MixtureError> {
        let mut x = x_base.to_vec();
        x[j] = level;
        Ok(ScenarioQuantiles {
            scenario: name.into(),
            level,
            quantiles: probs.iter().map(|&p| m.quantile(p, &x)).collect::<Result<_, _>>()?,
            mean: m.mean(&x),
        })
    };
    let (lo, hi) = (scenario("low", low)?, scenario("high", high)?);
    let quantile_shift_bp: Vec<f64> = lo.quantiles.iter().zip(&hi.quantiles).map(|(a, b)| (b - a) * 100.0).collect();
    let tail =
        probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| quantile_shift_bp[i]).unwrap_or(0.0);
    Ok(QuantileTable {
        indicator: indicator.into(),
        probs: probs.to_vec(),
        mean_shift_bp: (hi.mean - lo.mean) * 100.0,
        tail_shift_bp: tail,
        quantile_shift_bp,
        low: lo,
        high: hi,
    })
}

/// Draws `n` values from `N(mean, variance)` on a fixed seed.
pub fn placebo_series(n: usize, mean: f64, variance: f64, seed: u64) -> Result<Vec<f64>, MixtureError> {
    if !(variance >= 0.0 && variance.is_finite() && mean.is_finite()) {
        return Err(MixtureError::InvalidInput(format!(
            "placebo variance must be finite and nonnegative, got {variance}"
        )));
    }
    let dist = Normal::new(mean, variance.sqrt()).map_err(|e| MixtureError::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Interest cost in euro of a rate change of `delta_bp` on a monthly lending
/// flow that accumulates over `years`.
pub fn interest_cost_impact(delta_bp: f64, monthly_flow: f64, years: f64) -> f64 {
    let stock = monthly_flow * 12.0 * years;
    delta_bp * stock / 10_000.0
}

/// Standard errors of each component's coefficients, treating the
/// responsibilities as known weights.
pub fn component_standard_errors(m: &MixtureModel, d: &Design) -> Result<Vec<Vec<f64>>, MixtureError> {
    let tau = responsibilities(m, d)?;
    let g = m.g();
    (0..g)
        .map(|k| {
            let (a, _, _) = weighted_moments(d, &tau, g, k);
            let inv = a.try_inverse().ok_or(MixtureError::SingularDesign { component: k })?;
            let s2 = m.components[k].sigma.powi(2);
            Ok((0..d.p()).map(|j| (s2 * inv[(j, j)]).max(0.0).sqrt()).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboStatistic {
    pub column: String,
    /// Weight-averaged coefficient across components.
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub component_coefs: Vec<f64>,
    pub component_ses: Vec<f64>,
}

pub fn placebo_statistic(m: &MixtureModel, d: &Design, column: &str) -> Result<PlaceboStatistic, MixtureError> {
    let j = d.column_index(column)?;
    let ses = component_standard_errors(m, d)?;
    let coefs: Vec<f64> = m.components.iter().map(|c| c.beta[j]).collect();
    let comp_se: Vec<f64> = ses.iter().map(|s| s[j]).collect();
    let estimate = m.components.iter().zip(&coefs).map(|(c, b)| c.weight * b).sum::<f64>();
    let se = m.components.iter().zip(&comp_se).map(|(c, s)| (c.weight * s).powi(2)).sum::<f64>().sqrt();
    Ok(PlaceboStatistic {
        column: column.into(),
        estimate,
        se,
        t: if se > 0.0 { estimate / se } else { f64::NAN },
        component_coefs: coefs,
        component_ses: comp_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{em_fit, Component, EmConfig};

    fn model() -> MixtureModel {
        MixtureModel::new(
            vec!["intercept".into(), "niu".into()],
            vec![
                Component { weight: 0.5, sigma: 0.2, beta: vec![1.0, 0.3] },
                Component { weight: 0.5, sigma: 0.4, beta: vec![2.0, 0.1] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn mean_shift_is_weighted_slope() {
        let m = model();
        let t = quantile_shift(&m, &[1.0, 0.0], "niu", 1.0, 2.0, &DEFAULT_PROBS).unwrap();
        assert!((t.mean_shift_bp - 20.0).abs() < 1e-9);
        assert_eq!(t.quantile_shift_bp.len(), 3);
        assert_eq!(t.tail_shift_bp, t.quantile_shift_bp[2]);
        assert!(quantile_shift(&m, &[1.0, 0.0], "asi", 1.0, 2.0, &DEFAULT_PROBS).is_err());
    }

    #[test]
    fn equal_slopes_shift_every_quantile_equally() {
        let mut m = model();
        for c in &mut m.components {
            c.beta[1] = 0.25;
        }
        let t = quantile_shift(&m, &[1.0, 0.0], "niu", 0.0, 1.0, &DEFAULT_PROBS).unwrap();
        for s in &t.quantile_shift_bp {
            assert!((s - 25.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cost_impact_reference() {
        assert!((interest_cost_impact(14.0, 5e9, 5.0) - 4.2e8).abs() < 1e-3);
        assert_eq!(interest_cost_impact(0.0, 5e9, 5.0), 0.0);
    }

    #[test]
    fn placebo_series_moments() {
        let v = placebo_series(50_000, 0.2, 0.04, 9).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((mean - 0.2).abs() < 0.005);
        assert!((var - 0.04).abs() < 0.002);
        assert_eq!(v, placebo_series(50_000, 0.2, 0.04, 9).unwrap());
        assert!(placebo_series(3, 0.0, -1.0, 1).is_err());
    }

    #[test]
    fn single_component_se_matches_ols_formula() {
        let n = 400;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0, (i as f64 * 0.37).sin()]).collect();
        let y: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| 1.0 + 0.5 * r[1] + 0.1 * ((i * 7919 % 101) as f64 / 50.0 - 1.0))
            .collect();
        let d = Design::new(vec!["intercept".into(), "z".into()], rows.clone(), y).unwrap();
        let (m, _) = em_fit(&d, 1, &EmConfig::default()).unwrap();
        let ses = component_standard_errors(&m, &d).unwrap();
        // Oracle: σ² (X'X)^{-1} by the explicit 2×2 inverse.
        let (s0, s1, s2) = rows.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + 1.0, a.1 + r[1], a.2 + r[1] * r[1]));
        let det = s0 * s2 - s1 * s1;
        let s2g = m.components[0].sigma.powi(2);
        assert!((ses[0][0] - (s2g * s2 / det).sqrt()).abs() < 1e-12);
        assert!((ses[0][1] - (s2g * s0 / det).sqrt()).abs() < 1e-12);
        let st = placebo_statistic(&m, &d, "z").unwrap();
        assert!((st.estimate - m.components[0].beta[1]).abs() < 1e-15);
        assert!((st.se - ses[0][1]).abs() < 1e-15);
    }
}
