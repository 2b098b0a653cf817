//! Finite mixtures of Gaussian linear regressions for loan rates.

mod effects;
mod em;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{quantile_sorted, DataError, Indicator, LoanRow, DESIGN_COVARIATES};

pub use effects::{
    component_standard_errors, interest_cost_impact, placebo_series, placebo_statistic, quantile_shift,
    PlaceboStatistic, QuantileTable, ScenarioQuantiles, DEFAULT_PROBS,
};
pub use em::{
    em_fit, responsibilities, select_components, select_components_in, Criterion, EmConfig, FitReport,
    ResponsibilitySummary, Selection, SelectionRow,
};

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const WEIGHT_SUM_TOL: f64 = 1e-10;
pub const QUANTILE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{n} observations are too few for this fit (need more than {needed})")]
    TooFewObservations { n: usize, needed: usize },
    #[error("component {component} collapsed (responsibility mass {mass:.3})")]
    DegenerateComponent { component: usize, mass: f64 },
    #[error("weighted design is singular for component {component}")]
    SingularDesign { component: usize },
    #[error("unknown design column `{0}`")]
    UnknownColumn(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Categorical codes that can enter as dummy columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Categorical {
    Bank,
    Sector,
    SizeClass,
    Department,
}

impl Categorical {
    pub fn name(self) -> &'static str {
        match self {
            Categorical::Bank => "bank",
            Categorical::Sector => "sector",
            Categorical::SizeClass => "size_class",
            Categorical::Department => "department",
        }
    }

    pub fn code(self, r: &LoanRow) -> u64 {
        match self {
            Categorical::Bank => r.bank_id as u64,
            Categorical::Sector => r.sector as u64,
            Categorical::SizeClass => r.size_class as u64,
            Categorical::Department => r.department as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DesignSpec {
    pub indicator: Option<Indicator>,
    pub fixed_effects: Vec<Categorical>,
}

/// Outcome vector and row-major regressor matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Design {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, MixtureError> {
        let p = names.len();
        if p == 0 || rows.len() != y.len() || rows.iter().any(|r| r.len() != p) {
            return Err(MixtureError::InvalidInput("design rows, names and outcome lengths disagree".into()));
        }
        let x: Vec<f64> = rows.into_iter().flatten().collect();
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(MixtureError::InvalidInput("design contains non-finite values".into()));
        }
        Ok(Design { names, x, y })
    }

    /// Intercept, the shared covariates, the chosen indicator, then one dummy
    /// per non-reference level of each categorical.
    pub fn from_loans(rows: &[LoanRow], spec: &DesignSpec) -> Result<Self, MixtureError> {
        if rows.is_empty() {
            return Err(MixtureError::Data(DataError::Empty));
        }
        let mut names: Vec<String> =
            std::iter::once("intercept").chain(DESIGN_COVARIATES.iter().map(|c| c.name())).map(String::from).collect();
        if let Some(ind) = spec.indicator {
            names.push(ind.column().into());
        }
        let mut dummies = Vec::new();
        for &cat in &spec.fixed_effects {
            let levels: BTreeSet<u64> = rows.iter().map(|r| cat.code(r)).collect();
            for &level in levels.iter().skip(1) {
                names.push(format!("{}={level}", cat.name()));
                dummies.push((cat, level));
            }
        }
        let p = names.len();
        let mut x = Vec::with_capacity(rows.len() * p);
        for r in rows {
            x.push(1.0);
            x.extend(DESIGN_COVARIATES.iter().map(|c| c.value(r)));
            if let Some(ind) = spec.indicator {
                x.push(r.indicator(ind));
            }
            x.extend(dummies.iter().map(|&(cat, level)| if cat.code(r) == level { 1.0 } else { 0.0 }));
        }
        let y = rows.iter().map(|r| r.rate_pct).collect::<Vec<_>>();
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(MixtureError::InvalidInput("design contains non-finite values".into()));
        }
        Ok(Design { names, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn column_index(&self, name: &str) -> Result<usize, MixtureError> {
        self.names.iter().position(|n| n == name).ok_or_else(|| MixtureError::UnknownColumn(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, MixtureError> {
        let j = self.column_index(name)?;
        Ok((0..self.n()).map(|i| self.row(i)[j]).collect())
    }

    /// Swaps in new values for column `name`, renaming it to `new_name`.
    pub fn replace_column(&mut self, name: &str, new_name: &str, values: &[f64]) -> Result<(), MixtureError> {
        let j = self.column_index(name)?;
        if values.len() != self.n() || values.iter().any(|v| !v.is_finite()) {
            return Err(MixtureError::InvalidInput("replacement column has wrong length or non-finite values".into()));
        }
        let p = self.p();
        for (i, v) in values.iter().enumerate() {
            self.x[i * p + j] = *v;
        }
        self.names[j] = new_name.into();
        Ok(())
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.p()];
        for i in 0..self.n() {
            for (acc, v) in m.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        m.iter().map(|v| v / self.n() as f64).collect()
    }

    pub fn column_quantile(&self, name: &str, q: f64) -> Result<f64, MixtureError> {
        let mut v = self.column(name)?;
        v.sort_by(f64::total_cmp);
        Ok(quantile_sorted(&v, q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub sigma: f64,
    pub beta: Vec<f64>,
}

impl Component {
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    pub fn log_density(&self, r: f64, x: &[f64]) -> f64 {
        let z = (r - self.mean(x)) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * PI).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    /// Regressor names shared by all components.
    pub names: Vec<String>,
    pub components: Vec<Component>,
}

impl MixtureModel {
    pub fn new(names: Vec<String>, components: Vec<Component>) -> Result<Self, MixtureError> {
        let m = MixtureModel { names, components };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MixtureError> {
        let bad = |m: String| Err(MixtureError::InvalidModel(m));
        if self.components.is_empty() {
            return bad("at least one component is required".into());
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL || self.components.iter().any(|c| !(c.weight >= 0.0)) {
            return bad(format!("weights must be nonnegative and sum to 1, got {total}"));
        }
        if self.components.iter().any(|c| !(c.sigma > 0.0 && c.sigma.is_finite())) {
            return bad("component scales must be positive".into());
        }
        if self.components.iter().any(|c| c.beta.len() != self.names.len() || c.beta.iter().any(|b| !b.is_finite())) {
            return bad("coefficient vectors must be finite and match the regressor names".into());
        }
        Ok(())
    }

    pub fn g(&self) -> usize {
        self.components.len()
    }

    /// Sorts components by ascending intercept (first coefficient), breaking
    /// ties by weight and then scale.
    pub fn canonicalize(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.g()).collect();
        let key = |c: &Component| (c.beta.first().copied().unwrap_or(0.0), c.weight, c.sigma);
        order.sort_by(|&a, &b| {
            let (ka, kb) = (key(&self.components[a]), key(&self.components[b]));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
        });
        self.components = order.iter().map(|&i| self.components[i].clone()).collect();
        order
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean(x)).sum()
    }

    pub fn density(&self, r: f64, x: &[f64]) -> f64 {
        self.components.iter().map(|c| c.weight * c.log_density(r, x).exp()).sum()
    }

    pub fn cdf(&self, r: f64, x: &[f64]) -> f64 {
        self.components.iter().map(|c| c.weight * normal_cdf((r - c.mean(x)) / c.sigma)).sum()
    }

    /// Inverts the mixture CDF by bisection to `QUANTILE_TOL` in the rate.
    pub fn quantile(&self, prob: f64, x: &[f64]) -> Result<f64, MixtureError> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(MixtureError::InvalidInput(format!("probability must lie in (0, 1), got {prob}")));
        }
        let spread = self.components.iter().map(|c| c.sigma).fold(0.0, f64::max) * 40.0;
        let means = self.components.iter().map(|c| c.mean(x));
        let (lo_m, hi_m) = means.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), m| (l.min(m), h.max(m)));
        let (mut lo, mut hi) = (lo_m - spread, hi_m + spread);
        while hi - lo > QUANTILE_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid, x) < prob {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `Σ_g π_g N(r; x'β_g, σ_g²)`.
pub fn density(m: &MixtureModel, r: f64, x: &[f64]) -> f64 {
    m.density(r, x)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}
