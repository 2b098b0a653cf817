//! Optimal loan rate: first- and second-order objectives, the first-order
//! condition, a bracketed root finder, supply/demand schedules and the
//! representative-bank pooling of heterogeneous beliefs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{BankError, BankParameters, MacroState};
use crate::beliefs::{BeliefError, InflationBelief, SecondOrderMeasure};
use crate::scalar::{lit, to_f64, Scalar};

/// Below this the ambiguity aggregator switches to its second-order series.
pub const ETA_SERIES_CUTOFF: f64 = 1e-8;
/// Step for finite-difference curvature at the optimum.
pub const CURVATURE_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PricingError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("first-order condition does not change sign on [{r_lo}, {r_hi}] (values {f_lo}, {f_hi})")]
    NoSignChange { r_lo: f64, r_hi: f64, f_lo: f64, f_hi: f64 },
    #[error("objective is not concave at the root {rate} (V'' = {v2})")]
    NonConcaveAtRoot { rate: f64, v2: f64 },
    #[error("root finder stopped after {iterations} iterations with residual {residual}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("loan volumes must be nonnegative with at least one positive")]
    InvalidVolumes,
    #[error("invalid market config: {0}")]
    InvalidMarket(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SolverConfig<T> {
    pub r_lo: T,
    pub r_hi: T,
    pub foc_tol: T,
    pub max_iter: usize,
    pub quad_nodes: usize,
    /// Bracket width at which refinement stops.
    #[serde(default = "default_rate_tol")]
    pub rate_tol: T,
}

fn default_rate_tol<T: Scalar>() -> T {
    lit(1e-14)
}

impl<T: Scalar> SolverConfig<T> {
    /// Bracket from 0.1% up to 95% of the hazard inflection at the inflation target.
    pub fn for_params(p: &BankParameters<T>, x: MacroState) -> Self {
        SolverConfig {
            r_lo: lit(0.001),
            r_hi: p.hazard_inflection(p.funding().pi_star, x) * lit(0.95),
            foc_tol: lit(1e-10),
            max_iter: 200,
            quad_nodes: 64,
            rate_tol: default_rate_tol(),
        }
    }

    pub fn validate(&self, p: &BankParameters<T>, x: MacroState) -> Result<(), PricingError> {
        let bad = |m: String| Err(PricingError::InvalidConfig(m));
        if !(self.r_lo > T::zero() && self.r_lo < self.r_hi) {
            return bad(format!("need 0 < r_lo < r_hi, got [{}, {}]", self.r_lo, self.r_hi));
        }
        let inflection = p.hazard_inflection(p.funding().pi_star, x);
        if self.r_hi >= inflection {
            return bad(format!("r_hi {} is not below the hazard inflection {inflection}", self.r_hi));
        }
        if to_f64(self.foc_tol) > 1e-10 || self.foc_tol <= T::zero() {
            return bad(format!("foc_tol must lie in (0, 1e-10], got {}", self.foc_tol));
        }
        if self.quad_nodes < 32 {
            return bad(format!("quad_nodes must be >= 32, got {}", self.quad_nodes));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        Ok(())
    }
}

/// Everything the objective depends on besides the loan rate.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a, T: Scalar> {
    pub measure: &'a SecondOrderMeasure<T>,
    pub params: &'a BankParameters<T>,
    pub x: MacroState,
    pub ambiguity: bool,
    pub quad_nodes: usize,
}

impl<'a, T: Scalar> Problem<'a, T> {
    pub fn new(measure: &'a SecondOrderMeasure<T>, params: &'a BankParameters<T>) -> Self {
        Problem { measure, params, x: MacroState::Normal, ambiguity: false, quad_nodes: 64 }
    }

    pub fn with_x(self, x: MacroState) -> Self {
        Problem { x, ..self }
    }

    pub fn with_ambiguity(self, ambiguity: bool) -> Self {
        Problem { ambiguity, ..self }
    }

    pub fn with_nodes(self, quad_nodes: usize) -> Self {
        Problem { quad_nodes, ..self }
    }

    /// `Σ wᵢ Vᵢ(r)` or `Σ wᵢ φ(Vᵢ(r))` with the ambiguity flag.
    pub fn objective(&self, r_l: T) -> Result<T, PricingError> {
        let mut acc = T::zero();
        for (belief, w) in self.measure.atoms() {
            let v = expected_utility(belief, self.params, r_l, self.x, self.quad_nodes)?;
            acc += *w * if self.ambiguity { phi(self.params.eta(), v) } else { v };
        }
        Ok(acc)
    }

    /// `dV/dr`: `Σ wᵢ Gᵢ(r)` or `Σ wᵢ φ'(Vᵢ) Gᵢ(r)`.
    pub fn foc_value(&self, r_l: T) -> Result<T, PricingError> {
        let mut acc = T::zero();
        for (belief, w) in self.measure.atoms() {
            let g = marginal_expected_utility(belief, self.params, r_l, self.x, self.quad_nodes)?;
            let weight = if self.ambiguity {
                let v = expected_utility(belief, self.params, r_l, self.x, self.quad_nodes)?;
                phi_prime(self.params.eta(), v)
            } else {
                T::one()
            };
            acc += *w * weight * g;
        }
        Ok(acc)
    }

    /// Per-atom `φ'(Vᵢ)` weights at `r_l`.
    pub fn ambiguity_weights(&self, r_l: T) -> Result<Vec<(T, T)>, PricingError> {
        self.measure
            .atoms()
            .iter()
            .map(|(b, _)| {
                let v = expected_utility(b, self.params, r_l, self.x, self.quad_nodes)?;
                Ok((v, phi_prime(self.params.eta(), v)))
            })
            .collect()
    }
}

/// `V_F(r) = E_F[ρ̃(r, π, x)]`.
pub fn expected_utility<T: Scalar>(
    belief: &InflationBelief<T>,
    p: &BankParameters<T>,
    r_l: T,
    x: MacroState,
    nodes: usize,
) -> Result<T, PricingError> {
    let mut failure = None;
    let v = belief.expectation(nodes, |pi| match p.real_profit(r_l, pi, x, true) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            T::nan()
        }
    });
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(v?),
    }
}

/// `G(r; F) = E_F[g(π, r)]`.
pub fn marginal_expected_utility<T: Scalar>(
    belief: &InflationBelief<T>,
    p: &BankParameters<T>,
    r_l: T,
    x: MacroState,
    nodes: usize,
) -> Result<T, PricingError> {
    let mut failure = None;
    let v = belief.expectation(nodes, |pi| match p.marginal_integrand(pi, r_l, x) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            T::nan()
        }
    });
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(v?),
    }
}

/// Constant-ambiguity-aversion aggregator, normalised so `φ(0) = 0`, `φ'(0) = 1`.
pub fn phi<T: Scalar>(eta: T, v: T) -> T {
    if to_f64(eta) < ETA_SERIES_CUTOFF {
        v - eta * v * v * lit(0.5)
    } else {
        -(-eta * v).exp_m1() / eta
    }
}

pub fn phi_prime<T: Scalar>(eta: T, v: T) -> T {
    (-eta * v).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport<T> {
    pub r_star_loan: T,
    pub v_at_opt: T,
    pub v2_at_opt: T,
    pub foc_residual: T,
    /// Signs of the first-order condition at `(r_lo, r_hi)`.
    pub bracket_signs: (i8, i8),
    pub bracket: (T, T),
    pub iterations: usize,
}

fn sign<T: Scalar>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

/// Solves `dV/dr = 0` on the configured bracket with an Illinois-type
/// regula falsi, falling back to bisection whenever an iterate leaves the
/// bracket or fails to halve it.
pub fn solve_optimal_rate<T: Scalar>(
    problem: &Problem<'_, T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>, PricingError> {
    cfg.validate(problem.params, problem.x)?;
    let problem = problem.with_nodes(cfg.quad_nodes);
    let f = |r: T| problem.foc_value(r);

    let (mut a, mut b) = (cfg.r_lo, cfg.r_hi);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    let bracket_signs = (sign(fa), sign(fb));
    if bracket_signs != (1, -1) {
        return Err(PricingError::NoSignChange {
            r_lo: to_f64(a),
            r_hi: to_f64(b),
            f_lo: to_f64(fa),
            f_hi: to_f64(fb),
        });
    }

    let stop_residual = cfg.foc_tol * lit(1e-3);
    let (mut best, mut f_best) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    let mut side = 0i8;
    let mut iterations = 0;
    let mut width = b - a;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) || iterations % 4 == 0 && (b - a) > width * lit(0.5) {
            c = (a + b) * lit(0.5);
        }
        if iterations % 4 == 0 {
            width = b - a;
        }
        let fc = f(c)?;
        if fc.abs() < f_best.abs() {
            best = c;
            f_best = fc;
        }
        if fc == T::zero() || fc.abs() <= stop_residual {
            break;
        }
        if fc > T::zero() {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= lit(0.5);
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= lit(0.5);
            }
            side = -1;
        }
        if b - a <= cfg.rate_tol {
            break;
        }
    }
    if f_best.abs() > cfg.foc_tol {
        return Err(PricingError::NotConverged { iterations, residual: to_f64(f_best) });
    }

    let h: T = lit(CURVATURE_STEP);
    let v2 = (f(best + h)? - f(best - h)?) / (h + h);
    if v2 >= T::zero() {
        return Err(PricingError::NonConcaveAtRoot { rate: to_f64(best), v2: to_f64(v2) });
    }
    Ok(SolveReport {
        r_star_loan: best,
        v_at_opt: problem.objective(best)?,
        v2_at_opt: v2,
        foc_residual: f_best.abs(),
        bracket_signs,
        bracket: (cfg.r_lo, cfg.r_hi),
        iterations,
    })
}

/// Logistic loan supply in expected utility and linear demand in the rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig<T> {
    pub s_max: T,
    pub kappa_s: T,
    pub d0: T,
    pub d1: T,
}

impl<T: Scalar> Default for MarketConfig<T> {
    fn default() -> Self {
        MarketConfig { s_max: lit(1.0), kappa_s: lit(100.0), d0: lit(1.2), d1: lit(4.0) }
    }
}

impl<T: Scalar> MarketConfig<T> {
    pub fn validate(&self) -> Result<(), PricingError> {
        for (name, v) in [("s_max", self.s_max), ("kappa_s", self.kappa_s), ("d0", self.d0), ("d1", self.d1)] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(PricingError::InvalidMarket(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn supply(&self, v: T) -> T {
        self.s_max / (T::one() + (-self.kappa_s * v).exp())
    }

    pub fn demand(&self, r_l: T) -> T {
        self.d0 - self.d1 * r_l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchedulePoint<T> {
    pub r_l: T,
    pub v: T,
    pub supply: T,
    pub demand: T,
    pub gap: T,
    pub rationed: bool,
}

pub fn supply_schedule<T: Scalar>(
    problem: &Problem<'_, T>,
    r_grid: &[T],
    market: &MarketConfig<T>,
) -> Result<Vec<SchedulePoint<T>>, PricingError> {
    market.validate()?;
    r_grid
        .iter()
        .map(|&r_l| {
            let v = problem.objective(r_l)?;
            let supply = market.supply(v);
            let demand = market.demand(r_l);
            let gap = demand - supply;
            Ok(SchedulePoint { r_l, v, supply, demand, gap, rationed: gap > T::zero() })
        })
        .collect()
}

/// Pools bank-level measures with loan-share weights `L_b / Σ L_j`.
/// Identical beliefs across banks are merged into one atom.
pub fn representative_bank<T: Scalar>(
    banks: &[(T, SecondOrderMeasure<T>)],
) -> Result<SecondOrderMeasure<T>, PricingError> {
    if banks.is_empty() || banks.iter().any(|(l, _)| !l.is_finite() || *l < T::zero()) {
        return Err(PricingError::InvalidVolumes);
    }
    let total: T = banks.iter().map(|(l, _)| *l).sum();
    if total <= T::zero() {
        return Err(PricingError::InvalidVolumes);
    }
    let mut pooled: Vec<(InflationBelief<T>, T)> = Vec::new();
    for (volume, measure) in banks {
        let share = *volume / total;
        if share == T::zero() {
            continue;
        }
        for (belief, w) in measure.atoms() {
            match pooled.iter_mut().find(|(b, _)| b == belief) {
                Some((_, acc)) => *acc += share * *w,
                None => pooled.push((belief.clone(), share * *w)),
            }
        }
    }
    Ok(SecondOrderMeasure::from_atoms_unchecked(pooled))
}

/// Evenly spaced grid including both end points.
pub fn linspace<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * lit::<T>(i as f64) / lit::<T>((n - 1) as f64)).collect(),
    }
}
