//! Model primitives: CARA utility, Weibull-type default hazard, Taylor-type
//! funding rule, real profit and its rate derivative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, to_f64, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BankError {
    #[error("invalid bank parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("loan rate must be >= 0, got {0}")]
    NegativeRate(f64),
    #[error("inflation {0} makes the deflator 1 + pi non-positive")]
    DegenerateDeflator(f64),
}

/// Default hazard `p = 1 − exp(−(r/s)^κ)`, `s = s0·exp(a_pi·π − a_x·x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hazard<T> {
    pub s0: T,
    pub kappa: T,
    pub a_pi: T,
    pub a_x: T,
}

/// Deposit rate `R_D(π) = r_star + rho_pi·(π − pi_star)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Funding<T> {
    pub r_star: T,
    pub rho_pi: T,
    #[serde(default = "default_pi_star")]
    pub pi_star: T,
}

fn default_pi_star<T: Scalar>() -> T {
    lit(0.02)
}

/// Non-remunerated reserve ratio and per-loan operating cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Costs<T> {
    pub theta: T,
    pub c: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawParameters<T> {
    gamma_u: T,
    hazard: Hazard<T>,
    funding: Funding<T>,
    #[serde(default)]
    costs: Costs<T>,
    #[serde(default)]
    eta: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParameters<T>", into = "RawParameters<T>")]
#[serde(bound = "T: Scalar")]
pub struct BankParameters<T: Scalar> {
    raw: RawParameters<T>,
}

impl<T: Scalar> TryFrom<RawParameters<T>> for BankParameters<T> {
    type Error = BankError;
    fn try_from(raw: RawParameters<T>) -> Result<Self, BankError> {
        BankParameters::new(raw.gamma_u, raw.hazard, raw.funding, raw.costs, raw.eta)
    }
}

impl<T: Scalar> From<BankParameters<T>> for RawParameters<T> {
    fn from(p: BankParameters<T>) -> Self {
        p.raw
    }
}

fn check<T: Scalar>(ok: bool, name: &'static str, v: T, rule: &str) -> Result<(), BankError> {
    if ok && v.is_finite() {
        Ok(())
    } else {
        Err(BankError::InvalidParameter { name, reason: format!("{rule}, got {v}") })
    }
}

impl<T: Scalar> Default for BankParameters<T> {
    fn default() -> Self {
        BankParameters::new(
            lit(20.0),
            Hazard { s0: lit(0.10), kappa: lit(4.0), a_pi: lit(2.0), a_x: lit(0.4) },
            Funding { r_star: lit(0.03), rho_pi: lit(0.5), pi_star: lit(0.02) },
            Costs::default(),
            lit(50.0),
        )
        .expect("default parameters are valid")
    }
}

impl<T: Scalar> BankParameters<T> {
    pub fn new(gamma_u: T, hazard: Hazard<T>, funding: Funding<T>, costs: Costs<T>, eta: T) -> Result<Self, BankError> {
        let zero = T::zero();
        check(gamma_u > zero, "gamma_u", gamma_u, "must be > 0")?;
        check(hazard.s0 > zero, "s0", hazard.s0, "must be > 0")?;
        check(hazard.kappa > T::one(), "kappa", hazard.kappa, "must be > 1")?;
        check(hazard.a_pi > zero, "a_pi", hazard.a_pi, "must be > 0")?;
        check(hazard.a_x > zero, "a_x", hazard.a_x, "must be > 0")?;
        check(true, "r_star", funding.r_star, "must be finite")?;
        check(funding.rho_pi > zero, "rho_pi", funding.rho_pi, "must be > 0")?;
        check(true, "pi_star", funding.pi_star, "must be finite")?;
        check(costs.theta >= zero && costs.theta < T::one(), "theta", costs.theta, "must lie in [0, 1)")?;
        check(costs.c >= zero, "c", costs.c, "must be >= 0")?;
        check(eta >= zero, "eta", eta, "must be >= 0")?;
        Ok(BankParameters { raw: RawParameters { gamma_u, hazard, funding, costs, eta } })
    }

    pub fn gamma_u(&self) -> T {
        self.raw.gamma_u
    }
    pub fn hazard(&self) -> &Hazard<T> {
        &self.raw.hazard
    }
    pub fn funding(&self) -> &Funding<T> {
        &self.raw.funding
    }
    pub fn costs(&self) -> &Costs<T> {
        &self.raw.costs
    }
    pub fn eta(&self) -> T {
        self.raw.eta
    }

    pub fn with_costs(&self, costs: Costs<T>) -> Result<Self, BankError> {
        let r = self.raw;
        Self::new(r.gamma_u, r.hazard, r.funding, costs, r.eta)
    }

    pub fn with_eta(&self, eta: T) -> Result<Self, BankError> {
        let r = self.raw;
        Self::new(r.gamma_u, r.hazard, r.funding, r.costs, eta)
    }

    pub fn with_hazard(&self, hazard: Hazard<T>) -> Result<Self, BankError> {
        let r = self.raw;
        Self::new(r.gamma_u, hazard, r.funding, r.costs, r.eta)
    }

    pub fn with_funding(&self, funding: Funding<T>) -> Result<Self, BankError> {
        let r = self.raw;
        Self::new(r.gamma_u, r.hazard, funding, r.costs, r.eta)
    }

    pub fn with_gamma_u(&self, gamma_u: T) -> Result<Self, BankError> {
        let r = self.raw;
        Self::new(gamma_u, r.hazard, r.funding, r.costs, r.eta)
    }

    pub fn deposit_rate(&self, pi: T) -> T {
        let f = &self.raw.funding;
        f.r_star + f.rho_pi * (pi - f.pi_star)
    }

    pub fn hazard_scale(&self, pi: T, x: MacroState) -> T {
        let h = &self.raw.hazard;
        h.s0 * (h.a_pi * pi - h.a_x * x.value::<T>()).exp()
    }

    /// Rate above which `p` turns concave in the loan rate.
    pub fn hazard_inflection(&self, pi: T, x: MacroState) -> T {
        let k = self.raw.hazard.kappa;
        self.hazard_scale(pi, x) * ((k - T::one()) / k).powf(T::one() / k)
    }

    fn hazard_z(&self, r_l: T, pi: T, x: MacroState) -> T {
        (r_l / self.hazard_scale(pi, x)).powf(self.raw.hazard.kappa)
    }

    pub fn default_prob(&self, r_l: T, pi: T, x: MacroState) -> Result<T, BankError> {
        nonnegative(r_l)?;
        Ok(-(-self.hazard_z(r_l, pi, x)).exp_m1())
    }

    /// `∂p/∂r_l` in closed form.
    pub fn default_prob_dr(&self, r_l: T, pi: T, x: MacroState) -> Result<T, BankError> {
        nonnegative(r_l)?;
        if r_l == T::zero() {
            return Ok(T::zero());
        }
        let z = self.hazard_z(r_l, pi, x);
        Ok(self.raw.hazard.kappa / r_l * z * (-z).exp())
    }

    /// `∂²p/∂r_l²` in closed form.
    pub fn default_prob_drr(&self, r_l: T, pi: T, x: MacroState) -> Result<T, BankError> {
        nonnegative(r_l)?;
        if r_l == T::zero() {
            return Ok(T::zero());
        }
        let k = self.raw.hazard.kappa;
        let z = self.hazard_z(r_l, pi, x);
        Ok((-z).exp() * k * z / (r_l * r_l) * ((k - T::one()) - k * z))
    }

    /// `∂p/∂π` in closed form.
    pub fn default_prob_dpi(&self, r_l: T, pi: T, x: MacroState) -> Result<T, BankError> {
        nonnegative(r_l)?;
        let h = &self.raw.hazard;
        let z = self.hazard_z(r_l, pi, x);
        Ok(-h.kappa * h.a_pi * z * (-z).exp())
    }

    /// `∂²p/∂π²` in closed form; non-positive only where `(r/s)^κ ≥ 1`.
    pub fn default_prob_dpipi(&self, r_l: T, pi: T, x: MacroState) -> Result<T, BankError> {
        nonnegative(r_l)?;
        let h = &self.raw.hazard;
        let z = self.hazard_z(r_l, pi, x);
        let ka = h.kappa * h.a_pi;
        Ok(ka * ka * z * (T::one() - z) * (-z).exp())
    }

    /// CARA utility `(1 − e^{−γw})/γ`.
    pub fn utility(&self, w: T) -> T {
        let g = self.raw.gamma_u;
        -(-g * w).exp_m1() / g
    }

    pub fn utility_prime(&self, w: T) -> T {
        (-self.raw.gamma_u * w).exp()
    }

    pub fn utility_second(&self, w: T) -> T {
        -self.raw.gamma_u * (-self.raw.gamma_u * w).exp()
    }

    fn deflator(pi: T) -> Result<T, BankError> {
        let d = T::one() + pi;
        if d > T::zero() {
            Ok(d)
        } else {
            Err(BankError::DegenerateDeflator(to_f64(pi)))
        }
    }

    /// Expected utility of real profit given `π`: `ρ`, or `ρ̃` when `augmented`
    /// (reserve and cost charge subtracted after utility).
    pub fn real_profit(&self, r_l: T, pi: T, x: MacroState, augmented: bool) -> Result<T, BankError> {
        let d = Self::deflator(pi)?;
        let p = self.default_prob(r_l, pi, x)?;
        let rd = self.deposit_rate(pi);
        let repaid = self.utility((r_l - rd) / d);
        let lost = self.utility(-rd / d);
        let mut rho = (T::one() - p) * repaid + p * lost;
        if augmented {
            let c = &self.raw.costs;
            rho -= (c.theta * rd + c.c) / d;
        }
        Ok(rho)
    }

    /// `g(π, r_l) = ∂ρ/∂r_l`.
    pub fn marginal_integrand(&self, pi: T, r_l: T, x: MacroState) -> Result<T, BankError> {
        let d = Self::deflator(pi)?;
        let p = self.default_prob(r_l, pi, x)?;
        let dp = self.default_prob_dr(r_l, pi, x)?;
        let rd = self.deposit_rate(pi);
        let w = (r_l - rd) / d;
        Ok(dp * (self.utility(-rd / d) - self.utility(w)) + (T::one() - p) / d * self.utility_prime(w))
    }

    /// Numerical sign checks of the hazard assumptions on a rectangular region.
    pub fn sign_box(&self, region: &SignBoxRegion) -> SignBoxReport {
        let h: f64 = 1e-6;
        let to = |v: T| to_f64(v);
        let mut rep = SignBoxReport::default();
        let steps = region.steps.max(2);
        for x in [MacroState::Normal, MacroState::Adverse] {
            for i in 0..steps {
                let r = region.r_lo + (region.r_hi - region.r_lo) * i as f64 / (steps - 1) as f64;
                for j in 0..steps {
                    let pi = region.pi_lo + (region.pi_hi - region.pi_lo) * j as f64 / (steps - 1) as f64;
                    let (rt, pt) = (lit::<T>(r), lit::<T>(pi));
                    let p = |a: f64, b: f64, xx| to(self.default_prob(lit(a), lit(b), xx).expect("r >= 0"));
                    let fd_r = (p(r + h, pi, x) - p(r - h, pi, x)) / (2.0 * h);
                    let fd_pi = (p(r, pi + h, x) - p(r, pi - h, x)) / (2.0 * h);
                    let cf_r = to(self.default_prob_dr(rt, pt, x).expect("r >= 0"));
                    let cf_rr = to(self.default_prob_drr(rt, pt, x).expect("r >= 0"));
                    let cf_pi = to(self.default_prob_dpi(rt, pt, x).expect("r >= 0"));
                    let cf_pipi = to(self.default_prob_dpipi(rt, pt, x).expect("r >= 0"));
                    rep.max_fd_error = rep
                        .max_fd_error
                        .max((fd_r - cf_r).abs() / cf_r.abs().max(1.0))
                        .max((fd_pi - cf_pi).abs() / cf_pi.abs().max(1.0));
                    rep.points += 1;
                    // Derivatives vanish once p rounds to one; only count those below it.
                    let live = p(r, pi, x) < 1.0;
                    if cf_r < 0.0 || cf_r == 0.0 && live {
                        rep.dp_dr_violations += 1;
                    }
                    if r < to(self.hazard_inflection(pt, x)) && cf_rr <= 0.0 {
                        rep.convexity_violations += 1;
                    }
                    if cf_pi > 0.0 || cf_pi == 0.0 && live {
                        rep.dp_dpi_violations += 1;
                    }
                    if cf_pipi > 1e-9 {
                        rep.pi_concavity_violations += 1;
                    }
                    let (p_n, p_a) = (p(r, pi, MacroState::Normal), p(r, pi, MacroState::Adverse));
                    if x == MacroState::Normal && (p_a < p_n || p_a == p_n && p_n < 1.0) {
                        rep.macro_violations += 1;
                    }
                }
            }
        }
        rep
    }
}

fn nonnegative<T: Scalar>(r_l: T) -> Result<(), BankError> {
    if r_l >= T::zero() {
        Ok(())
    } else {
        Err(BankError::NegativeRate(to_f64(r_l)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignBoxRegion {
    pub r_lo: f64,
    pub r_hi: f64,
    pub pi_lo: f64,
    pub pi_hi: f64,
    pub steps: usize,
}

impl Default for SignBoxRegion {
    fn default() -> Self {
        SignBoxRegion { r_lo: 0.001, r_hi: 0.25, pi_lo: -0.02, pi_hi: 0.10, steps: 25 }
    }
}

/// Violation counts per hazard condition; zero means the condition held at
/// every grid point.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SignBoxReport {
    pub points: usize,
    pub dp_dr_violations: usize,
    pub convexity_violations: usize,
    pub dp_dpi_violations: usize,
    pub pi_concavity_violations: usize,
    pub macro_violations: usize,
    /// Largest finite-difference gap to the closed-form first derivatives,
    /// relative once the derivative exceeds one in magnitude.
    pub max_fd_error: f64,
}

/// Adverse (`X = 1`) or normal (`X = 0`) macro conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "u8", into = "u8")]
pub enum MacroState {
    #[default]
    Normal,
    Adverse,
}

impl MacroState {
    pub fn value<T: Scalar>(self) -> T {
        match self {
            MacroState::Normal => T::zero(),
            MacroState::Adverse => T::one(),
        }
    }
}

impl TryFrom<u8> for MacroState {
    type Error = BankError;
    fn try_from(v: u8) -> Result<Self, BankError> {
        match v {
            0 => Ok(MacroState::Normal),
            1 => Ok(MacroState::Adverse),
            _ => Err(BankError::InvalidParameter { name: "x", reason: format!("macro state must be 0 or 1, got {v}") }),
        }
    }
}

impl From<MacroState> for u8 {
    fn from(x: MacroState) -> u8 {
        match x {
            MacroState::Normal => 0,
            MacroState::Adverse => 1,
        }
    }
}
