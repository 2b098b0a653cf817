//! Loan pricing under inflation-belief uncertainty, with the empirical side:
//! regime mixtures for loan rates and a spread panel.
//!
//! The model layer ([`beliefs`], [`bank`], [`pricing`], [`statics`]) is generic
//! over the float type; the empirical layer works in `f64`.

pub mod bank;
pub mod beliefs;
pub mod data;
pub mod mixture;
pub mod panel;
pub mod pricing;
pub mod quadrature;
pub mod scalar;
pub mod statics;

pub use scalar::Scalar;

pub type Belief = beliefs::InflationBelief<f64>;
pub type Measure = beliefs::SecondOrderMeasure<f64>;
pub type Params = bank::BankParameters<f64>;
pub type Solver = pricing::SolverConfig<f64>;
pub type Market = pricing::MarketConfig<f64>;
