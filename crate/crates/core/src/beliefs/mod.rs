//! Subjective inflation beliefs and second-order measures over them.
//!
//! A belief is one of three families: Gaussian, two-piece normal (split
//! normal with separate left/right scales around the mode) and an explicit
//! discrete grid. All expectations taken by the pricing model go through
//! [`InflationBelief::expectation`].

mod io;
mod order;
mod transform;

pub use order::{check_sk_order, PiecewiseConcave, SkOrderVerdict, TestLibrary};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{adaptive_legendre, QuadratureRule};
use crate::scalar::{lit, to_f64, Scalar};

/// Probabilities must sum to one within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Continuous beliefs are integrated over `centre ± TRUNCATION_SDS · sd`.
pub const TRUNCATION_SDS: f64 = 8.0;
pub const MIN_NODES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("invalid belief parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("scale {scale} is not a spread (must be >= 1)")]
    NotASpread { scale: f64 },
    #[error("{op} is not defined for the {family} family")]
    UnsupportedFamily { op: &'static str, family: &'static str },
    #[error("shift intensity {lambda} would produce negative probabilities")]
    NegativeProbability { lambda: f64 },
    #[error("beliefs have different means ({left} vs {right})")]
    MeanMismatch { left: f64, right: f64 },
    #[error("integrand is not finite at node pi = {node}")]
    NonFinite { node: f64 },
    #[error("quadrature needs at least {MIN_NODES} nodes, got {0}")]
    TooFewNodes(usize),
    #[error("grid file: {0}")]
    Grid(String),
}

/// Unvalidated belief parameters as they appear in a config block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BeliefSpec<T> {
    Gaussian { mean: T, sd: T },
    TwoPieceNormal { mode: T, sd_left: T, sd_right: T },
    DiscreteGrid { points: Vec<T>, probs: Vec<T> },
}

/// A validated subjective distribution over inflation (as a rate fraction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BeliefSpec<T>", into = "BeliefSpec<T>")]
#[serde(bound = "T: Scalar")]
pub struct InflationBelief<T: Scalar>(BeliefSpec<T>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments<T> {
    pub mean: T,
    pub variance: T,
    pub skewness: T,
    pub third_central: T,
}

fn positive<T: Scalar>(name: &'static str, v: T) -> Result<(), BeliefError> {
    if v.is_finite() && v > T::zero() {
        Ok(())
    } else {
        Err(BeliefError::InvalidParameter { name, reason: format!("must be finite and > 0, got {v}") })
    }
}

fn finite<T: Scalar>(name: &'static str, v: T) -> Result<(), BeliefError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(BeliefError::InvalidParameter { name, reason: format!("must be finite, got {v}") })
    }
}

impl<T: Scalar> TryFrom<BeliefSpec<T>> for InflationBelief<T> {
    type Error = BeliefError;

    fn try_from(spec: BeliefSpec<T>) -> Result<Self, Self::Error> {
        match &spec {
            BeliefSpec::Gaussian { mean, sd } => {
                finite("mean", *mean)?;
                positive("sd", *sd)?;
            }
            BeliefSpec::TwoPieceNormal { mode, sd_left, sd_right } => {
                finite("mode", *mode)?;
                positive("sd_left", *sd_left)?;
                positive("sd_right", *sd_right)?;
            }
            BeliefSpec::DiscreteGrid { points, probs } => {
                if points.is_empty() {
                    return Err(BeliefError::InvalidParameter { name: "points", reason: "empty grid".into() });
                }
                if points.len() != probs.len() {
                    return Err(BeliefError::InvalidParameter {
                        name: "probs",
                        reason: format!("{} probabilities for {} points", probs.len(), points.len()),
                    });
                }
                for &p in points {
                    finite("points", p)?;
                }
                if points.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(BeliefError::InvalidParameter {
                        name: "points",
                        reason: "must be strictly increasing".into(),
                    });
                }
                if probs.iter().any(|&q| !q.is_finite() || q < T::zero()) {
                    return Err(BeliefError::InvalidParameter { name: "probs", reason: "must be nonnegative".into() });
                }
                let total: T = probs.iter().copied().sum();
                if (to_f64(total) - 1.0).abs() > PROB_SUM_TOL.max(to_f64(T::epsilon()) * 16.0) {
                    return Err(BeliefError::InvalidParameter {
                        name: "probs",
                        reason: format!("sum to {total}, expected 1"),
                    });
                }
            }
        }
        Ok(InflationBelief(spec))
    }
}

impl<T: Scalar> From<InflationBelief<T>> for BeliefSpec<T> {
    fn from(b: InflationBelief<T>) -> Self {
        b.0
    }
}

impl<T: Scalar> InflationBelief<T> {
    pub fn gaussian(mean: T, sd: T) -> Result<Self, BeliefError> {
        BeliefSpec::Gaussian { mean, sd }.try_into()
    }

    pub fn two_piece_normal(mode: T, sd_left: T, sd_right: T) -> Result<Self, BeliefError> {
        BeliefSpec::TwoPieceNormal { mode, sd_left, sd_right }.try_into()
    }

    pub fn discrete_grid(points: Vec<T>, probs: Vec<T>) -> Result<Self, BeliefError> {
        BeliefSpec::DiscreteGrid { points, probs }.try_into()
    }

    /// Point mass at `pi`.
    pub fn degenerate(pi: T) -> Result<Self, BeliefError> {
        Self::discrete_grid(vec![pi], vec![T::one()])
    }

    pub fn spec(&self) -> &BeliefSpec<T> {
        &self.0
    }

    pub fn family(&self) -> &'static str {
        match self.0 {
            BeliefSpec::Gaussian { .. } => "gaussian",
            BeliefSpec::TwoPieceNormal { .. } => "two_piece_normal",
            BeliefSpec::DiscreteGrid { .. } => "discrete_grid",
        }
    }

    pub fn mean(&self) -> T {
        self.moments().mean
    }

    pub fn variance(&self) -> T {
        self.moments().variance
    }

    pub fn moments(&self) -> Moments<T> {
        let (mean, variance, third_central) = match &self.0 {
            BeliefSpec::Gaussian { mean, sd } => (*mean, *sd * *sd, T::zero()),
            BeliefSpec::TwoPieceNormal { mode, sd_left, sd_right } => {
                // Raw moments about the mode: A·[(-1)^k σl^{k+1} + σr^{k+1}]·∫₀^∞ t^k e^{-t²/2} dt
                let half_gauss: T = (T::PI() / lit(2.0)).sqrt();
                let a = (lit::<T>(2.0) / T::PI()).sqrt() / (*sd_left + *sd_right);
                let (l, r) = (*sd_left, *sd_right);
                let m1 = a * (r * r - l * l);
                let m2 = a * half_gauss * (r.powi(3) + l.powi(3));
                let m3 = a * lit::<T>(2.0) * (r.powi(4) - l.powi(4));
                let var = m2 - m1 * m1;
                let mu3 = m3 - lit::<T>(3.0) * m1 * m2 + lit::<T>(2.0) * m1.powi(3);
                (*mode + m1, var, mu3)
            }
            BeliefSpec::DiscreteGrid { points, probs } => {
                let mean: T = points.iter().zip(probs).map(|(&x, &q)| x * q).sum();
                let var: T = points.iter().zip(probs).map(|(&x, &q)| q * (x - mean).powi(2)).sum();
                let mu3: T = points.iter().zip(probs).map(|(&x, &q)| q * (x - mean).powi(3)).sum();
                (mean, var, mu3)
            }
        };
        let skewness = if variance > T::zero() { third_central / variance.powf(lit(1.5)) } else { T::zero() };
        Moments { mean, variance, skewness, third_central }
    }

    /// Smallest and largest inflation values the belief puts mass on
    /// (truncated for continuous families).
    pub fn support(&self) -> (T, T) {
        let k: T = lit(TRUNCATION_SDS);
        match &self.0 {
            BeliefSpec::Gaussian { mean, sd } => (*mean - k * *sd, *mean + k * *sd),
            BeliefSpec::TwoPieceNormal { mode, sd_left, sd_right } => (*mode - k * *sd_left, *mode + k * *sd_right),
            BeliefSpec::DiscreteGrid { points, .. } => (points[0], points[points.len() - 1]),
        }
    }

    /// `E_F[h(π)]`.
    ///
    /// Gauss–Hermite with `n` nodes for Gaussian beliefs, exact summation for
    /// grids, and adaptive `n`-point Gauss–Legendre panels on each half of a
    /// two-piece normal truncated at eight scale units.
    pub fn expectation<F>(&self, n: usize, mut h: F) -> Result<T, BeliefError>
    where
        F: FnMut(T) -> T,
    {
        if n < MIN_NODES {
            return Err(BeliefError::TooFewNodes(n));
        }
        let mut eval = |pi: T| -> Result<T, BeliefError> {
            let v = h(pi);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(BeliefError::NonFinite { node: to_f64(pi) })
            }
        };
        match &self.0 {
            BeliefSpec::Gaussian { mean, sd } => {
                let rule = QuadratureRule::<T>::gauss_hermite(n);
                let mut acc = T::zero();
                for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
                    acc += w * eval(*mean + *sd * z)?;
                }
                Ok(acc)
            }
            BeliefSpec::DiscreteGrid { points, probs } => {
                let mut acc = T::zero();
                for (&x, &q) in points.iter().zip(probs) {
                    acc += q * eval(x)?;
                }
                Ok(acc)
            }
            BeliefSpec::TwoPieceNormal { mode, sd_left, sd_right } => {
                let rule = QuadratureRule::<T>::gauss_legendre(n);
                let norm = (lit::<T>(2.0) / T::PI()).sqrt() / (*sd_left + *sd_right);
                let k: T = lit(TRUNCATION_SDS);
                let tol: T = lit::<T>(1e-14).max(T::epsilon() * lit(8.0));
                let mut left = |x: T| -> Result<T, BeliefError> {
                    let z = (x - *mode) / *sd_left;
                    Ok(norm * (-(z * z) * lit(0.5)).exp() * eval(x)?)
                };
                let lo = adaptive_legendre(&rule, *mode - k * *sd_left, *mode, tol, 30, &mut left)?;
                let mut right = |x: T| -> Result<T, BeliefError> {
                    let z = (x - *mode) / *sd_right;
                    Ok(norm * (-(z * z) * lit(0.5)).exp() * eval(x)?)
                };
                let hi = adaptive_legendre(&rule, *mode, *mode + k * *sd_right, tol, 30, &mut right)?;
                Ok(lo + hi)
            }
        }
    }

    /// Probability density (continuous families) or point mass (grid).
    pub fn density(&self, pi: T) -> T {
        match &self.0 {
            BeliefSpec::Gaussian { mean, sd } => {
                let z = (pi - *mean) / *sd;
                (-(z * z) * lit(0.5)).exp() / (*sd * (lit::<T>(2.0) * T::PI()).sqrt())
            }
            BeliefSpec::TwoPieceNormal { mode, sd_left, sd_right } => {
                let norm = (lit::<T>(2.0) / T::PI()).sqrt() / (*sd_left + *sd_right);
                let s = if pi < *mode { *sd_left } else { *sd_right };
                let z = (pi - *mode) / s;
                norm * (-(z * z) * lit(0.5)).exp()
            }
            BeliefSpec::DiscreteGrid { points, probs } => {
                points.iter().zip(probs).find(|(&x, _)| x == pi).map_or(T::zero(), |(_, &q)| q)
            }
        }
    }
}

/// A probability measure over candidate beliefs: the bank's model uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureSpec<T>", into = "MeasureSpec<T>")]
#[serde(bound = "T: Scalar")]
pub struct SecondOrderMeasure<T: Scalar> {
    atoms: Vec<(InflationBelief<T>, T)>,
}

/// One weighted candidate belief in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AtomSpec<T: Scalar> {
    pub weight: T,
    pub belief: InflationBelief<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MeasureSpec<T: Scalar> {
    pub atoms: Vec<AtomSpec<T>>,
}

impl<T: Scalar> TryFrom<MeasureSpec<T>> for SecondOrderMeasure<T> {
    type Error = BeliefError;
    fn try_from(spec: MeasureSpec<T>) -> Result<Self, BeliefError> {
        Self::new(spec.atoms.into_iter().map(|a| (a.belief, a.weight)).collect())
    }
}

impl<T: Scalar> From<SecondOrderMeasure<T>> for MeasureSpec<T> {
    fn from(m: SecondOrderMeasure<T>) -> Self {
        MeasureSpec { atoms: m.atoms.into_iter().map(|(belief, weight)| AtomSpec { weight, belief }).collect() }
    }
}

impl<T: Scalar> SecondOrderMeasure<T> {
    pub fn new(atoms: Vec<(InflationBelief<T>, T)>) -> Result<Self, BeliefError> {
        if atoms.is_empty() {
            return Err(BeliefError::InvalidParameter { name: "atoms", reason: "at least one atom required".into() });
        }
        if atoms.iter().any(|(_, w)| !w.is_finite() || *w < T::zero()) {
            return Err(BeliefError::InvalidParameter { name: "weight", reason: "must be nonnegative".into() });
        }
        let total: T = atoms.iter().map(|(_, w)| *w).sum();
        if (to_f64(total) - 1.0).abs() > PROB_SUM_TOL.max(to_f64(T::epsilon()) * 16.0) {
            return Err(BeliefError::InvalidParameter { name: "weight", reason: format!("weights sum to {total}") });
        }
        Ok(SecondOrderMeasure { atoms })
    }

    pub fn single(belief: InflationBelief<T>) -> Self {
        SecondOrderMeasure { atoms: vec![(belief, T::one())] }
    }

    pub fn atoms(&self) -> &[(InflationBelief<T>, T)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Applies a belief transform atom by atom, keeping the weights.
    pub fn try_map<F>(&self, mut f: F) -> Result<Self, BeliefError>
    where
        F: FnMut(&InflationBelief<T>) -> Result<InflationBelief<T>, BeliefError>,
    {
        let atoms = self.atoms.iter().map(|(b, w)| Ok((f(b)?, *w))).collect::<Result<Vec<_>, BeliefError>>()?;
        Ok(SecondOrderMeasure { atoms })
    }

    /// Pooled measure without renormalisation checks; weights must already sum to one.
    pub(crate) fn from_atoms_unchecked(atoms: Vec<(InflationBelief<T>, T)>) -> Self {
        SecondOrderMeasure { atoms }
    }
}
