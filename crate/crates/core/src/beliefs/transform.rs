use super::{BeliefError, BeliefSpec, InflationBelief};
use crate::scalar::{lit, to_f64, Scalar};

// Skew transfer on grids: split mass off the atom nearest the mean into a far
// upper atom (+4d) and a near lower atom (-d/4) with weights 1:16, which keeps
// the mean. d is half the grid range.
const SKEW_UP_REACH: f64 = 4.0;
const SKEW_DOWN_REACH: f64 = 0.25;

impl<T: Scalar> InflationBelief<T> {
    /// Mean-preserving spread by dilation about the mean: `π ↦ m + s(π − m)`.
    pub fn mps_dilate(&self, s: T) -> Result<Self, BeliefError> {
        if !s.is_finite() || s < T::one() {
            return Err(BeliefError::NotASpread { scale: to_f64(s) });
        }
        if s == T::one() {
            return Ok(self.clone());
        }
        let m = self.mean();
        let spec = match self.spec() {
            BeliefSpec::Gaussian { mean, sd } => BeliefSpec::Gaussian { mean: *mean, sd: *sd * s },
            BeliefSpec::TwoPieceNormal { mode, sd_left, sd_right } => {
                BeliefSpec::TwoPieceNormal { mode: m + s * (*mode - m), sd_left: *sd_left * s, sd_right: *sd_right * s }
            }
            BeliefSpec::DiscreteGrid { points, probs } => BeliefSpec::DiscreteGrid {
                points: points.iter().map(|&x| m + s * (x - m)).collect(),
                probs: probs.clone(),
            },
        };
        spec.try_into()
    }

    /// Mean-preserving increase in positive skewness with intensity `lambda`.
    ///
    /// Two-piece normal: `sd_right·e^λ`, `sd_left·e^-λ`, mode moved to hold the
    /// mean. Grid: a fraction `lambda ∈ [0, 1]` of the mass on the atom nearest
    /// the mean is split into a far upper atom and a near lower atom.
    pub fn skew_shift(&self, lambda: T) -> Result<Self, BeliefError> {
        if !lambda.is_finite() || lambda < T::zero() {
            return Err(BeliefError::InvalidParameter {
                name: "lambda",
                reason: format!("must be >= 0, got {lambda}"),
            });
        }
        match self.spec() {
            BeliefSpec::Gaussian { .. } => Err(BeliefError::UnsupportedFamily { op: "skew_shift", family: "gaussian" }),
            _ if lambda == T::zero() => Ok(self.clone()),
            BeliefSpec::TwoPieceNormal { sd_left, sd_right, .. } => {
                let mean = self.mean();
                let sd_right = *sd_right * lambda.exp();
                let sd_left = *sd_left * (-lambda).exp();
                let offset = (lit::<T>(2.0) / T::PI()).sqrt() * (sd_right - sd_left);
                InflationBelief::two_piece_normal(mean - offset, sd_left, sd_right)
            }
            BeliefSpec::DiscreteGrid { points, probs } => {
                if lambda > T::one() {
                    return Err(BeliefError::NegativeProbability { lambda: to_f64(lambda) });
                }
                if points.len() < 2 {
                    return Err(BeliefError::InvalidParameter {
                        name: "points",
                        reason: "skew shift needs at least two grid points".into(),
                    });
                }
                let mean = self.mean();
                let half_range = (points[points.len() - 1] - points[0]) * lit(0.5);
                let centre = points
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (*a.1 - mean).abs().partial_cmp(&(*b.1 - mean).abs()).expect("finite grid"))
                    .map(|(i, _)| i)
                    .expect("non-empty grid");
                let moved = probs[centre] * lambda;
                let up_w = moved / lit(17.0);
                let down_w = moved - up_w;
                let up_x = points[centre] + half_range * lit(SKEW_UP_REACH);
                let down_x = points[centre] - half_range * lit(SKEW_DOWN_REACH);

                let mut atoms: Vec<(T, T)> = points.iter().copied().zip(probs.iter().copied()).collect();
                atoms[centre].1 = probs[centre] - moved;
                atoms.push((up_x, up_w));
                atoms.push((down_x, down_w));
                atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite grid"));
                let mut merged: Vec<(T, T)> = Vec::with_capacity(atoms.len());
                for (x, q) in atoms {
                    match merged.last_mut() {
                        Some(last) if last.0 == x => last.1 += q,
                        _ => merged.push((x, q)),
                    }
                }
                let (points, probs) = merged.into_iter().unzip();
                InflationBelief::discrete_grid(points, probs)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn three_point() -> InflationBelief<f64> {
        InflationBelief::discrete_grid(vec![0.0, 0.02, 0.04], vec![0.25, 0.5, 0.25]).unwrap()
    }

    #[test]
    fn dilation_identity_and_gaussian_closure() {
        let b = InflationBelief::gaussian(0.02, 0.01).unwrap();
        assert_eq!(b.mps_dilate(1.0).unwrap(), b);
        assert_eq!(b.mps_dilate(2.0).unwrap(), InflationBelief::gaussian(0.02, 0.02).unwrap());
    }

    #[test]
    fn dilation_of_grid_scales_variance() {
        let b = InflationBelief::discrete_grid(vec![-0.01, 0.015, 0.05], vec![0.2, 0.5, 0.3]).unwrap();
        let d = b.mps_dilate(1.5).unwrap();
        // Oracle: direct summation over the rescaled points.
        let BeliefSpec::DiscreteGrid { points, probs } = d.spec() else { panic!() };
        let mean: f64 = points.iter().zip(probs).map(|(x, q)| x * q).sum();
        let var: f64 = points.iter().zip(probs).map(|(x, q)| q * (x - mean).powi(2)).sum();
        assert!((mean - b.mean()).abs() < 1e-12);
        assert_relative_eq!(var, 2.25 * b.variance(), max_relative = 1e-10);
    }

    #[test]
    fn dilation_rejects_contraction() {
        let b = three_point();
        assert_eq!(b.mps_dilate(0.9).unwrap_err(), BeliefError::NotASpread { scale: 0.9 });
    }

    #[test]
    fn skew_shift_zero_is_identity() {
        let b = three_point();
        assert_eq!(b.skew_shift(0.0).unwrap(), b);
        let t = InflationBelief::two_piece_normal(0.02, 0.01, 0.01).unwrap();
        assert_eq!(t.skew_shift(0.0).unwrap(), t);
    }

    #[test]
    fn skew_shift_symmetric_grid_becomes_right_skewed() {
        let b = three_point();
        let s = b.skew_shift(0.2).unwrap();
        let BeliefSpec::DiscreteGrid { points, probs } = s.spec() else { panic!() };
        let mean: f64 = points.iter().zip(probs).map(|(x, q)| x * q).sum();
        let mu3: f64 = points.iter().zip(probs).map(|(x, q)| q * (x - mean).powi(3)).sum();
        assert!((mean - 0.02).abs() < 1e-12);
        assert!(mu3 > 0.0);
        assert!(s.moments().skewness > 0.0);
    }

    #[test]
    fn skew_shift_third_moment_increases() {
        let b = three_point();
        let mut last = b.moments().third_central;
        for lam in [0.1, 0.2, 0.5, 1.0] {
            let m = b.skew_shift(lam).unwrap().moments();
            assert!(m.third_central > last);
            last = m.third_central;
        }
        assert_eq!(b.skew_shift(1.1).unwrap_err(), BeliefError::NegativeProbability { lambda: 1.1 });
    }

    #[test]
    fn skew_shift_two_piece_normal_holds_mean() {
        let b = InflationBelief::<f64>::two_piece_normal(0.02, 0.01, 0.012).unwrap();
        let s = b.skew_shift(0.3).unwrap();
        let BeliefSpec::TwoPieceNormal { sd_left, sd_right, .. } = s.spec() else { panic!() };
        assert!(*sd_right > 0.012 && *sd_left < 0.01);
        // Oracle: adaptive quadrature of π under the shifted density.
        let mean = s.expectation(20, |p| p).unwrap();
        assert!((mean - b.mean()).abs() < 1e-10);
        assert!(s.moments().third_central > b.moments().third_central);
    }

    #[test]
    fn skew_shift_rejects_gaussian() {
        let b = InflationBelief::gaussian(0.02, 0.01).unwrap();
        assert!(matches!(b.skew_shift(0.1), Err(BeliefError::UnsupportedFamily { .. })));
    }
}
