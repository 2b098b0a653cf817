//! Finite-library check of the skewness order: `F̃ ≽ F` when every
//! non-increasing concave test function has a weakly lower mean under `F̃`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{BeliefError, InflationBelief};
use crate::scalar::{lit, to_f64, Scalar};

pub const MEAN_MATCH_TOL: f64 = 1e-8;
pub const VIOLATION_SLACK: f64 = 1e-10;
pub const STRICT_MARGIN: f64 = 1e-12;
pub const DEFAULT_LIBRARY_SIZE: usize = 200;

/// `g(π) = intercept + slope·π − Σ drop_j·(π − knot_j)⁺` with `slope ≤ 0`,
/// `drop_j ≥ 0`: non-increasing and concave by construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseConcave<T> {
    pub intercept: T,
    pub slope: T,
    pub hinges: Vec<(T, T)>,
}

impl<T: Scalar> PiecewiseConcave<T> {
    pub fn eval(&self, pi: T) -> T {
        let mut v = self.intercept + self.slope * pi;
        for &(knot, drop) in &self.hinges {
            if pi > knot {
                v -= drop * (pi - knot);
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct TestLibrary<T> {
    pub functions: Vec<PiecewiseConcave<T>>,
}

impl<T: Scalar> TestLibrary<T> {
    /// `size` random functions with one to four knots uniform on `[lo, hi]`.
    pub fn seeded(size: usize, lo: T, hi: T, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = (to_f64(lo), to_f64(hi));
        let width = (hi - lo).max(f64::EPSILON);
        let functions = (0..size)
            .map(|_| {
                let k = rng.random_range(1..=4);
                let mut hinges: Vec<(T, T)> = (0..k)
                    .map(|_| {
                        let knot = lo + width * rng.random::<f64>();
                        let drop = rng.random_range(0.05..1.0);
                        (lit(knot), lit(drop))
                    })
                    .collect();
                hinges.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite knots"));
                PiecewiseConcave { intercept: T::zero(), slope: lit(-rng.random::<f64>() * 0.5), hinges }
            })
            .collect();
        TestLibrary { functions }
    }

    /// Library whose knots span the joint support of two beliefs.
    pub fn for_pair(a: &InflationBelief<T>, b: &InflationBelief<T>, seed: u64) -> Self {
        let (lo_a, hi_a) = a.support();
        let (lo_b, hi_b) = b.support();
        Self::seeded(DEFAULT_LIBRARY_SIZE, lo_a.min(lo_b), hi_a.max(hi_b), seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SkOrderVerdict<T> {
    /// Weak inequality everywhere, strict for `witness`.
    Holds {
        witness: usize,
        margin: f64,
    },
    /// Weak inequality everywhere, never strict (e.g. identical beliefs).
    HoldsWeakly,
    Violated {
        witness: usize,
        function: PiecewiseConcave<T>,
        excess: f64,
    },
}

impl<T> SkOrderVerdict<T> {
    pub fn holds(&self) -> bool {
        matches!(self, SkOrderVerdict::Holds { .. })
    }
}

/// Checks `shifted ≽_sk base` against every function in `tests`.
pub fn check_sk_order<T: Scalar>(
    base: &InflationBelief<T>,
    shifted: &InflationBelief<T>,
    tests: &TestLibrary<T>,
    nodes: usize,
) -> Result<SkOrderVerdict<T>, BeliefError> {
    let (m0, m1) = (to_f64(base.mean()), to_f64(shifted.mean()));
    if (m0 - m1).abs() > MEAN_MATCH_TOL {
        return Err(BeliefError::MeanMismatch { left: m0, right: m1 });
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in tests.functions.iter().enumerate() {
        let e_base = to_f64(base.expectation(nodes, |p| g.eval(p))?);
        let e_shift = to_f64(shifted.expectation(nodes, |p| g.eval(p))?);
        let gap = e_base - e_shift;
        if gap < -VIOLATION_SLACK {
            return Ok(SkOrderVerdict::Violated { witness: i, function: g.clone(), excess: -gap });
        }
        if gap > STRICT_MARGIN && best.is_none_or(|(_, m)| gap > m) {
            best = Some((i, gap));
        }
    }
    Ok(match best {
        Some((witness, margin)) => SkOrderVerdict::Holds { witness, margin },
        None => SkOrderVerdict::HoldsWeakly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(points: [f64; 3], probs: [f64; 3]) -> InflationBelief<f64> {
        InflationBelief::discrete_grid(points.to_vec(), probs.to_vec()).unwrap()
    }

    #[test]
    fn library_functions_are_non_increasing_and_concave() {
        let lib = TestLibrary::<f64>::seeded(200, -0.05, 0.15, 11);
        assert_eq!(lib.functions.len(), 200);
        let xs: Vec<f64> = (0..400).map(|i| -0.06 + i as f64 * 0.0006).collect();
        for g in &lib.functions {
            let v: Vec<f64> = xs.iter().map(|&x| g.eval(x)).collect();
            for w in v.windows(2) {
                assert!(w[1] <= w[0] + 1e-15);
            }
            for w in v.windows(3) {
                assert!(w[0] + w[2] - 2.0 * w[1] <= 1e-12);
            }
        }
    }

    #[test]
    fn identical_beliefs_hold_weakly() {
        let f = grid([0.0, 0.02, 0.04], [0.25, 0.5, 0.25]);
        let lib = TestLibrary::for_pair(&f, &f, 3);
        assert_eq!(check_sk_order(&f, &f, &lib, 32).unwrap(), SkOrderVerdict::HoldsWeakly);
    }

    #[test]
    fn skew_shift_is_ordered_on_three_point_grids() {
        // Exhaustive over a family of 3-point grids and a positive λ grid.
        for (a, b, c) in [(0.0, 0.02, 0.04), (-0.01, 0.01, 0.05), (0.005, 0.02, 0.03)] {
            for (p, q) in [(0.25, 0.5), (0.4, 0.3), (0.1, 0.6)] {
                let f = grid([a, b, c], [p, q, 1.0 - p - q]);
                for lam in [0.05, 0.1, 0.2, 0.5, 1.0] {
                    let g = f.skew_shift(lam).unwrap();
                    let lib = TestLibrary::for_pair(&f, &g, 17);
                    let v = check_sk_order(&f, &g, &lib, 32).unwrap();
                    assert!(v.holds(), "{a} {b} {c} {p} {q} λ={lam}: {v:?}");
                }
            }
        }
    }

    #[test]
    fn reversed_pair_is_violated() {
        let f = grid([0.0, 0.02, 0.04], [0.25, 0.5, 0.25]);
        let g = f.skew_shift(0.3).unwrap();
        let lib = TestLibrary::for_pair(&f, &g, 5);
        let v = check_sk_order(&g, &f, &lib, 32).unwrap();
        assert!(matches!(v, SkOrderVerdict::Violated { .. }));
    }

    #[test]
    fn mean_mismatch_is_rejected() {
        let f = grid([0.0, 0.02, 0.04], [0.25, 0.5, 0.25]);
        let shifted = InflationBelief::discrete_grid(vec![0.01, 0.03, 0.05], vec![0.25, 0.5, 0.25])
            .unwrap()
            .mps_dilate(1.5)
            .unwrap();
        let lib = TestLibrary::for_pair(&f, &shifted, 1);
        assert!(matches!(check_sk_order(&f, &shifted, &lib, 32), Err(BeliefError::MeanMismatch { .. })));
    }
}
