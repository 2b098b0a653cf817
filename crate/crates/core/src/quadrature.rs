//! Fixed Gauss rules and an adaptive composite Gauss–Legendre integrator.
//!
//! Nodes are always computed in `f64` by Newton iteration on the three-term
//! recurrences and then cast to the working scalar.

use crate::scalar::{lit, Scalar};

const NEWTON_EPS: f64 = 3.0e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> QuadratureRule<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gauss–Hermite rule for the standard normal density: `E[h(Z)] ≈ Σ wᵢ h(zᵢ)`,
    /// with weights summing to one.
    pub fn gauss_hermite(n: usize) -> Self {
        let (x, w) = hermite_physicists(n);
        let sqrt2 = std::f64::consts::SQRT_2;
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        QuadratureRule {
            nodes: x.iter().map(|&z| lit(z * sqrt2)).collect(),
            weights: w.iter().map(|&v| lit(v * inv_sqrt_pi)).collect(),
        }
    }

    /// Gauss–Legendre rule on `[-1, 1]`.
    pub fn gauss_legendre(n: usize) -> Self {
        let (x, w) = legendre(n);
        QuadratureRule { nodes: x.into_iter().map(lit).collect(), weights: w.into_iter().map(lit).collect() }
    }

    /// Applies the Legendre rule to `[a, b]`.
    pub fn integrate_interval<E, F>(&self, a: T, b: T, f: &mut F) -> Result<T, E>
    where
        F: FnMut(T) -> Result<T, E>,
    {
        let half = (b - a) * lit(0.5);
        let mid = (a + b) * lit(0.5);
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x)?;
        }
        Ok(acc * half)
    }
}

fn hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Root-finding with the orthonormal recurrence avoids overflow for large n.
    let pim4 = 0.751_125_544_464_942_5_f64;
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0_f64;
    for i in 1..=m {
        z = match i {
            1 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            2 => z - 1.14 * nf.powf(0.426) / z,
            3 => 1.86 * z - 0.86 * x[0],
            4 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 3],
        };
        let mut pp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= NEWTON_EPS {
                break;
            }
        }
        x[i - 1] = z;
        x[n - i] = -z;
        w[i - 1] = 2.0 / (pp * pp);
        w[n - i] = w[i - 1];
    }
    (x, w)
}

fn legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 1..=m {
        let mut z = (std::f64::consts::PI * (i as f64 - 0.25) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= NEWTON_EPS {
                break;
            }
        }
        x[i - 1] = -z;
        x[n - i] = z;
        w[i - 1] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - i] = w[i - 1];
    }
    (x, w)
}

/// Adaptive composite Gauss–Legendre integration of `f` over `[a, b]`.
///
/// Each panel is compared with the sum over its two halves; panels are split
/// until the difference falls under the (halved per level) absolute tolerance
/// or `max_depth` is hit.
pub fn adaptive_legendre<T, E, F>(
    rule: &QuadratureRule<T>,
    a: T,
    b: T,
    tol: T,
    max_depth: usize,
    f: &mut F,
) -> Result<T, E>
where
    T: Scalar,
    F: FnMut(T) -> Result<T, E>,
{
    let whole = rule.integrate_interval(a, b, f)?;
    refine(rule, a, b, whole, tol, max_depth, f)
}

fn refine<T, E, F>(rule: &QuadratureRule<T>, a: T, b: T, whole: T, tol: T, depth: usize, f: &mut F) -> Result<T, E>
where
    T: Scalar,
    F: FnMut(T) -> Result<T, E>,
{
    let mid = (a + b) * lit(0.5);
    let left = rule.integrate_interval(a, mid, f)?;
    let right = rule.integrate_interval(mid, b, f)?;
    let split = left + right;
    if depth == 0 || (split - whole).abs() <= tol {
        return Ok(split);
    }
    let half_tol = tol * lit(0.5);
    Ok(refine(rule, a, mid, left, half_tol, depth - 1, f)? + refine(rule, mid, b, right, half_tol, depth - 1, f)?)
}
