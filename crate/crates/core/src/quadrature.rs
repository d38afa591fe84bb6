//! Gauss quadrature rules on `[0, 1]`.
//!
//! Rules are generated with the Golub–Welsch construction from the
//! three-term recurrence of the Jacobi polynomials, so the weights directly
//! integrate against a Beta density. Gauss–Legendre is the `Beta(1, 1)` case.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// Implicit-shift QL on a symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (`e[i]` couples `i` and `i + 1`, last entry unused).
///
/// On return `d` holds the eigenvalues and `z[i]` the first component of the
/// `i`-th eigenvector when `z` starts as the first unit vector.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], z: &mut [f64]) {
    let n = d.len();
    if n == 0 {
        return;
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        for _ in 0..200 {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if !deflated {
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
    }
}

/// Nodes and weights of a quadrature rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss rule for the probability measure `Beta(a, b)` on `[0, 1]`.
    ///
    /// Exact for polynomials of degree `2 * nodes - 1` against the Beta
    /// density; the weights sum to one.
    pub fn gauss_beta(a: f64, b: f64, nodes: usize) -> Self {
        assert!(a > 0.0 && b > 0.0, "Beta parameters must be positive");
        assert!(nodes >= 1, "need at least one node");
        // Jacobi weight (1 - x)^al (1 + x)^be on [-1, 1] with rho = (1 + x) / 2.
        let al = b - 1.0;
        let be = a - 1.0;
        let s = al + be;
        let mut diag = vec![0.0; nodes];
        let mut off = vec![0.0; nodes];
        for n in 0..nodes {
            let nf = n as f64;
            diag[n] = if n == 0 {
                (be - al) / (s + 2.0)
            } else {
                (be * be - al * al) / ((2.0 * nf + s) * (2.0 * nf + s + 2.0))
            };
            if n + 1 < nodes {
                let k = nf + 1.0;
                let num = 4.0 * k * (k + al) * (k + be) * (k + s);
                let den = (2.0 * k + s).powi(2) * (2.0 * k + s + 1.0) * (2.0 * k + s - 1.0);
                off[n] = (num / den).sqrt();
            }
        }
        let mut first = vec![0.0; nodes];
        first[0] = 1.0;
        tridiagonal_ql(&mut diag, &mut off, &mut first);
        let mut pairs: Vec<(f64, f64)> = (0..nodes).map(|i| ((1.0 + diag[i]) / 2.0, first[i] * first[i])).collect();
        pairs.sort_by(|l, r| l.0.total_cmp(&r.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        QuadratureRule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    /// Gauss–Legendre rule for Lebesgue measure on `[lo, hi]`.
    pub fn gauss_legendre(lo: f64, hi: f64, nodes: usize) -> Self {
        let unit = Self::gauss_beta(1.0, 1.0, nodes);
        let len = hi - lo;
        QuadratureRule {
            nodes: unit.nodes.iter().map(|x| lo + len * x).collect(),
            weights: unit.weights.iter().map(|w| w * len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut integrand: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * integrand(x))
            .sum()
    }

    /// Concatenates two rules (the union of their weighted nodes).
    pub fn merged(mut self, other: QuadratureRule) -> Self {
        self.nodes.extend(other.nodes);
        self.weights.extend(other.weights);
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for w in &mut self.weights {
            *w *= factor;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = QuadratureRule::gauss_legendre(0.0, 1.0, 6);
        for k in 0..12 {
            let got = rule.integrate(|x| x.powi(k));
            assert!((got - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "k = {k}");
        }
    }

    #[test]
    fn beta_rule_reproduces_beta_moments() {
        // Beta(3/2, 3/2): E[rho] = 1/2, E[rho^2] = 5/16, E[rho^3] = 7/32.
        let rule = QuadratureRule::gauss_beta(1.5, 1.5, 8);
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((rule.integrate(|x| x) - 0.5).abs() < 1e-14);
        assert!((rule.integrate(|x| x * x) - 5.0 / 16.0).abs() < 1e-14);
        assert!((rule.integrate(|x| x * x * x) - 7.0 / 32.0).abs() < 1e-14);
    }

    #[test]
    fn singular_beta_weight() {
        // Beta(0.5, 2.5) has a rho^{-1/2} endpoint singularity; mean = a / (a + b).
        let rule = QuadratureRule::gauss_beta(0.5, 2.5, 40);
        assert!((rule.integrate(|x| x) - 0.5 / 3.0).abs() < 1e-13);
        assert!(rule.nodes.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}
