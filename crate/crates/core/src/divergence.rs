//! Operator-convex f-divergences.
//!
//! Every generator in the catalog is normalized so that `f(1) = f'(1) = 0` and
//! `f''(1) = 1`, and admits the mixture representation
//!
//! ```text
//! f(t) = ∫₀¹ ½ (t − 1)² / (ρ t + 1 − ρ) dν(ρ)
//! ```
//!
//! for a probability measure `ν` on `[0, 1]`. The spectral estimators only
//! need the scalar companion `h(t) = f(t) / (t − 1)²` (and its derivative);
//! the mixing measure is kept around to build quadrature oracles and the
//! Taylor series of `h` at `t = 1`.

use alloc::vec::Vec;
use core::f64::consts::{LN_2, PI};
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// `|t − 1|` below which `h` switches to its Taylor series.
pub const H_SERIES_SWITCH: f64 = 1e-4;
/// `|t − 1|` below which `h'` switches to its Taylor series.
const H_PRIME_SERIES_SWITCH: f64 = 1e-2;
const SERIES_TERMS: usize = 24;
/// Default node count of the `ν` quadrature oracle.
pub const DEFAULT_QUADRATURE_NODES: usize = 400;

/// Catalog of supported divergences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Kl,
    ReverseKl,
    SquaredHellinger,
    Pearson,
    ReversePearson,
    LeCam,
    JensenShannon,
    /// α-divergence, `α ∈ [−1, 2]`.
    Alpha(f64),
}

impl Divergence {
    /// Maps `Alpha` at its special values onto the named entries.
    fn canonical(self) -> Result<Self> {
        match self {
            Divergence::Alpha(a) => {
                if !(-1.0..=2.0).contains(&a) || a.is_nan() {
                    return Err(Error::UnsupportedAlpha(a));
                }
                Ok(if a == 1.0 {
                    Divergence::Kl
                } else if a == 0.0 {
                    Divergence::ReverseKl
                } else if a == 0.5 {
                    Divergence::SquaredHellinger
                } else if a == 2.0 {
                    Divergence::Pearson
                } else if a == -1.0 {
                    Divergence::ReversePearson
                } else {
                    self
                })
            }
            other => Ok(other),
        }
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Kl => f.write_str("kl"),
            Divergence::ReverseKl => f.write_str("rkl"),
            Divergence::SquaredHellinger => f.write_str("hellinger"),
            Divergence::Pearson => f.write_str("pearson"),
            Divergence::ReversePearson => f.write_str("rpearson"),
            Divergence::LeCam => f.write_str("lecam"),
            Divergence::JensenShannon => f.write_str("js"),
            Divergence::Alpha(a) => write!(f, "alpha:{a}"),
        }
    }
}

impl FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "kl" => Ok(Divergence::Kl),
            "rkl" => Ok(Divergence::ReverseKl),
            "hellinger" => Ok(Divergence::SquaredHellinger),
            "pearson" => Ok(Divergence::Pearson),
            "rpearson" => Ok(Divergence::ReversePearson),
            "lecam" => Ok(Divergence::LeCam),
            "js" => Ok(Divergence::JensenShannon),
            _ => {
                let value = s
                    .strip_prefix("alpha:")
                    .ok_or(Error::InvalidArgument("unknown divergence name"))?;
                let a: f64 = value
                    .parse()
                    .map_err(|_| Error::InvalidArgument("alpha must be a number"))?;
                Divergence::Alpha(a).canonical()
            }
        }
    }
}

/// Absolutely continuous part of a mixing measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    /// `Beta(a, b)` probability density.
    Beta { a: f64, b: f64 },
    /// `2 − 2|1 − 2ρ|`.
    Triangle,
}

impl Density {
    fn moment(&self, k: usize) -> f64 {
        match *self {
            Density::Beta { a, b } => (0..k).map(|i| (a + i as f64) / (a + b + i as f64)).product(),
            Density::Triangle => {
                let kf = k as f64;
                let half = 0.5f64;
                4.0 * half.powi(k as i32 + 2) / (kf + 2.0)
                    + 4.0
                        * ((1.0 - half.powi(k as i32 + 1)) / (kf + 1.0)
                            - (1.0 - half.powi(k as i32 + 2)) / (kf + 2.0))
            }
        }
    }

    fn rule(&self, nodes: usize) -> QuadratureRule {
        match *self {
            Density::Beta { a, b } => QuadratureRule::gauss_beta(a, b, nodes),
            Density::Triangle => {
                let half = (nodes / 2).max(1);
                let mut left = QuadratureRule::gauss_legendre(0.0, 0.5, half);
                for (x, w) in left.nodes.iter().zip(left.weights.iter_mut()) {
                    *w *= 4.0 * x;
                }
                let mut right = QuadratureRule::gauss_legendre(0.5, 1.0, half);
                for (x, w) in right.nodes.iter().zip(right.weights.iter_mut()) {
                    *w *= 4.0 * (1.0 - x);
                }
                left.merged(right)
            }
        }
    }
}

/// Probability measure `ν` on `[0, 1]`: point masses plus an optional density.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMeasure {
    /// `(ρ, weight)` point masses.
    pub atoms: Vec<(f64, f64)>,
    pub density: Option<Density>,
    /// Oracle resolution for [`MixingMeasure::integrate`].
    pub quadrature_nodes: usize,
}

impl MixingMeasure {
    fn atom(rho: f64) -> Self {
        MixingMeasure {
            atoms: alloc::vec![(rho, 1.0)],
            density: None,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
        }
    }

    fn density(density: Density) -> Self {
        MixingMeasure {
            atoms: Vec::new(),
            density: Some(density),
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
        }
    }

    fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    fn density_mass(&self) -> f64 {
        if self.density.is_some() {
            1.0 - self.atom_mass()
        } else {
            0.0
        }
    }

    /// Total mass; one for every catalog entry.
    pub fn total_mass(&self) -> f64 {
        self.atom_mass() + self.density_mass()
    }

    /// `∫ ρ^k dν(ρ)`.
    pub fn moment(&self, k: usize) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|&(r, w)| w * r.powi(k as i32)).sum();
        let dens = self
            .density
            .map_or(0.0, |d| self.density_mass() * d.moment(k));
        atoms + dens
    }

    /// Quadrature rule representing `ν`: the atoms verbatim plus a Gauss rule
    /// with `nodes` points on the density part.
    pub fn rule(&self, nodes: usize) -> QuadratureRule {
        let atoms = QuadratureRule {
            nodes: self.atoms.iter().map(|a| a.0).collect(),
            weights: self.atoms.iter().map(|a| a.1).collect(),
        };
        match self.density {
            Some(d) => atoms.merged(d.rule(nodes).scaled(self.density_mass())),
            None => atoms,
        }
    }

    /// `∫₀¹ integrand(ρ) dν(ρ)` at the default resolution.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, integrand: F) -> f64 {
        self.rule(self.quadrature_nodes).integrate(integrand)
    }
}

/// A catalog divergence with its scalar companions.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceSpec {
    kind: Divergence,
    nu: MixingMeasure,
    /// `∫ ρ^k dν` for `k = 0..SERIES_TERMS`.
    nu_moments: Vec<f64>,
}

/// Builds a divergence spec; `Alpha` values are validated and aliased.
pub fn make_divergence(kind: Divergence) -> Result<DivergenceSpec> {
    DivergenceSpec::new(kind)
}

impl DivergenceSpec {
    pub fn new(kind: Divergence) -> Result<Self> {
        let kind = kind.canonical()?;
        let nu = match kind {
            Divergence::Kl => MixingMeasure::density(Density::Beta { a: 1.0, b: 2.0 }),
            Divergence::ReverseKl => MixingMeasure::density(Density::Beta { a: 2.0, b: 1.0 }),
            Divergence::SquaredHellinger => {
                MixingMeasure::density(Density::Beta { a: 1.5, b: 1.5 })
            }
            Divergence::Pearson => MixingMeasure::atom(0.0),
            Divergence::ReversePearson => MixingMeasure::atom(1.0),
            Divergence::LeCam => MixingMeasure::atom(0.5),
            Divergence::JensenShannon => MixingMeasure::density(Density::Triangle),
            // (2/α) sin((α−1)π)/((α−1)π) (1−ρ)^α ρ^(1−α) is the Beta(2−α, 1+α) density.
            Divergence::Alpha(a) => MixingMeasure::density(Density::Beta {
                a: 2.0 - a,
                b: 1.0 + a,
            }),
        };
        let nu_moments = (0..=SERIES_TERMS).map(|k| nu.moment(k)).collect();
        Ok(DivergenceSpec {
            kind,
            nu,
            nu_moments,
        })
    }

    pub fn kind(&self) -> Divergence {
        self.kind
    }

    pub fn name(&self) -> alloc::string::String {
        alloc::format!("{}", self.kind)
    }

    pub fn nu(&self) -> &MixingMeasure {
        &self.nu
    }

    pub fn nu_mut(&mut self) -> &mut MixingMeasure {
        &mut self.nu
    }

    /// Generator `f(t)`, `t > 0`.
    pub fn f(&self, t: f64) -> f64 {
        let e = t - 1.0;
        e * e * self.h_unchecked(t)
    }

    /// `f'(t)`, `t > 0`.
    pub fn f_prime(&self, t: f64) -> f64 {
        match self.kind {
            Divergence::Kl => t.ln(),
            Divergence::ReverseKl => 1.0 - 1.0 / t,
            Divergence::SquaredHellinger => 2.0 * (1.0 - 1.0 / t.sqrt()),
            Divergence::Pearson => t - 1.0,
            Divergence::ReversePearson => 0.5 * (1.0 - 1.0 / (t * t)),
            Divergence::LeCam => (t - 1.0) * (t + 3.0) / ((t + 1.0) * (t + 1.0)),
            Divergence::JensenShannon => 2.0 * (2.0 * t / (t + 1.0)).ln(),
            Divergence::Alpha(a) => (t.powf(a - 1.0) - 1.0) / (a - 1.0),
        }
    }

    /// Fenchel conjugate `f*(u)` on its largest domain; `None` where it is `+∞`.
    pub fn f_conj(&self, u: f64) -> Option<f64> {
        match self.kind {
            Divergence::Kl => Some(u.exp() - 1.0),
            Divergence::ReverseKl => (u < 1.0).then(|| -(-u).ln_1p()),
            Divergence::SquaredHellinger => (u < 2.0).then(|| u / (1.0 - u / 2.0)),
            Divergence::Pearson => Some(u * u / 2.0 + u),
            Divergence::ReversePearson => (u <= 0.5).then(|| 1.0 - (1.0 - 2.0 * u).sqrt()),
            Divergence::LeCam => (u <= 1.0).then(|| 4.0 - u - 4.0 * (1.0 - u).sqrt()),
            Divergence::JensenShannon => {
                (u < 2.0 * LN_2).then(|| -2.0 * (2.0 - (u / 2.0).exp()).ln())
            }
            Divergence::Alpha(a) => {
                let base = 1.0 + (a - 1.0) * u;
                let expo = a / (a - 1.0);
                if a > 1.0 {
                    // f is only defined on t ≥ 0; below f'(0+) the conjugate is −f(0).
                    Some((-1.0 + base.max(0.0).powf(expo)) / a)
                } else if a < 0.0 {
                    (base >= 0.0).then(|| (-1.0 + base.powf(expo)) / a)
                } else {
                    (base > 0.0).then(|| (-1.0 + base.powf(expo)) / a)
                }
            }
        }
    }

    /// `h(t) = f(t) / (t − 1)²`, continuously extended by `1/2` at `t = 1`.
    pub fn eval_h(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(t));
        }
        Ok(self.h_unchecked(t))
    }

    /// Three-term Taylor expansion of `h` at `t = 1`.
    pub fn h_series(&self, t: f64) -> f64 {
        let e = t - 1.0;
        let m = &self.nu_moments;
        0.5 - 0.5 * m[1] * e + 0.5 * m[2] * e * e
    }

    pub(crate) fn h_unchecked(&self, t: f64) -> f64 {
        let e = t - 1.0;
        if e.abs() < H_SERIES_SWITCH {
            return self.h_series(t);
        }
        let e2 = e * e;
        match self.kind {
            Divergence::Kl if t < 0.5 => (t * t.ln() - e) / e2,
            Divergence::Kl => ((1.0 + e) * e.ln_1p() - e) / e2,
            Divergence::ReverseKl if t < 0.5 => (e - t.ln()) / e2,
            Divergence::ReverseKl => (e - e.ln_1p()) / e2,
            Divergence::SquaredHellinger => {
                let s = t.sqrt() + 1.0;
                2.0 / (s * s)
            }
            Divergence::Pearson => 0.5,
            Divergence::ReversePearson => 0.5 / t,
            Divergence::LeCam => 1.0 / (t + 1.0),
            Divergence::JensenShannon if t < 0.5 => {
                (2.0 * t * (2.0 * t / (t + 1.0)).ln() - 2.0 * ((t + 1.0) / 2.0).ln()) / e2
            }
            Divergence::JensenShannon => {
                (2.0 * (1.0 + e) * (e / (2.0 + e)).ln_1p() - 2.0 * (e / 2.0).ln_1p()) / e2
            }
            Divergence::Alpha(a) => ((a * e.ln_1p()).exp_m1() - a * e) / (a * (a - 1.0) * e2),
        }
    }

    /// `h'(t)`, `t > 0`.
    pub fn h_prime(&self, t: f64) -> f64 {
        let e = t - 1.0;
        match self.kind {
            Divergence::Pearson => return 0.0,
            Divergence::ReversePearson => return -0.5 / (t * t),
            Divergence::LeCam => return -1.0 / ((t + 1.0) * (t + 1.0)),
            Divergence::SquaredHellinger => {
                let s = t.sqrt();
                return -2.0 / (s * (s + 1.0).powi(3));
            }
            _ => {}
        }
        if e.abs() < H_PRIME_SERIES_SWITCH {
            // h(1 + e) = ½ Σ_k (−e)^k m_k
            let m = &self.nu_moments;
            let mut acc = 0.0;
            let mut pow = 1.0;
            for (k, mk) in m.iter().enumerate().skip(1) {
                let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
                acc += sign * k as f64 * mk * pow;
                pow *= e;
            }
            return 0.5 * acc;
        }
        (self.f_prime(t) * e - 2.0 * self.f(t)) / (e * e * e)
    }

    /// `g(t) = t h(t)`.
    pub fn g(&self, t: f64) -> f64 {
        t * self.h_unchecked(t)
    }

    /// `g'(t) = h(t) + t h'(t)`.
    pub fn g_prime(&self, t: f64) -> f64 {
        self.h_unchecked(t) + t * self.h_prime(t)
    }

    /// Density `dν/dρ` of the absolutely continuous part, if any (for plots and tests).
    pub fn nu_density(&self, rho: f64) -> Option<f64> {
        let mass = self.nu.density_mass();
        self.nu.density.map(|d| match d {
            Density::Beta { a, b } => {
                let beta = gamma(a) * gamma(b) / gamma(a + b);
                mass * rho.powf(a - 1.0) * (1.0 - rho).powf(b - 1.0) / beta
            }
            Density::Triangle => mass * (2.0 - 2.0 * (1.0 - 2.0 * rho).abs()),
        })
    }
}

/// `∫₀¹ integrand(ρ) dν(ρ)` by the spec's mixing-measure quadrature.
pub fn nu_quadrature_integral<F: FnMut(f64) -> f64>(spec: &DivergenceSpec, integrand: F) -> f64 {
    spec.nu.integrate(integrand)
}

/// Lanczos approximation of the gamma function (g = 7, n = 9).
fn gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn catalog() -> Vec<DivergenceSpec> {
        [
            Divergence::Kl,
            Divergence::ReverseKl,
            Divergence::SquaredHellinger,
            Divergence::Pearson,
            Divergence::ReversePearson,
            Divergence::LeCam,
            Divergence::JensenShannon,
            Divergence::Alpha(-0.5),
            Divergence::Alpha(0.3),
            Divergence::Alpha(1.5),
        ]
        .into_iter()
        .map(|d| DivergenceSpec::new(d).unwrap())
        .collect()
    }

    #[test]
    fn kl_companions() {
        let kl = DivergenceSpec::new(Divergence::Kl).unwrap();
        assert_eq!(kl.f_conj(0.7), Some(0.7f64.exp() - 1.0));
        assert_eq!(kl.nu().density, Some(Density::Beta { a: 1.0, b: 2.0 }));
        assert!((kl.nu_density(0.25).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(kl.eval_h(1.0).unwrap(), 0.5);
        // Frozen from a finite-difference Taylor expansion of f at 1.
        assert!((kl.h_prime(1.0) + 1.0 / 6.0).abs() < 1e-14);
        assert!((kl.g_prime(1.0) - 1.0 / 3.0).abs() < 1e-14);
        assert!((kl.eval_h(2.0).unwrap() - (2.0 * LN_2 - 1.0)).abs() < 1e-15);
        assert!((kl.eval_h(2.0).unwrap() - 0.386_294_361_119_890_6).abs() < 1e-15);
    }

    #[test]
    fn taylor_coefficients_match_finite_differences() {
        // Fifth-order central differences of f around 1 recover f''' and hence h'(1).
        for spec in catalog() {
            let step = 1e-2;
            let f = |t: f64| spec.f(t);
            let third = (f(1.0 + 2.0 * step) - 2.0 * f(1.0 + step) + 2.0 * f(1.0 - step)
                - f(1.0 - 2.0 * step))
                / (2.0 * step.powi(3));
            // h(1 + e) = ½ + f'''(1)/6 e + ...
            let expected = third / 6.0;
            assert!(
                (spec.h_prime(1.0) - expected).abs() < 1e-3,
                "{}: {} vs {}",
                spec.name(),
                spec.h_prime(1.0),
                expected
            );
        }
    }

    #[test]
    fn pearson_h_is_constant() {
        let p = DivergenceSpec::new(Divergence::Pearson).unwrap();
        assert_eq!(p.eval_h(7.3).unwrap(), 0.5);
        assert_eq!(p.nu().atoms, vec![(0.0, 1.0)]);
        assert_eq!(nu_quadrature_integral(&p, |r| r), 0.0);
    }

    #[test]
    fn domain_error() {
        let kl = DivergenceSpec::new(Divergence::Kl).unwrap();
        assert_eq!(kl.eval_h(0.0), Err(Error::Domain(0.0)));
        assert!(kl.eval_h(-1.0).is_err());
    }

    #[test]
    fn alpha_validation_and_aliases() {
        assert_eq!(
            DivergenceSpec::new(Divergence::Alpha(2.5)),
            Err(Error::UnsupportedAlpha(2.5))
        );
        assert_eq!(
            DivergenceSpec::new(Divergence::Alpha(1.0)).unwrap().kind(),
            Divergence::Kl
        );
        assert_eq!(
            DivergenceSpec::new(Divergence::Alpha(0.5)).unwrap().kind(),
            Divergence::SquaredHellinger
        );
        assert_eq!(
            DivergenceSpec::new(Divergence::Alpha(-1.0)).unwrap().kind(),
            Divergence::ReversePearson
        );
        assert_eq!("alpha:2".parse::<Divergence>().unwrap(), Divergence::Pearson);
        assert_eq!("alpha:0.3".parse::<Divergence>().unwrap(), Divergence::Alpha(0.3));
        assert!("tv".parse::<Divergence>().is_err());
    }

    #[test]
    fn normalization() {
        for spec in catalog() {
            assert!((spec.nu().total_mass() - 1.0).abs() < 1e-10);
            assert_eq!(spec.f(1.0), 0.0);
            assert!(spec.f_prime(1.0).abs() < 1e-15, "{}", spec.name());
            let e = 1e-3;
            let second = (spec.f(1.0 + e) - 2.0 * spec.f(1.0) + spec.f(1.0 - e)) / (e * e);
            assert!((second - 1.0).abs() < 1e-5, "{}", spec.name());
            assert_eq!(spec.eval_h(1.0).unwrap(), 0.5);
        }
    }

    #[test]
    fn quadrature_examples() {
        let kl = DivergenceSpec::new(Divergence::Kl).unwrap();
        assert!((nu_quadrature_integral(&kl, |_| 1.0) - 1.0).abs() < 1e-12);
        let t = 3.0;
        let got = nu_quadrature_integral(&kl, |r| (t - 1.0) * (t - 1.0) / (2.0 * (r * t + 1.0 - r)));
        assert!((got - (3.0 * 3f64.ln() - 2.0)).abs() < 1e-12);
        assert!((got - 1.295_836_866_004_329).abs() < 1e-12);
    }

    #[test]
    fn mixture_identity() {
        for spec in catalog() {
            let rule = spec.nu().rule(DEFAULT_QUADRATURE_NODES);
            let (lo, hi) = match spec.kind() {
                Divergence::Alpha(_) => (-2.0, 2.0),
                _ => (-3.0, 3.0),
            };
            for i in 0..50 {
                let t = 10f64.powf(lo + (hi - lo) * i as f64 / 49.0);
                let quad = rule.integrate(|r| 0.5 * (t - 1.0) * (t - 1.0) / (r * t + 1.0 - r));
                let exact = spec.f(t);
                assert!(
                    (quad - exact).abs() <= 1e-6,
                    "{} t={t}: {quad} vs {exact}",
                    spec.name()
                );
            }
        }
    }

    #[test]
    fn conjugate_identity() {
        for spec in catalog() {
            for i in 0..20 {
                let t = 10f64.powf(-1.5 + 3.0 * i as f64 / 19.0);
                // Zoomed grid search for sup_u (u t − f*(u)) around f'(t).
                let mut center = spec.f_prime(t);
                let mut width = 2.0;
                let mut best = f64::NEG_INFINITY;
                for _ in 0..40 {
                    let mut arg = center;
                    for k in 0..=40 {
                        let u = center - width + 2.0 * width * k as f64 / 40.0;
                        if let Some(c) = spec.f_conj(u) {
                            let val = u * t - c;
                            if val > best {
                                best = val;
                                arg = u;
                            }
                        }
                    }
                    center = arg;
                    width /= 4.0;
                }
                assert!(
                    (best - spec.f(t)).abs() < 1e-5,
                    "{} t={t}: {best} vs {}",
                    spec.name(),
                    spec.f(t)
                );
            }
        }
    }

    #[test]
    fn h_continuity_across_switch() {
        for spec in catalog() {
            let mut worst = 0.0f64;
            for i in 0..=2000 {
                let t = 1.0 - 1e-3 + 2e-3 * i as f64 / 2000.0;
                worst = worst.max((spec.eval_h(t).unwrap() - spec.h_series(t)).abs());
            }
            assert!(worst <= 1e-9, "{}: {worst}", spec.name());
        }
    }

    #[test]
    fn h_prime_matches_finite_differences() {
        for spec in catalog() {
            for &t in &[0.05, 0.5, 0.995, 1.0, 1.005, 1.02, 3.0, 40.0] {
                let step = 1e-6 * t.max(1.0);
                let fd = (spec.h_unchecked(t + step) - spec.h_unchecked(t - step)) / (2.0 * step);
                let exact = spec.h_prime(t);
                assert!(
                    (fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()),
                    "{} t={t}: {fd} vs {exact}",
                    spec.name()
                );
            }
        }
    }

    #[test]
    fn h_near_zero_is_finite() {
        for spec in catalog() {
            let h = spec.eval_h(1e-300).unwrap();
            assert!(!h.is_nan(), "{}", spec.name());
        }
        let kl = DivergenceSpec::new(Divergence::Kl).unwrap();
        assert!((kl.eval_h(1e-300).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_values() {
        assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-13);
        assert!((gamma(5.0) - 24.0).abs() < 1e-10);
    }
}
