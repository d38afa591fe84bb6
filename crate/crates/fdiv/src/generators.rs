//! Synthetic distributions with exactly known divergences.

use std::f64::consts::{LN_2, TAU};

use fdiv_core::quadrature::QuadratureRule;
use fdiv_core::DatasetPair;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FdivError, Result};

/// Lowest acceptable rejection-sampling acceptance rate.
const MIN_ACCEPTANCE: f64 = 1e-3;
/// Proposals drawn before the acceptance rate is checked.
const STALL_WINDOW: usize = 1000;

/// Synthetic problem family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `q = U[0, 1]`, `dp/dq = 1 + β r(x)` with the triangle wave `r(x) = 1 − 2|2x − 1|`.
    #[serde(rename = "bernoulli_kernel_1d")]
    BernoulliKernel1d { beta: f64 },
    /// `q` uniform on `[0, 1]^dim`, `log dp/dq = Σ_l Σ_k a_k cos 2πk x_l − dim · log Z`.
    TorusCosine { dim: usize, freqs: Vec<usize>, coefs: Vec<f64> },
    /// Three equiprobable classes on `[0, 1]²` with `p(x | j) = Π_l (1 + β cos 2π(x_l − s_{j,l}))`.
    ThreeClassCosine { beta: f64 },
    /// `q = N(0, I_d)`, `dp/dq = Π_{l < d_eff} (1 + β(cos ωx_l − e^{−ω²/2}))`.
    LatentSubspace { d: usize, d_eff: usize, beta: f64, omega: f64 },
    /// `x₁` uniform on `{1..k}`, `x₂ = x₁` with probability `1 − noise`, else uniform.
    CopyChannel { k: usize, noise: f64 },
    /// `(x₁, x₂)` on the torus with joint density `1 + β cos 2π(x₂ − x₁)` and uniform marginals.
    TorusMi { beta: f64 },
}

/// Samples drawn from a generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    /// `n` draws from each of `p` and `q`.
    Pair(DatasetPair),
    /// Inputs with 1-based class labels.
    Labeled { x: DMatrix<f64>, labels: Vec<usize>, k: usize },
    /// Paired draws `(x₁, x₂)` from the joint distribution, one row each.
    Paired { xy: DMatrix<f64>, split: usize },
}

impl Sample {
    pub fn pair(&self) -> Result<&DatasetPair> {
        match self {
            Sample::Pair(d) => Ok(d),
            _ => Err(FdivError::Config("generator does not produce a (p, q) pair".into())),
        }
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws from `U[0, 1]` accepted with probability `accept(x)`.
fn rejection<F: Fn(&mut ChaCha8Rng) -> f64, A: Fn(f64) -> f64>(
    rng: &mut ChaCha8Rng,
    propose: F,
    accept: A,
    tries: &mut (usize, usize),
) -> Result<f64> {
    loop {
        let x = propose(rng);
        tries.0 += 1;
        if rng.random::<f64>() < accept(x) {
            tries.1 += 1;
            return Ok(x);
        }
        if tries.0 >= STALL_WINDOW {
            let rate = tries.1 as f64 / tries.0 as f64;
            if rate < MIN_ACCEPTANCE {
                return Err(FdivError::RejectionStall { rate });
            }
        }
    }
}

/// Periodic trapezoid rule on `[0, 1)`; spectrally accurate for smooth periodic integrands.
fn periodic_mean<F: Fn(f64) -> f64>(f: F, nodes: usize) -> f64 {
    (0..nodes).map(|i| f(i as f64 / nodes as f64)).sum::<f64>() / nodes as f64
}

/// Composite Gauss–Legendre on `[lo, hi]`.
fn composite_legendre<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize, order: usize) -> f64 {
    let width = (hi - lo) / panels as f64;
    (0..panels)
        .map(|p| {
            let a = lo + p as f64 * width;
            QuadratureRule::gauss_legendre(a, a + width, order).integrate(&f)
        })
        .sum()
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

fn triangle(x: f64) -> f64 {
    1.0 - 2.0 * (2.0 * x - 1.0).abs()
}

/// `∫₀ˣ r`, piecewise quadratic.
fn triangle_integral(x: f64) -> f64 {
    if x <= 0.5 {
        2.0 * x * x - x
    } else {
        3.0 * x - 2.0 * x * x - 1.0
    }
}

fn class_shift(j: usize, l: usize) -> f64 {
    ((j * (l + 1)) % 3) as f64 / 3.0
}

impl GeneratorSpec {
    /// Checks the parameters, including positivity of `dp/dq`.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FdivError::Config(msg));
        match self {
            GeneratorSpec::BernoulliKernel1d { beta } if !(0.0..1.0).contains(beta) => {
                bad(format!("beta must lie in [0, 1), got {beta}"))
            }
            GeneratorSpec::TorusCosine { dim, freqs, coefs } if *dim == 0 || freqs.len() != coefs.len() || freqs.contains(&0) => {
                bad("torus_cosine needs dim ≥ 1 and matching positive freqs/coefs".into())
            }
            GeneratorSpec::ThreeClassCosine { beta } | GeneratorSpec::TorusMi { beta } if !(0.0..1.0).contains(beta) => {
                bad(format!("beta must lie in [0, 1), got {beta}"))
            }
            GeneratorSpec::LatentSubspace { d, d_eff, beta, omega } => {
                let floor = 1.0 - beta * (1.0 + (-0.5 * omega * omega).exp());
                if *d_eff > *d || *d == 0 || !(*beta >= 0.0) || floor <= 0.0 {
                    bad(format!("latent_subspace parameters give min dp/dq = {floor}"))
                } else {
                    Ok(())
                }
            }
            GeneratorSpec::CopyChannel { k, noise } if *k < 2 || !(0.0..=1.0).contains(noise) => {
                bad("copy_channel needs k ≥ 2 and noise in [0, 1]".into())
            }
            _ => Ok(()),
        }
    }

    /// `D(p‖q)` (KL) or the mutual information, computed analytically or by fine quadrature.
    pub fn exact(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.exact_at(1))
    }

    /// Independent recomputation of [`GeneratorSpec::exact`] at a finer resolution.
    pub fn exact_check(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.exact_at(2))
    }

    fn exact_at(&self, level: usize) -> f64 {
        match self {
            GeneratorSpec::BernoulliKernel1d { beta } => {
                if level == 1 {
                    // ∫ (1 + βs) log(1 + βs) ds / 2 over s ∈ [−1, 1].
                    if *beta == 0.0 {
                        return 0.0;
                    }
                    let prim = |z: f64| if z > 0.0 { 0.5 * z * z * z.ln() - 0.25 * z * z } else { 0.0 };
                    (prim(1.0 + beta) - prim(1.0 - beta)) / (2.0 * beta)
                } else {
                    let f = |x: f64| xlogx(1.0 + beta * triangle(x));
                    composite_legendre(f, 0.0, 0.5, 8, 30) + composite_legendre(f, 0.5, 1.0, 8, 30)
                }
            }
            GeneratorSpec::TorusCosine { dim, freqs, coefs } => {
                let nodes = 4096 * level;
                let expo = |x: f64| freqs.iter().zip(coefs).map(|(&k, &a)| a * (TAU * k as f64 * x).cos()).sum::<f64>();
                let z = periodic_mean(|x| expo(x).exp(), nodes);
                let per = periodic_mean(|x| expo(x).exp() / z * (expo(x) - z.ln()), nodes);
                *dim as f64 * per
            }
            GeneratorSpec::ThreeClassCosine { beta } => {
                let nodes = 192 * level;
                let h = 1.0 / nodes as f64;
                let mut total = 0.0;
                for a in 0..nodes {
                    for b in 0..nodes {
                        let x = [a as f64 * h, b as f64 * h];
                        let dens: Vec<f64> = (0..3).map(|j| self.class_density(j, &x, *beta)).collect();
                        let mix = dens.iter().sum::<f64>() / 3.0;
                        total += dens.iter().map(|&d| d * (d / mix).ln()).sum::<f64>() / 3.0;
                    }
                }
                total * h * h
            }
            GeneratorSpec::LatentSubspace { d_eff, beta, omega, .. } => {
                let shift = (-0.5 * omega * omega).exp();
                let f = |x: f64| {
                    let r = 1.0 + beta * ((omega * x).cos() - shift);
                    (-0.5 * x * x).exp() / (TAU.sqrt()) * xlogx(r)
                };
                *d_eff as f64 * composite_legendre(f, -14.0, 14.0, 200 * level, 12 + 4 * level)
            }
            GeneratorSpec::CopyChannel { k, noise } => {
                let kf = *k as f64;
                let same = (1.0 - noise + noise / kf) / kf;
                let other = noise / (kf * kf);
                let term = |p: f64| if p > 0.0 { p * (p * kf * kf).ln() } else { 0.0 };
                if level == 1 {
                    kf * term(same) + kf * (kf - 1.0) * term(other)
                } else {
                    let mut total = 0.0;
                    for a in 0..*k {
                        for b in 0..*k {
                            total += term(if a == b { same } else { other });
                        }
                    }
                    total
                }
            }
            GeneratorSpec::TorusMi { beta } => periodic_mean(|u| xlogx(1.0 + beta * (TAU * u).cos()), 4096 * level),
        }
    }

    fn class_density(&self, j: usize, x: &[f64], beta: f64) -> f64 {
        x.iter()
            .enumerate()
            .map(|(l, &xl)| 1.0 + beta * (TAU * (xl - class_shift(j, l))).cos())
            .product()
    }

    /// Exact `log dp/dq(x)` for the two-sample generators.
    pub fn log_ratio(&self, x: &[f64]) -> Option<f64> {
        match self {
            GeneratorSpec::BernoulliKernel1d { beta } => Some((1.0 + beta * triangle(x[0])).ln()),
            GeneratorSpec::TorusCosine { freqs, coefs, .. } => {
                let expo = |x: f64| freqs.iter().zip(coefs).map(|(&k, &a)| a * (TAU * k as f64 * x).cos()).sum::<f64>();
                let log_z = periodic_mean(|t| expo(t).exp(), 4096).ln();
                Some(x.iter().map(|&xl| expo(xl) - log_z).sum())
            }
            GeneratorSpec::LatentSubspace { d_eff, beta, omega, .. } => {
                let shift = (-0.5 * omega * omega).exp();
                Some(x[..*d_eff].iter().map(|&xl| (1.0 + beta * ((omega * xl).cos() - shift)).ln()).sum())
            }
            _ => None,
        }
    }

    /// Draws `n` samples (per distribution for pairs) with a seeded stream.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Sample> {
        self.validate()?;
        if n == 0 {
            return Err(fdiv_core::Error::EmptyDataset.into());
        }
        let mut rng = rng_for(seed);
        let mut tries = (0usize, 0usize);
        match self {
            GeneratorSpec::BernoulliKernel1d { beta } => {
                let mut xs = Vec::with_capacity(n);
                for _ in 0..n {
                    let u: f64 = rng.random();
                    // Invert P(x) = x + β ∫₀ˣ r by bisection.
                    let (mut lo, mut hi) = (0.0f64, 1.0f64);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if mid + beta * triangle_integral(mid) < u {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    xs.push(0.5 * (lo + hi));
                }
                let ys: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                Ok(Sample::Pair(DatasetPair::new(
                    DMatrix::from_column_slice(n, 1, &xs),
                    DMatrix::from_column_slice(n, 1, &ys),
                )?))
            }
            GeneratorSpec::TorusCosine { dim, freqs, coefs } => {
                let bound: f64 = coefs.iter().map(|a| a.abs()).sum();
                let expo = |x: f64| freqs.iter().zip(coefs).map(|(&k, &a)| a * (TAU * k as f64 * x).cos()).sum::<f64>();
                let mut x = DMatrix::zeros(n, *dim);
                for i in 0..n {
                    for l in 0..*dim {
                        x[(i, l)] = rejection(&mut rng, |r| r.random(), |t| (expo(t) - bound).exp(), &mut tries)?;
                    }
                }
                let y = DMatrix::from_fn(n, *dim, |_, _| rng.random::<f64>());
                Ok(Sample::Pair(DatasetPair::new(x, y)?))
            }
            GeneratorSpec::ThreeClassCosine { beta } => {
                let mut x = DMatrix::zeros(n, 2);
                let mut labels = Vec::with_capacity(n);
                for i in 0..n {
                    let j = rng.random_range(0..3usize);
                    labels.push(j + 1);
                    for l in 0..2 {
                        let s = class_shift(j, l);
                        x[(i, l)] = rejection(
                            &mut rng,
                            |r| r.random(),
                            |t| (1.0 + beta * (TAU * (t - s)).cos()) / (1.0 + beta),
                            &mut tries,
                        )?;
                    }
                }
                Ok(Sample::Labeled { x, labels, k: 3 })
            }
            GeneratorSpec::LatentSubspace { d, d_eff, beta, omega } => {
                let shift = (-0.5 * omega * omega).exp();
                let top = 1.0 + beta * (1.0 - shift);
                let normal = |r: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(r) };
                let mut x = DMatrix::zeros(n, *d);
                for i in 0..n {
                    for l in 0..*d {
                        x[(i, l)] = if l < *d_eff {
                            rejection(&mut rng, normal, |t| (1.0 + beta * ((omega * t).cos() - shift)) / top, &mut tries)?
                        } else {
                            normal(&mut rng)
                        };
                    }
                }
                let y = DMatrix::from_fn(n, *d, |_, _| normal(&mut rng));
                Ok(Sample::Pair(DatasetPair::new(x, y)?))
            }
            GeneratorSpec::CopyChannel { k, noise } => {
                let mut xy = DMatrix::zeros(n, 2);
                for i in 0..n {
                    let a = rng.random_range(1..=*k);
                    let b = if rng.random::<f64>() < *noise { rng.random_range(1..=*k) } else { a };
                    xy[(i, 0)] = a as f64;
                    xy[(i, 1)] = b as f64;
                }
                Ok(Sample::Paired { xy, split: 1 })
            }
            GeneratorSpec::TorusMi { beta } => {
                let mut xy = DMatrix::zeros(n, 2);
                for i in 0..n {
                    let a: f64 = rng.random();
                    let u = rejection(&mut rng, |r| r.random(), |t| (1.0 + beta * (TAU * t).cos()) / (1.0 + beta), &mut tries)?;
                    xy[(i, 0)] = a;
                    xy[(i, 1)] = (a + u).fract();
                }
                Ok(Sample::Paired { xy, split: 1 })
            }
        }
    }
}

/// `ln 2`, the MI of a noiseless binary copy channel.
pub const COPY_CHANNEL_MI_K2: f64 = LN_2;

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> Vec<GeneratorSpec> {
        vec![
            GeneratorSpec::BernoulliKernel1d { beta: 0.5 },
            GeneratorSpec::TorusCosine {
                dim: 2,
                freqs: vec![1, 2],
                coefs: vec![0.6, -0.3],
            },
            GeneratorSpec::ThreeClassCosine { beta: 0.8 },
            GeneratorSpec::LatentSubspace {
                d: 4,
                d_eff: 1,
                beta: 0.75,
                omega: 2.0,
            },
            GeneratorSpec::CopyChannel { k: 3, noise: 0.2 },
            GeneratorSpec::TorusMi { beta: 0.7 },
        ]
    }

    #[test]
    fn exact_values_agree_with_finer_quadrature() {
        for g in all() {
            let (a, b) = (g.exact().unwrap(), g.exact_check().unwrap());
            assert!((a - b).abs() <= 1e-8, "{g:?}: {a} vs {b}");
            assert!(a > 0.0);
        }
    }

    #[test]
    fn trivial_cases() {
        let flat = GeneratorSpec::TorusCosine {
            dim: 2,
            freqs: vec![1],
            coefs: vec![0.0],
        };
        assert!(flat.exact().unwrap().abs() < 1e-15);
        assert_eq!(GeneratorSpec::BernoulliKernel1d { beta: 0.0 }.exact().unwrap(), 0.0);
        let copy = GeneratorSpec::CopyChannel { k: 2, noise: 0.0 };
        assert!((copy.exact().unwrap() - COPY_CHANNEL_MI_K2).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_matches_exact_kl() {
        let g = GeneratorSpec::BernoulliKernel1d { beta: 0.5 };
        assert_eq!(g.generate(100, 4).unwrap(), g.generate(100, 4).unwrap());
        let sample = g.generate(200_000, 1).unwrap();
        let data = sample.pair().unwrap();
        // Monte Carlo E_p log dp/dq.
        let mc: f64 = data.x.iter().map(|&x| g.log_ratio(&[x]).unwrap()).sum::<f64>() / data.n_p() as f64;
        let exact = g.exact().unwrap();
        assert!((mc - exact).abs() < 5e-3 * 10.0 * exact.max(1e-3), "{mc} vs {exact}");
    }

    #[test]
    fn torus_log_ratio_integrates_to_one() {
        let g = GeneratorSpec::TorusCosine {
            dim: 1,
            freqs: vec![1, 2],
            coefs: vec![0.6, -0.3],
        };
        let mass = periodic_mean(|x| g.log_ratio(&[x]).unwrap().exp(), 2048);
        assert!((mass - 1.0).abs() < 1e-12);
        let kl = periodic_mean(|x| g.log_ratio(&[x]).unwrap().exp() * g.log_ratio(&[x]).unwrap(), 2048);
        assert!((kl - g.exact().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn latent_samples_have_unit_variance_outside_subspace() {
        let g = GeneratorSpec::LatentSubspace {
            d: 3,
            d_eff: 1,
            beta: 0.75,
            omega: 2.0,
        };
        let data = g.generate(20_000, 2).unwrap();
        let data = data.pair().unwrap();
        let var = data.x.column(2).iter().map(|v| v * v).sum::<f64>() / 20_000.0;
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejection_stall_is_reported() {
        let mut rng = rng_for(0);
        let mut tries = (0, 0);
        let err = rejection(&mut rng, |r| r.random(), |_| 0.0, &mut tries).unwrap_err();
        assert!(matches!(err, FdivError::RejectionStall { .. }));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(GeneratorSpec::LatentSubspace {
            d: 2,
            d_eff: 1,
            beta: 0.99,
            omega: 0.1
        }
        .validate()
        .is_err());
        assert!(GeneratorSpec::CopyChannel { k: 1, noise: 0.0 }.validate().is_err());
    }
}
