use fdiv_core::divergence::Divergence;
use fdiv_core::{DivergenceSpec, FeatureMoments, GeneralizedSpectrum, MomentSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_hot_rows(rng: &mut ChaCha8Rng, probs: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, probs.len());
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let symbol = probs
            .iter()
            .position(|w| {
                acc += w;
                u < acc
            })
            .unwrap_or(probs.len() - 1);
        m[(i, symbol)] = 1.0;
    }
    m
}

/// With the pencil frozen at population moments, value minus correction is
/// unbiased for the population value; the plain value is biased upward.
#[test]
fn debiased_statistic_is_unbiased_on_tiny_samples() {
    let p = [0.5, 0.3, 0.2];
    let q = [0.2, 0.3, 0.5];
    let k = p.len();
    let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
    let spec = DivergenceSpec::new(Divergence::Kl).unwrap();
    let spectrum = GeneralizedSpectrum::decompose(&diag(&p), &diag(&q)).unwrap();
    let delta = DVector::from_iterator(k, p.iter().zip(&q).map(|(a, b)| a - b));
    let target = spectrum.value(&delta, &spec);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let reps = 100_000;
    let (mut sum, mut sum_sq, mut plain_sum) = (0.0, 0.0, 0.0);
    for _ in 0..reps {
        let fp = FeatureMoments::from_features(&one_hot_rows(&mut rng, &p, 4)).unwrap();
        let fq = FeatureMoments::from_features(&one_hot_rows(&mut rng, &q, 4)).unwrap();
        let sample = MomentSet::new(fp, fq, 0.0, fdiv_core::ConstantMode::None).unwrap();
        let plain = spectrum.value(&sample.delta(), &spec);
        let corrected = plain - spectrum.trace_correction(&sample.mean_difference_covariance().unwrap(), &spec);
        sum += corrected;
        sum_sq += corrected * corrected;
        plain_sum += plain;
    }
    let n = reps as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
    assert!((mean - target).abs() <= 3.0 * se, "mean {mean} vs {target} (se {se})");
    assert!(plain_sum / n - target > 10.0 * se);
}
