//! Linear-domain brute-force oracles shared by the integration tests. They
//! use nothing from the library except `ClassMode` as a selector.

#![allow(dead_code)]

use modelsel_core::ClassMode;

pub fn linear_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn normalize(w: &[f64]) -> Vec<f64> {
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

pub fn unnormalized_update(row: &[u32], prior: &[f64], eps: f64, c: u32) -> Vec<f64> {
    row.iter()
        .zip(prior)
        .map(|(&p, &q)| q * if p == c { 1.0 - eps } else { eps })
        .collect()
}

/// Σ_c P(c) · H(posterior after observing c), enumerating every class
/// id in [0, K) and skipping classes no model predicts.
pub fn brute_expected_entropy(row: &[u32], k: usize, prior: &[f64], eps: f64, mode: ClassMode) -> f64 {
    let m = row.len();
    let predicted = |c: u32| row.contains(&c);
    let weight = |c: u32| -> f64 {
        match mode {
            ClassMode::Frequency => row.iter().filter(|&&p| p == c).count() as f64 / m as f64,
            ClassMode::PosteriorWeighted => row.iter().zip(prior).filter(|(&p, _)| p == c).map(|(_, w)| w).sum(),
            ClassMode::Predictive => unnormalized_update(row, prior, eps, c).iter().sum(),
        }
    };
    let z: f64 = (0..k as u32).filter(|&c| predicted(c)).map(weight).sum();
    let mut total = 0.0;
    for c in (0..k as u32).filter(|&c| predicted(c)) {
        total += weight(c) / z * linear_entropy(&normalize(&unnormalized_update(row, prior, eps, c)));
    }
    total
}

/// Normalized Π_t likelihoods from per-model correct counts after `t`
/// observations.
pub fn batch_weights(counts: &[usize], t: usize, eps: f64) -> Vec<f64> {
    normalize(
        &counts
            .iter()
            .map(|&c| (1.0 - eps).powi(c as i32) * eps.powi((t - c) as i32))
            .collect::<Vec<_>>(),
    )
}
