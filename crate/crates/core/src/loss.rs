//! Scalar training objectives over the refined scores of one neighborhood.
//!
//! These are the plain forward evaluations; [`crate::autodiff`] records the
//! same quantities on a tape together with their gradients.

use alloc::vec::Vec;

use crate::matrix::{ln, log_sum_exp, softmax};

/// Negative log of the softmax mass (temperature `tau`) on the positives.
///
/// Returns `None` when the mask selects no positive: the objective is
/// undefined and the caller should skip the sample.
pub fn contrastive_loss(scores: &[f64], positive: &[bool], tau: f64) -> Option<f64> {
    debug_assert_eq!(scores.len(), positive.len());
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let pos: Vec<f64> = scaled
        .iter()
        .zip(positive)
        .filter_map(|(&s, &p)| p.then_some(s))
        .collect();
    if pos.is_empty() {
        return None;
    }
    if pos.len() == scaled.len() {
        return Some(0.0);
    }
    Some((log_sum_exp(&scaled) - log_sum_exp(&pos)).max(0.0))
}

/// Index of the hardest positive: the lowest-scored positive, first on ties.
pub fn hardest_positive(scores: &[f64], positive: &[bool]) -> Option<usize> {
    scores
        .iter()
        .zip(positive)
        .enumerate()
        .filter(|(_, (_, &p))| p)
        .fold(None, |best: Option<(usize, f64)>, (i, (&s, _))| match best {
            Some((_, b)) if b <= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

/// Hinge loss of every negative against the hardest positive with margin
/// `margin`. Returns `None` without positives; zero without negatives.
pub fn triplet_loss(scores: &[f64], positive: &[bool], margin: f64) -> Option<f64> {
    let h = hardest_positive(scores, positive)?;
    let anchor = scores[h];
    Some(
        scores
            .iter()
            .zip(positive)
            .filter(|(_, &p)| !p)
            .map(|(&s, _)| (margin - anchor + s).max(0.0))
            .sum(),
    )
}

/// `D_KL(softmax(query/τ) ‖ softmax(mirrored/τ))`.
pub fn mma_loss(query: &[f64], mirrored: &[f64], tau: f64) -> f64 {
    debug_assert_eq!(query.len(), mirrored.len());
    let a: Vec<f64> = query.iter().map(|s| s / tau).collect();
    let b: Vec<f64> = mirrored.iter().map(|s| s / tau).collect();
    let (la, lb) = (log_sum_exp(&a), log_sum_exp(&b));
    let p = softmax(&a);
    let kl: f64 = p
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(&pi, (&ai, &bi))| pi * ((ai - la) - (bi - lb)))
        .sum();
    kl.max(0.0)
}

/// Plain `Σ p ln(p/q)` for explicit distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * ln(pi / qi))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_values() {
        let l = contrastive_loss(&[0.3, 0.3], &[true, false], 1.0).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(contrastive_loss(&[0.3, -0.1], &[true, true], 1.0), Some(0.0));
        let l = contrastive_loss(&[1.0, 0.0], &[true, false], 1.0).unwrap();
        let e = 1f64.exp();
        assert!((l - -(e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);
        assert_eq!(contrastive_loss(&[0.3, 0.1], &[false, false], 1.0), None);
    }

    #[test]
    fn triplet_values() {
        let l = triplet_loss(&[0.5, 0.4], &[true, false], 0.2).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
        assert_eq!(triplet_loss(&[0.5, 0.2], &[true, false], 0.2), Some(0.0));
        let l = triplet_loss(&[0.5, 0.5, 0.5], &[true, false, false], 0.2).unwrap();
        assert!((l - 0.4).abs() < 1e-12);
        assert_eq!(triplet_loss(&[0.5, 0.9], &[true, true], 0.2), Some(0.0));
        assert_eq!(triplet_loss(&[0.5], &[false], 0.2), None);
    }

    #[test]
    fn hardest_positive_is_min_positive() {
        assert_eq!(hardest_positive(&[0.9, 0.1, 0.3, 0.05], &[true, false, true, false]), Some(2));
        assert_eq!(hardest_positive(&[0.3, 0.3], &[true, true]), Some(0));
    }

    #[test]
    fn kl_values() {
        // p = (0.75, 0.25) from logits (ln 3, 0); q uniform
        let l = mma_loss(&[3f64.ln(), 0.0], &[0.0, 0.0], 1.0);
        let oracle = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 0.130812).abs() < 1e-6);
        assert!((kl_divergence(&[0.75, 0.25], &[0.5, 0.5]) - oracle).abs() < 1e-12);
        assert_eq!(mma_loss(&[0.2, -0.4, 0.9], &[0.2, -0.4, 0.9], 1.0), 0.0);
    }
}
