//! Confidence-weighted cosine similarity and per-particle weight updates.
//!
//! All weight arithmetic stays in the log domain; exponentiation only
//! happens after a max-shift, so likelihood spreads of thousands of nats
//! stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, FeatureMap};

/// Likelihood sharpness: `log p(z|x) = s / tau_s` up to a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub tau_s: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { tau_s: 1.0 }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_s > 0.0) {
            return Err(Error::InvalidArgument(format!("tau_s must be > 0, got {}", self.tau_s)));
        }
        Ok(())
    }
}

/// Fixed-order eight-lane dot product; deterministic and vectorizable.
#[inline(always)]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f32; 8];
    let chunks = n / 8;
    for k in 0..chunks {
        let ac = &a[k * 8..k * 8 + 8];
        let bc = &b[k * 8..k * 8 + 8];
        for l in 0..8 {
            lanes[l] = ac[l].mul_add(bc[l], lanes[l]);
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..n {
        tail = a[i].mul_add(b[i], tail);
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}

fn score_rows_go<const D: usize>(
    g: &FeatureMap,
    conf: &ConfidenceMap,
    patch: &[f32],
    r0: usize,
    r1: usize,
) -> f64 {
    let w = g.width();
    let d = if D == 0 { g.dim() } else { D };
    let mut acc = 0.0f64;
    for r in r0..r1 {
        let crow = &conf.data()[r * w..(r + 1) * w];
        let grow = &g.data()[r * w * d..(r + 1) * w * d];
        let prow = &patch[(r - r0) * w * d..(r - r0 + 1) * w * d];
        for c in 0..w {
            let dot = dot_f32(&grow[c * d..(c + 1) * d], &prow[c * d..(c + 1) * d]);
            acc = (crow[c] as f64).mul_add(dot as f64, acc);
        }
    }
    acc
}

/// Accumulate `sum_cells conf * <g, patch>` over BEV rows `[r0, r1)`.
///
/// `patch` holds exactly those rows. The caller divides by the cell count.
pub(crate) fn score_rows(
    g: &FeatureMap,
    conf: &ConfidenceMap,
    patch: &[f32],
    r0: usize,
    r1: usize,
) -> f64 {
    match g.dim() {
        32 => score_rows_go::<32>(g, conf, patch, r0, r1),
        16 => score_rows_go::<16>(g, conf, patch, r0, r1),
        _ => score_rows_go::<0>(g, conf, patch, r0, r1),
    }
}

/// Confidence-weighted similarity: `s = mean_cells conf * <g_hat, f_hat>`.
///
/// Inputs are expected cell-normalized, which bounds the result to [-1, 1].
pub fn score(g_hat: &FeatureMap, conf: &ConfidenceMap, f_patch_hat: &FeatureMap) -> Result<f64> {
    if !g_hat.same_shape(f_patch_hat) {
        return Err(Error::DimensionMismatch(format!(
            "score inputs {}x{}x{} vs {}x{}x{}",
            g_hat.height(),
            g_hat.width(),
            g_hat.dim(),
            f_patch_hat.height(),
            f_patch_hat.width(),
            f_patch_hat.dim()
        )));
    }
    if conf.height() != g_hat.height() || conf.width() != g_hat.width() {
        return Err(Error::DimensionMismatch(format!(
            "confidence {}x{} vs features {}x{}",
            conf.height(),
            conf.width(),
            g_hat.height(),
            g_hat.width()
        )));
    }
    let total = score_rows(g_hat, conf, f_patch_hat.data(), 0, g_hat.height());
    Ok(total / (g_hat.height() * g_hat.width()) as f64)
}

/// Log of the unnormalized observation likelihood: `s / tau_s`.
pub fn log_likelihood(s: f64, params: &ScoreParams) -> f64 {
    s / params.tau_s
}

/// Bayes weight update in the log domain, followed by log-normalization via
/// the max-shift trick so that `sum exp(log_w) = 1`.
pub fn update_log_weights(log_w_prev: &[f64], log_lik: &[f64]) -> Result<Vec<f64>> {
    if log_w_prev.is_empty() || log_w_prev.len() != log_lik.len() {
        return Err(Error::DimensionMismatch(format!(
            "weight/likelihood lengths {} vs {}",
            log_w_prev.len(),
            log_lik.len()
        )));
    }
    let mut out: Vec<f64> = log_w_prev.iter().zip(log_lik).map(|(w, l)| w + l).collect();
    normalize_log_weights(&mut out)?;
    Ok(out)
}

/// In-place log-normalization; errors if every entry is -inf (or NaN).
pub fn normalize_log_weights(log_w: &mut [f64]) -> Result<()> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let sum: f64 = log_w.iter().map(|w| (w - m).exp()).sum();
    let lse = m + sum.ln();
    for w in log_w.iter_mut() {
        *w -= lse;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_normalize, NORM_EPSILON};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_unit_map(rng: &mut ChaCha12Rng, h: usize, w: usize, d: usize) -> FeatureMap {
        let data: Vec<f32> = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&FeatureMap::new(h, w, d, data, None).unwrap(), NORM_EPSILON).unwrap()
    }

    fn random_conf(rng: &mut ChaCha12Rng, h: usize, w: usize) -> ConfidenceMap {
        ConfidenceMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Plain triple-loop f64 reference.
    fn naive_score(g: &FeatureMap, conf: &ConfidenceMap, f: &FeatureMap) -> f64 {
        let mut total = 0.0f64;
        for r in 0..g.height() {
            for c in 0..g.width() {
                let mut dot = 0.0f64;
                for k in 0..g.dim() {
                    dot += g.cell(r, c)[k] as f64 * f.cell(r, c)[k] as f64;
                }
                total += conf.get(r, c) as f64 * dot;
            }
        }
        total / (g.height() * g.width()) as f64
    }

    #[test]
    fn self_match_is_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let g = random_unit_map(&mut rng, 12, 9, 16);
        let conf = ConfidenceMap::constant(12, 9, 1.0).unwrap();
        let s = score(&g, &conf, &g).unwrap();
        assert!((s - 1.0).abs() < 1e-5, "s = {s}");
    }

    #[test]
    fn zero_confidence_zero_score() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let g = random_unit_map(&mut rng, 5, 5, 8);
        let f = random_unit_map(&mut rng, 5, 5, 8);
        let conf = ConfidenceMap::constant(5, 5, 0.0).unwrap();
        assert_eq!(score(&g, &conf, &f).unwrap(), 0.0);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (h, w, d) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..20));
            let g = random_unit_map(&mut rng, h, w, d);
            let f = random_unit_map(&mut rng, h, w, d);
            let conf = random_conf(&mut rng, h, w);
            let got = score(&g, &conf, &f).unwrap();
            let want = naive_score(&g, &conf, &f);
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            assert!(got.abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn score_bounded_by_mean_confidence() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let g = random_unit_map(&mut rng, 8, 8, 8);
        let f = random_unit_map(&mut rng, 8, 8, 8);
        let conf = random_conf(&mut rng, 8, 8);
        let s = score(&g, &conf, &f).unwrap();
        let mean_c: f64 = conf.data().iter().map(|&c| c as f64).sum::<f64>() / 64.0;
        assert!(s.abs() <= mean_c + 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = FeatureMap::zeros(2, 2, 3, None);
        let f = FeatureMap::zeros(2, 3, 3, None);
        let conf = ConfidenceMap::constant(2, 2, 1.0).unwrap();
        assert!(matches!(score(&g, &conf, &f), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn log_likelihood_scaling() {
        assert_eq!(log_likelihood(0.0, &ScoreParams::default()), 0.0);
        assert_eq!(log_likelihood(0.5, &ScoreParams { tau_s: 1.0 }), 0.5);
        assert_eq!(log_likelihood(0.5, &ScoreParams { tau_s: 0.25 }), 2.0);
    }

    #[test]
    fn weight_update_uniform_stays_uniform() {
        let n = 4;
        let prior = vec![-(n as f64).ln(); n];
        let lik = vec![0.7; n];
        let out = update_log_weights(&prior, &lik).unwrap();
        for w in &out {
            assert!((w - (-(n as f64).ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_update_one_to_three_ratio() {
        let prior = vec![-(2f64).ln(); 2];
        let out = update_log_weights(&prior, &[0.0, 3f64.ln()]).unwrap();
        assert!((out[0].exp() - 0.25).abs() < 1e-12);
        assert!((out[1].exp() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn weight_update_matches_direct_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(1..40);
            let prior: Vec<f64> = (0..n).map(|_| rng.random_range(-12.0..0.0)).collect();
            let lik: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
            let out = update_log_weights(&prior, &lik).unwrap();
            // Direct exp/sum/renormalize with compensated summation.
            let raw: Vec<f64> = prior.iter().zip(&lik).map(|(p, l)| (p + l).exp()).collect();
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for &v in &raw {
                let y = v - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            for (o, r) in out.iter().zip(&raw) {
                assert!((o.exp() - r / sum).abs() < 1e-12);
            }
            let total: f64 = out.iter().map(|w| w.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_controls_weight_ratio() {
        let (s1, s2) = (0.8, 0.3);
        for &tau in &[1.0, 0.5, 0.1] {
            let params = ScoreParams { tau_s: tau };
            let out = update_log_weights(
                &[-(2f64).ln(), -(2f64).ln()],
                &[log_likelihood(s1, &params), log_likelihood(s2, &params)],
            )
            .unwrap();
            let ratio = (out[0] - out[1]).exp();
            assert!((ratio - ((s1 - s2) / tau).exp()).abs() < 1e-9 * ratio);
        }
    }

    #[test]
    fn extreme_spread_stays_finite() {
        let n = 8;
        let prior = vec![-(n as f64).ln(); n];
        let lik: Vec<f64> = (0..n).map(|i| -(i as f64) * 1e4).collect();
        let out = update_log_weights(&prior, &lik).unwrap();
        assert!(out.iter().all(|w| !w.is_nan()));
        let total: f64 = out.iter().map(|w| w.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_neg_inf_is_degenerate() {
        let mut w = vec![f64::NEG_INFINITY; 3];
        assert!(matches!(normalize_log_weights(&mut w), Err(Error::DegenerateWeights)));
    }
}
