//! Forward-only training objective: InfoNCE over mined negative poses, the
//! self-supervised confidence target with its BCE loss, and their sum.
//!
//! No autodiff lives here; the monotonicity and minimizer properties of the
//! forward functions are what the tests pin down. When scores feeding
//! [`info_nce`] are produced by [`crate::likelihood::score`], the confidence
//! weighting inside them is treated as a constant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, FeatureMap};
use crate::se2::{compose, Pose2};

/// Temperatures below this floor are clamped before use.
pub const TAU_FLOOR: f64 = 0.01;

/// How negative poses are mined around the positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeMiningConfig {
    pub count: usize,
    /// Translation offset magnitude range, meters.
    pub trans_range: (f64, f64),
    /// Heading offset range, radians.
    pub rot_range: (f64, f64),
}

impl Default for NegativeMiningConfig {
    fn default() -> Self {
        Self {
            count: 31,
            trans_range: (3.0, 50.0),
            rot_range: (-60f64.to_radians(), 60f64.to_radians()),
        }
    }
}

impl NegativeMiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("negative count must be >= 1".into()));
        }
        if !(self.trans_range.0 > 0.0 && self.trans_range.0 < self.trans_range.1) {
            return Err(Error::InvalidArgument(format!(
                "translation range must satisfy 0 < min < max, got {:?}",
                self.trans_range
            )));
        }
        Ok(())
    }
}

/// InfoNCE temperature with its floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub tau_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.03, tau_floor: TAU_FLOOR }
    }
}

/// Mine `cfg.count` negative poses around the ground truth: offset direction
/// uniform on the circle, magnitude uniform in `trans_range`, heading offset
/// uniform in `rot_range`, right-composed onto `pose_gt`.
pub fn mine_negatives<R: Rng + ?Sized>(
    pose_gt: &Pose2,
    cfg: &NegativeMiningConfig,
    rng: &mut R,
) -> Result<Vec<Pose2>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let mag = rng.random_range(cfg.trans_range.0..=cfg.trans_range.1);
        let rot = rng.random_range(cfg.rot_range.0..=cfg.rot_range.1);
        out.push(compose(pose_gt, &Pose2::new(mag * dir.cos(), mag * dir.sin(), rot)));
    }
    Ok(out)
}

/// InfoNCE contrastive loss over one positive and K negative scores, with
/// the temperature clamped to [`TAU_FLOOR`] and a max-shifted log-sum-exp.
pub fn info_nce(s_pos: f64, s_negs: &[f64], tau: f64) -> Result<f64> {
    if s_negs.is_empty() {
        return Err(Error::InvalidArgument("InfoNCE requires at least one negative".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    let tau = tau.max(TAU_FLOOR);
    let zp = s_pos / tau;
    let m = s_negs.iter().fold(zp, |m, s| m.max(s / tau));
    let mut sum = (zp - m).exp();
    for s in s_negs {
        sum += (s / tau - m).exp();
    }
    Ok(-(zp - m - sum.ln()))
}

/// Self-supervised confidence target: per-cell cosine of the normalized
/// inputs, clamped to [0, 1].
pub fn confidence_target(g_hat: &FeatureMap, f_pos_hat: &FeatureMap) -> Result<ConfidenceMap> {
    if !g_hat.same_shape(f_pos_hat) {
        return Err(Error::DimensionMismatch(format!(
            "confidence target inputs {}x{}x{} vs {}x{}x{}",
            g_hat.height(),
            g_hat.width(),
            g_hat.dim(),
            f_pos_hat.height(),
            f_pos_hat.width(),
            f_pos_hat.dim()
        )));
    }
    let d = g_hat.dim();
    let data: Vec<f32> = g_hat
        .data()
        .chunks_exact(d)
        .zip(f_pos_hat.data().chunks_exact(d))
        .map(|(a, b)| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
            dot.clamp(0.0, 1.0) as f32
        })
        .collect();
    ConfidenceMap::new(g_hat.height(), g_hat.width(), data)
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce_loss(c_pred: &ConfidenceMap, c_gt: &ConfidenceMap, epsilon: f64) -> Result<f64> {
    if c_pred.height() != c_gt.height() || c_pred.width() != c_gt.width() {
        return Err(Error::DimensionMismatch(format!(
            "BCE inputs {}x{} vs {}x{}",
            c_pred.height(),
            c_pred.width(),
            c_gt.height(),
            c_gt.width()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut total = 0.0f64;
    for (&p, &t) in c_pred.data().iter().zip(c_gt.data()) {
        let p = (p as f64).clamp(epsilon, 1.0 - epsilon);
        let t = t as f64;
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(total / (c_pred.height() * c_pred.width()) as f64)
}

/// The training objective is the plain sum of the two components.
pub fn total_loss(l_sim: f64, l_conf: f64) -> f64 {
    l_sim + l_conf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_normalize, NORM_EPSILON};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn mined_negatives_respect_ranges() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let cfg = NegativeMiningConfig::default();
        let gt = Pose2::new(100.0, -50.0, 0.8);
        let negs = mine_negatives(&gt, &cfg, &mut rng).unwrap();
        assert_eq!(negs.len(), 31);
        for n in &negs {
            let d = gt.distance(n);
            assert!((3.0..=50.0).contains(&d), "distance {d}");
            let dt = crate::se2::wrap_angle(n.theta - gt.theta);
            assert!(dt.abs() <= 60f64.to_radians() + 1e-12, "heading offset {dt}");
        }
    }

    #[test]
    fn mining_is_deterministic() {
        let cfg = NegativeMiningConfig::default();
        let gt = Pose2::new(0.0, 0.0, 0.0);
        let a = mine_negatives(&gt, &cfg, &mut ChaCha12Rng::seed_from_u64(5)).unwrap();
        let b = mine_negatives(&gt, &cfg, &mut ChaCha12Rng::seed_from_u64(5)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.x, x.y, x.theta), (y.x, y.y, y.theta));
        }
    }

    #[test]
    fn info_nce_uniform_scores() {
        // Equal scores over 1 positive + 31 negatives: ln(32).
        let negs = vec![0.42; 31];
        let loss = info_nce(0.42, &negs, 0.03).unwrap();
        assert!((loss - 32f64.ln()).abs() < 1e-9, "loss {loss}");
        // Holds for any K and tau.
        for k in [1usize, 7, 100] {
            let loss = info_nce(-1.3, &vec![-1.3; k], 1.7).unwrap();
            assert!((loss - ((k + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn info_nce_saturates() {
        let negs = vec![0.0; 31];
        let loss = info_nce(41.0, &negs, 1.0).unwrap();
        assert!(loss < 1e-15, "loss {loss}");
    }

    #[test]
    fn info_nce_matches_direct_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..200 {
            let k = rand::Rng::random_range(&mut rng, 1..40);
            let s_pos = rand::Rng::random_range(&mut rng, -2.0..2.0);
            let negs: Vec<f64> =
                (0..k).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            let tau = rand::Rng::random_range(&mut rng, 0.01..2.0);
            let got = info_nce(s_pos, &negs, tau).unwrap();
            // Direct softmax evaluation (safe for these moderate scores).
            let ep = (s_pos / tau).exp();
            let den: f64 = ep + negs.iter().map(|s| (s / tau).exp()).sum::<f64>();
            let want = -(ep / den).ln();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            assert!(got > 0.0);
        }
    }

    #[test]
    fn info_nce_monotonicity() {
        let negs = vec![0.1, -0.4, 0.3];
        let tau = 0.5;
        let eps = 1e-5;
        let base = info_nce(0.2, &negs, tau).unwrap();
        assert!(info_nce(0.2 + eps, &negs, tau).unwrap() < base);
        let mut bumped = negs.clone();
        bumped[1] += eps;
        assert!(info_nce(0.2, &bumped, tau).unwrap() > base);
    }

    #[test]
    fn info_nce_tau_floor() {
        let negs = vec![0.3, -0.2];
        let a = info_nce(0.5, &negs, 0.001).unwrap();
        let b = info_nce(0.5, &negs, TAU_FLOOR).unwrap();
        assert_eq!(a, b);
        assert!(matches!(info_nce(0.5, &[], 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn confidence_target_examples() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..5 * 4 * 8).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let g = l2_normalize(&FeatureMap::new(5, 4, 8, data, None).unwrap(), NORM_EPSILON).unwrap();
        let ones = confidence_target(&g, &g).unwrap();
        for &v in ones.data() {
            assert!((v - 1.0).abs() < 1e-5);
        }
        let neg_data: Vec<f32> = g.data().iter().map(|v| -v).collect();
        let neg = FeatureMap::new(5, 4, 8, neg_data, None).unwrap();
        let zeros = confidence_target(&g, &neg).unwrap();
        assert!(zeros.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn confidence_target_orthogonal_is_zero() {
        let a = FeatureMap::new(1, 1, 2, vec![1.0, 0.0], None).unwrap();
        let b = FeatureMap::new(1, 1, 2, vec![0.0, 1.0], None).unwrap();
        assert_eq!(confidence_target(&a, &b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn bce_examples() {
        let half = ConfidenceMap::constant(3, 3, 0.5).unwrap();
        let loss = bce_loss(&half, &half, 1e-7).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);

        let zeros = ConfidenceMap::constant(2, 2, 0.0).unwrap();
        let ones = ConfidenceMap::constant(2, 2, 1.0).unwrap();
        assert!(bce_loss(&zeros, &zeros, 1e-7).unwrap() < 1e-6);
        assert!(bce_loss(&ones, &ones, 1e-7).unwrap() < 1e-6);
    }

    #[test]
    fn bce_matches_direct_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            let h = rand::Rng::random_range(&mut rng, 1..6);
            let w = rand::Rng::random_range(&mut rng, 1..6);
            let pred = ConfidenceMap::new(
                h,
                w,
                (0..h * w).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect(),
            )
            .unwrap();
            let gt = ConfidenceMap::new(
                h,
                w,
                (0..h * w).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect(),
            )
            .unwrap();
            let got = bce_loss(&pred, &gt, 1e-7).unwrap();
            let mut want = 0.0f64;
            for i in 0..h * w {
                let p = (pred.data()[i] as f64).clamp(1e-7, 1.0 - 1e-7);
                let t = gt.data()[i] as f64;
                want -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            }
            want /= (h * w) as f64;
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn bce_minimized_at_target() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = rand::Rng::random_range(&mut rng, 0.0..1.0);
            let target = ConfidenceMap::constant(1, 1, t).unwrap();
            let at_target = bce_loss(&target, &target, 1e-7).unwrap();
            for k in 0..=100 {
                let p = k as f32 / 100.0;
                let pred = ConfidenceMap::constant(1, 1, p).unwrap();
                let loss = bce_loss(&pred, &target, 1e-7).unwrap();
                assert!(loss >= at_target - 1e-9, "p={p} t={t}: {loss} < {at_target}");
            }
        }
    }

    #[test]
    fn total_loss_is_a_sum() {
        assert_eq!(total_loss(0.0, 0.0), 0.0);
        assert!((total_loss(32f64.ln(), 2f64.ln()) - 64f64.ln()).abs() < 1e-12);
        assert_eq!(total_loss(1.25, -0.5), total_loss(-0.5, 1.25));
    }
}
