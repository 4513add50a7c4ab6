//! Trajectory metrics: ATE RMSE in the UTM frame with no alignment,
//! per-step error series, and the empirical error CDF.

use crate::error::{Error, Result};
use crate::se2::{wrap_angle, Pose2};

/// A timestamped pose sequence.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    timestamps: Vec<f64>,
    poses: Vec<Pose2>,
}

impl TrajectoryRecord {
    pub fn new(timestamps: Vec<f64>, poses: Vec<Pose2>) -> Result<Self> {
        if timestamps.is_empty() || timestamps.len() != poses.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs matching non-empty timestamps/poses, got {}/{}",
                timestamps.len(),
                poses.len()
            )));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("timestamps must be strictly increasing".into()));
        }
        Ok(Self { timestamps, poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn poses(&self) -> &[Pose2] {
        &self.poses
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Pose2)> {
        self.timestamps.iter().copied().zip(self.poses.iter())
    }
}

fn check_association(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::TimestampMismatch(format!(
            "trajectories have {} vs {} entries",
            est.len(),
            gt.len()
        )));
    }
    for (i, (a, b)) in est.timestamps.iter().zip(&gt.timestamps).enumerate() {
        if a != b {
            return Err(Error::TimestampMismatch(format!(
                "timestamps differ at row {i}: {a} vs {b}"
            )));
        }
    }
    Ok(())
}

/// Root-mean-square position error over exactly-associated timestamps;
/// heading is excluded and no alignment is performed.
pub fn ate_rmse(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<f64> {
    check_association(est, gt)?;
    let sum_sq: f64 = est
        .poses
        .iter()
        .zip(&gt.poses)
        .map(|(e, g)| {
            let (dx, dy) = (e.x - g.x, e.y - g.y);
            dx * dx + dy * dy
        })
        .sum();
    Ok((sum_sq / est.len() as f64).sqrt())
}

/// Per-step Euclidean position errors.
pub fn error_series(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<Vec<(f64, f64)>> {
    check_association(est, gt)?;
    Ok(est
        .iter()
        .zip(&gt.poses)
        .map(|((t, e), g)| (t, e.distance(g)))
        .collect())
}

/// Mean absolute wrapped heading error, radians; a diagnostics companion to
/// the position-only ATE.
pub fn mean_heading_error(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<f64> {
    check_association(est, gt)?;
    let sum: f64 = est
        .poses
        .iter()
        .zip(&gt.poses)
        .map(|(e, g)| wrap_angle(e.theta - g.theta).abs())
        .sum();
    Ok(sum / est.len() as f64)
}

/// Empirical CDF sampled at `n_bins` thresholds from 0 to the max error.
pub fn error_cdf(errors: &[f64], n_bins: usize) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() || n_bins == 0 {
        return Err(Error::InvalidArgument("error_cdf needs non-empty errors and bins".into()));
    }
    let max = errors.iter().cloned().fold(0.0f64, f64::max);
    let n = errors.len() as f64;
    let denom = (n_bins - 1).max(1) as f64;
    Ok((0..n_bins)
        .map(|k| {
            let threshold = max * k as f64 / denom;
            let fraction = errors.iter().filter(|&&e| e <= threshold).count() as f64 / n;
            (threshold, fraction)
        })
        .collect())
}
