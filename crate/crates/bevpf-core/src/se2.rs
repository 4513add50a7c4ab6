//! SE(2) group operations, exponential/logarithm maps, and Lie-algebra
//! noise sampling for the prediction step.
//!
//! Headings are measured counter-clockwise from the east axis and always
//! wrapped to `(-pi, pi]`. Positions are UTM east/north in meters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Switch to the Taylor expansion of V(theta) below this angle.
const SMALL_ANGLE: f64 = 1e-6;

/// Wrap an angle to `(-pi, pi]`. In-range values pass through bit-exactly.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    // rem_euclid returns [0, 2pi), so the result lands in (-pi, pi].
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

/// A 3-DoF pose on SE(2): UTM east/north position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    /// UTM east, meters.
    pub x: f64,
    /// UTM north, meters.
    pub y: f64,
    /// Heading, radians CCW from east, wrapped to (-pi, pi].
    pub theta: f64,
}

impl Pose2 {
    /// Build a pose, wrapping the heading.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite() && theta.is_finite());
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn identity() -> Self {
        Self { x: 0.0, y: 0.0, theta: 0.0 }
    }

    /// Euclidean distance between the positions of two poses.
    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A Lie-algebra vector in se(2): body-frame translation plus rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist2 {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Twist2 {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        debug_assert!(dx.is_finite() && dy.is_finite() && dtheta.is_finite());
        Self { dx, dy, dtheta }
    }
}

/// Odometry noise model: standard deviations proportional to the measured
/// motion, with absolute floors so a stationary vehicle still diffuses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionNoiseParams {
    /// Translation std as a fraction of the translation magnitude.
    pub frac_trans: f64,
    /// Rotation std as a fraction of the absolute heading change.
    pub frac_rot: f64,
    /// Minimum translation std, meters.
    #[serde(default = "default_floor_trans")]
    pub floor_trans: f64,
    /// Minimum rotation std, radians.
    #[serde(default = "default_floor_rot")]
    pub floor_rot: f64,
}

fn default_floor_trans() -> f64 {
    0.01
}

fn default_floor_rot() -> f64 {
    0.002
}

impl Default for MotionNoiseParams {
    fn default() -> Self {
        Self {
            frac_trans: 0.1,
            frac_rot: 0.1,
            floor_trans: default_floor_trans(),
            floor_rot: default_floor_rot(),
        }
    }
}

impl MotionNoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.frac_trans < 0.0 || self.frac_rot < 0.0 || self.floor_trans < 0.0 || self.floor_rot < 0.0
        {
            return Err(Error::InvalidArgument(
                "motion noise parameters must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// No noise at all; useful for dead-reckoning checks.
    pub fn zero() -> Self {
        Self { frac_trans: 0.0, frac_rot: 0.0, floor_trans: 0.0, floor_rot: 0.0 }
    }
}

/// Group composition `a (+) b`: b's translation rotated by a's heading and
/// added to a's translation; headings summed and wrapped.
pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    let (s, c) = a.theta.sin_cos();
    Pose2 {
        x: a.x + c * b.x - s * b.y,
        y: a.y + s * b.x + c * b.y,
        theta: wrap_angle(a.theta + b.theta),
    }
}

/// Group inverse: `compose(a, inverse(a))` is the identity.
pub fn inverse(a: &Pose2) -> Pose2 {
    let (s, c) = a.theta.sin_cos();
    Pose2 {
        x: -(c * a.x + s * a.y),
        y: s * a.x - c * a.y,
        theta: wrap_angle(-a.theta),
    }
}

/// The relative motion `u` with `a (+) u = b`, i.e. `inverse(a) (+) b`.
///
/// Computed as the rotated position difference rather than literally
/// composing with the inverse, which keeps the result accurate when the
/// poses carry large UTM offsets.
pub fn relative_motion(a: &Pose2, b: &Pose2) -> Pose2 {
    let (s, c) = a.theta.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    Pose2 {
        x: c * dx + s * dy,
        y: -s * dx + c * dy,
        theta: wrap_angle(b.theta - a.theta),
    }
}

/// V(theta) coefficients: A = sin(t)/t, B = (1 - cos(t))/t.
///
/// The closed form uses 2*sin^2(t/2) for the numerator of B, which has no
/// cancellation; the Taylor branch only covers the removable singularity.
#[inline]
fn v_coeffs(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, theta / 2.0 - t2 * theta / 24.0)
    } else {
        let half_sin = (0.5 * theta).sin();
        ((theta.sin()) / theta, 2.0 * half_sin * half_sin / theta)
    }
}

/// Closed-form SE(2) exponential map.
pub fn exp_map(delta: &Twist2) -> Pose2 {
    let (a, b) = v_coeffs(delta.dtheta);
    Pose2 {
        x: a * delta.dx - b * delta.dy,
        y: b * delta.dx + a * delta.dy,
        theta: wrap_angle(delta.dtheta),
    }
}

/// SE(2) logarithm map, the inverse of [`exp_map`].
///
/// Fails at |theta| = pi where the logarithm branch is ambiguous.
pub fn log_map(p: &Pose2) -> Result<Twist2> {
    let theta = p.theta;
    if theta.abs() >= PI {
        return Err(Error::IllConditionedLog);
    }
    let (a, b) = v_coeffs(theta);
    // V^-1 = [[a, b], [-b, a]] / (a^2 + b^2)
    let denom = a * a + b * b;
    Ok(Twist2 {
        dx: (a * p.x + b * p.y) / denom,
        dy: (-b * p.x + a * p.y) / denom,
        dtheta: theta,
    })
}

/// Draw a zero-mean SE(2) noise pose whose covariance scales with the
/// odometry increment `u`.
///
/// Sigma is `max(frac * motion, floor)` per axis, applied to a diagonal
/// Gaussian in the Lie algebra and pushed through [`exp_map`]. Consumes
/// exactly three standard-normal draws (x, y, theta order).
pub fn sample_motion_noise<R: Rng + ?Sized>(
    u: &Pose2,
    params: &MotionNoiseParams,
    rng: &mut R,
) -> Pose2 {
    let sigma_t = (params.frac_trans * u.x.hypot(u.y)).max(params.floor_trans);
    let sigma_r = (params.frac_rot * wrap_angle(u.theta).abs()).max(params.floor_rot);
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    let nt: f64 = rng.sample(StandardNormal);
    exp_map(&Twist2 { dx: sigma_t * nx, dy: sigma_t * ny, dtheta: sigma_r * nt })
}
