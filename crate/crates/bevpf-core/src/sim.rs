//! Synthetic feature-world oracle: procedural aerial feature maps,
//! ground-truth trajectories, noisy odometry, and degraded BEV observations
//! with known ground truth. Stands in for the trained encoders so the whole
//! pipeline is testable at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l2_normalize_cell, ConfidenceMap, FeatureMap, GeoTransform, NORM_EPSILON};
use crate::sampler::{bilinear_sample, build_grid, BevSpec};
use crate::se2::{compose, exp_map, relative_motion, sample_motion_noise, MotionNoiseParams, Pose2, Twist2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimWorldConfig {
    pub seed: u64,
    /// Side length in pixels (the world is square).
    #[serde(default = "default_world_size")]
    pub size: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Meters per pixel.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_octaves")]
    pub octaves: usize,
    /// Coarsest noise wavelength, meters.
    #[serde(default = "default_correlation_length")]
    pub correlation_length: f64,
    #[serde(default = "default_origin_east")]
    pub origin_east: f64,
    #[serde(default = "default_origin_north")]
    pub origin_north: f64,
}

fn default_world_size() -> usize {
    1024
}
fn default_dim() -> usize {
    32
}
fn default_resolution() -> f64 {
    0.3
}
fn default_octaves() -> usize {
    4
}
fn default_correlation_length() -> f64 {
    9.6
}
fn default_origin_east() -> f64 {
    500_000.0
}
fn default_origin_north() -> f64 {
    4_500_000.0
}

impl Default for SimWorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: default_world_size(),
            dim: default_dim(),
            resolution: default_resolution(),
            octaves: default_octaves(),
            correlation_length: default_correlation_length(),
            origin_east: default_origin_east(),
            origin_north: default_origin_north(),
        }
    }
}

impl SimWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.dim == 0 || self.octaves == 0 {
            return Err(Error::InvalidArgument("world size, dim and octaves must be >= 1".into()));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::InvalidArgument("resolution must be > 0".into()));
        }
        if self.correlation_length <= self.resolution {
            return Err(Error::InvalidArgument(format!(
                "correlation_length {} must exceed the resolution {}",
                self.correlation_length, self.resolution
            )));
        }
        Ok(())
    }

    pub fn geo(&self) -> GeoTransform {
        GeoTransform {
            origin_east: self.origin_east,
            origin_north: self.origin_north,
            resolution: self.resolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfMode {
    /// Clamped cosine between the noisy and clean features: behaves like a
    /// perfectly trained confidence head.
    OracleCosine,
    /// A constant everywhere (see `conf_value`).
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationNoiseConfig {
    /// Std of i.i.d. Gaussian noise added per feature channel.
    #[serde(default = "default_sigma")]
    pub feature_noise_sigma: f64,
    /// Fraction of BEV cells hidden by occlusion tiles.
    #[serde(default)]
    pub occlusion_fraction: f64,
    /// Occlusion tile side length in cells.
    #[serde(default = "default_patch_size")]
    pub occlusion_patch_size: usize,
    #[serde(default = "default_conf_mode")]
    pub conf_mode: ConfMode,
    /// Confidence used in `Constant` mode.
    #[serde(default = "default_conf_value")]
    pub conf_value: f64,
}

fn default_sigma() -> f64 {
    0.3
}
fn default_patch_size() -> usize {
    16
}
fn default_conf_mode() -> ConfMode {
    ConfMode::OracleCosine
}
fn default_conf_value() -> f64 {
    1.0
}

impl Default for ObservationNoiseConfig {
    fn default() -> Self {
        Self {
            feature_noise_sigma: default_sigma(),
            occlusion_fraction: 0.0,
            occlusion_patch_size: default_patch_size(),
            conf_mode: default_conf_mode(),
            conf_value: default_conf_value(),
        }
    }
}

impl ObservationNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("feature_noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.occlusion_fraction) {
            return Err(Error::InvalidArgument("occlusion_fraction must be in [0, 1]".into()));
        }
        if self.occlusion_patch_size == 0 {
            return Err(Error::InvalidArgument("occlusion_patch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.conf_value) {
            return Err(Error::InvalidArgument("conf_value must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub seed: u64,
    /// Number of motion steps; the trajectory has n_steps + 1 poses.
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    /// Seconds between poses.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// (min, max) speed, m/s.
    #[serde(default = "default_speed_range")]
    pub speed_range: (f64, f64),
    /// (min, max) yaw rate, rad/s.
    #[serde(default = "default_yaw_rate_range")]
    pub yaw_rate_range: (f64, f64),
    /// Keep-away distance from the map edges, meters.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_n_steps() -> usize {
    500
}
fn default_dt() -> f64 {
    0.25
}
fn default_speed_range() -> (f64, f64) {
    (2.0, 2.0)
}
fn default_yaw_rate_range() -> (f64, f64) {
    (-0.4, 0.4)
}
fn default_margin() -> f64 {
    80.0
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_steps: default_n_steps(),
            dt: default_dt(),
            speed_range: default_speed_range(),
            yaw_rate_range: default_yaw_rate_range(),
            margin: default_margin(),
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::InvalidArgument("n_steps must be >= 2".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be > 0".into()));
        }
        if self.speed_range.0 < 0.0 || self.speed_range.0 > self.speed_range.1 {
            return Err(Error::InvalidArgument(format!(
                "speed range must satisfy 0 <= min <= max, got {:?}",
                self.speed_range
            )));
        }
        if self.yaw_rate_range.0 > self.yaw_rate_range.1 {
            return Err(Error::InvalidArgument("yaw rate range is inverted".into()));
        }
        if self.margin < 0.0 {
            return Err(Error::InvalidArgument("margin must be >= 0".into()));
        }
        Ok(())
    }
}

/// Lattice noise for one (channel, octave) pair.
struct Lattice {
    w: usize,
    values: Vec<f32>,
    /// Pixel wavelength.
    spacing: f64,
}

impl Lattice {
    fn generate(seed: u64, stream: u64, size: usize, spacing: f64) -> Self {
        let w = (size as f64 / spacing).floor() as usize + 2;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let values = (0..w * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Self { w, values, spacing }
    }

    #[inline]
    fn sample(&self, x: f64, y: f64) -> f32 {
        let lx = x / self.spacing;
        let ly = y / self.spacing;
        let ix = lx.floor() as usize;
        let iy = ly.floor() as usize;
        let fx = (lx - lx.floor()) as f32;
        let fy = (ly - ly.floor()) as f32;
        let i00 = self.values[iy * self.w + ix];
        let i01 = self.values[iy * self.w + ix + 1];
        let i10 = self.values[(iy + 1) * self.w + ix];
        let i11 = self.values[(iy + 1) * self.w + ix + 1];
        let top = i00 + (i01 - i00) * fx;
        let bot = i10 + (i11 - i10) * fx;
        top + (bot - top) * fy
    }
}

/// Procedural aerial feature world: per-channel multi-octave value noise,
/// L2-normalized per cell, deterministic in the seed.
pub fn generate_world(cfg: &SimWorldConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let size = cfg.size;
    let dim = cfg.dim;
    let base_wavelength = cfg.correlation_length / cfg.resolution;

    // One lattice per (channel, octave); wavelength halves per octave.
    let lattices: Vec<Vec<Lattice>> = (0..dim)
        .into_par_iter()
        .map(|ch| {
            (0..cfg.octaves)
                .map(|oct| {
                    let spacing = (base_wavelength / (1 << oct) as f64).max(2.0);
                    let stream = (ch * cfg.octaves + oct + 1) as u64;
                    Lattice::generate(cfg.seed, stream, size, spacing)
                })
                .collect()
        })
        .collect();

    let mut out = FeatureMap::zeros(size, size, dim, Some(cfg.geo()));
    out.data_mut()
        .par_chunks_exact_mut(size * dim)
        .enumerate()
        .for_each(|(row, row_data)| {
            let y = row as f64;
            for col in 0..size {
                let x = col as f64;
                let cell = &mut row_data[col * dim..(col + 1) * dim];
                for (ch, v) in cell.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for lat in &lattices[ch] {
                        acc += lat.sample(x, y);
                    }
                    *v = acc;
                }
                l2_normalize_cell(cell, NORM_EPSILON);
            }
        });
    Ok(out)
}

/// Smooth kinematic rollout: piecewise-constant speed and yaw rate resampled
/// roughly every two seconds, reflected off the margin box.
pub fn generate_trajectory(world: &FeatureMap, cfg: &TrajectoryConfig) -> Result<Vec<(f64, Pose2)>> {
    cfg.validate()?;
    let geo = world
        .geo()
        .ok_or_else(|| Error::InvalidArgument("trajectory generation needs a geo-referenced world".into()))?;
    let east_min = geo.origin_east + cfg.margin;
    let east_max = geo.origin_east + (world.width() as f64 - 1.0) * geo.resolution - cfg.margin;
    let north_max = geo.origin_north - cfg.margin;
    let north_min = geo.origin_north - (world.height() as f64 - 1.0) * geo.resolution + cfg.margin;
    if east_min >= east_max || north_min >= north_max {
        return Err(Error::InvalidArgument(format!(
            "margin {} leaves no room inside the {}x{} world",
            cfg.margin,
            world.height(),
            world.width()
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut pose = Pose2::new(
        0.5 * (east_min + east_max),
        0.5 * (north_min + north_max),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    let segment = ((2.0 / cfg.dt).round() as usize).max(1);
    let mut speed = 0.0;
    let mut yaw_rate = 0.0;

    let mut out = Vec::with_capacity(cfg.n_steps + 1);
    out.push((0.0, pose));
    for step in 0..cfg.n_steps {
        if step % segment == 0 {
            speed = rng.random_range(cfg.speed_range.0..=cfg.speed_range.1);
            yaw_rate = rng.random_range(cfg.yaw_rate_range.0..=cfg.yaw_rate_range.1);
        }
        let twist = Twist2::new(speed * cfg.dt, 0.0, yaw_rate * cfg.dt);
        let mut next = compose(&pose, &exp_map(&twist));
        if next.x < east_min || next.x > east_max || next.y < north_min || next.y > north_max {
            // Reflect the heading off the violated boundary and retry.
            let mut theta = pose.theta;
            if next.x < east_min || next.x > east_max {
                theta = std::f64::consts::PI - theta;
            }
            if next.y < north_min || next.y > north_max {
                theta = -theta;
            }
            pose = Pose2::new(pose.x, pose.y, theta);
            next = compose(&pose, &exp_map(&twist));
            next = Pose2::new(
                next.x.clamp(east_min, east_max),
                next.y.clamp(north_min, north_max),
                next.theta,
            );
        }
        pose = next;
        out.push(((step + 1) as f64 * cfg.dt, pose));
    }
    Ok(out)
}

/// Relative motions between consecutive ground-truth poses, corrupted by
/// sampled motion noise. Output i is the measured motion into pose i+1.
pub fn generate_odometry<R: Rng + ?Sized>(
    gt: &[(f64, Pose2)],
    noise: &MotionNoiseParams,
    rng: &mut R,
) -> Result<Vec<Pose2>> {
    if gt.len() < 2 {
        return Err(Error::InvalidArgument("odometry needs at least two poses".into()));
    }
    noise.validate()?;
    let mut out = Vec::with_capacity(gt.len() - 1);
    for win in gt.windows(2) {
        let clean = relative_motion(&win[0].1, &win[1].1);
        let w = sample_motion_noise(&clean, noise, rng);
        out.push(compose(&clean, &w));
    }
    Ok(out)
}

/// Compose odometry increments from a start pose: the drifting baseline.
pub fn dead_reckon(start: &Pose2, odometry: &[Pose2]) -> Vec<Pose2> {
    let mut out = Vec::with_capacity(odometry.len() + 1);
    let mut pose = *start;
    out.push(pose);
    for u in odometry {
        pose = compose(&pose, u);
        out.push(pose);
    }
    out
}

/// Synthesize a degraded BEV observation at a ground-truth pose.
///
/// Samples the clean patch from the world, adds per-channel Gaussian noise
/// and re-normalizes (skipped entirely at sigma = 0 so the zero-noise
/// observation equals the raw patch), builds the confidence map, then zeroes
/// shuffled occlusion tiles until the requested cell fraction is covered.
pub fn synthesize_observation<R: Rng + ?Sized>(
    world_hat: &FeatureMap,
    pose_gt: &Pose2,
    spec: &BevSpec,
    noise: &ObservationNoiseConfig,
    rng: &mut R,
) -> Result<(FeatureMap, ConfidenceMap)> {
    noise.validate()?;
    let geo = world_hat
        .geo()
        .ok_or_else(|| Error::InvalidArgument("observation synthesis needs a geo-referenced world".into()))?;
    let grid = build_grid(pose_gt, geo, spec)?;
    let clean = bilinear_sample(world_hat, &grid);

    let (h, w, d) = (spec.height, spec.width, world_hat.dim());
    let mut g = clean.clone();
    if noise.feature_noise_sigma > 0.0 {
        let sigma = noise.feature_noise_sigma as f32;
        let row_seed: u64 = rng.random();
        g.data_mut()
            .par_chunks_exact_mut(w * d)
            .enumerate()
            .for_each(|(row, row_data)| {
                let mut row_rng = ChaCha12Rng::seed_from_u64(row_seed);
                row_rng.set_stream(row as u64);
                for v in row_data.iter_mut() {
                    let n: f32 = row_rng.sample(StandardNormal);
                    *v += sigma * n;
                }
                for cell in row_data.chunks_exact_mut(d) {
                    l2_normalize_cell(cell, NORM_EPSILON);
                }
            });
    }

    let mut conf = match noise.conf_mode {
        ConfMode::Constant => vec![noise.conf_value as f32; h * w],
        ConfMode::OracleCosine => {
            let mut conf = vec![0.0f32; h * w];
            for (i, c) in conf.iter_mut().enumerate() {
                let a = &g.data()[i * d..(i + 1) * d];
                let b = &clean.data()[i * d..(i + 1) * d];
                let mut dot = 0.0f64;
                let mut na = 0.0f64;
                let mut nb = 0.0f64;
                for (x, y) in a.iter().zip(b) {
                    dot += *x as f64 * *y as f64;
                    na += *x as f64 * *x as f64;
                    nb += *y as f64 * *y as f64;
                }
                let denom = (na * nb).sqrt();
                *c = if denom < 1e-12 { 0.0 } else { (dot / denom).clamp(0.0, 1.0) as f32 };
            }
            conf
        }
    };

    if noise.occlusion_fraction > 0.0 {
        let ps = noise.occlusion_patch_size;
        let tiles_r = h.div_ceil(ps);
        let tiles_c = w.div_ceil(ps);
        let mut tiles: Vec<(usize, usize)> =
            (0..tiles_r).flat_map(|tr| (0..tiles_c).map(move |tc| (tr, tc))).collect();
        use rand::seq::SliceRandom;
        tiles.shuffle(rng);
        let n_cover =
            ((noise.occlusion_fraction * tiles.len() as f64).round() as usize).min(tiles.len());
        for &(tr, tc) in &tiles[..n_cover] {
            for r in tr * ps..((tr + 1) * ps).min(h) {
                for c in tc * ps..((tc + 1) * ps).min(w) {
                    conf[r * w + c] = 0.0;
                    g.cell_mut(r, c).fill(0.0);
                }
            }
        }
    }

    Ok((g, ConfidenceMap::new(h, w, conf)?))
}
