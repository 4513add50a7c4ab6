//! The recursive estimator: initialization, prediction, measurement update
//! against a mean-pose aerial crop, ESS-gated low-variance resampling, and
//! point estimation.
//!
//! Per-particle scoring runs in parallel with per-particle deterministic
//! outputs and a fixed-order reduction, so results are bit-identical across
//! thread counts. The filter owns a single seeded RNG consumed in a fixed
//! order: initialization, then per-particle prediction noise in index order,
//! then one resampling draw when triggered.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::grid::{crop_origin, ConfidenceMap, FeatureMap, GeoTransform};
use crate::likelihood::{log_likelihood, normalize_log_weights, ScoreParams};
use crate::sampler::{sample_score_chunked, BevSpec, GridGeometry, SampleWindow};
use crate::se2::{compose, sample_motion_noise, wrap_angle, MotionNoiseParams, Pose2};

/// Grid rows per parallel work item in the update hot loop.
const SAMPLE_BLOCK_ROWS: usize = 56;

/// One weighted pose hypothesis.
#[derive(Debug, Clone, Copy)]
pub struct Particle {
    pub pose: Pose2,
    pub log_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    /// Initialization position spread, meters.
    #[serde(default = "default_init_sigma_trans")]
    pub init_sigma_trans: f64,
    /// Initialization heading spread, radians.
    #[serde(default = "default_init_sigma_rot")]
    pub init_sigma_rot: f64,
    #[serde(default)]
    pub motion_noise: MotionNoiseParams,
    /// Likelihood temperature.
    #[serde(default = "default_tau_s")]
    pub tau_s: f64,
    /// Resample when ESS falls below this fraction of N.
    #[serde(default = "default_ess_fraction")]
    pub ess_fraction: f64,
    #[serde(default = "default_crop")]
    pub crop_h: usize,
    #[serde(default = "default_crop")]
    pub crop_w: usize,
    pub seed: u64,
}

fn default_n_particles() -> usize {
    128
}
fn default_init_sigma_trans() -> f64 {
    3.0
}
fn default_init_sigma_rot() -> f64 {
    10f64.to_radians()
}
fn default_tau_s() -> f64 {
    1.0
}
fn default_ess_fraction() -> f64 {
    0.1
}
fn default_crop() -> usize {
    768
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_particles: default_n_particles(),
            init_sigma_trans: default_init_sigma_trans(),
            init_sigma_rot: default_init_sigma_rot(),
            motion_noise: MotionNoiseParams::default(),
            tau_s: default_tau_s(),
            ess_fraction: default_ess_fraction(),
            crop_h: default_crop(),
            crop_w: default_crop(),
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidArgument("n_particles must be >= 1".into()));
        }
        if self.init_sigma_trans < 0.0 || self.init_sigma_rot < 0.0 {
            return Err(Error::InvalidArgument("initialization sigmas must be >= 0".into()));
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ess_fraction must be in (0, 1], got {}",
                self.ess_fraction
            )));
        }
        if !(self.tau_s > 0.0) {
            return Err(Error::InvalidArgument(format!("tau_s must be > 0, got {}", self.tau_s)));
        }
        if self.crop_h == 0 || self.crop_w == 0 {
            return Err(Error::InvalidArgument("crop dimensions must be positive".into()));
        }
        self.motion_noise.validate()
    }
}

/// Wall-clock breakdown of the most recent step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepTimings {
    pub predict: Duration,
    pub crop: Duration,
    pub grid_sample: Duration,
    pub score: Duration,
    pub weight_update: Duration,
    pub resample: Duration,
    pub total: Duration,
}

/// Per-step diagnostics of the particle scores.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub struct ParticleFilter {
    cfg: FilterConfig,
    particles: Vec<Particle>,
    step_count: u64,
    rng: ChaCha12Rng,
    last_crop_geo: Option<GeoTransform>,
    last_timings: StepTimings,
    last_score_stats: Option<ScoreStats>,
    last_resampled: bool,
    last_ess: Option<f64>,
}

impl ParticleFilter {
    /// Spread N particles with Gaussian noise around a coarse initial pose;
    /// weights start uniform.
    pub fn initialize(pose0: Pose2, cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let n = cfg.n_particles;
        let log_w = -(n as f64).ln();
        let mut particles = Vec::with_capacity(n);
        for _ in 0..n {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            let nt: f64 = rng.sample(StandardNormal);
            particles.push(Particle {
                pose: Pose2::new(
                    pose0.x + cfg.init_sigma_trans * nx,
                    pose0.y + cfg.init_sigma_trans * ny,
                    wrap_angle(pose0.theta + cfg.init_sigma_rot * nt),
                ),
                log_weight: log_w,
            });
        }
        Ok(Self {
            cfg,
            particles,
            step_count: 0,
            rng,
            last_crop_geo: None,
            last_timings: StepTimings::default(),
            last_score_stats: None,
            last_resampled: false,
            last_ess: None,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn last_timings(&self) -> StepTimings {
        self.last_timings
    }

    pub fn last_score_stats(&self) -> Option<ScoreStats> {
        self.last_score_stats
    }

    pub fn last_resampled(&self) -> bool {
        self.last_resampled
    }

    /// ESS measured by the most recent resampling decision, i.e. after the
    /// weight update and before any reset.
    pub fn last_ess(&self) -> Option<f64> {
        self.last_ess
    }

    pub fn last_crop_geo(&self) -> Option<GeoTransform> {
        self.last_crop_geo
    }

    /// Propagate every particle by `u` plus sampled motion noise; weights
    /// are untouched.
    pub fn predict(&mut self, u: &Pose2) {
        let t0 = Instant::now();
        for p in &mut self.particles {
            let noise = sample_motion_noise(u, &self.cfg.motion_noise, &mut self.rng);
            p.pose = compose(&compose(&p.pose, u), &noise);
        }
        self.last_timings.predict = t0.elapsed();
    }

    /// Weighted mean position with a weighted circular mean heading.
    ///
    /// If the heading resultant vanishes, the heading of the highest-weight
    /// particle is used instead.
    pub fn mean_pose(&self) -> Pose2 {
        let m = self
            .particles
            .iter()
            .map(|p| p.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum_a = 0.0f64;
        let (mut sx, mut sy, mut ss, mut sc) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for p in &self.particles {
            let a = (p.log_weight - m).exp();
            sum_a += a;
            sx += a * p.pose.x;
            sy += a * p.pose.y;
            ss += a * p.pose.theta.sin();
            sc += a * p.pose.theta.cos();
        }
        let theta = if ss.hypot(sc) < 1e-12 * sum_a {
            let best = self
                .particles
                .iter()
                .max_by(|a, b| a.log_weight.partial_cmp(&b.log_weight).unwrap())
                .expect("non-empty particle set");
            best.pose.theta
        } else {
            ss.atan2(sc)
        };
        Pose2 { x: sx / sum_a, y: sy / sum_a, theta: wrap_angle(theta) }
    }

    /// `1 / sum(w^2)` over normalized weights, computed scale-invariantly as
    /// `(sum a)^2 / sum(a^2)` so a uniform set yields exactly N.
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights_shifted())
    }

    fn weights_shifted(&self) -> Vec<f64> {
        let m = self
            .particles
            .iter()
            .map(|p| p.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        self.particles.iter().map(|p| (p.log_weight - m).exp()).collect()
    }

    /// Score every particle against the aerial map and update the weights.
    ///
    /// The map is cropped once around the current mean pose, then per
    /// particle: sampling grid, bilinear patch, confidence-weighted
    /// similarity, likelihood, and finally a normalized log-weight update.
    /// Particles outside the crop see zero-padded patches and score toward
    /// zero.
    pub fn update(
        &mut self,
        g_hat: &FeatureMap,
        conf: &ConfidenceMap,
        aerial_map_hat: &FeatureMap,
        spec: &BevSpec,
    ) -> Result<()> {
        if g_hat.height() != spec.height || g_hat.width() != spec.width {
            return Err(Error::DimensionMismatch(format!(
                "BEV features {}x{} vs spec {}x{}",
                g_hat.height(),
                g_hat.width(),
                spec.height,
                spec.width
            )));
        }
        if conf.height() != spec.height || conf.width() != spec.width {
            return Err(Error::DimensionMismatch(format!(
                "confidence {}x{} vs spec {}x{}",
                conf.height(),
                conf.width(),
                spec.height,
                spec.width
            )));
        }
        if self.cfg.crop_h < spec.height || self.cfg.crop_w < spec.width {
            return Err(Error::InvalidArgument(format!(
                "crop {}x{} smaller than BEV grid {}x{}",
                self.cfg.crop_h, self.cfg.crop_w, spec.height, spec.width
            )));
        }
        let geo = aerial_map_hat
            .geo()
            .ok_or_else(|| Error::InvalidArgument("aerial map requires a geo-transform".into()))?;
        if (spec.resolution - geo.resolution).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "BEV resolution {} does not match map resolution {}",
                spec.resolution, geo.resolution
            )));
        }

        // The crop is virtual: particles sample the aerial map directly
        // through the crop window, with the window's zero-padding semantics.
        // Nothing is copied, so the crop phase is just origin arithmetic.
        let t_crop = Instant::now();
        let mean = self.mean_pose();
        let (win_r0, win_c0, crop_geo) = crop_origin(geo, &mean, self.cfg.crop_h, self.cfg.crop_w);
        let window = SampleWindow {
            r0: win_r0,
            c0: win_c0,
            height: self.cfg.crop_h,
            width: self.cfg.crop_w,
        };
        self.last_timings.crop = t_crop.elapsed();

        let sample_ns = AtomicU64::new(0);
        let score_ns = AtomicU64::new(0);

        let t_region = Instant::now();
        // Blocks outer, particles inner: the particle clouds overlap almost
        // entirely, so one block's aerial slab and BEV slice stay cache-hot
        // across all particles instead of being re-streamed per particle.
        // Per-particle partial sums still accumulate in block order, so the
        // result is bit-identical to scoring each particle in one sweep.
        let geoms: Vec<GridGeometry> = self
            .particles
            .iter()
            .map(|p| GridGeometry::new(&p.pose, &crop_geo, spec))
            .collect();
        let n = self.particles.len();
        let scratch_pool: Vec<Mutex<ParticleScratch>> = (0..rayon::current_num_threads().max(1))
            .map(|_| Mutex::new(ParticleScratch::new(spec, g_hat.dim())))
            .collect();
        let mut totals = vec![0.0f64; n];
        let mut r0 = 0usize;
        while r0 < spec.height {
            let r1 = (r0 + SAMPLE_BLOCK_ROWS).min(spec.height);
            let partials: Vec<f64> = (0..n)
                .into_par_iter()
                .with_min_len(8)
                .map(|i| {
                    let mut scratch = scratch_pool
                        [rayon::current_thread_index().unwrap_or(0) % scratch_pool.len()]
                    .lock()
                    .expect("scratch lock");
                    score_particle_block(
                        &geoms[i],
                        aerial_map_hat,
                        window,
                        g_hat,
                        conf,
                        spec,
                        r0,
                        r1,
                        &mut scratch,
                        // Timing a sparse subset keeps clock overhead out of
                        // the hot loop; the ratio is all the report needs.
                        if i % 32 == 0 { Some((&sample_ns, &score_ns)) } else { None },
                    )
                })
                .collect();
            for (t, p) in totals.iter_mut().zip(&partials) {
                *t += p;
            }
            r0 = r1;
        }
        let cells = (spec.height * spec.width) as f64;
        let scores: Vec<f64> = totals.into_iter().map(|t| t / cells).collect();
        let region = t_region.elapsed();
        self.last_crop_geo = Some(crop_geo);

        // Attribute the parallel region's wall time to grid+sample vs score
        // in proportion to the CPU time each consumed in the timed subset.
        let g = sample_ns.load(Ordering::Relaxed) as f64;
        let s = score_ns.load(Ordering::Relaxed) as f64;
        let frac = if g + s > 0.0 { g / (g + s) } else { 0.5 };
        self.last_timings.grid_sample = region.mul_f64(frac);
        self.last_timings.score = region.mul_f64(1.0 - frac);

        let t_weights = Instant::now();
        let params = ScoreParams { tau_s: self.cfg.tau_s };
        for (p, &s) in self.particles.iter_mut().zip(&scores) {
            p.log_weight += log_likelihood(s, &params);
        }
        {
            let mut lw: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
            normalize_log_weights(&mut lw)?;
            for (p, w) in self.particles.iter_mut().zip(lw) {
                p.log_weight = w;
            }
        }
        self.last_timings.weight_update = t_weights.elapsed();

        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &s in &scores {
            min = min.min(s);
            max = max.max(s);
            sum += s;
        }
        self.last_score_stats = Some(ScoreStats { mean: sum / scores.len() as f64, min, max });
        Ok(())
    }

    /// Systematic resampling when the ESS drops below
    /// `ess_fraction * n_particles`; returns whether it ran. Resampled
    /// weights are reset to uniform.
    pub fn resample_if_needed(&mut self) -> bool {
        let t0 = Instant::now();
        let n = self.particles.len();
        let weights = self.weights_shifted();
        let ess = effective_sample_size(&weights);
        self.last_ess = Some(ess);
        let resampled = ess < self.cfg.ess_fraction * n as f64;
        if resampled {
            let u0 = self.rng.random::<f64>() / n as f64;
            let idx = systematic_indices(&weights, n, u0);
            let log_w = -(n as f64).ln();
            self.particles = idx
                .into_iter()
                .map(|i| Particle { pose: self.particles[i].pose, log_weight: log_w })
                .collect();
        }
        self.last_resampled = resampled;
        self.last_timings.resample = t0.elapsed();
        resampled
    }

    /// One full cycle: predict, update, resample if needed, estimate.
    pub fn step(
        &mut self,
        u: &Pose2,
        g_hat: &FeatureMap,
        conf: &ConfidenceMap,
        aerial_map_hat: &FeatureMap,
        spec: &BevSpec,
    ) -> Result<Pose2> {
        let t0 = Instant::now();
        self.predict(u);
        self.update(g_hat, conf, aerial_map_hat, spec)?;
        self.resample_if_needed();
        let estimate = self.mean_pose();
        self.step_count += 1;
        self.last_timings.total = t0.elapsed();
        Ok(estimate)
    }
}

/// `(sum a)^2 / sum(a^2)` for non-negative unnormalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for &a in weights {
        sum += a;
        sum_sq += a * a;
    }
    if sum_sq == 0.0 {
        return 0.0;
    }
    sum * sum / sum_sq
}

/// Low-variance (systematic) selection: `n_out` indices at cumulative-weight
/// positions `(u0 + k / n_out) * sum(weights)`, with `u0` drawn once from
/// `[0, 1/n_out)`.
pub fn systematic_indices(weights: &[f64], n_out: usize, u0: f64) -> Vec<usize> {
    debug_assert!(!weights.is_empty() && n_out > 0);
    debug_assert!((0.0..1.0 / n_out as f64).contains(&u0) || u0 == 0.0);
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n_out);
    let mut j = 0usize;
    let mut cum = weights[0];
    for k in 0..n_out {
        let target = (u0 + k as f64 / n_out as f64) * total;
        // Half-open mass intervals [cum_{i-1}, cum_i): a target exactly on a
        // boundary belongs to the next particle, which also skips
        // zero-weight prefixes.
        while cum <= target && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

struct ParticleScratch {
    /// Chunk-sized patch buffer reused across cells; stays cache-resident.
    /// Over-allocated so the used region can start cache-line aligned.
    buf: Vec<f32>,
    offset: usize,
    len: usize,
}

impl ParticleScratch {
    fn new(spec: &BevSpec, dim: usize) -> Self {
        let len = spec.width.max(crate::sampler::SAMPLE_CHUNK) * dim;
        let buf = vec![0.0f32; len + 16];
        // align_offset counts elements, not bytes.
        let offset = buf.as_ptr().align_offset(64);
        Self { buf, offset, len }
    }

    fn row(&mut self) -> &mut [f32] {
        &mut self.buf[self.offset..self.offset + self.len]
    }
}

/// Partial confidence-weighted similarity sum for one particle over grid
/// rows `[r0, r1)`: grid coordinates on the fly, chunked bilinear sampling,
/// then the confidence-weighted dot, accumulated in row-major cell order.
#[allow(clippy::too_many_arguments)]
fn score_particle_block(
    geom: &GridGeometry,
    aerial: &FeatureMap,
    window: SampleWindow,
    g_hat: &FeatureMap,
    conf: &ConfidenceMap,
    spec: &BevSpec,
    r0: usize,
    r1: usize,
    scratch: &mut ParticleScratch,
    timers: Option<(&AtomicU64, &AtomicU64)>,
) -> f64 {
    let dim = g_hat.dim();
    let coord = |r: usize, c: usize| geom.coord_in_row(geom.row_terms(r), c);

    let mut t_sample = 0u64;
    let mut t_score = 0u64;
    let partial = sample_score_chunked(
        aerial.data(),
        aerial.height(),
        aerial.width(),
        dim,
        window,
        g_hat.data(),
        conf.data(),
        spec.width,
        r0,
        r1,
        scratch.row(),
        timers.map(|_| (&mut t_sample, &mut t_score)),
        coord,
    );
    if let Some((sample_ns, score_ns)) = timers {
        sample_ns.fetch_add(t_sample, Ordering::Relaxed);
        score_ns.fetch_add(t_score, Ordering::Relaxed);
    }
    partial
}
