//! Subcommand implementations. The heavy lifting is exposed as library
//! functions so integration tests can drive runs in-process.

use std::path::{Path, PathBuf};
use std::time::Duration;

use bevpf_core::container::{load_confidence, load_container, save_container};
use bevpf_core::eval::{ate_rmse, error_cdf, error_series, mean_heading_error, TrajectoryRecord};
use bevpf_core::filter::{ParticleFilter, StepTimings};
use bevpf_core::grid::{l2_normalize, ConfidenceMap, FeatureMap, NORM_EPSILON};
use bevpf_core::sampler::BevSpec;
use bevpf_core::se2::Pose2;
use bevpf_core::sim::{
    dead_reckon, generate_odometry, generate_trajectory, generate_world, synthesize_observation,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::config::RunConfig;
use crate::csvio::{self, DiagnosticsRow};
use crate::error::CmdError;

pub const WORLD_FILE: &str = "world.bpfm";
pub const GT_FILE: &str = "gt.csv";
pub const ODOMETRY_FILE: &str = "odometry.csv";
pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const CDF_FILE: &str = "cdf.csv";
pub const BENCH_FILE: &str = "bench.csv";

/// World, ground truth and odometry for one run.
pub struct SimArtifacts {
    /// L2-normalized feature world with its geo-transform.
    pub world: FeatureMap,
    pub gt: Vec<(f64, Pose2)>,
    /// Odometry increment i moves from gt pose i to pose i+1.
    pub odometry: Vec<Pose2>,
}

/// Generate the simulation artifacts in memory.
pub fn generate_artifacts(cfg: &RunConfig) -> Result<SimArtifacts, CmdError> {
    let world = generate_world(&cfg.world)?;
    let gt = generate_trajectory(&world, &cfg.trajectory)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.odometry.seed);
    let odometry = generate_odometry(&gt, &cfg.odometry.noise, &mut rng)?;
    Ok(SimArtifacts { world, gt, odometry })
}

/// `simulate`: write world container plus ground-truth and odometry CSVs.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(out_dir)?;
    let art = generate_artifacts(cfg)?;
    save_container(&art.world, out_dir.join(WORLD_FILE))?;
    csvio::write_trajectory(&out_dir.join(GT_FILE), &art.gt)?;
    let odo_rows: Vec<(f64, Pose2)> = art
        .gt
        .iter()
        .skip(1)
        .map(|(t, _)| *t)
        .zip(art.odometry.iter().copied())
        .collect();
    csvio::write_trajectory(&out_dir.join(ODOMETRY_FILE), &odo_rows)?;
    log::info!(
        "simulated {}x{}x{} world, {} poses -> {}",
        art.world.height(),
        art.world.width(),
        art.world.dim(),
        art.gt.len(),
        out_dir.display()
    );
    println!(
        "wrote {}, {} ({} poses), {}",
        out_dir.join(WORLD_FILE).display(),
        out_dir.join(GT_FILE).display(),
        art.gt.len(),
        out_dir.join(ODOMETRY_FILE).display()
    );
    Ok(())
}

/// Load previously simulated artifacts from a directory.
pub fn load_artifacts(cfg: &RunConfig, dir: &Path) -> Result<SimArtifacts, CmdError> {
    let world = load_container(dir.join(WORLD_FILE))?;
    if world.geo().is_none() {
        return Err(CmdError::Data(format!(
            "{}: world container has no geo-transform",
            dir.join(WORLD_FILE).display()
        )));
    }
    // Normalization is idempotent, so externally produced worlds are safe.
    let world = l2_normalize(&world, NORM_EPSILON)?;
    let gt = csvio::read_trajectory(&dir.join(GT_FILE))?;
    let odo_rows = csvio::read_trajectory(&dir.join(ODOMETRY_FILE))?;
    if odo_rows.len() != gt.len() - 1 {
        return Err(CmdError::Data(format!(
            "odometry has {} rows but the trajectory has {} poses",
            odo_rows.len(),
            gt.len()
        )));
    }
    let _ = cfg;
    Ok(SimArtifacts { world, gt, odometry: odo_rows.into_iter().map(|(_, u)| u).collect() })
}

/// Full filter run over the artifacts.
pub struct RunOutput {
    pub gt: Vec<(f64, Pose2)>,
    pub estimates: Vec<(f64, Pose2)>,
    pub dead_reckoning: Vec<(f64, Pose2)>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub timings: Vec<StepTimings>,
}

impl RunOutput {
    pub fn ate(&self) -> Result<f64, CmdError> {
        Ok(ate_rmse(&to_record(&self.estimates)?, &to_record(&self.gt)?)?)
    }

    pub fn dead_reckoning_ate(&self) -> Result<f64, CmdError> {
        Ok(ate_rmse(&to_record(&self.dead_reckoning)?, &to_record(&self.gt)?)?)
    }
}

pub fn to_record(rows: &[(f64, Pose2)]) -> Result<TrajectoryRecord, CmdError> {
    let (ts, ps): (Vec<f64>, Vec<Pose2>) = rows.iter().copied().unzip();
    Ok(TrajectoryRecord::new(ts, ps)?)
}

fn load_observation(
    dir: &Path,
    frame: usize,
    bev_h: usize,
    bev_w: usize,
) -> Result<(FeatureMap, ConfidenceMap), CmdError> {
    let g = load_container(dir.join(format!("bev_{frame:06}.bpfm")))?;
    let conf = load_confidence(dir.join(format!("conf_{frame:06}.bpfm")))?;
    if g.height() != bev_h || g.width() != bev_w || conf.height() != bev_h || conf.width() != bev_w
    {
        return Err(CmdError::Data(format!(
            "observation {frame}: {}x{} features / {}x{} confidence do not match the {bev_h}x{bev_w} BEV grid",
            g.height(),
            g.width(),
            conf.height(),
            conf.width()
        )));
    }
    Ok((g, conf))
}

/// Run the particle filter over every odometry step.
///
/// Observations come from `observation.obs_dir` when configured, otherwise
/// they are synthesized per frame with an RNG stream derived from the
/// observation seed and the frame index.
pub fn run_filter(cfg: &RunConfig, art: &SimArtifacts) -> Result<RunOutput, CmdError> {
    let spec = BevSpec::new(
        cfg.bev.height,
        cfg.bev.width,
        art.world.geo().expect("geo-referenced world").resolution,
    )?;
    let mut filter = ParticleFilter::initialize(art.gt[0].1, cfg.filter)?;

    let mut estimates = Vec::with_capacity(art.gt.len());
    estimates.push((art.gt[0].0, filter.mean_pose()));
    let mut diagnostics = Vec::with_capacity(art.odometry.len());
    let mut timings = Vec::with_capacity(art.odometry.len());

    for (i, u) in art.odometry.iter().enumerate() {
        let frame = i + 1;
        let (t, gt_pose) = art.gt[frame];
        let (g, conf) = match &cfg.observation.obs_dir {
            Some(dir) => load_observation(dir, frame, spec.height, spec.width)?,
            None => {
                let mut rng = ChaCha12Rng::seed_from_u64(cfg.observation.seed);
                rng.set_stream(frame as u64);
                synthesize_observation(&art.world, &gt_pose, &spec, &cfg.observation.noise, &mut rng)?
            }
        };
        let estimate = filter.step(u, &g, &conf, &art.world, &spec)?;
        estimates.push((t, estimate));
        let stats = filter.last_score_stats().unwrap_or_default();
        diagnostics.push(DiagnosticsRow {
            t,
            ess: filter.last_ess().unwrap_or(f64::NAN),
            resampled: filter.last_resampled(),
            score_mean: stats.mean,
            score_min: stats.min,
            score_max: stats.max,
        });
        timings.push(filter.last_timings());
    }

    let dead_reckoning = art
        .gt
        .iter()
        .map(|(t, _)| *t)
        .zip(dead_reckon(&art.gt[0].1, &art.odometry))
        .collect();
    Ok(RunOutput { gt: art.gt.clone(), estimates, dead_reckoning, diagnostics, timings })
}

/// Prediction-only ensemble: identical initialization and prediction, no
/// measurement update and no resampling. The drifting baseline.
pub fn run_prediction_only(cfg: &RunConfig, art: &SimArtifacts) -> Result<Vec<(f64, Pose2)>, CmdError> {
    let mut filter = ParticleFilter::initialize(art.gt[0].1, cfg.filter)?;
    let mut estimates = Vec::with_capacity(art.gt.len());
    estimates.push((art.gt[0].0, filter.mean_pose()));
    for (i, u) in art.odometry.iter().enumerate() {
        filter.predict(u);
        estimates.push((art.gt[i + 1].0, filter.mean_pose()));
    }
    Ok(estimates)
}

/// `run`: read artifacts, run the filter, write estimate and diagnostics.
pub fn cmd_run(cfg: &RunConfig, dir: &Path) -> Result<(), CmdError> {
    let art = load_artifacts(cfg, dir)?;
    let out = run_filter(cfg, &art)?;
    csvio::write_trajectory(&dir.join(ESTIMATE_FILE), &out.estimates)?;
    csvio::write_diagnostics(&dir.join(DIAGNOSTICS_FILE), &out.diagnostics)?;
    let ate = out.ate()?;
    println!(
        "{} steps, ATE RMSE {:.3} m (dead reckoning {:.3} m)",
        out.estimates.len() - 1,
        ate,
        out.dead_reckoning_ate()?
    );
    Ok(())
}

/// `evaluate`: ATE plus error CDF for two trajectory CSVs.
pub fn cmd_evaluate(
    est_path: &Path,
    gt_path: &Path,
    out_dir: &Path,
    bins: usize,
) -> Result<(), CmdError> {
    let est = to_record(&csvio::read_trajectory(est_path)?)?;
    let gt = to_record(&csvio::read_trajectory(gt_path)?)?;
    let ate = ate_rmse(&est, &gt)?;
    let heading = mean_heading_error(&est, &gt)?;
    let series = error_series(&est, &gt)?;
    let errors: Vec<f64> = series.iter().map(|(_, e)| *e).collect();
    let cdf = error_cdf(&errors, bins)?;
    std::fs::create_dir_all(out_dir)?;
    csvio::write_cdf(&out_dir.join(CDF_FILE), &cdf)?;
    println!("ATE RMSE: {ate:.3} m");
    println!("mean heading error: {:.4} rad", heading);
    println!("error CDF ({bins} bins) written to {}", out_dir.join(CDF_FILE).display());
    Ok(())
}

/// One aggregated latency row.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub phase: &'static str,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub steps: usize,
}

impl BenchReport {
    pub fn row(&self, phase: &str) -> &BenchRow {
        self.rows.iter().find(|r| r.phase == phase).expect("known phase")
    }

    pub fn median_total_ms(&self) -> f64 {
        self.row("total").median_ms
    }
}

fn aggregate(name: &'static str, samples: &mut Vec<f64>) -> BenchRow {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    let median = samples[n / 2];
    let p95 = samples[((n as f64 * 0.95) as usize).min(n - 1)];
    let mean = samples.iter().sum::<f64>() / n as f64;
    BenchRow { phase: name, median_ms: median, p95_ms: p95, mean_ms: mean }
}

/// Measure per-phase latencies over at least 200 filter steps.
pub fn bench_in_memory(cfg: &RunConfig) -> Result<BenchReport, CmdError> {
    let mut cfg = cfg.clone();
    if cfg.trajectory.n_steps < 200 {
        cfg.trajectory.n_steps = 200;
    }
    let art = generate_artifacts(&cfg)?;
    let out = run_filter(&cfg, &art)?;

    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let phases: [(&'static str, fn(&StepTimings) -> Duration); 7] = [
        ("predict", |t| t.predict),
        ("crop", |t| t.crop),
        ("grid_sample", |t| t.grid_sample),
        ("score", |t| t.score),
        ("weight_update", |t| t.weight_update),
        ("resample", |t| t.resample),
        ("total", |t| t.total),
    ];
    let rows = phases
        .iter()
        .map(|(name, get)| {
            let mut samples: Vec<f64> = out.timings.iter().map(|t| ms(get(t))).collect();
            aggregate(name, &mut samples)
        })
        .collect();
    Ok(BenchReport { rows, steps: out.timings.len() })
}

/// `bench`: run the latency benchmark and write a machine-readable CSV.
pub fn cmd_bench(cfg: &RunConfig, out_dir: &Path) -> Result<(), CmdError> {
    let report = bench_in_memory(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let mut csv = String::from("phase,median_ms,p95_ms,mean_ms\n");
    println!("{} steps ({} particles, {}x{} BEV):", report.steps, cfg.filter.n_particles, cfg.bev.height, cfg.bev.width);
    println!("{:<14} {:>10} {:>10} {:>10}", "phase", "median_ms", "p95_ms", "mean_ms");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4}\n",
            row.phase, row.median_ms, row.p95_ms, row.mean_ms
        ));
        println!(
            "{:<14} {:>10.3} {:>10.3} {:>10.3}",
            row.phase, row.median_ms, row.p95_ms, row.mean_ms
        );
    }
    std::fs::write(out_dir.join(BENCH_FILE), csv)?;
    println!("report written to {}", out_dir.join(BENCH_FILE).display());
    Ok(())
}

/// `print-config`: the full default configuration as JSON.
pub fn cmd_print_config() {
    let cfg = RunConfig::default();
    println!("{}", serde_json::to_string_pretty(&cfg).expect("default config serializes"));
}

/// Resolve the output directory: flag, then config, then ./out.
pub fn resolve_out_dir(flag: Option<PathBuf>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}
