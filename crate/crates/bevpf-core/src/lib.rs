//! Sequential cross-view geo-localization engine.
//!
//! Tracks a 3-DoF pose by fusing odometry with a learned-feature observation
//! model: per-particle likelihoods come from sampling aerial feature-map
//! patches at continuous pose hypotheses and matching them against a
//! ground-derived BEV feature map. Feature encoders are replaced by a binary
//! container ingestion path plus a synthetic feature-world simulator, so the
//! full filtering stack runs and is testable without any networks.
//!
//! Modules:
//! - [`se2`]: exact SE(2) group ops, exp/log maps, Lie-algebra noise.
//! - [`grid`]: geo-referenced feature grids, normalization, cropping.
//! - [`container`]: bit-exact binary feature-map file format.
//! - [`sampler`]: per-particle rotated grids and bilinear patch sampling.
//! - [`likelihood`]: confidence-weighted similarity and weight updates.
//! - [`filter`]: the particle filter itself.
//! - [`splat`]: depth unprojection and BEV splatting.
//! - [`losses`]: forward-only training objective reference.
//! - [`sim`]: procedural worlds, trajectories, odometry, observations.
//! - [`eval`]: ATE RMSE, error series, error CDF.

pub mod container;
pub mod error;
pub mod eval;
pub mod filter;
pub mod grid;
pub mod likelihood;
pub mod losses;
pub mod sampler;
pub mod se2;
pub mod sim;
pub mod splat;

pub use error::{Error, Result};
pub use filter::{FilterConfig, Particle, ParticleFilter};
pub use grid::{ConfidenceMap, FeatureMap, GeoTransform};
pub use sampler::BevSpec;
pub use se2::{MotionNoiseParams, Pose2, Twist2};
