//! Dense multi-channel feature grids with geo-referencing.
//!
//! A [`FeatureMap`] stores a row-major `[row][col][channel]` f32 grid and an
//! optional north-up pixel<->UTM mapping. Integer pixel coordinates refer to
//! pixel centers throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se2::Pose2;

/// Epsilon used for per-cell L2 normalization.
pub const NORM_EPSILON: f64 = 1e-8;

/// North-up affine pixel<->world mapping: origin is the UTM coordinate of
/// the center of pixel (0, 0); row index increases southward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_east: f64,
    pub origin_north: f64,
    /// Meters per pixel, > 0.
    pub resolution: f64,
}

impl GeoTransform {
    pub fn new(origin_east: f64, origin_north: f64, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "geo-transform resolution must be positive, got {resolution}"
            )));
        }
        Ok(Self { origin_east, origin_north, resolution })
    }

    /// Continuous pixel coordinates (u = column, v = row) of a world point.
    #[inline]
    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_east) / self.resolution,
            (self.origin_north - y) / self.resolution,
        )
    }

    /// World coordinates of a continuous pixel position.
    #[inline]
    pub fn pixel_to_world(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.origin_east + u * self.resolution,
            self.origin_north - v * self.resolution,
        )
    }
}

/// Dense H x W x D feature grid, row-major `[row][col][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
    geo: Option<GeoTransform>,
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        data: Vec<f32>,
        geo: Option<GeoTransform>,
    ) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::InvalidArgument("feature map dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "feature map data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                dim
            )));
        }
        Ok(Self { height, width, dim, data, geo })
    }

    pub fn zeros(height: usize, width: usize, dim: usize, geo: Option<GeoTransform>) -> Self {
        Self { height, width, dim, data: vec![0.0; height * width * dim], geo }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn geo(&self) -> Option<&GeoTransform> {
        self.geo.as_ref()
    }

    pub fn set_geo(&mut self, geo: Option<GeoTransform>) {
        self.geo = geo;
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Feature vector at (row, col).
    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    #[inline]
    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let start = (row * self.width + col) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// Whether the two maps have identical height, width and channel count.
    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.dim == other.dim
    }
}

/// Single-channel per-cell confidence in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "confidence data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if let Some(idx) = data.iter().position(|v| !(*v >= 0.0 && *v <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "confidence value {} at index {idx} outside [0, 1]",
                data[idx]
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Normalize a single feature vector in place: `v / max(|v|, epsilon)`.
#[inline]
pub fn l2_normalize_cell(cell: &mut [f32], epsilon: f64) {
    let mut sq = 0.0f64;
    for &v in cell.iter() {
        sq += v as f64 * v as f64;
    }
    let inv = 1.0 / sq.sqrt().max(epsilon);
    for v in cell.iter_mut() {
        *v = (*v as f64 * inv) as f32;
    }
}

/// Per-cell L2 normalization: every D-vector is divided by
/// `max(norm, epsilon)`, so returned cell norms never exceed 1 and all-zero
/// cells stay zero.
pub fn l2_normalize(fm: &FeatureMap, epsilon: f64) -> Result<FeatureMap> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut out = fm.clone();
    l2_normalize_in_place(&mut out, epsilon);
    Ok(out)
}

pub(crate) fn l2_normalize_in_place(fm: &mut FeatureMap, epsilon: f64) {
    let dim = fm.dim;
    for cell in fm.data.chunks_exact_mut(dim) {
        l2_normalize_cell(cell, epsilon);
    }
}

/// Axis-aligned crop of `out_h` x `out_w` cells whose center pixel is the
/// source pixel nearest to `center`'s position. Cells outside the source are
/// zero-filled; the returned map carries an updated geo-transform.
pub fn crop_centered(map: &FeatureMap, center: &Pose2, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "crop dimensions must be positive, got {out_h}x{out_w}"
        )));
    }
    let mut out = FeatureMap::zeros(out_h, out_w, map.dim(), None);
    crop_centered_into(map, center, &mut out)?;
    Ok(out)
}

/// Top-left source pixel and geo-transform of a centered crop: the crop's
/// center pixel is the source pixel nearest to `center`'s position.
pub(crate) fn crop_origin(
    geo: &GeoTransform,
    center: &Pose2,
    out_h: usize,
    out_w: usize,
) -> (i64, i64, GeoTransform) {
    let (u, v) = geo.world_to_pixel(center.x, center.y);
    let uc = u.round() as i64;
    let vc = v.round() as i64;
    let r0 = vc - (out_h / 2) as i64;
    let c0 = uc - (out_w / 2) as i64;
    let (oe, on) = geo.pixel_to_world(c0 as f64, r0 as f64);
    (r0, c0, GeoTransform { origin_east: oe, origin_north: on, resolution: geo.resolution })
}

/// [`crop_centered`] into an existing buffer, so callers cropping every step
/// can reuse the allocation. Every output row is (re)written.
pub fn crop_centered_into(map: &FeatureMap, center: &Pose2, out: &mut FeatureMap) -> Result<()> {
    use rayon::prelude::*;

    let geo = map
        .geo()
        .ok_or_else(|| Error::InvalidArgument("crop_centered requires a geo-transform".into()))?;
    if out.dim() != map.dim() {
        return Err(Error::DimensionMismatch(format!(
            "crop buffer has {} channels, map has {}",
            out.dim(),
            map.dim()
        )));
    }
    let (out_h, out_w) = (out.height(), out.width());
    let (r0, c0, crop_geo) = crop_origin(geo, center, out_h, out_w);

    let dim = map.dim();
    let src_h = map.height() as i64;
    let src_w = map.width() as i64;
    let src_width = map.width();
    let src_data = map.data();

    // Overlapping column range, identical for every row.
    let dst_c_lo = (-c0).max(0).min(out_w as i64) as usize;
    let dst_c_hi = (src_w - c0).max(0).min(out_w as i64) as usize;

    out.data
        .par_chunks_exact_mut(out_w * dim)
        .enumerate()
        .for_each(|(dst_r, row)| {
            let src_r = r0 + dst_r as i64;
            if src_r < 0 || src_r >= src_h || dst_c_lo >= dst_c_hi {
                row.fill(0.0);
                return;
            }
            row[..dst_c_lo * dim].fill(0.0);
            row[dst_c_hi * dim..].fill(0.0);
            let src_c = (c0 + dst_c_lo as i64) as usize;
            let src_start = (src_r as usize * src_width + src_c) * dim;
            let len = (dst_c_hi - dst_c_lo) * dim;
            row[dst_c_lo * dim..dst_c_lo * dim + len]
                .copy_from_slice(&src_data[src_start..src_start + len]);
        });

    out.set_geo(Some(crop_geo));
    Ok(())
}
