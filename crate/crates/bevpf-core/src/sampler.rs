//! Per-particle rotated sampling grids and bilinear patch sampling with
//! zero-padding.
//!
//! A grid is anchored at the pose (bottom-center of the patch), rotated by
//! the heading, and sampled with the pixel-center convention. Out-of-bounds
//! taps contribute zero, so hypotheses that leave the map score toward zero
//! instead of clamping to border values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, FeatureMap, GeoTransform};
use crate::se2::Pose2;

/// BEV grid geometry: H_b x W_b cells at the map resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevSpec {
    pub height: usize,
    pub width: usize,
    /// Meters per cell; must match the aerial map's geo-transform.
    pub resolution: f64,
}

impl BevSpec {
    pub fn new(height: usize, width: usize, resolution: f64) -> Result<Self> {
        if height == 0 || width == 0 || !(resolution > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid BEV spec {height}x{width} @ {resolution}"
            )));
        }
        Ok(Self { height, width, resolution })
    }
}

/// Continuous source-pixel coordinates for every BEV cell, row-major.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    height: usize,
    width: usize,
    /// (u, v) pairs, u = column, v = row.
    coords: Vec<[f64; 2]>,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "grid coords length {} != {}x{}",
                coords.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, coords })
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
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    #[inline]
    pub fn coord(&self, row: usize, col: usize) -> [f64; 2] {
        self.coords[row * self.width + col]
    }
}

/// Build the sampling grid for one pose hypothesis.
///
/// BEV cell (r, c) sits at body-frame forward `(H_b-1-r) * res` and left
/// `((W_b-1)/2 - c) * res`; the bottom-center cell lands exactly on the
/// pose position.
pub fn build_grid(pose: &Pose2, geo: &GeoTransform, spec: &BevSpec) -> Result<PatchGrid> {
    if (spec.resolution - geo.resolution).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "BEV resolution {} does not match map resolution {}",
            spec.resolution, geo.resolution
        )));
    }
    let geom = GridGeometry::new(pose, geo, spec);
    let mut coords = Vec::with_capacity(spec.height * spec.width);
    for r in 0..spec.height {
        let row = geom.row_terms(r);
        for c in 0..spec.width {
            coords.push(geom.coord_in_row(row, c));
        }
    }
    Ok(PatchGrid { height: spec.height, width: spec.width, coords })
}

/// Precomputed per-pose grid geometry; `coord_in_row` reproduces the exact
/// arithmetic of [`build_grid`] so hot paths can generate coordinates on the
/// fly instead of materializing them.
///
/// Coordinates are affine in the cell index: each row is anchored at its
/// center column (the body axis, where the lateral term vanishes exactly)
/// and the per-column slope is shared, so a cell costs a handful of f64
/// operations and the bottom-center anchor stays exact.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GridGeometry {
    x: f64,
    y: f64,
    sin_t: f64,
    cos_t: f64,
    half_w: f64,
    res: f64,
    inv_res: f64,
    /// du/dcol and dv/dcol in source pixels.
    slope_u: f64,
    slope_v: f64,
    origin_east: f64,
    origin_north: f64,
    height: usize,
}

impl GridGeometry {
    pub(crate) fn new(pose: &Pose2, geo: &GeoTransform, spec: &BevSpec) -> Self {
        let (sin_t, cos_t) = pose.theta.sin_cos();
        let res = spec.resolution;
        let inv_res = 1.0 / res;
        Self {
            x: pose.x,
            y: pose.y,
            sin_t,
            cos_t,
            half_w: (spec.width as f64 - 1.0) / 2.0,
            res,
            inv_res,
            slope_u: sin_t * res * inv_res,
            slope_v: cos_t * res * inv_res,
            origin_east: geo.origin_east,
            origin_north: geo.origin_north,
            height: spec.height,
        }
    }

    /// (u, v) at the row's center column.
    #[inline]
    pub(crate) fn row_terms(&self, r: usize) -> (f64, f64) {
        let fwd = (self.height - 1 - r) as f64 * self.res;
        let wx = self.x + self.cos_t * fwd;
        let wy = self.y + self.sin_t * fwd;
        ((wx - self.origin_east) * self.inv_res, (self.origin_north - wy) * self.inv_res)
    }

    #[inline]
    pub(crate) fn coord_in_row(&self, row_terms: (f64, f64), c: usize) -> [f64; 2] {
        let (uc, vc) = row_terms;
        let dc = c as f64 - self.half_w;
        [dc.mul_add(self.slope_u, uc), dc.mul_add(self.slope_v, vc)]
    }
}

/// Sampling window inside a source map: grid coordinates are window-local,
/// taps outside the window read as zero, and window pixels that fall outside
/// the source itself also read as zero. A window covering the whole source
/// reproduces plain zero-padded sampling; a crop-sized window reproduces
/// sampling from a materialized [`crate::grid::crop_centered`] without the
/// copy.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SampleWindow {
    /// Source row of the window's pixel (0, 0); may be negative.
    pub r0: i64,
    /// Source column of the window's pixel (0, 0); may be negative.
    pub c0: i64,
    pub height: usize,
    pub width: usize,
}

impl SampleWindow {
    pub(crate) fn full(src_h: usize, src_w: usize) -> Self {
        Self { r0: 0, c0: 0, height: src_h, width: src_w }
    }
}

/// Cells processed per stack-buffered chunk in the sampling kernel.
pub(crate) const SAMPLE_CHUNK: usize = 64;

/// Window-derived bounds shared by the sampling kernels.
#[derive(Clone, Copy)]
struct WinBounds {
    win: SampleWindow,
    row_stride: usize,
    src_lo_u: i64,
    src_lo_v: i64,
    src_hi_u: i64,
    src_hi_v: i64,
    int_lo_u: f64,
    int_lo_v: f64,
    int_hi_u: f64,
    int_hi_v: f64,
}

impl WinBounds {
    fn new(src_h: usize, src_w: usize, dim: usize, win: SampleWindow) -> Self {
        // Window-local coordinates of the source interior.
        let src_lo_u = -win.c0;
        let src_lo_v = -win.r0;
        let src_hi_u = src_w as i64 - win.c0;
        let src_hi_v = src_h as i64 - win.r0;
        Self {
            win,
            row_stride: src_w * dim,
            src_lo_u,
            src_lo_v,
            src_hi_u,
            src_hi_v,
            int_lo_u: src_lo_u.max(0) as f64,
            int_lo_v: src_lo_v.max(0) as f64,
            int_hi_u: src_hi_u.min(win.width as i64) as f64,
            int_hi_v: src_hi_v.min(win.height as i64) as f64,
        }
    }
}

/// Per-chunk tap indices, blend weights and interior flags: filled by a
/// branch-free loop the compiler vectorizes.
struct ChunkPre {
    u0s: [i32; SAMPLE_CHUNK],
    v0s: [i32; SAMPLE_CHUNK],
    w00s: [f32; SAMPLE_CHUNK],
    w01s: [f32; SAMPLE_CHUNK],
    w10s: [f32; SAMPLE_CHUNK],
    w11s: [f32; SAMPLE_CHUNK],
    interior: [bool; SAMPLE_CHUNK],
}

impl ChunkPre {
    fn new() -> Self {
        Self {
            u0s: [0; SAMPLE_CHUNK],
            v0s: [0; SAMPLE_CHUNK],
            w00s: [0.0; SAMPLE_CHUNK],
            w01s: [0.0; SAMPLE_CHUNK],
            w10s: [0.0; SAMPLE_CHUNK],
            w11s: [0.0; SAMPLE_CHUNK],
            interior: [false; SAMPLE_CHUNK],
        }
    }

    #[inline(always)]
    fn fill<F: Fn(usize, usize) -> [f64; 2]>(
        &mut self,
        coord: &F,
        wb: &WinBounds,
        gr: usize,
        c0: usize,
        chunk: usize,
    ) {
        for j in 0..chunk {
            let [u, v] = coord(gr, c0 + j);
            let uf = u.floor();
            let vf = v.floor();
            let du = u - uf;
            let dv = v - vf;
            self.u0s[j] = uf as i32;
            self.v0s[j] = vf as i32;
            self.w00s[j] = ((1.0 - du) * (1.0 - dv)) as f32;
            self.w01s[j] = (du * (1.0 - dv)) as f32;
            self.w10s[j] = ((1.0 - du) * dv) as f32;
            self.w11s[j] = (du * dv) as f32;
            self.interior[j] = uf >= wb.int_lo_u
                && vf >= wb.int_lo_v
                && uf + 1.0 < wb.int_hi_u
                && vf + 1.0 < wb.int_hi_v;
        }
    }
}

/// Resolve the channel count: `D = 0` means dynamic.
#[inline(always)]
fn cell_dim<const D: usize>(dim: usize) -> usize {
    if D == 0 {
        dim
    } else {
        D
    }
}

/// Blend the four taps of precomputed cell `j` into `cell`. `D` fixes the
/// channel count at compile time (0 = dynamic) so the common 32-channel maps
/// get fully unrolled inner loops.
#[inline(always)]
fn blend_cell<const D: usize>(
    data: &[f32],
    dim: usize,
    wb: &WinBounds,
    pre: &ChunkPre,
    j: usize,
    cell: &mut [f32],
) {
    let dim = cell_dim::<D>(dim);
    let row_stride = wb.row_stride;
    if pre.interior[j] {
        // All four taps inside both window and source.
        let (w00, w01, w10, w11) = (pre.w00s[j], pre.w01s[j], pre.w10s[j], pre.w11s[j]);
        let base = ((pre.v0s[j] as i64 + wb.win.r0) as usize) * row_stride
            + ((pre.u0s[j] as i64 + wb.win.c0) as usize) * dim;
        let tl = &data[base..base + dim];
        let tr = &data[base + dim..base + 2 * dim];
        let bl = &data[base + row_stride..base + row_stride + dim];
        let br = &data[base + row_stride + dim..base + row_stride + 2 * dim];
        for k in 0..dim {
            cell[k] = w11.mul_add(br[k], w10.mul_add(bl[k], w01.mul_add(tr[k], w00 * tl[k])));
        }
    } else {
        let (u0, v0) = (pre.u0s[j] as i64, pre.v0s[j] as i64);
        cell.fill(0.0);
        let mut tap = |vv: i64, uu: i64, wgt: f32| {
            // Outside the window: zero-padding (no contribution). Inside the
            // window but outside the source: reads a zero-filled crop cell
            // (also no contribution).
            if wgt != 0.0
                && uu >= 0
                && vv >= 0
                && uu < wb.win.width as i64
                && vv < wb.win.height as i64
                && uu >= wb.src_lo_u
                && vv >= wb.src_lo_v
                && uu < wb.src_hi_u
                && vv < wb.src_hi_v
            {
                let base =
                    ((vv + wb.win.r0) as usize) * row_stride + ((uu + wb.win.c0) as usize) * dim;
                let src = &data[base..base + dim];
                for k in 0..dim {
                    cell[k] = wgt.mul_add(src[k], cell[k]);
                }
            }
        };
        tap(v0, u0, pre.w00s[j]);
        tap(v0, u0 + 1, pre.w01s[j]);
        tap(v0 + 1, u0, pre.w10s[j]);
        tap(v0 + 1, u0 + 1, pre.w11s[j]);
    }
}

fn sample_rows_go<F: Fn(usize, usize) -> [f64; 2], const D: usize>(
    data: &[f32],
    src_h: usize,
    src_w: usize,
    dim: usize,
    win: SampleWindow,
    gw: usize,
    r0: usize,
    r1: usize,
    out: &mut [f32],
    coord: F,
) {
    let dim = cell_dim::<D>(dim);
    debug_assert_eq!(out.len(), (r1 - r0) * gw * dim);
    let wb = WinBounds::new(src_h, src_w, dim, win);
    let mut pre = ChunkPre::new();

    for gr in r0..r1 {
        let orow = &mut out[(gr - r0) * gw * dim..(gr - r0 + 1) * gw * dim];
        let mut c0 = 0usize;
        while c0 < gw {
            let chunk = (gw - c0).min(SAMPLE_CHUNK);
            pre.fill(&coord, &wb, gr, c0, chunk);
            for j in 0..chunk {
                blend_cell::<D>(
                    data,
                    dim,
                    &wb,
                    &pre,
                    j,
                    &mut orow[(c0 + j) * dim..(c0 + j + 1) * dim],
                );
            }
            c0 += chunk;
        }
    }
}

/// Bilinear blend of the four taps around each window-local grid coordinate,
/// writing grid rows `[r0, r1)` into `out`. The coordinate for grid cell
/// (r, c) comes from `coord`, so hot paths can generate coordinates on the
/// fly instead of materializing a grid.
pub(crate) fn sample_rows_window_with<F: Fn(usize, usize) -> [f64; 2]>(
    data: &[f32],
    src_h: usize,
    src_w: usize,
    dim: usize,
    win: SampleWindow,
    gw: usize,
    r0: usize,
    r1: usize,
    out: &mut [f32],
    coord: F,
) {
    match dim {
        32 => sample_rows_go::<F, 32>(data, src_h, src_w, dim, win, gw, r0, r1, out, coord),
        16 => sample_rows_go::<F, 16>(data, src_h, src_w, dim, win, gw, r0, r1, out, coord),
        _ => sample_rows_go::<F, 0>(data, src_h, src_w, dim, win, gw, r0, r1, out, coord),
    }
}

/// Two-pass sampling and scoring at chunk granularity: each 64-cell chunk
/// is blended into an L1-resident patch buffer, then dotted against `g`
/// under the confidence weights. Loop structure and summation order match
/// [`sample_rows_window_with`] followed by [`crate::likelihood::score_rows`]
/// exactly, so the result is bit-identical; only the buffer size differs.
/// Returns `sum(conf * <g, patch>)` over grid rows `[r0, r1)`.
#[allow(clippy::too_many_arguments)]
fn sample_score_chunked_go<F: Fn(usize, usize) -> [f64; 2], const D: usize>(
    data: &[f32],
    src_h: usize,
    src_w: usize,
    dim: usize,
    win: SampleWindow,
    g_data: &[f32],
    conf_data: &[f32],
    gw: usize,
    r0: usize,
    r1: usize,
    patch_buf: &mut [f32],
    timers: Option<(&mut u64, &mut u64)>,
    coord: F,
) -> f64 {
    use crate::likelihood::dot_f32;
    use std::time::Instant;

    let dim = cell_dim::<D>(dim);
    let wb = WinBounds::new(src_h, src_w, dim, win);
    let mut pre = ChunkPre::new();
    debug_assert!(patch_buf.len() >= SAMPLE_CHUNK * dim);
    let patch = &mut patch_buf[..SAMPLE_CHUNK * dim];
    let (mut t_sample, mut t_score) = (0u64, 0u64);
    let timed = timers.is_some();

    let mut acc = 0.0f64;
    for gr in r0..r1 {
        let grow = &g_data[gr * gw * dim..(gr + 1) * gw * dim];
        let crow = &conf_data[gr * gw..(gr + 1) * gw];
        let mut c0 = 0usize;
        while c0 < gw {
            let chunk = (gw - c0).min(SAMPLE_CHUNK);
            let ts = timed.then(Instant::now);
            pre.fill(&coord, &wb, gr, c0, chunk);
            for j in 0..chunk {
                blend_cell::<D>(data, dim, &wb, &pre, j, &mut patch[j * dim..(j + 1) * dim]);
            }
            let tm = timed.then(Instant::now);
            for j in 0..chunk {
                let dot = dot_f32(
                    &grow[(c0 + j) * dim..(c0 + j + 1) * dim],
                    &patch[j * dim..(j + 1) * dim],
                );
                acc = (crow[c0 + j] as f64).mul_add(dot as f64, acc);
            }
            if let (Some(ts), Some(tm)) = (ts, tm) {
                t_sample += (tm - ts).as_nanos() as u64;
                t_score += tm.elapsed().as_nanos() as u64;
            }
            c0 += chunk;
        }
    }
    if let Some((sample_out, score_out)) = timers {
        *sample_out += t_sample;
        *score_out += t_score;
    }
    acc
}

/// Dispatch wrapper for [`sample_score_chunked_go`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_score_chunked<F: Fn(usize, usize) -> [f64; 2]>(
    data: &[f32],
    src_h: usize,
    src_w: usize,
    dim: usize,
    win: SampleWindow,
    g_data: &[f32],
    conf_data: &[f32],
    gw: usize,
    r0: usize,
    r1: usize,
    patch_buf: &mut [f32],
    timers: Option<(&mut u64, &mut u64)>,
    coord: F,
) -> f64 {
    match dim {
        32 => sample_score_chunked_go::<F, 32>(
            data, src_h, src_w, dim, win, g_data, conf_data, gw, r0, r1, patch_buf, timers, coord,
        ),
        16 => sample_score_chunked_go::<F, 16>(
            data, src_h, src_w, dim, win, g_data, conf_data, gw, r0, r1, patch_buf, timers, coord,
        ),
        _ => sample_score_chunked_go::<F, 0>(
            data, src_h, src_w, dim, win, g_data, conf_data, gw, r0, r1, patch_buf, timers, coord,
        ),
    }
}

/// [`sample_rows_window_with`] reading coordinates from a materialized grid.
pub(crate) fn sample_rows_window(
    data: &[f32],
    src_h: usize,
    src_w: usize,
    dim: usize,
    win: SampleWindow,
    coords: &[[f64; 2]],
    gw: usize,
    r0: usize,
    r1: usize,
    out: &mut [f32],
) {
    sample_rows_window_with(data, src_h, src_w, dim, win, gw, r0, r1, out, |r, c| {
        coords[r * gw + c]
    });
}

/// Sample an H_b x W_b x D patch from `map` at the grid coordinates.
pub fn bilinear_sample(map: &FeatureMap, grid: &PatchGrid) -> FeatureMap {
    let mut out = FeatureMap::zeros(grid.height, grid.width, map.dim(), None);
    sample_rows_window(
        map.data(),
        map.height(),
        map.width(),
        map.dim(),
        SampleWindow::full(map.height(), map.width()),
        &grid.coords,
        grid.width,
        0,
        grid.height,
        out.data_mut(),
    );
    out
}

/// [`bilinear_sample`] specialized to one channel; output clamped to [0, 1]
/// to absorb f32 rounding at full-confidence cells.
pub fn sample_confidence(map: &ConfidenceMap, grid: &PatchGrid) -> ConfidenceMap {
    let mut out = vec![0.0f32; grid.height * grid.width];
    sample_rows_window(
        map.data(),
        map.height(),
        map.width(),
        1,
        SampleWindow::full(map.height(), map.width()),
        &grid.coords,
        grid.width,
        0,
        grid.height,
        &mut out,
    );
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    ConfidenceMap::new(grid.height, grid.width, out).expect("clamped")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::l2_normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_map(rng: &mut ChaCha12Rng, h: usize, w: usize, d: usize) -> FeatureMap {
        let data: Vec<f32> = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMap::new(h, w, d, data, None).unwrap()
    }

    /// Independent 4-tap reference sampler.
    fn naive_sample(map: &FeatureMap, grid: &PatchGrid) -> Vec<f64> {
        let d = map.dim();
        let mut out = vec![0.0f64; grid.height() * grid.width() * d];
        for (i, &[u, v]) in grid.coords().iter().enumerate() {
            let (u0, v0) = (u.floor() as i64, v.floor() as i64);
            let (du, dv) = (u - u.floor(), v - v.floor());
            for (tv, tu, w) in [
                (v0, u0, (1.0 - du) * (1.0 - dv)),
                (v0, u0 + 1, du * (1.0 - dv)),
                (v0 + 1, u0, (1.0 - du) * dv),
                (v0 + 1, u0 + 1, du * dv),
            ] {
                if tu >= 0 && tv >= 0 && (tu as usize) < map.width() && (tv as usize) < map.height() {
                    let cell = map.cell(tv as usize, tu as usize);
                    for k in 0..d {
                        out[i * d + k] += w * cell[k] as f64;
                    }
                }
            }
        }
        out
    }

    fn grid_from_coords(h: usize, w: usize, coords: Vec<[f64; 2]>) -> PatchGrid {
        PatchGrid::new(h, w, coords).unwrap()
    }

    #[test]
    fn integer_coords_match_direct_indexing() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let map = random_map(&mut rng, 6, 5, 3);
        let coords = vec![[2.0, 3.0], [0.0, 0.0], [4.0, 5.0]];
        let grid = grid_from_coords(1, 3, coords);
        let out = bilinear_sample(&map, &grid);
        assert_eq!(out.cell(0, 0), map.cell(3, 2));
        assert_eq!(out.cell(0, 1), map.cell(0, 0));
        assert_eq!(out.cell(0, 2), map.cell(5, 4));
    }

    #[test]
    fn midpoint_is_average() {
        let map = FeatureMap::new(1, 2, 1, vec![2.0, 6.0], None).unwrap();
        let grid = grid_from_coords(1, 1, vec![[0.5, 0.0]]);
        let out = bilinear_sample(&map, &grid);
        assert_eq!(out.cell(0, 0)[0], 4.0);
    }

    #[test]
    fn fully_outside_is_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let map = random_map(&mut rng, 4, 4, 2);
        let grid = grid_from_coords(2, 2, vec![[-10.0, -10.0], [100.0, 0.0], [0.0, 100.0], [-2.0, 1.0]]);
        let out = bilinear_sample(&map, &grid);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (h, w, d) = (rng.random_range(2..10), rng.random_range(2..10), rng.random_range(1..6));
            let map = random_map(&mut rng, h, w, d);
            let (gh, gw) = (rng.random_range(1..8), rng.random_range(1..8));
            // Coordinates straddle the map bounds to exercise zero-padding.
            let coords: Vec<[f64; 2]> = (0..gh * gw)
                .map(|_| {
                    [
                        rng.random_range(-3.0..w as f64 + 3.0),
                        rng.random_range(-3.0..h as f64 + 3.0),
                    ]
                })
                .collect();
            let grid = grid_from_coords(gh, gw, coords);
            let got = bilinear_sample(&map, &grid);
            let want = naive_sample(&map, &grid);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sampling_is_linear() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let a = random_map(&mut rng, 7, 7, 4);
        let b = random_map(&mut rng, 7, 7, 4);
        let (alpha, beta) = (0.7f32, -1.3f32);
        let mixed_data: Vec<f32> =
            a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + beta * y).collect();
        let mixed = FeatureMap::new(7, 7, 4, mixed_data, None).unwrap();
        let coords: Vec<[f64; 2]> =
            (0..9).map(|_| [rng.random_range(-1.0..8.0), rng.random_range(-1.0..8.0)]).collect();
        let grid = grid_from_coords(3, 3, coords);
        let sa = bilinear_sample(&a, &grid);
        let sb = bilinear_sample(&b, &grid);
        let sm = bilinear_sample(&mixed, &grid);
        for ((x, y), m) in sa.data().iter().zip(sb.data()).zip(sm.data()) {
            assert!((alpha * x + beta * y - m).abs() < 1e-5);
        }
    }

    #[test]
    fn grid_anchor_and_north_facing_steps() {
        // Map at 0.5 m/px, origin (0, 0). Pose at the center of pixel (5, 7),
        // facing north (theta = pi/2), 3x3 grid.
        let geo = GeoTransform::new(0.0, 0.0, 0.5).unwrap();
        let (px, py) = geo.pixel_to_world(5.0, 7.0);
        let pose = Pose2::new(px, py, FRAC_PI_2);
        let spec = BevSpec::new(3, 3, 0.5).unwrap();
        let grid = build_grid(&pose, &geo, &spec).unwrap();

        // Bottom-center cell is exactly the pose pixel.
        assert_eq!(grid.coord(2, 1), [5.0, 7.0]);
        // Forward steps one pixel north (decreasing v) per row.
        assert_eq!(grid.coord(1, 1), [5.0, 6.0]);
        assert_eq!(grid.coord(0, 1), [5.0, 5.0]);
        // Facing north, "left" is west (decreasing u).
        assert_eq!(grid.coord(2, 0), [4.0, 7.0]);
        assert_eq!(grid.coord(2, 2), [6.0, 7.0]);
    }

    #[test]
    fn grid_rotation_equivariance() {
        let geo = GeoTransform::new(50.0, 80.0, 0.25).unwrap();
        let spec = BevSpec::new(5, 3, 0.25).unwrap();
        let pose0 = Pose2::new(51.0, 78.5, 0.0);
        let pose90 = Pose2::new(51.0, 78.5, FRAC_PI_2);
        let g0 = build_grid(&pose0, &geo, &spec).unwrap();
        let g90 = build_grid(&pose90, &geo, &spec).unwrap();
        let anchor = g0.coord(4, 1);
        for (a, b) in g0.coords().iter().zip(g90.coords()) {
            // +pi/2 heading rotates grid offsets 90 deg CCW in world, which is
            // (du, dv) -> (dv, -du) in image coordinates (v points south).
            let (du, dv) = (a[0] - anchor[0], a[1] - anchor[1]);
            assert!((b[0] - (anchor[0] + dv)).abs() < 1e-9);
            assert!((b[1] - (anchor[1] - du)).abs() < 1e-9);
        }
    }

    #[test]
    fn anchor_exactness_random_poses() {
        let geo = GeoTransform::new(500_000.0, 4_500_000.0, 0.3).unwrap();
        let spec = BevSpec::new(9, 7, 0.3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let pose = Pose2::new(
                500_000.0 + rng.random_range(0.0..100.0),
                4_500_000.0 - rng.random_range(0.0..100.0),
                rng.random_range(-3.1..3.1),
            );
            let grid = build_grid(&pose, &geo, &spec).unwrap();
            let (u, v) = geo.world_to_pixel(pose.x, pose.y);
            let got = grid.coord(8, 3);
            assert!(
                (got[0] - u).abs() < 1e-9 && (got[1] - v).abs() < 1e-9,
                "anchor ({}, {}) vs ({u}, {v}) at {pose:?}",
                got[0],
                got[1]
            );
        }
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let geo = GeoTransform::new(0.0, 0.0, 0.3).unwrap();
        let spec = BevSpec::new(3, 3, 0.31).unwrap();
        assert!(matches!(
            build_grid(&Pose2::identity(), &geo, &spec),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rotated_map_rotated_pose_same_patch() {
        // Rotating the map array 90 deg CCW about its center and adding pi/2
        // to the heading must produce the same sampled patch.
        let n = 21; // odd so the rotation center is a pixel center
        let d = 4;
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let a = {
            let m = random_map(&mut rng, n, n, d);
            l2_normalize(&m, crate::grid::NORM_EPSILON).unwrap()
        };
        // CCW in world = content at (r, c) moves to (n-1-c, r).
        let mut b = FeatureMap::zeros(n, n, d, None);
        for r in 0..n {
            for c in 0..n {
                let src = a.cell(r, c).to_vec();
                b.cell_mut(n - 1 - c, r).copy_from_slice(&src);
            }
        }
        let geo = GeoTransform::new(0.0, 0.0, 1.0).unwrap();
        let mut a = a;
        a.set_geo(Some(geo));
        b.set_geo(Some(geo));

        let center = geo.pixel_to_world((n as f64 - 1.0) / 2.0, (n as f64 - 1.0) / 2.0);
        let spec = BevSpec::new(5, 5, 1.0).unwrap();
        // Keep the grid well inside both maps.
        let pose_a = Pose2::new(center.0 + 1.3, center.1 - 0.7, 0.4);
        let ga = build_grid(&pose_a, &geo, &spec).unwrap();
        let pa = bilinear_sample(&a, &ga);

        // The same body-frame patch in the rotated map: rotate the pose about
        // the map center by +pi/2.
        let (dx, dy) = (pose_a.x - center.0, pose_a.y - center.1);
        let pose_b = Pose2::new(center.0 - dy, center.1 + dx, pose_a.theta + FRAC_PI_2);
        let gb = build_grid(&pose_b, &geo, &spec).unwrap();
        let pb = bilinear_sample(&b, &gb);

        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn whole_pixel_shift_moves_columns() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut map = random_map(&mut rng, 16, 16, 2);
        let geo = GeoTransform::new(0.0, 0.0, 0.5).unwrap();
        map.set_geo(Some(geo));
        let spec = BevSpec::new(5, 5, 0.5).unwrap();
        // North-facing pose on a pixel center: sampling is axis-aligned.
        let pose = Pose2::new(
            geo.pixel_to_world(7.0, 10.0).0,
            geo.pixel_to_world(7.0, 10.0).1,
            FRAC_PI_2,
        );
        let k = 3i64;
        let shifted = Pose2::new(pose.x + k as f64 * 0.5, pose.y, pose.theta);
        let g0 = build_grid(&pose, &geo, &spec).unwrap();
        let p1 = bilinear_sample(&map, &build_grid(&shifted, &geo, &spec).unwrap());
        // p1's cell (r, c) equals the source content k columns east of the
        // unshifted grid's integer coordinate.
        for r in 0..5 {
            for c in 0..5 {
                let coord = g0.coord(r, c);
                let src_c = coord[0] as i64 + k;
                if src_c >= 0 && src_c < 16 {
                    let want = map.cell(coord[1] as usize, src_c as usize);
                    assert_eq!(p1.cell(r, c), want);
                }
            }
        }
    }

    #[test]
    fn confidence_sampler_matches_feature_sampler() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let data: Vec<f32> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let conf = ConfidenceMap::new(8, 8, data.clone()).unwrap();
        let as_map = FeatureMap::new(8, 8, 1, data, None).unwrap();
        let coords: Vec<[f64; 2]> =
            (0..16).map(|_| [rng.random_range(-2.0..10.0), rng.random_range(-2.0..10.0)]).collect();
        let grid = grid_from_coords(4, 4, coords);
        let cs = sample_confidence(&conf, &grid);
        let fs = bilinear_sample(&as_map, &grid);
        for (a, b) in cs.data().iter().zip(fs.data()) {
            assert!((a - b.clamp(0.0, 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_one_confidence_stays_one_inside() {
        let conf = ConfidenceMap::constant(6, 6, 1.0).unwrap();
        let grid = grid_from_coords(2, 2, vec![[1.5, 2.5], [3.25, 0.75], [4.0, 4.0], [2.0, 3.0]]);
        let out = sample_confidence(&conf, &grid);
        assert!(out.data().iter().all(|&v| v == 1.0));
        // Half out-of-bounds bleeds toward zero.
        let edge = grid_from_coords(1, 1, vec![[-0.5, 2.0]]);
        let out = sample_confidence(&conf, &edge);
        assert!(out.data()[0] < 1.0 && out.data()[0] > 0.0);
    }
}
