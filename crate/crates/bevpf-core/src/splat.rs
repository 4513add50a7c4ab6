//! Geometric core of the BEV mapper: unproject per-pixel features through a
//! depth image into vehicle-frame 3D points, then splat them into a BEV grid
//! by height-invariant weighted averaging.
//!
//! The vehicle frame is x forward, y left, z up. BEV cells follow the same
//! body-frame convention as the patch sampler: cell (r, c) sits at forward
//! `(H-1-r) * res`, left `((W-1)/2 - c) * res`.

use crate::error::{Error, Result};
use crate::grid::FeatureMap;
use crate::sampler::BevSpec;

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Rigid camera-to-vehicle transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl CameraExtrinsics {
    /// Validates orthonormality (within 1e-9) and det = +1.
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let r = &rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "rotation rows {i},{j} not orthonormal (dot = {dot})"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("rotation determinant {det} != +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Camera z (depth axis) to vehicle x-forward, camera x-right to vehicle
    /// -y, camera y-down to vehicle -z: the usual forward-looking mount.
    pub fn forward_camera(translation: [f64; 3]) -> Self {
        Self {
            rotation: [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
            translation,
        }
    }

    #[inline]
    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }
}

/// Vehicle-frame feature points with per-point splat weights.
#[derive(Debug, Clone)]
pub struct FeaturePointCloud {
    points: Vec<[f64; 3]>,
    features: Vec<f32>,
    dim: usize,
    weights: Vec<f32>,
}

impl FeaturePointCloud {
    pub fn new(points: Vec<[f64; 3]>, features: Vec<f32>, dim: usize, weights: Vec<f32>) -> Result<Self> {
        if features.len() != points.len() * dim || weights.len() != points.len() {
            return Err(Error::DimensionMismatch(format!(
                "cloud sizes: {} points, {} features (dim {dim}), {} weights",
                points.len(),
                features.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("splat weights must be finite and >= 0".into()));
        }
        Ok(Self { points, features, dim, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
}

/// Lift image features into vehicle-frame 3D points through a depth image.
///
/// The depth image must be an integer multiple of the feature resolution in
/// both axes; it is average-pooled (over valid entries) to the feature grid
/// before unprojection. Cells whose pooled depth is missing or <= 0 are
/// dropped.
pub fn unproject(
    depth: &[f32],
    depth_h: usize,
    depth_w: usize,
    feats: &FeatureMap,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    weights: &[f32],
) -> Result<FeaturePointCloud> {
    if depth.len() != depth_h * depth_w {
        return Err(Error::DimensionMismatch(format!(
            "depth length {} != {depth_h}x{depth_w}",
            depth.len()
        )));
    }
    let (fh, fw) = (feats.height(), feats.width());
    if weights.len() != fh * fw {
        return Err(Error::DimensionMismatch(format!(
            "weights length {} != {fh}x{fw}",
            weights.len()
        )));
    }
    if fh == 0 || fw == 0 || depth_h % fh != 0 || depth_w % fw != 0 {
        return Err(Error::DimensionMismatch(format!(
            "depth {depth_h}x{depth_w} is not an integer multiple of features {fh}x{fw}"
        )));
    }
    let (sh, sw) = (depth_h / fh, depth_w / fw);

    let dim = feats.dim();
    let mut points = Vec::new();
    let mut features = Vec::new();
    let mut out_weights = Vec::new();
    for r in 0..fh {
        for c in 0..fw {
            // Average-pool the valid depths in this cell's block.
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for dr in 0..sh {
                for dc in 0..sw {
                    let d = depth[(r * sh + dr) * depth_w + (c * sw + dc)];
                    if d.is_finite() && d > 0.0 {
                        sum += d as f64;
                        count += 1;
                    }
                }
            }
            if count == 0 {
                continue;
            }
            let d = sum / count as f64;
            // Feature-cell center in depth-pixel coordinates.
            let u = (c as f64 + 0.5) * sw as f64 - 0.5;
            let v = (r as f64 + 0.5) * sh as f64 - 0.5;
            let cam = [d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d];
            points.push(extr.transform(cam));
            features.extend_from_slice(feats.cell(r, c));
            out_weights.push(weights[r * fw + c]);
        }
    }
    FeaturePointCloud::new(points, features, dim, out_weights)
}

/// Result of [`splat`]: averaged features, per-cell contributing point
/// counts, and how many points fell outside the grid.
#[derive(Debug, Clone)]
pub struct SplatResult {
    pub features: FeatureMap,
    pub hit_count: Vec<u32>,
    pub dropped: usize,
}

/// Height-invariant weighted average of point features per BEV column.
///
/// Each point lands in the cell nearest its (forward, left) coordinates;
/// z is ignored. Accumulation follows point order, so equal inputs always
/// produce bit-equal grids.
pub fn splat(cloud: &FeaturePointCloud, spec: &BevSpec) -> Result<SplatResult> {
    let (h, w) = (spec.height, spec.width);
    let dim = cloud.dim();
    let res = spec.resolution;
    let half_w = (w as f64 - 1.0) / 2.0;

    let mut feat_sum = vec![0.0f64; h * w * dim];
    let mut weight_sum = vec![0.0f64; h * w];
    let mut hit_count = vec![0u32; h * w];
    let mut dropped = 0usize;

    for (i, p) in cloud.points().iter().enumerate() {
        let (fwd, left) = (p[0], p[1]);
        let rf = (h as f64 - 1.0) - fwd / res;
        let cf = half_w - left / res;
        let r = rf.round();
        let c = cf.round();
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
            dropped += 1;
            continue;
        }
        let cell = r as usize * w + c as usize;
        hit_count[cell] += 1;
        let wgt = cloud.weights()[i] as f64;
        weight_sum[cell] += wgt;
        let dst = &mut feat_sum[cell * dim..(cell + 1) * dim];
        for (d, f) in dst.iter_mut().zip(cloud.feature(i)) {
            *d += wgt * *f as f64;
        }
    }

    let mut out = FeatureMap::zeros(h, w, dim, None);
    for cell in 0..h * w {
        let ws = weight_sum[cell];
        if ws > 0.0 {
            let dst = out.cell_mut(cell / w, cell % w);
            let src = &feat_sum[cell * dim..(cell + 1) * dim];
            for (o, s) in dst.iter_mut().zip(src) {
                *o = (s / ws) as f32;
            }
        }
    }
    Ok(SplatResult { features: out, hit_count, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cloud_of(points: Vec<[f64; 3]>, feats: Vec<f32>, dim: usize, w: Vec<f32>) -> FeaturePointCloud {
        FeaturePointCloud::new(points, feats, dim, w).unwrap()
    }

    #[test]
    fn principal_point_unprojects_on_axis() {
        let feats = FeatureMap::new(1, 1, 2, vec![0.5, -0.5], None).unwrap();
        // Depth image 1x1 so the single feature cell center is (0, 0); put
        // the principal point there.
        let intr = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap();
        let cloud =
            unproject(&[2.0], 1, 1, &feats, &intr, &CameraExtrinsics::identity(), &[1.0]).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.points()[0], [0.0, 0.0, 2.0]);
    }

    #[test]
    fn unit_offset_pixel() {
        // fx = fy = 100, cx = cy = 0, pixel (100, 0), depth 1 -> camera (1, 0, 1)
        let intr = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap();
        let feats = FeatureMap::zeros(1, 201, 1, None);
        let mut depth = vec![0.0f32; 201];
        depth[100] = 1.0; // only that column valid
        let cloud = unproject(
            &depth,
            1,
            201,
            &feats,
            &intr,
            &CameraExtrinsics::identity(),
            &vec![1.0; 201],
        )
        .unwrap();
        assert_eq!(cloud.len(), 1);
        let p = cloud.points()[0];
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_depths_are_dropped() {
        let intr = CameraIntrinsics::new(50.0, 50.0, 1.0, 0.0).unwrap();
        let feats = FeatureMap::zeros(1, 3, 1, None);
        let depth = vec![0.0, f32::NAN, 2.0];
        let cloud =
            unproject(&depth, 1, 3, &feats, &intr, &CameraExtrinsics::identity(), &[1.0; 3]).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.points()[0][2], 2.0);
    }

    #[test]
    fn depth_pooling_and_plane_roundtrip() {
        // 4x4 depth over 2x2 features, fronto-parallel plane at depth 3.
        let intr = CameraIntrinsics::new(10.0, 10.0, 1.5, 1.5).unwrap();
        let feats = FeatureMap::zeros(2, 2, 1, None);
        let depth = vec![3.0f32; 16];
        let t = [0.1, 0.2, 0.3];
        let extr = CameraExtrinsics::new(CameraExtrinsics::identity().rotation, t).unwrap();
        let cloud = unproject(&depth, 4, 4, &feats, &intr, &extr, &[1.0; 4]).unwrap();
        assert_eq!(cloud.len(), 4);
        for p in cloud.points() {
            assert_eq!(p[2], 3.0 + 0.3);
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let intr = CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0).unwrap();
        let feats = FeatureMap::zeros(2, 3, 1, None);
        let depth = vec![1.0f32; 7 * 3];
        assert!(matches!(
            unproject(&depth, 7, 3, &feats, &intr, &CameraExtrinsics::identity(), &[1.0; 6]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn splat_single_point() {
        let spec = BevSpec::new(4, 5, 0.5).unwrap();
        // forward 1.0 m, left 0 -> row 4-1-2 = 1, col 2
        let cloud = cloud_of(vec![[1.0, 0.0, 0.7]], vec![2.0, 3.0], 2, vec![1.0]);
        let out = splat(&cloud, &spec).unwrap();
        assert_eq!(out.features.cell(1, 2), &[2.0, 3.0]);
        assert_eq!(out.hit_count[1 * 5 + 2], 1);
        assert_eq!(out.dropped, 0);
        let total: f32 = out.features.data().iter().sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn splat_weighted_mean() {
        let spec = BevSpec::new(3, 3, 1.0).unwrap();
        let cloud = cloud_of(
            vec![[1.0, 0.0, 0.0], [1.0, 0.0, 5.0]],
            vec![1.0, 0.0, 5.0, 8.0],
            2,
            vec![1.0, 3.0],
        );
        let out = splat(&cloud, &spec).unwrap();
        // (a + 3b) / 4 with a = (1, 0), b = (5, 8); same cell despite z gap.
        assert_eq!(out.features.cell(1, 1), &[4.0, 6.0]);
        assert_eq!(out.hit_count[4], 2);
    }

    #[test]
    fn splat_out_of_grid_points_are_dropped() {
        let spec = BevSpec::new(3, 3, 1.0).unwrap();
        let cloud = cloud_of(
            vec![[10.0, 0.0, 0.0], [-5.0, 0.0, 0.0], [1.0, 1.0, 0.0]],
            vec![1.0, 1.0, 1.0],
            1,
            vec![1.0; 3],
        );
        let out = splat(&cloud, &spec).unwrap();
        assert_eq!(out.dropped, 2);
        let hits: u32 = out.hit_count.iter().sum();
        assert_eq!(hits as usize, cloud.len() - out.dropped);
    }

    #[test]
    fn splat_weight_scaling_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let n = 200;
        let points: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..4.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let feats: Vec<f32> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let scaled: Vec<f32> = weights.iter().map(|w| w * 7.5).collect();
        let spec = BevSpec::new(8, 8, 0.5).unwrap();
        let a = splat(&cloud_of(points.clone(), feats.clone(), 3, weights), &spec).unwrap();
        let b = splat(&cloud_of(points, feats, 3, scaled), &spec).unwrap();
        for (x, y) in a.features.data().iter().zip(b.features.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn splat_permutation_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let n = 150;
        let points: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random_range(0.0..3.0), rng.random_range(-1.5..1.5), 0.0])
            .collect();
        let feats: Vec<f32> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f32> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();

        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let p2: Vec<[f64; 3]> = perm.iter().map(|&i| points[i]).collect();
        let f2: Vec<f32> = perm.iter().flat_map(|&i| feats[i * 2..i * 2 + 2].to_vec()).collect();
        let w2: Vec<f32> = perm.iter().map(|&i| weights[i]).collect();

        let spec = BevSpec::new(6, 6, 0.5).unwrap();
        let a = splat(&cloud_of(points, feats, 2, weights), &spec).unwrap();
        let b = splat(&cloud_of(p2, f2, 2, w2), &spec).unwrap();
        for (x, y) in a.features.data().iter().zip(b.features.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(a.hit_count, b.hit_count);
    }

    #[test]
    fn rejects_bad_rotation() {
        let skewed = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraExtrinsics::new(skewed, [0.0; 3]).is_err());
        // Det = -1 (reflection) is also rejected.
        let reflect = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(CameraExtrinsics::new(reflect, [0.0; 3]).is_err());
        assert!(CameraExtrinsics::new(CameraExtrinsics::forward_camera([0.0; 3]).rotation, [0.0; 3]).is_ok());
    }
}
