//! Reconstruction and prior-quality metrics.

mod kdtree;

pub use kdtree::KdTree;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::TriangleMesh;
use crate::scene_io::{PixelMap, Vec3};

/// Surface samples per squared voxel length before downsampling.
const SAMPLES_PER_VOXEL_AREA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    /// Percent of predicted points within the threshold of the reference.
    pub precision: f64,
    /// Percent of reference points within the threshold of the prediction.
    pub recall: f64,
    pub fscore: f64,
    /// Mean prediction-to-reference distance.
    pub accuracy: f64,
    /// Mean reference-to-prediction distance.
    pub completeness: f64,
    pub overall: f64,
}

/// One centroid per occupied cell of a grid anchored at the origin, in cell
/// order.
pub fn voxel_downsample(points: &[Vec3], voxel: f64) -> Vec<Vec3> {
    let mut cells: HashMap<[i64; 3], (Vec3, usize)> = HashMap::new();
    for p in points {
        let key = [0, 1, 2].map(|k| (p[k] / voxel).floor() as i64);
        let e = cells.entry(key).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|c| c.0);
    cells.into_iter().map(|(_, (s, n))| s / n as f64).collect()
}

/// Area-weighted uniform surface samples, downsampled to one point per
/// voxel. Deterministic in `seed`.
pub fn mesh_to_points(mesh: &TriangleMesh, voxel: f64, seed: u64) -> Vec<Vec3> {
    let area = mesh.surface_area();
    if mesh.is_empty() || !(area > 0.0) {
        return Vec::new();
    }
    let n = (area / (voxel * voxel) * SAMPLES_PER_VOXEL_AREA).ceil() as usize;
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for i in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(i);
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n + mesh.vertices.len());
    // Vertices keep small triangles represented at coarse voxel sizes.
    samples.extend(mesh.vertices.iter().copied());
    for _ in 0..n {
        let r = rng.random::<f64>() * acc;
        let tri = cdf.partition_point(|c| *c <= r).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(tri);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        samples.push(a + (b - a) * u + (c - a) * v);
    }
    voxel_downsample(&samples, voxel)
}

/// Nearest-neighbor distance from every query to `reference`.
pub fn nearest_distances(queries: &[Vec3], reference: &[Vec3]) -> Vec<f64> {
    let tree = KdTree::build(reference);
    queries
        .par_iter()
        .map(|q| tree.nearest_distance(q).unwrap_or(f64::INFINITY))
        .collect()
}

fn summarize(d_pred: &[f64], d_gt: &[f64], threshold: f64) -> ReconMetrics {
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let within = |d: &[f64]| 100.0 * d.iter().filter(|x| **x < threshold).count() as f64 / d.len() as f64;
    let precision = within(d_pred);
    let recall = within(d_gt);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let accuracy = mean(d_pred);
    let completeness = mean(d_gt);
    ReconMetrics {
        precision,
        recall,
        fscore,
        accuracy,
        completeness,
        overall: 0.5 * (accuracy + completeness),
    }
}

fn check_sets(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> Result<()> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Metric(format!(
            "point sets must be non-empty (prediction {}, reference {})",
            pred.len(),
            gt.len()
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::Metric(format!("threshold must be positive, got {threshold}")));
    }
    Ok(())
}

/// Accuracy, completeness and threshold scores between two point sets.
/// A point counts as matched when its distance is strictly below `threshold`.
pub fn recon_metrics(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> Result<ReconMetrics> {
    check_sets(pred, gt, threshold)?;
    Ok(summarize(&nearest_distances(pred, gt), &nearest_distances(gt, pred), threshold))
}

/// Quadratic-time reference for [`recon_metrics`].
pub fn recon_metrics_brute_force(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> Result<ReconMetrics> {
    check_sets(pred, gt, threshold)?;
    let nn = |qs: &[Vec3], refs: &[Vec3]| -> Vec<f64> {
        qs.iter()
            .map(|q| refs.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .collect()
    };
    Ok(summarize(&nn(pred, gt), &nn(gt, pred), threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    /// Fraction of reference pixels without a prediction.
    pub comp: f64,
    pub abs_diff: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    /// Pixels where both maps are defined.
    pub pixels: usize,
}

/// Depth-map error statistics; a value `<= 0` marks an undefined pixel.
pub fn depth_metrics(pred: &PixelMap<f64>, gt: &PixelMap<f64>) -> Result<DepthMetrics> {
    if !pred.same_shape(gt) {
        return Err(Error::Metric("depth maps differ in size".into()));
    }
    let (mut defined, mut missing, mut n) = (0usize, 0usize, 0usize);
    let (mut abs, mut rel, mut sq_rel, mut sq) = (0.0, 0.0, 0.0, 0.0);
    for (&d, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if !(g > 0.0) {
            continue;
        }
        defined += 1;
        if !(d > 0.0) {
            missing += 1;
            continue;
        }
        let e = d - g;
        n += 1;
        abs += e.abs();
        rel += e.abs() / g;
        sq_rel += e * e / g;
        sq += e * e;
    }
    if n == 0 {
        return Err(Error::Metric("no pixel is defined in both depth maps".into()));
    }
    let k = n as f64;
    Ok(DepthMetrics {
        comp: missing as f64 / defined as f64,
        abs_diff: abs / k,
        abs_rel: rel / k,
        sq_rel: sq_rel / k,
        rmse: (sq / k).sqrt(),
        pixels: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    /// Degrees.
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub pixels: usize,
}

/// Angular errors in degrees between normal maps over pixels where `mask`
/// (if given) is set and both normals are nonzero.
pub fn normal_metrics(pred: &PixelMap<Vec3>, gt: &PixelMap<Vec3>, mask: Option<&PixelMap<bool>>) -> Result<NormalMetrics> {
    if !pred.same_shape(gt) || mask.is_some_and(|m| !m.same_shape(gt)) {
        return Err(Error::Metric("normal maps differ in size".into()));
    }
    let mut errors: Vec<f64> = (0..gt.len())
        .filter(|&i| mask.is_none_or(|m| m.as_slice()[i]))
        .filter_map(|i| {
            let (n, g) = (pred.as_slice()[i], gt.as_slice()[i]);
            if n.norm() == 0.0 || g.norm() == 0.0 {
                return None;
            }
            Some(angle_degrees(&n, &g))
        })
        .collect();
    if errors.is_empty() {
        return Err(Error::Metric("no pixel selected for normal evaluation".into()));
    }
    let k = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / k;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / k).sqrt();
    errors.sort_by(f64::total_cmp);
    let m = errors.len();
    let median = if m % 2 == 1 {
        errors[m / 2]
    } else {
        0.5 * (errors[m / 2 - 1] + errors[m / 2])
    };
    Ok(NormalMetrics {
        mean,
        median,
        rmse,
        pixels: m,
    })
}

/// Angle between two (not necessarily unit) vectors in degrees.
pub fn angle_degrees(a: &Vec3, b: &Vec3) -> f64 {
    a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
        }
    }

    fn plane_points(n: usize, spacing: f64, z: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                out.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, z));
            }
        }
        out
    }

    #[test]
    fn square_voxel_counting() {
        let pts = mesh_to_points(&unit_square(), 0.5, 1);
        assert!(!pts.is_empty() && pts.len() <= 9, "{}", pts.len());
        for p in &pts {
            assert!(p.z.abs() < 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&p.x) && (-1e-12..=1.0 + 1e-12).contains(&p.y));
        }
        assert!(mesh_to_points(&TriangleMesh::default(), 0.5, 1).is_empty());
    }

    #[test]
    fn downsampling_is_idempotent() {
        let pts = mesh_to_points(&unit_square(), 0.05, 3);
        assert_eq!(voxel_downsample(&pts, 0.05), pts);
    }

    #[test]
    fn identical_sets() {
        let pts = plane_points(20, 0.01, 0.0);
        let m = recon_metrics(&pts, &pts, 0.05).unwrap();
        assert_eq!((m.precision, m.recall, m.fscore), (100.0, 100.0, 100.0));
        assert_eq!((m.accuracy, m.completeness, m.overall), (0.0, 0.0, 0.0));
    }

    #[test]
    fn shifted_plane() {
        let gt = plane_points(40, 0.01, 0.0);
        let near: Vec<Vec3> = plane_points(30, 0.01, 0.03).iter().map(|p| p + Vec3::new(0.05, 0.05, 0.0)).collect();
        let m = recon_metrics(&near, &gt, 0.05).unwrap();
        assert!((m.accuracy - 0.03).abs() < 1e-9);
        assert_eq!(m.precision, 100.0);
        assert_eq!(m, recon_metrics_brute_force(&near, &gt, 0.05).unwrap());
        let far: Vec<Vec3> = gt.iter().map(|p| p + Vec3::new(0.0, 0.0, 0.2)).collect();
        let m = recon_metrics(&far, &gt, 0.05).unwrap();
        assert_eq!((m.precision, m.recall, m.fscore), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(recon_metrics(&[], &[Vec3::zeros()], 0.05).is_err());
        assert!(recon_metrics(&[Vec3::zeros()], &[], 0.05).is_err());
    }

    fn cloud() -> impl Strategy<Value = Vec<Vec3>> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..120)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn fast_equals_brute_force(a in cloud(), b in cloud()) {
            prop_assert_eq!(recon_metrics(&a, &b, 0.2).unwrap(), recon_metrics_brute_force(&a, &b, 0.2).unwrap());
        }

        #[test]
        fn swap_symmetry(a in cloud(), b in cloud()) {
            let ab = recon_metrics(&a, &b, 0.3).unwrap();
            let ba = recon_metrics(&b, &a, 0.3).unwrap();
            prop_assert_eq!(ab.accuracy, ba.completeness);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.fscore, ba.fscore);
        }

        #[test]
        fn permutation_invariance(a in cloud(), b in cloud(), k in 0usize..1000) {
            let mut p = a.clone();
            let len = p.len();
            p.rotate_left(k % len);
            p.reverse();
            let x = recon_metrics(&a, &b, 0.25).unwrap();
            let y = recon_metrics(&p, &b, 0.25).unwrap();
            prop_assert!((x.accuracy - y.accuracy).abs() < 1e-12);
            prop_assert_eq!(x.precision, y.precision);
            prop_assert_eq!(x.recall, y.recall);
            prop_assert_eq!(x.fscore == 0.0, x.precision == 0.0 || x.recall == 0.0);
            prop_assert!((0.0..=100.0).contains(&x.fscore));
        }
    }

    #[test]
    fn depth_closed_form() {
        let gt = PixelMap::filled(8, 4, 2.0);
        let same = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((same.comp, same.abs_diff, same.abs_rel, same.sq_rel, same.rmse), (0.0, 0.0, 0.0, 0.0, 0.0));
        let m = depth_metrics(&PixelMap::filled(8, 4, 2.1), &gt).unwrap();
        assert!((m.abs_diff - 0.1).abs() < 1e-12);
        assert!((m.abs_rel - 0.05).abs() < 1e-12);
        assert!((m.sq_rel - 0.005).abs() < 1e-12);
        assert!((m.rmse - 0.1).abs() < 1e-12);
        let half = PixelMap::from_fn(8, 4, |c, _| if c < 4 { 2.0 } else { 0.0 });
        assert_eq!(depth_metrics(&half, &gt).unwrap().comp, 0.5);
        assert!(depth_metrics(&PixelMap::filled(8, 4, 0.0), &gt).is_err());
    }

    #[test]
    fn normal_closed_form() {
        let gt = PixelMap::from_fn(6, 5, |c, r| Vec3::new(c as f64 - 2.5, r as f64 - 2.0, 3.0).normalize());
        let same = normal_metrics(&gt, &gt, None).unwrap();
        assert!(same.mean < 1e-6 && same.median < 1e-6 && same.rmse < 1e-6);
        // Rotate every normal by 10 degrees about an axis perpendicular to it.
        let tilted = gt.map(|n| {
            let axis = n.cross(&Vec3::x()).normalize();
            nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), 10f64.to_radians()) * n
        });
        let m = normal_metrics(&tilted, &gt, None).unwrap();
        for v in [m.mean, m.median, m.rmse] {
            assert!((v - 10.0).abs() < 1e-9, "{v}");
        }
        let flipped = gt.map(|n| -n);
        assert!((normal_metrics(&flipped, &gt, None).unwrap().mean - 180.0).abs() < 1e-9);
        let mask = PixelMap::from_fn(6, 5, |c, _| c == 0);
        assert_eq!(normal_metrics(&tilted, &gt, Some(&mask)).unwrap().pixels, 5);
    }
}
