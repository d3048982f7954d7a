//! Evaluation metrics. Distances are plain Euclidean means; the mm-valued
//! metrics multiply model meters by 1000.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::skeleton::PosedSkeleton;

const MM_PER_METER: f64 = 1000.0;

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>], what: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "{what}: {} points vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Metric(format!("{what}: empty point set")));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum();
    Ok(sum / a.len() as f64)
}

/// Mean per-vertex distance between two posed skeletons with identical
/// block topology, in millimeters. No alignment: both live in the shared
/// camera frame.
pub fn reconstruction_error(fitted: &PosedSkeleton, gt: &PosedSkeleton) -> Result<f64> {
    if fitted.vertices.len() != gt.vertices.len() {
        return Err(Error::Metric(format!(
            "block count mismatch: {} vs {}",
            fitted.vertices.len(),
            gt.vertices.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (bi, (va, vb)) in fitted.vertices.iter().zip(&gt.vertices).enumerate() {
        if va.len() != vb.len() {
            return Err(Error::Metric(format!(
                "block {bi} vertex count mismatch: {} vs {}",
                va.len(),
                vb.len()
            )));
        }
        sum += va.iter().zip(vb).map(|(x, y)| (x - y).norm()).sum::<f64>();
        count += va.len();
    }
    if count == 0 {
        return Err(Error::Metric("skeletons have no vertices".into()));
    }
    Ok(MM_PER_METER * sum / count as f64)
}

/// Mean Euclidean distance over corresponding landmarks, in model units.
/// Correspondence is positional — this is not a matching metric.
pub fn d_mean(fitted: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    mean_distance(fitted, gt, "d_mean")
}

/// Mean per-joint position error in millimeters after root-joint alignment:
/// each joint set is expressed relative to its own `root` joint, which pins
/// the comparison to the first argument's root.
pub fn mpjpe(fitted: &[Vector3<f64>], gt: &[Vector3<f64>], root: usize) -> Result<f64> {
    if fitted.len() != gt.len() {
        return Err(Error::Metric(format!(
            "mpjpe: {} joints vs {}",
            fitted.len(),
            gt.len()
        )));
    }
    if root >= fitted.len() {
        return Err(Error::Metric(format!(
            "mpjpe: root joint {root} out of range"
        )));
    }
    let (ra, rb) = (fitted[root], gt[root]);
    let sum: f64 = fitted
        .iter()
        .zip(gt)
        .map(|(x, y)| ((x - ra) - (y - rb)).norm())
        .sum();
    Ok(MM_PER_METER * sum / fitted.len() as f64)
}

/// Mean per-vertex error in millimeters, no alignment.
pub fn pve(fitted: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    Ok(MM_PER_METER * mean_distance(fitted, gt, "pve")?)
}
