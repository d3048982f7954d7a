//! File formats: JSON persistence for models, scenes, states, and reports;
//! OBJ export of posed skeletons; CSV writers for optimization traces,
//! evaluation results, and chart comparisons; and the run manifest tying a
//! model pair to its scenes.
//!
//! JSON is written pretty-printed with a trailing newline. All serialized
//! types use ordered struct fields (never maps), so identical values produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optim::{ChartComparison, FitReport};
use crate::skeleton::{PosedSkeleton, SkeletonModel};

/// Serialize `value` as pretty JSON to `path`, creating parent directories.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Deserialize a JSON file written by [`save_json`] (or by hand).
pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

/// Export a posed skeleton as a Wavefront OBJ point cloud with one `o` group
/// per bone block.
pub fn write_obj(
    path: impl AsRef<Path>,
    model: &SkeletonModel,
    posed: &PosedSkeleton,
) -> Result<()> {
    let mut text = String::new();
    let mut index = 1usize; // OBJ indices are 1-based
    for (block, verts) in model.blocks.iter().zip(&posed.vertices) {
        writeln!(text, "o {}", block.name).unwrap();
        let first = index;
        for v in verts {
            writeln!(text, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z).unwrap();
            index += 1;
        }
        let ids: Vec<String> = (first..index).map(|i| i.to_string()).collect();
        writeln!(text, "p {}", ids.join(" ")).unwrap();
    }
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Write an optimization trace as CSV: `round,step,total,<term...>` using the
/// report's own term names.
pub fn write_trace_csv(path: impl AsRef<Path>, report: &FitReport) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "round,step,total,{}", report.term_names.join(",")).unwrap();
    for row in &report.trace {
        write!(text, "{},{},{}", row.round, row.step, row.total).unwrap();
        for term in &row.terms {
            write!(text, ",{term}").unwrap();
        }
        text.push('\n');
    }
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// One evaluation outcome: a scene fitted by one method.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultRow {
    pub scene: String,
    pub method: String,
    /// Mean vertex distance to ground truth, millimeters.
    pub reconstruction_error_mm: f64,
    /// Mean landmark distance to ground truth, model units.
    pub d_mean: f64,
    pub total_time_s: f64,
}

/// Write evaluation results as CSV with a fixed header.
pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let mut text = String::from("scene,method,reconstruction_error_mm,d_mean,total_time_s\n");
    for r in rows {
        writeln!(
            text,
            "{},{},{},{},{}",
            r.scene, r.method, r.reconstruction_error_mm, r.d_mean, r.total_time_s
        )
        .unwrap();
    }
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Write a rotation-chart comparison as CSV: one row per paired problem.
pub fn write_chart_csv(path: impl AsRef<Path>, cmp: &ChartComparison) -> Result<()> {
    let mut text = String::from("problem,quat_final,rodrigues_final,winner\n");
    for p in &cmp.pairs {
        let winner = if p.quat_final <= p.rodrigues_final {
            "quat"
        } else {
            "rodrigues"
        };
        writeln!(
            text,
            "{},{},{},{}",
            p.label, p.quat_final, p.rodrigues_final, winner
        )
        .unwrap();
    }
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Ties a generated model pair to its scene files. Paths are stored as
/// written (normally relative); [`Manifest::resolved`] rebases them onto the
/// manifest's own directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub body: String,
    pub skeleton: String,
    pub scenes: Vec<String>,
}

impl Manifest {
    /// Rebase all stored paths onto `dir` (the manifest file's directory).
    pub fn resolved(&self, dir: impl AsRef<Path>) -> ResolvedManifest {
        let dir = dir.as_ref();
        let join = |p: &str| {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                dir.join(pb)
            }
        };
        ResolvedManifest {
            body: join(&self.body),
            skeleton: join(&self.skeleton),
            scenes: self.scenes.iter().map(|s| join(s)).collect(),
        }
    }
}

/// A [`Manifest`] with paths rebased to absolute locations.
#[derive(Clone, Debug)]
pub struct ResolvedManifest {
    pub body: PathBuf,
    pub skeleton: PathBuf,
    pub scenes: Vec<PathBuf>,
}
