//! Synthetic model and scene generation.
//!
//! [`gen_models`] builds a matched pair of desk-scale models: a ten-part
//! articulated body surface and an eleven-block skeleton whose bones live
//! inside those parts. The two are constructed from one shared set of affine
//! per-part shape fields, so a body shape coefficient vector maps exactly
//! (through the diagonal transfer matrix shipped on the body model) onto
//! skeleton shape coefficients that reproduce the same landmark displacements.
//!
//! [`gen_scene`] samples a posed, shaped body, renders its 2D keypoints, and
//! derives a ground-truth skeleton state by transporting each block through
//! its enclosing part's rigid transform and then polishing that placement
//! under the default fitting energy. [`warm_start`] and [`body_warm_start`]
//! produce deterministic perturbed (or cold) initializations for evaluation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{body_forward, body_joints, body_landmarks, kp_map, BodyModel, BodyState};
use crate::energy::{build_constraints, EnergySpec, Keypoint};
use crate::error::{Error, Result};
use crate::geom::{project, AxisAngle, Camera, Quat, Rotation};
use crate::metrics::d_mean;
use crate::optim::{fit_skeleton_to_targets, Mode, OptimizerConfig};
use crate::skeleton::{
    skeleton_forward, skeleton_landmarks, BetaBounds, BoneBlock, ClavicleRef, LandmarkDef,
    MatchPoint, Seam, SkeletonModel, SkeletonState,
};

/// Size knobs for [`gen_models`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SizeConfig {
    /// Surface vertices sampled on each body part.
    pub body_verts_per_part: usize,
    /// Vertices sampled on each bone block.
    pub block_verts: usize,
    /// Cross-block distance pairs used when scenes are generated.
    pub ct_pairs: usize,
}

impl Default for SizeConfig {
    fn default() -> Self {
        SizeConfig {
            body_verts_per_part: 40,
            block_verts: 28,
            ct_pairs: 300,
        }
    }
}

impl SizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.body_verts_per_part < 8 {
            return Err(Error::Generation(
                "need at least 8 vertices per body part".into(),
            ));
        }
        if self.block_verts < 8 {
            return Err(Error::Generation(
                "need at least 8 vertices per block".into(),
            ));
        }
        if self.ct_pairs == 0 {
            return Err(Error::Generation(
                "need at least one cross-block pair".into(),
            ));
        }
        Ok(())
    }
}

/// Noise magnitudes for scene generation and start-state perturbation.
///
/// `sigma_t` (meters) and `sigma_r` (degrees) perturb block placements,
/// `sigma_beta` perturbs shape coefficients, and `sigma_2d` is added to
/// projected keypoints by [`gen_scene`]. Setting `sigma_t` or `sigma_r` to
/// infinity selects a cold start: placements drawn uniformly over the posed
/// body's bounding box with uniformly random orientations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct NoiseSpec {
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub sigma_2d: f64,
    pub sigma_beta: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::exact()
    }
}

impl NoiseSpec {
    /// No noise anywhere: warm starts reproduce the ground truth bitwise.
    pub fn exact() -> Self {
        NoiseSpec {
            sigma_t: 0.0,
            sigma_r: 0.0,
            sigma_2d: 0.0,
            sigma_beta: 0.0,
        }
    }

    /// Uninformed placements (see the struct docs), noisy shape.
    pub fn cold() -> Self {
        NoiseSpec {
            sigma_t: f64::INFINITY,
            sigma_r: f64::INFINITY,
            sigma_2d: 0.0,
            sigma_beta: 0.3,
        }
    }

    pub fn is_cold(&self) -> bool {
        self.sigma_t.is_infinite() || self.sigma_r.is_infinite()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigmaT", self.sigma_t),
            ("sigmaR", self.sigma_r),
            ("sigma2d", self.sigma_2d),
            ("sigmaBeta", self.sigma_beta),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Generation(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.sigma_2d.is_infinite() || self.sigma_beta.is_infinite() {
            return Err(Error::Generation(
                "sigma2d and sigmaBeta must be finite; only placement noise supports the cold sentinel".into(),
            ));
        }
        Ok(())
    }
}

/// Named difficulty presets for start-state perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    /// Zero noise: the warm start is the ground truth.
    Exact,
    /// Small placement noise plus shape noise.
    Warm,
    /// Uninformed placements plus shape noise.
    Cold,
}

impl Tier {
    pub fn noise(self) -> NoiseSpec {
        match self {
            Tier::Exact => NoiseSpec::exact(),
            Tier::Warm => NoiseSpec {
                sigma_t: 0.01,
                sigma_r: 5.0,
                sigma_2d: 0.0,
                sigma_beta: 0.3,
            },
            Tier::Cold => NoiseSpec::cold(),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tier::Exact => "exact",
            Tier::Warm => "warm",
            Tier::Cold => "cold",
        };
        f.write_str(s)
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tier> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Tier::Exact),
            "warm" => Ok(Tier::Warm),
            "cold" => Ok(Tier::Cold),
            other => Err(Error::Generation(format!("unknown tier '{other}'"))),
        }
    }
}

/// One synthetic observation: 2D keypoints with confidences, plus the ground
/// truth that produced them (absent for scenes built from real detections).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scene {
    pub seed: u64,
    /// Identifier of the model pair this scene was generated from.
    #[serde(default)]
    pub model: String,
    /// The noise spec the generator was called with (2D noise only).
    pub noise: NoiseSpec,
    /// Projected body joints, one per row of the body's joint regressor.
    pub j_gt: Vec<Keypoint>,
    /// 3D landmark targets regressed from the ground-truth body surface.
    pub landmark_targets: Vec<Vector3<f64>>,
    pub body: Option<BodyState>,
    pub skeleton_gt: Option<SkeletonState>,
}

// ---------------------------------------------------------------------------
// Template tables.
// ---------------------------------------------------------------------------

/// Shared diagonal of the body-to-skeleton shape transfer matrix.
const TRANSFER_DIAG: [f64; 4] = [1.3, 1.0, 1.35, 1.25];

/// Shape dimension of both generated models.
const SHAPE_DIM: usize = 4;

/// Cross-block pairs used for the ground-truth polish inside [`gen_scene`].
const GEN_CT_PAIRS: usize = 300;

/// Generator self-check: mean landmark residual of the polished ground truth
/// against the body's landmark targets must stay below this (meters).
const SELF_CHECK_TOL: f64 = 1e-4;

#[derive(Clone, Copy, PartialEq, Eq)]
enum PartKind {
    Pelvis,
    Spine,
    Chest,
    Head,
    ClavL,
    ArmL,
    ClavR,
    ArmR,
    LegL,
    LegR,
}

struct PartSpec {
    kind: PartKind,
    parent: i32,
    pivot: [f64; 3],
    seg_a: [f64; 3],
    seg_b: [f64; 3],
    radius: f64,
    /// Std-dev (radians) of the per-part rotation angle sampled by scenes.
    pose_scale: f64,
}

const PARTS: [PartSpec; 10] = [
    PartSpec {
        kind: PartKind::Pelvis,
        parent: -1,
        pivot: [0.0, 0.95, 0.0],
        seg_a: [0.0, 0.88, 0.0],
        seg_b: [0.0, 1.05, 0.0],
        radius: 0.11,
        pose_scale: 0.25,
    },
    PartSpec {
        kind: PartKind::Spine,
        parent: 0,
        pivot: [0.0, 1.05, 0.0],
        seg_a: [0.0, 1.05, 0.0],
        seg_b: [0.0, 1.25, 0.0],
        radius: 0.10,
        pose_scale: 0.10,
    },
    PartSpec {
        kind: PartKind::Chest,
        parent: 1,
        pivot: [0.0, 1.25, 0.0],
        seg_a: [0.0, 1.25, 0.0],
        seg_b: [0.0, 1.46, 0.0],
        radius: 0.12,
        pose_scale: 0.10,
    },
    PartSpec {
        kind: PartKind::Head,
        parent: 2,
        pivot: [0.0, 1.52, 0.0],
        seg_a: [0.0, 1.50, 0.0],
        seg_b: [0.0, 1.68, 0.0],
        radius: 0.09,
        pose_scale: 0.12,
    },
    PartSpec {
        kind: PartKind::ClavL,
        parent: 2,
        pivot: [0.06, 1.45, 0.0],
        seg_a: [0.02, 1.45, 0.0],
        seg_b: [0.18, 1.45, 0.0],
        radius: 0.035,
        pose_scale: 0.04,
    },
    PartSpec {
        kind: PartKind::ArmL,
        parent: 4,
        pivot: [0.18, 1.45, 0.0],
        seg_a: [0.18, 1.45, 0.0],
        seg_b: [0.60, 1.45, 0.0],
        radius: 0.045,
        pose_scale: 0.25,
    },
    PartSpec {
        kind: PartKind::ClavR,
        parent: 2,
        pivot: [-0.06, 1.45, 0.0],
        seg_a: [-0.02, 1.45, 0.0],
        seg_b: [-0.18, 1.45, 0.0],
        radius: 0.035,
        pose_scale: 0.04,
    },
    PartSpec {
        kind: PartKind::ArmR,
        parent: 6,
        pivot: [-0.18, 1.45, 0.0],
        seg_a: [-0.18, 1.45, 0.0],
        seg_b: [-0.60, 1.45, 0.0],
        radius: 0.045,
        pose_scale: 0.25,
    },
    PartSpec {
        kind: PartKind::LegL,
        parent: 0,
        pivot: [0.09, 0.92, 0.0],
        seg_a: [0.09, 0.92, 0.0],
        seg_b: [0.09, 0.05, 0.0],
        radius: 0.06,
        pose_scale: 0.20,
    },
    PartSpec {
        kind: PartKind::LegR,
        parent: 0,
        pivot: [-0.09, 0.92, 0.0],
        seg_a: [-0.09, 0.92, 0.0],
        seg_b: [-0.09, 0.05, 0.0],
        radius: 0.06,
        pose_scale: 0.20,
    },
];

struct BlockSpec {
    name: &'static str,
    part: usize,
    cp: [f64; 3],
    seg_a: [f64; 3],
    seg_b: [f64; 3],
    radius: f64,
}

/// Bone blocks. Every block that is the child side of a cross-part seam has
/// its connection point at its part's pivot, so transporting blocks through
/// part transforms closes those seams exactly.
const BLOCKS: [BlockSpec; 11] = [
    BlockSpec {
        name: "pelvis",
        part: 0,
        cp: [0.0, 0.95, 0.0],
        seg_a: [-0.07, 0.94, 0.0],
        seg_b: [0.07, 0.94, 0.0],
        radius: 0.045,
    },
    BlockSpec {
        name: "spine",
        part: 1,
        cp: [0.0, 1.05, 0.0],
        seg_a: [0.0, 1.06, -0.02],
        seg_b: [0.0, 1.24, -0.02],
        radius: 0.028,
    },
    BlockSpec {
        name: "chest",
        part: 2,
        cp: [0.0, 1.25, 0.0],
        seg_a: [0.0, 1.26, -0.02],
        seg_b: [0.0, 1.44, -0.02],
        radius: 0.06,
    },
    BlockSpec {
        name: "sternum",
        part: 2,
        cp: [0.0, 1.38, 0.08],
        seg_a: [0.0, 1.31, 0.07],
        seg_b: [0.0, 1.43, 0.07],
        radius: 0.013,
    },
    BlockSpec {
        name: "skull",
        part: 3,
        cp: [0.0, 1.52, 0.0],
        seg_a: [0.0, 1.55, 0.0],
        seg_b: [0.0, 1.65, 0.0],
        radius: 0.065,
    },
    BlockSpec {
        name: "clav_l",
        part: 4,
        cp: [0.06, 1.45, 0.0],
        seg_a: [0.065, 1.46, 0.01],
        seg_b: [0.175, 1.46, 0.01],
        radius: 0.011,
    },
    BlockSpec {
        name: "hum_l",
        part: 5,
        cp: [0.18, 1.45, 0.0],
        seg_a: [0.19, 1.45, 0.0],
        seg_b: [0.56, 1.45, 0.0],
        radius: 0.02,
    },
    BlockSpec {
        name: "clav_r",
        part: 6,
        cp: [-0.06, 1.45, 0.0],
        seg_a: [-0.065, 1.46, 0.01],
        seg_b: [-0.175, 1.46, 0.01],
        radius: 0.011,
    },
    BlockSpec {
        name: "hum_r",
        part: 7,
        cp: [-0.18, 1.45, 0.0],
        seg_a: [-0.19, 1.45, 0.0],
        seg_b: [-0.56, 1.45, 0.0],
        radius: 0.02,
    },
    BlockSpec {
        name: "fem_l",
        part: 8,
        cp: [0.09, 0.92, 0.0],
        seg_a: [0.09, 0.90, 0.0],
        seg_b: [0.09, 0.18, 0.0],
        radius: 0.024,
    },
    BlockSpec {
        name: "fem_r",
        part: 9,
        cp: [-0.09, 0.92, 0.0],
        seg_a: [-0.09, 0.90, 0.0],
        seg_b: [-0.09, 0.18, 0.0],
        radius: 0.024,
    },
];

/// Containing body part for each bone block (used by scene transport).
const BLOCK_PART: [usize; 11] = [0, 1, 2, 2, 3, 4, 5, 6, 7, 8, 9];

/// Seams as (parent-side block, child-side block). The `chest`/`sternum` pair
/// shares one part; all other seams bridge a kinematic hinge.
const SEAMS: [(usize, usize); 10] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (2, 4),
    (2, 5),
    (5, 6),
    (2, 7),
    (7, 8),
    (0, 9),
    (0, 10),
];

/// Clavicle blocks paired with the thorax block they are referenced to.
const CLAVICLES: [(usize, usize); 2] = [(5, 2), (7, 2)];

struct PointSpec {
    part: usize,
    target: [f64; 3],
}

/// Regression targets for the body's projected joints.
const JOINTS: [PointSpec; 14] = [
    PointSpec {
        part: 0,
        target: [0.0, 0.95, 0.0],
    }, // pelvis
    PointSpec {
        part: 1,
        target: [0.0, 1.15, 0.0],
    }, // spine middle
    PointSpec {
        part: 2,
        target: [0.0, 1.44, 0.0],
    }, // neck
    PointSpec {
        part: 3,
        target: [0.0, 1.66, 0.0],
    }, // head top
    PointSpec {
        part: 5,
        target: [0.20, 1.45, 0.0],
    }, // shoulder L
    PointSpec {
        part: 5,
        target: [0.40, 1.45, 0.0],
    }, // elbow L
    PointSpec {
        part: 5,
        target: [0.58, 1.45, 0.0],
    }, // wrist L
    PointSpec {
        part: 7,
        target: [-0.20, 1.45, 0.0],
    }, // shoulder R
    PointSpec {
        part: 7,
        target: [-0.40, 1.45, 0.0],
    }, // elbow R
    PointSpec {
        part: 7,
        target: [-0.58, 1.45, 0.0],
    }, // wrist R
    PointSpec {
        part: 8,
        target: [0.09, 0.90, 0.0],
    }, // hip L
    PointSpec {
        part: 8,
        target: [0.09, 0.50, 0.0],
    }, // knee L
    PointSpec {
        part: 9,
        target: [-0.09, 0.90, 0.0],
    }, // hip R
    PointSpec {
        part: 9,
        target: [-0.09, 0.50, 0.0],
    }, // knee R
];

struct LandmarkSpec {
    block: usize,
    target: [f64; 3],
}

/// Anatomical landmarks: each is regressed from the body surface of its
/// block's part, and attached rigidly to that block on the skeleton side.
const LANDMARKS: [LandmarkSpec; 14] = [
    LandmarkSpec {
        block: 0,
        target: [0.0, 0.97, -0.08],
    }, // sacrum
    LandmarkSpec {
        block: 1,
        target: [0.0, 1.12, -0.07],
    }, // lumbar spine
    LandmarkSpec {
        block: 2,
        target: [0.0, 1.43, -0.07],
    }, // upper spine
    LandmarkSpec {
        block: 3,
        target: [0.0, 1.36, 0.09],
    }, // sternum tip
    LandmarkSpec {
        block: 4,
        target: [0.0, 1.66, 0.0],
    }, // crown
    LandmarkSpec {
        block: 4,
        target: [0.0, 1.52, 0.07],
    }, // jaw
    LandmarkSpec {
        block: 6,
        target: [0.20, 1.47, 0.0],
    }, // shoulder L
    LandmarkSpec {
        block: 6,
        target: [0.44, 1.44, 0.0],
    }, // elbow L
    LandmarkSpec {
        block: 8,
        target: [-0.20, 1.47, 0.0],
    }, // shoulder R
    LandmarkSpec {
        block: 8,
        target: [-0.44, 1.44, 0.0],
    }, // elbow R
    LandmarkSpec {
        block: 9,
        target: [0.11, 0.91, 0.0],
    }, // hip L
    LandmarkSpec {
        block: 9,
        target: [0.09, 0.50, 0.0],
    }, // knee L
    LandmarkSpec {
        block: 10,
        target: [-0.11, 0.91, 0.0],
    }, // hip R
    LandmarkSpec {
        block: 10,
        target: [-0.09, 0.50, 0.0],
    }, // knee R
];

/// Width (meters) of the Gaussian used to spread regressor rows over nearby
/// surface vertices.
const REGRESSOR_SIGMA: f64 = 0.05;

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Per-part displacement field for one shape coefficient, affine in the
/// evaluation point within each part. Affinity is what makes regressed points
/// deform exactly like the vertices they are regressed from, and it lets the
/// skeleton reuse the same fields as rigid per-block shape directions.
fn shape_field(kind: PartKind, k: usize, p: &Vector3<f64>) -> Vector3<f64> {
    use PartKind::*;
    match k {
        // Overall stature: everything stretches away from the pelvis line.
        0 => Vector3::new(0.0, 0.05 * (p.y - 0.95), 0.0),
        // Girth: radial growth in the horizontal plane.
        1 => Vector3::new(0.03 * p.x, 0.0, 0.03 * p.z),
        // Limb length: arms stretch outward, legs stretch downward.
        2 => match kind {
            ArmL => Vector3::new(0.06 * (p.x - 0.18), 0.0, 0.0),
            ArmR => Vector3::new(0.06 * (p.x + 0.18), 0.0, 0.0),
            LegL | LegR => Vector3::new(0.0, 0.07 * (p.y - 0.92), 0.0),
            _ => Vector3::zeros(),
        },
        // Torso length: the trunk stretches; everything attached above it
        // rides along rigidly.
        3 => match kind {
            Spine | Chest => Vector3::new(0.0, 0.07 * (p.y - 1.0), 0.0),
            Head | ClavL | ArmL | ClavR | ArmR => Vector3::new(0.0, 0.07 * 0.45, 0.0),
            Pelvis | LegL | LegR => Vector3::zeros(),
        },
        _ => Vector3::zeros(),
    }
}

/// Deterministic capsule surface sampling: a golden-angle spiral along the
/// segment with a small seeded radial jitter so different model seeds give
/// distinct vertex sets.
fn sample_capsule(
    rng: &mut ChaCha8Rng,
    a: Vector3<f64>,
    b: Vector3<f64>,
    radius: f64,
    n: usize,
) -> Vec<Vector3<f64>> {
    let axis = b - a;
    let len = axis.norm();
    let dir = axis / len;
    let pick = if dir.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = dir.cross(&pick).normalize();
    let v = dir.cross(&u);
    let golden = PI * (3.0 - 5.0_f64.sqrt());
    let phase: f64 = rng.gen_range(0.0..PI);
    (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) / n as f64;
            let phi = golden * i as f64 + phase;
            let r = radius * (1.0 + 0.06 * (rng.gen::<f64>() - 0.5));
            a + dir * (t * len) + (u * phi.cos() + v * phi.sin()) * r
        })
        .collect()
}

/// Convex regression row over one part's vertex range: Gaussian weights in
/// the distance to `target`, normalized to sum to one.
fn soft_row(
    n_total: usize,
    range: std::ops::Range<usize>,
    vertices: &[Vector3<f64>],
    target: &Vector3<f64>,
) -> Vec<f64> {
    let mut row = vec![0.0; n_total];
    let inv = 1.0 / (2.0 * REGRESSOR_SIGMA * REGRESSOR_SIGMA);
    let mut sum = 0.0;
    for i in range.clone() {
        let w = (-(vertices[i] - target).norm_squared() * inv).exp();
        row[i] = w;
        sum += w;
    }
    for i in range {
        row[i] /= sum;
    }
    row
}

/// Build a matched body/skeleton pair. Identical seeds and sizes give
/// bitwise-identical models.
pub fn gen_models(seed: u64, size: &SizeConfig) -> Result<(BodyModel, SkeletonModel)> {
    size.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Body surface: `body_verts_per_part` vertices per part, stored
    // consecutively so part p owns [p*n, (p+1)*n).
    let n = size.body_verts_per_part;
    let mut template = Vec::with_capacity(n * PARTS.len());
    let mut part_of = Vec::with_capacity(n * PARTS.len());
    for (p, spec) in PARTS.iter().enumerate() {
        let verts = sample_capsule(&mut rng, vec3(spec.seg_a), vec3(spec.seg_b), spec.radius, n);
        part_of.extend(std::iter::repeat(p).take(verts.len()));
        template.extend(verts);
    }
    let shape_dirs: Vec<Vec<Vector3<f64>>> = template
        .iter()
        .enumerate()
        .map(|(i, v)| {
            (0..SHAPE_DIM)
                .map(|k| shape_field(PARTS[part_of[i]].kind, k, v))
                .collect()
        })
        .collect();

    let part_range = |p: usize| p * n..(p + 1) * n;
    let joint_regressor: Vec<Vec<f64>> = JOINTS
        .iter()
        .map(|j| {
            soft_row(
                template.len(),
                part_range(j.part),
                &template,
                &vec3(j.target),
            )
        })
        .collect();
    let landmark_regressor: Vec<Vec<f64>> = LANDMARKS
        .iter()
        .map(|l| {
            let part = BLOCK_PART[l.block];
            soft_row(template.len(), part_range(part), &template, &vec3(l.target))
        })
        .collect();

    let kp_matrix: Vec<Vec<f64>> = (0..SHAPE_DIM)
        .map(|i| {
            (0..SHAPE_DIM)
                .map(|j| if i == j { TRANSFER_DIAG[i] } else { 0.0 })
                .collect()
        })
        .collect();

    let body = BodyModel {
        template_vertices: template,
        shape_dirs,
        kinematic_tree: PARTS.iter().map(|p| p.parent).collect(),
        part_of,
        pivots: PARTS.iter().map(|p| vec3(p.pivot)).collect(),
        joint_regressor,
        landmark_regressor: landmark_regressor.clone(),
        kp_matrix,
    };
    body.validate()?;

    // Skeleton blocks: bone-shaped capsules inside the parts. Vertices are
    // stored relative to the block connection point; their shape directions
    // are the part fields divided by the transfer diagonal, so transferred
    // coefficients reproduce the body's displacements exactly.
    let mut blocks: Vec<BoneBlock> = BLOCKS
        .iter()
        .map(|spec| {
            let kind = PARTS[spec.part].kind;
            let cp = vec3(spec.cp);
            let world = sample_capsule(
                &mut rng,
                vec3(spec.seg_a),
                vec3(spec.seg_b),
                spec.radius,
                size.block_verts,
            );
            let dirs = world
                .iter()
                .map(|w| {
                    (0..SHAPE_DIM)
                        .map(|k| shape_field(kind, k, w) / TRANSFER_DIAG[k])
                        .collect::<Vec<_>>()
                })
                .collect();
            BoneBlock {
                name: spec.name.to_string(),
                cp,
                vertices: world.iter().map(|w| w - cp).collect(),
                shape_dirs: dirs,
                mps: Vec::new(),
            }
        })
        .collect();

    // One match-point pair per seam: the parent-side point sits where the
    // child's connection point rests; the child-side point is its own
    // connection point. Match points carry no shape directions, so seam gaps
    // and clavicle offsets are shape-invariant.
    let mut seams = Vec::with_capacity(SEAMS.len());
    let mut child_mp = vec![usize::MAX; blocks.len()];
    for (si, &(a, b)) in SEAMS.iter().enumerate() {
        let local_a = blocks[b].cp - blocks[a].cp;
        blocks[a].mps.push(MatchPoint {
            seam: si,
            local: local_a,
        });
        let ia = blocks[a].mps.len() - 1;
        blocks[b].mps.push(MatchPoint {
            seam: si,
            local: Vector3::zeros(),
        });
        let ib = blocks[b].mps.len() - 1;
        child_mp[b] = ib;
        seams.push(Seam {
            a,
            b,
            pairs: vec![(ia, ib)],
            rest_gap: 0.0,
        });
    }

    let clavicle_refs = CLAVICLES
        .iter()
        .map(|&(clav, thorax)| ClavicleRef {
            clavicle: clav,
            thorax,
            mp: child_mp[clav],
            offset: Vector3::zeros(),
        })
        .collect();

    let landmarks = LANDMARKS
        .iter()
        .zip(&landmark_regressor)
        .map(|(spec, row)| {
            // The rest position is whatever the body regresses to; deriving
            // the local offset and shape directions from that point keeps the
            // two models in exact correspondence.
            let q: Vector3<f64> = row
                .iter()
                .zip(&body.template_vertices)
                .map(|(w, v)| v * *w)
                .sum();
            let kind = PARTS[BLOCK_PART[spec.block]].kind;
            LandmarkDef {
                block: spec.block,
                local: q - blocks[spec.block].cp,
                shape_dirs: (0..SHAPE_DIM)
                    .map(|k| shape_field(kind, k, &q) / TRANSFER_DIAG[k])
                    .collect(),
            }
        })
        .collect();

    let mut skel = SkeletonModel {
        blocks,
        seams,
        clavicle_refs,
        beta_bounds: BetaBounds {
            min: vec![-1.8, -2.0, -1.9, -2.1],
            max: vec![2.2, 2.4, 2.1, 2.3],
        },
        landmarks,
    };

    // Freeze rest-state gaps and clavicle offsets from the same forward pass
    // the energies use, so the rest state scores exactly zero on both terms.
    let rest = crate::skeleton::rest_pose_model(&skel, &vec![0.0; SHAPE_DIM])?;
    let gaps = crate::skeleton::rest_seam_gaps(&skel, &rest);
    for (seam, gap) in skel.seams.iter_mut().zip(gaps) {
        seam.rest_gap = gap;
    }
    for r in &mut skel.clavicle_refs {
        let mp_world = rest.mp_world[r.clavicle][r.mp];
        r.offset = rest.rot[r.thorax].transpose() * (mp_world - rest.t[r.thorax]);
    }
    skel.validate()?;

    Ok((body, skel))
}

// ---------------------------------------------------------------------------
// Scene generation.
// ---------------------------------------------------------------------------

/// Spread of the body shape coefficients sampled by scenes (clipped to ±1).
const BETA_SPREAD: f64 = 0.4;

/// Seed streams so each consumer of a scene's seed draws independent noise.
const WARM_STREAM: u64 = 0x57A7_57A7;
const BODY_STREAM: u64 = 0xB0D7_B0D7;

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Place every block by its enclosing part's rigid transform and transfer the
/// body shape through the model's transfer matrix. For models built by
/// [`gen_models`] this closes all cross-part seams and clavicle references up
/// to roundoff and reproduces the body's landmark targets.
fn transport_state(
    body: &BodyModel,
    skel: &SkeletonModel,
    state: &BodyState,
) -> Result<SkeletonState> {
    if skel.n_blocks() != BLOCK_PART.len() || body.pivots.len() != PARTS.len() {
        return Err(Error::Scene(
            "transport requires the generated model pair (11 blocks in 10 parts)".into(),
        ));
    }
    let fk = body_forward(body, state)?;
    let beta_skel = kp_map(&body.kp_matrix, &state.beta_body);
    let mut t = Vec::with_capacity(skel.n_blocks());
    let mut r = Vec::with_capacity(skel.n_blocks());
    for (b, block) in skel.blocks.iter().enumerate() {
        let p = BLOCK_PART[b];
        t.push(fk.part_rot[p] * block.cp + fk.part_off[p]);
        r.push(Rotation::Quat(Quat::from_matrix(&fk.part_rot[p])));
    }
    Ok(SkeletonState {
        beta_skel,
        gamma: 0.0,
        t,
        r,
    })
}

/// Generate one scene: a sampled, posed body; its projected joints (with
/// optional 2D noise); and a polished ground-truth skeleton state.
///
/// The ground truth starts from the transported block placements and is
/// refined under the default [`EnergySpec`] with a long, aggressively decayed
/// schedule, so that ordinary fitting runs started at the ground truth cannot
/// improve on it. A final self-check verifies the ground truth still matches
/// the body's landmark targets to within 0.1 mm.
pub fn gen_scene(
    body: &BodyModel,
    skel: &SkeletonModel,
    seed: u64,
    noise: &NoiseSpec,
) -> Result<Scene> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let beta_dist = Normal::new(0.0, BETA_SPREAD).unwrap();
    let beta_body: Vec<f64> = (0..body.shape_dim())
        .map(|_| beta_dist.sample(&mut rng).clamp(-1.0, 1.0))
        .collect();

    let pose: Vec<Rotation> = PARTS
        .iter()
        .map(|spec| {
            let axis = random_unit(&mut rng);
            let angle = Normal::new(0.0, spec.pose_scale).unwrap().sample(&mut rng);
            Rotation::Quat(AxisAngle(axis * angle).to_quat())
        })
        .collect();

    let root = Vector3::new(
        rng.gen_range(-0.15..0.15),
        rng.gen_range(-0.15..0.15),
        rng.gen_range(-0.15..0.15),
    );
    let cam = Camera {
        s: rng.gen_range(0.9..1.15),
        tx: rng.gen_range(-0.08..0.08),
        ty: rng.gen_range(-0.08..0.08),
    };
    let body_state = BodyState {
        beta_body,
        pose,
        root,
        cam,
    };

    let fk = body_forward(body, &body_state)?;
    let joints = body_joints(body, &fk.vertices);
    let targets = body_landmarks(body, &fk.vertices);

    let mut j_gt: Vec<Keypoint> = joints
        .iter()
        .map(|x| Keypoint {
            uv: project(x, &cam),
            conf: 1.0,
        })
        .collect();
    if noise.sigma_2d > 0.0 {
        let d = Normal::new(0.0, noise.sigma_2d).unwrap();
        for kp in &mut j_gt {
            kp.uv.x += d.sample(&mut rng);
            kp.uv.y += d.sample(&mut rng);
        }
    }

    let init = transport_state(body, skel, &body_state)?;
    let constraints = build_constraints(skel, GEN_CT_PAIRS)?;
    let polish = OptimizerConfig {
        rounds: 20,
        steps_per_round: 150,
        lr: 3e-3,
        decay: 0.7,
        ..OptimizerConfig::for_mode(Mode::Osf)
    };
    let fit = fit_skeleton_to_targets(
        skel,
        &targets,
        &init,
        &body_state.beta_body,
        &body.kp_matrix,
        &EnergySpec::default(),
        &constraints,
        &polish,
    )?;
    if !fit.report.converged {
        return Err(Error::Generation(format!(
            "ground-truth polish did not converge for seed {seed}"
        )));
    }
    let posed = skeleton_forward(skel, &fit.state)?;
    let lms = skeleton_landmarks(skel, &posed)?;
    let resid = d_mean(&lms, &targets)?;
    if resid > SELF_CHECK_TOL {
        return Err(Error::Generation(format!(
            "ground-truth landmark residual {resid:.2e} exceeds {SELF_CHECK_TOL:.0e} for seed {seed}"
        )));
    }

    Ok(Scene {
        seed,
        model: String::new(),
        noise: *noise,
        j_gt,
        landmark_targets: targets,
        body: Some(body_state),
        skeleton_gt: Some(fit.state),
    })
}

/// Perturb the scene's ground-truth skeleton state into a start state.
///
/// Zero noise returns the ground truth bitwise. Finite noise adds Gaussian
/// offsets to block positions (`sigma_t`, meters), composes random-axis
/// rotations (`sigma_r`, degrees), and jitters shape (`sigma_beta`). The cold
/// sentinel draws positions uniformly over the posed body's bounding box with
/// uniformly random orientations.
pub fn warm_start(body: &BodyModel, scene: &Scene, noise: &NoiseSpec) -> Result<SkeletonState> {
    noise.validate()?;
    let gt = scene
        .skeleton_gt
        .as_ref()
        .ok_or_else(|| Error::Scene("scene carries no ground-truth skeleton state".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ WARM_STREAM);
    let mut state = gt.clone();

    if noise.is_cold() {
        let body_state = scene
            .body
            .as_ref()
            .ok_or_else(|| Error::Scene("cold starts need the scene's body state".into()))?;
        let fk = body_forward(body, body_state)?;
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &fk.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        for b in 0..state.t.len() {
            state.t[b] = Vector3::new(
                rng.gen_range(lo.x..hi.x),
                rng.gen_range(lo.y..hi.y),
                rng.gen_range(lo.z..hi.z),
            );
            let normal = Normal::new(0.0, 1.0).unwrap();
            let q = loop {
                let q = Quat::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                );
                if q.norm() > 1e-6 {
                    break q;
                }
            };
            state.r[b] = Rotation::Quat(q).to_chart(state.r[b].chart())?;
        }
    } else {
        if noise.sigma_t > 0.0 {
            let d = Normal::new(0.0, noise.sigma_t).unwrap();
            for t in &mut state.t {
                *t += Vector3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng));
            }
        }
        if noise.sigma_r > 0.0 {
            let d = Normal::new(0.0, noise.sigma_r.to_radians()).unwrap();
            for r in &mut state.r {
                let axis = random_unit(&mut rng);
                let delta = Rotation::Quat(AxisAngle(axis * d.sample(&mut rng)).to_quat());
                *r = delta.compose(r)?.to_chart(r.chart())?;
            }
        }
    }
    if noise.sigma_beta > 0.0 {
        let d = Normal::new(0.0, noise.sigma_beta).unwrap();
        for b in &mut state.beta_skel {
            *b += d.sample(&mut rng);
        }
    }
    Ok(state)
}

/// Perturb the scene's ground-truth body state into a start state for the
/// outer body fit. `sigma_t` jitters the root and camera, `sigma_r` (degrees)
/// the per-part orientations, `sigma_beta` the shape. Zero noise returns the
/// ground truth bitwise; the cold sentinel is not supported here.
pub fn body_warm_start(scene: &Scene, noise: &NoiseSpec) -> Result<BodyState> {
    noise.validate()?;
    if noise.is_cold() {
        return Err(Error::Scene(
            "cold starts are not defined for the body fit".into(),
        ));
    }
    let gt = scene
        .body
        .as_ref()
        .ok_or_else(|| Error::Scene("scene carries no ground-truth body state".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ BODY_STREAM);
    let mut state = gt.clone();

    if noise.sigma_t > 0.0 {
        let d = Normal::new(0.0, noise.sigma_t).unwrap();
        state.root += Vector3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng));
        state.cam.s += d.sample(&mut rng);
        state.cam.tx += d.sample(&mut rng);
        state.cam.ty += d.sample(&mut rng);
    }
    if noise.sigma_r > 0.0 {
        let d = Normal::new(0.0, noise.sigma_r.to_radians()).unwrap();
        for r in &mut state.pose {
            let axis = random_unit(&mut rng);
            let delta = Rotation::Quat(AxisAngle(axis * d.sample(&mut rng)).to_quat());
            *r = delta.compose(r)?.to_chart(r.chart())?;
        }
    }
    if noise.sigma_beta > 0.0 {
        let d = Normal::new(0.0, noise.sigma_beta).unwrap();
        for b in &mut state.beta_body {
            *b += d.sample(&mut rng);
        }
    }
    Ok(state)
}
