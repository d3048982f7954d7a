//! Hand-built miniature models for unit tests: a three-block skeleton chain
//! (thorax, clavicle, humerus) and a three-part body. Small enough to reason
//! about by hand, complete enough to exercise every energy term.

use nalgebra::Vector3;

use crate::body::BodyModel;
use crate::skeleton::{
    rest_pose_model, rest_seam_gaps, BetaBounds, BoneBlock, ClavicleRef, LandmarkDef, MatchPoint,
    Seam, SkeletonModel,
};

/// Thorax + clavicle + humerus, two seams, one clavicle anchor, three
/// landmarks, two shape coefficients.
pub fn toy_skeleton() -> SkeletonModel {
    let thorax_cp = Vector3::new(0.0, 1.2, 0.0);
    let clav_cp = Vector3::new(0.02, 1.4, 0.0);
    let hum_cp = Vector3::new(0.2, 1.4, 0.0);

    let stretch = |p: &Vector3<f64>| Vector3::new(0.0, 0.1 * p.y, 0.0);
    let widen = |p: &Vector3<f64>| Vector3::new(0.1 * p.x, 0.0, 0.1 * p.z);

    let thorax_verts = vec![
        Vector3::new(0.1, 0.0, 0.0),
        Vector3::new(-0.1, 0.0, 0.0),
        Vector3::new(0.0, 0.15, 0.0),
        Vector3::new(0.0, -0.15, 0.0),
        Vector3::new(0.0, 0.0, 0.08),
        Vector3::new(0.0, 0.0, -0.08),
    ];
    let hum_verts = vec![
        Vector3::new(0.0, 0.0, 0.02),
        Vector3::new(0.08, 0.0, -0.02),
        Vector3::new(0.16, 0.01, 0.0),
        Vector3::new(0.24, -0.01, 0.0),
        Vector3::new(0.3, 0.0, 0.0),
    ];
    let clav_verts = vec![
        Vector3::new(0.0, 0.005, 0.0),
        Vector3::new(0.06, -0.005, 0.0),
        Vector3::new(0.12, 0.005, 0.0),
        Vector3::new(0.18, -0.005, 0.0),
    ];

    let blocks = vec![
        BoneBlock {
            name: "thorax".into(),
            cp: thorax_cp,
            shape_dirs: thorax_verts
                .iter()
                .map(|v| vec![stretch(v), widen(v)])
                .collect(),
            vertices: thorax_verts,
            mps: vec![MatchPoint {
                seam: 0,
                local: clav_cp - thorax_cp,
            }],
        },
        BoneBlock {
            name: "clavL".into(),
            cp: clav_cp,
            shape_dirs: clav_verts
                .iter()
                .map(|_| vec![Vector3::zeros(), Vector3::zeros()])
                .collect(),
            vertices: clav_verts,
            mps: vec![
                MatchPoint {
                    seam: 0,
                    local: Vector3::zeros(),
                },
                MatchPoint {
                    seam: 1,
                    local: hum_cp - clav_cp,
                },
            ],
        },
        BoneBlock {
            name: "humL".into(),
            cp: hum_cp,
            shape_dirs: hum_verts
                .iter()
                .map(|v| vec![Vector3::zeros(), Vector3::new(0.12 * v.x, 0.0, 0.0)])
                .collect(),
            vertices: hum_verts,
            mps: vec![MatchPoint {
                seam: 1,
                local: Vector3::zeros(),
            }],
        },
    ];

    let mut model = SkeletonModel {
        blocks,
        seams: vec![
            Seam {
                a: 0,
                b: 1,
                pairs: vec![(0, 0)],
                rest_gap: 0.0,
            },
            Seam {
                a: 1,
                b: 2,
                pairs: vec![(1, 0)],
                rest_gap: 0.0,
            },
        ],
        clavicle_refs: vec![ClavicleRef {
            clavicle: 1,
            thorax: 0,
            mp: 0,
            offset: clav_cp - thorax_cp,
        }],
        beta_bounds: BetaBounds {
            min: vec![-2.0, -2.0],
            max: vec![3.0, 3.0],
        },
        landmarks: vec![
            LandmarkDef {
                block: 0,
                local: Vector3::new(0.0, 0.12, 0.0),
                shape_dirs: vec![Vector3::new(0.0, 0.012, 0.0), Vector3::zeros()],
            },
            LandmarkDef {
                block: 0,
                local: Vector3::new(0.0, -0.12, 0.0),
                shape_dirs: vec![Vector3::new(0.0, -0.012, 0.0), Vector3::zeros()],
            },
            LandmarkDef {
                block: 2,
                local: Vector3::new(0.28, 0.0, 0.0),
                shape_dirs: vec![Vector3::zeros(), Vector3::new(0.034, 0.0, 0.0)],
            },
        ],
    };

    // Freeze the template's actual seam gaps as the declared rest gaps, the
    // same way the generator does.
    let rest = rest_pose_model(&model, &vec![0.0; 2]).unwrap();
    let gaps = rest_seam_gaps(&model, &rest);
    for (seam, gap) in model.seams.iter_mut().zip(gaps) {
        seam.rest_gap = gap;
    }
    model
}

/// Three-part body chain with five regressed joints and three landmarks.
pub fn toy_body() -> BodyModel {
    let template = vec![
        Vector3::new(0.0, 0.9, 0.0),
        Vector3::new(0.1, 1.0, 0.05),
        Vector3::new(-0.1, 1.0, -0.05),
        Vector3::new(0.0, 1.25, 0.0),
        Vector3::new(0.08, 1.35, 0.0),
        Vector3::new(-0.08, 1.35, 0.0),
        Vector3::new(0.0, 1.55, 0.05),
        Vector3::new(0.0, 1.65, -0.05),
    ];
    let shape_dirs = template
        .iter()
        .map(|v| {
            vec![
                Vector3::new(0.0, 0.05 * (v.y - 0.9), 0.0),
                Vector3::new(0.04 * v.x, 0.0, 0.04 * v.z),
            ]
        })
        .collect();
    BodyModel {
        template_vertices: template,
        shape_dirs,
        kinematic_tree: vec![-1, 0, 1],
        part_of: vec![0, 0, 0, 1, 1, 1, 2, 2],
        pivots: vec![
            Vector3::new(0.0, 0.95, 0.0),
            Vector3::new(0.0, 1.2, 0.0),
            Vector3::new(0.0, 1.5, 0.0),
        ],
        joint_regressor: vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
        ],
        landmark_regressor: vec![
            vec![0.25, 0.375, 0.375, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.4, 0.3, 0.3, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
        ],
        kp_matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    }
}
