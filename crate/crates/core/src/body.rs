//! Parametric body surface: capsule-sampled vertices posed by a per-part
//! rigid kinematic tree (no blend skinning), with linear shape blendshapes.
//!
//! The body plays two roles: its regressed 3D landmarks are the targets the
//! skeleton is fitted to, and its regressed joints are what the 2D keypoint
//! reprojection term observes.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Camera, Chart, Rotation, RotationJacobian};

/// Tolerance for "regressor rows sum to one".
pub const REGRESSOR_ROW_TOL: f64 = 1e-9;

/// Surface model plus the linear landmark/joint regressors and the
/// body-shape -> skeleton-shape transfer matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BodyModel {
    /// Rest-pose vertex positions, meters. `V x 3`.
    pub template_vertices: Vec<Vector3<f64>>,
    /// Per-vertex displacement per unit shape coefficient. `V x |beta| x 3`.
    pub shape_dirs: Vec<Vec<Vector3<f64>>>,
    /// Parent index per part, `-1` for the root.
    #[serde(rename = "tree")]
    pub kinematic_tree: Vec<i32>,
    /// Owning part per vertex.
    #[serde(rename = "partOf")]
    pub part_of: Vec<usize>,
    /// Rotation pivot per part, in rest coordinates.
    pub pivots: Vec<Vector3<f64>>,
    /// Row-stochastic `J x V` matrix regressing 3D joints from vertices.
    pub joint_regressor: Vec<Vec<f64>>,
    /// Row-stochastic `L x V` matrix regressing skeleton-target landmarks.
    pub landmark_regressor: Vec<Vec<f64>>,
    /// Shape-transfer matrix mapping body betas to skeleton betas.
    pub kp_matrix: Vec<Vec<f64>>,
}

impl BodyModel {
    pub fn n_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn n_parts(&self) -> usize {
        self.kinematic_tree.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joint_regressor.len()
    }

    pub fn n_landmarks(&self) -> usize {
        self.landmark_regressor.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_dirs.first().map_or(0, |d| d.len())
    }

    /// Structural checks run after loading a model from disk.
    pub fn validate(&self) -> Result<()> {
        let v = self.n_vertices();
        let parts = self.n_parts();
        if self.shape_dirs.len() != v {
            return Err(Error::Model(format!(
                "shapeDirs has {} rows, expected one per vertex ({v})",
                self.shape_dirs.len()
            )));
        }
        let sd = self.shape_dim();
        if self.shape_dirs.iter().any(|d| d.len() != sd) {
            return Err(Error::Model("ragged shapeDirs rows".into()));
        }
        if self.part_of.len() != v {
            return Err(Error::Model("partOf length != vertex count".into()));
        }
        if let Some(&bad) = self.part_of.iter().find(|&&p| p >= parts) {
            return Err(Error::Model(format!(
                "partOf references part {bad} of {parts}"
            )));
        }
        if self.pivots.len() != parts {
            return Err(Error::Model("pivots length != part count".into()));
        }
        // The tree must be rooted and acyclic: exactly one -1, every walk
        // terminates at it.
        let roots = self.kinematic_tree.iter().filter(|&&p| p == -1).count();
        if roots != 1 {
            return Err(Error::Model(format!("tree has {roots} roots, expected 1")));
        }
        for start in 0..parts {
            let mut cur = start;
            for _ in 0..=parts {
                let parent = self.kinematic_tree[cur];
                if parent == -1 {
                    break;
                }
                if parent < 0 || parent as usize >= parts {
                    return Err(Error::Model(format!(
                        "part {cur} has invalid parent {parent}"
                    )));
                }
                cur = parent as usize;
                if cur == start {
                    return Err(Error::Model(format!("tree cycle through part {start}")));
                }
            }
        }
        for (name, reg) in [
            ("jointRegressor", &self.joint_regressor),
            ("landmarkRegressor", &self.landmark_regressor),
        ] {
            for (i, row) in reg.iter().enumerate() {
                if row.len() != v {
                    return Err(Error::Model(format!(
                        "{name} row {i} has {} entries, expected {v}",
                        row.len()
                    )));
                }
                if row.iter().any(|&w| w < 0.0) {
                    return Err(Error::Model(format!("{name} row {i} has negative weights")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > REGRESSOR_ROW_TOL {
                    return Err(Error::Model(format!(
                        "{name} row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        if self.kp_matrix.iter().any(|row| row.len() != sd) {
            return Err(Error::Model(
                "kpMatrix column count != body shape dim".into(),
            ));
        }
        Ok(())
    }

    /// Parent chain of `part` from the root down to the part itself.
    pub fn ancestor_chain(&self, part: usize) -> Vec<usize> {
        let mut chain = vec![part];
        let mut cur = part;
        while self.kinematic_tree[cur] >= 0 {
            cur = self.kinematic_tree[cur] as usize;
            chain.push(cur);
        }
        chain.reverse();
        chain
    }
}

/// Pose and shape of a body instance, plus the shared camera.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BodyState {
    pub beta_body: Vec<f64>,
    /// One rotation per part, applied about that part's pivot.
    pub pose: Vec<Rotation>,
    /// Root translation, meters.
    pub root: Vector3<f64>,
    pub cam: Camera,
}

impl BodyState {
    /// Zero shape, identity pose, unit camera.
    pub fn neutral(model: &BodyModel, chart: Chart) -> BodyState {
        BodyState {
            beta_body: vec![0.0; model.shape_dim()],
            pose: vec![Rotation::identity(chart); model.n_parts()],
            root: Vector3::zeros(),
            cam: Camera::identity(),
        }
    }

    /// Re-express every pose rotation in `chart`.
    pub fn to_chart(&self, chart: Chart) -> Result<BodyState> {
        let mut out = self.clone();
        for r in &mut out.pose {
            *r = r.to_chart(chart)?;
        }
        Ok(out)
    }
}

/// Posed body: world vertices plus the per-part transforms and the cached
/// quantities needed to differentiate any world point with respect to the
/// pose parameters.
#[derive(Clone, Debug)]
pub struct BodyFk {
    pub vertices: Vec<Vector3<f64>>,
    /// World rotation `M_p` per part.
    pub part_rot: Vec<Matrix3<f64>>,
    /// World offset `o_p` per part: `x = M_p * v_rest + o_p`.
    pub part_off: Vec<Vector3<f64>>,
    /// World position of each part's pivot.
    pub pivot_world: Vec<Vector3<f64>>,
    /// `H[p][k]` maps `(x - pivot_world[p])` to `dx/d(pose[p][k])` for any
    /// world point `x` carried by `p` or one of its descendants.
    pub rot_grad: Vec<RotationJacobian>,
    /// Root-to-part chains, cached once.
    pub ancestors: Vec<Vec<usize>>,
}

impl BodyFk {
    /// `d(world point)/d(pose param k of part `anc`)` for a point `x` whose
    /// owning part has `anc` on its ancestor chain.
    pub fn point_rot_grad(&self, anc: usize, k: usize, x: &Vector3<f64>) -> Vector3<f64> {
        self.rot_grad[anc].mats[k] * (x - self.pivot_world[anc])
    }
}

/// Pose the body: shape the template, then walk the tree applying each
/// part's rotation about its pivot. Returns vertices and the transform
/// cache used for gradients.
pub fn body_forward(model: &BodyModel, state: &BodyState) -> Result<BodyFk> {
    let parts = model.n_parts();
    if state.pose.len() != parts {
        return Err(Error::Model(format!(
            "pose has {} rotations, model has {parts} parts",
            state.pose.len()
        )));
    }
    if state.beta_body.len() != model.shape_dim() {
        return Err(Error::Model(format!(
            "betaBody has {} coefficients, model has {}",
            state.beta_body.len(),
            model.shape_dim()
        )));
    }

    let mut part_rot = vec![Matrix3::identity(); parts];
    let mut part_off = vec![Vector3::zeros(); parts];
    let mut pivot_world = vec![Vector3::zeros(); parts];
    let mut rot_grad = Vec::with_capacity(parts);
    let mut ancestors = Vec::with_capacity(parts);

    // Parts are processed root-first along each chain; chains are short so
    // recomputing them is cheap and keeps evaluation order deterministic.
    for p in 0..parts {
        ancestors.push(model.ancestor_chain(p));
    }
    let mut order: Vec<usize> = (0..parts).collect();
    order.sort_by_key(|&p| ancestors[p].len());

    let mut grads: Vec<RotationJacobian> = vec![
        RotationJacobian {
            mats: [Matrix3::zeros(); 4],
            len: 0
        };
        parts
    ];
    for &p in &order {
        let (r, jac) = state.pose[p].matrix_jacobian()?;
        let pivot = model.pivots[p];
        let (m_par, o_par) = match model.kinematic_tree[p] {
            -1 => (Matrix3::identity(), state.root),
            parent => {
                let parent = parent as usize;
                (part_rot[parent], part_off[parent])
            }
        };
        part_rot[p] = m_par * r;
        part_off[p] = m_par * (pivot - r * pivot) + o_par;
        pivot_world[p] = o_par + m_par * pivot;
        let mut h = RotationJacobian {
            mats: [Matrix3::zeros(); 4],
            len: jac.len,
        };
        for k in 0..jac.len {
            h.mats[k] = m_par * jac.mats[k] * r.transpose() * m_par.transpose();
        }
        grads[p] = h;
    }
    rot_grad.extend(grads);

    let mut vertices = Vec::with_capacity(model.n_vertices());
    for (i, v) in model.template_vertices.iter().enumerate() {
        let mut rest = *v;
        for (k, d) in model.shape_dirs[i].iter().enumerate() {
            rest += d * state.beta_body[k];
        }
        let p = model.part_of[i];
        vertices.push(part_rot[p] * rest + part_off[p]);
    }

    Ok(BodyFk {
        vertices,
        part_rot,
        part_off,
        pivot_world,
        rot_grad,
        ancestors,
    })
}

fn regress(rows: &[Vec<f64>], vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    rows.iter()
        .map(|row| {
            let mut acc = Vector3::zeros();
            for (w, v) in row.iter().zip(vertices) {
                if *w != 0.0 {
                    acc += v * *w;
                }
            }
            acc
        })
        .collect()
}

/// 3D joints regressed from posed vertices.
pub fn body_joints(model: &BodyModel, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    regress(&model.joint_regressor, vertices)
}

/// Skeleton-target landmarks regressed from posed vertices.
pub fn body_landmarks(model: &BodyModel, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    regress(&model.landmark_regressor, vertices)
}

/// Map body shape coefficients to regressed skeleton shape coefficients.
pub fn kp_map(kp_matrix: &[Vec<f64>], beta_body: &[f64]) -> Vec<f64> {
    kp_matrix
        .iter()
        .map(|row| row.iter().zip(beta_body).map(|(a, b)| a * b).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::AxisAngle;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three-part chain: root with two vertices, child, grandchild.
    fn toy_model() -> BodyModel {
        BodyModel {
            template_vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(0.1, 0.1, 0.0),
                Vector3::new(0.0, 0.5, 0.0),
                Vector3::new(0.1, 0.9, 0.1),
            ],
            shape_dirs: vec![
                vec![Vector3::new(0.0, 0.1, 0.0)],
                vec![Vector3::new(0.0, 0.1, 0.0)],
                vec![Vector3::new(0.0, 0.2, 0.0)],
                vec![Vector3::new(0.0, 0.3, 0.0)],
            ],
            kinematic_tree: vec![-1, 0, 1],
            part_of: vec![0, 0, 1, 2],
            pivots: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(0.0, 0.4, 0.0),
                Vector3::new(0.0, 0.8, 0.0),
            ],
            joint_regressor: vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]],
            landmark_regressor: vec![vec![0.0, 0.0, 0.25, 0.75]],
            kp_matrix: vec![vec![1.0]],
        }
    }

    fn random_state(model: &BodyModel, rng: &mut ChaCha8Rng) -> BodyState {
        BodyState {
            beta_body: (0..model.shape_dim())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
            pose: (0..model.n_parts())
                .map(|_| {
                    Rotation::Rodrigues(AxisAngle::new(
                        rng.gen_range(-0.8..0.8),
                        rng.gen_range(-0.8..0.8),
                        rng.gen_range(-0.8..0.8),
                    ))
                })
                .collect(),
            root: Vector3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ),
            cam: Camera::identity(),
        }
    }

    /// Independent forward pass: recursively apply each ancestor's pivot
    /// rotation from the root inward, one vertex at a time.
    fn oracle_vertex(model: &BodyModel, state: &BodyState, vi: usize) -> Vector3<f64> {
        let mut p = model.template_vertices[vi];
        for (k, d) in model.shape_dirs[vi].iter().enumerate() {
            p += d * state.beta_body[k];
        }
        let chain = model.ancestor_chain(model.part_of[vi]);
        for &part in chain.iter().rev() {
            let r = state.pose[part].matrix().unwrap();
            let pv = model.pivots[part];
            p = pv + r * (p - pv);
        }
        p + state.root
    }

    #[test]
    fn validates() {
        toy_model().validate().unwrap();
    }

    #[test]
    fn rejects_bad_regressor_row() {
        let mut m = toy_model();
        m.joint_regressor[0][0] = 0.75;
        assert!(matches!(m.validate(), Err(Error::Model(_))));
    }

    #[test]
    fn rejects_cycle() {
        let mut m = toy_model();
        m.kinematic_tree = vec![2, 0, 1];
        assert!(matches!(m.validate(), Err(Error::Model(_))));
    }

    #[test]
    fn identity_pose_returns_template_plus_root() {
        let model = toy_model();
        let mut state = BodyState::neutral(&model, Chart::Quat);
        state.root = Vector3::new(0.2, 0.0, -0.1);
        let fk = body_forward(&model, &state).unwrap();
        for (out, tpl) in fk.vertices.iter().zip(&model.template_vertices) {
            assert_relative_eq!((out - tpl - state.root).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_matches_recursive_oracle() {
        let model = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let state = random_state(&model, &mut rng);
            let fk = body_forward(&model, &state).unwrap();
            for vi in 0..model.n_vertices() {
                let expect = oracle_vertex(&model, &state, vi);
                assert_relative_eq!((fk.vertices[vi] - expect).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn root_motion_moves_everything_rigidly() {
        let model = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let state = random_state(&model, &mut rng);
        let base = body_forward(&model, &state).unwrap();

        let mut shifted = state.clone();
        let d = Vector3::new(0.3, -0.2, 0.5);
        shifted.root += d;
        let moved = body_forward(&model, &shifted).unwrap();
        for (a, b) in base.vertices.iter().zip(&moved.vertices) {
            assert_relative_eq!((b - a - d).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn regressed_points_commute_with_rigid_motion() {
        // Row-stochastic rows are affine-equivariant: regressing then moving
        // equals moving then regressing.
        let model = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let state = random_state(&model, &mut rng);
        let fk = body_forward(&model, &state).unwrap();
        let r = AxisAngle::new(0.3, -0.1, 0.7).to_matrix();
        let t = Vector3::new(0.1, 0.2, -0.3);

        let moved: Vec<Vector3<f64>> = fk.vertices.iter().map(|v| r * v + t).collect();
        let lm_then_move: Vec<Vector3<f64>> = body_landmarks(&model, &fk.vertices)
            .iter()
            .map(|v| r * v + t)
            .collect();
        let move_then_lm = body_landmarks(&model, &moved);
        for (a, b) in lm_then_move.iter().zip(&move_then_lm) {
            assert_relative_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kp_identity_copies_betas() {
        let kp = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ];
        assert_eq!(kp_map(&kp, &[0.3, -0.7, 1.1]), vec![0.3, -0.7, 1.1, 0.0]);
    }

    #[test]
    fn vertex_rot_grads_match_finite_differences() {
        let model = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let state = random_state(&model, &mut rng);
        let fk = body_forward(&model, &state).unwrap();
        let h = 1e-6;
        for vi in 0..model.n_vertices() {
            let part = model.part_of[vi];
            for &anc in &fk.ancestors[part] {
                let dof = state.pose[anc].dof();
                for k in 0..dof {
                    let mut params = [0.0; 4];
                    state.pose[anc].write_params(&mut params);
                    let mut plus = state.clone();
                    let mut minus = state.clone();
                    let mut pp = params;
                    pp[k] += h;
                    let mut pm = params;
                    pm[k] -= h;
                    plus.pose[anc] = Rotation::from_params(state.pose[anc].chart(), &pp[..dof]);
                    minus.pose[anc] = Rotation::from_params(state.pose[anc].chart(), &pm[..dof]);
                    let fd = (body_forward(&model, &plus).unwrap().vertices[vi]
                        - body_forward(&model, &minus).unwrap().vertices[vi])
                        / (2.0 * h);
                    let analytic = fk.point_rot_grad(anc, k, &fk.vertices[vi]);
                    assert_relative_eq!((fd - analytic).norm(), 0.0, epsilon = 1e-6);
                }
            }
        }
    }
}
