//! Multi-block skeleton: each bone block carries its own coordinate frame,
//! posed by a per-block rigid transform, with a shared low-dimensional shape
//! space entering through per-vertex blendshape offsets.
//!
//! Conventions that the rest of the crate leans on:
//!
//! * Block vertices and landmark anchors are stored *block-local*; a block's
//!   control point (`cp`) is the local origin, and the `cp` field records
//!   where that origin sits in the model frame at rest. The rest pose is
//!   therefore the state `t = cp, r = identity`.
//! * Match points and control points are shape-invariant local positions;
//!   vertices and landmark anchors displace linearly with the shape
//!   coefficients. This is what lets the seam and clavicle terms evaluate to
//!   exactly zero at the shaped rest pose.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Chart, Rotation, RotationJacobian};

/// A seam point on a block, matched with a partner on an adjacent block.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchPoint {
    /// Index of the seam this point belongs to.
    pub seam: usize,
    /// Block-local position; unaffected by shape.
    pub local: Vector3<f64>,
}

/// One rigid skeletal piece.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoneBlock {
    pub name: String,
    /// Rest placement of the block origin (the control point) in the model
    /// frame. Block-local coordinates are relative to this point.
    pub cp: Vector3<f64>,
    /// Block-local rest vertices.
    pub vertices: Vec<Vector3<f64>>,
    /// Per-vertex displacement per unit shape coefficient.
    pub shape_dirs: Vec<Vec<Vector3<f64>>>,
    /// Match points stitched to neighboring blocks.
    pub mps: Vec<MatchPoint>,
}

/// A stitching seam between two blocks: pairs of match-point indices that
/// should sit `rest_gap` apart.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Seam {
    pub a: usize,
    pub b: usize,
    /// `(mp index in a, mp index in b)` pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Separation of each pair at the rest pose, meters.
    pub rest_gap: f64,
}

/// Anchors one clavicle's proximal match point in the thorax frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClavicleRef {
    /// Clavicle block index.
    pub clavicle: usize,
    /// Thorax block index the offset is expressed in.
    pub thorax: usize,
    /// Which of the clavicle's match points is the proximal one.
    pub mp: usize,
    /// Rest offset of that match point in the thorax frame.
    pub offset: Vector3<f64>,
}

/// A named anatomical point carried by one block.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LandmarkDef {
    pub block: usize,
    /// Block-local anchor at zero shape.
    pub local: Vector3<f64>,
    /// Anchor displacement per unit shape coefficient.
    pub shape_dirs: Vec<Vector3<f64>>,
}

/// Componentwise shape-coefficient box.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BetaBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// The rest-pose skeleton template plus everything the energies reference:
/// seams, clavicle anchors, shape bounds, landmark definitions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SkeletonModel {
    pub blocks: Vec<BoneBlock>,
    pub seams: Vec<Seam>,
    pub clavicle_refs: Vec<ClavicleRef>,
    pub beta_bounds: BetaBounds,
    pub landmarks: Vec<LandmarkDef>,
}

impl SkeletonModel {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.beta_bounds.min.len()
    }

    pub fn n_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.blocks.iter().map(|b| b.vertices.len()).sum()
    }

    /// Midpoint of the shape box, the direction the global shape offset
    /// moves along.
    pub fn beta_mid(&self) -> Vec<f64> {
        self.beta_bounds
            .min
            .iter()
            .zip(&self.beta_bounds.max)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Structural checks run after loading a model from disk.
    pub fn validate(&self) -> Result<()> {
        let nb = self.n_blocks();
        if nb == 0 {
            return Err(Error::Model("skeleton has no blocks".into()));
        }
        let sd = self.shape_dim();
        if self.beta_bounds.max.len() != sd {
            return Err(Error::Model("betaBounds min/max length mismatch".into()));
        }
        if self
            .beta_bounds
            .min
            .iter()
            .zip(&self.beta_bounds.max)
            .any(|(lo, hi)| lo > hi)
        {
            return Err(Error::Model("betaBounds min exceeds max".into()));
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            if block.shape_dirs.len() != block.vertices.len() {
                return Err(Error::Model(format!(
                    "block {bi} shapeDirs rows != vertex count"
                )));
            }
            if block.shape_dirs.iter().any(|d| d.len() != sd) {
                return Err(Error::Model(format!(
                    "block {bi} shapeDirs width != shape dim {sd}"
                )));
            }
            for mp in &block.mps {
                if mp.seam >= self.seams.len() {
                    return Err(Error::Model(format!(
                        "block {bi} mp references seam {}",
                        mp.seam
                    )));
                }
            }
        }
        // Each match point must be referenced by exactly one seam, and that
        // seam must be the one the point names.
        let mut refs: Vec<Vec<usize>> = self.blocks.iter().map(|b| vec![0; b.mps.len()]).collect();
        for (si, seam) in self.seams.iter().enumerate() {
            if seam.a >= nb || seam.b >= nb || seam.a == seam.b {
                return Err(Error::Model(format!("seam {si} joins invalid blocks")));
            }
            if seam.rest_gap < 0.0 {
                return Err(Error::Model(format!("seam {si} has negative rest gap")));
            }
            for &(ia, ib) in &seam.pairs {
                for (block, idx) in [(seam.a, ia), (seam.b, ib)] {
                    let mps = &self.blocks[block].mps;
                    if idx >= mps.len() {
                        return Err(Error::Model(format!(
                            "seam {si} references mp {idx} of block {block}"
                        )));
                    }
                    if mps[idx].seam != si {
                        return Err(Error::Model(format!(
                            "block {block} mp {idx} names seam {} but is paired by seam {si}",
                            mps[idx].seam
                        )));
                    }
                    refs[block][idx] += 1;
                }
            }
        }
        for (bi, counts) in refs.iter().enumerate() {
            if let Some(mi) = counts.iter().position(|&c| c != 1) {
                return Err(Error::Model(format!(
                    "block {bi} mp {mi} referenced by {} seam pairs, expected 1",
                    counts[mi]
                )));
            }
        }
        // The seam graph must connect every block.
        let mut seen = vec![false; nb];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(cur) = stack.pop() {
            for seam in &self.seams {
                for (x, y) in [(seam.a, seam.b), (seam.b, seam.a)] {
                    if x == cur && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        if let Some(lonely) = seen.iter().position(|&s| !s) {
            return Err(Error::Model(format!(
                "block {lonely} unreachable through seams"
            )));
        }
        for (ci, cr) in self.clavicle_refs.iter().enumerate() {
            if cr.clavicle >= nb || cr.thorax >= nb {
                return Err(Error::Model(format!(
                    "clavicleRef {ci} names invalid blocks"
                )));
            }
            if cr.mp >= self.blocks[cr.clavicle].mps.len() {
                return Err(Error::Model(format!(
                    "clavicleRef {ci} names invalid mp {}",
                    cr.mp
                )));
            }
        }
        for (li, lm) in self.landmarks.iter().enumerate() {
            if lm.block >= nb {
                return Err(Error::Model(format!(
                    "landmark {li} references block {}",
                    lm.block
                )));
            }
            if lm.shape_dirs.len() != sd {
                return Err(Error::Model(format!(
                    "landmark {li} shapeDirs width != {sd}"
                )));
            }
        }
        // Declared rest gaps must match the template's actual seam gaps.
        let rest = rest_pose_model(self, &vec![0.0; sd])?;
        for (si, (seam, gap)) in self
            .seams
            .iter()
            .zip(rest_seam_gaps(self, &rest))
            .enumerate()
        {
            if (gap - seam.rest_gap).abs() > 1e-9 {
                return Err(Error::Model(format!(
                    "seam {si} declares rest gap {} but template gap is {gap}",
                    seam.rest_gap
                )));
            }
        }
        Ok(())
    }
}

/// Pose and shape of a skeleton instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SkeletonState {
    pub beta_skel: Vec<f64>,
    /// Global shape offset coefficient along the box midpoint.
    pub gamma: f64,
    /// Per-block translation, meters.
    pub t: Vec<Vector3<f64>>,
    /// Per-block rotation.
    pub r: Vec<Rotation>,
}

impl SkeletonState {
    /// The rest pose: zero shape, every block at its template placement.
    pub fn rest(model: &SkeletonModel, chart: Chart) -> SkeletonState {
        SkeletonState {
            beta_skel: vec![0.0; model.shape_dim()],
            gamma: 0.0,
            t: model.blocks.iter().map(|b| b.cp).collect(),
            r: vec![Rotation::identity(chart); model.n_blocks()],
        }
    }

    /// Re-express every block rotation in `chart`.
    pub fn to_chart(&self, chart: Chart) -> Result<SkeletonState> {
        let mut out = self.clone();
        for r in &mut out.r {
            *r = r.to_chart(chart)?;
        }
        Ok(out)
    }

    pub fn validate_for(&self, model: &SkeletonModel) -> Result<()> {
        if self.beta_skel.len() != model.shape_dim() {
            return Err(Error::Model(format!(
                "state has {} shape coefficients, model has {}",
                self.beta_skel.len(),
                model.shape_dim()
            )));
        }
        if self.t.len() != model.n_blocks() || self.r.len() != model.n_blocks() {
            return Err(Error::Model(format!(
                "state poses {} blocks, model has {}",
                self.t.len().max(self.r.len()),
                model.n_blocks()
            )));
        }
        Ok(())
    }
}

/// Optimization targets distilled from a converged fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SupervisionTarget {
    pub t_gt: Vec<Vector3<f64>>,
    pub r_gt: Vec<Rotation>,
    pub landmark_gt: Vec<Vector3<f64>>,
}

/// Shape coefficients after the global offset and box clamp.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EffectiveShape {
    pub beta: Vec<f64>,
    /// Which coefficients hit the box; their gradients vanish.
    pub clamped: Vec<bool>,
}

impl EffectiveShape {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|&c| c)
    }
}

/// Combine the regressed/optimized shape with the global offset
/// `gamma * (beta_min + beta_max) / 2`, clamped into the shape box.
pub fn effective_shape(model: &SkeletonModel, state: &SkeletonState) -> EffectiveShape {
    let mid = model.beta_mid();
    let mut beta = Vec::with_capacity(mid.len());
    let mut clamped = Vec::with_capacity(mid.len());
    for (k, m) in mid.iter().enumerate() {
        let raw = state.beta_skel[k] + state.gamma * m;
        let (lo, hi) = (model.beta_bounds.min[k], model.beta_bounds.max[k]);
        if raw < lo {
            beta.push(lo);
            clamped.push(true);
        } else if raw > hi {
            beta.push(hi);
            clamped.push(true);
        } else {
            beta.push(raw);
            clamped.push(false);
        }
    }
    EffectiveShape { beta, clamped }
}

/// A posed skeleton: world geometry plus the cached per-block rotation
/// matrices and their parameter Jacobians, which the energy gradients reuse.
#[derive(Clone, Debug)]
pub struct PosedSkeleton {
    pub beta: EffectiveShape,
    pub t: Vec<Vector3<f64>>,
    pub rot: Vec<Matrix3<f64>>,
    pub rot_jac: Vec<RotationJacobian>,
    /// Per-block world vertices.
    pub vertices: Vec<Vec<Vector3<f64>>>,
    /// Per-block world match points.
    pub mp_world: Vec<Vec<Vector3<f64>>>,
    /// World control points (= block translations).
    pub cp_world: Vec<Vector3<f64>>,
}

impl PosedSkeleton {
    /// Shaped block-local position of vertex `vi` of block `bi`.
    pub fn shaped_local(&self, model: &SkeletonModel, bi: usize, vi: usize) -> Vector3<f64> {
        let block = &model.blocks[bi];
        let mut p = block.vertices[vi];
        for (k, d) in block.shape_dirs[vi].iter().enumerate() {
            p += d * self.beta.beta[k];
        }
        p
    }
}

/// Pose every block: `x = R_b (v + Σ beta_k d_k) + t_b`.
pub fn skeleton_forward(model: &SkeletonModel, state: &SkeletonState) -> Result<PosedSkeleton> {
    state.validate_for(model)?;
    let beta = effective_shape(model, state);
    let nb = model.n_blocks();
    let mut rot = Vec::with_capacity(nb);
    let mut rot_jac = Vec::with_capacity(nb);
    let mut vertices = Vec::with_capacity(nb);
    let mut mp_world = Vec::with_capacity(nb);

    for (block, r) in model.blocks.iter().zip(&state.r) {
        let (m, jac) = r.matrix_jacobian()?;
        rot.push(m);
        rot_jac.push(jac);
        let t = state.t[rot.len() - 1];
        let mut verts = Vec::with_capacity(block.vertices.len());
        for (v, dirs) in block.vertices.iter().zip(&block.shape_dirs) {
            let mut p = *v;
            for (k, d) in dirs.iter().enumerate() {
                p += d * beta.beta[k];
            }
            verts.push(m * p + t);
        }
        vertices.push(verts);
        mp_world.push(block.mps.iter().map(|mp| m * mp.local + t).collect());
    }

    Ok(PosedSkeleton {
        beta,
        t: state.t.clone(),
        cp_world: state.t.clone(),
        rot,
        rot_jac,
        vertices,
        mp_world,
    })
}

/// World positions of the model's landmarks on an already-posed skeleton.
pub fn skeleton_landmarks(
    model: &SkeletonModel,
    posed: &PosedSkeleton,
) -> Result<Vec<Vector3<f64>>> {
    let mut out = Vec::with_capacity(model.landmarks.len());
    for lm in &model.landmarks {
        if lm.block >= posed.rot.len() {
            return Err(Error::Model(format!(
                "landmark references missing block {}",
                lm.block
            )));
        }
        let mut p = lm.local;
        for (k, d) in lm.shape_dirs.iter().enumerate() {
            p += d * posed.beta.beta[k];
        }
        out.push(posed.rot[lm.block] * p + posed.t[lm.block]);
    }
    Ok(out)
}

/// The skeleton at its rest placement with `beta_eff` applied — the reference
/// configuration the anatomical energies compare against. Computed through
/// `skeleton_forward` itself so repeated calls (and the energies' rest-state
/// comparisons) are bitwise reproducible.
pub fn rest_pose_model(model: &SkeletonModel, beta_eff: &[f64]) -> Result<PosedSkeleton> {
    let state = SkeletonState {
        beta_skel: beta_eff.to_vec(),
        gamma: 0.0,
        t: model.blocks.iter().map(|b| b.cp).collect(),
        r: vec![Rotation::identity(Chart::Quat); model.n_blocks()],
    };
    skeleton_forward(model, &state)
}

/// Seam-pair gaps (averaged per seam) of a posed skeleton.
pub fn rest_seam_gaps(model: &SkeletonModel, posed: &PosedSkeleton) -> Vec<f64> {
    model
        .seams
        .iter()
        .map(|seam| {
            let mut acc = 0.0;
            for &(ia, ib) in &seam.pairs {
                acc += (posed.mp_world[seam.a][ia] - posed.mp_world[seam.b][ib]).norm();
            }
            acc / seam.pairs.len().max(1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::toy_skeleton;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(model: &SkeletonModel, rng: &mut ChaCha8Rng) -> SkeletonState {
        SkeletonState {
            beta_skel: (0..model.shape_dim())
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
            gamma: rng.gen_range(-0.3..0.3),
            t: model
                .blocks
                .iter()
                .map(|b| {
                    b.cp + Vector3::new(
                        rng.gen_range(-0.2..0.2),
                        rng.gen_range(-0.2..0.2),
                        rng.gen_range(-0.2..0.2),
                    )
                })
                .collect(),
            r: (0..model.n_blocks())
                .map(|_| {
                    Rotation::Quat(crate::geom::Quat::new(
                        rng.gen_range(0.5..1.0),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                    ))
                })
                .collect(),
        }
    }

    #[test]
    fn toy_model_validates() {
        toy_skeleton().validate().unwrap();
    }

    #[test]
    fn effective_shape_gamma_zero_is_identity() {
        let model = toy_skeleton();
        let mut state = SkeletonState::rest(&model, Chart::Quat);
        state.beta_skel = vec![0.3, -0.2];
        let eff = effective_shape(&model, &state);
        assert_eq!(eff.beta, vec![0.3, -0.2]);
        assert!(!eff.any_clamped());
    }

    #[test]
    fn effective_shape_symmetric_box_ignores_gamma() {
        let mut model = toy_skeleton();
        model.beta_bounds = BetaBounds {
            min: vec![-1.0, -2.0],
            max: vec![1.0, 2.0],
        };
        let mut state = SkeletonState::rest(&model, Chart::Quat);
        state.beta_skel = vec![0.4, 0.4];
        state.gamma = 0.7;
        let eff = effective_shape(&model, &state);
        assert_eq!(eff.beta, vec![0.4, 0.4]);
    }

    #[test]
    fn effective_shape_unit_box_example() {
        // gamma = 1, beta = 0, box [0,2]^d: offset = midpoint = all ones.
        let mut model = toy_skeleton();
        model.beta_bounds = BetaBounds {
            min: vec![0.0, 0.0],
            max: vec![2.0, 2.0],
        };
        let mut state = SkeletonState::rest(&model, Chart::Quat);
        state.gamma = 1.0;
        let eff = effective_shape(&model, &state);
        assert_eq!(eff.beta, vec![1.0, 1.0]);
        assert!(!eff.any_clamped());
    }

    #[test]
    fn effective_shape_clamps_and_flags() {
        let model = toy_skeleton();
        let mut state = SkeletonState::rest(&model, Chart::Quat);
        state.beta_skel = vec![100.0, 0.0];
        let eff = effective_shape(&model, &state);
        assert_eq!(eff.beta[0], model.beta_bounds.max[0]);
        assert!(eff.clamped[0]);
        assert!(!eff.clamped[1]);
    }

    #[test]
    fn rest_state_reproduces_template_exactly() {
        let model = toy_skeleton();
        let state = SkeletonState::rest(&model, Chart::Quat);
        let posed = skeleton_forward(&model, &state).unwrap();
        for (bi, block) in model.blocks.iter().enumerate() {
            for (vi, v) in block.vertices.iter().enumerate() {
                let expect = v + block.cp;
                assert_eq!(posed.vertices[bi][vi], expect, "block {bi} vertex {vi}");
            }
        }
    }

    #[test]
    fn translating_one_block_moves_only_that_block() {
        let model = toy_skeleton();
        let state = SkeletonState::rest(&model, Chart::Quat);
        let base = skeleton_forward(&model, &state).unwrap();

        let d = Vector3::new(0.05, -0.02, 0.01);
        let mut moved_state = state.clone();
        moved_state.t[1] += d;
        let moved = skeleton_forward(&model, &moved_state).unwrap();

        for bi in 0..model.n_blocks() {
            for (a, b) in base.vertices[bi].iter().zip(&moved.vertices[bi]) {
                if bi == 1 {
                    assert_relative_eq!((b - a - d).norm(), 0.0, epsilon = 1e-15);
                } else {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn forward_matches_per_block_oracle() {
        let model = toy_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..50 {
            let state = random_state(&model, &mut rng);
            let posed = skeleton_forward(&model, &state).unwrap();
            let beta = effective_shape(&model, &state);
            for (bi, block) in model.blocks.iter().enumerate() {
                let r = state.r[bi].matrix().unwrap();
                for (vi, v) in block.vertices.iter().enumerate() {
                    let mut local = *v;
                    for (k, d) in block.shape_dirs[vi].iter().enumerate() {
                        local += d * beta.beta[k];
                    }
                    let expect = r * local + state.t[bi];
                    assert_relative_eq!(
                        (posed.vertices[bi][vi] - expect).norm(),
                        0.0,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn landmarks_follow_their_blocks() {
        let model = toy_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let state = random_state(&model, &mut rng);
        let posed = skeleton_forward(&model, &state).unwrap();
        let lms = skeleton_landmarks(&model, &posed).unwrap();
        for (lm, def) in lms.iter().zip(&model.landmarks) {
            let r = state.r[def.block].matrix().unwrap();
            let mut local = def.local;
            for (k, d) in def.shape_dirs.iter().enumerate() {
                local += d * posed.beta.beta[k];
            }
            let expect = r * local + state.t[def.block];
            assert_relative_eq!((lm - expect).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn landmark_missing_block_is_rejected() {
        let mut model = toy_skeleton();
        model.landmarks[0].block = 99;
        let state = SkeletonState::rest(&model, Chart::Quat);
        let posed = skeleton_forward(&model, &state).unwrap();
        assert!(matches!(
            skeleton_landmarks(&model, &posed),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn rest_pose_model_is_deterministic_and_matches_forward() {
        let model = toy_skeleton();
        let beta = vec![0.37, -0.21];
        let a = rest_pose_model(&model, &beta).unwrap();
        let b = rest_pose_model(&model, &beta).unwrap();
        let mut state = SkeletonState::rest(&model, Chart::Quat);
        state.beta_skel = beta;
        let fwd = skeleton_forward(&model, &state).unwrap();
        for bi in 0..model.n_blocks() {
            for vi in 0..model.blocks[bi].vertices.len() {
                assert_eq!(a.vertices[bi][vi], b.vertices[bi][vi]);
                assert_eq!(a.vertices[bi][vi], fwd.vertices[bi][vi]);
            }
        }
    }

    #[test]
    fn global_rigid_motion_moves_everything_rigidly() {
        let model = toy_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let state = random_state(&model, &mut rng);
        let posed = skeleton_forward(&model, &state).unwrap();

        let g = Rotation::Quat(crate::geom::Quat::new(0.9, 0.1, -0.3, 0.2));
        let gm = g.matrix().unwrap();
        let gt = Vector3::new(0.4, -0.1, 0.25);
        let mut moved_state = state.clone();
        for bi in 0..model.n_blocks() {
            moved_state.r[bi] = g.compose(&state.r[bi]).unwrap();
            moved_state.t[bi] = gm * state.t[bi] + gt;
        }
        let moved = skeleton_forward(&model, &moved_state).unwrap();

        let lm_a = skeleton_landmarks(&model, &posed).unwrap();
        let lm_b = skeleton_landmarks(&model, &moved).unwrap();
        for (a, b) in lm_a.iter().zip(&lm_b) {
            assert_relative_eq!((gm * a + gt - b).norm(), 0.0, epsilon = 1e-10);
        }
        for bi in 0..model.n_blocks() {
            for (a, b) in posed.mp_world[bi].iter().zip(&moved.mp_world[bi]) {
                assert_relative_eq!((gm * a + gt - b).norm(), 0.0, epsilon = 1e-10);
            }
            assert_relative_eq!(
                (gm * posed.cp_world[bi] + gt - moved.cp_world[bi]).norm(),
                0.0,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn validation_rejects_wrong_rest_gap() {
        let mut model = toy_skeleton();
        model.seams[0].rest_gap += 0.05;
        assert!(matches!(model.validate(), Err(Error::Model(_))));
    }

    #[test]
    fn validation_rejects_disconnected_seam_graph() {
        let mut model = toy_skeleton();
        // Orphan block 2 by pointing its seam back at blocks 0-1 only.
        model.seams[1].b = 0;
        assert!(model.validate().is_err());
    }
}
