//! Objective terms for skeleton and body fitting, each returning its value
//! together with an exact gradient with respect to the free variables.
//!
//! Skeleton terms share a convention: gradients come back as a [`SkelGrad`]
//! holding per-block translation and rotation-parameter derivatives plus the
//! derivative with respect to the *effective* shape coefficients. Callers
//! chain the shape part through whatever parameterization they expose to the
//! optimizer (fixed shape, or the transfer-matrix/offset parameterization).
//!
//! The anatomical terms (`e_ct`, `e_j`, `e_clv`) compare the posed skeleton
//! against its shaped rest configuration through the *same* floating-point
//! expressions used to build the reference values, so they are exactly zero
//! — not merely small — at the shaped rest pose.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::{body_forward, BodyModel, BodyState};
use crate::error::{Error, Result};
use crate::geom::{project_jacobian, Quat, Rotation};
use crate::skeleton::{
    rest_pose_model, skeleton_forward, skeleton_landmarks, PosedSkeleton, SkeletonModel,
    SkeletonState, SupervisionTarget,
};

/// Residual norms below this skip the direction term of a norm gradient.
const NORM_GRAD_EPS: f64 = 1e-12;

/// Weights and switches defining one fitting objective.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EnergySpec {
    /// Landmark data term weight.
    pub lambda_l: f64,
    /// Cross-block relative-distance term weight.
    pub lambda_ct: f64,
    /// Seam match-point term weight.
    pub lambda_j: f64,
    /// Clavicle frame-offset term weight.
    pub lambda_clv: f64,
    /// 2D reprojection term weight (body fitting).
    pub lambda_hj: f64,
    /// Rotation supervision weight.
    pub lambda_r: f64,
    /// Translation supervision weight.
    pub lambda_t: f64,
    /// Use unsquared (robust) distances in the combined skeleton objective.
    pub robust: bool,
}

impl Default for EnergySpec {
    fn default() -> Self {
        EnergySpec {
            lambda_l: 10.0,
            lambda_ct: 1e-4,
            lambda_j: 2.0,
            lambda_clv: 2.0,
            lambda_hj: 10.0,
            lambda_r: 0.1,
            lambda_t: 10.0,
            robust: false,
        }
    }
}

impl EnergySpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_l,
            self.lambda_ct,
            self.lambda_j,
            self.lambda_clv,
            self.lambda_hj,
            self.lambda_r,
            self.lambda_t,
        ];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Model(
                "energy weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// The landmark-only variant used by the single-round regime: anatomical
    /// weights zeroed, everything else kept.
    pub fn landmark_only(&self) -> EnergySpec {
        EnergySpec {
            lambda_ct: 0.0,
            lambda_j: 0.0,
            lambda_clv: 0.0,
            ..self.clone()
        }
    }
}

/// One observed 2D joint with its confidence.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Keypoint {
    pub uv: Vector2<f64>,
    pub conf: f64,
}

/// A sampled cross-block vertex pair whose relative distance is restrained.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CtPair {
    pub block_a: usize,
    pub vert_a: usize,
    pub block_b: usize,
    pub vert_b: usize,
    /// Pair distance at the zero-shape rest pose, meters (informational; the
    /// energy re-derives the reference from the current shaped rest pose).
    pub rest_dist: f64,
}

/// The sampled relative-distance constraints for one skeleton model.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstraintSet {
    pub pairs: Vec<CtPair>,
}

/// Sample the `count` closest cross-block vertex pairs between seam-adjacent
/// blocks at the zero-shape rest pose. Deterministic: ties break by index.
pub fn build_constraints(model: &SkeletonModel, count: usize) -> Result<ConstraintSet> {
    let rest = rest_pose_model(model, &vec![0.0; model.shape_dim()])?;
    let mut neighbor: Vec<(usize, usize)> = model
        .seams
        .iter()
        .map(|s| if s.a < s.b { (s.a, s.b) } else { (s.b, s.a) })
        .collect();
    neighbor.sort_unstable();
    neighbor.dedup();

    let mut pairs = Vec::new();
    for &(a, b) in &neighbor {
        for (va, pa) in rest.vertices[a].iter().enumerate() {
            for (vb, pb) in rest.vertices[b].iter().enumerate() {
                pairs.push(CtPair {
                    block_a: a,
                    vert_a: va,
                    block_b: b,
                    vert_b: vb,
                    rest_dist: (pa - pb).norm(),
                });
            }
        }
    }
    pairs.sort_by(|x, y| {
        x.rest_dist
            .partial_cmp(&y.rest_dist)
            .unwrap()
            .then(x.block_a.cmp(&y.block_a))
            .then(x.vert_a.cmp(&y.vert_a))
            .then(x.block_b.cmp(&y.block_b))
            .then(x.vert_b.cmp(&y.vert_b))
    });
    pairs.truncate(count);
    Ok(ConstraintSet { pairs })
}

/// Gradient of a skeleton energy with respect to a [`SkeletonState`]:
/// per-block translations, per-block rotation parameters (3 or 4 used), and
/// the effective shape coefficients.
#[derive(Clone, Debug)]
pub struct SkelGrad {
    pub t: Vec<Vector3<f64>>,
    pub r: Vec<[f64; 4]>,
    pub beta: Vec<f64>,
}

impl SkelGrad {
    pub fn zeros(n_blocks: usize, shape_dim: usize) -> SkelGrad {
        SkelGrad {
            t: vec![Vector3::zeros(); n_blocks],
            r: vec![[0.0; 4]; n_blocks],
            beta: vec![0.0; shape_dim],
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &SkelGrad) {
        for (a, b) in self.t.iter_mut().zip(&other.t) {
            *a += b * c;
        }
        for (a, b) in self.r.iter_mut().zip(&other.r) {
            for k in 0..4 {
                a[k] += c * b[k];
            }
        }
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            *a += c * b;
        }
    }
}

/// Gradient of a body energy with respect to a [`BodyState`].
#[derive(Clone, Debug)]
pub struct BodyGrad {
    /// d/d(s, tx, ty).
    pub cam: [f64; 3],
    pub beta: Vec<f64>,
    pub root: Vector3<f64>,
    pub pose: Vec<[f64; 4]>,
}

impl BodyGrad {
    pub fn zeros(n_parts: usize, shape_dim: usize) -> BodyGrad {
        BodyGrad {
            cam: [0.0; 3],
            beta: vec![0.0; shape_dim],
            root: Vector3::zeros(),
            pose: vec![[0.0; 4]; n_parts],
        }
    }
}

// ---------------------------------------------------------------------------
// Skeleton terms. Inner `*_on` variants reuse one forward pass; the public
// functions match the documented signatures and pose the skeleton themselves.
// ---------------------------------------------------------------------------

fn landmark_on(
    model: &SkeletonModel,
    posed: &PosedSkeleton,
    targets: &[Vector3<f64>],
    robust: bool,
) -> Result<(f64, SkelGrad)> {
    if targets.len() != model.n_landmarks() {
        return Err(Error::Model(format!(
            "{} landmark targets for a model with {}",
            targets.len(),
            model.n_landmarks()
        )));
    }
    let lms = skeleton_landmarks(model, posed)?;
    let mut grad = SkelGrad::zeros(model.n_blocks(), model.shape_dim());
    let mut value = 0.0;
    for ((lm, target), def) in lms.iter().zip(targets).zip(&model.landmarks) {
        let delta = lm - target;
        let g = if robust {
            let n = delta.norm();
            value += n;
            if n < NORM_GRAD_EPS {
                continue;
            }
            delta / n
        } else {
            value += delta.norm_squared();
            2.0 * delta
        };
        let b = def.block;
        grad.t[b] += g;
        let mut local = def.local;
        for (k, d) in def.shape_dirs.iter().enumerate() {
            local += d * posed.beta.beta[k];
        }
        let jac = &posed.rot_jac[b];
        for k in 0..jac.len {
            grad.r[b][k] += g.dot(&(jac.mats[k] * local));
        }
        for (k, d) in def.shape_dirs.iter().enumerate() {
            grad.beta[k] += g.dot(&(posed.rot[b] * d));
        }
    }
    Ok((value, grad))
}

fn ct_on(
    model: &SkeletonModel,
    posed: &PosedSkeleton,
    constraints: &ConstraintSet,
    sm0: &PosedSkeleton,
    robust: bool,
) -> Result<(f64, SkelGrad)> {
    if sm0.beta.beta != posed.beta.beta {
        return Err(Error::Model(
            "rest reference was built for a different shape".into(),
        ));
    }
    let mut grad = SkelGrad::zeros(model.n_blocks(), model.shape_dim());
    let mut value = 0.0;
    for pair in &constraints.pairs {
        let (ba, va, bb, vb) = (pair.block_a, pair.vert_a, pair.block_b, pair.vert_b);
        if ba >= posed.vertices.len()
            || va >= posed.vertices[ba].len()
            || bb >= posed.vertices.len()
            || vb >= posed.vertices[bb].len()
        {
            return Err(Error::Model(
                "constraint pair references missing vertex".into(),
            ));
        }
        let delta = posed.vertices[ba][va] - posed.vertices[bb][vb];
        let delta0 = sm0.vertices[ba][va] - sm0.vertices[bb][vb];
        let n = delta.norm();
        let n0 = delta0.norm();
        let resid = n - n0;
        // d(value)/d(n) and d(value)/d(n0).
        let (v, dn) = if robust {
            (resid.abs(), resid.signum())
        } else {
            (resid * resid, 2.0 * resid)
        };
        value += v;
        if resid == 0.0 || n < NORM_GRAD_EPS {
            continue;
        }
        let dir = delta / n;
        for (sign, b, vi) in [(1.0, ba, va), (-1.0, bb, vb)] {
            let g = dir * (dn * sign);
            grad.t[b] += g;
            let local = posed.shaped_local(model, b, vi);
            let jac = &posed.rot_jac[b];
            for k in 0..jac.len {
                grad.r[b][k] += g.dot(&(jac.mats[k] * local));
            }
        }
        // The reference distance follows the shape too.
        let dir0 = if n0 < NORM_GRAD_EPS {
            Vector3::zeros()
        } else {
            delta0 / n0
        };
        for k in 0..model.shape_dim() {
            let da = model.blocks[ba].shape_dirs[va][k];
            let db = model.blocks[bb].shape_dirs[vb][k];
            let dn_dbeta = dir.dot(&(posed.rot[ba] * da - posed.rot[bb] * db));
            let dn0_dbeta = dir0.dot(&(da - db));
            grad.beta[k] += dn * (dn_dbeta - dn0_dbeta);
        }
    }
    Ok((value, grad))
}

fn j_on(model: &SkeletonModel, posed: &PosedSkeleton, robust: bool) -> Result<(f64, SkelGrad)> {
    let mut grad = SkelGrad::zeros(model.n_blocks(), model.shape_dim());
    let mut value = 0.0;
    for seam in &model.seams {
        for &(ia, ib) in &seam.pairs {
            let delta = posed.mp_world[seam.a][ia] - posed.mp_world[seam.b][ib];
            let g = if seam.rest_gap == 0.0 && !robust {
                // Zero-gap seams reduce to a plain squared distance, smooth
                // everywhere (and exactly zero when the points coincide).
                value += delta.norm_squared();
                2.0 * delta
            } else {
                let n = delta.norm();
                let resid = n - seam.rest_gap;
                let (v, dn) = if robust {
                    (resid.abs(), resid.signum())
                } else {
                    (resid * resid, 2.0 * resid)
                };
                value += v;
                if resid == 0.0 || n < NORM_GRAD_EPS {
                    continue;
                }
                delta * (dn / n)
            };
            for (sign, b, mi) in [(1.0, seam.a, ia), (-1.0, seam.b, ib)] {
                let gs = g * sign;
                grad.t[b] += gs;
                let local = model.blocks[b].mps[mi].local;
                let jac = &posed.rot_jac[b];
                for k in 0..jac.len {
                    grad.r[b][k] += gs.dot(&(jac.mats[k] * local));
                }
            }
        }
    }
    Ok((value, grad))
}

fn clv_on(model: &SkeletonModel, posed: &PosedSkeleton, robust: bool) -> Result<(f64, SkelGrad)> {
    let mut grad = SkelGrad::zeros(model.n_blocks(), model.shape_dim());
    let mut value = 0.0;
    for cr in &model.clavicle_refs {
        if cr.clavicle >= posed.rot.len() || cr.thorax >= posed.rot.len() {
            return Err(Error::Model(
                "clavicle reference names a missing block".into(),
            ));
        }
        let (c, th) = (cr.clavicle, cr.thorax);
        let x = posed.mp_world[c][cr.mp];
        let v = x - posed.t[th];
        let resid = posed.rot[th].transpose() * v - cr.offset;
        let g = if robust {
            let n = resid.norm();
            value += n;
            if n < NORM_GRAD_EPS {
                continue;
            }
            resid / n
        } else {
            value += resid.norm_squared();
            2.0 * resid
        };
        // Through the clavicle placement: x = R_c m + t_c.
        let g_world = posed.rot[th] * g;
        grad.t[c] += g_world;
        let m_local = model.blocks[c].mps[cr.mp].local;
        let jac_c = &posed.rot_jac[c];
        for k in 0..jac_c.len {
            grad.r[c][k] += g_world.dot(&(jac_c.mats[k] * m_local));
        }
        // Through the thorax frame the offset is expressed in.
        grad.t[th] -= g_world;
        let jac_th = &posed.rot_jac[th];
        for k in 0..jac_th.len {
            grad.r[th][k] += g.dot(&(jac_th.mats[k].transpose() * v));
        }
    }
    Ok((value, grad))
}

/// Sum of squared distances between the posed skeleton's landmarks and
/// 3D targets.
pub fn e_landmark(
    model: &SkeletonModel,
    state: &SkeletonState,
    targets: &[Vector3<f64>],
) -> Result<(f64, SkelGrad)> {
    let posed = skeleton_forward(model, state)?;
    landmark_on(model, &posed, targets, false)
}

/// Relative-distance preservation across neighboring blocks: penalizes
/// deviation of each sampled pair's distance from its value at the shaped
/// rest pose `sm0`.
pub fn e_ct(
    model: &SkeletonModel,
    state: &SkeletonState,
    constraints: &ConstraintSet,
    sm0: &PosedSkeleton,
) -> Result<(f64, SkelGrad)> {
    let posed = skeleton_forward(model, state)?;
    ct_on(model, &posed, constraints, sm0, false)
}

/// Seam stitching: matched match-point pairs should sit at their rest gap.
pub fn e_j(model: &SkeletonModel, state: &SkeletonState) -> Result<(f64, SkelGrad)> {
    let posed = skeleton_forward(model, state)?;
    j_on(model, &posed, false)
}

/// Clavicle anchoring: each clavicle's proximal match point, expressed in the
/// thorax frame, should sit at its stored rest offset.
pub fn e_clv(model: &SkeletonModel, state: &SkeletonState) -> Result<(f64, SkelGrad)> {
    let posed = skeleton_forward(model, state)?;
    clv_on(model, &posed, false)
}

/// The combined skeleton objective: weighted sum of landmark, relative
/// distance, seam, and clavicle terms. Terms with zero weight are skipped
/// entirely, so with `lambda_l = 1` and the rest zero this is bitwise equal
/// to [`e_landmark`]. Returns the weighted term values
/// `[landmark, ct, j, clv]` alongside the total and gradient.
pub fn e_osf(
    model: &SkeletonModel,
    state: &SkeletonState,
    targets: &[Vector3<f64>],
    spec: &EnergySpec,
    constraints: &ConstraintSet,
    sm0: &PosedSkeleton,
) -> Result<(f64, SkelGrad, [f64; 4])> {
    let posed = skeleton_forward(model, state)?;
    let mut total = 0.0;
    let mut grad = SkelGrad::zeros(model.n_blocks(), model.shape_dim());
    let mut terms = [0.0; 4];

    if spec.lambda_l > 0.0 {
        let (v, g) = landmark_on(model, &posed, targets, spec.robust)?;
        terms[0] = spec.lambda_l * v;
        total += terms[0];
        grad.axpy(spec.lambda_l, &g);
    }
    if spec.lambda_ct > 0.0 {
        let (v, g) = ct_on(model, &posed, constraints, sm0, spec.robust)?;
        terms[1] = spec.lambda_ct * v;
        total += terms[1];
        grad.axpy(spec.lambda_ct, &g);
    }
    if spec.lambda_j > 0.0 {
        let (v, g) = j_on(model, &posed, spec.robust)?;
        terms[2] = spec.lambda_j * v;
        total += terms[2];
        grad.axpy(spec.lambda_j, &g);
    }
    if spec.lambda_clv > 0.0 {
        let (v, g) = clv_on(model, &posed, spec.robust)?;
        terms[3] = spec.lambda_clv * v;
        total += terms[3];
        grad.axpy(spec.lambda_clv, &g);
    }
    Ok((total, grad, terms))
}

/// Weighted 2D reprojection error of the body's regressed joints:
/// `lambda_hj * Σ conf_i * ||project(joint_i) - uv_i||²`.
pub fn e_reproj(
    model: &BodyModel,
    state: &BodyState,
    j_gt: &[Keypoint],
    spec: &EnergySpec,
) -> Result<(f64, BodyGrad)> {
    if j_gt.len() != model.n_joints() {
        return Err(Error::Model(format!(
            "{} observed keypoints for a model with {} joints",
            j_gt.len(),
            model.n_joints()
        )));
    }
    let fk = body_forward(model, state)?;
    let mut grad = BodyGrad::zeros(model.n_parts(), model.shape_dim());
    let mut value = 0.0;

    for (row, kp) in model.joint_regressor.iter().zip(j_gt) {
        if kp.conf == 0.0 {
            continue;
        }
        let mut joint = Vector3::zeros();
        for (w, x) in row.iter().zip(&fk.vertices) {
            if *w != 0.0 {
                joint += x * *w;
            }
        }
        let (uv, d_point, d_cam) = project_jacobian(&joint, &state.cam);
        let delta = uv - kp.uv;
        value += spec.lambda_hj * kp.conf * delta.norm_squared();
        let g2 = delta * (2.0 * spec.lambda_hj * kp.conf);

        let gc = d_cam.transpose() * g2;
        for k in 0..3 {
            grad.cam[k] += gc[k];
        }
        // Pull the image-plane gradient back to the 3D joint, then through
        // the regressor to the vertices and their pose/shape parameters.
        let gp = d_point.transpose() * g2;
        grad.root += gp;
        for (vi, w) in row.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let gv = gp * *w;
            let part = model.part_of[vi];
            for (k, d) in model.shape_dirs[vi].iter().enumerate() {
                grad.beta[k] += gv.dot(&(fk.part_rot[part] * d));
            }
            for &anc in &fk.ancestors[part] {
                let jac = &fk.rot_grad[anc];
                for k in 0..jac.len {
                    grad.pose[anc][k] += gv.dot(&fk.point_rot_grad(anc, k, &fk.vertices[vi]));
                }
            }
        }
    }
    Ok((value, grad))
}

fn smooth_l1(d: f64) -> f64 {
    let a = d.abs();
    if a <= 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

/// Rotation residual on normalized quaternions with the `q = -q` double
/// cover aligned away.
fn quat_residual(a: &Rotation, b: &Rotation) -> Result<f64> {
    let qa = match a.to_chart(crate::geom::Chart::Quat)? {
        Rotation::Quat(q) => q.normalized()?,
        _ => unreachable!(),
    };
    let qb = match b.to_chart(crate::geom::Chart::Quat)? {
        Rotation::Quat(q) => q.normalized()?,
        _ => unreachable!(),
    };
    let qb = qb.aligned_with(&qa);
    let d = [qa.w - qb.w, qa.x - qb.x, qa.y - qb.y, qa.z - qb.z];
    Ok(d.iter().map(|v| v * v).sum())
}

/// Weak-supervision loss for a skeleton state against distilled targets:
/// mean squared landmark error, mean squared sign-aligned quaternion error,
/// and a summed smooth-L1 on block translations.
pub fn loss_skel_supervision(
    state: &SkeletonState,
    target: &SupervisionTarget,
    landmarks: &[Vector3<f64>],
    spec: &EnergySpec,
) -> Result<f64> {
    if landmarks.len() != target.landmark_gt.len() {
        return Err(Error::Model("landmark count differs from target".into()));
    }
    if state.t.len() != target.t_gt.len() || state.r.len() != target.r_gt.len() {
        return Err(Error::Model("block count differs from target".into()));
    }
    let mut lm = 0.0;
    for (a, b) in landmarks.iter().zip(&target.landmark_gt) {
        lm += (a - b).norm_squared();
    }
    lm /= landmarks.len().max(1) as f64;

    let mut rot = 0.0;
    for (a, b) in state.r.iter().zip(&target.r_gt) {
        rot += quat_residual(a, b)?;
    }
    rot /= state.r.len().max(1) as f64;

    let mut trans = 0.0;
    for (a, b) in state.t.iter().zip(&target.t_gt) {
        for k in 0..3 {
            trans += smooth_l1(a[k] - b[k]);
        }
    }
    Ok(spec.lambda_l * lm + spec.lambda_r * rot + spec.lambda_t * trans)
}

/// Distance between two full body parameterizations: Euclidean norm over the
/// concatenated (camera, shape, root, pose) vector, with pose quaternions
/// normalized and sign-aligned before differencing.
pub fn loss_theta(a: &BodyState, b: &BodyState) -> Result<f64> {
    if a.beta_body.len() != b.beta_body.len() || a.pose.len() != b.pose.len() {
        return Err(Error::Model("body states have different dimensions".into()));
    }
    let mut acc = 0.0;
    acc += (a.cam.s - b.cam.s).powi(2);
    acc += (a.cam.tx - b.cam.tx).powi(2);
    acc += (a.cam.ty - b.cam.ty).powi(2);
    for (x, y) in a.beta_body.iter().zip(&b.beta_body) {
        acc += (x - y) * (x - y);
    }
    acc += (a.root - b.root).norm_squared();
    for (ra, rb) in a.pose.iter().zip(&b.pose) {
        match (ra, rb) {
            (Rotation::Rodrigues(va), Rotation::Rodrigues(vb)) => {
                acc += (va.0 - vb.0).norm_squared();
            }
            _ => acc += quat_residual(ra, rb)?,
        }
    }
    Ok(acc.sqrt())
}

/// Normalize and sign-align helper shared by tests and diagnostics.
pub fn aligned_unit_quat(r: &Rotation, reference: &Quat) -> Result<Quat> {
    let q = match r.to_chart(crate::geom::Chart::Quat)? {
        Rotation::Quat(q) => q.normalized()?,
        _ => unreachable!(),
    };
    Ok(q.aligned_with(reference))
}
