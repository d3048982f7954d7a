//! Central-difference verification of every analytic derivative the fitters
//! rely on: rotation-chart Jacobians, the projection Jacobian, the body
//! reprojection gradient, and all skeleton energy gradients, each evaluated
//! over many random states on freshly generated models.

use std::fmt;
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, BodyState};
use crate::energy::{
    build_constraints, e_clv, e_ct, e_j, e_landmark, e_osf, e_reproj, EnergySpec, Keypoint,
    SkelGrad,
};
use crate::error::Result;
use crate::geom::{project, project_jacobian, AxisAngle, Camera, Chart, Quat, Rotation};
use crate::skeleton::{
    effective_shape, rest_pose_model, skeleton_forward, skeleton_landmarks, PosedSkeleton,
    SkeletonModel, SkeletonState,
};
use crate::synth::{gen_models, SizeConfig};

/// Maximum allowed relative error between analytic and central-difference
/// derivatives.
pub const GRAD_TOL: f64 = 1e-5;

/// Central-difference step.
const FD_H: f64 = 1e-6;

/// Outcome of one derivative suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GradCheckRow {
    pub name: String,
    /// Random states the suite evaluated.
    pub states: usize,
    pub max_rel_err: f64,
    pub seconds: f64,
}

impl GradCheckRow {
    pub fn pass(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < GRAD_TOL
    }
}

/// All suites together; rendered as a fixed-width table by `Display`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GradCheckReport {
    pub tol: f64,
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass())
    }

    pub fn total_states(&self) -> usize {
        self.rows.iter().map(|r| r.states).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.seconds).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<38} {:>7} {:>12} {:>8}  {}",
            "derivative", "states", "max rel err", "time", "status"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<38} {:>7} {:>12.3e} {:>7.2}s  {}",
                row.name,
                row.states,
                row.max_rel_err,
                row.seconds,
                if row.pass() { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{} checks, {} states, {:.2}s total, tolerance {:.0e}: {}",
            self.rows.len(),
            self.total_states(),
            self.total_seconds(),
            self.tol,
            if self.all_pass() {
                "all pass"
            } else {
                "FAILURES"
            }
        )
    }
}

fn rel(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1.0)
}

fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let q = Quat::new(n.sample(rng), n.sample(rng), n.sample(rng), n.sample(rng));
        if q.norm() > 0.3 {
            return q;
        }
    }
}

fn random_axis_angle(rng: &mut ChaCha8Rng) -> AxisAngle {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        let norm = v.norm();
        if norm > 1e-3 {
            let angle = rng.gen_range(0.05..2.8);
            return AxisAngle(v / norm * angle);
        }
    }
}

// ---------------------------------------------------------------------------
// Individual suites.
// ---------------------------------------------------------------------------

fn check_rotation_chart(rng: &mut ChaCha8Rng, chart: Chart, states: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let r = match chart {
            Chart::Quat => Rotation::Quat(random_quat(rng)),
            Chart::Rodrigues => Rotation::Rodrigues(random_axis_angle(rng)),
        };
        let (_, jac) = r.matrix_jacobian().unwrap();
        let dof = r.dof();
        let mut params = [0.0; 4];
        r.write_params(&mut params);
        for k in 0..dof {
            let (mut pp, mut pm) = (params, params);
            pp[k] += FD_H;
            pm[k] -= FD_H;
            let mp = Rotation::from_params(chart, &pp[..dof]).matrix().unwrap();
            let mm = Rotation::from_params(chart, &pm[..dof]).matrix().unwrap();
            let fd = (mp - mm) / (2.0 * FD_H);
            for i in 0..3 {
                for j in 0..3 {
                    worst = worst.max(rel(jac.mats[k][(i, j)], fd[(i, j)]));
                }
            }
        }
    }
    worst
}

fn check_projection(rng: &mut ChaCha8Rng, states: usize) -> f64 {
    let n = Normal::new(0.0, 0.5).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let x = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        let cam = Camera {
            s: rng.gen_range(0.4..1.6),
            tx: n.sample(rng),
            ty: n.sample(rng),
        };
        let (_, d_point, d_cam) = project_jacobian(&x, &cam);
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += FD_H;
            xm[k] -= FD_H;
            let fd = (project(&xp, &cam) - project(&xm, &cam)) / (2.0 * FD_H);
            for i in 0..2 {
                worst = worst.max(rel(d_point[(i, k)], fd[i]));
            }
        }
        for k in 0..3 {
            let mut cp = cam;
            let mut cm = cam;
            match k {
                0 => {
                    cp.s += FD_H;
                    cm.s -= FD_H;
                }
                1 => {
                    cp.tx += FD_H;
                    cm.tx -= FD_H;
                }
                _ => {
                    cp.ty += FD_H;
                    cm.ty -= FD_H;
                }
            }
            let fd = (project(&x, &cp) - project(&x, &cm)) / (2.0 * FD_H);
            for i in 0..2 {
                worst = worst.max(rel(d_cam[(i, k)], fd[i]));
            }
        }
    }
    worst
}

fn random_body_state(model: &BodyModel, rng: &mut ChaCha8Rng) -> BodyState {
    let n = Normal::new(0.0, 1.0).unwrap();
    BodyState {
        beta_body: (0..model.shape_dim())
            .map(|_| 0.7 * n.sample(rng))
            .collect(),
        pose: (0..model.n_parts())
            .map(|_| Rotation::Quat(random_quat(rng)))
            .collect(),
        root: Vector3::new(
            0.2 * n.sample(rng),
            0.2 * n.sample(rng),
            0.2 * n.sample(rng),
        ),
        cam: Camera {
            s: rng.gen_range(0.5..1.5),
            tx: 0.2 * n.sample(rng),
            ty: 0.2 * n.sample(rng),
        },
    }
}

fn check_body_reprojection(model: &BodyModel, rng: &mut ChaCha8Rng, states: usize) -> f64 {
    let spec = EnergySpec::default();
    let n = Normal::new(0.0, 0.4).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let state = random_body_state(model, rng);
        let keypoints: Vec<Keypoint> = (0..model.n_joints())
            .map(|j| Keypoint {
                uv: nalgebra::Vector2::new(n.sample(rng), n.sample(rng)),
                // A spread of confidences, including one ignored joint.
                conf: if j == 0 { 0.0 } else { rng.gen_range(0.2..1.0) },
            })
            .collect();
        let (_, grad) = e_reproj(model, &state, &keypoints, &spec).unwrap();
        let eval = |s: &BodyState| e_reproj(model, s, &keypoints, &spec).unwrap().0;

        for k in 0..3 {
            let (mut sp, mut sm) = (state.clone(), state.clone());
            match k {
                0 => {
                    sp.cam.s += FD_H;
                    sm.cam.s -= FD_H;
                }
                1 => {
                    sp.cam.tx += FD_H;
                    sm.cam.tx -= FD_H;
                }
                _ => {
                    sp.cam.ty += FD_H;
                    sm.cam.ty -= FD_H;
                }
            }
            worst = worst.max(rel(grad.cam[k], (eval(&sp) - eval(&sm)) / (2.0 * FD_H)));
        }
        for k in 0..model.shape_dim() {
            let (mut sp, mut sm) = (state.clone(), state.clone());
            sp.beta_body[k] += FD_H;
            sm.beta_body[k] -= FD_H;
            worst = worst.max(rel(grad.beta[k], (eval(&sp) - eval(&sm)) / (2.0 * FD_H)));
        }
        for k in 0..3 {
            let (mut sp, mut sm) = (state.clone(), state.clone());
            sp.root[k] += FD_H;
            sm.root[k] -= FD_H;
            worst = worst.max(rel(grad.root[k], (eval(&sp) - eval(&sm)) / (2.0 * FD_H)));
        }
        for p in 0..model.n_parts() {
            let dof = state.pose[p].dof();
            let mut params = [0.0; 4];
            state.pose[p].write_params(&mut params);
            for k in 0..dof {
                let (mut pp, mut pm) = (params, params);
                pp[k] += FD_H;
                pm[k] -= FD_H;
                let (mut sp, mut sm) = (state.clone(), state.clone());
                sp.pose[p] = Rotation::from_params(Chart::Quat, &pp[..dof]);
                sm.pose[p] = Rotation::from_params(Chart::Quat, &pm[..dof]);
                worst = worst.max(rel(grad.pose[p][k], (eval(&sp) - eval(&sm)) / (2.0 * FD_H)));
            }
        }
    }
    worst
}

fn random_skel_state(model: &SkeletonModel, chart: Chart, rng: &mut ChaCha8Rng) -> SkeletonState {
    let n = Normal::new(0.0, 1.0).unwrap();
    let t = model
        .blocks
        .iter()
        .map(|b| {
            b.cp + Vector3::new(
                0.1 * n.sample(rng),
                0.1 * n.sample(rng),
                0.1 * n.sample(rng),
            )
        })
        .collect();
    let r = (0..model.n_blocks())
        .map(|_| match chart {
            Chart::Quat => Rotation::Quat(random_quat(rng)),
            Chart::Rodrigues => Rotation::Rodrigues(random_axis_angle(rng)),
        })
        .collect();
    SkeletonState {
        // Stay inside the shape box so clamping cannot zero gradients.
        beta_skel: (0..model.shape_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        gamma: 0.3 * n.sample(rng),
        t,
        r,
    }
}

fn sm0_for(model: &SkeletonModel, state: &SkeletonState) -> PosedSkeleton {
    rest_pose_model(model, &effective_shape(model, state).beta).unwrap()
}

/// Compare one skeleton energy's analytic gradient (including the shape-ramp
/// chain `dE/dgamma = sum_k dE/dbeta_k * mid_k`) against central differences
/// over every block placement, shape coefficient, and the ramp itself.
fn check_skel_energy<F>(
    model: &SkeletonModel,
    rng: &mut ChaCha8Rng,
    chart: Chart,
    states: usize,
    eval: F,
) -> f64
where
    F: Fn(&SkeletonState) -> (f64, SkelGrad),
{
    let mid = model.beta_mid();
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let state = random_skel_state(model, chart, rng);
        let (_, grad) = eval(&state);
        let f = |s: &SkeletonState| eval(s).0;

        for b in 0..model.n_blocks() {
            for k in 0..3 {
                let (mut sp, mut sm) = (state.clone(), state.clone());
                sp.t[b][k] += FD_H;
                sm.t[b][k] -= FD_H;
                worst = worst.max(rel(grad.t[b][k], (f(&sp) - f(&sm)) / (2.0 * FD_H)));
            }
            let dof = state.r[b].dof();
            let mut params = [0.0; 4];
            state.r[b].write_params(&mut params);
            for k in 0..dof {
                let (mut pp, mut pm) = (params, params);
                pp[k] += FD_H;
                pm[k] -= FD_H;
                let (mut sp, mut sm) = (state.clone(), state.clone());
                sp.r[b] = Rotation::from_params(chart, &pp[..dof]);
                sm.r[b] = Rotation::from_params(chart, &pm[..dof]);
                worst = worst.max(rel(grad.r[b][k], (f(&sp) - f(&sm)) / (2.0 * FD_H)));
            }
        }
        for k in 0..model.shape_dim() {
            let (mut sp, mut sm) = (state.clone(), state.clone());
            sp.beta_skel[k] += FD_H;
            sm.beta_skel[k] -= FD_H;
            worst = worst.max(rel(grad.beta[k], (f(&sp) - f(&sm)) / (2.0 * FD_H)));
        }
        let g_gamma: f64 = grad.beta.iter().zip(&mid).map(|(g, m)| g * m).sum();
        let (mut sp, mut sm) = (state.clone(), state.clone());
        sp.gamma += FD_H;
        sm.gamma -= FD_H;
        worst = worst.max(rel(g_gamma, (f(&sp) - f(&sm)) / (2.0 * FD_H)));
    }
    worst
}

// ---------------------------------------------------------------------------
// Driver.
// ---------------------------------------------------------------------------

/// Run every derivative suite with `states_per_check` random states each.
/// Models are generated from `seed`; all randomness is seeded, so reruns are
/// bitwise identical.
pub fn run_gradcheck(seed: u64, states_per_check: usize) -> Result<GradCheckReport> {
    let (body, skel) = gen_models(seed, &SizeConfig::default())?;
    let constraints = build_constraints(&skel, 200)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6AD_C1EC);

    // Landmark targets with no special structure: a posed state's landmarks
    // plus noise, so residuals are generic.
    let ref_state = random_skel_state(&skel, Chart::Quat, &mut rng);
    let posed = skeleton_forward(&skel, &ref_state)?;
    let noise = Normal::new(0.0, 0.05).unwrap();
    let targets: Vec<Vector3<f64>> = skeleton_landmarks(&skel, &posed)?
        .into_iter()
        .map(|p| {
            p + Vector3::new(
                noise.sample(&mut rng),
                noise.sample(&mut rng),
                noise.sample(&mut rng),
            )
        })
        .collect();
    let spec = EnergySpec::default();

    let mut rows = Vec::new();
    let mut push = |name: &str,
                    states: usize,
                    body: &mut dyn FnMut(&mut ChaCha8Rng) -> f64,
                    rng: &mut ChaCha8Rng| {
        let start = Instant::now();
        let max_rel_err = body(rng);
        rows.push(GradCheckRow {
            name: name.to_string(),
            states,
            max_rel_err,
            seconds: start.elapsed().as_secs_f64(),
        });
    };

    let n = states_per_check;
    push(
        "rotation_matrix_jacobian_quat",
        n,
        &mut |r| check_rotation_chart(r, Chart::Quat, n),
        &mut rng,
    );
    push(
        "rotation_matrix_jacobian_rodrigues",
        n,
        &mut |r| check_rotation_chart(r, Chart::Rodrigues, n),
        &mut rng,
    );
    push(
        "projection_jacobian",
        n,
        &mut |r| check_projection(r, n),
        &mut rng,
    );
    push(
        "body_reprojection_gradient",
        n,
        &mut |r| check_body_reprojection(&body, r, n),
        &mut rng,
    );

    let skel_row = |name: &str,
                    chart: Chart,
                    eval: &dyn Fn(&SkeletonState) -> (f64, SkelGrad),
                    rng: &mut ChaCha8Rng|
     -> GradCheckRow {
        let start = Instant::now();
        let max_rel_err = check_skel_energy(&skel, rng, chart, n, eval);
        GradCheckRow {
            name: name.to_string(),
            states: n,
            max_rel_err,
            seconds: start.elapsed().as_secs_f64(),
        }
    };

    let skel_ref = &skel;
    let targets_ref = &targets;
    let constraints_ref = &constraints;
    let spec_ref = &spec;
    rows.push(skel_row(
        "landmark_energy_gradient",
        Chart::Quat,
        &|s| {
            let (f, g) = e_landmark(skel_ref, s, targets_ref).unwrap();
            (f, g)
        },
        &mut rng,
    ));
    rows.push(skel_row(
        "cross_distance_energy_gradient",
        Chart::Quat,
        &|s| {
            let sm0 = sm0_for(skel_ref, s);
            e_ct(skel_ref, s, constraints_ref, &sm0).unwrap()
        },
        &mut rng,
    ));
    rows.push(skel_row(
        "seam_energy_gradient",
        Chart::Quat,
        &|s| e_j(skel_ref, s).unwrap(),
        &mut rng,
    ));
    rows.push(skel_row(
        "clavicle_energy_gradient",
        Chart::Quat,
        &|s| e_clv(skel_ref, s).unwrap(),
        &mut rng,
    ));
    rows.push(skel_row(
        "combined_energy_gradient_quat",
        Chart::Quat,
        &|s| {
            let sm0 = sm0_for(skel_ref, s);
            let (f, g, _) =
                e_osf(skel_ref, s, targets_ref, spec_ref, constraints_ref, &sm0).unwrap();
            (f, g)
        },
        &mut rng,
    ));
    rows.push(skel_row(
        "combined_energy_gradient_rodrigues",
        Chart::Rodrigues,
        &|s| {
            let sm0 = sm0_for(skel_ref, s);
            let (f, g, _) =
                e_osf(skel_ref, s, targets_ref, spec_ref, constraints_ref, &sm0).unwrap();
            (f, g)
        },
        &mut rng,
    ));

    Ok(GradCheckReport {
        tol: GRAD_TOL,
        rows,
    })
}
