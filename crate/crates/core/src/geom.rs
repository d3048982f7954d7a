//! Rotation charts, the weak-perspective camera, and rigid transforms.
//!
//! Two interchangeable rotation parameterizations are provided:
//!
//! * [`Quat`] — quaternions stored *unnormalized*. Normalization happens
//!   inside the matrix map, so an optimizer can search the full 4-space
//!   without a unit constraint. `q` and `-q` encode the same rotation.
//! * [`AxisAngle`] — a rotation vector (axis scaled by angle in radians),
//!   with a series expansion near zero so values and derivatives stay finite.
//!
//! Every map comes with an exact Jacobian with respect to its own parameters;
//! these are what the energy gradients chain through.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quaternion norms below this cannot be normalized meaningfully.
pub const QUAT_NORM_EPS: f64 = 1e-12;

/// Below this angle the axis-angle trigonometric coefficients switch to
/// their series expansions.
pub const RODRIGUES_SERIES_ANGLE: f64 = 1e-4;

/// An unnormalized quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// A rotation vector: axis times angle, in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub Vector3<f64>);

/// Which rotation parameterization a fit runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chart {
    Quat,
    Rodrigues,
}

impl Chart {
    /// Number of scalar parameters of the chart.
    pub fn dof(self) -> usize {
        match self {
            Chart::Quat => 4,
            Chart::Rodrigues => 3,
        }
    }
}

impl std::fmt::Display for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Chart::Quat => write!(f, "quat"),
            Chart::Rodrigues => write!(f, "rodrigues"),
        }
    }
}

impl std::str::FromStr for Chart {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "quat" | "quaternion" => Ok(Chart::Quat),
            "rodrigues" | "axisangle" => Ok(Chart::Rodrigues),
            other => Err(format!("unknown rotation chart '{other}'")),
        }
    }
}

/// A rotation expressed in one of the two charts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    Quat(Quat),
    Rodrigues(AxisAngle),
}

/// Jacobian of a rotation matrix with respect to its chart parameters:
/// `mats[k] = dR/dp_k` for `k < len`.
#[derive(Clone, Copy, Debug)]
pub struct RotationJacobian {
    pub mats: [Matrix3<f64>; 4],
    pub len: usize,
}

impl Quat {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn identity() -> Self {
        Quat::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Quat> {
        let n = self.norm();
        if n < QUAT_NORM_EPS {
            return Err(Error::DegenerateRotation { norm: n });
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Flip the sign so that `self` lies in the same half-space as `other`.
    /// `q` and `-q` are the same rotation; residuals on quaternion parameters
    /// must be computed after this alignment.
    pub fn aligned_with(&self, other: &Quat) -> Quat {
        let dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        if dot < 0.0 {
            Quat::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Quat) -> Quat {
        Quat::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        let u = self.normalized()?;
        Ok(unit_quat_matrix(&u))
    }

    /// Rotation matrix plus `dR/dq` for the *stored* (unnormalized)
    /// parameters, i.e. the normalization is part of the differentiated map.
    pub fn to_matrix_jacobian(&self) -> Result<(Matrix3<f64>, RotationJacobian)> {
        let n = self.norm();
        if n < QUAT_NORM_EPS {
            return Err(Error::DegenerateRotation { norm: n });
        }
        let u = Quat::new(self.w / n, self.x / n, self.y / n, self.z / n);
        let r = unit_quat_matrix(&u);
        let du = unit_quat_matrix_grads(&u);
        // Chain through normalization: du_a/dq_b = (delta_ab - u_a u_b) / n.
        let uv = [u.w, u.x, u.y, u.z];
        let mut mats = [Matrix3::zeros(); 4];
        for (b, mat) in mats.iter_mut().enumerate() {
            let mut acc = Matrix3::zeros();
            for a in 0..4 {
                let coeff = ((a == b) as u8 as f64 - uv[a] * uv[b]) / n;
                acc += du[a] * coeff;
            }
            *mat = acc;
        }
        Ok((r, RotationJacobian { mats, len: 4 }))
    }

    /// Recover a unit quaternion from a rotation matrix (largest-pivot form).
    pub fn from_matrix(r: &Matrix3<f64>) -> Quat {
        let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        // Canonical sign: non-negative scalar part.
        if q.w < 0.0 {
            Quat::new(-q.w, -q.x, -q.y, -q.z)
        } else {
            q
        }
    }
}

/// Matrix of an already-unit quaternion.
fn unit_quat_matrix(u: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (u.w, u.x, u.y, u.z);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `dR/du` of the unit-quaternion matrix map, before normalization chaining.
fn unit_quat_matrix_grads(u: &Quat) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (u.w, u.x, u.y, u.z);
    let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    [dw, dx, dy, dz]
}

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn identity() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let theta = self.angle();
        let (a, b) = rodrigues_coeffs(theta);
        let k = skew(&self.0);
        Matrix3::identity() + k * a + k * k * b
    }

    /// Matrix plus `dR/dv` for the three rotation-vector components.
    pub fn to_matrix_jacobian(&self) -> (Matrix3<f64>, RotationJacobian) {
        let v = self.0;
        let theta = v.norm();
        let (a, b) = rodrigues_coeffs(theta);
        // p = a'(theta)/theta and q = b'(theta)/theta stay finite at zero.
        let (p, q) = rodrigues_coeff_rates(theta);
        let k = skew(&v);
        let k2 = k * k;
        let r = Matrix3::identity() + k * a + k2 * b;

        let mut mats = [Matrix3::zeros(); 4];
        for i in 0..3 {
            let e = skew(&Vector3::ith(i, 1.0));
            mats[i] = k * (p * v[i]) + e * a + k2 * (q * v[i]) + (e * k + k * e) * b;
        }
        (r, RotationJacobian { mats, len: 3 })
    }

    pub fn to_quat(&self) -> Quat {
        let theta = self.angle();
        let half = theta * 0.5;
        // sin(theta/2)/theta, series below the switch angle.
        let s = if theta < RODRIGUES_SERIES_ANGLE {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        Quat::new(half.cos(), self.0.x * s, self.0.y * s, self.0.z * s)
    }

    /// Rotation vector of a rotation matrix; angle in `[0, pi]`.
    pub fn from_matrix(r: &Matrix3<f64>) -> AxisAngle {
        let tr = ((r[(0, 0)] + r[(1, 1)] + r[(2, 2)] - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = tr.acos();
        let axis_raw = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        if theta < 1e-7 {
            return AxisAngle(axis_raw * 0.5);
        }
        if std::f64::consts::PI - theta < 1e-5 {
            // Near a half turn the skew part vanishes; recover the axis from
            // the symmetric part instead.
            let m = (r + Matrix3::identity()) * 0.5;
            let mut axis = Vector3::new(m[(0, 0)].max(0.0), m[(1, 1)].max(0.0), m[(2, 2)].max(0.0))
                .map(f64::sqrt);
            // Fix relative signs using the largest component.
            let imax = (0..3)
                .max_by(|&a, &b| axis[a].partial_cmp(&axis[b]).unwrap())
                .unwrap();
            for j in 0..3 {
                if j != imax && m[(imax, j)] < 0.0 {
                    axis[j] = -axis[j];
                }
            }
            if axis_raw.dot(&axis) < 0.0 {
                axis = -axis;
            }
            if axis.norm() > 0.0 {
                axis = axis.normalize();
            }
            return AxisAngle(axis * theta);
        }
        AxisAngle(axis_raw * (theta / (2.0 * theta.sin())))
    }
}

/// `sin(t)/t` and `(1-cos(t))/t^2` with series fallbacks near zero.
fn rodrigues_coeffs(theta: f64) -> (f64, f64) {
    if theta < RODRIGUES_SERIES_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// `a'(t)/t` and `b'(t)/t`, both finite at zero.
fn rodrigues_coeff_rates(theta: f64) -> (f64, f64) {
    if theta < RODRIGUES_SERIES_ANGLE {
        let t2 = theta * theta;
        (-1.0 / 3.0 + t2 / 30.0, -1.0 / 12.0 + t2 / 180.0)
    } else {
        let t2 = theta * theta;
        let p = (theta * theta.cos() - theta.sin()) / (t2 * theta);
        let q = (theta * theta.sin() - 2.0 * (1.0 - theta.cos())) / (t2 * t2);
        (p, q)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Rotation {
    pub fn identity(chart: Chart) -> Rotation {
        match chart {
            Chart::Quat => Rotation::Quat(Quat::identity()),
            Chart::Rodrigues => Rotation::Rodrigues(AxisAngle::identity()),
        }
    }

    pub fn chart(&self) -> Chart {
        match self {
            Rotation::Quat(_) => Chart::Quat,
            Rotation::Rodrigues(_) => Chart::Rodrigues,
        }
    }

    pub fn dof(&self) -> usize {
        self.chart().dof()
    }

    pub fn matrix(&self) -> Result<Matrix3<f64>> {
        match self {
            Rotation::Quat(q) => q.to_matrix(),
            Rotation::Rodrigues(v) => Ok(v.to_matrix()),
        }
    }

    pub fn matrix_jacobian(&self) -> Result<(Matrix3<f64>, RotationJacobian)> {
        match self {
            Rotation::Quat(q) => q.to_matrix_jacobian(),
            Rotation::Rodrigues(v) => Ok(v.to_matrix_jacobian()),
        }
    }

    /// Re-express the same rotation in another chart.
    pub fn to_chart(&self, chart: Chart) -> Result<Rotation> {
        if self.chart() == chart {
            return Ok(*self);
        }
        let m = self.matrix()?;
        Ok(match chart {
            Chart::Quat => Rotation::Quat(Quat::from_matrix(&m)),
            Chart::Rodrigues => Rotation::Rodrigues(AxisAngle::from_matrix(&m)),
        })
    }

    /// Copy the chart parameters into `out` (3 or 4 slots used).
    pub fn write_params(&self, out: &mut [f64]) {
        match self {
            Rotation::Quat(q) => {
                out[0] = q.w;
                out[1] = q.x;
                out[2] = q.y;
                out[3] = q.z;
            }
            Rotation::Rodrigues(v) => {
                out[0] = v.0.x;
                out[1] = v.0.y;
                out[2] = v.0.z;
            }
        }
    }

    pub fn from_params(chart: Chart, p: &[f64]) -> Rotation {
        match chart {
            Chart::Quat => Rotation::Quat(Quat::new(p[0], p[1], p[2], p[3])),
            Chart::Rodrigues => Rotation::Rodrigues(AxisAngle::new(p[0], p[1], p[2])),
        }
    }

    /// Compose `self * rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &Rotation) -> Result<Rotation> {
        match (self, rhs) {
            (Rotation::Quat(a), Rotation::Quat(b)) => Ok(Rotation::Quat(a.mul(b))),
            _ => {
                let m = self.matrix()? * rhs.matrix()?;
                Ok(match self.chart() {
                    Chart::Quat => Rotation::Quat(Quat::from_matrix(&m)),
                    Chart::Rodrigues => Rotation::Rodrigues(AxisAngle::from_matrix(&m)),
                })
            }
        }
    }
}

/// Weak-perspective camera: uniform scale and an in-plane shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Camera {
    pub fn identity() -> Self {
        Camera {
            s: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }
}

/// Project a 3D point: scale the shifted x/y, drop z.
pub fn project(x: &Vector3<f64>, cam: &Camera) -> Vector2<f64> {
    Vector2::new(cam.s * (x.x + cam.tx), cam.s * (x.y + cam.ty))
}

/// Projection along with its Jacobians: `d(uv)/d(point)` (2x3, the z column
/// is zero) and `d(uv)/d(s, tx, ty)` (2x3).
pub fn project_jacobian(
    x: &Vector3<f64>,
    cam: &Camera,
) -> (
    Vector2<f64>,
    nalgebra::Matrix2x3<f64>,
    nalgebra::Matrix2x3<f64>,
) {
    let uv = project(x, cam);
    let d_point = nalgebra::Matrix2x3::new(cam.s, 0.0, 0.0, 0.0, cam.s, 0.0);
    let d_cam = nalgebra::Matrix2x3::new(x.x + cam.tx, cam.s, 0.0, x.y + cam.ty, 0.0, cam.s);
    (uv, d_point, d_cam)
}

/// A similarity transform `p -> s * R * p + t` with `s > 0`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RigidTransform {
    pub r: Rotation,
    pub t: Vector3<f64>,
    pub s: f64,
}

impl RigidTransform {
    pub fn identity(chart: Chart) -> Self {
        RigidTransform {
            r: Rotation::identity(chart),
            t: Vector3::zeros(),
            s: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.r.matrix()? * p * self.s + self.t)
    }

    /// `self.compose(other)` applies `other` first: `(self ∘ other)(p)`.
    pub fn compose(&self, other: &RigidTransform) -> Result<RigidTransform> {
        Ok(RigidTransform {
            r: self.r.compose(&other.r)?,
            t: self.r.matrix()? * other.t * self.s + self.t,
            s: self.s * other.s,
        })
    }
}
