//! Head pose from six 2D-3D correspondences: a normalized direct linear
//! transform for the initial estimate, refined by Levenberg-Marquardt on the
//! reprojection error.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, SMatrix, SVector, Vector2, Vector3, Vector4};

use super::camera::{project_camera_point, CameraIntrinsics, Pose};
use super::landmarks::FaceModel3D;
use crate::error::{Error, Result};

type Mat12 = SMatrix<f64, 12, 12>;
type Mat6 = SMatrix<f64, 6, 6>;
type Vec6 = SVector<f64, 6>;

/// Similarity normalizing 2D points to zero mean, mean distance sqrt(2).
fn normalize_2d(points: &[[f64; 2]; 6]) -> Option<Matrix3<f64>> {
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + Vector2::from(*p)) / 6.0;
    let mean_dist = points.iter().map(|p| (Vector2::from(*p) - c).norm()).sum::<f64>() / 6.0;
    if !(mean_dist > 1e-9) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

/// Similarity normalizing 3D points to zero mean, mean distance sqrt(3).
fn normalize_3d(points: &[[f64; 3]; 6]) -> Option<Matrix4<f64>> {
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / 6.0;
    let mean_dist = points.iter().map(|p| (Vector3::from(*p) - c).norm()).sum::<f64>() / 6.0;
    if !(mean_dist > 1e-9) {
        return None;
    }
    let s = 3f64.sqrt() / mean_dist;
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t[(0, 3)] = -s * c.x;
    t[(1, 3)] = -s * c.y;
    t[(2, 3)] = -s * c.z;
    Some(t)
}

/// Closest rotation matrix (Frobenius norm) to `m`.
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    r
}

/// Initial pose from the linear projection-matrix estimate.
pub fn solve_pose_dlt(points2d: &[[f64; 2]; 6], model: &FaceModel3D, k: &CameraIntrinsics) -> Result<Pose> {
    let t2 = normalize_2d(points2d)
        .ok_or_else(|| Error::Degenerate("image points coincide".into()))?;
    let t3 = normalize_3d(model.points())
        .ok_or_else(|| Error::Degenerate("model points coincide".into()))?;

    let mut a = Mat12::zeros();
    for (i, (x, xw)) in points2d.iter().zip(model.points()).enumerate() {
        let u = t2 * Vector3::new(x[0], x[1], 1.0);
        let w = t3 * Vector4::new(xw[0], xw[1], xw[2], 1.0);
        let (u, v) = (u.x / u.z, u.y / u.z);
        for j in 0..4 {
            a[(2 * i, j)] = w[j];
            a[(2 * i, 8 + j)] = -u * w[j];
            a[(2 * i + 1, 4 + j)] = w[j];
            a[(2 * i + 1, 8 + j)] = -v * w[j];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t");
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[10]];
    if !(second_smallest > 1e-9 * largest) {
        return Err(Error::Degenerate(
            "rank-deficient linear system (collinear or coplanar configuration)".into(),
        ));
    }
    let p = v_t.row(order[11]);
    let p_norm = Matrix3x4::from_fn(|r, c| p[4 * r + c]);
    let t2_inv = t2
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("image normalization".into()))?;
    let proj = t2_inv * p_norm * t3;

    let k_inv = k
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("intrinsics not invertible".into()))?;
    let mut rt = k_inv * proj;

    // sign: model points must lie in front of the camera
    let depth: f64 = model
        .points()
        .iter()
        .map(|x| (rt * Vector4::new(x[0], x[1], x[2], 1.0)).z)
        .sum();
    if depth < 0.0 {
        rt = -rt;
    }
    let m = rt.fixed_view::<3, 3>(0, 0).into_owned();
    let scale = m.singular_values().sum() / 3.0;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate("zero-scale projection".into()));
    }
    let r = nearest_rotation(&(m / scale));
    let t: Vector3<f64> = rt.column(3) / scale;
    if !(t.z > 0.0) {
        return Err(Error::Degenerate("solution places the face behind the camera".into()));
    }
    let rotation = nalgebra::Rotation3::from_matrix_unchecked(r);
    Ok(Pose::new(rotation, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    pub lambda0: f64,
    pub tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 50,
            lambda0: 1e-3,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    /// Sum of squared reprojection residuals (pixels^2).
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
}

impl Refinement {
    pub fn rms_error(&self) -> f64 {
        (self.final_cost / 6.0).sqrt()
    }
}

fn residuals(
    rot: &Matrix3<f64>,
    t: &Vector3<f64>,
    points2d: &[[f64; 2]; 6],
    model: &FaceModel3D,
    k: &CameraIntrinsics,
) -> SVector<f64, 12> {
    let mut r = SVector::<f64, 12>::zeros();
    for (i, (x, xw)) in points2d.iter().zip(model.points()).enumerate() {
        let pc = rot * Vector3::from(*xw) + t;
        let p = project_camera_point(k, &pc);
        r[2 * i] = p[0] - x[0];
        r[2 * i + 1] = p[1] - x[1];
    }
    r
}

/// Sum of squared reprojection residuals of `pose`.
pub fn reprojection_cost(pose: &Pose, points2d: &[[f64; 2]; 6], model: &FaceModel3D, k: &CameraIntrinsics) -> f64 {
    let rot = *pose.rotation().matrix();
    residuals(&rot, &pose.translation(), points2d, model, k).norm_squared()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Damped Gauss-Newton refinement of `initial`. Parameters are a left
/// rotation increment and the translation; the damping factor is divided by
/// ten after an accepted step and multiplied by ten after a rejected one.
pub fn refine_pose_lm(
    initial: &Pose,
    points2d: &[[f64; 2]; 6],
    model: &FaceModel3D,
    k: &CameraIntrinsics,
    opts: &LmOptions,
) -> Result<Refinement> {
    if !initial.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut rot = *initial.rotation().matrix();
    let mut t = initial.translation();
    let mut r = residuals(&rot, &t, points2d, model, k);
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut lambda = opts.lambda0;
    let mut iterations = 0;

    'outer: for _ in 0..opts.max_iter {
        let mut jac = SMatrix::<f64, 12, 6>::zeros();
        for (i, xw) in model.points().iter().enumerate() {
            let rx = rot * Vector3::from(*xw);
            let pc = rx + t;
            let iz = 1.0 / pc.z;
            let d_proj = nalgebra::Matrix2x3::new(
                k.focal_x * iz,
                0.0,
                -k.focal_x * pc.x * iz * iz,
                0.0,
                k.focal_y * iz,
                -k.focal_y * pc.y * iz * iz,
            );
            let d_rot = d_proj * (-skew(&rx));
            jac.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&d_rot);
            jac.fixed_view_mut::<2, 3>(2 * i, 3).copy_from(&d_proj);
        }
        let h: Mat6 = jac.transpose() * jac;
        let g: Vec6 = jac.transpose() * r;
        if g.norm() <= opts.tol {
            break;
        }
        loop {
            let mut damped = h;
            for d in 0..6 {
                damped[(d, d)] += lambda * h[(d, d)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break 'outer;
                }
                continue;
            };
            let scale = 1.0 + t.norm();
            if step.norm() <= opts.tol * scale {
                break 'outer;
            }
            let dw = Vector3::new(step[0], step[1], step[2]);
            let cand_rot = *nalgebra::Rotation3::from_scaled_axis(dw).matrix() * rot;
            let cand_t = t + Vector3::new(step[3], step[4], step[5]);
            let cand_r = residuals(&cand_rot, &cand_t, points2d, model, k);
            let cand_cost = cand_r.norm_squared();
            if cand_cost.is_finite() && cand_cost < cost {
                let decrease = cost - cand_cost;
                rot = cand_rot;
                t = cand_t;
                r = cand_r;
                cost = cand_cost;
                iterations += 1;
                lambda = (lambda / 10.0).max(1e-15);
                if decrease <= opts.tol {
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break 'outer;
            }
        }
    }

    let pose = Pose::new(nalgebra::Rotation3::from_matrix_unchecked(rot), t);
    Ok(Refinement {
        pose,
        initial_cost,
        final_cost: cost,
        iterations,
    })
}

/// DLT initialization followed by refinement.
pub fn estimate_pose(
    points2d: &[[f64; 2]; 6],
    model: &FaceModel3D,
    k: &CameraIntrinsics,
    opts: &LmOptions,
) -> Result<Refinement> {
    let initial = solve_pose_dlt(points2d, model, k)?;
    refine_pose_lm(&initial, points2d, model, k, opts)
}
