use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3, Vector4};

use super::{GradientBuffer, SplatGrad};
use crate::projection::{projection_jacobian, rotation_matrix, Projection};
use crate::scene::{GaussianModel, SH_C0};

/// `∂R/∂(w, x, y, z)` for the unit quaternion `q`.
fn rotation_partials(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let t = 2.0;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * t,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * t,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * t,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * t,
    ]
}

/// Chains screen-space partials back to the stored parameters.
///
/// Mean: through both the projected center and the Jacobian `J(t)`.
/// Covariance: `(Σ')⁻¹ → Σ' = J W Σ Wᵀ Jᵀ + εI → Σ = M Mᵀ, M = R S`.
/// Quaternion gradients are projected onto the tangent of the unit sphere;
/// log-scale and raw-opacity gradients include the exp / sigmoid factors.
pub fn backproject_gradients(model: &GaussianModel, projection: &Projection, grads: &[SplatGrad]) -> GradientBuffer {
    assert_eq!(grads.len(), projection.splats.len());
    let cam = &projection.camera;
    let wrot = cam.rotation;
    let mut out = GradientBuffer::zeros(model.len());

    for (pg, g) in projection.splats.iter().zip(grads) {
        let i = pg.source_index;
        let t = pg.cam_point;
        let (x, y, z) = (t.x, t.y, t.z);
        let (fx, fy) = (cam.fx, cam.fy);
        let iz = 1.0 / z;
        let iz2 = iz * iz;

        // inverse covariance -> covariance
        let [qa, qb, qc] = pg.conic;
        let q = Matrix2::new(qa, qb, qb, qc);
        let gq = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
        let g_cov2d = -(q * gq * q);

        let j: Matrix2x3<f64> = projection_jacobian(cam, &t);
        let quat = model.rotations[i].normalize();
        let rot = rotation_matrix(&quat);
        let scale = model.scale(i);
        let m = rot * Matrix3::from_diagonal(&scale);
        let sigma = m * m.transpose();
        let sigma_cam = wrot * sigma * wrot.transpose();

        let g_sigma_cam = j.transpose() * g_cov2d * j;
        let g_j = 2.0 * g_cov2d * j * sigma_cam;

        let (gu, gv) = (g.mean2d[0], g.mean2d[1]);
        let g_t = Vector3::new(
            gu * fx * iz - g_j[(0, 2)] * fx * iz2,
            gv * fy * iz - g_j[(1, 2)] * fy * iz2,
            -gu * fx * x * iz2 - gv * fy * y * iz2 - g_j[(0, 0)] * fx * iz2
                + g_j[(0, 2)] * 2.0 * fx * x * iz2 * iz
                - g_j[(1, 1)] * fy * iz2
                + g_j[(1, 2)] * 2.0 * fy * y * iz2 * iz,
        );
        out.d_means[i] += wrot.transpose() * g_t;

        let g_sigma = wrot.transpose() * g_sigma_cam * wrot;
        let g_m = 2.0 * g_sigma * m;
        let g_s = rot.transpose() * g_m;
        out.d_log_scales[i] += Vector3::new(
            g_s[(0, 0)] * scale.x,
            g_s[(1, 1)] * scale.y,
            g_s[(2, 2)] * scale.z,
        );

        let g_rot = g_m * Matrix3::from_diagonal(&scale);
        let partials = rotation_partials(&quat);
        let g_qhat = Vector4::from_fn(|k, _| g_rot.component_mul(&partials[k]).sum());
        let norm = model.rotations[i].norm();
        out.d_rotations[i] += (g_qhat - quat * quat.dot(&g_qhat)) / norm;

        let sigma_op = pg.opacity;
        out.d_raw_opacities[i] += g.opacity * sigma_op * (1.0 - sigma_op);

        let dc = model.sh_dc[i];
        for ch in 0..3 {
            let c = 0.5 + SH_C0 * dc[ch];
            if c > 0.0 && c < 1.0 {
                out.d_sh_dc[i][ch] += g.color[ch] * SH_C0;
            }
        }
    }
    out
}
