use nalgebra::{Matrix3, Vector3, Vector4};

/// Zeroth-order real spherical harmonic, `1 / (2√π)`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// The learnable Gaussian set, held in its unconstrained parameterization.
///
/// * scales are stored as natural logs,
/// * opacities are stored pre-sigmoid,
/// * rotations are `(w, x, y, z)` quaternions, renormalized after every step,
/// * colors are degree-0 SH coefficients; `rgb = 0.5 + SH_C0 · dc`, clamped to `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianModel {
    pub means: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub raw_opacities: Vec<f64>,
    pub sh_dc: Vec<Vector3<f64>>,
}

impl GaussianModel {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            means: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            raw_opacities: Vec::with_capacity(n),
            sh_dc: Vec::with_capacity(n),
        }
    }

    /// Appends a Gaussian given in linear space (scale, opacity in (0,1), rgb).
    pub fn push(
        &mut self,
        mean: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: Vector4<f64>,
        opacity: f64,
        rgb: Vector3<f64>,
    ) {
        self.means.push(mean);
        self.log_scales.push(scale.map(f64::ln));
        self.rotations.push(rotation.normalize());
        self.raw_opacities.push(logit(opacity));
        self.sh_dc.push(rgb.map(|c| (c - 0.5) / SH_C0));
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.raw_opacities[i])
    }

    pub fn color(&self, i: usize) -> Vector3<f64> {
        self.sh_dc[i].map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0))
    }

    /// World-space covariance `R S Sᵀ Rᵀ` of Gaussian `i`.
    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        crate::projection::build_covariance(&self.scale(i), &self.rotations[i])
    }

    pub fn renormalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = q.norm();
            if n > 0.0 {
                *q /= n;
            }
        }
    }

    /// Checks the structural invariants: equal lengths, finite parameters,
    /// nonzero quaternions.
    pub fn validate(&self) -> crate::Result<()> {
        let n = self.means.len();
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.raw_opacities.len() != n
            || self.sh_dc.len() != n
        {
            return Err(crate::Error::Shape(format!(
                "gaussian arrays disagree: means {}, scales {}, rotations {}, opacities {}, colors {}",
                n,
                self.log_scales.len(),
                self.rotations.len(),
                self.raw_opacities.len(),
                self.sh_dc.len()
            )));
        }
        for i in 0..n {
            let finite = self.means[i].iter().all(|v| v.is_finite())
                && self.log_scales[i].iter().all(|v| v.exp().is_finite() && v.exp() > 0.0)
                && self.rotations[i].iter().all(|v| v.is_finite())
                && self.raw_opacities[i].is_finite()
                && self.sh_dc[i].iter().all(|v| v.is_finite());
            if !finite {
                return Err(crate::Error::Shape(format!("gaussian {i} has a non-finite parameter")));
            }
            if self.rotations[i].norm() == 0.0 {
                return Err(crate::Error::Shape(format!("gaussian {i} has a zero quaternion")));
            }
        }
        Ok(())
    }
}
