use serde::{Deserialize, Serialize};

use crate::backward::GradientBuffer;
use crate::scene::GaussianModel;
use crate::{Error, Result};

/// Parameter groups in model order.
pub const GROUPS: [&str; 5] = ["means", "scales", "rotations", "opacities", "colors"];

/// First and second moments for one parameter group, flattened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn clear(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Learning rate per group for one step, in [`GROUPS`] order.
pub type GroupRates = [f64; 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub groups: Vec<Moments>,
}

impl AdamState {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        let widths = [3, 3, 4, 1, 3];
        Self {
            step: 0,
            beta1,
            beta2,
            eps,
            groups: widths.iter().map(|w| Moments::zeros(w * n)).collect(),
        }
    }

    pub fn scale_moments_mut(&mut self) -> &mut Moments {
        &mut self.groups[1]
    }

    /// Checks moment shapes against a model of `n` Gaussians.
    pub fn check_shapes(&self, n: usize) -> Result<()> {
        let widths = [3, 3, 4, 1, 3];
        if self.groups.len() != widths.len() {
            return Err(Error::Checkpoint(format!("expected {} moment groups", widths.len())));
        }
        for ((g, w), name) in self.groups.iter().zip(widths).zip(GROUPS) {
            if g.m.len() != w * n || g.v.len() != w * n {
                return Err(Error::Checkpoint(format!("{name} moments do not match {n} Gaussians")));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update of every parameter group.
    pub fn step(&mut self, model: &mut GaussianModel, grads: &GradientBuffer, lr: &GroupRates) {
        self.step += 1;
        let t = self.step as i32;
        let c = Coefficients {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            bias1: 1.0 - self.beta1.powi(t),
            bias2: 1.0 - self.beta2.powi(t),
        };
        let [g_means, g_scales, g_rot, g_op, g_col] = &mut self.groups[..] else {
            unreachable!("five groups")
        };
        c.update(
            model.means.iter_mut().flat_map(|v| v.iter_mut()),
            grads.d_means.iter().flat_map(|v| v.iter()),
            g_means,
            lr[0],
        );
        c.update(
            model.log_scales.iter_mut().flat_map(|v| v.iter_mut()),
            grads.d_log_scales.iter().flat_map(|v| v.iter()),
            g_scales,
            lr[1],
        );
        c.update(
            model.rotations.iter_mut().flat_map(|v| v.iter_mut()),
            grads.d_rotations.iter().flat_map(|v| v.iter()),
            g_rot,
            lr[2],
        );
        c.update(model.raw_opacities.iter_mut(), grads.d_raw_opacities.iter(), g_op, lr[3]);
        c.update(
            model.sh_dc.iter_mut().flat_map(|v| v.iter_mut()),
            grads.d_sh_dc.iter().flat_map(|v| v.iter()),
            g_col,
            lr[4],
        );
    }
}

struct Coefficients {
    beta1: f64,
    beta2: f64,
    eps: f64,
    bias1: f64,
    bias2: f64,
}

impl Coefficients {
    fn update<'a>(
        &self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = &'a f64>,
        moments: &mut Moments,
        lr: f64,
    ) {
        for (((p, &g), m), v) in params.zip(grads).zip(moments.m.iter_mut()).zip(moments.v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / self.bias1;
            let v_hat = *v / self.bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector3, Vector4};

    fn one_gaussian(x: f64) -> GaussianModel {
        let mut m = GaussianModel::default();
        m.push(Vector3::new(x, 0.0, 0.0), Vector3::repeat(1.0), Vector4::new(1.0, 0.0, 0.0, 0.0), 0.5, Vector3::repeat(0.5));
        m
    }

    #[test]
    fn matches_reference_rule_on_scalar() {
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.01);
        let mut model = one_gaussian(3.0);
        let mut adam = AdamState::new(1, b1, b2, eps);
        let (mut x, mut m, mut v) = (3.0f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = 2.0 * x;
            let mut grads = GradientBuffer::zeros(1);
            grads.d_means[0].x = 2.0 * model.means[0].x;
            adam.step(&mut model, &grads, &[lr, 0.0, 0.0, 0.0, 0.0]);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            assert!((model.means[0].x - x).abs() < 1e-12);
        }
        assert_eq!(adam.step, 50);
        // untouched groups stay put
        assert_eq!(model.log_scales[0], Vector3::zeros());
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut model = one_gaussian(5.0);
        let mut adam = AdamState::new(1, 0.9, 0.999, 1e-15);
        for k in 0..2000 {
            let mut grads = GradientBuffer::zeros(1);
            grads.d_means[0].x = 2.0 * model.means[0].x;
            let lr = 0.1 * 0.998f64.powi(k);
            adam.step(&mut model, &grads, &[lr, 0.0, 0.0, 0.0, 0.0]);
        }
        assert!(model.means[0].x.abs() < 1e-3, "{}", model.means[0].x);
    }

    #[test]
    fn shape_check() {
        let adam = AdamState::new(4, 0.9, 0.999, 1e-15);
        assert!(adam.check_shapes(4).is_ok());
        assert!(adam.check_shapes(5).is_err());
    }
}
