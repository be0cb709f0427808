//! Test-side oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splat_core::backward::{backward, GradientBuffer};
use splat_core::losses::{compose_total, dssim_loss, l1_loss};
use splat_core::rasterizer::render;
use splat_core::{Camera, GaussianModel, Image, RenderSettings};

/// Blending weights and transmittances written out directly: `w_i = α_i Π_{j<i}(1-α_j)`.
pub fn naive_weights(alphas: &[f64]) -> (Vec<f64>, f64) {
    let mut w = Vec::with_capacity(alphas.len());
    for i in 0..alphas.len() {
        let mut t = 1.0;
        for a in &alphas[..i] {
            t *= 1.0 - a;
        }
        w.push(alphas[i] * t);
    }
    let residual: f64 = alphas.iter().map(|a| 1.0 - a).product();
    (w, residual)
}

pub fn naive_entropy(alphas: &[f64]) -> f64 {
    let (w, r) = naive_weights(alphas);
    w.iter().chain(std::iter::once(&r)).map(|&x| -x.max(1e-10) * x.max(1e-10).ln()).sum()
}

/// `∂H/∂α_k` by the O(N²) chain rule over every weight that depends on `α_k`.
pub fn brute_force_entropy_grad(alphas: &[f64]) -> Vec<f64> {
    let n = alphas.len();
    let (w, r) = naive_weights(alphas);
    let q = |x: f64| if x > 1e-10 { -(x.ln() + 1.0) } else { 0.0 };
    (0..n)
        .map(|k| {
            let mut g = 0.0;
            for i in 0..n {
                let dw = if i < k {
                    0.0
                } else if i == k {
                    w[k] / alphas[k]
                } else {
                    -w[i] / (1.0 - alphas[k])
                };
                g += q(w[i]) * dw;
            }
            g + q(r) * (-r / (1.0 - alphas[k]))
        })
        .collect()
}

/// Scalar training objective for one view, as a plain composition.
pub fn scalar_loss(model: &GaussianModel, cam: &Camera, target: &Image, lambda: f64, gamma: f64, settings: &RenderSettings) -> f64 {
    let frame = render(model, cam, 1, settings, gamma > 0.0);
    let img = &frame.output.image;
    let l1 = l1_loss(img, target).unwrap().value;
    let dssim = if lambda > 0.0 { dssim_loss(img, target).unwrap().value } else { 0.0 };
    let h = frame.output.mean_entropy().unwrap_or(0.0);
    compose_total(l1, dssim, h, 0.0, lambda, gamma, 0.0).total
}

pub fn analytic_grad(model: &GaussianModel, cam: &Camera, target: &Image, lambda: f64, gamma: f64, settings: &RenderSettings) -> GradientBuffer {
    let frame = render(model, cam, 1, settings, gamma > 0.0);
    let img = &frame.output.image;
    let l1 = l1_loss(img, target).unwrap();
    let mut d = l1.grad.clone();
    d.data.iter_mut().for_each(|g| *g *= 1.0 - lambda);
    if lambda > 0.0 {
        let ds = dssim_loss(img, target).unwrap();
        for (g, s) in d.data.iter_mut().zip(&ds.grad.data) {
            *g += lambda * s;
        }
    }
    let m = (img.width * img.height) as f64;
    backward(model, &frame, &d, gamma / m, settings)
}

/// Named mutable access to every raw scalar parameter.
pub fn param_names(n: usize) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for (group, width) in [("mean", 3), ("log_scale", 3), ("rotation", 4), ("opacity", 1), ("sh_dc", 3)] {
            for k in 0..width {
                out.push((format!("{group}[{i}][{k}]"), i, k));
            }
        }
    }
    out
}

pub fn param_mut<'a>(m: &'a mut GaussianModel, name: &str, i: usize, k: usize) -> &'a mut f64 {
    if name.starts_with("mean") {
        &mut m.means[i][k]
    } else if name.starts_with("log_scale") {
        &mut m.log_scales[i][k]
    } else if name.starts_with("rotation") {
        &mut m.rotations[i][k]
    } else if name.starts_with("opacity") {
        &mut m.raw_opacities[i]
    } else {
        &mut m.sh_dc[i][k]
    }
}

pub fn grad_of(g: &GradientBuffer, name: &str, i: usize, k: usize) -> f64 {
    if name.starts_with("mean") {
        g.d_means[i][k]
    } else if name.starts_with("log_scale") {
        g.d_log_scales[i][k]
    } else if name.starts_with("rotation") {
        g.d_rotations[i][k]
    } else if name.starts_with("opacity") {
        g.d_raw_opacities[i]
    } else {
        g.d_sh_dc[i][k]
    }
}

pub struct GradMismatch {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares every analytic gradient with a central difference of step `h`.
/// Passes when within `rel` relative error, or within `abs` when the
/// gradient magnitude is below `small`.
pub fn gradcheck(
    model: &GaussianModel,
    cam: &Camera,
    target: &Image,
    lambda: f64,
    gamma: f64,
    h: f64,
    rel: f64,
    abs: f64,
    small: f64,
) -> (usize, Vec<GradMismatch>) {
    let settings = RenderSettings::default();
    let g = analytic_grad(model, cam, target, lambda, gamma, &settings);
    let mut bad = Vec::new();
    let names = param_names(model.len());
    for (name, i, k) in &names {
        let mut plus = model.clone();
        *param_mut(&mut plus, name, *i, *k) += h;
        let mut minus = model.clone();
        *param_mut(&mut minus, name, *i, *k) -= h;
        let numeric = (scalar_loss(&plus, cam, target, lambda, gamma, &settings)
            - scalar_loss(&minus, cam, target, lambda, gamma, &settings))
            / (2.0 * h);
        let analytic = grad_of(&g, name, *i, *k);
        let ok = if analytic.abs().max(numeric.abs()) < small {
            (analytic - numeric).abs() <= abs
        } else {
            (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs())
        };
        if !ok {
            bad.push(GradMismatch { name: name.clone(), analytic, numeric });
        }
    }
    (names.len(), bad)
}

/// Three large, overlapping, anisotropic splats that cover a 16×16 view with
/// alpha above the cut-off everywhere and never saturate or terminate, so the
/// objective is smooth in every raw parameter.
pub fn smooth_three_gaussian_scene(seed: u64) -> (GaussianModel, Camera, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), Vector3::y(), 18.0, 16, 16).unwrap();
    let mut m = GaussianModel::default();
    for i in 0..3 {
        let mean = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), -0.4 + 0.4 * i as f64);
        let scale = Vector3::new(rng.random_range(1.6..2.4), rng.random_range(1.6..2.4), rng.random_range(1.0..2.0));
        let q = Vector4::new(1.0, rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
        let opacity = rng.random_range(0.35..0.7);
        let rgb = Vector3::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
        m.push(mean, scale, q, opacity, rgb);
    }
    // perturb quaternions off the unit sphere so the tangent projection is exercised
    for q in &mut m.rotations {
        *q *= 1.3;
    }
    let target = Image::from_fn(16, 16, |x, y| {
        let v = 0.5 + 0.4 * ((x as f64 * 0.7).sin() * (y as f64 * 0.45).cos());
        [v, 1.0 - v, 0.5 * v + 0.2]
    });
    (m, cam, target)
}
