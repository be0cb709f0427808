//! Analytic gradients of `L_base + γ·L_E` with respect to every Gaussian
//! parameter, in the stored parameterization.
//!
//! The pass has two stages:
//!
//! 1. [`render_backward`] walks each pixel's list front to back again,
//!    recomputing `T_i`, and produces screen-space partials per splat
//!    (opacity, 2D mean, inverse 2D covariance, color). Photometric and
//!    entropy contributions are summed into a single `∂L/∂α_i` first.
//! 2. [`backproject_gradients`] chains those through EWA projection and
//!    `Σ = R S Sᵀ Rᵀ` into means, log-scales, quaternions, raw opacities and
//!    SH-DC colors.

mod backproject;
pub mod entropy;

pub use backproject::backproject_gradients;
pub use entropy::{blend_weights, entropy_grad_alpha, entropy_grad_alpha_with_state, EntropyBackwardState};

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::projection::ProjectedGaussian;
use crate::rasterizer::{sample, Frame, RenderSettings};
use crate::scene::{GaussianModel, Image};

/// Gradients in the stored parameterization, shaped like [`GaussianModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    pub d_means: Vec<Vector3<f64>>,
    pub d_log_scales: Vec<Vector3<f64>>,
    pub d_rotations: Vec<nalgebra::Vector4<f64>>,
    pub d_raw_opacities: Vec<f64>,
    pub d_sh_dc: Vec<Vector3<f64>>,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_means: vec![Vector3::zeros(); n],
            d_log_scales: vec![Vector3::zeros(); n],
            d_rotations: vec![nalgebra::Vector4::zeros(); n],
            d_raw_opacities: vec![0.0; n],
            d_sh_dc: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_means.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.d_means.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_raw_opacities.iter().all(|x| x.is_finite())
            && self.d_sh_dc.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Screen-space partials for one projected splat.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    /// `∂L/∂σ` (post-sigmoid opacity).
    pub opacity: f64,
    pub mean2d: [f64; 2],
    /// `∂L/∂(a, b, c)` of the packed inverse covariance; `b` is the single
    /// off-diagonal parameter (it appears twice in the quadratic form).
    pub conic: [f64; 3],
    /// `∂L/∂rgb` (post-clamp color).
    pub color: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.opacity += o.opacity;
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
    }
}

/// Partials of a scalar with respect to the splat attributes that shape `α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaPartials {
    pub d_opacity: f64,
    pub d_mean2d: Vector2<f64>,
    /// Same packing as [`SplatGrad::conic`].
    pub d_conic: [f64; 3],
}

impl AlphaPartials {
    pub const ZERO: AlphaPartials = AlphaPartials {
        d_opacity: 0.0,
        d_mean2d: Vector2::new(0.0, 0.0),
        d_conic: [0.0; 3],
    };

    /// Gradient with respect to the full symmetric matrix `(Σ')⁻¹`.
    pub fn d_inv_cov(&self) -> Matrix2<f64> {
        let off = 0.5 * self.d_conic[1];
        Matrix2::new(self.d_conic[0], off, off, self.d_conic[2])
    }
}

/// Chains `∂L/∂α` at pixel `(px, py)` into opacity, 2D mean and inverse
/// covariance. With `g = exp(d)`, `d = -½ (x-μ')ᵀ(Σ')⁻¹(x-μ')`:
/// `∂L/∂σ = ∂L/∂α·g`, `∂L/∂d = σ g ∂L/∂α`, `∂L/∂μ' = ∂L/∂d·(Σ')⁻¹(x-μ')`,
/// `∂L/∂(Σ')⁻¹ = ∂L/∂d·(-½ (x-μ')(x-μ')ᵀ)`.
///
/// Splats whose `α` is clamped at `alpha_max` (or skipped) get zeros.
pub fn entropy_grad_attributes(
    pg: &ProjectedGaussian,
    pixel: Vector2<f64>,
    d_alpha: f64,
    settings: &RenderSettings,
) -> AlphaPartials {
    match sample(pg, pixel.x, pixel.y, settings) {
        Some(s) if !s.clamped => chain_alpha(pg, pixel.x, pixel.y, s.falloff, d_alpha),
        _ => AlphaPartials::ZERO,
    }
}

#[inline]
fn chain_alpha(pg: &ProjectedGaussian, px: f64, py: f64, falloff: f64, d_alpha: f64) -> AlphaPartials {
    let dx = px - pg.mean2d.x;
    let dy = py - pg.mean2d.y;
    let [a, b, c] = pg.conic;
    let d_power = d_alpha * pg.opacity * falloff;
    AlphaPartials {
        d_opacity: d_alpha * falloff,
        d_mean2d: Vector2::new(d_power * (a * dx + b * dy), d_power * (b * dx + c * dy)),
        d_conic: [-0.5 * d_power * dx * dx, -d_power * dx * dy, -0.5 * d_power * dy * dy],
    }
}

#[derive(Clone, Copy)]
struct Entry {
    pos: u32,
    alpha: f64,
    falloff: f64,
    clamped: bool,
    t: f64,
}

/// Screen-space backward pass.
///
/// `d_color` is `∂L/∂C` per pixel at the rendered resolution; `entropy_scale`
/// multiplies `∂H_j/∂α` for every pixel (pass `γ / M`, or 0 to skip the
/// entropy term). Returns one [`SplatGrad`] per entry of
/// `frame.projection.splats`. Tiles are processed in parallel and merged in
/// tile order, so the result does not depend on the worker count.
pub fn render_backward(
    frame: &Frame,
    d_color: &Image,
    entropy_scale: f64,
    settings: &RenderSettings,
) -> Vec<SplatGrad> {
    let grid = frame.bins.grid;
    let splats = &frame.projection.splats;
    let out = &frame.output;
    assert_eq!((d_color.width, d_color.height), (grid.width as usize, grid.height as usize));
    let w = grid.width as usize;

    let per_tile: Vec<Vec<SplatGrad>> = (0..grid.tile_count())
        .into_par_iter()
        .map(|ti| {
            let list = &frame.bins.lists[ti];
            let mut grads = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return grads;
            }
            let mut scratch: Vec<Entry> = Vec::with_capacity(list.len());
            let mut weights: Vec<f64> = Vec::new();
            let mut d_alpha: Vec<f64> = Vec::with_capacity(list.len());
            let (x0, y0, x1, y1) = grid.tile_pixels(ti);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y as usize * w + x as usize;
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let g = d_color.pixel(x as usize, y as usize);
                    if g == [0.0; 3] && entropy_scale == 0.0 {
                        continue;
                    }
                    scratch.clear();
                    let mut t = 1.0;
                    for (pos, &k) in list[..out.traversed[p] as usize].iter().enumerate() {
                        if let Some(s) = sample(&splats[k as usize], px, py, settings) {
                            scratch.push(Entry {
                                pos: pos as u32,
                                alpha: s.alpha,
                                falloff: s.falloff,
                                clamped: s.clamped,
                                t,
                            });
                            t *= 1.0 - s.alpha;
                        }
                    }
                    if scratch.is_empty() {
                        continue;
                    }
                    let t_final = t;
                    let color = out.image.pixel(x as usize, y as usize);

                    // photometric: ∂C/∂α_i = T_i c_i - S_i / (1 - α_i), S_i = Σ_{k>i} w_k c_k + T_final·bg
                    let mut prefix = [0.0; 3];
                    d_alpha.clear();
                    for e in &scratch {
                        let pg = &splats[list[e.pos as usize] as usize];
                        let wgt = e.t * e.alpha;
                        let c = [pg.color.x, pg.color.y, pg.color.z];
                        let mut da = 0.0;
                        for ch in 0..3 {
                            prefix[ch] += wgt * c[ch];
                            let suffix = color[ch] - prefix[ch];
                            da += g[ch] * (e.t * c[ch] - suffix / (1.0 - e.alpha));
                        }
                        d_alpha.push(da);
                        let sg = &mut grads[e.pos as usize];
                        for ch in 0..3 {
                            sg.color[ch] += g[ch] * wgt;
                        }
                    }

                    if entropy_scale != 0.0 {
                        weights.clear();
                        weights.extend(scratch.iter().map(|e| e.t * e.alpha));
                        weights.push(t_final);
                        let mut r = entropy::log_weight_slope(t_final) * t_final;
                        for i in (0..scratch.len()).rev() {
                            let e = &scratch[i];
                            let slope = entropy::log_weight_slope(weights[i]);
                            d_alpha[i] += entropy_scale * (-slope * e.t + r / (1.0 - e.alpha));
                            r += slope * weights[i];
                        }
                    }

                    for (e, &da) in scratch.iter().zip(&d_alpha) {
                        if e.clamped || da == 0.0 {
                            continue;
                        }
                        let pg = &splats[list[e.pos as usize] as usize];
                        let part = chain_alpha(pg, px, py, e.falloff, da);
                        let sg = &mut grads[e.pos as usize];
                        sg.opacity += part.d_opacity;
                        sg.mean2d[0] += part.d_mean2d.x;
                        sg.mean2d[1] += part.d_mean2d.y;
                        for k in 0..3 {
                            sg.conic[k] += part.d_conic[k];
                        }
                    }
                }
            }
            grads
        })
        .collect();

    let mut merged = vec![SplatGrad::default(); splats.len()];
    for (ti, grads) in per_tile.iter().enumerate() {
        for (pos, g) in grads.iter().enumerate() {
            merged[frame.bins.lists[ti][pos] as usize].add(g);
        }
    }
    merged
}

/// Full backward: screen-space pass plus back-projection.
pub fn backward(
    model: &GaussianModel,
    frame: &Frame,
    d_color: &Image,
    entropy_scale: f64,
    settings: &RenderSettings,
) -> GradientBuffer {
    let grads = render_backward(frame, d_color, entropy_scale, settings);
    backproject_gradients(model, &frame.projection, &grads)
}
