//! Photometric losses, the blend-weight entropy, the opacity-polarization
//! comparison term and total-loss composition.

mod ssim;

pub use ssim::{dssim_loss, ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use crate::scene::Image;
use crate::{Error, Result};

/// Weights are floored here before taking logs.
pub const W_FLOOR: f64 = 1e-10;

/// Variance-like width of the opacity-polarization bump.
pub const OPACITY_POLARIZATION_WIDTH: f64 = 0.05;

/// `w̃ ln w̃` with `w̃ = max(w, W_FLOOR)`.
#[inline]
pub fn entropy_term(w: f64) -> f64 {
    debug_assert!(w >= 0.0, "negative blending weight {w}");
    let w = w.max(W_FLOOR);
    w * w.ln()
}

/// `H = -Σ w̃ ln w̃` over a complete weight vector (background weight last).
pub fn entropy_value(weights: &[f64]) -> f64 {
    -weights.iter().map(|&w| entropy_term(w)).sum::<f64>()
}

/// Scalar loss together with its gradient with respect to the rendered image.
#[derive(Clone, Debug)]
pub struct ImageLoss {
    pub value: f64,
    pub grad: Image,
}

fn check_shapes(rendered: &Image, target: &Image) -> Result<()> {
    if !rendered.same_shape(target) {
        return Err(Error::Shape(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    Ok(())
}

/// Mean absolute error over all channels.
pub fn l1_loss(rendered: &Image, target: &Image) -> Result<ImageLoss> {
    check_shapes(rendered, target)?;
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height);
    let mut sum = 0.0;
    for ((g, &r), &t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(ImageLoss {
        value: sum / n,
        grad,
    })
}

/// `10 log10(1 / MSE)`, capped at 60 dB.
pub fn psnr(rendered: &Image, target: &Image) -> f64 {
    let mse = rendered.mse(target);
    if mse <= 1e-6 {
        return 60.0;
    }
    (10.0 * (1.0 / mse).log10()).min(60.0)
}

/// Mean over Gaussians of `exp(-(σ-0.5)²/0.05)` and its derivative per `σ_i`.
pub fn opacity_polarization(opacities: &[f64]) -> (f64, Vec<f64>) {
    if opacities.is_empty() {
        return (0.0, Vec::new());
    }
    let n = opacities.len() as f64;
    let mut value = 0.0;
    let grad = opacities
        .iter()
        .map(|&s| {
            let d = s - 0.5;
            let e = (-d * d / OPACITY_POLARIZATION_WIDTH).exp();
            value += e;
            -2.0 * d / OPACITY_POLARIZATION_WIDTH * e / n
        })
        .collect();
    (value / n, grad)
}

/// Per-iteration loss breakdown.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l1: f64,
    pub dssim: f64,
    pub entropy: f64,
    pub opacity_reg: f64,
    pub total: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub xi: f64,
}

/// `total = (1-λ)·l1 + λ·dssim + γ·entropy + ξ·opacity_reg`.
///
/// Pass `gamma = 0` / `xi = 0` for inactive terms; those then contribute exactly 0
/// even if their part value is non-finite bookkeeping.
pub fn compose_total(l1: f64, dssim: f64, entropy: f64, opacity_reg: f64, lambda: f64, gamma: f64, xi: f64) -> LossReport {
    let mut total = (1.0 - lambda) * l1 + lambda * dssim;
    if gamma != 0.0 {
        total += gamma * entropy;
    }
    if xi != 0.0 {
        total += xi * opacity_reg;
    }
    LossReport {
        l1,
        dssim,
        entropy,
        opacity_reg,
        total,
        lambda,
        gamma,
        xi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn l1_examples() {
        let a = Image::filled(4, 3, [0.0; 3]);
        let b = Image::filled(4, 3, [1.0; 3]);
        assert_eq!(l1_loss(&a, &a).unwrap().value, 0.0);
        assert!(l1_loss(&a, &a).unwrap().grad.data.iter().all(|&g| g == 0.0));
        let l = l1_loss(&a, &b).unwrap();
        assert_eq!(l.value, 1.0);
        assert!(l.grad.data.iter().all(|&g| g == -1.0 / 36.0));
        assert!(l1_loss(&a, &Image::new(3, 4)).is_err());
    }

    #[test]
    fn l1_matches_scalar_loop() {
        let a = Image::from_fn(7, 5, |x, y| [(x * 7 + y) as f64 * 0.013 % 1.0, 0.3, (x as f64).sin().abs()]);
        let b = Image::from_fn(7, 5, |x, y| [(y * 3 + x) as f64 * 0.029 % 1.0, 0.7, 0.5]);
        let mut acc = 0.0;
        for y in 0..5 {
            for x in 0..7 {
                let (p, q) = (a.pixel(x, y), b.pixel(x, y));
                for c in 0..3 {
                    acc += (p[c] - q[c]).abs();
                }
            }
        }
        assert!((l1_loss(&a, &b).unwrap().value - acc / 105.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        // nearly all mass on one outcome; the floored tail adds W_FLOOR·|ln W_FLOOR|
        let h = entropy_value(&[1.0 - 1e-12, 1e-12]);
        let bias = -W_FLOOR * W_FLOOR.ln();
        assert!((h - bias).abs() < 1e-11, "{h}");
        assert_eq!(entropy_value(&[1.0]), 0.0);
        let h = entropy_value(&[0.25; 4]);
        assert!((h - 4f64.ln()).abs() < 1e-15);
        assert!((h - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn opacity_polarization_examples() {
        let (v, g) = opacity_polarization(&[0.5]);
        assert_eq!((v, g[0]), (1.0, 0.0));
        // exp(-5) = 0.006737946999085467
        for s in [0.0, 1.0] {
            let (v, _) = opacity_polarization(&[s]);
            assert!((v - 0.006_737_946_999_085_467).abs() < 1e-15);
        }
        let sig = [0.1, 0.37, 0.62, 0.93];
        let (_, g) = opacity_polarization(&sig);
        let h = 1e-6;
        for i in 0..sig.len() {
            let mut p = sig;
            let mut m = sig;
            p[i] += h;
            m[i] -= h;
            let fd = (opacity_polarization(&p).0 - opacity_polarization(&m).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn compose_examples() {
        let r = compose_total(0.1, 0.05, 2.0, 0.3, 0.2, 0.0, 0.0);
        assert_eq!(r.total, 0.8 * 0.1 + 0.2 * 0.05);
        let r = compose_total(0.1, 0.05, 2.0, 0.3, 0.0, 0.015, 0.0);
        assert_eq!(r.total, 0.1 + 0.015 * 2.0);
        let r = compose_total(0.1, 0.05, 2.0, 0.0, 0.2, 0.015, 0.0);
        assert!((r.total - 0.12).abs() < 1e-15);
        assert_eq!(compose_total(0.1, 0.0, f64::NAN, f64::NAN, 0.0, 0.0, 0.0).total, 0.1);
    }

    proptest! {
        #[test]
        fn entropy_bounded_and_permutation_invariant(raw in prop::collection::vec(1e-3f64..1.0, 1..40), seed in 0usize..1000) {
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let h = entropy_value(&w);
            prop_assert!(h >= -1e-12);
            prop_assert!(h <= (w.len() as f64).ln() + 1e-12);
            let mut p = w.clone();
            let k = seed % p.len();
            p.rotate_left(k);
            p.reverse();
            prop_assert!((entropy_value(&p) - h).abs() < 1e-12);
        }

        #[test]
        fn compose_is_linear(parts in prop::array::uniform4(0.0f64..5.0), k in 0.0f64..3.0) {
            let (l, g, x) = (0.2, 0.015, 0.01);
            let a = compose_total(parts[0], parts[1], parts[2], parts[3], l, g, x).total;
            let b = compose_total(k * parts[0], k * parts[1], k * parts[2], k * parts[3], l, g, x).total;
            prop_assert!((b - k * a).abs() < 1e-12);
        }
    }
}
