//! Windowed SSIM with an 11×11 Gaussian window (σ = 1.5) and zero padding,
//! plus the analytic gradient of `D-SSIM = (1 - mean SSIM) / 2`.

use super::ImageLoss;
use crate::scene::Image;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian blur with zero padding ("same" output size).
/// The kernel is symmetric, so this is also its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut acc = 0.0;
            for xx in lo..=hi {
                acc += k[xx + r - x] * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut acc = 0.0;
            for yy in lo..=hi {
                acc += k[yy + r - y] * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "ssim inputs {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Per-channel SSIM and, optionally, `∂(Σ_p S(p))/∂x` for the first image.
fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let k = kernel();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let m1 = blur(x, w, h, &k);
    let m2 = blur(y, w, h, &k);
    let e11 = blur(&sq(x, x), w, h, &k);
    let e22 = blur(&sq(y, y), w, h, &k);
    let e12 = blur(&sq(x, y), w, h, &k);

    let n = w * h;
    let mut sum = 0.0;
    let (mut d_m1, mut d_e11, mut d_e12) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (mu1, mu2) = (m1[p], m2[p]);
        let s11 = e11[p] - mu1 * mu1;
        let s22 = e22[p] - mu2 * mu2;
        let s12 = e12[p] - mu1 * mu2;
        let a1 = 2.0 * mu1 * mu2 + SSIM_C1;
        let a2 = 2.0 * s12 + SSIM_C2;
        let b1 = mu1 * mu1 + mu2 * mu2 + SSIM_C1;
        let b2 = s11 + s22 + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        sum += s;
        if want_grad {
            d_m1[p] = s * (2.0 * mu2 / a1 - 2.0 * mu2 / a2 - 2.0 * mu1 / b1 + 2.0 * mu1 / b2);
            d_e11[p] = -s / b2;
            d_e12[p] = 2.0 * s / a2;
        }
    }
    if !want_grad {
        return (sum, None);
    }
    let g_m1 = blur(&d_m1, w, h, &k);
    let g_e11 = blur(&d_e11, w, h, &k);
    let g_e12 = blur(&d_e12, w, h, &k);
    let grad = (0..n)
        .map(|p| g_m1[p] + 2.0 * x[p] * g_e11[p] + y[p] * g_e12[p])
        .collect();
    (sum, Some(grad))
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let total: f64 = (0..3)
        .map(|c| ssim_channel(&plane(a, c), &plane(b, c), w, h, false).0)
        .sum();
    Ok(total / (3 * w * h) as f64)
}

/// `(1 - SSIM) / 2` and its gradient with respect to `rendered`.
pub fn dssim_loss(rendered: &Image, target: &Image) -> Result<ImageLoss> {
    check(rendered, target)?;
    let (w, h) = (rendered.width, rendered.height);
    let n = (3 * w * h) as f64;
    let mut grad = Image::new(w, h);
    let mut total = 0.0;
    for c in 0..3 {
        let (s, g) = ssim_channel(&plane(rendered, c), &plane(target, c), w, h, true);
        total += s;
        for (p, gv) in g.expect("gradient requested").into_iter().enumerate() {
            grad.data[3 * p + c] = -0.5 * gv / n;
        }
    }
    Ok(ImageLoss {
        value: 0.5 * (1.0 - total / n),
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 2D windowed SSIM, written without the separable blur or the
    /// moment-map formulation.
    fn ssim_direct(a: &Image, b: &Image) -> f64 {
        let half = (SSIM_WINDOW / 2) as isize;
        let mut win = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
        let mut norm = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                norm += *v;
            }
        }
        let (w, h) = (a.width as isize, a.height as isize);
        let mut total = 0.0;
        for c in 0..3 {
            for py in 0..h {
                for px in 0..w {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in -half..=half {
                        for j in -half..=half {
                            let (qx, qy) = (px + j, py + i);
                            if qx < 0 || qy < 0 || qx >= w || qy >= h {
                                continue;
                            }
                            let wt = win[(i + half) as usize][(j + half) as usize] / norm;
                            let va = a.pixel(qx as usize, qy as usize)[c];
                            let vb = b.pixel(qx as usize, qy as usize)[c];
                            mx += wt * va;
                            my += wt * vb;
                            xx += wt * va * va;
                            yy += wt * vb * vb;
                            xy += wt * va * vb;
                        }
                    }
                    let vx = xx - mx * mx;
                    let vy = yy - my * my;
                    let cxy = xy - mx * my;
                    total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                }
            }
        }
        total / (3 * a.width * a.height) as f64
    }

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn identical_images() {
        let a = noise(16, 13, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(dssim_loss(&a, &a).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn rejects_small_images() {
        let a = Image::new(10, 20);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn noise_vs_constant_matches_direct() {
        let a = noise(20, 17, 11);
        let b = Image::filled(20, 17, [0.5; 3]);
        let fast = ssim(&a, &b).unwrap();
        let direct = ssim_direct(&a, &b);
        assert!((fast - direct).abs() < 1e-4, "{fast} vs {direct}");
        assert!((fast - direct).abs() < 1e-12, "{fast} vs {direct}");
        let d = dssim_loss(&a, &b).unwrap().value;
        assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = noise(16, 16, 5);
        let b = noise(16, 16, 6);
        let loss = dssim_loss(&a, &b).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..40 {
            let k = rng.random_range(0..a.data.len());
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[k] += h;
            m.data[k] -= h;
            let fd = (dssim_loss(&p, &b).unwrap().value - dssim_loss(&m, &b).unwrap().value) / (2.0 * h);
            let an = loss.grad.data[k];
            assert!(
                (fd - an).abs() <= 1e-4 * an.abs().max(1e-6),
                "index {k}: fd {fd} vs analytic {an}"
            );
        }
    }
}
