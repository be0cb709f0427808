use crate::losses::{psnr, ssim};
use crate::rasterizer::{render, RenderSettings};
use crate::scene::{Dataset, GaussianModel};
use crate::{Error, Result};

/// Means over the evaluated views, all at full resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub psnr: f64,
    /// `None` when a view is smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub mean_entropy: f64,
    pub mean_list_length: f64,
    /// Mean number of splats blended per pixel.
    pub mean_contrib: f64,
    pub views: usize,
}

pub fn evaluate(model: &GaussianModel, dataset: &Dataset, views: &[usize], settings: &RenderSettings) -> Result<EvalMetrics> {
    if views.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let mut acc = EvalMetrics {
        psnr: 0.0,
        ssim: Some(0.0),
        mean_entropy: 0.0,
        mean_list_length: 0.0,
        mean_contrib: 0.0,
        views: views.len(),
    };
    for &v in views {
        let camera = dataset
            .cameras
            .get(v)
            .ok_or_else(|| Error::Config(format!("view {v} out of range")))?;
        let frame = render(model, camera, 1, settings, true);
        let out = &frame.output;
        let target = &dataset.images[v];
        acc.psnr += psnr(&out.image, target);
        acc.ssim = match (acc.ssim, ssim(&out.image, target)) {
            (Some(s), Ok(x)) => Some(s + x),
            _ => None,
        };
        acc.mean_entropy += out.mean_entropy().unwrap_or(0.0);
        acc.mean_list_length += frame.bins.mean_list_length();
        acc.mean_contrib += out.contrib_count.iter().map(|&c| c as f64).sum::<f64>() / out.contrib_count.len().max(1) as f64;
    }
    let n = views.len() as f64;
    Ok(EvalMetrics {
        psnr: acc.psnr / n,
        ssim: acc.ssim.map(|s| s / n),
        mean_entropy: acc.mean_entropy / n,
        mean_list_length: acc.mean_list_length / n,
        mean_contrib: acc.mean_contrib / n,
        views: views.len(),
    })
}
