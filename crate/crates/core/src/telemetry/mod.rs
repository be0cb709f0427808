//! Diagnostic artifacts: per-tile list-length and per-pixel entropy heatmaps,
//! length/scale/opacity histograms and per-phase timing summaries.
//!
//! Every artifact is written as a CSV with the raw numbers; heatmaps also get
//! a PNG through the fixed [`colormap::VIRIDIS`] table, so the images are
//! reproducible byte for byte.

pub mod colormap;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::projection::project;
use crate::rasterizer::{bin_and_sort, render, RenderSettings};
use crate::scene::{Camera, Dataset, GaussianModel};
use crate::trainer::LogRow;
use crate::{Error, Result};

use colormap::VIRIDIS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapKind {
    ListLength,
    Entropy,
}

impl std::str::FromStr for HeatmapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "length" => Ok(HeatmapKind::ListLength),
            "entropy" => Ok(HeatmapKind::Entropy),
            other => Err(Error::Config(format!("unknown heatmap kind {other:?}"))),
        }
    }
}

/// Color normalization range. `lo == hi` maps everything to the lowest color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorScale {
    pub lo: f64,
    pub hi: f64,
}

impl ColorScale {
    pub fn of(values: &[f64]) -> Self {
        Self::shared(&[values])
    }

    /// One range covering every value set, for side-by-side comparisons.
    pub fn shared(sets: &[&[f64]]) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in sets.iter().flat_map(|s| s.iter()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if lo > hi {
            (lo, hi) = (0.0, 0.0);
        }
        Self { lo, hi }
    }

    pub fn color(&self, v: f64) -> [u8; 3] {
        let t = if self.hi > self.lo { ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0) } else { 0.0 };
        VIRIDIS[(t * 255.0).round() as usize]
    }
}

/// A grid of scalar values (tiles or pixels), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub kind: HeatmapKind,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Side of the pixel block each cell covers in the PNG.
    pub cell: u32,
}

impl Heatmap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn to_rgb8(&self, scale: ColorScale) -> image::RgbImage {
        let c = self.cell.max(1);
        let (w, h) = (self.width as u32 * c, self.height as u32 * c);
        image::RgbImage::from_fn(w.max(1), h.max(1), |x, y| {
            let i = (y / c) as usize * self.width + (x / c) as usize;
            image::Rgb(self.values.get(i).map_or(VIRIDIS[0], |&v| scale.color(v)))
        })
    }
}

/// Per-tile list lengths at full resolution, straight from the binning pass.
pub fn tile_heatmap(model: &GaussianModel, camera: &Camera, tile_size: u32) -> Heatmap {
    let p = project(model, camera, 1, tile_size);
    let bins = bin_and_sort(&p.splats, &p.grid);
    Heatmap {
        kind: HeatmapKind::ListLength,
        width: bins.grid.tiles_x as usize,
        height: bins.grid.tiles_y as usize,
        values: bins.list_lengths().into_iter().map(f64::from).collect(),
        cell: tile_size,
    }
}

/// Per-pixel entropy of the blending weights at full resolution.
pub fn entropy_heatmap(model: &GaussianModel, camera: &Camera, settings: &RenderSettings) -> Heatmap {
    let frame = render(model, camera, 1, settings, true);
    Heatmap {
        kind: HeatmapKind::Entropy,
        width: camera.width as usize,
        height: camera.height as usize,
        values: frame.output.entropy.expect("entropy requested"),
        cell: 1,
    }
}

pub fn heatmap(model: &GaussianModel, camera: &Camera, kind: HeatmapKind, settings: &RenderSettings) -> Heatmap {
    match kind {
        HeatmapKind::ListLength => tile_heatmap(model, camera, settings.tile_size),
        HeatmapKind::Entropy => entropy_heatmap(model, camera, settings),
    }
}

#[derive(Clone, Debug)]
pub struct HeatmapFiles {
    pub png: PathBuf,
    pub csv: PathBuf,
    pub mean: f64,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `{stem}.png` and `{stem}.csv`; entropy maps also get
/// `{stem}_summary.txt` with the mean. `scale` defaults to the map's own range.
pub fn write_heatmap(map: &Heatmap, dir: &Path, stem: &str, scale: Option<ColorScale>) -> Result<HeatmapFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scale = scale.unwrap_or_else(|| ColorScale::of(&map.values));
    let png = dir.join(format!("{stem}.png"));
    map.to_rgb8(scale).save(&png)?;
    let csv = dir.join(format!("{stem}.csv"));
    write_text(&csv, &map.to_csv())?;
    let mean = map.mean();
    if map.kind == HeatmapKind::Entropy {
        write_text(&dir.join(format!("{stem}_summary.txt")), &format!("mean_entropy = {mean}\n"))?;
    }
    Ok(HeatmapFiles { png, csv, mean })
}

/// Fixed-range histogram. Values outside the range land in the edge bins,
/// so counts always sum to the number of samples added.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// Bin edges are uniform in `log10(x)` when set; `lo`/`hi` are then log10 values.
    pub log10: bool,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize, log10: bool) -> Self {
        assert!(bins > 0 && hi > lo);
        Self { lo, hi, log10, counts: vec![0; bins] }
    }

    pub fn add(&mut self, x: f64) {
        let v = if self.log10 { x.log10() } else { x };
        let n = self.counts.len();
        let t = (v - self.lo) / (self.hi - self.lo) * n as f64;
        let i = if t.is_nan() { 0 } else { (t.floor().max(0.0) as usize).min(n - 1) };
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Edges of bin `i` in data units.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        let (a, b) = (self.lo + w * i as f64, self.lo + w * (i + 1) as f64);
        if self.log10 {
            (10f64.powf(a), 10f64.powf(b))
        } else {
            (a, b)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (a, b) = self.edges(i);
            let _ = writeln!(s, "{a},{b},{c}");
        }
        s
    }

    /// Mean and variance of the samples, using bin centers.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.total().max(1) as f64;
        let centers: Vec<f64> = (0..self.counts.len())
            .map(|i| {
                let (a, b) = self.edges(i);
                0.5 * (a + b)
            })
            .collect();
        let mean = self.counts.iter().zip(&centers).map(|(&c, x)| c as f64 * x).sum::<f64>() / n;
        let var = self.counts.iter().zip(&centers).map(|(&c, x)| c as f64 * (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

pub const HISTOGRAM_BINS: usize = 50;

/// Per-tile list lengths over the given views, max scale per Gaussian (log
/// axis) and opacity per Gaussian on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramSet {
    pub list_length: Histogram,
    pub max_scale: Histogram,
    pub opacity: Histogram,
}

pub fn distributions(model: &GaussianModel, dataset: &Dataset, views: &[usize], tile_size: u32) -> HistogramSet {
    let lengths: Vec<u32> = views
        .iter()
        .flat_map(|&v| {
            let p = project(model, &dataset.cameras[v], 1, tile_size);
            bin_and_sort(&p.splats, &p.grid).list_lengths()
        })
        .collect();
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let mut list_length = Histogram::new(0.0, f64::from(max_len + 1), HISTOGRAM_BINS, false);
    lengths.iter().for_each(|&l| list_length.add(f64::from(l)));

    let max_scales: Vec<f64> = (0..model.len()).map(|i| model.scale(i).max()).collect();
    let (mut lo, mut hi) = max_scales
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.log10()), b.max(s.log10())));
    if !(lo.is_finite() && hi.is_finite()) {
        (lo, hi) = (-3.0, 0.0);
    }
    if hi - lo < 1e-6 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let mut max_scale = Histogram::new(lo, hi, HISTOGRAM_BINS, true);
    max_scales.iter().for_each(|&s| max_scale.add(s));

    let mut opacity = Histogram::new(0.0, 1.0, HISTOGRAM_BINS, false);
    (0..model.len()).for_each(|i| opacity.add(model.opacity(i)));

    HistogramSet { list_length, max_scale, opacity }
}

/// Writes `hist_length.csv`, `hist_scale.csv` and `hist_opacity.csv`.
pub fn write_distributions(set: &HistogramSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("hist_length.csv"), &set.list_length.to_csv())?;
    write_text(&dir.join("hist_scale.csv"), &set.max_scale.to_csv())?;
    write_text(&dir.join("hist_opacity.csv"), &set.opacity.to_csv())
}

/// Mean per-iteration milliseconds for project, forward (incl. sort),
/// backward and optimizer step over the last `window` log rows.
pub fn timing_breakdown(log: &[LogRow], window: usize) -> [f64; 4] {
    let rows = &log[log.len().saturating_sub(window)..];
    let n = rows.len().max(1) as f64;
    let mut out = [0.0; 4];
    for r in rows {
        out[0] += r.t_project_ms;
        out[1] += r.t_forward_ms;
        out[2] += r.t_backward_ms;
        out[3] += r.t_step_ms;
    }
    out.map(|v| v / n)
}

pub fn write_timing_breakdown(log: &[LogRow], window: usize, path: &Path) -> Result<()> {
    let t = timing_breakdown(log, window);
    let text = format!(
        "phase,mean_ms\nproject,{}\nforward,{}\nbackward,{}\nstep,{}\n",
        t[0], t[1], t[2], t[3]
    );
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector3, Vector4};

    fn camera() -> Camera {
        Camera::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), Vector3::y(), 64.0, 32, 32).unwrap()
    }

    #[test]
    fn empty_model_heatmap_is_flat() {
        let map = tile_heatmap(&GaussianModel::default(), &camera(), 8);
        assert_eq!((map.width, map.height), (4, 4));
        assert!(map.values.iter().all(|&v| v == 0.0));
        let img = map.to_rgb8(ColorScale::of(&map.values));
        assert!(img.pixels().all(|p| p.0 == VIRIDIS[0]));
    }

    #[test]
    fn single_tile_splat() {
        let cam = camera();
        // a tiny splat projecting near pixel (20, 20): tile (2, 2)
        let z = 4.0;
        let px = 20.0;
        let x = (px - cam.cx) * z / cam.fx;
        let mut m = GaussianModel::default();
        // camera looks along +z from (0,0,-4); image x follows world -x for up = +y
        let world = cam.rotation.transpose() * (Vector3::new(x, x, z) - cam.translation);
        m.push(world, Vector3::repeat(0.005), Vector4::new(1.0, 0.0, 0.0, 0.0), 0.9, Vector3::repeat(0.5));
        let map = tile_heatmap(&m, &cam, 8);
        let nonzero: Vec<usize> = (0..map.values.len()).filter(|&i| map.values[i] > 0.0).collect();
        assert_eq!(nonzero, vec![2 * 4 + 2]);
    }

    #[test]
    fn histogram_conservation() {
        let mut m = GaussianModel::default();
        for i in 0..37 {
            m.push(Vector3::new(i as f64 * 0.01, 0.0, 0.0), Vector3::new(0.01, 0.02 * (1.0 + i as f64), 0.01), Vector4::new(1.0, 0.0, 0.0, 0.0), 0.5, Vector3::repeat(0.5));
        }
        let cam = camera();
        let data = Dataset::new(vec![cam.clone()], vec![crate::Image::new(32, 32)], 0).unwrap();
        let set = distributions(&m, &data, &[0], 8);
        assert_eq!(set.opacity.total(), 37);
        assert_eq!(set.max_scale.total(), 37);
        assert_eq!(set.list_length.total(), 16);
        let occupied: Vec<u64> = set.opacity.counts.iter().copied().filter(|&c| c > 0).collect();
        assert_eq!(occupied, vec![37]);
        assert_eq!(set.opacity.to_csv().lines().count(), HISTOGRAM_BINS + 1);
    }

    #[test]
    fn shared_scale_covers_both() {
        let s = ColorScale::shared(&[&[1.0, 3.0], &[0.5, 2.0]]);
        assert_eq!((s.lo, s.hi), (0.5, 3.0));
        assert_eq!(s.color(3.0), VIRIDIS[255]);
        assert_eq!(s.color(0.5), VIRIDIS[0]);
    }
}
