//! Tile binning, depth sorting and front-to-back alpha blending.

use rayon::prelude::*;

use crate::projection::{self, ProjectedGaussian, Projection, TileGrid};
use crate::scene::{Camera, GaussianModel, Image};

/// Blending constants. Defaults follow the usual 3DGS conventions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub tile_size: u32,
    /// Contributions with `α` below this are skipped.
    pub alpha_min: f64,
    /// `α` is clamped to at most this value.
    pub alpha_max: f64,
    /// A pixel stops blending once its transmittance drops below this.
    pub t_term: f64,
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 8,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            t_term: 1e-4,
            background: [0.0; 3],
        }
    }
}

/// One evaluated contribution of a splat at a pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Sample {
    pub alpha: f64,
    /// Gaussian falloff `g = exp(power)`.
    pub falloff: f64,
    /// `σ·g` exceeded `alpha_max`; the clamp has zero derivative.
    pub clamped: bool,
}

#[inline]
pub(crate) fn sample(pg: &ProjectedGaussian, px: f64, py: f64, settings: &RenderSettings) -> Option<Sample> {
    let power = pg.power(px, py);
    if power > 0.0 {
        return None;
    }
    let falloff = power.exp();
    let raw = pg.opacity * falloff;
    if raw < settings.alpha_min {
        return None;
    }
    let clamped = raw > settings.alpha_max;
    Some(Sample {
        alpha: if clamped { settings.alpha_max } else { raw },
        falloff,
        clamped,
    })
}

/// Per-tile splat lists sorted front to back.
#[derive(Clone, Debug, PartialEq)]
pub struct TileBins {
    pub grid: TileGrid,
    /// Indices into the projected splat array, sorted by `(depth, source_index)`.
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn list_lengths(&self) -> Vec<u32> {
        self.lists.iter().map(|l| l.len() as u32).collect()
    }

    pub fn mean_list_length(&self) -> f64 {
        if self.lists.is_empty() {
            return 0.0;
        }
        self.lists.iter().map(Vec::len).sum::<usize>() as f64 / self.lists.len() as f64
    }
}

pub fn bin_and_sort(splats: &[ProjectedGaussian], grid: &TileGrid) -> TileBins {
    let mut lists = vec![Vec::new(); grid.tile_count()];
    for (k, pg) in splats.iter().enumerate() {
        let r = pg.tile_bbox;
        debug_assert!(r.x1 < grid.tiles_x && r.y1 < grid.tiles_y, "bbox outside grid");
        for ty in r.y0..=r.y1 {
            for tx in r.x0..=r.x1 {
                lists[(ty * grid.tiles_x + tx) as usize].push(k as u32);
            }
        }
    }
    lists.par_iter_mut().for_each(|list| {
        list.sort_unstable_by(|&a, &b| {
            let (a, b) = (&splats[a as usize], &splats[b as usize]);
            a.depth
                .total_cmp(&b.depth)
                .then(a.source_index.cmp(&b.source_index))
        })
    });
    TileBins { grid: *grid, lists }
}

/// Forward render plus the per-pixel records needed by backward and telemetry.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Transmittance left after the last blended splat (`w_{N+1}`).
    pub final_transmittance: Vec<f64>,
    /// Number of splats actually blended.
    pub contrib_count: Vec<u32>,
    /// Number of list entries visited before termination (blended or skipped).
    pub traversed: Vec<u32>,
    pub tile_list_lengths: Vec<u32>,
    /// Per-pixel entropy of the blending weights, when requested.
    pub entropy: Option<Vec<f64>>,
}

impl RenderOutput {
    pub fn mean_entropy(&self) -> Option<f64> {
        self.entropy
            .as_ref()
            .map(|h| h.iter().sum::<f64>() / h.len().max(1) as f64)
    }
}

struct TileResult {
    color: Vec<[f64; 3]>,
    final_t: Vec<f64>,
    contrib: Vec<u32>,
    traversed: Vec<u32>,
    entropy: Vec<f64>,
}

/// Blends one pixel. Returns `(color, T_final, blended, traversed, entropy)`.
fn blend_pixel(
    list: &[u32],
    splats: &[ProjectedGaussian],
    px: f64,
    py: f64,
    settings: &RenderSettings,
    with_entropy: bool,
) -> ([f64; 3], f64, u32, u32, f64) {
    let mut t = 1.0f64;
    let mut c = [0.0f64; 3];
    let mut blended = 0u32;
    let mut visited = 0u32;
    let mut h = 0.0f64;
    for &k in list {
        visited += 1;
        let pg = &splats[k as usize];
        let Some(s) = sample(pg, px, py, settings) else {
            continue;
        };
        let w = t * s.alpha;
        c[0] += w * pg.color.x;
        c[1] += w * pg.color.y;
        c[2] += w * pg.color.z;
        if with_entropy {
            h -= crate::losses::entropy_term(w);
        }
        t *= 1.0 - s.alpha;
        blended += 1;
        if t < settings.t_term {
            break;
        }
    }
    for (ch, bg) in c.iter_mut().zip(settings.background) {
        *ch += t * bg;
    }
    if with_entropy {
        h -= crate::losses::entropy_term(t);
    }
    (c, t, blended, visited, h)
}

pub fn blend_forward(
    bins: &TileBins,
    splats: &[ProjectedGaussian],
    settings: &RenderSettings,
    with_entropy: bool,
) -> RenderOutput {
    let grid = bins.grid;
    let tiles: Vec<TileResult> = (0..grid.tile_count())
        .into_par_iter()
        .map(|ti| {
            let (x0, y0, x1, y1) = grid.tile_pixels(ti);
            let n = ((x1 - x0) * (y1 - y0)) as usize;
            let mut out = TileResult {
                color: Vec::with_capacity(n),
                final_t: Vec::with_capacity(n),
                contrib: Vec::with_capacity(n),
                traversed: Vec::with_capacity(n),
                entropy: Vec::with_capacity(if with_entropy { n } else { 0 }),
            };
            let list = &bins.lists[ti];
            for y in y0..y1 {
                for x in x0..x1 {
                    let (c, t, nb, nv, h) =
                        blend_pixel(list, splats, x as f64 + 0.5, y as f64 + 0.5, settings, with_entropy);
                    out.color.push(c);
                    out.final_t.push(t);
                    out.contrib.push(nb);
                    out.traversed.push(nv);
                    if with_entropy {
                        out.entropy.push(h);
                    }
                }
            }
            out
        })
        .collect();

    let (w, h) = (grid.width as usize, grid.height as usize);
    let mut image = Image::new(w, h);
    let mut final_transmittance = vec![0.0; w * h];
    let mut contrib_count = vec![0; w * h];
    let mut traversed = vec![0; w * h];
    let mut entropy = with_entropy.then(|| vec![0.0; w * h]);
    for (ti, tile) in tiles.iter().enumerate() {
        let (x0, y0, x1, y1) = grid.tile_pixels(ti);
        let mut k = 0;
        for y in y0 as usize..y1 as usize {
            for x in x0 as usize..x1 as usize {
                let p = y * w + x;
                image.set_pixel(x, y, tile.color[k]);
                final_transmittance[p] = tile.final_t[k];
                contrib_count[p] = tile.contrib[k];
                traversed[p] = tile.traversed[k];
                if let Some(e) = entropy.as_mut() {
                    e[p] = tile.entropy[k];
                }
                k += 1;
            }
        }
    }
    RenderOutput {
        image,
        final_transmittance,
        contrib_count,
        traversed,
        tile_list_lengths: bins.list_lengths(),
        entropy,
    }
}

/// Everything produced by one forward pass, kept together for backward.
#[derive(Clone, Debug)]
pub struct Frame {
    pub projection: Projection,
    pub bins: TileBins,
    pub output: RenderOutput,
}

pub fn render(
    model: &GaussianModel,
    camera: &Camera,
    downsample: u32,
    settings: &RenderSettings,
    with_entropy: bool,
) -> Frame {
    let projection = projection::project(model, camera, downsample, settings.tile_size);
    let bins = bin_and_sort(&projection.splats, &projection.grid);
    let output = blend_forward(&bins, &projection.splats, settings, with_entropy);
    Frame {
        projection,
        bins,
        output,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::TileRect;
    use nalgebra::{Vector2, Vector3};

    fn splat(x: f64, y: f64, depth: f64, idx: usize, rect: TileRect) -> ProjectedGaussian {
        ProjectedGaussian {
            mean2d: Vector2::new(x, y),
            conic: [1.0, 0.0, 1.0],
            cov2d: [1.0, 0.0, 1.0],
            depth,
            cam_point: Vector3::new(0.0, 0.0, depth),
            opacity: 0.5,
            color: Vector3::new(1.0, 0.0, 0.0),
            source_index: idx,
            tile_bbox: rect,
        }
    }

    #[test]
    fn disjoint_and_shared_tiles() {
        let grid = TileGrid::new(16, 16, 8);
        let a = TileRect { x0: 0, y0: 0, x1: 0, y1: 0 };
        let b = TileRect { x0: 1, y0: 1, x1: 1, y1: 1 };
        let bins = bin_and_sort(&[splat(4.0, 4.0, 1.0, 0, a), splat(12.0, 12.0, 1.0, 1, b)], &grid);
        assert_eq!(bins.list_lengths(), vec![1, 0, 0, 1]);

        let bins = bin_and_sort(&[splat(4.0, 4.0, 2.0, 0, a), splat(4.0, 4.0, 1.0, 1, a)], &grid);
        assert_eq!(bins.lists[0], vec![1, 0]);

        // equal depths fall back to source order
        let bins = bin_and_sort(&[splat(4.0, 4.0, 1.0, 7, a), splat(4.0, 4.0, 1.0, 3, a)], &grid);
        assert_eq!(bins.lists[0], vec![1, 0]);
    }

    #[test]
    fn empty_scene_is_background() {
        let grid = TileGrid::new(16, 8, 8);
        let bins = bin_and_sort(&[], &grid);
        let out = blend_forward(&bins, &[], &RenderSettings::default(), true);
        assert!(out.image.data.iter().all(|&v| v == 0.0));
        assert!(out.final_transmittance.iter().all(|&t| t == 1.0));
        assert!(out.entropy.unwrap().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn opaque_wide_splat_covers_pixel() {
        let grid = TileGrid::new(8, 8, 8);
        let mut pg = splat(4.5, 4.5, 1.0, 0, TileRect { x0: 0, y0: 0, x1: 0, y1: 0 });
        pg.conic = [1e-6, 0.0, 1e-6];
        pg.cov2d = [1e6, 0.0, 1e6];
        pg.opacity = 1.0 - 1e-12;
        pg.color = Vector3::new(0.2, 0.4, 0.6);
        let settings = RenderSettings {
            alpha_max: 1.0,
            ..Default::default()
        };
        let bins = bin_and_sort(std::slice::from_ref(&pg), &grid);
        let out = blend_forward(&bins, &[pg], &settings, false);
        let c = out.image.pixel(4, 4);
        assert!((c[0] - 0.2).abs() < 1e-9 && (c[1] - 0.4).abs() < 1e-9 && (c[2] - 0.6).abs() < 1e-9);
        assert!(out.final_transmittance[4 * 8 + 4] < 1e-9);
        assert_eq!(out.contrib_count[4 * 8 + 4], 1);
    }
}
