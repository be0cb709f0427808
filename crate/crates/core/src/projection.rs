//! World-space covariances and EWA projection to screen-space splats.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::scene::{Camera, GaussianModel};

pub const NEAR_PLANE: f64 = 0.01;
/// Means farther than this many image half-extents from the image center are culled.
pub const FRUSTUM_MARGIN: f64 = 1.3;
/// Low-pass filter added to the diagonal of the screen-space covariance (px²).
pub const COV2D_DILATION: f64 = 0.3;
pub const MIN_COV2D_DET: f64 = 1e-12;
/// Half-width of the splat footprint in standard deviations.
///
/// `exp(-k²/2) < 1/255` for `k > sqrt(2 ln 255) ≈ 3.3290`, so any pixel where
/// `α ≥ 1/255` falls inside the footprint and binning has no false negatives.
pub const EXTENT_SIGMAS: f64 = 3.33;

/// Rotation matrix of a (not necessarily unit) `(w, x, y, z)` quaternion.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let q = q.normalize();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R S Sᵀ Rᵀ` for linear scales `s` and rotation `q`.
pub fn build_covariance(scale: &Vector3<f64>, rotation: &Vector4<f64>) -> Matrix3<f64> {
    let m = rotation_matrix(rotation) * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// Local affine approximation of the perspective projection at camera point `t`.
pub fn projection_jacobian(camera: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * t.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * t.y * iz * iz,
    )
}

/// Inclusive rectangle of tile coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl TileRect {
    pub fn contains(&self, tx: u32, ty: u32) -> bool {
        (self.x0..=self.x1).contains(&tx) && (self.y0..=self.y1).contains(&ty)
    }

    pub fn tile_count(&self) -> usize {
        (self.x1 - self.x0 + 1) as usize * (self.y1 - self.y0 + 1) as usize
    }
}

/// Tiling of a `width × height` image into `tile_size`-pixel squares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: u32,
    pub width: u32,
    pub height: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
}

impl TileGrid {
    pub fn new(width: u32, height: u32, tile_size: u32) -> Self {
        assert!(tile_size > 0, "tile size must be positive");
        Self {
            tile_size,
            width,
            height,
            tiles_x: width.div_ceil(tile_size),
            tiles_y: height.div_ceil(tile_size),
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x as usize * self.tiles_y as usize
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` of tile `index` (row-major).
    pub fn tile_pixels(&self, index: usize) -> (u32, u32, u32, u32) {
        let tx = index as u32 % self.tiles_x;
        let ty = index as u32 / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size).min(self.width),
            (y0 + self.tile_size).min(self.height),
        )
    }
}

/// A Gaussian projected into pixel space for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    /// Inverse screen covariance `[[a, b], [b, c]]` stored as `[a, b, c]`.
    pub conic: [f64; 3],
    /// Dilated screen covariance, same packing as `conic`.
    pub cov2d: [f64; 3],
    pub depth: f64,
    /// Mean in camera coordinates (kept for the backward pass).
    pub cam_point: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub source_index: usize,
    pub tile_bbox: TileRect,
}

impl ProjectedGaussian {
    /// Largest eigenvalue of the dilated screen covariance.
    pub fn max_eigenvalue(&self) -> f64 {
        let [a, b, c] = self.cov2d;
        let mid = 0.5 * (a + c);
        let det = a * c - b * b;
        mid + (mid * mid - det).max(0.0).sqrt()
    }

    /// Exponent `-½ dᵀ Σ'⁻¹ d` at pixel-space point `p`.
    #[inline]
    pub fn power(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d.x;
        let dy = py - self.mean2d.y;
        let [a, b, c] = self.conic;
        -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CullStats {
    pub near: usize,
    pub frustum: usize,
    pub degenerate: usize,
    pub offscreen: usize,
}

#[derive(Clone, Debug)]
pub struct Projection {
    /// The camera actually rendered (intrinsics already divided by `r`).
    pub camera: Camera,
    pub grid: TileGrid,
    pub splats: Vec<ProjectedGaussian>,
    pub culled: CullStats,
}

/// Pixel range `[lo, hi]` whose centers lie within `radius` of `center`.
fn pixel_span(center: f64, radius: f64, size: u32) -> Option<(u32, u32)> {
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(size as f64 - 1.0);
    (lo <= hi).then_some((lo as u32, hi as u32))
}

/// Tiles touched by the `EXTENT_SIGMAS` footprint of `pg`, using the largest
/// eigenvalue as a conservative radius. `None` if the footprint misses the image.
pub fn tile_extent(pg: &ProjectedGaussian, grid: &TileGrid) -> Option<TileRect> {
    let radius = EXTENT_SIGMAS * pg.max_eigenvalue().sqrt();
    let (px0, px1) = pixel_span(pg.mean2d.x, radius, grid.width)?;
    let (py0, py1) = pixel_span(pg.mean2d.y, radius, grid.height)?;
    let ts = grid.tile_size;
    Some(TileRect {
        x0: px0 / ts,
        y0: py0 / ts,
        x1: px1 / ts,
        y1: py1 / ts,
    })
}

enum Outcome {
    Kept(ProjectedGaussian),
    Near,
    Frustum,
    Degenerate,
    Offscreen,
}

fn project_one(model: &GaussianModel, camera: &Camera, grid: &TileGrid, i: usize) -> Outcome {
    let t = camera.world_to_camera(&model.means[i]);
    if t.z <= NEAR_PLANE {
        return Outcome::Near;
    }
    let mean2d = Vector2::new(camera.fx * t.x / t.z + camera.cx, camera.fy * t.y / t.z + camera.cy);
    let half_w = 0.5 * camera.width as f64;
    let half_h = 0.5 * camera.height as f64;
    if (mean2d.x - half_w).abs() > FRUSTUM_MARGIN * half_w
        || (mean2d.y - half_h).abs() > FRUSTUM_MARGIN * half_h
    {
        return Outcome::Frustum;
    }
    let w = camera.rotation;
    let cov_cam = w * model.covariance(i) * w.transpose();
    let j = projection_jacobian(camera, &t);
    let cov = j * cov_cam * j.transpose();
    let a = cov[(0, 0)] + COV2D_DILATION;
    let b = cov[(0, 1)];
    let c = cov[(1, 1)] + COV2D_DILATION;
    let det = a * c - b * b;
    if !(det > MIN_COV2D_DET) {
        return Outcome::Degenerate;
    }
    let inv = 1.0 / det;
    let mut pg = ProjectedGaussian {
        mean2d,
        conic: [c * inv, -b * inv, a * inv],
        cov2d: [a, b, c],
        depth: t.z,
        cam_point: t,
        opacity: model.opacity(i),
        color: model.color(i),
        source_index: i,
        tile_bbox: TileRect {
            x0: 0,
            y0: 0,
            x1: 0,
            y1: 0,
        },
    };
    match tile_extent(&pg, grid) {
        Some(rect) => {
            pg.tile_bbox = rect;
            Outcome::Kept(pg)
        }
        None => Outcome::Offscreen,
    }
}

/// Projects every Gaussian of `model` into `camera` rendered at `1/downsample`
/// resolution. Output preserves source order; culled Gaussians are counted.
pub fn project(model: &GaussianModel, camera: &Camera, downsample: u32, tile_size: u32) -> Projection {
    let camera = camera.downsampled(downsample);
    let grid = TileGrid::new(camera.width, camera.height, tile_size);
    let outcomes: Vec<Outcome> = (0..model.len())
        .into_par_iter()
        .map(|i| project_one(model, &camera, &grid, i))
        .collect();
    let mut culled = CullStats::default();
    let mut splats = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Outcome::Kept(pg) => splats.push(pg),
            Outcome::Near => culled.near += 1,
            Outcome::Frustum => culled.frustum += 1,
            Outcome::Degenerate => culled.degenerate += 1,
            Outcome::Offscreen => culled.offscreen += 1,
        }
    }
    Projection {
        camera,
        grid,
        splats,
        culled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn quat_about_z(angle: f64) -> Vector4<f64> {
        Vector4::new((angle / 2.0).cos(), 0.0, 0.0, (angle / 2.0).sin())
    }

    #[test]
    fn covariance_examples() {
        let id = Vector4::new(1.0, 0.0, 0.0, 0.0);
        assert_eq!(build_covariance(&Vector3::new(1.0, 1.0, 1.0), &id), Matrix3::identity());
        assert_eq!(
            build_covariance(&Vector3::new(2.0, 1.0, 1.0), &id),
            Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))
        );
        // Rz(90°) maps x to y: R diag(4,1,1) Rᵀ = diag(1,4,1).
        let cov = build_covariance(&Vector3::new(2.0, 1.0, 1.0), &quat_about_z(std::f64::consts::FRAC_PI_2));
        assert!((cov - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn rotation_matrix_agrees_with_nalgebra() {
        let q = Vector4::new(0.3, -0.5, 0.2, 0.7);
        let n = q.normalize();
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(n[0], n[1], n[2], n[3]));
        let r = rotation_matrix(&q);
        assert!((r - *uq.to_rotation_matrix().matrix()).abs().max() < 1e-14);
    }

    #[test]
    fn unit_isotropic_footprint_spans_center_tiles() {
        let grid = TileGrid::new(64, 64, 8);
        let pg = ProjectedGaussian {
            mean2d: Vector2::new(32.0, 32.0),
            conic: [1.0, 0.0, 1.0],
            cov2d: [1.0, 0.0, 1.0],
            depth: 1.0,
            cam_point: Vector3::new(0.0, 0.0, 1.0),
            opacity: 0.5,
            color: Vector3::zeros(),
            source_index: 0,
            tile_bbox: TileRect { x0: 0, y0: 0, x1: 0, y1: 0 },
        };
        // radius 3.33 px around the shared corner of tiles (3,3)..(4,4)
        assert_eq!(tile_extent(&pg, &grid), Some(TileRect { x0: 3, y0: 3, x1: 4, y1: 4 }));

        let mut small = pg.clone();
        small.mean2d = Vector2::new(12.0, 20.0);
        small.cov2d = [0.3, 0.0, 0.3];
        assert_eq!(tile_extent(&small, &grid), Some(TileRect { x0: 1, y0: 2, x1: 1, y1: 2 }));

        let mut off = pg;
        off.mean2d = Vector2::new(-20.0, 5.0);
        assert_eq!(tile_extent(&off, &grid), None);
    }
}
