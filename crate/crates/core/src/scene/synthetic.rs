//! Seeded synthetic scenes with known ground truth.

use std::f64::consts::TAU;
use std::str::FromStr;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Camera, Dataset, GaussianModel};
use crate::rasterizer::{render, RenderSettings};
use crate::{Error, Result};

/// Every `TEST_HOLDOUT`-th view goes to the test split.
pub const TEST_HOLDOUT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// Isotropic Gaussians on a regular cube lattice.
    Grid,
    /// Anisotropic Gaussians scattered through the unit ball.
    RandomCloud,
    /// Flat Gaussians tiling a checkerboard plane.
    TexturedPlane,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(SceneKind::Grid),
            "random-cloud" => Ok(SceneKind::RandomCloud),
            "textured-plane" => Ok(SceneKind::TexturedPlane),
            other => Err(Error::Config(format!(
                "unknown scene kind {other:?} (expected grid, random-cloud or textured-plane)"
            ))),
        }
    }
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SceneKind::Grid => "grid",
            SceneKind::RandomCloud => "random-cloud",
            SceneKind::TexturedPlane => "textured-plane",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub gaussians: usize,
    pub cameras: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Distance of the camera ring from the origin.
    pub camera_distance: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::RandomCloud,
            gaussians: 500,
            cameras: 12,
            width: 64,
            height: 64,
            seed: 0,
            camera_distance: 4.0,
        }
    }
}

fn random_unit_quaternion(rng: &mut impl Rng) -> Vector4<f64> {
    let q = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    let n: f64 = q.norm();
    if n < 1e-9 {
        Vector4::new(1.0, 0.0, 0.0, 0.0)
    } else {
        q / n
    }
}

fn random_color(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(0.05..0.95))
}

fn random_cloud(n: usize, rng: &mut impl Rng) -> GaussianModel {
    let mut m = GaussianModel::with_capacity(n);
    let (lo, hi) = (0.03f64.ln(), 0.09f64.ln());
    while m.len() < n {
        let p = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if p.norm_squared() > 1.0 {
            continue;
        }
        let scale = Vector3::from_fn(|_, _| rng.random_range(lo..hi).exp());
        let q = random_unit_quaternion(rng);
        let opacity = rng.random_range(0.5..0.95);
        m.push(p, scale, q, opacity, random_color(rng));
    }
    m
}

fn grid(n: usize, rng: &mut impl Rng) -> GaussianModel {
    let side = (n as f64).cbrt().ceil().max(1.0) as usize;
    let spacing = 1.6 / side as f64;
    let mut m = GaussianModel::with_capacity(n);
    'outer: for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                if m.len() == n {
                    break 'outer;
                }
                let c = |t: usize| -0.8 + spacing * (t as f64 + 0.5);
                let s = 0.3 * spacing;
                m.push(
                    Vector3::new(c(i), c(j), c(k)),
                    Vector3::repeat(s),
                    Vector4::new(1.0, 0.0, 0.0, 0.0),
                    0.9,
                    random_color(rng),
                );
            }
        }
    }
    m
}

fn textured_plane(n: usize, rng: &mut impl Rng) -> GaussianModel {
    let side = (n as f64).sqrt().ceil().max(1.0) as usize;
    let spacing = 2.0 / side as f64;
    let mut m = GaussianModel::with_capacity(n);
    'outer: for i in 0..side {
        for j in 0..side {
            if m.len() == n {
                break 'outer;
            }
            let checker = ((i / 2 + j / 2) % 2) as f64;
            let base = Vector3::new(0.15 + 0.7 * checker, 0.2 + 0.5 * (1.0 - checker), 0.5);
            let jitter = Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
            let s = 0.6 * spacing;
            m.push(
                Vector3::new(-1.0 + spacing * (i as f64 + 0.5), -1.0 + spacing * (j as f64 + 0.5), 0.0),
                Vector3::new(s, s, 0.02 * s),
                Vector4::new(1.0, 0.0, 0.0, 0.0),
                0.95,
                base + jitter,
            );
        }
    }
    m
}

/// Cameras on a ring around the origin, alternating between two elevations,
/// all looking at the origin with world `+z` up.
pub fn ring_cameras(count: usize, distance: f64, width: u32, height: u32) -> Result<Vec<Camera>> {
    let focal = 1.07 * width as f64;
    (0..count)
        .map(|i| {
            let azimuth = TAU * i as f64 / count as f64;
            let elevation: f64 = if i % 2 == 0 { 0.3 } else { 0.6 };
            let eye = distance
                * Vector3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                );
            Camera::look_at(eye, Vector3::zeros(), Vector3::z(), focal, width, height)
        })
        .collect()
}

/// Builds the ground-truth model and renders it from every ring camera.
pub fn make_synthetic_scene(spec: &SceneSpec) -> Result<(GaussianModel, Dataset)> {
    if spec.gaussians == 0 {
        return Err(Error::Config("synthetic scene needs at least one Gaussian".into()));
    }
    if spec.cameras == 0 {
        return Err(Error::Config("synthetic scene needs at least one camera".into()));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    if !(spec.camera_distance > 1.5) {
        return Err(Error::Config("camera distance must exceed 1.5 to clear the scene".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let model = match spec.kind {
        SceneKind::Grid => grid(spec.gaussians, &mut rng),
        SceneKind::RandomCloud => random_cloud(spec.gaussians, &mut rng),
        SceneKind::TexturedPlane => textured_plane(spec.gaussians, &mut rng),
    };
    let cameras = ring_cameras(spec.cameras, spec.camera_distance, spec.width, spec.height)?;
    let settings = RenderSettings::default();
    let images = cameras
        .iter()
        .map(|cam| render(&model, cam, 1, &settings, false).output.image)
        .collect();
    let dataset = Dataset::new(cameras, images, TEST_HOLDOUT)?;
    Ok((model, dataset))
}

/// Mean distance to the `k` nearest other points (brute force).
pub fn knn_mean_distance(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    let mut dists = Vec::with_capacity(points.len());
    let mut scratch = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        scratch.clear();
        scratch.extend(points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| (p - q).norm()));
        let kk = k.min(scratch.len());
        if kk == 0 {
            dists.push(0.1);
            continue;
        }
        scratch.select_nth_unstable_by(kk - 1, f64::total_cmp);
        dists.push(scratch[..kk].iter().sum::<f64>() / kk as f64);
    }
    dists
}

/// A point-cloud style initialization from the ground truth: jittered means,
/// isotropic scales from the 3-nearest-neighbour distance, identity rotations,
/// opacity 0.1 and noisy colors.
pub fn perturbed_init(gt: &GaussianModel, position_jitter: f64, color_noise: f64, seed: u64) -> GaussianModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1417);
    let pos = Normal::new(0.0, position_jitter.max(0.0)).expect("finite jitter");
    let col = Normal::new(0.0, color_noise.max(0.0)).expect("finite noise");
    let means: Vec<Vector3<f64>> = gt
        .means
        .iter()
        .map(|m| m + Vector3::from_fn(|_, _| pos.sample(&mut rng)))
        .collect();
    let scales = knn_mean_distance(&means, 3);
    let mut out = GaussianModel::with_capacity(gt.len());
    for (i, mean) in means.into_iter().enumerate() {
        let rgb = (gt.color(i) + Vector3::from_fn(|_, _| col.sample(&mut rng))).map(|c| c.clamp(0.02, 0.98));
        out.push(
            mean,
            Vector3::repeat(scales[i].max(1e-4)),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            0.1,
            rgb,
        );
    }
    out
}

/// Standard deviations of the noise [`noisy_copy`] adds to each raw parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamNoise {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub raw_opacity: f64,
    pub sh_dc: f64,
}

impl Default for ParamNoise {
    fn default() -> Self {
        Self {
            mean: 0.05,
            log_scale: 0.3,
            rotation: 0.1,
            raw_opacity: 0.5,
            sh_dc: 0.35,
        }
    }
}

/// The ground truth with Gaussian noise on every raw parameter; rotations are
/// renormalized afterwards.
pub fn noisy_copy(gt: &GaussianModel, noise: &ParamNoise, seed: u64) -> GaussianModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0dd5_cafe);
    let mut draw = |sigma: f64| -> f64 {
        if sigma > 0.0 {
            sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        } else {
            0.0
        }
    };
    let mut m = gt.clone();
    for i in 0..m.len() {
        for k in 0..3 {
            m.means[i][k] += draw(noise.mean);
            m.log_scales[i][k] += draw(noise.log_scale);
            m.sh_dc[i][k] += draw(noise.sh_dc);
        }
        for k in 0..4 {
            m.rotations[i][k] += draw(noise.rotation);
        }
        m.raw_opacities[i] += draw(noise.raw_opacity);
    }
    m.renormalize_rotations();
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_seeded_and_sized() {
        let spec = SceneSpec { gaussians: 60, cameras: 12, width: 32, height: 24, ..SceneSpec::default() };
        let (a, da) = make_synthetic_scene(&spec).unwrap();
        let (b, db) = make_synthetic_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(da.images, db.images);
        assert_eq!(a.len(), 60);
        assert_eq!(da.test, vec![0, 8]);
        assert_eq!(da.train.len(), 10);
        assert!(a.means.iter().all(|m| m.norm() <= 1.0));
        assert_eq!((da.images[3].width, da.images[3].height), (32, 24));
        // the cloud is visible
        assert!(da.images.iter().all(|im| im.data.iter().any(|&v| v > 0.05)));
    }

    #[test]
    fn all_kinds_build() {
        for kind in [SceneKind::Grid, SceneKind::RandomCloud, SceneKind::TexturedPlane] {
            let spec = SceneSpec { kind, gaussians: 30, cameras: 3, width: 16, height: 16, ..SceneSpec::default() };
            let (m, d) = make_synthetic_scene(&spec).unwrap();
            assert_eq!(m.len(), 30);
            assert_eq!(d.len(), 3);
            assert_eq!(kind.to_string().parse::<SceneKind>().unwrap(), kind);
        }
        assert!("cube".parse::<SceneKind>().is_err());
    }

    #[test]
    fn bad_specs_rejected() {
        let base = SceneSpec::default();
        assert!(make_synthetic_scene(&SceneSpec { cameras: 0, ..base.clone() }).is_err());
        assert!(make_synthetic_scene(&SceneSpec { gaussians: 0, ..base.clone() }).is_err());
        assert!(make_synthetic_scene(&SceneSpec { camera_distance: 1.0, ..base }).is_err());
    }

    #[test]
    fn ring_cameras_face_origin() {
        for cam in ring_cameras(6, 4.0, 64, 64).unwrap() {
            let p = cam.world_to_camera(&Vector3::zeros());
            assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
            assert!((p.z - 4.0).abs() < 1e-12);
            assert!((cam.center().norm() - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_copy_is_seeded_and_zero_noise_is_identity() {
        let spec = SceneSpec { gaussians: 10, cameras: 1, width: 16, height: 16, ..SceneSpec::default() };
        let (gt, _) = make_synthetic_scene(&spec).unwrap();
        let zero = ParamNoise { mean: 0.0, log_scale: 0.0, rotation: 0.0, raw_opacity: 0.0, sh_dc: 0.0 };
        let same = noisy_copy(&gt, &zero, 3);
        for (a, b) in same.rotations.iter().zip(&gt.rotations) {
            assert!((a - b).norm() < 1e-15);
        }
        assert_eq!(same.means, gt.means);
        let a = noisy_copy(&gt, &ParamNoise::default(), 3);
        assert_eq!(a, noisy_copy(&gt, &ParamNoise::default(), 3));
        assert_ne!(a.means, gt.means);
    }

    #[test]
    fn init_uses_neighbour_scale() {
        let mut gt = GaussianModel::default();
        for i in 0..4 {
            gt.push(Vector3::new(i as f64, 0.0, 0.0), Vector3::repeat(0.5), Vector4::new(1.0, 0.0, 0.0, 0.0), 0.9, Vector3::repeat(0.5));
        }
        let init = perturbed_init(&gt, 0.0, 0.0, 1);
        // point 0: neighbours at 1,2,3 → mean 2
        assert!((init.scale(0).x - 2.0).abs() < 1e-12);
        assert!((init.opacity(1) - 0.1).abs() < 1e-12);
        assert_eq!(init.means, gt.means);
    }
}
