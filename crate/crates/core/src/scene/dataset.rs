use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{Camera, Image};
use crate::{Error, Result};

pub const CAMERA_FILE: &str = "cameras.txt";

/// Posed ground-truth views with a train/test partition.
///
/// On disk a dataset is a directory holding `cameras.txt` and one image per
/// camera named `0000.png` (or `.ppm`), `0001.png`, ... in camera-file order.
/// Each non-comment line of `cameras.txt` reads
/// `fx fy cx cy r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2 width height`,
/// the 12 pose numbers being the row-major world-to-camera `[R | t]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Every `holdout`-th view (starting at 0) goes to the test split;
    /// `holdout = 0` keeps everything in train.
    pub fn new(cameras: Vec<Camera>, images: Vec<Image>, holdout: usize) -> Result<Self> {
        if cameras.len() != images.len() {
            return Err(Error::Shape(format!(
                "{} cameras but {} images",
                cameras.len(),
                images.len()
            )));
        }
        for (i, (cam, img)) in cameras.iter().zip(&images).enumerate() {
            if img.width != cam.width as usize || img.height != cam.height as usize {
                return Err(Error::Shape(format!(
                    "image {i} is {}x{} but camera is {}x{}",
                    img.width, img.height, cam.width, cam.height
                )));
            }
        }
        let n = cameras.len();
        let (test, train): (Vec<usize>, Vec<usize>) = if holdout == 0 || n < 2 {
            (Vec::new(), (0..n).collect())
        } else {
            (0..n).partition(|i| i % holdout == 0)
        };
        Ok(Self {
            cameras,
            images,
            train,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Radius of the camera centers around their centroid, times 1.1.
    pub fn scene_extent(&self) -> f64 {
        if self.cameras.is_empty() {
            return 1.0;
        }
        let centers: Vec<_> = self.cameras.iter().map(Camera::center).collect();
        let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
        let radius = centers.iter().map(|c| (c - centroid).norm()).fold(0.0, f64::max);
        if radius > 0.0 {
            radius * 1.1
        } else {
            1.0
        }
    }

    pub fn load(dir: &Path, holdout: usize) -> Result<Self> {
        let path = dir.join(CAMERA_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cameras = parse_cameras(&text)?;
        let mut images = Vec::with_capacity(cameras.len());
        for i in 0..cameras.len() {
            let png = dir.join(format!("{i:04}.png"));
            let ppm = dir.join(format!("{i:04}.ppm"));
            let p = if png.exists() { png } else { ppm };
            if !p.exists() {
                return Err(Error::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing view image"),
                ));
            }
            images.push(Image::load(&p)?);
        }
        Self::new(cameras, images, holdout)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CAMERA_FILE);
        std::fs::write(&path, format_cameras(&self.cameras)).map_err(|e| Error::io(&path, e))?;
        for (i, img) in self.images.iter().enumerate() {
            img.save(&dir.join(format!("{i:04}.png")))?;
        }
        Ok(())
    }
}

pub fn parse_cameras(text: &str) -> Result<Vec<Camera>> {
    let mut cameras = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::CameraFile {
            line: lineno + 1,
            message,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 18 {
            return Err(err(format!("expected 18 fields, found {}", tokens.len())));
        }
        let nums = tokens[..16]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number {t:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        let dims = tokens[16..]
            .iter()
            .map(|t| t.parse::<u32>().map_err(|_| err(format!("bad dimension {t:?}"))))
            .collect::<Result<Vec<u32>>>()?;
        let p = &nums[4..16];
        let rotation = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
        let translation = Vector3::new(p[3], p[7], p[11]);
        let cam = Camera::new(nums[0], nums[1], nums[2], nums[3], rotation, translation, dims[0], dims[1])
            .map_err(|e| err(e.to_string()))?;
        cameras.push(cam);
    }
    Ok(cameras)
}

pub fn format_cameras(cameras: &[Camera]) -> String {
    let mut out = String::from("# fx fy cx cy | world-to-camera [R|t] row-major (12) | width height\n");
    for c in cameras {
        let r = &c.rotation;
        let t = &c.translation;
        // `{:?}` on f64 prints the shortest round-tripping representation.
        let _ = writeln!(
            out,
            "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {} {}",
            c.fx,
            c.fy,
            c.cx,
            c.cy,
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
            c.width,
            c.height
        );
    }
    out
}
