//! Cameras, per-pixel rays, dataset loading/saving, and a procedural
//! multi-view scene generator that provides exact ground truth at desk
//! scale.
//!
//! Conventions: right-handed coordinates, cameras look down their local
//! -z axis, world up is +z, and poses are camera-to-world. Pixel (u, v)
//! is (row, column); rays pass through pixel centers (the +0.5 offset).

use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldSample, RadianceField};
use crate::imaging::{self, Image};
use crate::render::{self, RaySampling};
use crate::vec3::Vec3;

pub const DEFAULT_NEAR: f64 = 0.1;
pub const DEFAULT_FAR: f64 = 4.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pixel ({u}, {v}) outside {height}x{width} image")]
    PixelOutOfBounds { u: u32, v: u32, width: u32, height: u32 },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed transforms JSON {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Image(#[from] imaging::ImagingError),
    #[error("dataset has no views")]
    NoViews,
    #[error("dataset has no {split} views")]
    EmptySplit { split: &'static str },
    #[error("view {view}: image is {iw}x{ih} but camera expects {cw}x{ch}")]
    DimensionMismatch { view: usize, iw: u32, ih: u32, cw: u32, ch: u32 },
    #[error("scene description lists no primitives")]
    EmptyScene,
    #[error("resolution {0} too small, need at least 8")]
    ResolutionTooSmall(u32),
}

/// Pinhole camera with a camera-to-world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera-to-world, row-major. Columns 0..3 of the upper 3x3 are the
    /// camera x/y/z axes in world space; column 3 is the position.
    pub pose: [[f64; 4]; 4],
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        pose: [[f64; 4]; 4],
        near: f64,
        far: f64,
    ) -> Result<Camera, GeometryError> {
        if !(near > 0.0 && near < far) {
            return Err(GeometryError::InvalidCamera(format!(
                "need 0 < near < far, got near={near}, far={far}"
            )));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        // rotation block must be orthonormal
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|r| pose[r][a] * pose[r][b]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-6 {
                    return Err(GeometryError::InvalidCamera(format!(
                        "rotation block not orthonormal (col{a}.col{b} = {dot})"
                    )));
                }
            }
        }
        Ok(Camera { fx, fy, cx, cy, width, height, pose, near, far })
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.pose[0][3], self.pose[1][3], self.pose[2][3])
    }

    pub fn rotate_to_world(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.pose[0][0] * v.x + self.pose[0][1] * v.y + self.pose[0][2] * v.z,
            self.pose[1][0] * v.x + self.pose[1][1] * v.y + self.pose[1][2] * v.z,
            self.pose[2][0] * v.x + self.pose[2][1] * v.y + self.pose[2][2] * v.z,
        )
    }

    /// Camera looking at `target` from `position` with +z world up.
    pub fn look_at(
        position: Vec3,
        target: Vec3,
        fov_x_rad: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Camera, GeometryError> {
        let backward = (position - target).normalized();
        let up = Vec3::new(0.0, 0.0, 1.0);
        let right = up.cross(backward);
        if right.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "camera axis parallel to world up".into(),
            ));
        }
        let right = right.normalized();
        let true_up = backward.cross(right);
        let mut pose = [[0.0; 4]; 4];
        for r in 0..3 {
            pose[r][0] = right[r];
            pose[r][1] = true_up[r];
            pose[r][2] = backward[r];
            pose[r][3] = position[r];
        }
        pose[3][3] = 1.0;
        let fx = 0.5 * width as f64 / (0.5 * fov_x_rad).tan();
        Camera::new(fx, fx, width as f64 / 2.0, height as f64 / 2.0, width, height, pose, near, far)
    }
}

/// A single training/render ray: geometry plus its supervision record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    /// (row, column) of the generating pixel.
    pub pixel: (u32, u32),
    /// Index of the generating view in its dataset.
    pub view: usize,
    /// Ground-truth color of the generating pixel.
    pub target: Vec3,
}

/// Ray through the center of pixel (u, v) = (row, column).
pub fn pixel_ray(camera: &Camera, u: u32, v: u32) -> Result<Ray, GeometryError> {
    if u >= camera.height || v >= camera.width {
        return Err(GeometryError::PixelOutOfBounds {
            u,
            v,
            width: camera.width,
            height: camera.height,
        });
    }
    let dir_cam = Vec3::new(
        (v as f64 + 0.5 - camera.cx) / camera.fx,
        -(u as f64 + 0.5 - camera.cy) / camera.fy,
        -1.0,
    );
    Ok(Ray {
        origin: camera.position(),
        direction: camera.rotate_to_world(dir_cam).normalized(),
        pixel: (u, v),
        view: 0,
        target: Vec3::ZERO,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Aligned images and cameras with a train/test assignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub cameras: Vec<Camera>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn new(
        images: Vec<Image>,
        cameras: Vec<Camera>,
        split: Vec<Split>,
    ) -> Result<Dataset, GeometryError> {
        if images.is_empty() {
            return Err(GeometryError::NoViews);
        }
        assert_eq!(images.len(), cameras.len(), "images and cameras must align");
        assert_eq!(images.len(), split.len(), "split must cover all views");
        for (view, (img, cam)) in images.iter().zip(&cameras).enumerate() {
            if img.width() != cam.width || img.height() != cam.height {
                return Err(GeometryError::DimensionMismatch {
                    view,
                    iw: img.width(),
                    ih: img.height(),
                    cw: cam.width,
                    ch: cam.height,
                });
            }
        }
        let ds = Dataset { images, cameras, split };
        if ds.train_views().is_empty() {
            return Err(GeometryError::EmptySplit { split: "train" });
        }
        if ds.test_views().is_empty() {
            return Err(GeometryError::EmptySplit { split: "test" });
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn train_views(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == Split::Train).collect()
    }

    pub fn test_views(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == Split::Test).collect()
    }

    /// Fully populated supervision ray for pixel (u, v) of `view`.
    pub fn ray(&self, view: usize, u: u32, v: u32) -> Result<Ray, GeometryError> {
        let mut ray = pixel_ray(&self.cameras[view], u, v)?;
        ray.view = view;
        ray.target = self.images[view].get(u, v);
        Ok(ray)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    camera_angle_y: Option<f64>,
    frames: Vec<TransformsFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFrame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn load_split(
    dir: &Path,
    file: &str,
    split: Split,
    near: f64,
    far: f64,
    out: &mut Dataset,
) -> Result<(), GeometryError> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parsed: TransformsFile = serde_json::from_str(&text).map_err(|source| {
        GeometryError::Json { path: path.display().to_string(), source }
    })?;
    for frame in &parsed.frames {
        let mut img_path = dir.join(&frame.file_path);
        if !img_path.exists() {
            // synthetic-style file_path entries omit the extension
            img_path = PathBuf::from(format!("{}.png", img_path.display()));
        }
        let image = imaging::load_png(&img_path)?;
        let (w, h) = (image.width(), image.height());
        let fx = 0.5 * w as f64 / (0.5 * parsed.camera_angle_x).tan();
        let fy = match parsed.camera_angle_y {
            None => fx,
            Some(angle_y) => {
                let fy = 0.5 * h as f64 / (0.5 * angle_y).tan();
                if (fy - fx).abs() > 1e-6 * fx {
                    eprintln!(
                        "warning: {file}: non-square intrinsics (fx={fx:.3}, fy={fy:.3}), proceeding"
                    );
                }
                fy
            }
        };
        let camera = Camera::new(
            fx,
            fy,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
            frame.transform_matrix,
            near,
            far,
        )?;
        out.images.push(image);
        out.cameras.push(camera);
        out.split.push(split);
    }
    Ok(())
}

/// Loads a synthetic-style dataset directory: `transforms_train.json`,
/// `transforms_test.json`, and the image files they reference. RGBA
/// images are composited over white.
pub fn load_nerf_synthetic(dir: &Path, near: f64, far: f64) -> Result<Dataset, GeometryError> {
    let mut ds = Dataset { images: Vec::new(), cameras: Vec::new(), split: Vec::new() };
    load_split(dir, "transforms_train.json", Split::Train, near, far, &mut ds)?;
    load_split(dir, "transforms_test.json", Split::Test, near, far, &mut ds)?;
    if ds.images.is_empty() {
        return Err(GeometryError::NoViews);
    }
    Dataset::new(ds.images, ds.cameras, ds.split)
}

/// Writes a dataset back out in the transforms-JSON layout that
/// [`load_nerf_synthetic`] reads.
pub fn save_nerf_synthetic(dataset: &Dataset, dir: &Path) -> Result<(), GeometryError> {
    let io_err = |path: &Path, source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    };
    for (split, file, subdir) in [
        (Split::Train, "transforms_train.json", "train"),
        (Split::Test, "transforms_test.json", "test"),
    ] {
        let img_dir = dir.join(subdir);
        fs::create_dir_all(&img_dir).map_err(|e| io_err(&img_dir, e))?;
        let mut frames = Vec::new();
        let mut camera_angle_x = None;
        for (i, view) in (0..dataset.len()).filter(|&i| dataset.split[i] == split).enumerate() {
            let cam = &dataset.cameras[view];
            camera_angle_x = Some(2.0 * (0.5 * cam.width as f64 / cam.fx).atan());
            let file_path = format!("./{subdir}/r_{i}");
            imaging::save_png(&dataset.images[view], &img_dir.join(format!("r_{i}.png")))?;
            frames.push(TransformsFrame { file_path, transform_matrix: cam.pose });
        }
        let doc = TransformsFile {
            camera_angle_x: camera_angle_x.unwrap_or(0.0),
            camera_angle_y: None,
            frames,
        };
        let path = dir.join(file);
        let text = serde_json::to_string_pretty(&doc).expect("transforms serialize");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Constant-color, constant-density primitive of the generated scene.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        rgb: [f64; 3],
        sigma: f64,
    },
    Box {
        center: [f64; 3],
        half_extent: [f64; 3],
        rgb: [f64; 3],
        sigma: f64,
    },
}

impl Primitive {
    fn sample(&self, p: Vec3) -> Option<FieldSample> {
        match *self {
            Primitive::Sphere { center, radius, rgb, sigma } => {
                let d = p - Vec3::from(center);
                (d.dot(d) <= radius * radius)
                    .then(|| FieldSample { rgb: Vec3::from(rgb), sigma })
            }
            Primitive::Box { center, half_extent, rgb, sigma } => {
                let d = p - Vec3::from(center);
                (d.x.abs() <= half_extent[0]
                    && d.y.abs() <= half_extent[1]
                    && d.z.abs() <= half_extent[2])
                    .then(|| FieldSample { rgb: Vec3::from(rgb), sigma })
            }
        }
    }
}

/// Description of a generated scene: what is in it and how it is filmed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default = "default_camera_radius")]
    pub camera_radius: f64,
    #[serde(default = "default_fov_x_deg")]
    pub fov_x_deg: f64,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    /// Samples per ray when rendering ground truth.
    #[serde(default = "default_gt_samples")]
    pub gt_samples: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_camera_radius() -> f64 {
    3.0
}
fn default_fov_x_deg() -> f64 {
    45.0
}
fn default_near() -> f64 {
    DEFAULT_NEAR
}
fn default_far() -> f64 {
    DEFAULT_FAR
}
fn default_gt_samples() -> u32 {
    256
}

/// The exact medium described by a [`SceneSpec`]: primitive interiors
/// carry their color and density, everywhere else is vacuum. The first
/// listed primitive wins where primitives overlap.
#[derive(Debug, Clone)]
pub struct AnalyticField {
    primitives: Vec<Primitive>,
}

impl AnalyticField {
    pub fn new(spec: &SceneSpec) -> AnalyticField {
        AnalyticField { primitives: spec.primitives.clone() }
    }
}

impl RadianceField for AnalyticField {
    fn query(&self, position: Vec3) -> FieldSample {
        self.primitives
            .iter()
            .find_map(|prim| prim.sample(position))
            .unwrap_or(FieldSample { rgb: Vec3::ZERO, sigma: 0.0 })
    }
}

/// Renders a multi-view dataset of the analytic scene. Cameras sit on a
/// sphere of `spec.camera_radius` looking at the origin, azimuths on a
/// golden-angle spiral, elevations stratified in [15, 55] degrees with a
/// small seeded jitter. Ground truth comes from the same volume renderer
/// used for training, at `spec.gt_samples` samples per ray, white
/// background, no jitter, so it is deterministic given the seed.
pub fn generate_scene(
    spec: &SceneSpec,
    n_train: usize,
    n_test: usize,
    resolution: u32,
) -> Result<Dataset, GeometryError> {
    if spec.primitives.is_empty() {
        return Err(GeometryError::EmptyScene);
    }
    if resolution < 8 {
        return Err(GeometryError::ResolutionTooSmall(resolution));
    }
    let n = n_train + n_test;
    if n == 0 {
        return Err(GeometryError::NoViews);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let field = AnalyticField::new(spec);
    let sampling = RaySampling::new(spec.gt_samples, spec.near, spec.far, false);

    let mut cameras = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let azimuth = golden * i as f64 + rng.gen_range(-0.02..0.02);
        let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let elevation = (15.0 + 40.0 * t + rng.gen_range(-1.0..1.0)).to_radians();
        let position = Vec3::new(
            spec.camera_radius * elevation.cos() * azimuth.cos(),
            spec.camera_radius * elevation.cos() * azimuth.sin(),
            spec.camera_radius * elevation.sin(),
        );
        let camera = Camera::look_at(
            position,
            Vec3::ZERO,
            spec.fov_x_deg.to_radians(),
            resolution,
            resolution,
            spec.near,
            spec.far,
        )?;
        images.push(render::render_view(&field, &camera, &sampling));
        cameras.push(camera);
    }

    // seeded assignment keeps the two splits interleaved over the sphere
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut split = vec![Split::Train; n];
    for &view in order.iter().take(n_test) {
        split[view] = Split::Test;
    }

    Dataset::new(images, cameras, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_pose() -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    }

    fn test_camera() -> Camera {
        Camera::new(100.0, 100.0, 50.0, 50.0, 200, 200, identity_pose(), 0.1, 4.0).unwrap()
    }

    fn two_sphere_spec() -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive::Sphere {
                center: [0.0, 0.0, 0.0],
                radius: 0.5,
                rgb: [1.0, 0.0, 0.0],
                sigma: 200.0,
            }],
            camera_radius: 3.0,
            fov_x_deg: 45.0,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            gt_samples: 256,
            seed: 42,
        }
    }

    #[test]
    fn principal_point_ray_is_on_axis() {
        let cam =
            Camera::new(50.0, 50.0, 2.5, 2.5, 5, 5, identity_pose(), 0.1, 4.0).unwrap();
        let ray = pixel_ray(&cam, 2, 2).unwrap();
        assert!((ray.direction - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert_eq!(ray.origin, Vec3::ZERO);
    }

    #[test]
    fn pixel_ray_matches_pinhole_formula() {
        let ray = pixel_ray(&test_camera(), 50, 150).unwrap();
        let expected = Vec3::new(1.005, -0.005, -1.0).normalized();
        assert!((ray.direction - expected).norm() < 1e-12);
    }

    #[test]
    fn translation_moves_origin_only() {
        let mut pose = identity_pose();
        pose[0][3] = 1.5;
        pose[2][3] = -0.5;
        let moved = Camera::new(100.0, 100.0, 50.0, 50.0, 200, 200, pose, 0.1, 4.0).unwrap();
        let a = pixel_ray(&test_camera(), 10, 20).unwrap();
        let b = pixel_ray(&moved, 10, 20).unwrap();
        assert_eq!(a.direction, b.direction);
        assert_eq!(b.origin, Vec3::new(1.5, 0.0, -0.5));
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        assert!(matches!(
            pixel_ray(&test_camera(), 200, 0),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn directions_are_unit_and_distinct() {
        let cam = Camera::new(8.0, 8.0, 4.0, 4.0, 8, 8, identity_pose(), 0.1, 4.0).unwrap();
        let mut dirs = Vec::new();
        for u in 0..8 {
            for v in 0..8 {
                let ray = pixel_ray(&cam, u, v).unwrap();
                assert!((ray.direction.norm() - 1.0).abs() < 1e-9);
                dirs.push(ray.direction);
            }
        }
        for i in 0..dirs.len() {
            for j in i + 1..dirs.len() {
                assert!((dirs[i] - dirs[j]).norm() > 1e-12, "rays {i} and {j} collide");
            }
        }
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let mut pose = identity_pose();
        pose[0][0] = 2.0;
        assert!(Camera::new(10.0, 10.0, 4.0, 4.0, 8, 8, pose, 0.1, 4.0).is_err());
    }

    #[test]
    fn focal_from_fov_quarter_turn() {
        let cam = Camera::look_at(
            Vec3::new(3.0, 0.0, 1.0),
            Vec3::ZERO,
            std::f64::consts::FRAC_PI_2,
            800,
            800,
            0.1,
            4.0,
        )
        .unwrap();
        assert!((cam.fx - 400.0).abs() < 1e-9);
    }

    #[test]
    fn look_at_points_toward_target() {
        let cam = Camera::look_at(
            Vec3::new(0.0, -3.0, 1.5),
            Vec3::ZERO,
            0.8,
            32,
            32,
            0.1,
            4.0,
        )
        .unwrap();
        let center = pixel_ray(&cam, 15, 15).unwrap();
        // the central rays should roughly aim at the origin
        let toward = (Vec3::ZERO - cam.position()).normalized();
        assert!(center.direction.dot(toward) > 0.99);
    }

    #[test]
    fn generated_scene_is_deterministic() {
        let spec = two_sphere_spec();
        let a = generate_scene(&spec, 3, 1, 16).unwrap();
        let b = generate_scene(&spec, 3, 1, 16).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.data(), y.data());
        }
        for (x, y) in a.cameras.iter().zip(&b.cameras) {
            assert_eq!(x.pose, y.pose);
        }
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn vacuum_scene_renders_pure_white() {
        let mut spec = two_sphere_spec();
        if let Primitive::Sphere { ref mut sigma, .. } = spec.primitives[0] {
            *sigma = 0.0;
        }
        let ds = generate_scene(&spec, 2, 1, 16).unwrap();
        for img in &ds.images {
            assert!(img.data().iter().all(|&c| c == 1.0), "vacuum must render white");
        }
    }

    #[test]
    fn opaque_red_sphere_hits_center_pixel() {
        let ds = generate_scene(&two_sphere_spec(), 3, 1, 33).unwrap();
        for img in &ds.images {
            // camera looks at the sphere center, so the central pixel is red
            let c = img.get(16, 16);
            assert!((c.x - 1.0).abs() <= 1.0 / 255.0, "r = {}", c.x);
            assert!(c.y.abs() <= 1.0 / 255.0 && c.z.abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn quadrature_self_consistency() {
        let mut spec = two_sphere_spec();
        spec.gt_samples = 256;
        let coarse = generate_scene(&spec, 2, 1, 16).unwrap();
        spec.gt_samples = 512;
        let fine = generate_scene(&spec, 2, 1, 16).unwrap();
        for (a, b) in coarse.images.iter().zip(&fine.images) {
            let mae: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / a.data().len() as f64;
            assert!(mae < 1e-3, "mean absolute error {mae} too large");
        }
    }

    #[test]
    fn zero_primitives_is_an_error() {
        let mut spec = two_sphere_spec();
        spec.primitives.clear();
        assert!(matches!(
            generate_scene(&spec, 2, 1, 16),
            Err(GeometryError::EmptyScene)
        ));
    }

    #[test]
    fn tiny_resolution_is_an_error() {
        assert!(matches!(
            generate_scene(&two_sphere_spec(), 2, 1, 4),
            Err(GeometryError::ResolutionTooSmall(4))
        ));
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let ds = generate_scene(&two_sphere_spec(), 5, 3, 16).unwrap();
        let train = ds.train_views();
        let test = ds.test_views();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 3);
        let mut all: Vec<usize> = train.into_iter().chain(test).collect();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn transforms_round_trip_preserves_poses() {
        let ds = generate_scene(&two_sphere_spec(), 2, 1, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_nerf_synthetic(&ds, dir.path()).unwrap();
        let reloaded = load_nerf_synthetic(dir.path(), DEFAULT_NEAR, DEFAULT_FAR).unwrap();
        assert_eq!(reloaded.len(), ds.len());
        // reload order groups train first, then test
        let order: Vec<usize> = ds
            .train_views()
            .into_iter()
            .chain(ds.test_views())
            .collect();
        for (new_idx, &old_idx) in order.iter().enumerate() {
            let (a, b) = (&reloaded.cameras[new_idx], &ds.cameras[old_idx]);
            for r in 0..4 {
                for c in 0..4 {
                    assert!((a.pose[r][c] - b.pose[r][c]).abs() < 1e-9);
                }
            }
            assert!((a.fx - b.fx).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_transforms_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_nerf_synthetic(dir.path(), DEFAULT_NEAR, DEFAULT_FAR),
            Err(GeometryError::Io { .. })
        ));
    }

    #[test]
    fn empty_frames_means_no_views() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["transforms_train.json", "transforms_test.json"] {
            fs::write(
                dir.path().join(name),
                r#"{"camera_angle_x": 0.8, "frames": []}"#,
            )
            .unwrap();
        }
        assert!(matches!(
            load_nerf_synthetic(dir.path(), DEFAULT_NEAR, DEFAULT_FAR),
            Err(GeometryError::NoViews)
        ));
    }
}
