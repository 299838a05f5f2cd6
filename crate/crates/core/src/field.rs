//! The learnable radiance field: a dense grid of raw density and color
//! parameters with trilinear interpolation.
//!
//! Raw parameters are unconstrained; queries interpolate the raw values
//! over the 8 enclosing vertices and then apply softplus (density) and
//! the logistic function (color), so densities are always nonnegative and
//! colors stay inside (0, 1). The field is view-independent: direction is
//! accepted by the renderer but not consumed here.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("checkpoint I/O failed at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: not a field checkpoint (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {got}, expected {expected}")]
    BadVersion { path: String, got: u32, expected: u32 },
    #[error("{path}: checkpoint is truncated or inconsistent")]
    Corrupt { path: String },
    #[error("gradient buffer contains non-finite values; step aborted")]
    NonFiniteGradient,
    #[error("gradient buffer shape does not match field resolution")]
    ShapeMismatch,
}

/// Axis-aligned box in scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Aabb {
        assert!(min.x < max.x && min.y < max.y && min.z < max.z, "degenerate bounds");
        Aabb { min, max }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Color and density of the medium at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub rgb: Vec3,
    pub sigma: f64,
}

/// Anything the volume renderer can march through.
pub trait RadianceField: Sync {
    fn query(&self, position: Vec3) -> FieldSample;
}

pub fn softplus(x: f64) -> f64 {
    // max(x,0) + ln(1 + exp(-|x|)) avoids overflow on both tails
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"VOXF";
const CHECKPOINT_VERSION: u32 = 1;

/// Dense D³ vertex grid of raw (density, rgb) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelField {
    resolution: u32,
    bounds: Aabb,
    raw_density: Vec<f64>,
    raw_rgb: Vec<f64>,
}

/// One field query augmented with everything the backward pass needs:
/// the 8 enclosing vertex indices, their trilinear weights, and the
/// activation derivatives at the interpolated raw values.
#[derive(Debug, Clone, Copy)]
pub struct SampleGrads {
    pub rgb: Vec3,
    pub sigma: f64,
    pub corners: [u32; 8],
    pub weights: [f64; 8],
    /// d(sigma)/d(interpolated raw density) = logistic(raw).
    pub dsigma_draw: f64,
    /// d(color_ch)/d(interpolated raw color_ch) = c(1-c), per channel.
    pub drgb_draw: Vec3,
}

impl VoxelField {
    /// Near-transparent start: raw density -4.5 (sigma ~ 0.011) and raw
    /// color 0 (mid gray) at every vertex. The start must be empty
    /// enough that background rays render close to the white backdrop
    /// from the first epoch; softplus flattens quickly below zero, so a
    /// denser start takes plain SGD many epochs to drain.
    pub fn new(resolution: u32, bounds: Aabb) -> VoxelField {
        assert!(resolution >= 2, "need at least 2 vertices per axis");
        let n = (resolution as usize).pow(3);
        VoxelField {
            resolution,
            bounds,
            raw_density: vec![-4.5; n],
            raw_rgb: vec![0.0; 3 * n],
        }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn vertex_count(&self) -> usize {
        (self.resolution as usize).pow(3)
    }

    /// Total number of raw parameters (density + rgb).
    pub fn param_count(&self) -> usize {
        4 * self.vertex_count()
    }

    pub fn vertex_index(&self, i: u32, j: u32, k: u32) -> usize {
        let d = self.resolution as usize;
        (i as usize * d + j as usize) * d + k as usize
    }

    pub fn raw_density(&self) -> &[f64] {
        &self.raw_density
    }

    pub fn raw_rgb(&self) -> &[f64] {
        &self.raw_rgb
    }

    pub fn raw_density_mut(&mut self) -> &mut [f64] {
        &mut self.raw_density
    }

    pub fn raw_rgb_mut(&mut self) -> &mut [f64] {
        &mut self.raw_rgb
    }

    /// Locates the cell containing `p` and the trilinear corner weights.
    /// Returns `None` outside the bounds.
    fn cell(&self, p: Vec3) -> Option<([u32; 8], [f64; 8])> {
        if !self.bounds.contains(p) {
            return None;
        }
        let d = self.resolution;
        let mut idx = [0u32; 3];
        let mut frac = [0f64; 3];
        for axis in 0..3 {
            let (lo, hi) = (self.bounds.min[axis], self.bounds.max[axis]);
            let t = (p[axis] - lo) / (hi - lo) * (d - 1) as f64;
            let i = (t.floor() as i64).clamp(0, d as i64 - 2) as u32;
            idx[axis] = i;
            frac[axis] = t - i as f64;
        }
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let mut corners = [0u32; 8];
        let mut weights = [0f64; 8];
        for c in 0..8 {
            let (dx, dy, dz) = ((c >> 2) & 1, (c >> 1) & 1, c & 1);
            corners[c] = self.vertex_index(
                idx[0] + dx as u32,
                idx[1] + dy as u32,
                idx[2] + dz as u32,
            ) as u32;
            let wx = if dx == 1 { fx } else { 1.0 - fx };
            let wy = if dy == 1 { fy } else { 1.0 - fy };
            let wz = if dz == 1 { fz } else { 1.0 - fz };
            weights[c] = wx * wy * wz;
        }
        Some((corners, weights))
    }

    fn interpolate_raw(&self, corners: &[u32; 8], weights: &[f64; 8]) -> (Vec3, f64) {
        let mut raw_c = Vec3::ZERO;
        let mut raw_d = 0.0;
        for c in 0..8 {
            let vi = corners[c] as usize;
            let w = weights[c];
            raw_d += w * self.raw_density[vi];
            raw_c.x += w * self.raw_rgb[3 * vi];
            raw_c.y += w * self.raw_rgb[3 * vi + 1];
            raw_c.z += w * self.raw_rgb[3 * vi + 2];
        }
        (raw_c, raw_d)
    }

    /// Query with gradient bookkeeping; `None` outside the bounds (where
    /// the medium is empty and nothing is learnable).
    pub fn query_with_grads(&self, position: Vec3) -> Option<SampleGrads> {
        let (corners, weights) = self.cell(position)?;
        let (raw_c, raw_d) = self.interpolate_raw(&corners, &weights);
        let rgb = Vec3::new(logistic(raw_c.x), logistic(raw_c.y), logistic(raw_c.z));
        Some(SampleGrads {
            rgb,
            sigma: softplus(raw_d),
            corners,
            weights,
            dsigma_draw: logistic(raw_d),
            drgb_draw: Vec3::new(
                rgb.x * (1.0 - rgb.x),
                rgb.y * (1.0 - rgb.y),
                rgb.z * (1.0 - rgb.z),
            ),
        })
    }

    /// Writes the field to a little-endian binary checkpoint:
    ///
    /// ```text
    /// magic   b"VOXF"                      4 bytes
    /// version u32                          4 bytes
    /// D       u32 vertices per axis        4 bytes
    /// bounds  min.xyz, max.xyz             6 x f64
    /// density D^3 raw values               f64 each
    /// rgb     D^3 x [r,g,b] raw values     f64 each
    /// ```
    pub fn save(&self, path: &Path) -> Result<(), FieldError> {
        let io_err = |source| FieldError::Io { path: path.display().to_string(), source };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        let io_err = |source| FieldError::Io { path: path.display().to_string(), source };
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err);
        write(&CHECKPOINT_MAGIC)?;
        write(&CHECKPOINT_VERSION.to_le_bytes())?;
        write(&self.resolution.to_le_bytes())?;
        for v in [self.bounds.min, self.bounds.max] {
            for ch in 0..3 {
                write(&v[ch].to_le_bytes())?;
            }
        }
        for x in self.raw_density.iter().chain(self.raw_rgb.iter()) {
            write(&x.to_le_bytes())?;
        }
        w.flush().map_err(|source| FieldError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<VoxelField, FieldError> {
        let pathname = || path.display().to_string();
        let mut r = BufReader::new(
            File::open(path).map_err(|source| FieldError::Io { path: pathname(), source })?,
        );
        let mut read_exact = |buf: &mut [u8]| -> Result<(), FieldError> {
            r.read_exact(buf).map_err(|_| FieldError::Corrupt { path: pathname() })
        };
        let mut magic = [0u8; 4];
        read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FieldError::BadMagic { path: pathname() });
        }
        let mut u32buf = [0u8; 4];
        read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(FieldError::BadVersion {
                path: pathname(),
                got: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        read_exact(&mut u32buf)?;
        let resolution = u32::from_le_bytes(u32buf);
        if !(2..=1024).contains(&resolution) {
            return Err(FieldError::Corrupt { path: pathname() });
        }
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |read_exact: &mut dyn FnMut(&mut [u8]) -> Result<(), FieldError>|
         -> Result<f64, FieldError> {
            read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let mut six = [0.0; 6];
        for slot in six.iter_mut() {
            *slot = read_f64(&mut read_exact)?;
        }
        let bounds = Aabb::new(Vec3::new(six[0], six[1], six[2]), Vec3::new(six[3], six[4], six[5]));
        let n = (resolution as usize).pow(3);
        let mut raw_density = Vec::with_capacity(n);
        for _ in 0..n {
            raw_density.push(read_f64(&mut read_exact)?);
        }
        let mut raw_rgb = Vec::with_capacity(3 * n);
        for _ in 0..3 * n {
            raw_rgb.push(read_f64(&mut read_exact)?);
        }
        Ok(VoxelField { resolution, bounds, raw_density, raw_rgb })
    }
}

impl RadianceField for VoxelField {
    fn query(&self, position: Vec3) -> FieldSample {
        match self.cell(position) {
            None => FieldSample { rgb: Vec3::ZERO, sigma: 0.0 },
            Some((corners, weights)) => {
                let (raw_c, raw_d) = self.interpolate_raw(&corners, &weights);
                FieldSample {
                    rgb: Vec3::new(logistic(raw_c.x), logistic(raw_c.y), logistic(raw_c.z)),
                    sigma: softplus(raw_d),
                }
            }
        }
    }
}

/// Accumulated dL/d(raw parameter), same shapes as the field's raw arrays.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    pub density: Vec<f64>,
    pub rgb: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros_like(field: &VoxelField) -> GradientBuffer {
        GradientBuffer {
            density: vec![0.0; field.raw_density.len()],
            rgb: vec![0.0; field.raw_rgb.len()],
        }
    }

    pub fn zero(&mut self) {
        self.density.iter_mut().for_each(|g| *g = 0.0);
        self.rgb.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.density.iter_mut().for_each(|g| *g *= s);
        self.rgb.iter_mut().for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().all(|g| g.is_finite()) && self.rgb.iter().all(|g| g.is_finite())
    }
}

/// One plain gradient-descent step: raw <- raw - lr * grad, then the
/// buffer is zeroed. Refuses to apply non-finite gradients.
pub fn sgd_step(
    field: &mut VoxelField,
    grads: &mut GradientBuffer,
    lr: f64,
) -> Result<(), FieldError> {
    if grads.density.len() != field.raw_density.len() || grads.rgb.len() != field.raw_rgb.len() {
        return Err(FieldError::ShapeMismatch);
    }
    if !grads.is_finite() {
        return Err(FieldError::NonFiniteGradient);
    }
    for (p, g) in field.raw_density.iter_mut().zip(&grads.density) {
        *p -= lr * g;
    }
    for (p, g) in field.raw_rgb.iter_mut().zip(&grads.rgb) {
        *p -= lr * g;
    }
    grads.zero();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_bounds() -> Aabb {
        Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0))
    }

    fn random_field(rng: &mut impl Rng, resolution: u32) -> VoxelField {
        let mut f = VoxelField::new(resolution, unit_bounds());
        for v in f.raw_density_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        for v in f.raw_rgb_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        f
    }

    #[test]
    fn fresh_field_has_softplus_zero_free_space() {
        let f = VoxelField::new(4, unit_bounds());
        let mut g = f.clone();
        g.raw_density_mut().iter_mut().for_each(|v| *v = 0.0);
        let s = g.query(Vec3::new(0.21, -0.53, 0.77));
        assert!((s.sigma - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn vertex_query_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_field(&mut rng, 5);
        let d = f.resolution();
        for _ in 0..20 {
            let (i, j, k) = (
                rng.gen_range(0..d),
                rng.gen_range(0..d),
                rng.gen_range(0..d),
            );
            let step = 2.0 / (d - 1) as f64;
            let p = Vec3::new(
                -1.0 + i as f64 * step,
                -1.0 + j as f64 * step,
                -1.0 + k as f64 * step,
            );
            let vi = f.vertex_index(i, j, k);
            let s = f.query(p);
            assert!((s.sigma - softplus(f.raw_density()[vi])).abs() < 1e-9);
            assert!((s.rgb.x - logistic(f.raw_rgb()[3 * vi])).abs() < 1e-9);
        }
    }

    #[test]
    fn cell_center_interpolates_corner_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&mut rng, 3);
        let step = 2.0 / 2.0; // D=3 -> vertex spacing 1.0
        let center = Vec3::new(-1.0 + 0.5 * step, -1.0 + 0.5 * step, -1.0 + 0.5 * step);
        let mut mean = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    mean += f.raw_density()[f.vertex_index(i, j, k)];
                }
            }
        }
        mean /= 8.0;
        let s = f.query(center);
        assert!((s.sigma - softplus(mean)).abs() < 1e-12);
    }

    #[test]
    fn query_is_linear_along_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_field(&mut rng, 4);
        let step = 2.0 / 3.0;
        // walk the x axis between vertices (1,2,1) and (2,2,1)
        let a = f.raw_density()[f.vertex_index(1, 2, 1)];
        let b = f.raw_density()[f.vertex_index(2, 2, 1)];
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let p = Vec3::new(-1.0 + (1.0 + t) * step, -1.0 + 2.0 * step, -1.0 + step);
            let expected = softplus((1.0 - t) * a + t * b);
            assert!((f.query(p).sigma - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_bounds_is_empty() {
        let f = VoxelField::new(4, unit_bounds());
        let s = f.query(Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(s.sigma, 0.0);
        assert!(f.query_with_grads(Vec3::new(0.0, -1.5, 0.0)).is_none());
    }

    #[test]
    fn grads_at_vertex_are_collocated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(&mut rng, 4);
        let p = Vec3::new(-1.0, -1.0, -1.0); // vertex (0,0,0)
        let g = f.query_with_grads(p).unwrap();
        let vi = f.vertex_index(0, 0, 0) as u32;
        for c in 0..8 {
            let expected = if g.corners[c] == vi { 1.0 } else { 0.0 };
            assert!((g.weights[c] - expected).abs() < 1e-12);
        }
        let raw = f.raw_density()[vi as usize];
        assert!((g.dsigma_draw - logistic(raw)).abs() < 1e-12);
    }

    #[test]
    fn analytic_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut f = random_field(&mut rng, 4);
        for _ in 0..10 {
            let p = Vec3::new(
                rng.gen_range(-0.99..0.99),
                rng.gen_range(-0.99..0.99),
                rng.gen_range(-0.99..0.99),
            );
            let g = f.query_with_grads(p).unwrap();
            let h = 1e-4;
            for c in 0..8 {
                let vi = g.corners[c] as usize;
                let analytic = g.dsigma_draw * g.weights[c];
                let orig = f.raw_density()[vi];
                f.raw_density_mut()[vi] = orig + h;
                let plus = f.query(p).sigma;
                f.raw_density_mut()[vi] = orig - h;
                let minus = f.query(p).sigma;
                f.raw_density_mut()[vi] = orig;
                let fd = (plus - minus) / (2.0 * h);
                assert!(
                    (analytic - fd).abs() <= 1e-4 * analytic.abs().max(1e-8).max(fd.abs()),
                    "corner {c}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn sgd_step_applies_exact_update() {
        let mut f = VoxelField::new(2, unit_bounds());
        let mut grads = GradientBuffer::zeros_like(&f);

        // zero gradient: no change
        let before = f.clone();
        sgd_step(&mut f, &mut grads, 0.5).unwrap();
        assert_eq!(f, before);

        // lr = 0: no change
        grads.density[3] = 2.5;
        sgd_step(&mut f, &mut grads, 0.0).unwrap();
        assert_eq!(f, before);
        assert_eq!(grads.density[3], 0.0, "buffer zeroed after step");

        // single parameter decreases by lr * g exactly
        grads.density[3] = 2.5;
        sgd_step(&mut f, &mut grads, 0.1).unwrap();
        assert_eq!(f.raw_density()[3], before.raw_density()[3] - 0.25);
    }

    #[test]
    fn sgd_step_rejects_non_finite() {
        let mut f = VoxelField::new(2, unit_bounds());
        let mut grads = GradientBuffer::zeros_like(&f);
        grads.rgb[0] = f64::NAN;
        assert!(matches!(
            sgd_step(&mut f, &mut grads, 0.1),
            Err(FieldError::NonFiniteGradient)
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = random_field(&mut rng, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.ckpt");
        f.save(&path).unwrap();
        let g = VoxelField::load(&path).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.ckpt");
        let f = VoxelField::new(2, unit_bounds());
        f.save(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(VoxelField::load(&path), Err(FieldError::BadMagic { .. })));

        bytes[0] = b'V';
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(VoxelField::load(&path), Err(FieldError::Corrupt { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn trilinear_weights_partition_unity(
            seed in 0u64..1000,
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let resolution = rng.gen_range(2..8);
            let f = random_field(&mut rng, resolution);
            if let Some(g) = f.query_with_grads(Vec3::new(x, y, z)) {
                let sum: f64 = g.weights.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(g.weights.iter().all(|&w| w >= 0.0));
            }
        }
    }
}
