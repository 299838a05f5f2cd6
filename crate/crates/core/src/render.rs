//! Discrete volume rendering along rays, forward and backward.
//!
//! Forward: sample the field at stratified positions, alpha-composite
//! front to back, and blend the remaining transmittance with a background
//! color. Backward: exact reverse-mode gradients of the squared color
//! error with respect to every raw field parameter the ray touched.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{GradientBuffer, RadianceField, SampleGrads, VoxelField};
use crate::geometry::{pixel_ray, Camera, Ray};
use crate::imaging::Image;
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("non-finite value while rendering ray (view {view}, pixel {u},{v})")]
    NonFinite { view: usize, u: u32, v: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    White,
    Black,
    None,
}

impl Background {
    fn color(self) -> Option<Vec3> {
        match self {
            Background::White => Some(Vec3::ONE),
            Background::Black => Some(Vec3::ZERO),
            Background::None => None,
        }
    }
}

/// How rays are sampled: how many points, between which depths, and
/// whether the stratified offsets are jittered (training) or fixed at
/// bin midpoints (testing, ground truth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaySampling {
    pub n_samples: u32,
    pub near: f64,
    pub far: f64,
    pub jitter: bool,
    #[serde(default = "default_background")]
    pub background: Background,
}

fn default_background() -> Background {
    Background::White
}

impl RaySampling {
    pub fn new(n_samples: u32, near: f64, far: f64, jitter: bool) -> RaySampling {
        assert!(n_samples >= 2, "need at least 2 samples per ray");
        assert!(near < far, "need near < far");
        RaySampling { n_samples, near, far, jitter, background: Background::White }
    }
}

/// Deterministic bin-midpoint sample depths.
pub fn midpoint_ts(sampling: &RaySampling) -> Vec<f64> {
    let n = sampling.n_samples as usize;
    let h = (sampling.far - sampling.near) / n as f64;
    (0..n).map(|k| sampling.near + (k as f64 + 0.5) * h).collect()
}

/// Stratified depths, jittered within each bin when the config asks for it.
pub fn sample_ts(sampling: &RaySampling, rng: &mut impl Rng) -> Vec<f64> {
    if !sampling.jitter {
        return midpoint_ts(sampling);
    }
    let n = sampling.n_samples as usize;
    let h = (sampling.far - sampling.near) / n as f64;
    (0..n)
        .map(|k| sampling.near + (k as f64 + rng.gen::<f64>()) * h)
        .collect()
}

/// Per-ray rendering output: composited color, the per-sample weights
/// `w_j = T_j * alpha_j`, their sum (the accumulated opacity), and the
/// transmittance left after the last sample (the background weight).
/// Opacity is summed from the weights while the residual comes from the
/// multiplicative transmittance recurrence, so `opacity + residual = 1`
/// is a real cross-check rather than an identity of one code path.
#[derive(Debug, Clone)]
pub struct RenderResult {
    pub color: Vec3,
    pub weights: Vec<f64>,
    pub opacity: f64,
    pub residual: f64,
}

/// Front-to-back compositing shared by the forward and backward paths so
/// their colors (and therefore losses) agree bit for bit.
///
/// Returns (color, weights, final transmittance).
fn composite(
    samples: &[(f64, Vec3)],
    deltas: &[f64],
    background: Background,
) -> (Vec3, Vec<f64>, f64) {
    let mut color = Vec3::ZERO;
    let mut transmittance = 1.0;
    let mut weights = Vec::with_capacity(samples.len());
    for (&(sigma, rgb), &delta) in samples.iter().zip(deltas) {
        let alpha = 1.0 - (-sigma * delta).exp();
        let w = transmittance * alpha;
        color += rgb * w;
        weights.push(w);
        transmittance *= 1.0 - alpha;
    }
    if let Some(bg) = background.color() {
        color += bg * transmittance;
    }
    (color, weights, transmittance)
}

fn deltas_for(ts: &[f64], far: f64) -> Vec<f64> {
    let n = ts.len();
    (0..n)
        .map(|j| if j + 1 < n { ts[j + 1] - ts[j] } else { far - ts[n - 1] })
        .collect()
}

/// Renders one ray at explicit sample depths.
pub fn render_ray_at<F: RadianceField>(
    field: &F,
    ray: &Ray,
    ts: &[f64],
    far: f64,
    background: Background,
) -> RenderResult {
    let samples: Vec<(f64, Vec3)> = ts
        .iter()
        .map(|&t| {
            let s = field.query(ray.origin + ray.direction * t);
            (s.sigma, s.rgb)
        })
        .collect();
    let deltas = deltas_for(ts, far);
    let (color, weights, transmittance) = composite(&samples, &deltas, background);
    let opacity = weights.iter().sum();
    RenderResult { color, weights, opacity, residual: transmittance }
}

/// Renders one ray at deterministic midpoint depths (the test-time path).
pub fn render_ray<F: RadianceField>(field: &F, ray: &Ray, sampling: &RaySampling) -> RenderResult {
    render_ray_at(field, ray, &midpoint_ts(sampling), sampling.far, sampling.background)
}

/// Loss and sparse gradient contributions of a single training ray.
/// Gradients are (flat parameter index, value) pairs; density indices
/// address `raw_density`, rgb indices address `raw_rgb`.
#[derive(Debug, Clone)]
pub struct RayBackward {
    pub loss: f64,
    pub color: Vec3,
    pub density_grads: Vec<(u32, f64)>,
    pub rgb_grads: Vec<(u32, f64)>,
}

impl RayBackward {
    pub fn accumulate_into(&self, buffer: &mut GradientBuffer) {
        for &(i, g) in &self.density_grads {
            buffer.density[i as usize] += g;
        }
        for &(i, g) in &self.rgb_grads {
            buffer.rgb[i as usize] += g;
        }
    }
}

/// Renders a ray, compares against `ray.target`, and backpropagates the
/// squared color error into the touched raw parameters. The reported
/// loss is identical to what the forward path computes at the same
/// depths. Depths are jittered iff `sampling.jitter`.
pub fn render_ray_backward(
    field: &VoxelField,
    ray: &Ray,
    sampling: &RaySampling,
    rng: &mut impl Rng,
) -> Result<RayBackward, RenderError> {
    let ts = sample_ts(sampling, rng);
    render_ray_backward_at(field, ray, &ts, sampling.far, sampling.background)
}

pub fn render_ray_backward_at(
    field: &VoxelField,
    ray: &Ray,
    ts: &[f64],
    far: f64,
    background: Background,
) -> Result<RayBackward, RenderError> {
    let n = ts.len();
    let mut grads: Vec<Option<SampleGrads>> = Vec::with_capacity(n);
    let mut samples: Vec<(f64, Vec3)> = Vec::with_capacity(n);
    for &t in ts {
        let p = ray.origin + ray.direction * t;
        match field.query_with_grads(p) {
            Some(g) => {
                samples.push((g.sigma, g.rgb));
                grads.push(Some(g));
            }
            None => {
                samples.push((0.0, Vec3::ZERO));
                grads.push(None);
            }
        }
    }
    let deltas = deltas_for(ts, far);
    let (color, weights, transmittance) = composite(&samples, &deltas, background);

    let diff = color - ray.target;
    let loss = diff.dot(diff);
    if !loss.is_finite() {
        return Err(RenderError::NonFinite { view: ray.view, u: ray.pixel.0, v: ray.pixel.1 });
    }
    let dl_dcolor = diff * 2.0;

    // Reverse sweep. suffix holds d(color)/d(T_{j+1}) pieces: the color
    // mass that still passes through sample j, scaled by later weights.
    let mut suffix = match background.color() {
        Some(bg) => bg * transmittance,
        None => Vec3::ZERO,
    };
    let mut density_grads = Vec::new();
    let mut rgb_grads = Vec::new();
    // recompute T_j from the front in one pass
    let mut t_before = vec![1.0; n];
    for j in 1..n {
        let alpha_prev = 1.0 - (-samples[j - 1].0 * deltas[j - 1]).exp();
        t_before[j] = t_before[j - 1] * (1.0 - alpha_prev);
    }
    for j in (0..n).rev() {
        let (sigma, rgb) = samples[j];
        let delta = deltas[j];
        let alpha = 1.0 - (-sigma * delta).exp();
        let w = weights[j];
        if let Some(g) = &grads[j] {
            // d(color_ch)/d(sigma_j) = delta * (1-alpha) * T_j * c_ch - delta * suffix_ch
            let dcolor_dsigma = Vec3::new(
                delta * ((1.0 - alpha) * t_before[j] * rgb.x - suffix.x),
                delta * ((1.0 - alpha) * t_before[j] * rgb.y - suffix.y),
                delta * ((1.0 - alpha) * t_before[j] * rgb.z - suffix.z),
            );
            let dl_dsigma = dl_dcolor.dot(dcolor_dsigma);
            let dl_draw_density = dl_dsigma * g.dsigma_draw;
            // d(color_ch)/d(c_{j,ch}) = w_j
            let dl_draw_rgb = Vec3::new(
                dl_dcolor.x * w * g.drgb_draw.x,
                dl_dcolor.y * w * g.drgb_draw.y,
                dl_dcolor.z * w * g.drgb_draw.z,
            );
            for c in 0..8 {
                let vertex = g.corners[c];
                let weight = g.weights[c];
                density_grads.push((vertex, dl_draw_density * weight));
                rgb_grads.push((3 * vertex, dl_draw_rgb.x * weight));
                rgb_grads.push((3 * vertex + 1, dl_draw_rgb.y * weight));
                rgb_grads.push((3 * vertex + 2, dl_draw_rgb.z * weight));
            }
        }
        suffix += rgb * w;
    }

    Ok(RayBackward { loss, color, density_grads, rgb_grads })
}

/// Renders every pixel of a view at midpoint depths; deterministic and
/// parallel across pixels.
pub fn render_view<F: RadianceField>(field: &F, camera: &Camera, sampling: &RaySampling) -> Image {
    let (w, h) = (camera.width, camera.height);
    let ts = midpoint_ts(sampling);
    let colors: Vec<Vec3> = (0..(w as usize) * (h as usize))
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i / w as usize) as u32, (i % w as usize) as u32);
            let ray = pixel_ray(camera, u, v).expect("pixel in range");
            render_ray_at(field, &ray, &ts, sampling.far, sampling.background).color
        })
        .collect();
    let mut data = Vec::with_capacity(colors.len() * 3);
    for c in colors {
        data.push(c.x.clamp(0.0, 1.0));
        data.push(c.y.clamp(0.0, 1.0));
        data.push(c.z.clamp(0.0, 1.0));
    }
    Image::new(w, h, data)
}
