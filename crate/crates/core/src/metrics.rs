//! PSNR and SSIM image fidelity metrics.
//!
//! PSNR uses peak 1.0 over all pixels and channels and is capped at
//! 99 dB. SSIM is the standard single-scale formula on Rec.601 luma:
//! 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, averaged over
//! every center where the full window fits. Images smaller than the
//! window fall back to one global uniform window.

use crate::imaging::Image;

pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    psnr_from_mse(a.mse(b))
}

/// Rec.601 luma of every pixel, row-major.
pub fn luma(img: &Image) -> Vec<f64> {
    let d = img.data();
    (0..img.pixel_count())
        .map(|i| 0.299 * d[3 * i] + 0.587 * d[3 * i + 1] + 0.114 * d[3 * i + 2])
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, slot) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *slot = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *slot;
    }
    for slot in &mut k {
        *slot /= sum;
    }
    k
}

/// Valid-mode separable convolution with the same 1D kernel on both axes.
/// Input is h x w row-major; output is (h - win + 1) x (w - win + 1).
fn filter_valid(input: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // horizontal pass: h rows, ow columns
    let mut horiz = vec![0.0; h * ow];
    for row in 0..h {
        for col in 0..ow {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * input[row * w + col + k];
            }
            horiz[row * ow + col] = acc;
        }
    }
    // vertical pass: oh rows, ow columns
    let mut out = vec![0.0; oh * ow];
    for row in 0..oh {
        for col in 0..ow {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(row + k) * ow + col];
            }
            out[row * ow + col] = acc;
        }
    }
    out
}

pub fn ssim(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.width(), b.width());
    assert_eq!(a.height(), b.height());
    let (w, h) = (a.width() as usize, a.height() as usize);
    let x = luma(a);
    let y = luma(b);

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let ssim_term = |mu_x: f64, mu_y: f64, xx: f64, yy: f64, xy: f64| {
        let var_x = xx - mu_x * mu_x;
        let var_y = yy - mu_y * mu_y;
        let cov = xy - mu_x * mu_y;
        ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
            / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
    };

    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        // one global uniform window
        let n = (w * h) as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let (mu_x, mu_y) = (mean(&x), mean(&y));
        let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / n;
        return ssim_term(mu_x, mu_y, dot(&x, &x), dot(&y, &y), dot(&x, &y));
    }

    let kernel = gaussian_kernel();
    let sq = |v: &[f64]| v.iter().map(|a| a * a).collect::<Vec<_>>();
    let prod: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(&x, w, h, &kernel);
    let mu_y = filter_valid(&y, w, h, &kernel);
    let m_xx = filter_valid(&sq(&x), w, h, &kernel);
    let m_yy = filter_valid(&sq(&y), w, h, &kernel);
    let m_xy = filter_valid(&prod, w, h, &kernel);

    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        acc += ssim_term(mu_x[i], mu_y[i], m_xx[i], m_yy[i], m_xy[i]);
    }
    acc / mu_x.len() as f64
}
