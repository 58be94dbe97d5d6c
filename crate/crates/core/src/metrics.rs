//! Full-reference image quality: PSNR and SSIM on `[0, 1]` RGB images.

use thiserror::Error;

use crate::image::Image;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("mask has {found} entries, expected {expected}")]
    MaskSize { found: usize, expected: usize },
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("images must be at least {SSIM_WINDOW} pixels on each side")]
    TooSmall,
}

fn check_sizes(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::SizeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over masked pixels, channels averaged. Identical
/// inputs give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64, MetricsError> {
    check_sizes(a, b)?;
    let n = a.width() * a.height();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(MetricsError::MaskSize {
                found: m.len(),
                expected: n,
            });
        }
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, (pa, pb)) in a
        .as_slice()
        .chunks_exact(3)
        .zip(b.as_slice().chunks_exact(3))
        .enumerate()
    {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for k in 0..3 {
            let d = pa[k] as f64 - pb[k] as f64;
            sum += d * d;
        }
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let mse = sum / (3 * count) as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable "valid" Gaussian filtering; output is `(w-10) x (h-10)`.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let src = &plane[y * w + x..y * w + x + SSIM_WINDOW];
            rows[y * ow + x] = src.iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|i| k[i] * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Local SSIM map of one channel, over the valid window positions.
fn ssim_map(a: &[f64], b: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let s_aa = filter_valid(&aa, w, h, &k);
    let s_bb = filter_valid(&bb, w, h, &k);
    let s_ab = filter_valid(&ab, w, h, &k);
    (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = s_aa[i] - ma * ma;
            let vb = s_bb[i] - mb * mb;
            let cov = s_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

fn channel(img: &Image, k: usize) -> Vec<f64> {
    img.as_slice()
        .chunks_exact(3)
        .map(|p| p[k] as f64)
        .collect()
}

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), channels averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    ssim_masked(a, b, None)
}

/// SSIM averaged over the windows whose centre pixel is selected by `mask`.
pub fn ssim_masked(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64, MetricsError> {
    check_sizes(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall);
    }
    if let Some(m) = mask {
        if m.len() != w * h {
            return Err(MetricsError::MaskSize {
                found: m.len(),
                expected: w * h,
            });
        }
    }
    let r = SSIM_WINDOW / 2;
    let ow = w - SSIM_WINDOW + 1;
    let selected: Vec<bool> = match mask {
        None => vec![true; ow * (h - SSIM_WINDOW + 1)],
        Some(m) => (0..(h - SSIM_WINDOW + 1) * ow)
            .map(|i| m[(i / ow + r) * w + i % ow + r])
            .collect(),
    };
    let count = selected.iter().filter(|&&s| s).count();
    if count == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let mut total = 0.0;
    for k in 0..3 {
        let map = ssim_map(&channel(a, k), &channel(b, k), w, h);
        total += map
            .iter()
            .zip(&selected)
            .filter(|(_, &s)| s)
            .map(|(v, _)| v)
            .sum::<f64>()
            / count as f64;
    }
    Ok(total / 3.0)
}
