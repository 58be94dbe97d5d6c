//! Edge-aware refinement of a probability volume guided by a colour image.
//!
//! Each iteration computes, for every pixel and level, a cross-bilateral
//! weighted average of the current probabilities over a spatial
//! neighbourhood (the pixel itself included), adds `mu` times that message
//! to the original distribution, and renormalises the ray.
//!
//! Messages are evaluated densely over the neighbourhood, which costs
//! `O(h * w * k * n_d)` per iteration for `k` neighbours. The neighbourhood
//! is truncated at `truncation * theta_alpha` pixels and may be sampled on
//! a regular grid of `stride` pixels to keep that affordable on large
//! images.

use rayon::prelude::*;

use super::{DepthProbabilityVolume, DpvError};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// Spatial standard deviation, in pixels.
    pub theta_alpha: f64,
    /// Colour standard deviation, on a 0-255 scale.
    pub theta_beta: f64,
    /// Weight of the pairwise message against the original distribution.
    pub mu: f64,
    pub iterations: usize,
    /// Support radius in units of `theta_alpha`.
    pub truncation: f64,
    /// Neighbour sampling step; `None` picks `ceil(theta_alpha / 5)`.
    pub stride: Option<usize>,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            theta_alpha: 25.0,
            theta_beta: 10.0,
            mu: 5.0,
            iterations: 5,
            truncation: 3.0,
            stride: None,
        }
    }
}

impl CrfParams {
    /// Full-resolution neighbourhood.
    pub fn dense(mut self) -> Self {
        self.stride = Some(1);
        self
    }

    pub fn effective_stride(&self) -> usize {
        self.stride
            .unwrap_or_else(|| (self.theta_alpha / 5.0).ceil() as usize)
            .max(1)
    }

    fn validate(&self) -> Result<(), DpvError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DpvError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("theta_alpha", self.theta_alpha)?;
        positive("theta_beta", self.theta_beta)?;
        positive("mu", self.mu)?;
        positive("truncation", self.truncation)?;
        if self.stride == Some(0) {
            return Err(DpvError::InvalidParameter(
                "stride must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

struct Offset {
    dx: isize,
    dy: isize,
    spatial: f32,
}

fn neighbourhood(params: &CrfParams) -> Vec<Offset> {
    let stride = params.effective_stride() as isize;
    let radius = params.truncation * params.theta_alpha;
    let steps = (radius / stride as f64).floor() as isize;
    let two_sigma2 = 2.0 * params.theta_alpha * params.theta_alpha;
    let mut out = Vec::new();
    for j in -steps..=steps {
        for i in -steps..=steps {
            let (dx, dy) = (i * stride, j * stride);
            let r2 = (dx * dx + dy * dy) as f64;
            if r2 <= radius * radius {
                out.push(Offset {
                    dx,
                    dy,
                    spatial: (-r2 / two_sigma2).exp() as f32,
                });
            }
        }
    }
    out
}

/// Pairs weighing less than this are skipped.
const MIN_WEIGHT: f32 = 1e-10;

pub fn crf_filter(
    volume: &DepthProbabilityVolume,
    guide: &Image,
    params: &CrfParams,
) -> Result<DepthProbabilityVolume, DpvError> {
    params.validate()?;
    let (w, h) = (volume.width(), volume.height());
    if guide.width() != w || guide.height() != h {
        return Err(DpvError::GuideMismatch {
            guide_w: guide.width(),
            guide_h: guide.height(),
            vol_w: w,
            vol_h: h,
        });
    }
    let nd = volume.levels();
    let offsets = neighbourhood(params);
    let colors: Vec<[f32; 3]> = guide
        .as_slice()
        .chunks_exact(3)
        .map(|p| [p[0] * 255.0, p[1] * 255.0, p[2] * 255.0])
        .collect();
    let inv_two_beta2 = (1.0 / (2.0 * params.theta_beta * params.theta_beta)) as f32;
    let cutoff = -MIN_WEIGHT.ln();
    let mu = params.mu as f32;

    let unary = volume.values();
    let mut current = unary.to_vec();
    let mut next = vec![0.0f32; current.len()];
    for _ in 0..params.iterations {
        next.par_chunks_mut(w * nd)
            .enumerate()
            .for_each(|(y, row)| {
                let mut message = vec![0.0f32; nd];
                for x in 0..w {
                    message.iter_mut().for_each(|m| *m = 0.0);
                    let c = colors[y * w + x];
                    let mut total = 0.0f32;
                    for off in &offsets {
                        let nx = x as isize + off.dx;
                        let ny = y as isize + off.dy;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let n = ny as usize * w + nx as usize;
                        let o = colors[n];
                        let dc =
                            (c[0] - o[0]).powi(2) + (c[1] - o[1]).powi(2) + (c[2] - o[2]).powi(2);
                        let exponent = dc * inv_two_beta2;
                        if exponent > cutoff {
                            continue;
                        }
                        let weight = off.spatial * (-exponent).exp();
                        if weight < MIN_WEIGHT {
                            continue;
                        }
                        total += weight;
                        let q = &current[n * nd..(n + 1) * nd];
                        for (m, &v) in message.iter_mut().zip(q) {
                            *m += weight * v;
                        }
                    }
                    let base = (y * w + x) * nd;
                    let out = &mut row[x * nd..(x + 1) * nd];
                    let scale = mu / total;
                    let mut sum = 0.0f64;
                    for d in 0..nd {
                        let v = unary[base + d] + scale * message[d];
                        out[d] = v;
                        sum += v as f64;
                    }
                    let inv = (1.0 / sum) as f32;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
            });
        std::mem::swap(&mut current, &mut next);
    }
    DepthProbabilityVolume::from_raw(volume.camera().clone(), *volume.range(), current)
}
